//! Alternating GAN training for both stages.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::info;
use mdgan_tensor::nn::NormMode;
use mdgan_tensor::serialize::{Payload, RawTensor};
use mdgan_tensor::{Element, Tensor};

use super::adam::{Adam, AdamConfig};
use super::checkpoint::{Checkpoint, CheckpointMeta};
use crate::config::{G2Init, RunConfig};
use crate::data::{BatchSampler, ClipStore, Split};
use crate::error::{Error, Result};
use crate::losses::{
    adversarial_terms, content_loss, discriminator_objective, generator_adversarial, generator_objective,
    rank_loss_from_features, LossReport, LOSS_CSV_HEADER,
};
use crate::models::{build_discriminator, build_generator, Network, NetworkSpec, Stage};
use crate::rng::{stream, Stream};

fn norm(update_running: bool) -> NormMode {
    NormMode::Train { update_running }
}

/// Terms of the discriminator update; `total` is minimized.
pub struct DiscriminatorLoss<T: Element> {
    pub total: Tensor<T>,
    pub adv: Tensor<T>,
    pub rank: Option<Tensor<T>>,
}

/// Terms of the generator update; `total` is minimized.
pub struct GeneratorLoss<T: Element> {
    pub total: Tensor<T>,
    pub adv: Tensor<T>,
    pub content: Tensor<T>,
    pub rank: Option<Tensor<T>>,
}

/// Discriminator loss on one batch. Without `g2` this is the stage-1 loss on
/// `G1(X)`; with `g2` it is the negated stage-2 ascent objective, which adds
/// the ranking term over the features of `Y1 = G1(X)`, `Y2 = G2(Y1)` and `Y`.
/// Generators run with frozen batch-norm statistics.
pub fn discriminator_loss<T: Element>(
    g1: &mut Network<T>,
    g2: Option<&mut Network<T>>,
    d: &mut Network<T>,
    y: &Tensor<T>,
    x: &Tensor<T>,
    cfg: &RunConfig,
    update_running: bool,
) -> Result<DiscriminatorLoss<T>> {
    let y1 = g1.forward_generator(x, norm(false))?.video.detach();
    let mode = norm(update_running);
    match g2 {
        None => {
            let real = d.forward_discriminator(y, mode)?;
            let fake = d.forward_discriminator(&y1, mode)?;
            let (adv, _) = adversarial_terms(&real.score, &fake.score, cfg.adv_form)?;
            Ok(DiscriminatorLoss {
                total: discriminator_objective(&adv, None, cfg.lambda_rank)?,
                adv,
                rank: None,
            })
        }
        Some(g2) => {
            let y2 = g2.forward_generator(&y1, norm(false))?.video.detach();
            let real = d.forward_discriminator(y, mode)?;
            let fake = d.forward_discriminator(&y2, mode)?;
            let base = d.forward_discriminator(&y1, mode)?;
            let (adv, _) = adversarial_terms(&real.score, &fake.score, cfg.adv_form)?;
            let rank = rank_loss_from_features(&base.features, &fake.features, &real.features, cfg.gram_batch)?;
            Ok(DiscriminatorLoss {
                total: discriminator_objective(&adv, Some(&rank), cfg.lambda_rank)?,
                adv,
                rank: Some(rank),
            })
        }
    }
}

/// Generator loss on one batch: `G1` in stage 1, `G2` (fed by a frozen `G1`)
/// in stage 2. The discriminator runs with frozen batch-norm statistics.
pub fn generator_loss<T: Element>(
    g1: &mut Network<T>,
    g2: Option<&mut Network<T>>,
    d: &mut Network<T>,
    y: &Tensor<T>,
    x: &Tensor<T>,
    cfg: &RunConfig,
    update_running: bool,
) -> Result<GeneratorLoss<T>> {
    let frozen = norm(false);
    match g2 {
        None => {
            let y1 = g1.forward_generator(x, norm(update_running))?.video;
            let fake = d.forward_discriminator(&y1, frozen)?;
            let adv = generator_adversarial(&fake.score, cfg.adv_form)?;
            let content = content_loss(y, &y1, cfg.loss_reduction)?;
            Ok(GeneratorLoss {
                total: generator_objective(&adv, &content, None, cfg.lambda_rank)?,
                adv,
                content,
                rank: None,
            })
        }
        Some(g2) => {
            let y1 = g1.forward_generator(x, frozen)?.video.detach();
            let y2 = g2.forward_generator(&y1, norm(update_running))?.video;
            let fake = d.forward_discriminator(&y2, frozen)?;
            let real = d.forward_discriminator(y, frozen)?;
            let base = d.forward_discriminator(&y1, frozen)?;
            let adv = generator_adversarial(&fake.score, cfg.adv_form)?;
            let content = content_loss(y, &y2, cfg.loss_reduction)?;
            let rank = rank_loss_from_features(&base.features, &fake.features, &real.features, cfg.gram_batch)?;
            Ok(GeneratorLoss {
                total: generator_objective(&adv, &content, Some(&rank), cfg.lambda_rank)?,
                adv,
                content,
                rank: Some(rank),
            })
        }
    }
}

fn scalar<T: Element>(t: &Tensor<T>, what: &str, iter: u64) -> Result<f64> {
    let v = t.item()?.as_f64();
    if !v.is_finite() {
        return Err(Error::NonFinite(format!("iteration {iter}: {what} is {v}")));
    }
    Ok(v)
}

/// Builds a network of `spec` and fills it from checkpoint tensors under `prefix`.
pub fn network_from_checkpoint(ckpt: &Checkpoint, prefix: &str, spec: NetworkSpec, cfg: &RunConfig) -> Result<Network> {
    let mut net = Network::init(spec, cfg.bn_momentum, cfg.bn_eps, &mut stream(0, Stream::Init));
    net.load_named(|name| {
        let raw = ckpt.get(&format!("{prefix}.{name}"))?;
        Tensor::from_raw(raw).ok()
    })
    .map_err(|e| Error::config(format!("loading {prefix} from checkpoint: {e}")))?;
    Ok(net)
}

/// Owns the networks, optimizers and sampler of one training stage.
pub struct Trainer {
    pub cfg: RunConfig,
    pub stage: Stage,
    pub g1: Network,
    /// Present in stage 2 only.
    pub g2: Option<Network>,
    /// D1 in stage 1, D2 in stage 2.
    pub d: Network,
    pub opt_g: Adam,
    pub opt_d: Adam,
    pub sampler: BatchSampler,
    pub iteration: u64,
    pub store: Arc<ClipStore>,
}

fn check_store(cfg: &RunConfig, store: &ClipStore) -> Result<()> {
    let res = store.resolution()?;
    if res != cfg.resolution {
        return Err(Error::config(format!(
            "store holds {res}x{res} clips but the run is configured for {}",
            cfg.resolution
        )));
    }
    Ok(())
}

fn adam_tensors(tag: &str, opt: &Adam, out: &mut Vec<(String, RawTensor)>) -> Result<()> {
    for (kind, moments) in [("m", &opt.m), ("v", &opt.v)] {
        for (i, buf) in moments.iter().enumerate() {
            out.push((
                format!("adam.{tag}.{kind}.{i:04}"),
                RawTensor::new(vec![buf.len()], Payload::F32(buf.clone()))?,
            ));
        }
    }
    Ok(())
}

fn restore_adam(ckpt: &Checkpoint, tag: &str, cfg: AdamConfig, params: &[&Tensor], t: u64) -> Result<Adam> {
    let mut opt = Adam::new(cfg, params);
    opt.t = t;
    for (kind, moments) in [("m", &mut opt.m), ("v", &mut opt.v)] {
        for (i, buf) in moments.iter_mut().enumerate() {
            let name = format!("adam.{tag}.{kind}.{i:04}");
            match ckpt.get(&name).map(|r| &r.payload) {
                Some(Payload::F32(v)) if v.len() == buf.len() => buf.copy_from_slice(v),
                _ => return Err(Error::Integrity(format!("checkpoint lacks a valid {name}"))),
            }
        }
    }
    Ok(opt)
}

impl Trainer {
    /// Fresh G1 and D1.
    pub fn stage1(cfg: RunConfig, store: Arc<ClipStore>) -> Result<Self> {
        cfg.validate()?;
        check_store(&cfg, &store)?;
        let mut rng = stream(cfg.seed, Stream::Init);
        let g1 = Network::init(
            build_generator(Stage::One, cfg.resolution, cfg.width_multiplier)?,
            cfg.bn_momentum,
            cfg.bn_eps,
            &mut rng,
        );
        let d = Network::init(
            build_discriminator(cfg.resolution, cfg.width_multiplier, &cfg.gram_taps)?,
            cfg.bn_momentum,
            cfg.bn_eps,
            &mut rng,
        );
        Self::assemble(cfg, Stage::One, g1, None, d, store)
    }

    /// Frozen G1 from a stage-1 checkpoint, G2 from G1 or random, fresh D2.
    pub fn stage2(cfg: RunConfig, store: Arc<ClipStore>, g1_ckpt: &Checkpoint) -> Result<Self> {
        cfg.validate()?;
        check_store(&cfg, &store)?;
        if !g1_ckpt.has_prefix("g1") {
            return Err(Error::config("checkpoint holds no G1 parameters"));
        }
        let g1 = network_from_checkpoint(
            g1_ckpt,
            "g1",
            build_generator(Stage::One, cfg.resolution, cfg.width_multiplier)?,
            &cfg,
        )?;
        let mut rng = stream(cfg.seed, Stream::Init);
        // skip the draws stage 1 spent on G1 so a random G2 is not its twin
        let _ = Network::<f32>::init(g1.spec.clone(), cfg.bn_momentum, cfg.bn_eps, &mut rng);
        let g2_spec = build_generator(Stage::Two, cfg.resolution, cfg.width_multiplier)?;
        let g2 = match cfg.g2_init {
            G2Init::FromG1 => network_from_checkpoint(g1_ckpt, "g1", g2_spec, &cfg)?,
            G2Init::Random => Network::init(g2_spec, cfg.bn_momentum, cfg.bn_eps, &mut rng),
        };
        let d = Network::init(
            build_discriminator(cfg.resolution, cfg.width_multiplier, &cfg.gram_taps)?,
            cfg.bn_momentum,
            cfg.bn_eps,
            &mut rng,
        );
        Self::assemble(cfg, Stage::Two, g1, Some(g2), d, store)
    }

    fn assemble(
        cfg: RunConfig,
        stage: Stage,
        g1: Network,
        g2: Option<Network>,
        d: Network,
        store: Arc<ClipStore>,
    ) -> Result<Self> {
        let adam = AdamConfig::from_run(&cfg);
        let opt_g = Adam::new(adam, &g2.as_ref().unwrap_or(&g1).params());
        let opt_d = Adam::new(adam, &d.params());
        let sampler = BatchSampler::new(store.indices(Split::Train), cfg.seed)?;
        Ok(Trainer {
            cfg,
            stage,
            g1,
            g2,
            d,
            opt_g,
            opt_d,
            sampler,
            iteration: 0,
            store,
        })
    }

    /// Continues a run exactly where `ckpt` left it.
    pub fn resume(ckpt: &Checkpoint, store: Arc<ClipStore>) -> Result<Self> {
        let cfg = RunConfig::from_text(&ckpt.meta.config)?;
        check_store(&cfg, &store)?;
        let (stage, d_prefix) = match ckpt.meta.stage {
            1 => (Stage::One, "d1"),
            2 => (Stage::Two, "d2"),
            s => return Err(Error::Integrity(format!("checkpoint names unknown stage {s}"))),
        };
        let g1 = network_from_checkpoint(
            ckpt,
            "g1",
            build_generator(Stage::One, cfg.resolution, cfg.width_multiplier)?,
            &cfg,
        )?;
        let g2 = match stage {
            Stage::One => None,
            Stage::Two => Some(network_from_checkpoint(
                ckpt,
                "g2",
                build_generator(Stage::Two, cfg.resolution, cfg.width_multiplier)?,
                &cfg,
            )?),
        };
        let d = network_from_checkpoint(
            ckpt,
            d_prefix,
            build_discriminator(cfg.resolution, cfg.width_multiplier, &cfg.gram_taps)?,
            &cfg,
        )?;
        let adam = AdamConfig::from_run(&cfg);
        let opt_g = restore_adam(ckpt, "g", adam, &g2.as_ref().unwrap_or(&g1).params(), ckpt.meta.adam_g_t)?;
        let opt_d = restore_adam(ckpt, "d", adam, &d.params(), ckpt.meta.adam_d_t)?;
        let sampler = BatchSampler::restore(&ckpt.meta.sampler)?;
        Ok(Trainer {
            cfg,
            stage,
            g1,
            g2,
            d,
            opt_g,
            opt_d,
            sampler,
            iteration: ckpt.meta.iteration,
            store,
        })
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let mut tensors = Vec::new();
        let mut add = |prefix: &str, net: &Network| {
            for (n, t) in net.named_tensors() {
                tensors.push((format!("{prefix}.{n}"), t.to_raw()));
            }
        };
        add("g1", &self.g1);
        if let Some(g2) = &self.g2 {
            add("g2", g2);
        }
        add(if self.stage == Stage::One { "d1" } else { "d2" }, &self.d);
        adam_tensors("g", &self.opt_g, &mut tensors)?;
        adam_tensors("d", &self.opt_d, &mut tensors)?;
        Ok(Checkpoint {
            meta: CheckpointMeta {
                stage: self.stage.number(),
                iteration: self.iteration,
                config: self.cfg.to_text(),
                sampler: self.sampler.state(),
                adam_g_t: self.opt_g.t,
                adam_d_t: self.opt_d.t,
            },
            tensors,
        })
    }

    fn next_batch(&mut self) -> Result<(Tensor, Tensor)> {
        let idx = self.sampler.next_batch(self.cfg.batch_size);
        self.store.load_batch(&idx)
    }

    /// One iteration: a discriminator update on one batch, then a generator
    /// update on a fresh batch.
    pub fn step(&mut self) -> Result<LossReport> {
        let iter = self.iteration + 1;

        let (y, x) = self.next_batch()?;
        self.g1.set_trainable(false);
        if let Some(g2) = self.g2.as_mut() {
            g2.set_trainable(false);
        }
        self.d.set_trainable(true);
        let dl = discriminator_loss(&mut self.g1, self.g2.as_mut(), &mut self.d, &y, &x, &self.cfg, true)?;
        let total_d = scalar(&dl.total, "discriminator loss", iter)?;
        let adv_d = scalar(&dl.adv, "discriminator adversarial loss", iter)?;
        let rank_d = dl.rank.as_ref().map(|r| scalar(r, "discriminator ranking loss", iter)).transpose()?;
        dl.total.backward()?;
        drop(dl);
        self.opt_d.step(self.d.params_mut())?;
        self.d.set_trainable(false);

        let (y, x) = self.next_batch()?;
        match self.g2.as_mut() {
            Some(g2) => g2.set_trainable(true),
            None => self.g1.set_trainable(true),
        }
        let gl = generator_loss(&mut self.g1, self.g2.as_mut(), &mut self.d, &y, &x, &self.cfg, true)?;
        let total_g = scalar(&gl.total, "generator loss", iter)?;
        let adv_g = scalar(&gl.adv, "generator adversarial loss", iter)?;
        let content = scalar(&gl.content, "content loss", iter)?;
        let rank = gl.rank.as_ref().map(|r| scalar(r, "generator ranking loss", iter)).transpose()?;
        gl.total.backward()?;
        drop(gl);
        let gen = self.g2.as_mut().unwrap_or(&mut self.g1);
        self.opt_g.step(gen.params_mut())?;
        gen.set_trainable(false);

        self.iteration = iter;
        let lambda = if rank.is_some() { self.cfg.lambda_rank } else { 0.0 };
        Ok(LossReport {
            iter,
            adv_d,
            adv_g,
            content,
            rank: rank.unwrap_or(0.0),
            total_g,
            total_d,
            rank_d: rank_d.unwrap_or(0.0),
            lambda,
        })
    }

    pub fn loss_csv_path(&self, out_dir: &Path) -> PathBuf {
        out_dir.join(format!("stage{}_losses.csv", self.stage.number()))
    }

    pub fn checkpoint_path(&self, out_dir: &Path, final_: bool) -> PathBuf {
        if final_ {
            out_dir.join(format!("stage{}_final.mdck", self.stage.number()))
        } else {
            out_dir.join(format!("stage{}_iter{:06}.mdck", self.stage.number(), self.iteration))
        }
    }

    /// Trains until `total_iterations` have run, appending to the loss CSV in
    /// `out_dir` and writing periodic and final checkpoints there. A
    /// non-finite loss or gradient stops the run; checkpoints already written
    /// are left in place.
    pub fn run_until(
        &mut self,
        total_iterations: u64,
        out_dir: &Path,
        mut on_report: impl FnMut(&LossReport),
    ) -> Result<Vec<LossReport>> {
        std::fs::create_dir_all(out_dir).map_err(Error::io(out_dir))?;
        let csv_path = self.loss_csv_path(out_dir);
        let fresh = self.iteration == 0 || !csv_path.exists();
        let file = if fresh {
            File::create(&csv_path)
        } else {
            OpenOptions::new().append(true).open(&csv_path)
        }
        .map_err(Error::io(&csv_path))?;
        let mut csv = BufWriter::new(file);
        if fresh {
            writeln!(csv, "{LOSS_CSV_HEADER}").map_err(Error::io(&csv_path))?;
        }
        let mut reports = Vec::new();
        while self.iteration < total_iterations {
            let report = self.step()?;
            writeln!(csv, "{}", report.csv_row()).map_err(Error::io(&csv_path))?;
            csv.flush().map_err(Error::io(&csv_path))?;
            on_report(&report);
            reports.push(report);
            if self.iteration % self.cfg.checkpoint_every == 0 {
                let path = self.checkpoint_path(out_dir, false);
                self.checkpoint()?.save(&path)?;
                info!("wrote {}", path.display());
            }
        }
        let path = self.checkpoint_path(out_dir, true);
        self.checkpoint()?.save(&path)?;
        info!("wrote {}", path.display());
        Ok(reports)
    }
}
