//! Per-clip evaluation of a frame-to-video model against held-out clips.

use std::fs;
use std::io::Write;
use std::path::Path;

use mdgan_tensor::nn::NormMode;
use mdgan_tensor::Tensor;
use rand::seq::SliceRandom;

use crate::config::{EvalNorm, RunConfig};
use crate::data::{ClipStore, Split};
use crate::error::{Error, Result};
use crate::metrics::{clip_metrics, psnr_from_mse};
use crate::models::{build_generator, Network, Resolution, Stage};
use crate::rng::{stream, Stream};
use crate::training::{network_from_checkpoint, Checkpoint};

/// Anything that maps a static video `X` to a predicted clip.
pub trait VideoModel {
    fn resolution(&self) -> Resolution;
    fn id(&self) -> String;
    /// `x` and the result are `[N, 3, 32, H, W]` in `[-1, 1]`.
    fn predict(&mut self, x: &Tensor) -> Result<Tensor>;
}

/// Returns its input unchanged.
pub struct IdentityModel(pub Resolution);

impl VideoModel for IdentityModel {
    fn resolution(&self) -> Resolution {
        self.0
    }

    fn id(&self) -> String {
        "identity".into()
    }

    fn predict(&mut self, x: &Tensor) -> Result<Tensor> {
        Ok(x.clone())
    }
}

/// G1, optionally followed by G2.
pub struct Pipeline {
    pub g1: Network,
    pub g2: Option<Network>,
    pub mode: NormMode,
    pub label: String,
}

impl Pipeline {
    pub fn from_checkpoint(ckpt: &Checkpoint, label: &str) -> Result<Self> {
        let cfg = RunConfig::from_text(&ckpt.meta.config)?;
        let g1 = network_from_checkpoint(
            ckpt,
            "g1",
            build_generator(Stage::One, cfg.resolution, cfg.width_multiplier)?,
            &cfg,
        )?;
        let g2 = if ckpt.meta.stage == 2 {
            Some(network_from_checkpoint(
                ckpt,
                "g2",
                build_generator(Stage::Two, cfg.resolution, cfg.width_multiplier)?,
                &cfg,
            )?)
        } else {
            None
        };
        let mode = match cfg.eval_norm {
            EvalNorm::Inference => NormMode::Inference,
            EvalNorm::Batch => NormMode::Train { update_running: false },
        };
        Ok(Pipeline {
            g1,
            g2,
            mode,
            label: format!("{label}@stage{}:iter{}", ckpt.meta.stage, ckpt.meta.iteration),
        })
    }
}

impl VideoModel for Pipeline {
    fn resolution(&self) -> Resolution {
        self.g1.spec.resolution
    }

    fn id(&self) -> String {
        self.label.clone()
    }

    fn predict(&mut self, x: &Tensor) -> Result<Tensor> {
        let y1 = self.g1.forward_generator(x, self.mode)?.video;
        match self.g2.as_mut() {
            Some(g2) => Ok(g2.forward_generator(&y1, self.mode)?.video),
            None => Ok(y1),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClipScore {
    pub clip_id: String,
    pub mse: f64,
    pub psnr_db: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub model_id: String,
    pub rows: Vec<ClipScore>,
    pub mean_mse: f64,
    /// Mean of the per-clip PSNR values.
    pub mean_psnr_db: f64,
    /// PSNR of the mean MSE.
    pub psnr_of_mean_mse_db: f64,
    pub mean_ssim: f64,
}

pub const EVAL_CSV_HEADER: &str = "clip_id,mse,psnr_db,ssim";

impl MetricReport {
    pub fn from_rows(model_id: String, rows: Vec<ClipScore>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Data("no clips were evaluated".into()));
        }
        let n = rows.len() as f64;
        let mean = |f: fn(&ClipScore) -> f64| rows.iter().map(f).sum::<f64>() / n;
        let mean_mse = mean(|r| r.mse);
        Ok(MetricReport {
            model_id,
            mean_mse,
            mean_psnr_db: mean(|r| r.psnr_db),
            psnr_of_mean_mse_db: psnr_from_mse(mean_mse),
            mean_ssim: mean(|r| r.ssim),
            rows,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{EVAL_CSV_HEADER}\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{}\n", r.clip_id, r.mse, r.psnr_db, r.ssim));
        }
        out.push_str(&format!("MEAN,{},{},{}\n", self.mean_mse, self.mean_psnr_db, self.mean_ssim));
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(Error::io(dir))?;
        }
        let mut f = fs::File::create(path).map_err(Error::io(path))?;
        f.write_all(self.to_csv().as_bytes()).map_err(Error::io(path))
    }

    pub fn summary(&self) -> String {
        format!(
            "model={} clips={} mse={:.6} psnr_mean_db={:.4} psnr_of_mean_mse_db={:.4} ssim={:.4}",
            self.model_id,
            self.rows.len(),
            self.mean_mse,
            self.mean_psnr_db,
            self.psnr_of_mean_mse_db,
            self.mean_ssim
        )
    }
}

/// Scores `n_samples` randomly chosen test clips (all of them when `n_samples`
/// is 0 or exceeds the split). Each prediction starts from the clip's first
/// frame repeated over time.
pub fn evaluate(model: &mut dyn VideoModel, store: &ClipStore, n_samples: usize, seed: u64) -> Result<MetricReport> {
    let res = store.resolution()?;
    if res != model.resolution() {
        return Err(Error::config(format!(
            "model works at {} but the store holds {}x{} clips",
            model.resolution(),
            res,
            res
        )));
    }
    let mut picks = store.indices(Split::Test);
    if picks.is_empty() {
        return Err(Error::Data("store has no test clips".into()));
    }
    picks.shuffle(&mut stream(seed, Stream::Eval));
    if n_samples > 0 && n_samples < picks.len() {
        picks.truncate(n_samples);
    }
    let mut rows = Vec::with_capacity(picks.len());
    for idx in picks {
        let (y, x) = store.load_batch::<f32>(&[idx])?;
        let pred = model.predict(&x)?;
        let (mse, psnr_db, ssim) = clip_metrics(&pred, &y)?;
        let rec = &store.records[idx];
        rows.push(ClipScore {
            clip_id: format!("{}_{:05}", rec.source_id, rec.clip_index),
            mse,
            psnr_db,
            ssim,
        });
    }
    MetricReport::from_rows(model.id(), rows)
}
