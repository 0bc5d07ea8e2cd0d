use std::path::{Path, PathBuf};
use std::sync::Arc;

use mdgan_core::data::{self, ppm, synthesize_frames, ClipStore, Split, SynthParams};
use mdgan_core::eval::{evaluate, Pipeline, VideoModel};
use mdgan_core::models::{build_discriminator, build_generator, duplicate_frame, Resolution, Stage, Width, CLIP_FRAMES};
use mdgan_core::training::{Checkpoint, Trainer};
use mdgan_core::{Error, Result, RunConfig};
use mdgan_tensor::Tensor;

use crate::{Command, InspectTarget, RunArgs};

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Ingest {
            frames_root,
            out,
            resolution,
            test_fraction,
            seed,
        } => {
            let store = data::ingest(&frames_root, &out, Resolution::from_pixels(resolution)?, test_fraction, seed)?;
            print_store(&store)
        }
        Command::SynthData {
            out,
            frames_dir,
            sources,
            frames,
            frame_width,
            frame_height,
            velocity,
            resolution,
            test_fraction,
            seed,
        } => {
            let res = Resolution::from_pixels(resolution)?;
            let frames_dir = frames_dir.unwrap_or_else(|| out.join("frames"));
            let params = SynthParams {
                sources,
                frames_per_source: frames,
                width: frame_width,
                height: frame_height,
                velocity,
                seed,
            };
            synthesize_frames(&frames_dir, &params)?;
            let store = data::ingest(&frames_dir, &out, res, test_fraction, seed)?;
            print_store(&store)
        }
        Command::TrainStage1(args) => train(Stage::One, &args, None),
        Command::TrainStage2 { run, g1_checkpoint } => train(Stage::Two, &run, g1_checkpoint),
        Command::Generate { checkpoint, input, out } => generate(&checkpoint, &input, &out),
        Command::Evaluate {
            checkpoint,
            store,
            n,
            seed,
            out,
        } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let label = checkpoint
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "model".into());
            let mut model = Pipeline::from_checkpoint(&ckpt, &label)?;
            let store = ClipStore::open(&store)?;
            let report = evaluate(&mut model, &store, n, seed)?;
            report.write_csv(&out)?;
            println!("{}", report.summary());
            Ok(())
        }
        Command::Inspect { target } => inspect(target),
    }
}

fn print_store(store: &ClipStore) -> Result<()> {
    let sources = store.sources()?;
    println!(
        "store={} resolution={} sources={} clips={} train={} test={}",
        store.root.display(),
        store.resolution()?,
        sources.len(),
        store.records.len(),
        store.indices(Split::Train).len(),
        store.indices(Split::Test).len()
    );
    Ok(())
}

fn run_config(args: &RunArgs, g1_checkpoint: Option<PathBuf>) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &args.config {
        cfg.apply_file(path)?;
    }
    for kv in &args.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k, v)?;
    }
    if let Some(s) = &args.store {
        cfg.store = s.clone();
    }
    if let Some(o) = &args.out_dir {
        cfg.out_dir = o.clone();
    }
    if let Some(n) = args.iterations {
        cfg.iterations = n;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(r) = args.resolution {
        cfg.resolution = Resolution::from_pixels(r)?;
    }
    if let Some(w) = &args.width {
        cfg.width_multiplier = w.parse()?;
    }
    if let Some(b) = args.batch_size {
        cfg.batch_size = b;
    }
    if let Some(c) = args.checkpoint_every {
        cfg.checkpoint_every = c;
    }
    if g1_checkpoint.is_some() {
        cfg.g1_checkpoint = g1_checkpoint;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn train(stage: Stage, args: &RunArgs, g1_checkpoint: Option<PathBuf>) -> Result<()> {
    let cfg = run_config(args, g1_checkpoint)?;
    let (mut trainer, out_dir, target) = match &args.resume {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            if ckpt.meta.stage != stage.number() {
                return Err(Error::config(format!(
                    "{} is a stage-{} checkpoint, cannot resume stage {}",
                    path.display(),
                    ckpt.meta.stage,
                    stage.number()
                )));
            }
            let stored = RunConfig::from_text(&ckpt.meta.config)?;
            let store_dir = args.store.clone().unwrap_or_else(|| stored.store.clone());
            let store = Arc::new(ClipStore::open(&store_dir)?);
            let mut trainer = Trainer::resume(&ckpt, store)?;
            let target = args.iterations.unwrap_or(trainer.cfg.iterations);
            trainer.cfg.iterations = target;
            let out_dir = args.out_dir.clone().unwrap_or_else(|| trainer.cfg.out_dir.clone());
            (trainer, out_dir, target)
        }
        None => {
            let store = Arc::new(ClipStore::open(&cfg.store)?);
            let trainer = match stage {
                Stage::One => Trainer::stage1(cfg.clone(), store)?,
                Stage::Two => {
                    let path = cfg
                        .g1_checkpoint
                        .clone()
                        .ok_or_else(|| Error::config("stage 2 needs --g1-checkpoint or g1_checkpoint in the config"))?;
                    let g1 = Checkpoint::load(&path)?;
                    if g1.meta.stage != 1 {
                        return Err(Error::config(format!("{} is not a stage-1 checkpoint", path.display())));
                    }
                    Trainer::stage2(cfg.clone(), store, &g1)?
                }
            };
            (trainer, cfg.out_dir.clone(), cfg.iterations)
        }
    };
    if trainer.iteration >= target {
        println!("already at iteration {} (target {target})", trainer.iteration);
        return Ok(());
    }
    trainer.run_until(target, &out_dir, |r| println!("{}", r.progress_line()))?;
    println!("wrote {}", trainer.checkpoint_path(&out_dir, true).display());
    Ok(())
}

fn generate(checkpoint: &Path, input: &Path, out: &Path) -> Result<()> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let mut model = Pipeline::from_checkpoint(&ckpt, "generate")?;
    let side = model.resolution().pixels();
    let frame = ppm::read(input)?;
    if (frame.width, frame.height) != (side, side) {
        return Err(Error::config(format!(
            "input is {}x{} but the model expects {side}x{side} frames",
            frame.width, frame.height
        )));
    }
    let mut planar = vec![0f32; 3 * side * side];
    for (i, px) in frame.data.chunks_exact(3).enumerate() {
        for c in 0..3 {
            planar[c * side * side + i] = data::normalize(px[c]);
        }
    }
    let x = duplicate_frame(&Tensor::from_vec(&[1, 3, side, side], planar)?, CLIP_FRAMES)?;
    let video = model.predict(&x)?;
    let video = video.reshape(&[3, CLIP_FRAMES, side, side])?;
    data::export_clip(&video, out)?;
    println!("wrote {CLIP_FRAMES} frames to {}", out.display());
    Ok(())
}

fn inspect(target: InspectTarget) -> Result<()> {
    match target {
        InspectTarget::Spec {
            resolution,
            stage,
            width,
            discriminator,
        } => {
            let res = Resolution::from_pixels(resolution)?;
            let width: Width = width.parse()?;
            let spec = if discriminator {
                build_discriminator(res, width, &[])?
            } else {
                let stage = match stage {
                    1 => Stage::One,
                    2 => Stage::Two,
                    s => return Err(Error::config(format!("stage must be 1 or 2, got {s}"))),
                };
                build_generator(stage, res, width)?
            };
            spec.validate()?;
            print!("{}", spec.summary_table());
            println!("parameters={}", spec.parameter_count());
            Ok(())
        }
        InspectTarget::Store { dir } => {
            let store = ClipStore::open(&dir)?;
            print_store(&store)?;
            for s in store.sources()? {
                println!("{} frames={} clips={} size={}x{}", s.source_id, s.frames, s.clips, s.width, s.height);
            }
            Ok(())
        }
        InspectTarget::Checkpoint { file } => {
            let ckpt = Checkpoint::load(&file)?;
            let elements: usize = ckpt.tensors.iter().map(|(_, t)| t.shape.iter().product::<usize>()).sum();
            println!(
                "stage={} iteration={} tensors={} elements={} adam_g_t={} adam_d_t={}",
                ckpt.meta.stage,
                ckpt.meta.iteration,
                ckpt.tensors.len(),
                elements,
                ckpt.meta.adam_g_t,
                ckpt.meta.adam_d_t
            );
            print!("{}", ckpt.meta.config);
            Ok(())
        }
    }
}
