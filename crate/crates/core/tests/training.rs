use std::path::Path;
use std::sync::Arc;

use mdgan_core::config::G2Init;
use mdgan_core::data::{ingest, synthesize_frames, ClipStore, SynthParams};
use mdgan_core::models::{Resolution, Width};
use mdgan_core::training::{Adam, AdamConfig, Checkpoint, Trainer};
use mdgan_core::{Error, RunConfig};
use mdgan_tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn store(dir: &Path) -> Arc<ClipStore> {
    let p = SynthParams {
        sources: 4,
        frames_per_source: 64,
        width: 64,
        height: 64,
        velocity: 1.0,
        seed: 21,
    };
    synthesize_frames(&dir.join("frames"), &p).unwrap();
    Arc::new(ingest(&dir.join("frames"), &dir.join("store"), Resolution::R64, 0.25, 21).unwrap())
}

fn config(dir: &Path) -> RunConfig {
    RunConfig {
        resolution: Resolution::R64,
        width_multiplier: Width::new(1, 8).unwrap(),
        iterations: 6,
        checkpoint_every: 3,
        seed: 5,
        store: dir.join("store"),
        out_dir: dir.join("runs"),
        ..RunConfig::default()
    }
}

#[test]
fn resumed_stage_one_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let s = store(dir.path());
    let cfg = config(dir.path());

    let mut straight = Trainer::stage1(cfg.clone(), s.clone()).unwrap();
    let full = straight.run_until(6, &dir.path().join("a"), |_| {}).unwrap();

    let mut first = Trainer::stage1(cfg, s.clone()).unwrap();
    first.run_until(3, &dir.path().join("b"), |_| {}).unwrap();
    let ckpt = Checkpoint::load(&dir.path().join("b/stage1_final.mdck")).unwrap();
    let mut second = Trainer::resume(&ckpt, s).unwrap();
    let tail = second.run_until(6, &dir.path().join("b"), |_| {}).unwrap();

    assert_eq!(&full[3..], &tail[..]);
    assert_eq!(straight.checkpoint().unwrap().to_bytes().unwrap(), second.checkpoint().unwrap().to_bytes().unwrap());
    let csv = |d: &str| std::fs::read(dir.path().join(d).join("stage1_losses.csv")).unwrap();
    assert_eq!(csv("a"), csv("b"));
    assert!(dir.path().join("a/stage1_iter000003.mdck").exists());
}

#[test]
fn stage_two_keeps_g1_frozen_and_resumes_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let s = store(dir.path());
    let cfg = config(dir.path());
    let mut t1 = Trainer::stage1(RunConfig { iterations: 2, ..cfg.clone() }, s.clone()).unwrap();
    t1.run_until(2, &dir.path().join("s1"), |_| {}).unwrap();
    let g1 = Checkpoint::load(&dir.path().join("s1/stage1_final.mdck")).unwrap();

    let mut t2 = Trainer::stage2(cfg.clone(), s.clone(), &g1).unwrap();
    // G2 starts as a copy of G1 on the shared layers
    let g1_tensors = t2.g1.named_tensors();
    for (name, t) in t2.g2.as_ref().unwrap().named_tensors() {
        let (_, src) = g1_tensors.iter().find(|(n, _)| *n == name).unwrap();
        assert_eq!(src.values(), t.values(), "{name}");
    }
    let full = t2.run_until(4, &dir.path().join("s2"), |_| {}).unwrap();
    assert!(full.iter().all(|r| r.lambda == 1.0 && r.rank.is_finite() && r.rank_d.is_finite()));
    let after = t2.checkpoint().unwrap();
    for (name, raw) in g1.with_prefix("g1") {
        assert_eq!(after.get(&format!("g1.{name}")), Some(raw), "{name}");
    }
    assert!(after.has_prefix("d2") && !after.has_prefix("d1"));

    let mut a = Trainer::stage2(cfg, s.clone(), &g1).unwrap();
    a.run_until(2, &dir.path().join("s2b"), |_| {}).unwrap();
    let mid = Checkpoint::load(&dir.path().join("s2b/stage2_final.mdck")).unwrap();
    let mut b = Trainer::resume(&mid, s).unwrap();
    let tail = b.run_until(4, &dir.path().join("s2b"), |_| {}).unwrap();
    assert_eq!(&full[2..], &tail[..]);
    assert_eq!(after.to_bytes().unwrap(), b.checkpoint().unwrap().to_bytes().unwrap());
}

#[test]
fn random_g2_init_differs_from_g1() {
    let dir = tempfile::tempdir().unwrap();
    let s = store(dir.path());
    let cfg = config(dir.path());
    let t1 = Trainer::stage1(cfg.clone(), s.clone()).unwrap();
    let g1 = t1.checkpoint().unwrap();
    let t2 = Trainer::stage2(RunConfig { g2_init: G2Init::Random, ..cfg }, s, &g1).unwrap();
    let a = t2.g1.named_tensors();
    let b = t2.g2.as_ref().unwrap().named_tensors();
    assert_ne!(a[0].1.values(), b[0].1.values());
}

#[test]
fn stage_two_without_ranking_reduces_to_stage_one_terms() {
    let dir = tempfile::tempdir().unwrap();
    let s = store(dir.path());
    let cfg = config(dir.path());
    let g1 = Trainer::stage1(cfg.clone(), s.clone()).unwrap().checkpoint().unwrap();
    let mut t = Trainer::stage2(RunConfig { lambda_rank: 0.0, ..cfg }, s, &g1).unwrap();
    for _ in 0..2 {
        let r = t.step().unwrap();
        assert_eq!(r.lambda, 0.0);
        assert_eq!(r.total_g, r.adv_g + r.content);
        assert_eq!(r.total_d, r.adv_d);
    }
}

#[test]
fn mismatched_store_resolution_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let s = store(dir.path());
    let cfg = RunConfig {
        resolution: Resolution::R128,
        ..config(dir.path())
    };
    match Trainer::stage1(cfg, s) {
        Err(e @ Error::Config(_)) => assert_eq!(e.exit_code(), 2),
        other => panic!("expected a config error, got {:?}", other.err()),
    }
}

#[test]
fn stage_one_checkpoint_cannot_be_a_stage_two_g1_of_wrong_width() {
    let dir = tempfile::tempdir().unwrap();
    let s = store(dir.path());
    let cfg = config(dir.path());
    let g1 = Trainer::stage1(cfg.clone(), s.clone()).unwrap().checkpoint().unwrap();
    let wide = RunConfig {
        width_multiplier: Width::new(1, 4).unwrap(),
        ..cfg
    };
    assert!(Trainer::stage2(wide, s, &g1).is_err());
}

#[test]
fn damaged_checkpoints_are_integrity_errors() {
    let dir = tempfile::tempdir().unwrap();
    let s = store(dir.path());
    let bytes = Trainer::stage1(config(dir.path()), s).unwrap().checkpoint().unwrap().to_bytes().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut cases = vec![bytes[..bytes.len() / 2].to_vec(), Vec::new(), b"MDCK".to_vec()];
    for _ in 0..20 {
        let mut b = bytes.clone();
        let i = rng.random_range(0..b.len());
        b[i] ^= 1 << rng.random_range(0..8);
        cases.push(b);
    }
    for (k, b) in cases.iter().enumerate() {
        let path = dir.path().join(format!("bad{k}.mdck"));
        std::fs::write(&path, b).unwrap();
        let err = Checkpoint::load(&path).unwrap_err();
        assert_eq!(err.exit_code(), 3, "case {k}: {err}");
    }
    assert_eq!(Checkpoint::load(&dir.path().join("missing.mdck")).unwrap_err().exit_code(), 3);
}

#[test]
fn adam_matches_a_scalar_reference_over_many_steps() {
    let cfg = AdamConfig {
        lr: 2e-4,
        beta1: 0.5,
        beta2: 0.9,
        eps: 1e-8,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let start: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut p = Tensor::<f64>::from_vec(&[5], start.clone()).unwrap().with_grad(true);
    let mut opt = Adam::new(cfg, &[&p]);
    let (mut x, mut m, mut v) = (start, [0.0; 5], [0.0; 5]);
    for t in 1..=25 {
        let g: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
        let w = Tensor::<f64>::from_vec(&[5], g.clone()).unwrap();
        p.mul(&w).unwrap().sum_all().backward().unwrap();
        opt.step(vec![&mut p]).unwrap();
        for i in 0..5 {
            m[i] = 0.5 * m[i] + 0.5 * g[i];
            v[i] = 0.9 * v[i] + 0.1 * g[i] * g[i];
            let mh = m[i] / (1.0 - 0.5f64.powi(t));
            let vh = v[i] / (1.0 - 0.9f64.powi(t));
            x[i] -= 2e-4 * mh / (vh.sqrt() + 1e-8);
        }
        for (a, b) in p.values().iter().zip(&x) {
            assert!((a - b).abs() < 1e-14, "step {t}: {a} vs {b}");
        }
    }
    assert_eq!(opt.t, 25);
}
