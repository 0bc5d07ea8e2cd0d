//! Flat `key = value` run configuration.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::models::spec::{Resolution, Width};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Mean,
    Sum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdvForm {
    Saturating,
    NonSaturating,
}

/// How the Gram matrix treats the batch axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GramBatch {
    Sum,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum G2Init {
    FromG1,
    Random,
}

/// Batch-norm behaviour when generating outside of training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalNorm {
    Inference,
    Batch,
}

macro_rules! keyword_enum {
    ($ty:ident { $($text:literal => $var:ident),+ $(,)? }) => {
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s.trim() {
                    $($text => Ok($ty::$var),)+
                    other => Err(Error::config(format!(
                        concat!("invalid ", stringify!($ty), " {:?}, expected one of: ", $($text, " "),+),
                        other
                    ))),
                }
            }
        }
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($ty::$var => $text,)+ })
            }
        }
    };
}

keyword_enum!(Reduction { "mean" => Mean, "sum" => Sum });
keyword_enum!(AdvForm { "saturating" => Saturating, "nonsaturating" => NonSaturating });
keyword_enum!(GramBatch { "sum" => Sum, "mean" => Mean });
keyword_enum!(G2Init { "g1" => FromG1, "random" => Random });
keyword_enum!(EvalNorm { "inference" => Inference, "batch" => Batch });

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub resolution: Resolution,
    pub width_multiplier: Width,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub bn_eps: f64,
    pub bn_momentum: f64,
    pub lambda_rank: f64,
    /// Discriminator layers used for Gram features; empty selects the defaults.
    pub gram_taps: Vec<String>,
    pub gram_batch: GramBatch,
    pub loss_reduction: Reduction,
    pub adv_form: AdvForm,
    pub seed: u64,
    pub iterations: u64,
    pub checkpoint_every: u64,
    pub g2_init: G2Init,
    pub eval_norm: EvalNorm,
    pub store: PathBuf,
    pub out_dir: PathBuf,
    pub g1_checkpoint: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            resolution: Resolution::R128,
            width_multiplier: Width::FULL,
            batch_size: 2,
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.9,
            adam_eps: 1e-8,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
            lambda_rank: 1.0,
            gram_taps: Vec::new(),
            gram_batch: GramBatch::Sum,
            loss_reduction: Reduction::Mean,
            adv_form: AdvForm::Saturating,
            seed: 0,
            iterations: 1000,
            checkpoint_every: 500,
            g2_init: G2Init::FromG1,
            eval_norm: EvalNorm::Inference,
            store: PathBuf::from("store"),
            out_dir: PathBuf::from("runs"),
            g1_checkpoint: None,
        }
    }
}

pub const KEYS: &[&str] = &[
    "resolution",
    "width_multiplier",
    "batch_size",
    "lr",
    "beta1",
    "beta2",
    "adam_eps",
    "bn_eps",
    "bn_momentum",
    "lambda_rank",
    "gram_taps",
    "gram_batch",
    "loss_reduction",
    "adv_form",
    "seed",
    "iterations",
    "checkpoint_every",
    "g2_init",
    "eval_norm",
    "store",
    "out_dir",
    "g1_checkpoint",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::config(format!("{key}: cannot parse {value:?}")))
}

impl RunConfig {
    /// Applies one setting. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "resolution" => self.resolution = Resolution::from_pixels(parse(key, v)?)?,
            "width_multiplier" => self.width_multiplier = v.parse()?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "beta1" => self.beta1 = parse(key, v)?,
            "beta2" => self.beta2 = parse(key, v)?,
            "adam_eps" => self.adam_eps = parse(key, v)?,
            "bn_eps" => self.bn_eps = parse(key, v)?,
            "bn_momentum" => self.bn_momentum = parse(key, v)?,
            "lambda_rank" => self.lambda_rank = parse(key, v)?,
            "gram_taps" => {
                self.gram_taps = v
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(String::from)
                    .collect()
            }
            "gram_batch" => self.gram_batch = v.parse()?,
            "loss_reduction" => self.loss_reduction = v.parse()?,
            "adv_form" => self.adv_form = v.parse()?,
            "seed" => self.seed = parse(key, v)?,
            "iterations" => self.iterations = parse(key, v)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, v)?,
            "g2_init" => self.g2_init = v.parse()?,
            "eval_norm" => self.eval_norm = v.parse()?,
            "store" => self.store = PathBuf::from(v),
            "out_dir" => self.out_dir = PathBuf::from(v),
            "g1_checkpoint" => self.g1_checkpoint = if v.is_empty() { None } else { Some(PathBuf::from(v)) },
            other => return Err(Error::config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Overlays `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected key = value, got {raw:?}", lineno + 1)))?;
            self.set(k, v)
                .map_err(|e| Error::config(format!("line {}: {}", lineno + 1, e)))?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
        self.apply_text(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::config(format!("{name} must be positive, got {v}")))
            }
        };
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        positive("lr", self.lr)?;
        positive("adam_eps", self.adam_eps)?;
        positive("bn_eps", self.bn_eps)?;
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum <= 1.0) {
            return Err(Error::config(format!("bn_momentum must lie in (0, 1], got {}", self.bn_momentum)));
        }
        if !(self.lambda_rank.is_finite() && self.lambda_rank >= 0.0) {
            return Err(Error::config(format!("lambda_rank must be non-negative, got {}", self.lambda_rank)));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::config("checkpoint_every must be at least 1"));
        }
        Ok(())
    }

    /// Effective settings as parseable text, one key per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            let value = match *key {
                "resolution" => self.resolution.to_string(),
                "width_multiplier" => self.width_multiplier.to_string(),
                "batch_size" => self.batch_size.to_string(),
                "lr" => format!("{:?}", self.lr),
                "beta1" => format!("{:?}", self.beta1),
                "beta2" => format!("{:?}", self.beta2),
                "adam_eps" => format!("{:?}", self.adam_eps),
                "bn_eps" => format!("{:?}", self.bn_eps),
                "bn_momentum" => format!("{:?}", self.bn_momentum),
                "lambda_rank" => format!("{:?}", self.lambda_rank),
                "gram_taps" => self.gram_taps.join(","),
                "gram_batch" => self.gram_batch.to_string(),
                "loss_reduction" => self.loss_reduction.to_string(),
                "adv_form" => self.adv_form.to_string(),
                "seed" => self.seed.to_string(),
                "iterations" => self.iterations.to_string(),
                "checkpoint_every" => self.checkpoint_every.to_string(),
                "g2_init" => self.g2_init.to_string(),
                "eval_norm" => self.eval_norm.to_string(),
                "store" => self.store.display().to_string(),
                "out_dir" => self.out_dir.display().to_string(),
                "g1_checkpoint" => self
                    .g1_checkpoint
                    .as_ref()
                    .map(|p| p.display().to_string())
                    .unwrap_or_default(),
                _ => unreachable!(),
            };
            out.push_str(&format!("{key} = {value}\n"));
        }
        out
    }
}
