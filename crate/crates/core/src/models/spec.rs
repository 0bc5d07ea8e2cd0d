//! Declarative network layouts for the two generators and discriminators.

use std::fmt;
use std::str::FromStr;

use mdgan_tensor::nn::{Activation, ConvParams};

use crate::error::{Error, Result};

/// Frames per clip.
pub const CLIP_FRAMES: usize = 32;
pub const IMAGE_CHANNELS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resolution {
    R128,
    R64,
}

impl Resolution {
    pub fn from_pixels(px: usize) -> Result<Self> {
        match px {
            128 => Ok(Resolution::R128),
            64 => Ok(Resolution::R64),
            other => Err(Error::config(format!("resolution must be 128 or 64, got {other}"))),
        }
    }

    pub fn pixels(self) -> usize {
        match self {
            Resolution::R128 => 128,
            Resolution::R64 => 64,
        }
    }

    /// Per-sample `(C, T, H, W)` of a clip at this resolution.
    pub fn clip_shape(self) -> [usize; 4] {
        [IMAGE_CHANNELS, CLIP_FRAMES, self.pixels(), self.pixels()]
    }
}

impl fmt::Display for Resolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.pixels())
    }
}

/// Rational channel-width multiplier in `(0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Width {
    num: u32,
    den: u32,
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

impl Width {
    pub const FULL: Width = Width { num: 1, den: 1 };

    pub fn new(num: u32, den: u32) -> Result<Self> {
        if num == 0 || den == 0 || num > den {
            return Err(Error::config(format!("width multiplier {num}/{den} is not in (0, 1]")));
        }
        let g = gcd(num as u64, den as u64) as u32;
        Ok(Width { num: num / g, den: den / g })
    }

    /// Scaled filter count, never below one.
    pub fn scale(self, filters: usize) -> usize {
        (filters * self.num as usize / self.den as usize).max(1)
    }

    pub fn as_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl FromStr for Width {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::config(format!("cannot parse width multiplier {s:?}"));
        if let Some((n, d)) = s.split_once('/') {
            return Width::new(n.trim().parse().map_err(|_| bad())?, d.trim().parse().map_err(|_| bad())?);
        }
        match s.split_once('.') {
            None => Width::new(s.parse().map_err(|_| bad())?, 1),
            Some((int, frac)) => {
                if frac.len() > 6 || !frac.chars().all(|c| c.is_ascii_digit()) {
                    return Err(bad());
                }
                let den = 10u32.pow(frac.len() as u32);
                let int: u32 = if int.is_empty() { 0 } else { int.parse().map_err(|_| bad())? };
                let frac_v: u32 = if frac.is_empty() { 0 } else { frac.parse().map_err(|_| bad())? };
                Width::new(int * den + frac_v, den)
            }
        }
    }
}

impl fmt::Display for Width {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    One,
    Two,
}

impl Stage {
    pub fn number(self) -> u32 {
        match self {
            Stage::One => 1,
            Stage::Two => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetworkRole {
    Generator(Stage),
    Discriminator,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub name: String,
    pub in_channels: usize,
    pub params: ConvParams,
    pub batch_norm: bool,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn out_channels(&self) -> usize {
        self.params.filters
    }

    pub fn is_deconv(&self) -> bool {
        self.params.transposed
    }

    /// Weight shape: `[C_out, C_in, k..]` for conv, `[C_in, C_out, k..]` for deconv.
    pub fn weight_shape(&self) -> [usize; 5] {
        let [kt, kh, kw] = self.params.kernel;
        let (a, b) = if self.is_deconv() {
            (self.in_channels, self.out_channels())
        } else {
            (self.out_channels(), self.in_channels)
        };
        [a, b, kt, kh, kw]
    }
}

/// An encoder activation added to the input of a decoder layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkipPair {
    pub from: String,
    pub to: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub role: NetworkRole,
    pub resolution: Resolution,
    pub width: Width,
    pub layers: Vec<LayerSpec>,
    pub skips: Vec<SkipPair>,
    /// Layers whose post-activation outputs are exposed as features.
    pub taps: Vec<String>,
}

/// Per-layer shapes for one sample, `(C, T, H, W)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerShape {
    pub name: String,
    pub input: [usize; 4],
    pub output: [usize; 4],
}

struct Row {
    name: &'static str,
    filters: usize,
    kernel: [usize; 3],
    stride: [usize; 3],
    padding: [usize; 3],
}

const fn row(name: &'static str, filters: usize, kernel: [usize; 3], stride: [usize; 3], padding: [usize; 3]) -> Row {
    Row {
        name,
        filters,
        kernel,
        stride,
        padding,
    }
}

const K4: [usize; 3] = [4, 4, 4];
const S2: [usize; 3] = [2, 2, 2];
const P1: [usize; 3] = [1, 1, 1];

// Generator layer table. deconv1 uses a temporal kernel of 2 so that its
// output (2,4,4) lines up with conv5 for the skip connection.
const GENERATOR_ROWS: [Row; 12] = [
    row("conv1", 32, [3, 4, 4], [1, 2, 2], P1),
    row("conv2", 64, K4, S2, P1),
    row("conv3", 128, K4, S2, P1),
    row("conv4", 256, K4, S2, P1),
    row("conv5", 512, K4, S2, P1),
    row("conv6", 512, [2, 4, 4], [1, 1, 1], [0, 0, 0]),
    row("deconv1", 512, [2, 4, 4], [1, 1, 1], [0, 0, 0]),
    row("deconv2", 256, K4, S2, P1),
    row("deconv3", 128, K4, S2, P1),
    row("deconv4", 64, K4, S2, P1),
    row("deconv5", 32, K4, S2, P1),
    row("deconv6", 3, [3, 4, 4], [1, 2, 2], P1),
];

const SCORE_LAYER: &str = "score";

fn stage1_skips() -> Vec<SkipPair> {
    (1..=5)
        .map(|i| SkipPair {
            from: format!("conv{i}"),
            to: format!("deconv{}", 7 - i),
        })
        .collect()
}

/// Layout of G1 (stage 1) or G2 (stage 2).
pub fn build_generator(stage: Stage, resolution: Resolution, width: Width) -> Result<NetworkSpec> {
    let omit_outer = resolution == Resolution::R64;
    let rows: Vec<&Row> = GENERATOR_ROWS
        .iter()
        .filter(|r| !(omit_outer && (r.name == "conv1" || r.name == "deconv6")))
        .collect();
    let last = rows.len() - 1;

    let mut layers = Vec::with_capacity(rows.len());
    let mut channels = IMAGE_CHANNELS;
    for (i, r) in rows.iter().enumerate() {
        let deconv = r.name.starts_with("deconv");
        let is_output = i == last;
        let filters = if is_output { IMAGE_CHANNELS } else { width.scale(r.filters) };
        let mut params = ConvParams::new(filters, r.kernel, r.stride, r.padding);
        if deconv {
            params = params.transposed();
        }
        let (batch_norm, activation) = match r.name {
            _ if is_output => (false, Activation::Tanh),
            "conv1" | "conv6" => (false, Activation::LeakyRelu),
            _ if deconv => (true, Activation::Relu),
            _ => (true, Activation::LeakyRelu),
        };
        layers.push(LayerSpec {
            name: r.name.to_string(),
            in_channels: channels,
            params,
            batch_norm,
            activation,
        });
        channels = filters;
    }

    let present = |n: &str| layers.iter().any(|l| l.name == n);
    let skips = stage1_skips()
        .into_iter()
        .filter(|s| present(&s.from) && present(&s.to))
        .filter(|s| stage == Stage::One || !(s.from == "conv1" || s.from == "conv2"))
        .collect();

    let spec = NetworkSpec {
        role: NetworkRole::Generator(stage),
        resolution,
        width,
        layers,
        skips,
        taps: Vec::new(),
    };
    spec.validate()?;
    Ok(spec)
}

/// Layout shared by D1 and D2: the generator encoder up to conv5, then a
/// single sigmoid unit. `taps` names the feature layers; empty selects the
/// first and third conv layers.
pub fn build_discriminator(resolution: Resolution, width: Width, taps: &[String]) -> Result<NetworkSpec> {
    let g = build_generator(Stage::One, resolution, width)?;
    let mut layers: Vec<LayerSpec> = g
        .layers
        .into_iter()
        .take_while(|l| l.name != "conv6")
        .collect();
    let channels = layers.last().map(|l| l.out_channels()).unwrap_or(IMAGE_CHANNELS);
    layers.push(LayerSpec {
        name: SCORE_LAYER.to_string(),
        in_channels: channels,
        params: ConvParams::new(1, [2, 4, 4], [1, 1, 1], [0, 0, 0]),
        batch_norm: false,
        activation: Activation::Sigmoid,
    });
    let taps = if taps.is_empty() {
        vec![layers[0].name.clone(), layers[2].name.clone()]
    } else {
        taps.to_vec()
    };
    for t in &taps {
        if t == SCORE_LAYER || !layers.iter().any(|l| &l.name == t) {
            return Err(Error::config(format!("unknown discriminator feature layer {t:?}")));
        }
    }
    let spec = NetworkSpec {
        role: NetworkRole::Discriminator,
        resolution,
        width,
        layers,
        skips: Vec::new(),
        taps,
    };
    spec.validate()?;
    Ok(spec)
}

impl NetworkSpec {
    pub fn input_shape(&self) -> [usize; 4] {
        self.resolution.clip_shape()
    }

    pub fn layer(&self, name: &str) -> Option<&LayerSpec> {
        self.layers.iter().find(|l| l.name == name)
    }

    /// Chains the shape formulas through every layer, skip additions included.
    pub fn trace(&self, input: [usize; 4]) -> Result<Vec<LayerShape>> {
        let mut shapes: Vec<LayerShape> = Vec::with_capacity(self.layers.len());
        let mut cur = input;
        for layer in &self.layers {
            if cur[0] != layer.in_channels {
                return Err(Error::config(format!(
                    "{}: expects {} input channels, receives {}",
                    layer.name, layer.in_channels, cur[0]
                )));
            }
            for skip in self.skips.iter().filter(|s| s.to == layer.name) {
                let src = shapes.iter().find(|s| s.name == skip.from).ok_or_else(|| {
                    Error::config(format!("skip {} -> {}: source is not an earlier layer", skip.from, skip.to))
                })?;
                if src.output != cur {
                    return Err(Error::config(format!(
                        "skip {} -> {}: encoder output {:?} does not match decoder input {:?}",
                        skip.from, skip.to, src.output, cur
                    )));
                }
            }
            let ext = layer.params.output_extents([cur[1], cur[2], cur[3]])?;
            let out = [layer.out_channels(), ext[0], ext[1], ext[2]];
            shapes.push(LayerShape {
                name: layer.name.clone(),
                input: cur,
                output: out,
            });
            cur = out;
        }
        Ok(shapes)
    }

    /// Checks channel chaining, skip shapes, and the expected output shape.
    pub fn validate(&self) -> Result<()> {
        for skip in &self.skips {
            if self.layer(&skip.to).is_none() {
                return Err(Error::config(format!("skip target {} is not a layer", skip.to)));
            }
        }
        let shapes = self.trace(self.input_shape())?;
        let out = shapes.last().map(|s| s.output).unwrap_or(self.input_shape());
        let want = match self.role {
            NetworkRole::Generator(_) => self.input_shape(),
            NetworkRole::Discriminator => [1, 1, 1, 1],
        };
        if out != want {
            return Err(Error::config(format!("network output {out:?}, expected {want:?}")));
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| {
                let w: usize = l.weight_shape().iter().product();
                let bn = if l.batch_norm { 2 * l.out_channels() } else { 0 };
                w + l.out_channels() + bn
            })
            .sum()
    }

    /// Human-readable layer table with per-sample output shapes.
    pub fn summary_table(&self) -> String {
        let shapes = self.trace(self.input_shape()).unwrap_or_default();
        let mut out = format!(
            "{:?} | resolution {} | width {} | {} parameters\n",
            self.role,
            self.resolution,
            self.width,
            self.parameter_count()
        );
        out.push_str(&format!(
            "{:<8} {:>7} {:<10} {:<10} {:<10} {:<3} {:<10} {}\n",
            "layer", "filters", "kernel", "stride", "padding", "bn", "act", "output (C,T,H,W)"
        ));
        let fmt3 = |v: [usize; 3]| format!("({},{},{})", v[0], v[1], v[2]);
        for (l, s) in self.layers.iter().zip(shapes.iter().map(Some).chain(std::iter::repeat(None))) {
            let shape = s
                .map(|s| format!("({},{},{},{})", s.output[0], s.output[1], s.output[2], s.output[3]))
                .unwrap_or_else(|| "?".into());
            out.push_str(&format!(
                "{:<8} {:>7} {:<10} {:<10} {:<10} {:<3} {:<10} {}\n",
                l.name,
                l.params.filters,
                fmt3(l.params.kernel),
                fmt3(l.params.stride),
                fmt3(l.params.padding),
                if l.batch_norm { "yes" } else { "no" },
                l.activation.name(),
                shape
            ));
        }
        for s in &self.skips {
            out.push_str(&format!("skip {} -> {}\n", s.from, s.to));
        }
        for t in &self.taps {
            out.push_str(&format!("feature tap {t}\n"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn width_parsing() {
        assert_eq!("1/8".parse::<Width>().unwrap(), Width::new(1, 8).unwrap());
        assert_eq!("0.125".parse::<Width>().unwrap(), Width::new(1, 8).unwrap());
        assert_eq!("1".parse::<Width>().unwrap(), Width::FULL);
        assert_eq!("2/4".parse::<Width>().unwrap().to_string(), "1/2");
        assert!("0".parse::<Width>().is_err());
        assert!("3/2".parse::<Width>().is_err());
        assert!("abc".parse::<Width>().is_err());
        assert_eq!(Width::new(1, 1024).unwrap().scale(3), 1);
    }

    #[test]
    fn resolution_validation() {
        assert!(Resolution::from_pixels(96).is_err());
        assert_eq!(Resolution::from_pixels(64).unwrap().clip_shape(), [3, 32, 64, 64]);
    }

    #[test]
    fn stage1_128_layout() {
        let g = build_generator(Stage::One, Resolution::R128, Width::FULL).unwrap();
        assert_eq!(g.layers.len(), 12);
        assert_eq!(g.layers.iter().filter(|l| l.is_deconv()).count(), 6);
        assert_eq!(g.skips.len(), 5);
        let conv1 = g.layer("conv1").unwrap();
        assert!(!conv1.batch_norm);
        assert_eq!(conv1.activation, Activation::LeakyRelu);
        let d6 = g.layer("deconv6").unwrap();
        assert!(!d6.batch_norm);
        assert_eq!(d6.activation, Activation::Tanh);
        assert_eq!(g.layer("deconv3").unwrap().activation, Activation::Relu);
        assert!(g.layer("conv3").unwrap().batch_norm);
    }

    #[test]
    fn stage2_drops_outer_skips() {
        let g = build_generator(Stage::Two, Resolution::R128, Width::FULL).unwrap();
        let from: Vec<&str> = g.skips.iter().map(|s| s.from.as_str()).collect();
        assert_eq!(from, ["conv3", "conv4", "conv5"]);
        let g1 = build_generator(Stage::One, Resolution::R128, Width::FULL).unwrap();
        assert_eq!(g.layers, g1.layers);
    }

    #[test]
    fn r64_omits_outer_layers() {
        let g = build_generator(Stage::One, Resolution::R64, Width::FULL).unwrap();
        assert_eq!(g.layers.len(), 10);
        assert!(g.layer("conv1").is_none() && g.layer("deconv6").is_none());
        let last = g.layers.last().unwrap();
        assert_eq!((last.name.as_str(), last.out_channels(), last.activation), ("deconv5", 3, Activation::Tanh));
        assert_eq!(g.trace(g.input_shape()).unwrap().last().unwrap().output, [3, 32, 64, 64]);
        assert_eq!(g.skips.len(), 4);
        assert_eq!(build_generator(Stage::Two, Resolution::R64, Width::FULL).unwrap().skips.len(), 3);
    }

    #[test]
    fn discriminator_layout() {
        let d = build_discriminator(Resolution::R128, Width::FULL, &[]).unwrap();
        assert_eq!(d.taps, ["conv1", "conv3"]);
        let shapes = d.trace(d.input_shape()).unwrap();
        assert_eq!(shapes[0].output, [32, 32, 64, 64]);
        assert_eq!(shapes[2].output, [128, 8, 16, 16]);
        assert_eq!(shapes.last().unwrap().output, [1, 1, 1, 1]);
        let d64 = build_discriminator(Resolution::R64, Width::new(1, 8).unwrap(), &[]).unwrap();
        assert_eq!(d64.taps, ["conv2", "conv4"]);
        assert!(build_discriminator(Resolution::R128, Width::FULL, &["score".into()]).is_err());
        assert!(build_discriminator(Resolution::R128, Width::FULL, &["conv9".into()]).is_err());
    }

    #[test]
    fn broken_skip_fails_loudly() {
        let mut g = build_generator(Stage::One, Resolution::R128, Width::FULL).unwrap();
        g.skips.push(SkipPair {
            from: "conv2".into(),
            to: "deconv4".into(),
        });
        let err = g.validate().unwrap_err();
        assert!(err.to_string().contains("conv2 -> deconv4"), "{err}");
    }
}
