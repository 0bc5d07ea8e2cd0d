//! Parameters and forward passes for generators and discriminators.

use log::warn;
use mdgan_tensor::nn::{activation, conv3d, deconv3d, BatchNormState, NormMode};
use mdgan_tensor::{Element, Tensor};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::spec::{LayerSpec, NetworkRole, NetworkSpec};
use crate::error::{Error, Result};

const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone)]
pub struct LayerParams<T: Element> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub bn: Option<BatchNormState<T>>,
}

#[derive(Debug, Clone)]
pub struct Network<T: Element = f32> {
    pub spec: NetworkSpec,
    pub layers: Vec<LayerParams<T>>,
}

pub struct GeneratorOutput<T: Element> {
    /// Same shape as the input, values in (-1, 1).
    pub video: Tensor<T>,
    /// Post-activation output of every layer, in order.
    pub activations: Vec<(String, Tensor<T>)>,
}

pub struct DiscriminatorOutput<T: Element> {
    /// Per-sample probability, shape `[N, 1]`.
    pub score: Tensor<T>,
    /// Tapped post-activation features, in tap order.
    pub features: Vec<(String, Tensor<T>)>,
}

/// Repeats a batch of frames `[N, C, H, W]` along a new time axis.
pub fn duplicate_frame<T: Element>(frame: &Tensor<T>, frames: usize) -> Result<Tensor<T>> {
    if frame.rank() != 4 {
        return Err(Error::config(format!("expected frames [N,C,H,W], got {:?}", frame.shape())));
    }
    Ok(frame.repeat_new_axis(2, frames)?)
}

/// Frame 0 of each clip in `[N, C, T, H, W]`, as `[N, C, H, W]`.
pub fn first_frame<T: Element>(video: &Tensor<T>) -> Result<Tensor<T>> {
    let s = video.shape().to_vec();
    if s.len() != 5 {
        return Err(Error::config(format!("expected video [N,C,T,H,W], got {s:?}")));
    }
    Ok(video.narrow(2, 0, 1)?.reshape(&[s[0], s[1], s[3], s[4]])?)
}

fn normal_tensor<T: Element, R: Rng>(shape: &[usize], mean: f64, rng: &mut R) -> Tensor<T> {
    let dist = Normal::new(mean, INIT_STD).expect("finite std");
    let n: usize = shape.iter().product();
    let data: Vec<T> = (0..n).map(|_| T::from_f64(dist.sample(rng))).collect();
    Tensor::from_vec(shape, data).expect("shape matches data")
}

impl<T: Element> LayerParams<T> {
    fn init<R: Rng>(layer: &LayerSpec, bn_momentum: f64, bn_eps: f64, rng: &mut R) -> Self {
        let weight = normal_tensor(&layer.weight_shape(), 0.0, rng);
        let bias = Tensor::zeros(&[layer.out_channels()]);
        let bn = layer.batch_norm.then(|| {
            let mut st = BatchNormState::new(layer.out_channels(), bn_momentum, bn_eps);
            st.gamma = normal_tensor(&[layer.out_channels()], 1.0, rng);
            st
        });
        LayerParams { weight, bias, bn }
    }
}

impl<T: Element> Network<T> {
    /// Weights ~ N(0, 0.02), batch-norm scales ~ N(1, 0.02), biases and shifts zero.
    pub fn init<R: Rng>(spec: NetworkSpec, bn_momentum: f64, bn_eps: f64, rng: &mut R) -> Self {
        let layers = spec
            .layers
            .iter()
            .map(|l| LayerParams::init(l, bn_momentum, bn_eps, rng))
            .collect();
        Network { spec, layers }
    }

    pub fn is_generator(&self) -> bool {
        matches!(self.spec.role, NetworkRole::Generator(_))
    }

    fn run_layer(&mut self, i: usize, x: &Tensor<T>, mode: NormMode) -> Result<Tensor<T>> {
        let spec = &self.spec.layers[i];
        let p = &mut self.layers[i];
        let y = if spec.is_deconv() {
            deconv3d(x, &p.weight, &p.bias, &spec.params)?
        } else {
            conv3d(x, &p.weight, &p.bias, &spec.params)?
        };
        let y = match p.bn.as_mut() {
            Some(bn) => bn.forward(&y, mode)?,
            None => y,
        };
        Ok(activation(spec.activation, &y))
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let want = self.spec.input_shape();
        if x.rank() != 5 || x.shape()[1..] != want {
            return Err(Error::config(format!(
                "network expects [N,{},{},{},{}], got {:?}",
                want[0],
                want[1],
                want[2],
                want[3],
                x.shape()
            )));
        }
        Ok(())
    }

    /// Runs the encoder-decoder with skip additions at decoder inputs.
    pub fn forward_generator(&mut self, x: &Tensor<T>, mode: NormMode) -> Result<GeneratorOutput<T>> {
        if !self.is_generator() {
            return Err(Error::config("forward_generator called on a discriminator"));
        }
        self.check_input(x)?;
        let mut activations: Vec<(String, Tensor<T>)> = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for i in 0..self.layers.len() {
            let name = self.spec.layers[i].name.clone();
            for skip in self.spec.skips.iter().filter(|s| s.to == name) {
                let (_, enc) = activations
                    .iter()
                    .find(|(n, _)| *n == skip.from)
                    .ok_or_else(|| Error::config(format!("skip source {} has not run", skip.from)))?;
                if enc.shape() != cur.shape() {
                    return Err(Error::config(format!(
                        "skip {} -> {}: {:?} vs {:?}",
                        skip.from,
                        skip.to,
                        enc.shape(),
                        cur.shape()
                    )));
                }
                cur = cur.add(enc)?;
            }
            cur = self.run_layer(i, &cur, mode)?;
            activations.push((name, cur.clone()));
        }
        Ok(GeneratorOutput { video: cur, activations })
    }

    /// Scores a video and returns the tapped features. Values outside
    /// [-1, 1] are clamped with a warning.
    pub fn forward_discriminator(&mut self, video: &Tensor<T>, mode: NormMode) -> Result<DiscriminatorOutput<T>> {
        if self.is_generator() {
            return Err(Error::config("forward_discriminator called on a generator"));
        }
        self.check_input(video)?;
        let one = T::one();
        let outside = video.values().iter().filter(|&&v| v < -one || v > one).count();
        let mut cur = if outside > 0 {
            warn!("discriminator input has {outside} values outside [-1, 1]; clamping");
            video.clamp(-one, one)
        } else {
            video.clone()
        };
        let mut features = Vec::with_capacity(self.spec.taps.len());
        for i in 0..self.layers.len() {
            cur = self.run_layer(i, &cur, mode)?;
            let name = &self.spec.layers[i].name;
            if self.spec.taps.contains(name) {
                features.push((name.clone(), cur.clone()));
            }
        }
        let order = |n: &String| self.spec.taps.iter().position(|t| t == n).unwrap_or(usize::MAX);
        features.sort_by_key(|(n, _)| order(n));
        let batch = video.shape()[0];
        Ok(DiscriminatorOutput {
            score: cur.reshape(&[batch, 1])?,
            features,
        })
    }

    /// Trainable tensors in a fixed order: per layer weight, bias, then gamma, beta.
    pub fn params(&self) -> Vec<&Tensor<T>> {
        let mut out = Vec::new();
        for p in &self.layers {
            out.push(&p.weight);
            out.push(&p.bias);
            if let Some(bn) = &p.bn {
                out.push(&bn.gamma);
                out.push(&bn.beta);
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for p in &mut self.layers {
            out.push(&mut p.weight);
            out.push(&mut p.bias);
            if let Some(bn) = &mut p.bn {
                out.push(&mut bn.gamma);
                out.push(&mut bn.beta);
            }
        }
        out
    }

    /// Re-creates every parameter as a fresh leaf with or without gradient tracking.
    pub fn set_trainable(&mut self, trainable: bool) {
        for t in self.params_mut() {
            *t = t.with_grad(trainable);
        }
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.numel()).sum()
    }

    /// Every parameter and running statistic, keyed by `layer.kind`.
    pub fn named_tensors(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        for (spec, p) in self.spec.layers.iter().zip(&self.layers) {
            out.push((format!("{}.weight", spec.name), p.weight.detach()));
            out.push((format!("{}.bias", spec.name), p.bias.detach()));
            if let Some(bn) = &p.bn {
                let c = bn.channels();
                out.push((format!("{}.bn.gamma", spec.name), bn.gamma.detach()));
                out.push((format!("{}.bn.beta", spec.name), bn.beta.detach()));
                out.push((
                    format!("{}.bn.running_mean", spec.name),
                    Tensor::from_vec(&[c], bn.running_mean.clone()).expect("channel count"),
                ));
                out.push((
                    format!("{}.bn.running_var", spec.name),
                    Tensor::from_vec(&[c], bn.running_var.clone()).expect("channel count"),
                ));
            }
        }
        out
    }

    /// Overwrites every tensor from `lookup`; shapes must match exactly.
    pub fn load_named(&mut self, mut lookup: impl FnMut(&str) -> Option<Tensor<T>>) -> Result<()> {
        let mut fetch = |name: String, shape: &[usize]| -> Result<Tensor<T>> {
            let t = lookup(&name).ok_or_else(|| Error::config(format!("missing tensor {name}")))?;
            if t.shape() != shape {
                return Err(Error::config(format!(
                    "tensor {name} has shape {:?}, network expects {:?}",
                    t.shape(),
                    shape
                )));
            }
            Ok(t.detach())
        };
        for (spec, p) in self.spec.layers.iter().zip(self.layers.iter_mut()) {
            p.weight = fetch(format!("{}.weight", spec.name), &spec.weight_shape())?;
            p.bias = fetch(format!("{}.bias", spec.name), &[spec.out_channels()])?;
            if let Some(bn) = &mut p.bn {
                let c = [bn.channels()];
                bn.gamma = fetch(format!("{}.bn.gamma", spec.name), &c)?;
                bn.beta = fetch(format!("{}.bn.beta", spec.name), &c)?;
                bn.running_mean = fetch(format!("{}.bn.running_mean", spec.name), &c)?.to_vec();
                bn.running_var = fetch(format!("{}.bn.running_var", spec.name), &c)?.to_vec();
            }
        }
        Ok(())
    }

    /// Copies parameters into a network of another element type.
    pub fn cast<U: Element>(&self) -> Network<U> {
        Network {
            spec: self.spec.clone(),
            layers: self
                .layers
                .iter()
                .map(|p| LayerParams {
                    weight: p.weight.cast(),
                    bias: p.bias.cast(),
                    bn: p.bn.as_ref().map(|bn| BatchNormState {
                        gamma: bn.gamma.cast(),
                        beta: bn.beta.cast(),
                        running_mean: bn.running_mean.iter().map(|v| U::from_f64(v.as_f64())).collect(),
                        running_var: bn.running_var.iter().map(|v| U::from_f64(v.as_f64())).collect(),
                        momentum: bn.momentum,
                        eps: bn.eps,
                    }),
                })
                .collect(),
        }
    }
}
