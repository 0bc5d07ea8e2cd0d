//! Bias-corrected Adam with a fixed learning rate.

use mdgan_tensor::{Element, Tensor};

use crate::config::RunConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn from_run(cfg: &RunConfig) -> Self {
        AdamConfig {
            lr: cfg.lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.adam_eps,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam<T: Element = f32> {
    pub cfg: AdamConfig,
    pub t: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Element> Adam<T> {
    pub fn new(cfg: AdamConfig, params: &[&Tensor<T>]) -> Self {
        Adam {
            cfg,
            t: 0,
            m: params.iter().map(|p| vec![T::zero(); p.numel()]).collect(),
            v: params.iter().map(|p| vec![T::zero(); p.numel()]).collect(),
        }
    }

    /// Applies one update from the gradients stored on `params` (missing
    /// gradients count as zero). Each parameter is replaced by a new leaf that
    /// keeps its gradient-tracking flag. Nothing changes if any gradient is
    /// non-finite.
    pub fn step(&mut self, params: Vec<&mut Tensor<T>>) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::config(format!(
                "optimizer tracks {} tensors, got {}",
                self.m.len(),
                params.len()
            )));
        }
        let grads: Vec<Option<Vec<T>>> = params.iter().map(|p| p.grad()).collect();
        for (i, (p, g)) in params.iter().zip(&grads).enumerate() {
            if p.numel() != self.m[i].len() {
                return Err(Error::config(format!("parameter {i} changed size")));
            }
            if let Some(g) = g {
                if let Some(bad) = g.iter().position(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!(
                        "gradient of parameter {i} (shape {:?}) is {:?} at index {bad}",
                        p.shape(),
                        g[bad]
                    )));
                }
            }
        }
        self.t += 1;
        let c = self.cfg;
        let (b1, b2) = (T::from_f64(c.beta1), T::from_f64(c.beta2));
        let (one_b1, one_b2) = (T::from_f64(1.0 - c.beta1), T::from_f64(1.0 - c.beta2));
        let bc1 = T::from_f64(1.0 - c.beta1.powi(self.t as i32));
        let bc2 = T::from_f64(1.0 - c.beta2.powi(self.t as i32));
        let (lr, eps) = (T::from_f64(c.lr), T::from_f64(c.eps));
        for (i, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let mut data = p.to_vec();
            for j in 0..data.len() {
                let gj = g.as_ref().map_or(T::zero(), |g| g[j]);
                m[j] = b1 * m[j] + one_b1 * gj;
                v[j] = b2 * v[j] + one_b2 * gj * gj;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                data[j] = data[j] - lr * m_hat / (v_hat.sqrt() + eps);
            }
            let trainable = p.requires_grad();
            *p = Tensor::from_vec(p.shape(), data)?.with_grad(trainable);
        }
        Ok(())
    }
}
