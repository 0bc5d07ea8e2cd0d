//! Differentiable 3D convolution, transposed convolution, batch
//! normalization and activation kernels over `(N, C, T, H, W)` tensors.
//!
//! Convolution is cross-correlation with zero padding, lowered to
//! `im2col` + GEMM per sample. The transposed convolution reuses the same
//! lowering in the opposite direction, so it is the exact adjoint of
//! [`conv3d`] with respect to its input when both share a weight tensor.

use crate::element::Element;
use crate::error::{dim_err, Result, TensorError};
use crate::ops::pairwise_sum;
use crate::tensor::Tensor;

/// Negative slope of the leaky ReLU used throughout the networks.
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvParams {
    pub filters: usize,
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
    pub transposed: bool,
}

impl ConvParams {
    pub fn new(filters: usize, kernel: [usize; 3], stride: [usize; 3], padding: [usize; 3]) -> Self {
        ConvParams {
            filters,
            kernel,
            stride,
            padding,
            transposed: false,
        }
    }

    pub fn transposed(mut self) -> Self {
        self.transposed = true;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.filters == 0 || self.kernel.contains(&0) || self.stride.contains(&0) {
            return Err(dim_err!("filters, kernel and stride must be >= 1: {self:?}"));
        }
        Ok(())
    }

    /// Output `(T, H, W)` for an input `(T, H, W)`.
    pub fn output_extents(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        self.validate()?;
        let mut out = [0; 3];
        for d in 0..3 {
            let (i, k, s, p) = (input[d] as i64, self.kernel[d] as i64, self.stride[d] as i64, self.padding[d] as i64);
            let o = if self.transposed {
                (i - 1) * s - 2 * p + k
            } else if i + 2 * p < k {
                0
            } else {
                (i + 2 * p - k) / s + 1
            };
            if o < 1 {
                return Err(dim_err!(
                    "non-positive output extent on axis {d} for input {input:?} with {self:?}"
                ));
            }
            out[d] = o as usize;
        }
        Ok(out)
    }
}

/// Geometry of one correlation: a padded "image" volume scanned at "positions".
#[derive(Clone, Copy)]
struct Lowering {
    channels: usize,
    image: [usize; 3],
    positions: [usize; 3],
    kernel: [usize; 3],
    stride: [usize; 3],
    padding: [usize; 3],
}

impl Lowering {
    fn image_len(&self) -> usize {
        self.image.iter().product()
    }

    fn position_len(&self) -> usize {
        self.positions.iter().product()
    }

    fn rows(&self) -> usize {
        self.channels * self.kernel.iter().product::<usize>()
    }

    // For kernel offset `k` along axis `d`: the valid range of output positions
    // and the input coordinate of the first one.
    fn span(&self, d: usize, k: usize) -> (usize, usize) {
        let (s, p, n_in, n_out) = (self.stride[d], self.padding[d], self.image[d], self.positions[d]);
        // position o reads input o*s + k - p, valid when in [0, n_in)
        let lo = if k >= p { 0 } else { (p - k).div_ceil(s) };
        let hi = if n_in + p > k { ((n_in + p - k - 1) / s + 1).min(n_out) } else { 0 };
        (lo, hi.max(lo))
    }

    fn for_each_segment(&self, mut f: impl FnMut(usize, usize, usize, usize, usize)) {
        // f(row, col_start, img_start, len, step_w)
        let [kt, kh, kw] = self.kernel;
        let [_, ph, pw] = self.positions;
        let [_, ih, iw] = self.image;
        let [st, sh, sw] = self.stride;
        let [pt_, ph_, pw_] = self.padding;
        for c in 0..self.channels {
            for a in 0..kt {
                let (t_lo, t_hi) = self.span(0, a);
                for b in 0..kh {
                    let (h_lo, h_hi) = self.span(1, b);
                    for e in 0..kw {
                        let (w_lo, w_hi) = self.span(2, e);
                        let row = ((c * kt + a) * kh + b) * kw + e;
                        if w_hi <= w_lo {
                            continue;
                        }
                        for ot in t_lo..t_hi {
                            let it = ot * st + a - pt_;
                            for oh in h_lo..h_hi {
                                let ihh = oh * sh + b - ph_;
                                let col = (ot * ph + oh) * pw + w_lo;
                                let img = ((c * self.image[0] + it) * ih + ihh) * iw + w_lo * sw + e - pw_;
                                f(row, col, img, w_hi - w_lo, sw);
                            }
                        }
                    }
                }
            }
        }
    }

    /// Gathers `image` into a `rows x positions` column matrix.
    fn im2col<T: Element>(&self, image: &[T], col: &mut [T]) {
        let p = self.position_len();
        col.iter_mut().for_each(|v| *v = T::zero());
        self.for_each_segment(|row, c0, i0, len, step| {
            let dst = &mut col[row * p + c0..row * p + c0 + len];
            for (j, v) in dst.iter_mut().enumerate() {
                *v = image[i0 + j * step];
            }
        });
    }

    /// Scatter-adds a column matrix back into `image`.
    fn col2im<T: Element>(&self, col: &[T], image: &mut [T]) {
        let p = self.position_len();
        self.for_each_segment(|row, c0, i0, len, step| {
            let src = &col[row * p + c0..row * p + c0 + len];
            for (j, &v) in src.iter().enumerate() {
                let slot = &mut image[i0 + j * step];
                *slot = *slot + v;
            }
        });
    }
}

fn five_d<T: Element>(x: &Tensor<T>, what: &str) -> Result<[usize; 5]> {
    let s = x.shape();
    if s.len() != 5 {
        return Err(dim_err!("{what} must be rank 5 (N,C,T,H,W), got {s:?}"));
    }
    Ok([s[0], s[1], s[2], s[3], s[4]])
}

fn check_weight<T: Element>(
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    params: &ConvParams,
    c_in: usize,
    c_out: usize,
) -> Result<()> {
    let w = weight.shape();
    let k = params.kernel;
    let want = [c_in, c_out, k[0], k[1], k[2]];
    let ok = if params.transposed {
        w == want
    } else {
        w == [c_out, c_in, k[0], k[1], k[2]]
    };
    if !ok {
        return Err(dim_err!(
            "weight shape {w:?} does not fit {c_in} -> {c_out} channels with kernel {k:?} (transposed={})",
            params.transposed
        ));
    }
    if bias.shape() != [c_out] {
        return Err(dim_err!("bias shape {:?}, expected [{c_out}]", bias.shape()));
    }
    Ok(())
}

fn add_bias<T: Element>(out: &mut [T], bias: &[T], n: usize, spatial: usize) {
    let c = bias.len();
    for b in 0..n {
        for (ch, &bv) in bias.iter().enumerate() {
            for v in &mut out[(b * c + ch) * spatial..(b * c + ch + 1) * spatial] {
                *v = *v + bv;
            }
        }
    }
}

fn bias_grad<T: Element>(g: &[T], n: usize, c: usize, spatial: usize) -> Vec<T> {
    let mut gb = vec![T::zero(); c];
    for b in 0..n {
        for (ch, acc) in gb.iter_mut().enumerate() {
            *acc = g[(b * c + ch) * spatial..(b * c + ch + 1) * spatial]
                .iter()
                .fold(*acc, |s, &v| s + v);
        }
    }
    gb
}

/// 3D cross-correlation. `weight` is `[C_out, C_in, kt, kh, kw]`.
pub fn conv3d<T: Element>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    params: &ConvParams,
) -> Result<Tensor<T>> {
    if params.transposed {
        return Err(TensorError::Contract("conv3d called with transposed params".into()));
    }
    let [n, c_in, t, h, w] = five_d(input, "conv3d input")?;
    let c_out = weight.shape().first().copied().unwrap_or(0);
    check_weight(weight, bias, params, c_in, c_out)?;
    let out_ext = params.output_extents([t, h, w])?;
    let low = Lowering {
        channels: c_in,
        image: [t, h, w],
        positions: out_ext,
        kernel: params.kernel,
        stride: params.stride,
        padding: params.padding,
    };
    let (rows, p, img) = (low.rows(), low.position_len(), low.image_len());

    let mut out = vec![T::zero(); n * c_out * p];
    let mut col = vec![T::zero(); rows * p];
    let xv = input.values();
    for b in 0..n {
        low.im2col(&xv[b * c_in * img..(b + 1) * c_in * img], &mut col);
        T::gemm(c_out, rows, p, weight.values(), false, &col, false, T::zero(), &mut out[b * c_out * p..(b + 1) * c_out * p]);
    }
    add_bias(&mut out, bias.values(), n, p);

    let (x, wt) = (input.clone(), weight.clone());
    Ok(Tensor::from_op(
        vec![n, c_out, out_ext[0], out_ext[1], out_ext[2]],
        out,
        "conv3d",
        vec![input.clone(), weight.clone(), bias.clone()],
        Box::new(move |g, mask| {
            let xv = x.values();
            let mut gx = mask[0].then(|| vec![T::zero(); n * c_in * img]);
            let mut gw = mask[1].then(|| vec![T::zero(); c_out * rows]);
            let mut col = vec![T::zero(); rows * p];
            for b in 0..n {
                let gb = &g[b * c_out * p..(b + 1) * c_out * p];
                if let Some(gx) = gx.as_mut() {
                    T::gemm(rows, c_out, p, wt.values(), true, gb, false, T::zero(), &mut col);
                    low.col2im(&col, &mut gx[b * c_in * img..(b + 1) * c_in * img]);
                }
                if let Some(gw) = gw.as_mut() {
                    low.im2col(&xv[b * c_in * img..(b + 1) * c_in * img], &mut col);
                    T::gemm(c_out, p, rows, gb, false, &col, true, T::one(), gw);
                }
            }
            let gbias = mask[2].then(|| bias_grad(g, n, c_out, p));
            vec![gx, gw, gbias]
        }),
    ))
}

/// 3D transposed convolution. `weight` is `[C_in, C_out, kt, kh, kw]`.
pub fn deconv3d<T: Element>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    params: &ConvParams,
) -> Result<Tensor<T>> {
    if !params.transposed {
        return Err(TensorError::Contract("deconv3d called with non-transposed params".into()));
    }
    let [n, c_in, t, h, w] = five_d(input, "deconv3d input")?;
    let c_out = weight.shape().get(1).copied().unwrap_or(0);
    check_weight(weight, bias, params, c_in, c_out)?;
    let out_ext = params.output_extents([t, h, w])?;
    let low = Lowering {
        channels: c_out,
        image: out_ext,
        positions: [t, h, w],
        kernel: params.kernel,
        stride: params.stride,
        padding: params.padding,
    };
    let (rows, p, img) = (low.rows(), low.position_len(), low.image_len());

    let mut out = vec![T::zero(); n * c_out * img];
    let mut col = vec![T::zero(); rows * p];
    let yv = input.values();
    for b in 0..n {
        T::gemm(rows, c_in, p, weight.values(), true, &yv[b * c_in * p..(b + 1) * c_in * p], false, T::zero(), &mut col);
        low.col2im(&col, &mut out[b * c_out * img..(b + 1) * c_out * img]);
    }
    add_bias(&mut out, bias.values(), n, img);

    let (y, wt) = (input.clone(), weight.clone());
    Ok(Tensor::from_op(
        vec![n, c_out, out_ext[0], out_ext[1], out_ext[2]],
        out,
        "deconv3d",
        vec![input.clone(), weight.clone(), bias.clone()],
        Box::new(move |g, mask| {
            let yv = y.values();
            let mut gy = mask[0].then(|| vec![T::zero(); n * c_in * p]);
            let mut gw = mask[1].then(|| vec![T::zero(); c_in * rows]);
            if gy.is_some() || gw.is_some() {
                let mut col = vec![T::zero(); rows * p];
                for b in 0..n {
                    low.im2col(&g[b * c_out * img..(b + 1) * c_out * img], &mut col);
                    if let Some(gy) = gy.as_mut() {
                        T::gemm(c_in, rows, p, wt.values(), false, &col, false, T::zero(), &mut gy[b * c_in * p..(b + 1) * c_in * p]);
                    }
                    if let Some(gw) = gw.as_mut() {
                        T::gemm(c_in, p, rows, &yv[b * c_in * p..(b + 1) * c_in * p], false, &col, true, T::one(), gw);
                    }
                }
            }
            let gbias = mask[2].then(|| bias_grad(g, n, c_out, img));
            vec![gy, gw, gbias]
        }),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    /// Normalize with batch statistics; optionally fold them into the running stats.
    Train { update_running: bool },
    /// Normalize with the running statistics.
    Inference,
}

/// Per-channel batch-norm parameters and running statistics.
#[derive(Debug, Clone)]
pub struct BatchNormState<T: Element> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    /// Weight of the new batch statistic in the running average.
    pub momentum: f64,
    pub eps: f64,
}

impl<T: Element> BatchNormState<T> {
    pub fn new(channels: usize, momentum: f64, eps: f64) -> Self {
        BatchNormState {
            gamma: Tensor::ones(&[channels]),
            beta: Tensor::zeros(&[channels]),
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            momentum,
            eps,
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }

    pub fn forward(&mut self, input: &Tensor<T>, mode: NormMode) -> Result<Tensor<T>> {
        batch_norm3d(input, self, mode)
    }
}

/// Batch normalization over `(N, T, H, W)` per channel.
pub fn batch_norm3d<T: Element>(
    input: &Tensor<T>,
    state: &mut BatchNormState<T>,
    mode: NormMode,
) -> Result<Tensor<T>> {
    let [n, c, t, h, w] = five_d(input, "batch_norm3d input")?;
    if state.channels() != c || state.gamma.shape() != [c] || state.beta.shape() != [c] {
        return Err(dim_err!("batch norm has {} channels, input has {c}", state.channels()));
    }
    let spatial = t * h * w;
    let count = n * spatial;
    let xv = input.values();
    let eps = T::from_f64(state.eps);
    let at = move |b: usize, ch: usize| (b * c + ch) * spatial;

    let (mean, inv_std): (Vec<T>, Vec<T>) = match mode {
        NormMode::Train { update_running } => {
            if count < 2 {
                return Err(TensorError::Contract(format!(
                    "train-mode batch norm needs >= 2 values per channel, got {count}"
                )));
            }
            let m = T::from_f64(count as f64);
            let mut mean = vec![T::zero(); c];
            let mut var = vec![T::zero(); c];
            for ch in 0..c {
                let s = (0..n).fold(T::zero(), |acc, b| acc + pairwise_sum(&xv[at(b, ch)..at(b, ch) + spatial]));
                mean[ch] = s / m;
                let mu = mean[ch];
                let ss = (0..n).fold(T::zero(), |acc, b| {
                    let sq: Vec<T> = xv[at(b, ch)..at(b, ch) + spatial].iter().map(|&v| (v - mu) * (v - mu)).collect();
                    acc + pairwise_sum(&sq)
                });
                var[ch] = ss / m;
            }
            if update_running {
                let mom = T::from_f64(state.momentum);
                let unbias = T::from_f64(count as f64 / (count as f64 - 1.0));
                for ch in 0..c {
                    state.running_mean[ch] = (T::one() - mom) * state.running_mean[ch] + mom * mean[ch];
                    state.running_var[ch] = (T::one() - mom) * state.running_var[ch] + mom * var[ch] * unbias;
                }
            }
            let inv = var.iter().map(|&v| (v + eps).sqrt().recip()).collect();
            (mean, inv)
        }
        NormMode::Inference => (
            state.running_mean.clone(),
            state.running_var.iter().map(|&v| (v.max(T::zero()) + eps).sqrt().recip()).collect(),
        ),
    };

    let gamma = state.gamma.values();
    let beta = state.beta.values();
    let mut xhat = vec![T::zero(); xv.len()];
    let mut out = vec![T::zero(); xv.len()];
    for b in 0..n {
        for ch in 0..c {
            let r = at(b, ch)..at(b, ch) + spatial;
            for ((o, xh), &v) in out[r.clone()].iter_mut().zip(&mut xhat[r.clone()]).zip(&xv[r]) {
                *xh = (v - mean[ch]) * inv_std[ch];
                *o = gamma[ch] * *xh + beta[ch];
            }
        }
    }

    let gamma_t = state.gamma.clone();
    let batch_stats = matches!(mode, NormMode::Train { .. });
    Ok(Tensor::from_op(
        input.shape().to_vec(),
        out,
        "batch_norm3d",
        vec![input.clone(), state.gamma.clone(), state.beta.clone()],
        Box::new(move |g, mask| {
            let gamma = gamma_t.values();
            let mut sum_g = vec![T::zero(); c];
            let mut sum_gx = vec![T::zero(); c];
            for b in 0..n {
                for ch in 0..c {
                    let r = at(b, ch)..at(b, ch) + spatial;
                    let gx: Vec<T> = g[r.clone()].iter().zip(&xhat[r.clone()]).map(|(&gv, &xh)| gv * xh).collect();
                    sum_g[ch] = sum_g[ch] + pairwise_sum(&g[r]);
                    sum_gx[ch] = sum_gx[ch] + pairwise_sum(&gx);
                }
            }
            let gx = mask[0].then(|| {
                let mut gx = vec![T::zero(); g.len()];
                let m = T::from_f64(count as f64);
                for b in 0..n {
                    for ch in 0..c {
                        let r = at(b, ch)..at(b, ch) + spatial;
                        let k = gamma[ch] * inv_std[ch];
                        for ((o, &gv), &xh) in gx[r.clone()].iter_mut().zip(&g[r.clone()]).zip(&xhat[r]) {
                            *o = if batch_stats {
                                k * (gv - sum_g[ch] / m - xh * sum_gx[ch] / m)
                            } else {
                                k * gv
                            };
                        }
                    }
                }
                gx
            });
            vec![gx, mask[1].then(|| sum_gx.clone()), mask[2].then(|| sum_g.clone())]
        }),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    LeakyRelu,
    Relu,
    Tanh,
    Sigmoid,
    Identity,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::LeakyRelu => "leaky_relu",
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
            Activation::Identity => "identity",
        }
    }
}

pub fn activation<T: Element>(kind: Activation, input: &Tensor<T>) -> Tensor<T> {
    match kind {
        Activation::LeakyRelu => input.leaky_relu(T::from_f64(LEAKY_SLOPE)),
        Activation::Relu => input.relu(),
        Activation::Tanh => input.tanh(),
        Activation::Sigmoid => input.sigmoid(),
        Activation::Identity => input.clone(),
    }
}
