//! MSE, PSNR and SSIM on clips mapped to `[0, 1]`.

use mdgan_tensor::{Element, Tensor, TensorError};

use crate::error::{Error, Result};

pub const PSNR_CAP_DB: f64 = 100.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Maps `[-1, 1]` samples to `[0, 1]`, clamping drift.
pub fn to_unit<T: Element>(video: &Tensor<T>) -> Vec<f64> {
    video.values().iter().map(|v| ((v.as_f64() + 1.0) / 2.0).clamp(0.0, 1.0)).collect()
}

fn same_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() || a.is_empty() {
        return Err(TensorError::Dimension(format!("metric inputs hold {} and {} values", a.len(), b.len())).into());
    }
    Ok(())
}

pub fn mse(a: &[f64], b: &[f64]) -> Result<f64> {
    same_len(a, b)?;
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64)
}

/// `10 log10(1 / mse)` for unit-range data, capped for identical inputs.
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP_DB;
    }
    (10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB)
}

pub fn psnr(a: &[f64], b: &[f64]) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

// Valid-mode separable Gaussian filter of an h x w plane.
fn filter(plane: &[f64], h: usize, w: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Sum and count of the SSIM map of one plane pair.
fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize, k: &[f64; SSIM_WINDOW]) -> (f64, usize) {
    let c1 = (SSIM_K1 * 1.0).powi(2);
    let c2 = (SSIM_K2 * 1.0).powi(2);
    let prod = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<f64>>();
    let mu_a = filter(a, h, w, k);
    let mu_b = filter(b, h, w, k);
    let e_aa = filter(&prod(a, a), h, w, k);
    let e_bb = filter(&prod(b, b), h, w, k);
    let e_ab = filter(&prod(a, b), h, w, k);
    let mut sum = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = e_aa[i] - ma * ma;
        let vb = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        let num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
        let den = (ma * ma + mb * mb + c1) * (va + vb + c2);
        sum += num / den;
    }
    (sum, mu_a.len())
}

/// Mean SSIM over every plane of a `[C, T, H, W]` (or any leading-axes) block.
pub fn ssim(a: &[f64], b: &[f64], h: usize, w: usize) -> Result<f64> {
    same_len(a, b)?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::config(format!("SSIM needs frames of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}")));
    }
    if a.len() % (h * w) != 0 {
        return Err(TensorError::Dimension(format!("{} values do not tile {h}x{w} planes", a.len())).into());
    }
    let k = gaussian_taps();
    let (mut total, mut count) = (0.0, 0usize);
    for (pa, pb) in a.chunks_exact(h * w).zip(b.chunks_exact(h * w)) {
        let (s, n) = ssim_plane(pa, pb, h, w, &k);
        total += s;
        count += n;
    }
    Ok(total / count as f64)
}

/// All three metrics for a pair of `[-1, 1]` clips of shape `[.., H, W]`.
pub fn clip_metrics<T: Element>(generated: &Tensor<T>, truth: &Tensor<T>) -> Result<(f64, f64, f64)> {
    if generated.shape() != truth.shape() || generated.rank() < 2 {
        return Err(TensorError::Dimension(format!(
            "metric inputs {:?} and {:?}",
            generated.shape(),
            truth.shape()
        ))
        .into());
    }
    let s = generated.shape();
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    let (a, b) = (to_unit(generated), to_unit(truth));
    let m = mse(&a, &b)?;
    Ok((m, psnr_from_mse(m), ssim(&a, &b, h, w)?))
}
