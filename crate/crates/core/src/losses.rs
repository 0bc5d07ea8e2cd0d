//! Adversarial, content and Gram-ranking objectives.

use std::fmt;

use log::debug;
use mdgan_tensor::{Element, Tensor};

use crate::config::{AdvForm, GramBatch, Reduction};
use crate::error::{Error, Result};

/// Scores are clamped to `[SCORE_EPS, 1 - SCORE_EPS]` before taking logs.
pub const SCORE_EPS: f64 = 1e-7;

fn clamp_scores<T: Element>(s: &Tensor<T>) -> Tensor<T> {
    let lo = T::from_f64(SCORE_EPS);
    let hi = T::one() - lo;
    let clipped = s.values().iter().filter(|&&v| v < lo || v > hi).count();
    if clipped > 0 {
        debug!("clamping {clipped} saturated discriminator scores");
    }
    s.clamp(lo, hi)
}

/// Discriminator loss `-mean[log d_real + log(1 - d_fake)]` and the generator's
/// adversarial term.
pub fn adversarial_terms<T: Element>(
    d_real: &Tensor<T>,
    d_fake: &Tensor<T>,
    form: AdvForm,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let fake = clamp_scores(d_fake);
    let log_one_minus_fake = fake.neg().add_scalar(T::one()).ln()?;
    let log_real = clamp_scores(d_real).ln()?;
    let loss_d = log_real.add(&log_one_minus_fake)?.mean_all().neg();
    let loss_g = generator_adversarial(&fake, form)?;
    Ok((loss_d, loss_g))
}

/// The generator's adversarial term alone, from the scores of generated clips.
pub fn generator_adversarial<T: Element>(d_fake: &Tensor<T>, form: AdvForm) -> Result<Tensor<T>> {
    let fake = clamp_scores(d_fake);
    Ok(match form {
        AdvForm::Saturating => fake.neg().add_scalar(T::one()).ln()?.mean_all(),
        AdvForm::NonSaturating => fake.ln()?.mean_all().neg(),
    })
}

/// L1 distance between a clip and its reconstruction.
pub fn content_loss<T: Element>(y: &Tensor<T>, y_hat: &Tensor<T>, reduction: Reduction) -> Result<Tensor<T>> {
    if y.shape() != y_hat.shape() {
        return Err(mdgan_tensor::TensorError::Dimension(format!(
            "content loss between {:?} and {:?}",
            y.shape(),
            y_hat.shape()
        ))
        .into());
    }
    let diff = y.sub(y_hat)?.abs();
    Ok(match reduction {
        Reduction::Mean => diff.mean_all(),
        Reduction::Sum => diff.sum_all(),
    })
}

/// Gram matrix of one feature layer.
#[derive(Clone)]
pub struct GramDescriptor<T: Element> {
    /// `[M, M]` with `M = C * T`.
    pub matrix: Tensor<T>,
    pub layer: String,
    /// Factor applied to the raw sum of outer products.
    pub scale: f64,
}

impl<T: Element> fmt::Debug for GramDescriptor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GramDescriptor")
            .field("layer", &self.layer)
            .field("shape", &self.matrix.shape())
            .field("scale", &self.scale)
            .finish()
    }
}

/// `1/(M*S) * sum_n H_n H_n^T` where `H_n` is sample `n` of the features
/// viewed as `[C*T, H*W]`.
pub fn gram<T: Element>(features: &Tensor<T>, layer: &str, batch: GramBatch) -> Result<GramDescriptor<T>> {
    let s = features.shape();
    if s.len() != 5 {
        return Err(mdgan_tensor::TensorError::Dimension(format!("gram expects [N,C,T,H,W], got {s:?}")).into());
    }
    let (n, m, sp) = (s[0], s[1] * s[2], s[3] * s[4]);
    let h = features.reshape(&[n, m, sp])?;
    let outer = h.matmul_batched(&h.transpose(1, 2)?)?;
    let mut scale = 1.0 / (m as f64 * sp as f64);
    if batch == GramBatch::Mean {
        scale /= n as f64;
    }
    let matrix = outer.sum(&[0])?.scale(T::from_f64(scale));
    Ok(GramDescriptor {
        matrix,
        layer: layer.to_string(),
        scale,
    })
}

/// `-log(e^{-d+} / (e^{-d+} + e^{-d-}))` with `d+ = |g2 - g|_1`, `d- = |g2 - g1|_1`,
/// evaluated as `softplus(d+ - d-)`.
pub fn rank_loss_layer<T: Element>(
    g1: &GramDescriptor<T>,
    g2: &GramDescriptor<T>,
    g: &GramDescriptor<T>,
) -> Result<Tensor<T>> {
    if g1.layer != g2.layer || g2.layer != g.layer {
        return Err(Error::config(format!(
            "rank loss over mismatched layers {}, {}, {}",
            g1.layer, g2.layer, g.layer
        )));
    }
    let d_plus = g2.matrix.sub(&g.matrix)?.abs().sum_all();
    let d_minus = g2.matrix.sub(&g1.matrix)?.abs().sum_all();
    Ok(d_plus.sub(&d_minus)?.softplus())
}

/// Sum of per-layer ranking losses over `(g(Y1), g(Y2), g(Y))` triples.
pub fn rank_loss_total<T: Element>(
    taps: &[(GramDescriptor<T>, GramDescriptor<T>, GramDescriptor<T>)],
) -> Result<Tensor<T>> {
    let mut iter = taps.iter();
    let (a, b, c) = iter
        .next()
        .ok_or_else(|| Error::config("ranking loss needs at least one feature layer"))?;
    let mut total = rank_loss_layer(a, b, c)?;
    for (a, b, c) in iter {
        total = total.add(&rank_loss_layer(a, b, c)?)?;
    }
    Ok(total)
}

/// Ranking loss straight from three lists of tapped features.
pub fn rank_loss_from_features<T: Element>(
    y1: &[(String, Tensor<T>)],
    y2: &[(String, Tensor<T>)],
    y: &[(String, Tensor<T>)],
    batch: GramBatch,
) -> Result<Tensor<T>> {
    if y1.len() != y2.len() || y2.len() != y.len() {
        return Err(Error::config("feature lists differ in length"));
    }
    let triples = y1
        .iter()
        .zip(y2)
        .zip(y)
        .map(|(((n1, f1), (n2, f2)), (n, f))| Ok((gram(f1, n1, batch)?, gram(f2, n2, batch)?, gram(f, n, batch)?)))
        .collect::<Result<Vec<_>>>()?;
    rank_loss_total(&triples)
}

/// Generator objective: adversarial plus content, plus `lambda * rank` when a
/// ranking term is present. With `lambda = 0` the result is the two-term sum.
pub fn generator_objective<T: Element>(
    adv_g: &Tensor<T>,
    content: &Tensor<T>,
    rank: Option<&Tensor<T>>,
    lambda: f64,
) -> Result<Tensor<T>> {
    let base = adv_g.add(content)?;
    match rank {
        Some(r) if lambda != 0.0 => Ok(base.add(&r.scale(T::from_f64(lambda)))?),
        _ => Ok(base),
    }
}

/// Discriminator loss to minimize: the negated ascent objective, i.e.
/// `adv_d - lambda * rank`.
pub fn discriminator_objective<T: Element>(adv_d: &Tensor<T>, rank: Option<&Tensor<T>>, lambda: f64) -> Result<Tensor<T>> {
    match rank {
        Some(r) if lambda != 0.0 => Ok(adv_d.sub(&r.scale(T::from_f64(lambda)))?),
        _ => Ok(adv_d.clone()),
    }
}

/// Scalar loss terms of one iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub iter: u64,
    pub adv_d: f64,
    pub adv_g: f64,
    pub content: f64,
    /// Generator-side ranking term.
    pub rank: f64,
    pub total_g: f64,
    pub total_d: f64,
    /// Ranking term seen by the discriminator update.
    pub rank_d: f64,
    pub lambda: f64,
}

pub const LOSS_CSV_HEADER: &str = "iter,adv_d,adv_g,content,rank,total_g,total_d";

impl LossReport {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.iter, self.adv_d, self.adv_g, self.content, self.rank, self.total_g, self.total_d
        )
    }

    pub fn progress_line(&self) -> String {
        format!(
            "iter={} adv_d={:.6} adv_g={:.6} content={:.6} rank={:.6}",
            self.iter, self.adv_d, self.adv_g, self.content, self.rank
        )
    }

    pub fn all_finite(&self) -> bool {
        [self.adv_d, self.adv_g, self.content, self.rank, self.total_g, self.total_d, self.rank_d]
            .iter()
            .all(|v| v.is_finite())
    }

    /// Whether the totals equal the weighted sums of their parts within `rel`.
    pub fn is_consistent(&self, rel: f64) -> bool {
        let close = |a: f64, b: f64| (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-12);
        close(self.total_g, self.adv_g + self.content + self.lambda * self.rank)
            && close(self.total_d, self.adv_d - self.lambda * self.rank_d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn adversarial_at_half() {
        let half = t(&[3, 1], &[0.5; 3]);
        let (d, g) = adversarial_terms(&half, &half, AdvForm::Saturating).unwrap();
        assert!((d.item().unwrap() - 2.0 * 2f64.ln()).abs() < 1e-12);
        assert!((g.item().unwrap() + 2f64.ln()).abs() < 1e-12);
        let ns = generator_adversarial(&half, AdvForm::NonSaturating).unwrap();
        assert!((ns.item().unwrap() - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn adversarial_saturated_scores_stay_finite() {
        let (d, g) = adversarial_terms(&t(&[2, 1], &[1.0, 1.0]), &t(&[2, 1], &[0.0, 1.0]), AdvForm::Saturating).unwrap();
        assert!(d.item().unwrap().is_finite() && g.item().unwrap().is_finite());
        let (d, _) = adversarial_terms(&t(&[1, 1], &[1.0 - 1e-12]), &t(&[1, 1], &[1e-12]), AdvForm::Saturating).unwrap();
        assert!(d.item().unwrap() < 1e-6);
    }

    #[test]
    fn content_cases() {
        let a = t(&[2, 2], &[0.1, 0.2, 0.3, 0.4]);
        assert_eq!(content_loss(&a, &a, Reduction::Mean).unwrap().item().unwrap(), 0.0);
        let b = a.add_scalar(0.5);
        assert!((content_loss(&a, &b, Reduction::Mean).unwrap().item().unwrap() - 0.5).abs() < 1e-15);
        assert!((content_loss(&a, &b, Reduction::Sum).unwrap().item().unwrap() - 2.0).abs() < 1e-15);
        assert!(content_loss(&a, &t(&[4], &[0.0; 4]), Reduction::Mean).is_err());
    }

    #[test]
    fn gram_all_ones_is_half() {
        let g = gram(&Tensor::<f64>::ones(&[1, 2, 1, 1, 3]), "conv1", GramBatch::Sum).unwrap();
        assert_eq!(g.matrix.shape(), [2, 2]);
        assert_eq!(g.matrix.to_vec(), vec![0.5; 4]);
        let z = gram(&Tensor::<f64>::zeros(&[2, 2, 2, 2, 2]), "conv1", GramBatch::Sum).unwrap();
        assert!(z.matrix.values().iter().all(|&v| v == 0.0));
        let m = gram(&Tensor::<f64>::ones(&[2, 2, 1, 1, 3]), "conv1", GramBatch::Mean).unwrap();
        assert_eq!(m.matrix.to_vec(), vec![0.5; 4]);
    }

    fn desc(v: &[f64]) -> GramDescriptor<f64> {
        GramDescriptor {
            matrix: t(&[v.len()], v),
            layer: "conv1".into(),
            scale: 1.0,
        }
    }

    #[test]
    fn rank_layer_closed_forms() {
        let g = desc(&[0.0]);
        // d+ = d- = 1
        let eq = rank_loss_layer(&desc(&[2.0]), &desc(&[1.0]), &desc(&[0.0])).unwrap();
        assert!((eq.item().unwrap() - 2f64.ln()).abs() < 1e-12);
        // d+ = 1, d- = 0
        let v = rank_loss_layer(&desc(&[1.0]), &desc(&[1.0]), &g).unwrap().item().unwrap();
        assert!((v - (1.0 + 1f64.exp()).ln()).abs() < 1e-12);
        // d+ = 0, d- = 50
        let v = rank_loss_layer(&desc(&[50.0]), &g, &g).unwrap().item().unwrap();
        assert!(v >= 0.0 && (v - (-50f64).exp()).abs() < 1e-30);
        let v32 = rank_loss_layer(
            &GramDescriptor { matrix: Tensor::<f32>::scalar(50.0), layer: "a".into(), scale: 1.0 },
            &GramDescriptor { matrix: Tensor::<f32>::scalar(0.0), layer: "a".into(), scale: 1.0 },
            &GramDescriptor { matrix: Tensor::<f32>::scalar(0.0), layer: "a".into(), scale: 1.0 },
        )
        .unwrap()
        .item()
        .unwrap();
        assert!(v32.is_finite() && v32 >= 0.0);
        let mut other = desc(&[0.0]);
        other.layer = "conv3".into();
        assert!(rank_loss_layer(&g, &g, &other).is_err());
    }

    #[test]
    fn rank_total_additive() {
        let tri = (desc(&[1.0, 2.0]), desc(&[0.5, 0.0]), desc(&[0.2, 0.1]));
        let one = rank_loss_total(&[tri.clone()]).unwrap().item().unwrap();
        assert_eq!(one, rank_loss_layer(&tri.0, &tri.1, &tri.2).unwrap().item().unwrap());
        let two = rank_loss_total(&[tri.clone(), tri]).unwrap().item().unwrap();
        assert_eq!(two, 2.0 * one);
        assert!(rank_loss_total::<f64>(&[]).is_err());
    }

    #[test]
    fn objectives() {
        let (a, c, r) = (t(&[], &[-0.7]), t(&[], &[0.3]), t(&[], &[0.9]));
        let s1 = generator_objective(&a, &c, None, 1.0).unwrap().item().unwrap();
        let s2_zero = generator_objective(&a, &c, Some(&r), 0.0).unwrap().item().unwrap();
        assert_eq!(s1.to_bits(), s2_zero.to_bits());
        let s2 = generator_objective(&a, &c, Some(&r), 1.0).unwrap().item().unwrap();
        assert!((s2 - (-0.7 + 0.3 + 0.9)).abs() < 1e-15);
        let d = discriminator_objective(&c, Some(&r), 2.0).unwrap().item().unwrap();
        assert!((d - (0.3 - 1.8)).abs() < 1e-15);
    }

    #[test]
    fn report_format() {
        let r = LossReport {
            iter: 3,
            adv_d: 1.5,
            adv_g: -0.5,
            content: 0.25,
            rank: 0.75,
            total_g: 0.5,
            total_d: 0.75,
            rank_d: 0.75,
            lambda: 1.0,
        };
        assert_eq!(r.csv_row(), "3,1.5,-0.5,0.25,0.75,0.5,0.75");
        assert!(r.is_consistent(1e-6));
        assert!(r.progress_line().starts_with("iter=3 adv_d=1.500000 adv_g=-0.500000"));
        assert_eq!(LOSS_CSV_HEADER.split(',').count(), r.csv_row().split(',').count());
    }
}
