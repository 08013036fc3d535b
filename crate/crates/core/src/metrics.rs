//! Reconstruction quality metrics and the blended fine-tuning loss.
//!
//! [`ssim`] follows the classic windowed formulation: an 11x11 Gaussian
//! window (sigma 1.5) slides over every fully-contained position, local
//! means/variances/covariance are computed under the window weights, and
//! the per-window scores are averaged. Both inputs are first normalized
//! with one shared min/max so the stabilizing constants (`K1 = 0.01`,
//! `K2 = 0.03` on a unit dynamic range) mean the same thing for every map
//! pair.
//!
//! [`finetune_loss`] blends two batches: with weight `lambda` on pairs from
//! the synthesized (shallow-leak) set and `1 - lambda` on pairs from the
//! original set, each batch contributing its mean MAE plus mean MSE.

use thiserror::Error;

use crate::model::{geometry_mismatch, Grid, ModelError, VelocityMap};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("maps are {depth}x{width}; SSIM needs at least {window}x{window}")]
    WindowTooLarge {
        depth: usize,
        width: usize,
        window: usize,
    },
    #[error("normalization range [{min}, {max}] is degenerate")]
    DegenerateRange { min: f32, max: f32 },
    #[error("batch lengths differ: {left} predictions vs {right} references")]
    LengthMismatch { left: usize, right: usize },
    #[error("the {which} batch is empty but its loss weight is nonzero")]
    EmptyBatch { which: &'static str },
    #[error("lambda must lie in [0, 1], got {0}")]
    BadLambda(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub ssim: f64,
    pub mae: f64,
    pub mse: f64,
}

/// Blend weight for [`finetune_loss`]: `lambda` on the synthesized batch,
/// `1 - lambda` on the original batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda: f64,
}

impl LossWeights {
    pub fn new(lambda: f64) -> Result<Self, MetricsError> {
        if !(lambda.is_finite() && (0.0..=1.0).contains(&lambda)) {
            return Err(MetricsError::BadLambda(lambda));
        }
        Ok(LossWeights { lambda })
    }
}

fn check_pair(a: &VelocityMap, b: &VelocityMap) -> Result<(), MetricsError> {
    if !a.same_geometry(b) {
        return Err(MetricsError::Model(geometry_mismatch(a, b)));
    }
    Ok(())
}

/// Mean absolute difference, in map units.
pub fn mae(a: &VelocityMap, b: &VelocityMap) -> Result<f64, MetricsError> {
    check_pair(a, b)?;
    let sum: f64 = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(&x, &y)| (x as f64 - y as f64).abs())
        .sum();
    Ok(sum / a.values().len() as f64)
}

/// Mean squared difference, in map units squared.
pub fn mse(a: &VelocityMap, b: &VelocityMap) -> Result<f64, MetricsError> {
    check_pair(a, b)?;
    let sum: f64 = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(sum / a.values().len() as f64)
}

/// The 1D Gaussian window, normalized to sum 1 (the 2D window is its outer
/// product, so it also sums to 1).
fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let mid = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - mid;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Horizontal "valid" convolution: each output row has `w - SSIM_WINDOW + 1`
/// entries.
fn convolve_rows(src: &[f64], d: usize, w: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - SSIM_WINDOW + 1;
    let mut out = vec![0.0; d * ow];
    for r in 0..d {
        let row = &src[r * w..(r + 1) * w];
        for c in 0..ow {
            let mut acc = 0.0;
            for (j, &kj) in k.iter().enumerate() {
                acc += kj * row[c + j];
            }
            out[r * ow + c] = acc;
        }
    }
    out
}

/// Vertical "valid" convolution over the output of [`convolve_rows`].
fn convolve_cols(src: &[f64], d: usize, w: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let od = d - SSIM_WINDOW + 1;
    let mut out = vec![0.0; od * w];
    for r in 0..od {
        for c in 0..w {
            let mut acc = 0.0;
            for (j, &kj) in k.iter().enumerate() {
                acc += kj * src[(r + j) * w + c];
            }
            out[r * w + c] = acc;
        }
    }
    out
}

fn windowed_means(src: &[f64], d: usize, w: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    convolve_cols(&convolve_rows(src, d, w, k), d, w - SSIM_WINDOW + 1, k)
}

/// Structural similarity between two maps sharing one normalization range.
///
/// Both maps are first mapped through `(v - norm_min) / (norm_max -
/// norm_min)`; the windowed statistics then run on the normalized fields.
/// The result is the mean per-window score, clamped to `[-1, 1]`.
pub fn ssim(
    a: &VelocityMap,
    b: &VelocityMap,
    norm_min: f32,
    norm_max: f32,
) -> Result<f64, MetricsError> {
    check_pair(a, b)?;
    let (d, w) = (a.depth_cells(), a.width_cells());
    if d < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(MetricsError::WindowTooLarge {
            depth: d,
            width: w,
            window: SSIM_WINDOW,
        });
    }
    if !(norm_min.is_finite() && norm_max.is_finite() && norm_min < norm_max) {
        return Err(MetricsError::DegenerateRange {
            min: norm_min,
            max: norm_max,
        });
    }
    let lo = norm_min as f64;
    let span = norm_max as f64 - norm_min as f64;
    let normalize =
        |m: &VelocityMap| -> Vec<f64> { m.values().iter().map(|&v| (v as f64 - lo) / span).collect() };
    let na = normalize(a);
    let nb = normalize(b);
    let aa: Vec<f64> = na.iter().map(|&x| x * x).collect();
    let bb: Vec<f64> = nb.iter().map(|&x| x * x).collect();
    let ab: Vec<f64> = na.iter().zip(&nb).map(|(&x, &y)| x * y).collect();

    let k = gaussian_window();
    let mu_a = windowed_means(&na, d, w, &k);
    let mu_b = windowed_means(&nb, d, w, &k);
    let mu_aa = windowed_means(&aa, d, w, &k);
    let mu_bb = windowed_means(&bb, d, w, &k);
    let mu_ab = windowed_means(&ab, d, w, &k);

    let c1 = (SSIM_K1 * 1.0f64).powi(2);
    let c2 = (SSIM_K2 * 1.0f64).powi(2);
    let mut total = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = mu_aa[i] - ma * ma;
        let vb = mu_bb[i] - mb * mb;
        let cov = mu_ab[i] - ma * mb;
        let score = ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
            / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        total += score;
    }
    Ok((total / mu_a.len() as f64).clamp(-1.0, 1.0))
}

/// SSIM, MAE, and MSE for one pair. MAE/MSE run on raw values; only SSIM
/// sees the normalization.
pub fn compare(
    a: &VelocityMap,
    b: &VelocityMap,
    norm_min: f32,
    norm_max: f32,
) -> Result<MetricReport, MetricsError> {
    Ok(MetricReport {
        ssim: ssim(a, b, norm_min, norm_max)?,
        mae: mae(a, b)?,
        mse: mse(a, b)?,
    })
}

fn batch_term(
    pred: &[VelocityMap],
    truth: &[VelocityMap],
    which: &'static str,
    weight: f64,
) -> Result<f64, MetricsError> {
    if pred.len() != truth.len() {
        return Err(MetricsError::LengthMismatch {
            left: pred.len(),
            right: truth.len(),
        });
    }
    if pred.is_empty() {
        if weight != 0.0 {
            return Err(MetricsError::EmptyBatch { which });
        }
        return Ok(0.0);
    }
    let mut l1 = 0.0;
    let mut l2 = 0.0;
    for (p, t) in pred.iter().zip(truth) {
        l1 += mae(p, t)?;
        l2 += mse(p, t)?;
    }
    let n = pred.len() as f64;
    Ok(l1 / n + l2 / n)
}

/// Blended fine-tuning loss over two batches of prediction/reference pairs:
///
/// ```text
/// loss = lambda     * (mean MAE + mean MSE over the synthesized batch)
///      + (1-lambda) * (mean MAE + mean MSE over the original batch)
/// ```
///
/// A batch may be empty only when its weight is exactly zero.
pub fn finetune_loss(
    pred_synth: &[VelocityMap],
    truth_synth: &[VelocityMap],
    pred_orig: &[VelocityMap],
    truth_orig: &[VelocityMap],
    weights: &LossWeights,
) -> Result<f64, MetricsError> {
    let w = LossWeights::new(weights.lambda)?; // re-validate defensively
    let lam = w.lambda;
    let synth = batch_term(pred_synth, truth_synth, "synthesized", lam)?;
    let orig = batch_term(pred_orig, truth_orig, "original", 1.0 - lam)?;
    Ok(lam * synth + (1.0 - lam) * orig)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn map_from(values: Vec<f32>, d: usize, w: usize) -> VelocityMap {
        VelocityMap::new(d, w, 10.0, values).unwrap()
    }

    fn noise_map(seed: u64, d: usize, w: usize) -> VelocityMap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        map_from(
            (0..d * w).map(|_| rng.random_range(1000.0..3000.0)).collect(),
            d,
            w,
        )
    }

    #[test]
    fn mae_mse_match_naive_loops() {
        let a = map_from(vec![1.0, 2.0, 3.0, 4.0], 2, 2);
        let b = map_from(vec![2.0, 2.0, 1.0, 8.0], 2, 2);
        // |1-2| + |2-2| + |3-1| + |4-8| = 7; squares: 1 + 0 + 4 + 16 = 21.
        assert_eq!(mae(&a, &b).unwrap(), 7.0 / 4.0);
        assert_eq!(mse(&a, &b).unwrap(), 21.0 / 4.0);
        assert_eq!(mae(&a, &a).unwrap(), 0.0);
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn metrics_reject_mismatched_geometry() {
        let a = map_from(vec![1.0; 4], 2, 2);
        let b = map_from(vec![1.0; 6], 2, 3);
        assert!(mae(&a, &b).is_err());
        assert!(mse(&a, &b).is_err());
        assert!(ssim(&a, &b, 0.0, 1.0).is_err());
    }

    #[test]
    fn ssim_of_a_map_with_itself_is_exactly_one() {
        let m = noise_map(7, 16, 20);
        assert_eq!(ssim(&m, &m, 300.0, 6000.0).unwrap(), 1.0);
    }

    #[test]
    fn ssim_requires_a_full_window_and_a_real_range() {
        let small = noise_map(1, 10, 30);
        let other = noise_map(2, 10, 30);
        assert!(matches!(
            ssim(&small, &other, 0.0, 1.0),
            Err(MetricsError::WindowTooLarge { depth: 10, .. })
        ));
        let a = noise_map(3, 12, 12);
        let b = noise_map(4, 12, 12);
        assert!(matches!(
            ssim(&a, &b, 5.0, 5.0),
            Err(MetricsError::DegenerateRange { .. })
        ));
        assert!(ssim(&a, &b, 5.0, 4.0).is_err());
    }

    #[test]
    fn ssim_drops_as_maps_decorrelate() {
        let base = noise_map(10, 24, 24);
        // Small perturbation: high similarity. Independent noise: low.
        let nudged_vals: Vec<f32> = base.values().iter().map(|&v| v + 3.0).collect();
        let nudged = map_from(nudged_vals, 24, 24);
        let other = noise_map(11, 24, 24);
        let s_close = ssim(&base, &nudged, 1000.0, 3000.0).unwrap();
        let s_far = ssim(&base, &other, 1000.0, 3000.0).unwrap();
        assert!(s_close > 0.9, "nudged copy scores {s_close}");
        assert!(s_far < s_close);
        assert!(s_far < 0.2, "independent noise scores {s_far}");
    }

    #[test]
    fn ssim_window_sums_to_one() {
        let k = gaussian_window();
        let sum: f64 = k.iter().sum();
        assert!((sum - 1.0).abs() < 1e-15);
        assert!(k[5] > k[4] && k[4] > k[3], "peaked at the center");
        assert_eq!(k[0], k[10], "symmetric");
    }

    #[test]
    fn finetune_loss_boundary_weights() {
        let a = vec![noise_map(1, 12, 12)];
        let b = vec![noise_map(2, 12, 12)];
        let c = vec![noise_map(3, 12, 12)];
        let d = vec![noise_map(4, 12, 12)];
        let term = |p: &[VelocityMap], t: &[VelocityMap]| {
            mae(&p[0], &t[0]).unwrap() + mse(&p[0], &t[0]).unwrap()
        };
        let l1 = finetune_loss(&a, &b, &c, &d, &LossWeights { lambda: 1.0 }).unwrap();
        assert_eq!(l1, term(&a, &b) * 1.0 + 0.0);
        let l0 = finetune_loss(&a, &b, &c, &d, &LossWeights { lambda: 0.0 }).unwrap();
        assert_eq!(l0, term(&c, &d));
        let lmid = finetune_loss(&a, &b, &c, &d, &LossWeights { lambda: 0.25 }).unwrap();
        let expected = 0.25 * term(&a, &b) + 0.75 * term(&c, &d);
        assert!((lmid - expected).abs() < 1e-12);
    }

    #[test]
    fn finetune_loss_empty_batches() {
        let a = vec![noise_map(1, 12, 12)];
        let b = vec![noise_map(2, 12, 12)];
        // Zero-weight empty batch is fine.
        let l = finetune_loss(&a, &b, &[], &[], &LossWeights { lambda: 1.0 }).unwrap();
        assert!(l > 0.0);
        // Weighted empty batch is an error.
        assert!(matches!(
            finetune_loss(&a, &b, &[], &[], &LossWeights { lambda: 0.5 }),
            Err(MetricsError::EmptyBatch { which: "original" })
        ));
        assert!(matches!(
            finetune_loss(&[], &[], &a, &b, &LossWeights { lambda: 0.5 }),
            Err(MetricsError::EmptyBatch { which: "synthesized" })
        ));
        // Mismatched pair counts are rejected.
        assert!(matches!(
            finetune_loss(&a, &[], &a, &b, &LossWeights { lambda: 0.5 }),
            Err(MetricsError::LengthMismatch { .. })
        ));
        // Out-of-range lambda is rejected.
        assert!(matches!(
            finetune_loss(&a, &b, &a, &b, &LossWeights { lambda: 1.5 }),
            Err(MetricsError::BadLambda(_))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn prop_ssim_symmetric_and_bounded(seed_a in 0u64..500, seed_b in 500u64..1000) {
            let a = noise_map(seed_a, 14, 14);
            let b = noise_map(seed_b, 14, 14);
            let ab = ssim(&a, &b, 1000.0, 3000.0).unwrap();
            let ba = ssim(&b, &a, 1000.0, 3000.0).unwrap();
            prop_assert!((-1.0..=1.0).contains(&ab));
            prop_assert!((ab - ba).abs() < 1e-12);
        }

        #[test]
        fn prop_mae_mse_nonnegative_and_symmetric(seed_a in 0u64..500, seed_b in 500u64..1000) {
            let a = noise_map(seed_a, 6, 9);
            let b = noise_map(seed_b, 6, 9);
            let m1 = mae(&a, &b).unwrap();
            let m2 = mse(&a, &b).unwrap();
            prop_assert!(m1 >= 0.0 && m2 >= 0.0);
            prop_assert_eq!(m1, mae(&b, &a).unwrap());
            prop_assert_eq!(m2, mse(&b, &a).unwrap());
        }
    }
}
