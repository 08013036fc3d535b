//! Distribution alignment via thresholded empirical-CDF quantile mapping.
//!
//! A relocated leak carries the velocity statistics of the depth it came
//! from. To make it plausible at its new depth, every participating cell's
//! value is pushed through a source-to-target quantile map: find where the
//! value sits in the source distribution, then take the value at the same
//! quantile of the target distribution.
//!
//! Both distributions are *thresholded* empirical CDFs: only samples
//! strictly above a floor participate, and quantiles are computed over the
//! retained samples alone (probability renormalized to the retained mass).
//! Between sample points the map interpolates linearly on fractional sample
//! index, so with `n` retained source samples and `k` target samples, a
//! value at fractional source index `u` maps to fractional target index
//! `u * (k - 1) / (n - 1)`. Exact ties resolve to the lowest matching index,
//! which keeps the map deterministic in the presence of duplicates.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::model::{Grid, Layer, LayerProfile, ModelError, Perturbation, VelocityMap};

#[derive(Debug, Error)]
pub enum AlignError {
    #[error("no samples strictly above the threshold {threshold}")]
    NoMassAboveThreshold { threshold: f64 },
    #[error("value {value} is at or below the source threshold {threshold}")]
    BelowThreshold { value: f64, threshold: f64 },
    #[error("samples and thresholds must be finite")]
    NonFinite,
    #[error("{path}, line {line}: {msg}")]
    MalformedCdf {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// An empirical CDF over the samples strictly above `threshold`, with
/// probability renormalized to the retained mass.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalCdf {
    /// Retained samples, ascending. Duplicates are kept: they carry mass.
    samples: Vec<f64>,
    threshold: f64,
}

impl EmpiricalCdf {
    /// Build from raw samples, discarding everything at or below
    /// `threshold`. Errs if nothing survives or any input is non-finite.
    pub fn from_samples(samples: &[f64], threshold: f64) -> Result<Self, AlignError> {
        if !threshold.is_finite() {
            return Err(AlignError::NonFinite);
        }
        let mut retained = Vec::with_capacity(samples.len());
        for &s in samples {
            if !s.is_finite() {
                return Err(AlignError::NonFinite);
            }
            if s > threshold {
                retained.push(s);
            }
        }
        if retained.is_empty() {
            return Err(AlignError::NoMassAboveThreshold { threshold });
        }
        retained.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Ok(EmpiricalCdf {
            samples: retained,
            threshold,
        })
    }

    /// Fraction of retained samples at or below `x` (a right-continuous
    /// step function; 0 at the threshold, 1 from the largest sample on).
    pub fn eval(&self, x: f64) -> f64 {
        let count = self.samples.partition_point(|&v| v <= x);
        count as f64 / self.samples.len() as f64
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.samples[0]
    }

    pub fn max(&self) -> f64 {
        *self.samples.last().unwrap()
    }

    /// Write as CSV: a `threshold,<value>` header line, then one sample per
    /// line. Values print as shortest round-tripping decimals, so
    /// write/read is lossless.
    pub fn write_csv(&self, path: &Path) -> Result<(), AlignError> {
        use std::fmt::Write as _;
        let mut s = String::new();
        let _ = writeln!(s, "threshold,{}", self.threshold);
        for v in &self.samples {
            let _ = writeln!(s, "{v}");
        }
        std::fs::write(path, s).map_err(|e| AlignError::Io {
            path: path.to_path_buf(),
            source: e,
        })
    }

    /// Read the CSV form written by [`EmpiricalCdf::write_csv`]. Samples at
    /// or below the declared threshold are treated as corruption, not
    /// silently dropped.
    pub fn read_csv(path: &Path) -> Result<Self, AlignError> {
        let malformed = |line: usize, msg: String| AlignError::MalformedCdf {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let text = std::fs::read_to_string(path).map_err(|e| AlignError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let mut threshold: Option<f64> = None;
        let mut samples = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let lineno = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if threshold.is_none() {
                let rest = line.strip_prefix("threshold,").ok_or_else(|| {
                    malformed(lineno, "expected 'threshold,<value>' header".into())
                })?;
                let t: f64 = rest.trim().parse().map_err(|_| {
                    malformed(lineno, format!("cannot parse threshold {:?}", rest.trim()))
                })?;
                threshold = Some(t);
                continue;
            }
            let v: f64 = line
                .parse()
                .map_err(|_| malformed(lineno, format!("cannot parse sample {line:?}")))?;
            samples.push(v);
        }
        let threshold =
            threshold.ok_or_else(|| malformed(1, "missing 'threshold,<value>' header".into()))?;
        let n = samples.len();
        let cdf = Self::from_samples(&samples, threshold)?;
        if cdf.len() != n {
            return Err(malformed(
                1,
                format!(
                    "{} sample(s) at or below the declared threshold {}",
                    n - cdf.len(),
                    threshold
                ),
            ));
        }
        Ok(cdf)
    }
}

/// Free-function alias for [`EmpiricalCdf::from_samples`].
pub fn build_cdf(samples: &[f64], threshold: f64) -> Result<EmpiricalCdf, AlignError> {
    EmpiricalCdf::from_samples(samples, threshold)
}

/// Quantile-map one value from `source` onto `target`.
///
/// Values at or below the source threshold are a caller error. Values
/// outside the source sample range clamp to the target extremes; in
/// between, the fractional source index is rescaled into target index space
/// and the result interpolated linearly between the bracketing target
/// samples.
pub fn map_value(m: f64, source: &EmpiricalCdf, target: &EmpiricalCdf) -> Result<f64, AlignError> {
    if !m.is_finite() {
        return Err(AlignError::NonFinite);
    }
    if m <= source.threshold {
        return Err(AlignError::BelowThreshold {
            value: m,
            threshold: source.threshold,
        });
    }
    let s = &source.samples;
    let t = &target.samples;
    let (n, k) = (s.len(), t.len());
    if m <= s[0] {
        return Ok(t[0]);
    }
    if m >= s[n - 1] {
        return Ok(t[k - 1]);
    }
    // Here s[0] < m < s[n-1], so n >= 2. Fractional source index: exact
    // ties take the lowest matching sample; otherwise interpolate between
    // the two distinct neighbors bracketing m.
    let first_ge = s.partition_point(|&v| v < m);
    let u = if s[first_ge] == m {
        first_ge as f64
    } else {
        let i = first_ge - 1;
        i as f64 + (m - s[i]) / (s[first_ge] - s[i])
    };
    if k == 1 {
        return Ok(t[0]);
    }
    let w = u * (k - 1) as f64 / (n - 1) as f64;
    let j = (w.floor() as usize).min(k - 2);
    Ok(t[j] + (w - j as f64) * (t[j + 1] - t[j]))
}

/// How the per-cell source distribution is formed when aligning a moved
/// perturbation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlignMode {
    /// Map absolute velocities: the source sample for a cell is
    /// `baseline - perturbation` and targets hold plausible layer
    /// velocities. The aligned perturbation is recovered as
    /// `baseline - mapped`.
    Absolute,
    /// Map perturbation magnitudes directly; targets hold plausible
    /// velocity *drops* for the layer.
    Delta,
}

/// Per-layer targets and participation thresholds for
/// [`align_perturbation`].
#[derive(Debug, Clone)]
pub struct AlignSpec {
    pub target_shallow: EmpiricalCdf,
    pub target_intermediate: EmpiricalCdf,
    /// Participation floor for shallow-layer cells: only cells whose
    /// perturbation exceeds this take part.
    pub th_s: f64,
    /// Participation floor for intermediate-layer cells.
    pub th_m: f64,
    pub mode: AlignMode,
}

/// Rewrite the distribution of a moved perturbation, layer by layer.
///
/// Shallow-layer cells with perturbation above `th_s` are mapped onto the
/// shallow target, intermediate-layer cells above `th_m` onto the
/// intermediate target. Everything else — deep rows, sub-threshold cells —
/// passes through untouched. A layer whose selection is empty is skipped
/// with a warning rather than failing the whole map.
pub fn align_perturbation(
    v3: &Perturbation,
    baseline: &VelocityMap,
    spec: &AlignSpec,
    profile: &LayerProfile,
) -> Result<Perturbation, AlignError> {
    if !baseline.same_geometry(v3) {
        return Err(AlignError::Model(ModelError::GeometryMismatch {
            a_depth: baseline.depth_cells(),
            a_width: baseline.width_cells(),
            a_dx: baseline.dx(),
            b_depth: v3.depth_cells(),
            b_width: v3.width_cells(),
            b_dx: v3.dx(),
        }));
    }
    let depth = v3.depth_cells();
    let w = v3.width_cells();
    profile.validate_for(depth)?;
    if !spec.th_s.is_finite() || !spec.th_m.is_finite() {
        return Err(AlignError::NonFinite);
    }

    let mut out = v3.values().to_vec();
    for (layer, th, target) in [
        (Layer::Shallow, spec.th_s, &spec.target_shallow),
        (Layer::Intermediate, spec.th_m, &spec.target_intermediate),
    ] {
        let rows = profile.rows(layer, depth);
        let mut selected: Vec<usize> = Vec::new();
        let mut sources: Vec<f64> = Vec::new();
        for row in rows {
            for col in 0..w {
                let idx = row * w + col;
                let p = v3.values()[idx] as f64;
                if p <= th {
                    continue;
                }
                match spec.mode {
                    AlignMode::Absolute => {
                        // Source sample is the cell's provisional absolute
                        // velocity. A nonpositive one (perturbation larger
                        // than the baseline) has no place in a velocity
                        // distribution; leave it for the recompose clamp.
                        let v = baseline.values()[idx] as f64 - p;
                        if v > 0.0 {
                            selected.push(idx);
                            sources.push(v);
                        }
                    }
                    AlignMode::Delta => {
                        selected.push(idx);
                        sources.push(p);
                    }
                }
            }
        }
        if selected.is_empty() {
            log::warn!(
                "alignment: no {layer:?}-layer cells above threshold {th}; layer passes through"
            );
            continue;
        }
        let source_threshold = match spec.mode {
            AlignMode::Absolute => 0.0,
            AlignMode::Delta => th,
        };
        let source_cdf = EmpiricalCdf::from_samples(&sources, source_threshold)?;
        for (&idx, &mval) in selected.iter().zip(&sources) {
            let mapped = map_value(mval, &source_cdf, target)?;
            out[idx] = match spec.mode {
                AlignMode::Absolute => (baseline.values()[idx] as f64 - mapped) as f32,
                AlignMode::Delta => mapped as f32,
            };
        }
    }
    Ok(Perturbation::new(depth, w, v3.dx(), out)?)
}
