//! Producing candidate leaked maps: synthesize variations of an existing
//! leak, or import maps made elsewhere.
//!
//! [`propose_map`] takes a condition map (baseline plus a leak somewhere),
//! lifts out its leak signature, and rebuilds a new map from a randomly
//! jittered and smoothly warped copy of that signature. The warp is a
//! dense displacement field: per-cell uniform noise, Gaussian-smoothed so
//! neighboring cells move together, then rescaled so the largest
//! displacement component is exactly `warp_max_shift` cells. Values are
//! sampled back through bilinear interpolation, so the deformed signature
//! stays smooth.
//!
//! [`import_maps`] loads every readable map in a directory instead,
//! reporting (rather than failing on) files that don't parse or don't match
//! the baseline geometry.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::io::{load_map, IoError};
use crate::model::{
    geometry_mismatch, recompose, subtract_baseline, Grid, ModelError, Perturbation, VelocityMap,
};

#[derive(Debug, Error)]
pub enum GeneratorError {
    #[error("condition map carries no positive leak signature")]
    NoLeakSignature,
    #[error("jitter range [{min}, {max}] invalid: need 0 < min <= max")]
    BadJitter { min: f64, max: f64 },
    #[error("smoothing sigma must be positive and finite, got {0}")]
    BadSigma(f64),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] IoError),
}

/// Knobs for [`propose_map`].
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalParams {
    /// Relative amplitude scale range; each proposal draws one factor
    /// uniformly from `[jitter_min, jitter_max]`.
    pub jitter_min: f64,
    pub jitter_max: f64,
    /// Gaussian sigma (in cells) smoothing the warp displacement field.
    pub smooth_warp_sigma: f64,
    /// Largest displacement component of the warp, in cells. Zero disables
    /// warping.
    pub warp_max_shift: usize,
    pub seed: u64,
}

impl ProposalParams {
    pub fn validate(&self) -> Result<(), GeneratorError> {
        if !(self.jitter_min.is_finite()
            && self.jitter_max.is_finite()
            && self.jitter_min > 0.0
            && self.jitter_min <= self.jitter_max)
        {
            return Err(GeneratorError::BadJitter {
                min: self.jitter_min,
                max: self.jitter_max,
            });
        }
        if !(self.smooth_warp_sigma.is_finite() && self.smooth_warp_sigma > 0.0) {
            return Err(GeneratorError::BadSigma(self.smooth_warp_sigma));
        }
        Ok(())
    }
}

/// Separable Gaussian blur with replicated edges; radius is three sigma.
fn gaussian_blur(field: &[f64], d: usize, w: usize, sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel = Vec::with_capacity(2 * radius as usize + 1);
    let mut sum = 0.0;
    for i in -radius..=radius {
        let x = i as f64;
        let v = (-x * x / (2.0 * sigma * sigma)).exp();
        kernel.push(v);
        sum += v;
    }
    for v in &mut kernel {
        *v /= sum;
    }
    let clampi = |v: isize, hi: usize| v.clamp(0, hi as isize - 1) as usize;
    let mut tmp = vec![0.0; d * w];
    for r in 0..d {
        for c in 0..w {
            let mut acc = 0.0;
            for (ki, kv) in kernel.iter().enumerate() {
                let cc = clampi(c as isize + ki as isize - radius, w);
                acc += kv * field[r * w + cc];
            }
            tmp[r * w + c] = acc;
        }
    }
    let mut out = vec![0.0; d * w];
    for r in 0..d {
        for c in 0..w {
            let mut acc = 0.0;
            for (ki, kv) in kernel.iter().enumerate() {
                let rr = clampi(r as isize + ki as isize - radius, d);
                acc += kv * tmp[rr * w + c];
            }
            out[r * w + c] = acc;
        }
    }
    out
}

/// Bilinear sample of `pert` at fractional (row, col); outside the grid the
/// signature is zero. Integer coordinates read exactly one cell.
fn bilinear(pert: &Perturbation, y: f64, x: f64) -> f64 {
    let (d, w) = (pert.depth_cells() as isize, pert.width_cells() as isize);
    let y0 = y.floor();
    let x0 = x.floor();
    let fy = y - y0;
    let fx = x - x0;
    let mut acc = 0.0;
    for (dy, wy) in [(0isize, 1.0 - fy), (1, fy)] {
        if wy == 0.0 {
            continue;
        }
        for (dxi, wx) in [(0isize, 1.0 - fx), (1, fx)] {
            if wx == 0.0 {
                continue;
            }
            let r = y0 as isize + dy;
            let c = x0 as isize + dxi;
            if r >= 0 && r < d && c >= 0 && c < w {
                acc += wy * wx * pert.get(r as usize, c as usize) as f64;
            }
        }
    }
    acc
}

/// Synthesize a new leaked map from `condition`'s leak signature.
///
/// With `jitter_min == jitter_max == 1` and `warp_max_shift == 0` the
/// proposal reproduces `condition` exactly (inside the clamp range), which
/// pins the transform's neutral element.
///
/// Deterministic in `params.seed`: the amplitude factor is drawn first,
/// then the row-displacement noise (row-major), then the
/// column-displacement noise.
pub fn propose_map(
    condition: &VelocityMap,
    baseline: &VelocityMap,
    params: &ProposalParams,
    v_min: f32,
    v_max: f32,
) -> Result<VelocityMap, GeneratorError> {
    params.validate()?;
    let pert = subtract_baseline(baseline, condition)?;
    if pert.max_value() <= 0.0 {
        return Err(GeneratorError::NoLeakSignature);
    }
    let (d, w) = (pert.depth_cells(), pert.width_cells());
    let cells = d * w;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let jitter = rng.random_range(params.jitter_min..=params.jitter_max);

    let warp = if params.warp_max_shift > 0 {
        let mut dr = Vec::with_capacity(cells);
        for _ in 0..cells {
            dr.push(rng.random_range(-1.0..=1.0));
        }
        let mut dc = Vec::with_capacity(cells);
        for _ in 0..cells {
            dc.push(rng.random_range(-1.0..=1.0));
        }
        let mut dr = gaussian_blur(&dr, d, w, params.smooth_warp_sigma);
        let mut dc = gaussian_blur(&dc, d, w, params.smooth_warp_sigma);
        let peak = dr
            .iter()
            .chain(dc.iter())
            .fold(0.0f64, |m, &v| m.max(v.abs()));
        if peak > 0.0 {
            let scale = params.warp_max_shift as f64 / peak;
            for v in dr.iter_mut().chain(dc.iter_mut()) {
                *v *= scale;
            }
        }
        Some((dr, dc))
    } else {
        None
    };

    let mut out = vec![0.0f32; cells];
    for r in 0..d {
        for c in 0..w {
            let i = r * w + c;
            let sampled = match &warp {
                None => pert.values()[i] as f64,
                Some((dr, dc)) => bilinear(&pert, r as f64 - dr[i], c as f64 - dc[i]),
            };
            out[i] = (jitter * sampled) as f32;
        }
    }
    let proposal_pert = Perturbation::new(d, w, pert.dx(), out)?;
    Ok(recompose(baseline, &proposal_pert, v_min, v_max)?)
}

/// Maps loaded by [`import_maps`]: successes paired with their file names,
/// and a skip report (file name, reason) for everything else.
#[derive(Debug, Clone)]
pub struct ImportedMaps {
    pub maps: Vec<(String, VelocityMap)>,
    pub skipped: Vec<(String, String)>,
}

/// Load every regular file in `dir` as a velocity map, in file-name order.
///
/// Files that fail to parse or whose geometry differs from `baseline` are
/// skipped with a recorded reason; only an unreadable directory is an
/// error.
pub fn import_maps(dir: &Path, baseline: &VelocityMap) -> Result<ImportedMaps, GeneratorError> {
    let entries = std::fs::read_dir(dir).map_err(|e| {
        GeneratorError::Io(IoError::Io {
            path: dir.to_path_buf(),
            source: e,
        })
    })?;
    let mut files = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| {
            GeneratorError::Io(IoError::Io {
                path: dir.to_path_buf(),
                source: e,
            })
        })?;
        if entry.path().is_file() {
            files.push(entry.path());
        }
    }
    files.sort();
    let mut maps = Vec::new();
    let mut skipped = Vec::new();
    for path in files {
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        match load_map(&path) {
            Ok(map) if map.same_geometry(baseline) => maps.push((name, map)),
            Ok(map) => {
                let reason = geometry_mismatch(&map, baseline).to_string();
                log::warn!("import: skipping {name}: {reason}");
                skipped.push((name, reason));
            }
            Err(e) => {
                log::warn!("import: skipping {name}: {e}");
                skipped.push((name, e.to_string()));
            }
        }
    }
    Ok(ImportedMaps { maps, skipped })
}
