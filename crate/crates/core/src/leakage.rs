//! Isolating a leakage signature and relocating it to the shallow layer.
//!
//! The stages here operate on a [`Perturbation`] (baseline minus leaked
//! map):
//!
//! 1. [`crop_leakage`] keeps only cells strictly above a threshold, which
//!    discards the weak halo around the leak and leaves a compact signature.
//! 2. [`split_horizontal`] cuts the signature at a seeded random row inside
//!    its bounding box.
//! 3. [`move_to_boundary`] translates both parts vertically so the split row
//!    lands exactly on the shallow/intermediate boundary: the part above the
//!    split ends up inside the shallow layer, the part below stays in the
//!    intermediate layer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::{Grid, LayerProfile, ModelError, Perturbation};

#[derive(Debug, Error)]
pub enum LeakageError {
    #[error("no leakage cells above the crop threshold")]
    EmptyLeakage,
    #[error("leakage bounding box spans a single row; nothing to split")]
    SingleRowLeakage,
    #[error("translated leakage would leave the grid (row offset {offset})")]
    OutOfGrid { offset: isize },
    #[error("crop threshold must be positive and finite, got {0}")]
    BadThreshold(f64),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Inclusive bounding box of the retained leakage cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundingBox {
    pub row_min: usize,
    pub row_max: usize,
    pub col_min: usize,
    pub col_max: usize,
}

/// A thresholded leakage signature plus its bounding box.
#[derive(Debug, Clone, PartialEq)]
pub struct CroppedLeakage {
    pub pert: Perturbation,
    pub bbox: BoundingBox,
}

/// A cropped signature cut at `split_row`: `upper` holds the rows strictly
/// above the cut, `lower` holds `split_row` and everything below. The two
/// supports are disjoint and their union is the cropped signature.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitLeakage {
    pub upper: Perturbation,
    pub lower: Perturbation,
    pub split_row: usize,
}

impl SplitLeakage {
    /// Treat the whole signature as the lower part (used when the bounding
    /// box spans a single row and there is nothing to split).
    pub fn all_lower(crop: &CroppedLeakage) -> Self {
        SplitLeakage {
            upper: Perturbation::zeros_like(&crop.pert),
            lower: crop.pert.clone(),
            split_row: crop.bbox.row_min,
        }
    }
}

/// Default crop threshold: one third of the signature's peak value.
pub fn default_crop_threshold(pert: &Perturbation) -> Result<f64, LeakageError> {
    let max = pert.max_value() as f64;
    if max <= 0.0 {
        return Err(LeakageError::EmptyLeakage);
    }
    Ok(max / 3.0)
}

/// Zero out every cell not strictly above `th_l` and report the bounding
/// box of what survives.
pub fn crop_leakage(pert: &Perturbation, th_l: f64) -> Result<CroppedLeakage, LeakageError> {
    if !(th_l.is_finite() && th_l > 0.0) {
        return Err(LeakageError::BadThreshold(th_l));
    }
    let (d, w) = (pert.depth_cells(), pert.width_cells());
    let mut values = vec![0.0f32; d * w];
    let mut bbox: Option<BoundingBox> = None;
    for row in 0..d {
        for col in 0..w {
            let v = pert.get(row, col);
            if (v as f64) > th_l {
                values[row * w + col] = v;
                bbox = Some(match bbox {
                    None => BoundingBox {
                        row_min: row,
                        row_max: row,
                        col_min: col,
                        col_max: col,
                    },
                    Some(b) => BoundingBox {
                        row_min: b.row_min.min(row),
                        row_max: b.row_max.max(row),
                        col_min: b.col_min.min(col),
                        col_max: b.col_max.max(col),
                    },
                });
            }
        }
    }
    let bbox = bbox.ok_or(LeakageError::EmptyLeakage)?;
    Ok(CroppedLeakage {
        pert: Perturbation::new(d, w, pert.dx(), values)?,
        bbox,
    })
}

/// Cut the signature at a row drawn uniformly from
/// `[row_min + 1, row_max]`, so both parts are guaranteed nonempty row
/// ranges. Identical seeds cut at identical rows.
pub fn split_horizontal(crop: &CroppedLeakage, seed: u64) -> Result<SplitLeakage, LeakageError> {
    let b = crop.bbox;
    if b.row_min == b.row_max {
        return Err(LeakageError::SingleRowLeakage);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let split_row = rng.random_range(b.row_min + 1..=b.row_max);
    let (d, w) = (crop.pert.depth_cells(), crop.pert.width_cells());
    let mut upper = vec![0.0f32; d * w];
    let mut lower = vec![0.0f32; d * w];
    for row in 0..d {
        let dst = if row < split_row {
            &mut upper
        } else {
            &mut lower
        };
        let span = row * w..(row + 1) * w;
        dst[span.clone()].copy_from_slice(&crop.pert.values()[span]);
    }
    Ok(SplitLeakage {
        upper: Perturbation::new(d, w, crop.pert.dx(), upper)?,
        lower: Perturbation::new(d, w, crop.pert.dx(), lower)?,
        split_row,
    })
}

/// Translate both parts vertically by the same offset so the split row
/// lands on `profile.shallow_end`. Columns never change and cell values are
/// copied bit-for-bit, so the signature's mass is preserved exactly.
///
/// Fails with [`LeakageError::OutOfGrid`] if any nonzero cell would leave
/// the grid.
pub fn move_to_boundary(
    split: &SplitLeakage,
    profile: &LayerProfile,
) -> Result<Perturbation, LeakageError> {
    let (d, w) = (split.lower.depth_cells(), split.lower.width_cells());
    profile.validate_for(d)?;
    if !split.upper.same_geometry(&split.lower) {
        return Err(LeakageError::Model(ModelError::GeometryMismatch {
            a_depth: split.upper.depth_cells(),
            a_width: split.upper.width_cells(),
            a_dx: split.upper.dx(),
            b_depth: d,
            b_width: w,
            b_dx: split.lower.dx(),
        }));
    }
    let offset = profile.shallow_end as isize - split.split_row as isize;
    let mut values = vec![0.0f32; d * w];
    for part in [&split.upper, &split.lower] {
        for row in 0..d {
            for col in 0..w {
                let v = part.get(row, col);
                if v != 0.0 {
                    let dst = row as isize + offset;
                    if dst < 0 || dst >= d as isize {
                        return Err(LeakageError::OutOfGrid { offset });
                    }
                    values[dst as usize * w + col] = v;
                }
            }
        }
    }
    Ok(Perturbation::new(d, w, split.lower.dx(), values)?)
}
