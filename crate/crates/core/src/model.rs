//! Grid types shared by every stage: velocity maps, perturbations, and the
//! layer bookkeeping that decides where a relocated leak may land.
//!
//! Conventions: grids are row-major, row 0 is the surface, `dx` is the cell
//! size in meters (square cells). A [`Perturbation`] is stored as *baseline
//! minus leaked map*, so a leak that lowers velocity shows up as positive
//! perturbation values.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("grid dimensions must be nonzero, got {depth}x{width}")]
    EmptyGrid { depth: usize, width: usize },
    #[error("cell size must be positive and finite, got {0}")]
    BadSpacing(f32),
    #[error("value count {got} does not match {depth}x{width} = {expected}")]
    BadLength {
        got: usize,
        depth: usize,
        width: usize,
        expected: usize,
    },
    #[error("non-finite value at row {row}, col {col}")]
    NonFinite { row: usize, col: usize },
    #[error("velocity must be positive, got {value} at row {row}, col {col}")]
    NonPositiveVelocity { row: usize, col: usize, value: f32 },
    #[error(
        "grid geometry mismatch: {a_depth}x{a_width} (dx {a_dx}) vs {b_depth}x{b_width} (dx {b_dx})"
    )]
    GeometryMismatch {
        a_depth: usize,
        a_width: usize,
        a_dx: f32,
        b_depth: usize,
        b_width: usize,
        b_dx: f32,
    },
    #[error(
        "layer profile invalid: need 0 < shallow_end ({shallow_end}) < intermediate_end \
         ({intermediate_end}) <= depth ({depth})"
    )]
    BadLayerProfile {
        shallow_end: usize,
        intermediate_end: usize,
        depth: usize,
    },
    #[error("clamp range invalid: need 0 < v_min <= v_max, got [{v_min}, {v_max}]")]
    BadClampRange { v_min: f32, v_max: f32 },
}

/// Read access shared by [`VelocityMap`] and [`Perturbation`].
pub trait Grid {
    fn depth_cells(&self) -> usize;
    fn width_cells(&self) -> usize;
    /// Cell size in meters.
    fn dx(&self) -> f32;
    /// Row-major cell values, length `depth_cells * width_cells`.
    fn values(&self) -> &[f32];

    fn get(&self, row: usize, col: usize) -> f32 {
        debug_assert!(row < self.depth_cells() && col < self.width_cells());
        self.values()[row * self.width_cells() + col]
    }

    fn same_geometry<G: Grid + ?Sized>(&self, other: &G) -> bool {
        self.depth_cells() == other.depth_cells()
            && self.width_cells() == other.width_cells()
            && self.dx() == other.dx()
    }
}

fn check_dims(depth: usize, width: usize, dx: f32, len: usize) -> Result<(), ModelError> {
    if depth == 0 || width == 0 {
        return Err(ModelError::EmptyGrid { depth, width });
    }
    if !(dx.is_finite() && dx > 0.0) {
        return Err(ModelError::BadSpacing(dx));
    }
    let expected = depth * width;
    if len != expected {
        return Err(ModelError::BadLength {
            got: len,
            depth,
            width,
            expected,
        });
    }
    Ok(())
}

pub(crate) fn geometry_mismatch<A: Grid + ?Sized, B: Grid + ?Sized>(a: &A, b: &B) -> ModelError {
    ModelError::GeometryMismatch {
        a_depth: a.depth_cells(),
        a_width: a.width_cells(),
        a_dx: a.dx(),
        b_depth: b.depth_cells(),
        b_width: b.width_cells(),
        b_dx: b.dx(),
    }
}

/// A subsurface P-wave velocity model on a regular 2D grid.
///
/// Every cell holds a positive, finite velocity in m/s.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityMap {
    depth_cells: usize,
    width_cells: usize,
    dx: f32,
    values: Vec<f32>,
}

impl VelocityMap {
    pub fn new(
        depth_cells: usize,
        width_cells: usize,
        dx: f32,
        values: Vec<f32>,
    ) -> Result<Self, ModelError> {
        check_dims(depth_cells, width_cells, dx, values.len())?;
        for (i, &v) in values.iter().enumerate() {
            let (row, col) = (i / width_cells, i % width_cells);
            if !v.is_finite() {
                return Err(ModelError::NonFinite { row, col });
            }
            if v <= 0.0 {
                return Err(ModelError::NonPositiveVelocity { row, col, value: v });
            }
        }
        Ok(Self {
            depth_cells,
            width_cells,
            dx,
            values,
        })
    }

    /// Largest velocity in the map. The map is nonempty by construction.
    pub fn max_velocity(&self) -> f32 {
        self.values.iter().copied().fold(f32::MIN, f32::max)
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }
}

impl Grid for VelocityMap {
    fn depth_cells(&self) -> usize {
        self.depth_cells
    }
    fn width_cells(&self) -> usize {
        self.width_cells
    }
    fn dx(&self) -> f32 {
        self.dx
    }
    fn values(&self) -> &[f32] {
        &self.values
    }
}

/// A velocity difference grid (baseline minus a leaked map).
///
/// Values may be any finite number; leak cells are positive, untouched cells
/// are zero, and small negative values can appear where a generator
/// overshoots.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    depth_cells: usize,
    width_cells: usize,
    dx: f32,
    values: Vec<f32>,
}

impl Perturbation {
    pub fn new(
        depth_cells: usize,
        width_cells: usize,
        dx: f32,
        values: Vec<f32>,
    ) -> Result<Self, ModelError> {
        check_dims(depth_cells, width_cells, dx, values.len())?;
        for (i, &v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(ModelError::NonFinite {
                    row: i / width_cells,
                    col: i % width_cells,
                });
            }
        }
        Ok(Self {
            depth_cells,
            width_cells,
            dx,
            values,
        })
    }

    /// An all-zero perturbation with the same geometry as `like`.
    pub fn zeros_like<G: Grid>(like: &G) -> Self {
        Self {
            depth_cells: like.depth_cells(),
            width_cells: like.width_cells(),
            dx: like.dx(),
            values: vec![0.0; like.depth_cells() * like.width_cells()],
        }
    }

    /// Largest value in the grid (the peak of the leak signature).
    pub fn max_value(&self) -> f32 {
        self.values.iter().copied().fold(f32::MIN, f32::max)
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }
}

impl Grid for Perturbation {
    fn depth_cells(&self) -> usize {
        self.depth_cells
    }
    fn width_cells(&self) -> usize {
        self.width_cells
    }
    fn dx(&self) -> f32 {
        self.dx
    }
    fn values(&self) -> &[f32] {
        &self.values
    }
}

/// Horizontal layer boundaries, as row indices.
///
/// Rows `[0, shallow_end)` are the shallow layer, `[shallow_end,
/// intermediate_end)` the intermediate layer, and everything below is deep.
/// `intermediate_end == depth_cells` leaves the deep layer empty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerProfile {
    pub shallow_end: usize,
    pub intermediate_end: usize,
}

impl LayerProfile {
    pub fn validate_for(&self, depth_cells: usize) -> Result<(), ModelError> {
        if self.shallow_end == 0
            || self.shallow_end >= self.intermediate_end
            || self.intermediate_end > depth_cells
        {
            return Err(ModelError::BadLayerProfile {
                shallow_end: self.shallow_end,
                intermediate_end: self.intermediate_end,
                depth: depth_cells,
            });
        }
        Ok(())
    }

    /// Row range covered by `layer` in a grid `depth_cells` deep.
    pub fn rows(&self, layer: Layer, depth_cells: usize) -> std::ops::Range<usize> {
        match layer {
            Layer::Shallow => 0..self.shallow_end,
            Layer::Intermediate => self.shallow_end..self.intermediate_end,
            Layer::Deep => self.intermediate_end..depth_cells,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layer {
    Shallow,
    Intermediate,
    Deep,
}

/// Elementwise `baseline - leaked`. Both maps must share geometry.
pub fn subtract_baseline(
    baseline: &VelocityMap,
    leaked: &VelocityMap,
) -> Result<Perturbation, ModelError> {
    if !baseline.same_geometry(leaked) {
        return Err(geometry_mismatch(baseline, leaked));
    }
    let values = baseline
        .values
        .iter()
        .zip(&leaked.values)
        .map(|(&b, &l)| b - l)
        .collect();
    Perturbation::new(
        baseline.depth_cells,
        baseline.width_cells,
        baseline.dx,
        values,
    )
}

/// Elementwise `baseline - pert`, clamped to `[v_min, v_max]`.
///
/// The clamp keeps every output cell inside the physically plausible
/// velocity range, whatever the perturbation holds.
pub fn recompose(
    baseline: &VelocityMap,
    pert: &Perturbation,
    v_min: f32,
    v_max: f32,
) -> Result<VelocityMap, ModelError> {
    if !(v_min.is_finite() && v_max.is_finite() && v_min > 0.0 && v_min <= v_max) {
        return Err(ModelError::BadClampRange { v_min, v_max });
    }
    if !baseline.same_geometry(pert) {
        return Err(geometry_mismatch(baseline, pert));
    }
    let values = baseline
        .values
        .iter()
        .zip(&pert.values)
        .map(|(&b, &p)| (b - p).clamp(v_min, v_max))
        .collect();
    VelocityMap::new(
        baseline.depth_cells,
        baseline.width_cells,
        baseline.dx,
        values,
    )
}

/// All cell values of `grid` inside one layer, row-major.
pub fn layer_samples<G: Grid>(
    grid: &G,
    profile: &LayerProfile,
    layer: Layer,
) -> Result<Vec<f32>, ModelError> {
    profile.validate_for(grid.depth_cells())?;
    let rows = profile.rows(layer, grid.depth_cells());
    let w = grid.width_cells();
    Ok(grid.values()[rows.start * w..rows.end * w].to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn map(depth: usize, width: usize, values: Vec<f32>) -> VelocityMap {
        VelocityMap::new(depth, width, 10.0, values).unwrap()
    }

    #[test]
    fn constructors_reject_bad_input() {
        assert!(matches!(
            VelocityMap::new(0, 3, 10.0, vec![]),
            Err(ModelError::EmptyGrid { .. })
        ));
        assert!(matches!(
            VelocityMap::new(2, 2, 0.0, vec![1.0; 4]),
            Err(ModelError::BadSpacing(_))
        ));
        assert!(matches!(
            VelocityMap::new(2, 2, 10.0, vec![1.0; 3]),
            Err(ModelError::BadLength { got: 3, .. })
        ));
        assert!(matches!(
            VelocityMap::new(2, 2, 10.0, vec![1.0, f32::NAN, 1.0, 1.0]),
            Err(ModelError::NonFinite { row: 0, col: 1 })
        ));
        assert!(matches!(
            VelocityMap::new(2, 2, 10.0, vec![1.0, 1.0, -5.0, 1.0]),
            Err(ModelError::NonPositiveVelocity { row: 1, col: 0, .. })
        ));
        // Perturbations accept negatives but not NaN.
        assert!(Perturbation::new(1, 2, 10.0, vec![-3.0, 0.0]).is_ok());
        assert!(Perturbation::new(1, 2, 10.0, vec![f32::INFINITY, 0.0]).is_err());
    }

    #[test]
    fn get_is_row_major_with_surface_at_row_zero() {
        let m = map(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(m.get(0, 0), 1.0);
        assert_eq!(m.get(0, 2), 3.0);
        assert_eq!(m.get(1, 0), 4.0);
        assert_eq!(m.get(1, 2), 6.0);
    }

    #[test]
    fn subtract_requires_matching_geometry() {
        let a = map(2, 2, vec![1.0; 4]);
        let b = map(2, 3, vec![1.0; 6]);
        assert!(matches!(
            subtract_baseline(&a, &b),
            Err(ModelError::GeometryMismatch { .. })
        ));
        let c = VelocityMap::new(2, 2, 5.0, vec![1.0; 4]).unwrap();
        assert!(subtract_baseline(&a, &c).is_err(), "dx must match too");
    }

    #[test]
    fn subtract_then_recompose_recovers_leaked_map() {
        // Values on a half-integer lattice in a narrow range subtract
        // exactly in f32, so the round trip is bit-exact.
        let b = map(2, 2, vec![3000.0, 2500.5, 1800.0, 4000.5]);
        let l = map(2, 2, vec![2700.5, 2500.5, 1500.0, 4000.5]);
        let p = subtract_baseline(&b, &l).unwrap();
        assert_eq!(p.values(), &[299.5, 0.0, 300.0, 0.0]);
        let back = recompose(&b, &p, 300.0, 6000.0).unwrap();
        assert_eq!(back, l);
    }

    #[test]
    fn recompose_clamps_to_range() {
        let b = map(1, 3, vec![400.0, 3000.0, 5900.0]);
        let p = Perturbation::new(1, 3, 10.0, vec![200.0, 0.0, -200.0]).unwrap();
        let out = recompose(&b, &p, 300.0, 6000.0).unwrap();
        assert_eq!(out.values(), &[300.0, 3000.0, 6000.0]);
        assert!(matches!(
            recompose(&b, &p, -1.0, 6000.0),
            Err(ModelError::BadClampRange { .. })
        ));
        assert!(matches!(
            recompose(&b, &p, 500.0, 400.0),
            Err(ModelError::BadClampRange { .. })
        ));
    }

    #[test]
    fn layer_profile_validation() {
        let ok = LayerProfile {
            shallow_end: 3,
            intermediate_end: 7,
        };
        assert!(ok.validate_for(10).is_ok());
        assert!(ok.validate_for(7).is_ok(), "empty deep layer is allowed");
        assert!(ok.validate_for(6).is_err());
        assert!(LayerProfile {
            shallow_end: 0,
            intermediate_end: 5
        }
        .validate_for(10)
        .is_err());
        assert!(LayerProfile {
            shallow_end: 5,
            intermediate_end: 5
        }
        .validate_for(10)
        .is_err());
    }

    #[test]
    fn layer_samples_partition_the_grid() {
        let m = map(4, 2, (1..=8).map(|v| v as f32).collect());
        let profile = LayerProfile {
            shallow_end: 1,
            intermediate_end: 3,
        };
        let s = layer_samples(&m, &profile, Layer::Shallow).unwrap();
        let i = layer_samples(&m, &profile, Layer::Intermediate).unwrap();
        let d = layer_samples(&m, &profile, Layer::Deep).unwrap();
        assert_eq!(s, vec![1.0, 2.0]);
        assert_eq!(i, vec![3.0, 4.0, 5.0, 6.0]);
        assert_eq!(d, vec![7.0, 8.0]);
        let all: Vec<f32> = s.into_iter().chain(i).chain(d).collect();
        assert_eq!(all, m.values());
    }

    /// Random grids whose cells are multiples of 0.5 in [300, 6000]; f32
    /// subtraction of any two such values is exact, which lets property
    /// tests demand bit-equality.
    fn lattice_grid(
        depth: usize,
        width: usize,
    ) -> impl Strategy<Value = (Vec<f32>, Vec<f32>, usize, usize)> {
        let cell = (600u32..=12000).prop_map(|k| k as f32 * 0.5);
        (
            proptest::collection::vec(cell.clone(), depth * width),
            proptest::collection::vec(cell, depth * width),
        )
            .prop_map(move |(a, b)| (a, b, depth, width))
    }

    proptest! {
        #[test]
        fn prop_subtract_recompose_inverse((b, l, d, w) in lattice_grid(6, 5)) {
            let baseline = map(d, w, b);
            let leaked = map(d, w, l);
            let pert = subtract_baseline(&baseline, &leaked).unwrap();
            let back = recompose(&baseline, &pert, 300.0, 6000.0).unwrap();
            prop_assert_eq!(back.values(), leaked.values());
        }

        #[test]
        fn prop_layers_partition((b, _, d, w) in lattice_grid(8, 3)) {
            let m = map(d, w, b);
            for (se, ie) in [(1usize, 2usize), (2, 5), (3, 8)] {
                let profile = LayerProfile { shallow_end: se, intermediate_end: ie };
                let mut joined = layer_samples(&m, &profile, Layer::Shallow).unwrap();
                joined.extend(layer_samples(&m, &profile, Layer::Intermediate).unwrap());
                joined.extend(layer_samples(&m, &profile, Layer::Deep).unwrap());
                prop_assert_eq!(joined.as_slice(), m.values());
            }
        }

        #[test]
        fn prop_recompose_respects_clamp((b, l, d, w) in lattice_grid(5, 5)) {
            let baseline = map(d, w, b);
            let leaked = map(d, w, l);
            let pert = subtract_baseline(&baseline, &leaked).unwrap();
            let out = recompose(&baseline, &pert, 1000.0, 4000.0).unwrap();
            for &v in out.values() {
                prop_assert!((1000.0..=4000.0).contains(&v));
            }
        }
    }
}
