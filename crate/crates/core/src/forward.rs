//! 2D acoustic finite-difference forward modeling.
//!
//! Solves the constant-density acoustic wave equation
//! `laplacian(p) - (1/v^2) d^2p/dt^2 = s` with an explicit second-order
//! time stepper:
//!
//! ```text
//! p[t+1] = 2 p[t] - p[t-1] + v^2 dt^2 (laplacian(p[t]) - s[t])
//! ```
//!
//! Space derivatives use a second- or fourth-order central stencil; the
//! fourth-order stencil falls back to second order one cell from the edge,
//! and the outermost ring (where no stencil fits) carries no Laplacian at
//! all. Row 0 is a free surface (pressure pinned to zero); the left, right,
//! and bottom edges carry an exponential absorbing sponge so outgoing waves
//! don't bounce back into the picture.
//!
//! Laplacians are evaluated in difference form (`sum of (neighbor - center)`
//! terms), which makes a spatially constant field an exact fixed point of
//! [`step`] in floating-point arithmetic, not just an approximate one.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Grid, ModelError, VelocityMap};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(
        "CFL violation: v_max*dt/dx = {ratio:.6} exceeds {limit:.6} for this stencil; \
         largest stable dt is {max_dt:.6e} s"
    )]
    CflViolation {
        ratio: f64,
        limit: f64,
        max_dt: f64,
    },
    #[error("wavefield diverged (non-finite values) at step {step}")]
    DivergenceDetected { step: usize },
    #[error("shot position (row {row}, col {col}) outside {depth}x{width} grid")]
    ShotOutsideGrid {
        row: usize,
        col: usize,
        depth: usize,
        width: usize,
    },
    #[error("invalid simulation config: {0}")]
    BadConfig(String),
    #[error("invalid gather: {0}")]
    BadGather(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Spatial accuracy of the Laplacian.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub enum StencilOrder {
    Two,
    Four,
}

impl TryFrom<u32> for StencilOrder {
    type Error = String;
    fn try_from(v: u32) -> Result<Self, String> {
        match v {
            2 => Ok(StencilOrder::Two),
            4 => Ok(StencilOrder::Four),
            other => Err(format!("stencil order must be 2 or 4, got {other}")),
        }
    }
}

impl From<StencilOrder> for u32 {
    fn from(o: StencilOrder) -> u32 {
        match o {
            StencilOrder::Two => 2,
            StencilOrder::Four => 4,
        }
    }
}

/// Largest stable Courant number `v_max * dt / dx` for each stencil.
pub fn cfl_limit(order: StencilOrder) -> f64 {
    match order {
        StencilOrder::Two => std::f64::consts::FRAC_1_SQRT_2,
        StencilOrder::Four => 0.606,
    }
}

fn default_stencil_order() -> StencilOrder {
    StencilOrder::Four
}
fn default_source_freq() -> f64 {
    15.0
}
fn default_source_delay() -> f64 {
    0.08
}
fn default_sponge_width() -> usize {
    20
}
fn default_sponge_strength() -> f64 {
    0.3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Time step in seconds.
    pub dt: f64,
    /// Number of time steps; the gather holds one sample per step.
    pub nt: usize,
    #[serde(default = "default_stencil_order")]
    pub stencil_order: StencilOrder,
    /// Dominant frequency of the source wavelet, Hz.
    #[serde(default = "default_source_freq")]
    pub source_freq: f64,
    /// Wavelet peak time in seconds; gives the pulse a quiet onset.
    #[serde(default = "default_source_delay")]
    pub source_delay: f64,
    /// Thickness of the absorbing strips (cells) on the left, right, and
    /// bottom edges. Zero disables absorption.
    #[serde(default = "default_sponge_width")]
    pub sponge_width: usize,
    /// Damping strength of the absorbing strips.
    #[serde(default = "default_sponge_strength")]
    pub sponge_strength: f64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |msg: String| Err(SimError::BadConfig(msg));
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if self.nt == 0 {
            return bad("nt must be at least 1".into());
        }
        if !(self.source_freq.is_finite() && self.source_freq > 0.0) {
            return bad(format!(
                "source_freq must be positive, got {}",
                self.source_freq
            ));
        }
        if !(self.source_delay.is_finite() && self.source_delay >= 0.0) {
            return bad(format!(
                "source_delay must be nonnegative, got {}",
                self.source_delay
            ));
        }
        if !(self.sponge_strength.is_finite() && self.sponge_strength >= 0.0) {
            return bad(format!(
                "sponge_strength must be nonnegative, got {}",
                self.sponge_strength
            ));
        }
        Ok(())
    }
}

/// One source position plus the receiver line that listens to it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShotGeometry {
    pub source: (usize, usize),
    pub receivers: Vec<(usize, usize)>,
}

/// Recorded traces for one shot: `n_receivers` traces of `nt` samples,
/// stored receiver-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SeismicGather {
    receivers: Vec<(u32, u32)>,
    nt: usize,
    dt: f32,
    data: Vec<f64>,
}

impl SeismicGather {
    pub fn from_parts(
        receivers: Vec<(u32, u32)>,
        nt: usize,
        dt: f32,
        data: Vec<f64>,
    ) -> Result<Self, SimError> {
        if receivers.is_empty() {
            return Err(SimError::BadGather("no receivers".into()));
        }
        if nt == 0 {
            return Err(SimError::BadGather("nt must be at least 1".into()));
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(SimError::BadGather(format!("dt must be positive, got {dt}")));
        }
        if data.len() != receivers.len() * nt {
            return Err(SimError::BadGather(format!(
                "expected {} samples ({} receivers x {} steps), got {}",
                receivers.len() * nt,
                receivers.len(),
                nt,
                data.len()
            )));
        }
        if data.iter().any(|s| !s.is_finite()) {
            return Err(SimError::BadGather("non-finite sample".into()));
        }
        Ok(SeismicGather {
            receivers,
            nt,
            dt,
            data,
        })
    }

    pub fn n_receivers(&self) -> usize {
        self.receivers.len()
    }
    pub fn nt(&self) -> usize {
        self.nt
    }
    pub fn dt(&self) -> f32 {
        self.dt
    }
    pub fn receivers(&self) -> &[(u32, u32)] {
        &self.receivers
    }
    /// All samples, receiver-major.
    pub fn samples(&self) -> &[f64] {
        &self.data
    }
    /// One receiver's trace.
    pub fn trace(&self, receiver: usize) -> &[f64] {
        &self.data[receiver * self.nt..(receiver + 1) * self.nt]
    }
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, &s| m.max(s.abs()))
    }
}

/// Ricker wavelet with peak 1.0 at `t = delay`:
/// `(1 - 2 a) * exp(-a)` with `a = (pi * freq * (t - delay))^2`.
pub fn ricker(t: f64, freq: f64, delay: f64) -> f64 {
    let tau = t - delay;
    let a = (std::f64::consts::PI * freq * tau).powi(2);
    (1.0 - 2.0 * a) * (-a).exp()
}

/// Reject configurations whose Courant number `v_max * dt / dx` exceeds the
/// stencil's stability limit. Runs before any stepping.
pub fn check_cfl(map: &VelocityMap, cfg: &SimConfig) -> Result<(), SimError> {
    cfg.validate()?;
    let v_max = map.max_velocity() as f64;
    let dx = map.dx() as f64;
    let limit = cfl_limit(cfg.stencil_order);
    let ratio = v_max * cfg.dt / dx;
    if ratio > limit {
        return Err(SimError::CflViolation {
            ratio,
            limit,
            max_dt: limit * dx / v_max,
        });
    }
    Ok(())
}

/// Laplacian at one cell, in difference form so a constant field yields an
/// exact zero. Fourth order degrades to second order one cell from the
/// edge; the outermost ring gets zero.
#[inline]
fn laplacian_at(
    p: &[f64],
    r: usize,
    c: usize,
    d: usize,
    w: usize,
    inv_dx2: f64,
    order: StencilOrder,
) -> f64 {
    if r == 0 || c == 0 || r + 1 >= d || c + 1 >= w {
        return 0.0;
    }
    let i = r * w + c;
    let center = p[i];
    let second = || {
        ((p[i - w] - center) + (p[i + w] - center) + (p[i - 1] - center) + (p[i + 1] - center))
            * inv_dx2
    };
    match order {
        StencilOrder::Two => second(),
        StencilOrder::Four => {
            if r >= 2 && c >= 2 && r + 2 < d && c + 2 < w {
                let axis = |m1: f64, p1: f64, m2: f64, p2: f64| {
                    16.0 * (m1 - center) + 16.0 * (p1 - center) - (m2 - center) - (p2 - center)
                };
                (axis(p[i - w], p[i + w], p[i - 2 * w], p[i + 2 * w])
                    + axis(p[i - 1], p[i + 1], p[i - 2], p[i + 2]))
                    * inv_dx2
                    / 12.0
            } else {
                second()
            }
        }
    }
}

fn step_kernel(
    out: &mut [f64],
    p_prev: &[f64],
    p_cur: &[f64],
    v2dt2: &[f64],
    src: &[f64],
    d: usize,
    w: usize,
    inv_dx2: f64,
    order: StencilOrder,
) {
    for r in 0..d {
        for c in 0..w {
            let i = r * w + c;
            let lap = laplacian_at(p_cur, r, c, d, w, inv_dx2, order);
            out[i] = 2.0 * p_cur[i] - p_prev[i] + v2dt2[i] * (lap - src[i]);
        }
    }
}

fn v2dt2_field(map: &VelocityMap, dt: f64) -> Vec<f64> {
    map.values()
        .iter()
        .map(|&v| {
            let v = v as f64;
            v * v * dt * dt
        })
        .collect()
}

/// One explicit time step over the whole grid, with no boundary treatment:
/// `p_next = 2 p_cur - p_prev + v^2 dt^2 (laplacian(p_cur) - src)`.
///
/// `src` is the source field at the current step (usually zero except at
/// the shot cell). All slices must have one entry per grid cell.
pub fn step(
    p_prev: &[f64],
    p_cur: &[f64],
    map: &VelocityMap,
    src: &[f64],
    dt: f64,
    order: StencilOrder,
) -> Result<Vec<f64>, SimError> {
    let cells = map.depth_cells() * map.width_cells();
    for (name, len) in [("p_prev", p_prev.len()), ("p_cur", p_cur.len()), ("src", src.len())] {
        if len != cells {
            return Err(SimError::BadConfig(format!(
                "{name} has {len} entries, grid has {cells} cells"
            )));
        }
    }
    if !(dt.is_finite() && dt > 0.0) {
        return Err(SimError::BadConfig(format!("dt must be positive, got {dt}")));
    }
    let mut out = vec![0.0; cells];
    let dx = map.dx() as f64;
    step_kernel(
        &mut out,
        p_prev,
        p_cur,
        &v2dt2_field(map, dt),
        src,
        map.depth_cells(),
        map.width_cells(),
        1.0 / (dx * dx),
        order,
    );
    Ok(out)
}

/// Damping profile for the absorbing strips: 1.0 in the interior, decaying
/// as `exp(-(strength * (width - distance) / width)^2)` toward the left,
/// right, and bottom edges (the top is the free surface).
fn sponge_profile(d: usize, w: usize, width: usize, strength: f64) -> Vec<f64> {
    let mut taper = vec![1.0; d * w];
    if width == 0 {
        return taper;
    }
    for r in 0..d {
        for c in 0..w {
            let dist = c.min(w - 1 - c).min(d - 1 - r);
            if dist < width {
                let x = strength * (width - dist) as f64 / width as f64;
                taper[r * w + c] = (-x * x).exp();
            }
        }
    }
    taper
}

/// Run a full simulation and record a gather.
///
/// The source wavelet is injected at `shot.source`; each receiver records
/// the finished wavefield (after the free surface and sponge are applied)
/// once per step. The CFL gate runs before any stepping, and a non-finite
/// wavefield aborts with [`SimError::DivergenceDetected`].
pub fn simulate(
    map: &VelocityMap,
    cfg: &SimConfig,
    shot: &ShotGeometry,
) -> Result<SeismicGather, SimError> {
    check_cfl(map, cfg)?;
    let (d, w) = (map.depth_cells(), map.width_cells());
    let mut positions = shot.receivers.clone();
    positions.push(shot.source);
    if shot.receivers.is_empty() {
        return Err(SimError::BadGather("no receivers".into()));
    }
    for &(row, col) in &positions {
        if row >= d || col >= w {
            return Err(SimError::ShotOutsideGrid {
                row,
                col,
                depth: d,
                width: w,
            });
        }
    }
    if shot.source.0 == 0 {
        log::warn!("source sits on the free-surface row; its energy is nulled every step");
    }

    let cells = d * w;
    let v2dt2 = v2dt2_field(map, cfg.dt);
    let taper = sponge_profile(d, w, cfg.sponge_width, cfg.sponge_strength);
    let inv_dx2 = 1.0 / (map.dx() as f64 * map.dx() as f64);
    let src_idx = shot.source.0 * w + shot.source.1;

    let mut p_prev = vec![0.0f64; cells];
    let mut p_cur = vec![0.0f64; cells];
    let mut p_next = vec![0.0f64; cells];
    let mut src = vec![0.0f64; cells];
    let mut data = vec![0.0f64; shot.receivers.len() * cfg.nt];

    for k in 0..cfg.nt {
        src[src_idx] = ricker(k as f64 * cfg.dt, cfg.source_freq, cfg.source_delay);
        step_kernel(
            &mut p_next, &p_prev, &p_cur, &v2dt2, &src, d, w, inv_dx2, cfg.stencil_order,
        );
        // Free surface: pressure vanishes at the top row.
        for cell in &mut p_next[..w] {
            *cell = 0.0;
        }
        // Absorbing strips damp the two newest fields; also watch for a
        // blown-up field while we're touching every cell anyway.
        let mut finite = true;
        for i in 0..cells {
            p_next[i] *= taper[i];
            p_cur[i] *= taper[i];
            finite &= p_next[i].is_finite();
        }
        if !finite {
            return Err(SimError::DivergenceDetected { step: k });
        }
        for (ri, &(row, col)) in shot.receivers.iter().enumerate() {
            data[ri * cfg.nt + k] = p_next[row * w + col];
        }
        std::mem::swap(&mut p_prev, &mut p_cur);
        std::mem::swap(&mut p_cur, &mut p_next);
    }

    SeismicGather::from_parts(
        shot.receivers.iter().map(|&(r, c)| (r as u32, c as u32)).collect(),
        cfg.nt,
        cfg.dt as f32,
        data,
    )
}

/// Simulate every map against every shot, in parallel over maps.
///
/// Results come back in input order, one entry per map holding that map's
/// gathers (one per shot) or its first error.
pub fn batch_forward(
    maps: &[VelocityMap],
    cfg: &SimConfig,
    shots: &[ShotGeometry],
) -> Vec<Result<Vec<SeismicGather>, SimError>> {
    maps.par_iter()
        .map(|map| {
            shots
                .iter()
                .map(|shot| simulate(map, cfg, shot))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform_map(d: usize, w: usize, v: f32, dx: f32) -> VelocityMap {
        VelocityMap::new(d, w, dx, vec![v; d * w]).unwrap()
    }

    fn basic_cfg(dt: f64, nt: usize, order: StencilOrder) -> SimConfig {
        SimConfig {
            dt,
            nt,
            stencil_order: order,
            source_freq: 15.0,
            source_delay: 0.08,
            sponge_width: 4,
            sponge_strength: 0.3,
        }
    }

    #[test]
    fn ricker_peaks_at_delay_and_is_symmetric() {
        assert_eq!(ricker(0.08, 15.0, 0.08), 1.0);
        for off in [0.001, 0.01, 0.03] {
            let lo = ricker(0.08 - off, 15.0, 0.08);
            let hi = ricker(0.08 + off, 15.0, 0.08);
            assert!((lo - hi).abs() < 1e-15, "symmetric around the peak");
            assert!(lo < 1.0);
        }
        // Far from the peak the wavelet is effectively zero.
        assert!(ricker(1.0, 15.0, 0.08).abs() < 1e-30);
        // Zero crossings at tau = +/- 1/(pi f sqrt(2)).
        let tau0 = 1.0 / (std::f64::consts::PI * 15.0 * 2.0f64.sqrt());
        assert!(ricker(0.08 + tau0, 15.0, 0.08).abs() < 1e-12);
    }

    #[test]
    fn cfl_limits_are_pinned() {
        assert_eq!(cfl_limit(StencilOrder::Two), std::f64::consts::FRAC_1_SQRT_2);
        assert_eq!(cfl_limit(StencilOrder::Four), 0.606);
    }

    #[test]
    fn check_cfl_boundary_cases() {
        let map = uniform_map(8, 8, 2000.0, 10.0);
        // Exactly at the limit passes; a hair above fails.
        let dt_limit = cfl_limit(StencilOrder::Two) * 10.0 / 2000.0;
        assert!(check_cfl(&map, &basic_cfg(dt_limit, 10, StencilOrder::Two)).is_ok());
        let too_big = dt_limit * (1.0 + 1e-9);
        match check_cfl(&map, &basic_cfg(too_big, 10, StencilOrder::Two)) {
            Err(SimError::CflViolation { ratio, limit, max_dt }) => {
                assert!(ratio > limit);
                assert!((max_dt - dt_limit).abs() < 1e-15);
            }
            other => panic!("expected CFL violation, got {other:?}"),
        }
        // The fourth-order limit is tighter.
        let dt4 = 0.606 * 10.0 / 2000.0;
        assert!(check_cfl(&map, &basic_cfg(dt4, 10, StencilOrder::Four)).is_ok());
        assert!(check_cfl(&map, &basic_cfg(dt4 * 1.01, 10, StencilOrder::Four)).is_err());
    }

    #[test]
    fn stencil_order_parses_from_integers_only() {
        assert_eq!(StencilOrder::try_from(2u32).unwrap(), StencilOrder::Two);
        assert_eq!(StencilOrder::try_from(4u32).unwrap(), StencilOrder::Four);
        assert!(StencilOrder::try_from(3u32).is_err());
    }

    #[test]
    fn step_matches_hand_computed_five_point_stencil() {
        // 5x5 grid, dx = 2, dt = 0.1, v = 3 everywhere. Probe the center.
        let map = uniform_map(5, 5, 3.0, 2.0);
        let mut p_cur = vec![0.0f64; 25];
        p_cur[2 * 5 + 2] = 1.0; // center
        p_cur[1 * 5 + 2] = 0.5; // up
        p_cur[3 * 5 + 2] = 0.25; // down
        p_cur[2 * 5 + 1] = -1.0; // left
        p_cur[2 * 5 + 3] = 2.0; // right
        let p_prev = vec![0.125f64; 25];
        let src = vec![0.0f64; 25];
        let out = step(&p_prev, &p_cur, &map, &src, 0.1, StencilOrder::Two).unwrap();
        // lap = (0.5 + 0.25 - 1.0 + 2.0 - 4*1.0) / 4 = -2.25 / 4
        // p_next = 2*1.0 - 0.125 + 9*0.01 * (-0.5625) = 1.875 - 0.050625
        let expected = 2.0 * 1.0 - 0.125 + 9.0 * 0.01 * (-2.25 / 4.0);
        assert!((out[12] - expected).abs() < 1e-15, "{} vs {expected}", out[12]);
    }

    #[test]
    fn step_source_term_is_subtracted() {
        let map = uniform_map(3, 3, 2.0, 1.0);
        let p = vec![0.0f64; 9];
        let mut src = vec![0.0f64; 9];
        src[4] = 0.5;
        let out = step(&p, &p, &map, &src, 0.25, StencilOrder::Two).unwrap();
        // p_next = 0 + v^2 dt^2 (0 - 0.5) = 4 * 0.0625 * -0.5
        assert_eq!(out[4], -0.125);
    }

    #[test]
    fn step_fourth_order_interior_and_fallback() {
        let map = uniform_map(7, 7, 1.0, 1.0);
        let mut p_cur = vec![0.0f64; 49];
        // A column pulse through the probe column so the row-axis term is
        // exercised along with the column axis.
        for (offset, val) in [(-2isize, 1.0), (-1, 2.0), (0, 3.0), (1, 5.0), (2, 7.0)] {
            let r = (3 + offset) as usize;
            p_cur[r * 7 + 3] = val;
        }
        let p_prev = vec![0.0f64; 49];
        let src = vec![0.0f64; 49];
        let out = step(&p_prev, &p_cur, &map, &src, 0.5, StencilOrder::Four).unwrap();
        // Row axis at (3,3): (-1 + 16*2 - 30*3 + 16*5 - 7) / 12 = 14/12.
        // Col axis: neighbors are zero: (0 - 30*3 + 0)/12 via the
        // difference form = (16(0-3)*2 - (0-3)*2)/12 = -90/12.
        let lap = (14.0 - 90.0) / 12.0;
        let expected = 2.0 * 3.0 + 0.25 * lap;
        assert!((out[3 * 7 + 3] - expected).abs() < 1e-12);
        // One cell from the edge the kernel downgrades to second order.
        let mut p2 = vec![0.0f64; 49];
        p2[1 * 7 + 1] = 1.0;
        p2[0 * 7 + 1] = 0.5;
        p2[2 * 7 + 1] = 0.5;
        p2[1 * 7 + 0] = 0.5;
        p2[1 * 7 + 2] = 0.5;
        let out2 = step(&p_prev, &p2, &map, &src, 0.5, StencilOrder::Four).unwrap();
        let lap2 = 4.0 * 0.5 - 4.0 * 1.0;
        assert_eq!(out2[1 * 7 + 1], 2.0 * 1.0 + 0.25 * lap2);
    }

    #[test]
    fn constant_field_is_an_exact_fixed_point() {
        // 0.1 has no exact binary representation; the difference-form
        // Laplacian must still return exactly zero.
        for order in [StencilOrder::Two, StencilOrder::Four] {
            let map = uniform_map(8, 9, 1500.0, 10.0);
            let p = vec![0.1f64; 72];
            let src = vec![0.0f64; 72];
            let out = step(&p, &p, &map, &src, 1e-3, order).unwrap();
            assert_eq!(out, p, "{order:?}");
        }
    }

    #[test]
    fn zero_source_keeps_the_field_identically_zero() {
        let map = uniform_map(12, 12, 1500.0, 10.0);
        let p = vec![0.0f64; 144];
        let src = vec![0.0f64; 144];
        for order in [StencilOrder::Two, StencilOrder::Four] {
            let out = step(&p, &p, &map, &src, 1e-3, order).unwrap();
            assert!(out.iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn simulate_is_deterministic_and_finite() {
        let map = uniform_map(24, 24, 1500.0, 10.0);
        let cfg = basic_cfg(2e-3, 120, StencilOrder::Four);
        let shot = ShotGeometry {
            source: (1, 12),
            receivers: vec![(1, 4), (1, 12), (1, 20)],
        };
        let a = simulate(&map, &cfg, &shot).unwrap();
        let b = simulate(&map, &cfg, &shot).unwrap();
        assert_eq!(a, b, "bit-identical reruns");
        assert!(a.samples().iter().all(|s| s.is_finite()));
        assert!(a.max_abs() > 0.0, "the wave actually reached a receiver");
        assert_eq!(a.n_receivers(), 3);
        assert_eq!(a.nt(), 120);
        assert_eq!(a.trace(1).len(), 120);
    }

    #[test]
    fn simulate_rejects_bad_shots_and_bad_configs() {
        let map = uniform_map(8, 8, 1500.0, 10.0);
        let cfg = basic_cfg(1e-3, 10, StencilOrder::Two);
        let bad_src = ShotGeometry {
            source: (8, 0),
            receivers: vec![(1, 1)],
        };
        assert!(matches!(
            simulate(&map, &cfg, &bad_src),
            Err(SimError::ShotOutsideGrid { row: 8, .. })
        ));
        let bad_rec = ShotGeometry {
            source: (1, 1),
            receivers: vec![(1, 9)],
        };
        assert!(matches!(
            simulate(&map, &cfg, &bad_rec),
            Err(SimError::ShotOutsideGrid { col: 9, .. })
        ));
        let no_rec = ShotGeometry {
            source: (1, 1),
            receivers: vec![],
        };
        assert!(matches!(
            simulate(&map, &cfg, &no_rec),
            Err(SimError::BadGather(_))
        ));
        let mut bad_cfg = cfg.clone();
        bad_cfg.dt = -1.0;
        assert!(matches!(
            simulate(&map, &bad_cfg, &ShotGeometry { source: (1, 1), receivers: vec![(1, 2)] }),
            Err(SimError::BadConfig(_))
        ));
        let mut violating = cfg;
        violating.dt = 0.1;
        assert!(matches!(
            check_cfl(&map, &violating),
            Err(SimError::CflViolation { .. })
        ));
    }

    #[test]
    fn free_surface_pins_the_top_row() {
        let map = uniform_map(16, 16, 1500.0, 10.0);
        let cfg = basic_cfg(2e-3, 80, StencilOrder::Two);
        let shot = ShotGeometry {
            source: (3, 8),
            receivers: vec![(0, 8), (3, 8)],
        };
        let g = simulate(&map, &cfg, &shot).unwrap();
        assert!(g.trace(0).iter().all(|&s| s == 0.0), "surface receiver silent");
        assert!(g.trace(1).iter().any(|&s| s != 0.0));
    }

    #[test]
    fn sponge_profile_shape() {
        let taper = sponge_profile(10, 10, 3, 0.5);
        // Interior cells untouched.
        assert_eq!(taper[4 * 10 + 5], 1.0);
        // Top corners are governed by the side strips (no top strip), and
        // damping deepens toward the edge.
        let left_edge = taper[5 * 10];
        let one_in = taper[5 * 10 + 1];
        assert!(left_edge < one_in && one_in < 1.0);
        let expected_edge = (-(0.5f64 * 3.0 / 3.0).powi(2)).exp();
        assert!((left_edge - expected_edge).abs() < 1e-15);
        // Bottom edge damped too; top row (away from the sides) is not.
        assert!(taper[9 * 10 + 5] < 1.0);
        assert_eq!(taper[5], 1.0);
        // Width zero disables everything.
        assert!(sponge_profile(6, 6, 0, 0.5).iter().all(|&t| t == 1.0));
    }

    #[test]
    fn batch_forward_preserves_order_and_collects_errors() {
        let good = uniform_map(10, 10, 1000.0, 10.0);
        let fast = uniform_map(10, 10, 9000.0, 10.0); // breaks the CFL gate
        let cfg = basic_cfg(5e-3, 20, StencilOrder::Two);
        let shot = ShotGeometry {
            source: (1, 5),
            receivers: vec![(1, 2)],
        };
        let results = batch_forward(
            &[good.clone(), fast, good.clone()],
            &cfg,
            std::slice::from_ref(&shot),
        );
        assert_eq!(results.len(), 3);
        assert!(results[0].is_ok());
        assert!(matches!(results[1], Err(SimError::CflViolation { .. })));
        assert!(results[2].is_ok());
        let a = results[0].as_ref().unwrap();
        let c = results[2].as_ref().unwrap();
        assert_eq!(a, c, "same map, same gathers");
    }

    #[test]
    fn gather_from_parts_validates() {
        assert!(SeismicGather::from_parts(vec![], 4, 0.001, vec![]).is_err());
        assert!(SeismicGather::from_parts(vec![(0, 0)], 0, 0.001, vec![]).is_err());
        assert!(SeismicGather::from_parts(vec![(0, 0)], 2, 0.0, vec![0.0, 0.0]).is_err());
        assert!(SeismicGather::from_parts(vec![(0, 0)], 2, 0.001, vec![0.0]).is_err());
        assert!(
            SeismicGather::from_parts(vec![(0, 0)], 2, 0.001, vec![0.0, f64::NAN]).is_err()
        );
        assert!(SeismicGather::from_parts(vec![(0, 0)], 2, 0.001, vec![0.0, 1.0]).is_ok());
    }
}
