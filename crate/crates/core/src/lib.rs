//! geoforge-core: velocity-map transformation and acoustic forward modeling
//! for synthetic seismic datasets.
//!
//! The library turns a small set of subsurface velocity maps (a leak-free
//! baseline plus maps carrying a CO2-leakage velocity anomaly) into training
//! pairs for time-lapse monitoring models:
//!
//! 1. [`generator`] proposes new leakage maps by jittering and warping the
//!    anomaly of an existing one, or imports externally produced maps.
//! 2. [`leakage`] isolates the anomaly, splits it at a random horizontal
//!    line, and relocates it so it sits at the top of the shallow layer.
//! 3. [`align`] rewrites the relocated anomaly's velocity distribution to
//!    match per-layer target distributions via empirical-CDF quantile
//!    mapping, so the moved leak is statistically plausible at its new depth.
//! 4. [`forward`] runs a 2D acoustic finite-difference simulation over the
//!    finished map to produce the paired seismic gather.
//! 5. [`metrics`] scores reconstructions (SSIM / MAE / MSE) and evaluates a
//!    blended fine-tuning loss over privileged and unprivileged batches.
//! 6. [`pipeline`] wires the stages into a deterministic, seeded batch run
//!    driven by a TOML config.
//!
//! Grids are row-major with row 0 at the surface; velocities are stored as
//! `f32` (matching the on-disk formats in [`io`]) and all arithmetic that
//! feeds decisions or outputs is carried out in `f64`.

pub mod align;
pub mod forward;
pub mod generator;
pub mod io;
pub mod leakage;
pub mod metrics;
pub mod model;
pub mod pipeline;
