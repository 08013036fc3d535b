//! The batch pipeline: TOML config, validation, seeded orchestration of
//! propose -> relocate -> align -> forward, and the output manifest.
//!
//! Determinism contract: a run is a pure function of (config, master seed).
//! Each sample derives its own seed as `master_seed ^ sample_index`, and
//! every random stage namespaces that seed with a fixed constant, so stages
//! can be re-run standalone (see the CLI) and reproduce the pipeline's
//! outputs bit for bit. Worker count never changes results — samples are
//! independent and collected in input order.
//!
//! Failure handling: per-sample conditions that make a sample impossible
//! (no leak signature, the moved leak leaving the grid, a CFL violation,
//! a diverging simulation) mark that sample `skipped:<Reason>` in the
//! manifest; anything else (I/O failures, malformed inputs) aborts the run.
//! The manifest is written last, atomically, so its rows always describe
//! files that really exist.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::align::{align_perturbation, AlignError, AlignMode, AlignSpec, EmpiricalCdf};
use crate::forward::{check_cfl, simulate, SeismicGather, ShotGeometry, SimConfig, SimError};
use crate::generator::{import_maps, propose_map, GeneratorError, ProposalParams};
use crate::io::{save_gather, save_map, write_atomic, IoError};
use crate::leakage::{
    crop_leakage, default_crop_threshold, move_to_boundary, split_horizontal, LeakageError,
    SplitLeakage,
};
use crate::model::{
    recompose, subtract_baseline, Grid, LayerProfile, ModelError, Perturbation, VelocityMap,
};

// Stage seed namespaces. XORed onto the per-sample seed so distinct random
// stages never share an RNG stream.
const SEED_NS_PROPOSE: u64 = 0x70726f_706f7365; // "propose"
const SEED_NS_SPLIT: u64 = 0x73706c_6974; // "split"

/// Seed for sample `index` of a run.
pub fn sample_seed(master_seed: u64, index: usize) -> u64 {
    master_seed ^ index as u64
}

/// Seed consumed by the proposal stage of one sample.
pub fn propose_seed(sample_seed: u64) -> u64 {
    sample_seed ^ SEED_NS_PROPOSE
}

/// Seed consumed by the split stage of one sample.
pub fn split_seed(sample_seed: u64) -> u64 {
    sample_seed ^ SEED_NS_SPLIT
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("cannot read config {path}: {msg}")]
    ConfigRead { path: PathBuf, msg: String },
    #[error("invalid config:\n  - {}", issues.join("\n  - "))]
    InvalidConfig { issues: Vec<String> },
    #[error("no usable condition maps in {0}")]
    NoConditionMaps(PathBuf),
    #[error("worker pool: {0}")]
    Pool(String),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Leakage(#[from] LeakageError),
    #[error(transparent)]
    Align(#[from] AlignError),
    #[error(transparent)]
    Generator(#[from] GeneratorError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

// ---------------------------------------------------------------------------
// Configuration.

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: PathsConfig,
    pub layers: LayerProfile,
    #[serde(default)]
    pub thresholds: ThresholdConfig,
    #[serde(default)]
    pub proposal: ProposalConfig,
    pub sim: SimConfig,
    pub shot: ShotConfig,
    pub run: RunConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    /// Leak-free baseline map (binary or CSV).
    pub baseline: PathBuf,
    /// Directory of condition maps to synthesize proposals from. Exactly
    /// one of `condition_dir` / `external_dir` must be set.
    #[serde(default)]
    pub condition_dir: Option<PathBuf>,
    /// Directory of externally produced leaked maps, used as-is.
    #[serde(default)]
    pub external_dir: Option<PathBuf>,
    pub output_dir: PathBuf,
    /// Target velocity distribution for the shallow layer (CDF CSV).
    pub target_shallow_cdf: PathBuf,
    /// Target velocity distribution for the intermediate layer (CDF CSV).
    pub target_intermediate_cdf: PathBuf,
}

/// How the leak crop threshold is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThLRule {
    /// One third of the perturbation's peak value (per sample).
    #[serde(alias = "max_over_3")]
    MaxOverThree,
    /// The fixed value in `th_l_value`.
    Fixed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdConfig {
    pub th_l_rule: ThLRule,
    /// Crop threshold when `th_l_rule = "fixed"`; ignored otherwise.
    pub th_l_value: f64,
    /// Participation floor for shallow-layer alignment (velocity drop).
    pub th_s: f64,
    /// Participation floor for intermediate-layer alignment.
    pub th_m: f64,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        ThresholdConfig {
            th_l_rule: ThLRule::MaxOverThree,
            th_l_value: 0.0,
            th_s: 50.0,
            th_m: 50.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProposalConfig {
    pub jitter_min: f64,
    pub jitter_max: f64,
    pub smooth_warp_sigma: f64,
    pub warp_max_shift: usize,
}

impl Default for ProposalConfig {
    fn default() -> Self {
        ProposalConfig {
            jitter_min: 0.8,
            jitter_max: 1.3,
            smooth_warp_sigma: 2.0,
            warp_max_shift: 2,
        }
    }
}

fn default_one() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShotConfig {
    #[serde(default = "default_one")]
    pub source_row: usize,
    pub source_col: usize,
    /// Receivers sit on this row, every `receiver_stride` columns starting
    /// at column 0.
    #[serde(default = "default_one")]
    pub receiver_row: usize,
    #[serde(default = "default_one")]
    pub receiver_stride: usize,
}

fn default_v_min() -> f32 {
    300.0
}
fn default_v_max() -> f32 {
    6000.0
}
fn default_align_mode() -> AlignMode {
    AlignMode::Absolute
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub master_seed: u64,
    pub n_samples: usize,
    /// Physical clamp range applied wherever a map is recomposed.
    #[serde(default = "default_v_min")]
    pub v_min: f32,
    #[serde(default = "default_v_max")]
    pub v_max: f32,
    #[serde(default = "default_align_mode")]
    pub align_mode: AlignMode,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsConfig {
    /// Shared normalization range for SSIM.
    pub norm_min: f32,
    pub norm_max: f32,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            norm_min: default_v_min(),
            norm_max: default_v_max(),
        }
    }
}

/// Parse a config file.
pub fn load_config(path: &Path) -> Result<PipelineConfig, PipelineError> {
    load_config_with_overrides(path, &[])
}

/// Parse a config file, then apply `key.path = value` overrides before
/// typed deserialization (so overrides face the same validation as the
/// file itself).
pub fn load_config_with_overrides(
    path: &Path,
    overrides: &[(String, String)],
) -> Result<PipelineConfig, PipelineError> {
    let err = |msg: String| PipelineError::ConfigRead {
        path: path.to_path_buf(),
        msg,
    };
    let text = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
    let mut value: toml::Value = text.parse().map_err(|e: toml::de::Error| err(e.to_string()))?;
    for (key, raw) in overrides {
        apply_override(&mut value, key, raw).map_err(err)?;
    }
    value.try_into().map_err(|e: toml::de::Error| err(e.to_string()))
}

/// Interpret an override value with TOML literal rules: int, then float,
/// then bool, then string.
fn parse_override_value(raw: &str) -> toml::Value {
    if let Ok(v) = raw.parse::<i64>() {
        return toml::Value::Integer(v);
    }
    if let Ok(v) = raw.parse::<f64>() {
        return toml::Value::Float(v);
    }
    if let Ok(v) = raw.parse::<bool>() {
        return toml::Value::Boolean(v);
    }
    toml::Value::String(raw.to_string())
}

fn apply_override(root: &mut toml::Value, key: &str, raw: &str) -> Result<(), String> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(format!("override key {key:?} has an empty segment"));
    }
    let mut node = root;
    for part in &parts[..parts.len() - 1] {
        let table = node
            .as_table_mut()
            .ok_or_else(|| format!("override {key:?}: {part:?} is not a table"))?;
        node = table
            .entry(part.to_string())
            .or_insert(toml::Value::Table(Default::default()));
    }
    let table = node
        .as_table_mut()
        .ok_or_else(|| format!("override {key:?}: parent is not a table"))?;
    table.insert(
        parts.last().unwrap().to_string(),
        parse_override_value(raw),
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// Validation.

/// Check everything checkable before a run: referenced files load, the
/// layer profile and shot geometry fit the baseline, thresholds and ranges
/// make sense, and the baseline passes the CFL gate. All problems are
/// collected and reported together.
pub fn validate_config(cfg: &PipelineConfig) -> Result<(), PipelineError> {
    let mut issues: Vec<String> = Vec::new();
    let mut push = |s: String| issues.push(s);

    match (&cfg.paths.condition_dir, &cfg.paths.external_dir) {
        (Some(_), Some(_)) => push(
            "paths: condition_dir and external_dir are both set; pick one".into(),
        ),
        (None, None) => push(
            "paths: one of condition_dir or external_dir must be set".into(),
        ),
        (Some(d), None) | (None, Some(d)) => {
            if !d.is_dir() {
                push(format!("paths: {} is not a readable directory", d.display()));
            }
        }
    }

    let baseline = match crate::io::load_map(&cfg.paths.baseline) {
        Ok(b) => Some(b),
        Err(e) => {
            push(format!("paths.baseline: {e}"));
            None
        }
    };

    for (label, path) in [
        ("paths.target_shallow_cdf", &cfg.paths.target_shallow_cdf),
        (
            "paths.target_intermediate_cdf",
            &cfg.paths.target_intermediate_cdf,
        ),
    ] {
        if let Err(e) = EmpiricalCdf::read_csv(path) {
            push(format!("{label}: {e}"));
        }
    }

    if let Some(b) = &baseline {
        if let Err(e) = cfg.layers.validate_for(b.depth_cells()) {
            push(format!("layers: {e}"));
        }
        let (d, w) = (b.depth_cells(), b.width_cells());
        if cfg.shot.source_row >= d || cfg.shot.source_col >= w {
            push(format!(
                "shot: source ({}, {}) outside {d}x{w} baseline",
                cfg.shot.source_row, cfg.shot.source_col
            ));
        }
        if cfg.shot.receiver_row >= d {
            push(format!(
                "shot: receiver_row {} outside {d}x{w} baseline",
                cfg.shot.receiver_row
            ));
        }
        // The real gate runs per sample; the baseline is the best available
        // proxy for catching a hopeless dt before any work happens.
        if let Err(e) = check_cfl(b, &cfg.sim) {
            push(format!("sim: {e}"));
        }
    } else if let Err(e) = cfg.sim.validate() {
        push(format!("sim: {e}"));
    }

    if cfg.shot.receiver_stride == 0 {
        push("shot: receiver_stride must be at least 1".into());
    }

    if !(cfg.thresholds.th_s.is_finite() && cfg.thresholds.th_s >= 0.0) {
        push(format!(
            "thresholds.th_s must be nonnegative, got {}",
            cfg.thresholds.th_s
        ));
    }
    if !(cfg.thresholds.th_m.is_finite() && cfg.thresholds.th_m >= 0.0) {
        push(format!(
            "thresholds.th_m must be nonnegative, got {}",
            cfg.thresholds.th_m
        ));
    }
    if cfg.thresholds.th_l_rule == ThLRule::Fixed
        && !(cfg.thresholds.th_l_value.is_finite() && cfg.thresholds.th_l_value > 0.0)
    {
        push(format!(
            "thresholds.th_l_value must be positive under the fixed rule, got {}",
            cfg.thresholds.th_l_value
        ));
    }

    let params = ProposalParams {
        jitter_min: cfg.proposal.jitter_min,
        jitter_max: cfg.proposal.jitter_max,
        smooth_warp_sigma: cfg.proposal.smooth_warp_sigma,
        warp_max_shift: cfg.proposal.warp_max_shift,
        seed: 0,
    };
    if let Err(e) = params.validate() {
        push(format!("proposal: {e}"));
    }

    if cfg.run.n_samples == 0 {
        push("run.n_samples must be at least 1".into());
    }
    if !(cfg.run.v_min.is_finite()
        && cfg.run.v_max.is_finite()
        && cfg.run.v_min > 0.0
        && cfg.run.v_min <= cfg.run.v_max)
    {
        push(format!(
            "run: clamp range [{}, {}] invalid",
            cfg.run.v_min, cfg.run.v_max
        ));
    }
    if !(cfg.metrics.norm_min.is_finite()
        && cfg.metrics.norm_max.is_finite()
        && cfg.metrics.norm_min < cfg.metrics.norm_max)
    {
        push(format!(
            "metrics: normalization range [{}, {}] invalid",
            cfg.metrics.norm_min, cfg.metrics.norm_max
        ));
    }

    if issues.is_empty() {
        Ok(())
    } else {
        Err(PipelineError::InvalidConfig { issues })
    }
}

// ---------------------------------------------------------------------------
// Shared stage helpers (the CLI calls these too, which is what makes a
// chain of stage subcommands reproduce `pipeline` bit for bit).

/// Resolve the crop threshold for one sample's perturbation.
pub fn resolve_crop_threshold(
    thresholds: &ThresholdConfig,
    pert: &Perturbation,
) -> Result<f64, LeakageError> {
    match thresholds.th_l_rule {
        ThLRule::MaxOverThree => default_crop_threshold(pert),
        ThLRule::Fixed => Ok(thresholds.th_l_value),
    }
}

/// The complete relocation stage: subtract the baseline, crop at the
/// resolved threshold, split at a seeded row (single-row signatures stay
/// whole), translate to the shallow boundary.
///
/// `seed` is the *sample* seed; the split RNG is namespaced internally.
pub fn relocate_leak(
    map: &VelocityMap,
    baseline: &VelocityMap,
    thresholds: &ThresholdConfig,
    profile: &LayerProfile,
    seed: u64,
) -> Result<(Perturbation, usize, f64), PipelineError> {
    let pert = subtract_baseline(baseline, map)?;
    let th_l = resolve_crop_threshold(thresholds, &pert)?;
    let cropped = crop_leakage(&pert, th_l)?;
    let split = match split_horizontal(&cropped, split_seed(seed)) {
        Ok(s) => s,
        Err(LeakageError::SingleRowLeakage) => SplitLeakage::all_lower(&cropped),
        Err(e) => return Err(e.into()),
    };
    let split_row = split.split_row;
    let moved = move_to_boundary(&split, profile)?;
    Ok((moved, split_row, th_l))
}

/// The alignment stage: rewrite the moved perturbation's distribution and
/// recompose the final clamped velocity map.
pub fn align_and_recompose(
    v3: &Perturbation,
    baseline: &VelocityMap,
    spec: &AlignSpec,
    profile: &LayerProfile,
    v_min: f32,
    v_max: f32,
) -> Result<VelocityMap, PipelineError> {
    let aligned = align_perturbation(v3, baseline, spec, profile)?;
    Ok(recompose(baseline, &aligned, v_min, v_max)?)
}

/// Build the alignment spec from the config's CDF files and thresholds.
pub fn build_align_spec(cfg: &PipelineConfig) -> Result<AlignSpec, PipelineError> {
    Ok(AlignSpec {
        target_shallow: EmpiricalCdf::read_csv(&cfg.paths.target_shallow_cdf)?,
        target_intermediate: EmpiricalCdf::read_csv(&cfg.paths.target_intermediate_cdf)?,
        th_s: cfg.thresholds.th_s,
        th_m: cfg.thresholds.th_m,
        mode: cfg.run.align_mode,
    })
}

/// Build the shot geometry for a grid `width` columns wide.
pub fn build_shot(shot: &ShotConfig, width: usize) -> ShotGeometry {
    let receivers = (0..width)
        .step_by(shot.receiver_stride.max(1))
        .map(|c| (shot.receiver_row, c))
        .collect();
    ShotGeometry {
        source: (shot.source_row, shot.source_col),
        receivers,
    }
}

// ---------------------------------------------------------------------------
// The batch run.

/// One manifest row.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub sample_id: String,
    pub seed: u64,
    /// `"ok"` or `"skipped:<Reason>"`.
    pub status: String,
    /// Output paths relative to the output dir; empty when skipped.
    pub vmap: String,
    pub gather: String,
    /// File name of the condition/external map this sample started from.
    pub condition: String,
    pub split_row: Option<usize>,
    pub th_l: Option<f64>,
}

impl SampleRecord {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

struct RunInputs {
    baseline: VelocityMap,
    /// (file name, map); proposals synthesize from these, external maps are
    /// used directly.
    conditions: Vec<(String, VelocityMap)>,
    external: bool,
    align_spec: AlignSpec,
    shot: ShotGeometry,
}

fn load_inputs(cfg: &PipelineConfig) -> Result<RunInputs, PipelineError> {
    let baseline = crate::io::load_map(&cfg.paths.baseline)?;
    let (dir, external) = match (&cfg.paths.condition_dir, &cfg.paths.external_dir) {
        (Some(d), None) => (d, false),
        (None, Some(d)) => (d, true),
        // validate_config already rejected the other combinations.
        _ => unreachable!("validated config has exactly one map source"),
    };
    let imported = import_maps(dir, &baseline)?;
    if imported.maps.is_empty() {
        return Err(PipelineError::NoConditionMaps(dir.clone()));
    }
    let align_spec = build_align_spec(cfg)?;
    let shot = build_shot(&cfg.shot, baseline.width_cells());
    Ok(RunInputs {
        baseline,
        conditions: imported.maps,
        external,
        align_spec,
        shot,
    })
}

/// Classify errors that mark a single sample as skipped rather than
/// aborting the whole run.
fn skip_reason(err: &PipelineError) -> Option<&'static str> {
    match err {
        PipelineError::Generator(GeneratorError::NoLeakSignature)
        | PipelineError::Leakage(LeakageError::EmptyLeakage) => Some("EmptyLeakage"),
        PipelineError::Leakage(LeakageError::OutOfGrid { .. }) => Some("OutOfGrid"),
        PipelineError::Sim(SimError::CflViolation { .. }) => Some("CflViolation"),
        PipelineError::Sim(SimError::DivergenceDetected { .. }) => Some("DivergenceDetected"),
        _ => None,
    }
}

struct SampleOutput {
    record: SampleRecord,
    map: Option<(PathBuf, VelocityMap)>,
    gather: Option<(PathBuf, SeismicGather)>,
}

fn process_sample(
    cfg: &PipelineConfig,
    inputs: &RunInputs,
    index: usize,
) -> Result<SampleOutput, PipelineError> {
    let sample_id = format!("{index:05}");
    let seed = sample_seed(cfg.run.master_seed, index);
    let (cond_name, condition) = &inputs.conditions[index % inputs.conditions.len()];

    let mut split_row = None;
    let mut th_l = None;
    let mut stage = || -> Result<(VelocityMap, SeismicGather), PipelineError> {
        let map = if inputs.external {
            condition.clone()
        } else {
            let params = ProposalParams {
                jitter_min: cfg.proposal.jitter_min,
                jitter_max: cfg.proposal.jitter_max,
                smooth_warp_sigma: cfg.proposal.smooth_warp_sigma,
                warp_max_shift: cfg.proposal.warp_max_shift,
                seed: propose_seed(seed),
            };
            propose_map(
                condition,
                &inputs.baseline,
                &params,
                cfg.run.v_min,
                cfg.run.v_max,
            )?
        };
        let (moved, srow, th) =
            relocate_leak(&map, &inputs.baseline, &cfg.thresholds, &cfg.layers, seed)?;
        split_row = Some(srow);
        th_l = Some(th);
        let final_map = align_and_recompose(
            &moved,
            &inputs.baseline,
            &inputs.align_spec,
            &cfg.layers,
            cfg.run.v_min,
            cfg.run.v_max,
        )?;
        check_cfl(&final_map, &cfg.sim)?;
        let gather = simulate(&final_map, &cfg.sim, &inputs.shot)?;
        Ok((final_map, gather))
    };

    match stage() {
        Ok((map, gather)) => {
            let vmap_rel = format!("vmaps/{sample_id}.gfvm");
            let gather_rel = format!("gathers/{sample_id}.gfsg");
            Ok(SampleOutput {
                record: SampleRecord {
                    sample_id,
                    seed,
                    status: "ok".into(),
                    vmap: vmap_rel.clone(),
                    gather: gather_rel.clone(),
                    condition: cond_name.clone(),
                    split_row,
                    th_l,
                },
                map: Some((cfg.paths.output_dir.join(vmap_rel), map)),
                gather: Some((cfg.paths.output_dir.join(gather_rel), gather)),
            })
        }
        Err(e) => match skip_reason(&e) {
            Some(reason) => {
                log::warn!("sample {sample_id}: skipped ({reason}): {e}");
                Ok(SampleOutput {
                    record: SampleRecord {
                        sample_id,
                        seed,
                        status: format!("skipped:{reason}"),
                        vmap: String::new(),
                        gather: String::new(),
                        condition: cond_name.clone(),
                        split_row,
                        th_l,
                    },
                    map: None,
                    gather: None,
                })
            }
            None => Err(e),
        },
    }
}

fn manifest_text(cfg: &PipelineConfig, records: &[SampleRecord]) -> String {
    use std::fmt::Write as _;
    let mut s = String::new();
    s.push_str("# pipeline manifest\n# config:\n");
    let echo = toml::to_string_pretty(cfg).unwrap_or_else(|e| format!("<unserializable: {e}>"));
    for line in echo.lines() {
        let _ = writeln!(s, "#   {line}");
    }
    s.push_str("sample_id,seed,status,vmap,gather,condition,split_row,th_l\n");
    for r in records {
        let split = r.split_row.map(|v| v.to_string()).unwrap_or_default();
        let th = r.th_l.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.sample_id, r.seed, r.status, r.vmap, r.gather, r.condition, split, th
        );
    }
    s
}

/// Run the full pipeline. Worker count comes from the `GEOFORGE_WORKERS`
/// environment variable when set (otherwise one worker per CPU); results
/// never depend on it.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<Vec<SampleRecord>, PipelineError> {
    let workers = std::env::var("GEOFORGE_WORKERS")
        .ok()
        .and_then(|s| match s.parse::<usize>() {
            Ok(n) => Some(n),
            Err(_) => {
                log::warn!("ignoring unparsable GEOFORGE_WORKERS={s:?}");
                None
            }
        });
    run_pipeline_with_workers(cfg, workers)
}

/// [`run_pipeline`] with an explicit worker count (`None` = one per CPU).
pub fn run_pipeline_with_workers(
    cfg: &PipelineConfig,
    workers: Option<usize>,
) -> Result<Vec<SampleRecord>, PipelineError> {
    validate_config(cfg)?;
    let inputs = load_inputs(cfg)?;
    let out = &cfg.paths.output_dir;
    for sub in ["vmaps", "gathers"] {
        fs::create_dir_all(out.join(sub)).map_err(|e| IoError::Io {
            path: out.join(sub),
            source: e,
        })?;
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or(0))
        .build()
        .map_err(|e| PipelineError::Pool(e.to_string()))?;
    let outputs: Vec<Result<SampleOutput, PipelineError>> = pool.install(|| {
        (0..cfg.run.n_samples)
            .into_par_iter()
            .map(|i| process_sample(cfg, &inputs, i))
            .collect()
    });

    // Persist outputs in sample order (single writer). A persistence failure
    // is unrecoverable, but the manifest is still flushed first so that it
    // describes exactly the samples whose files made it to disk.
    let mut records = Vec::with_capacity(outputs.len());
    let mut fatal = None;
    for output in outputs {
        match output.and_then(persist_sample) {
            Ok(record) => records.push(record),
            Err(e) => {
                fatal = Some(e);
                break;
            }
        }
    }
    let flushed = write_atomic(&out.join("manifest.csv"), manifest_text(cfg, &records).as_bytes());
    match fatal {
        Some(e) => Err(e),
        None => {
            flushed?;
            Ok(records)
        }
    }
}

/// Write one sample's files and hand back its record. If the gather fails
/// after the map was written, the map is removed again: a sample either has
/// both files and a manifest row, or neither.
fn persist_sample(output: SampleOutput) -> Result<SampleRecord, PipelineError> {
    if let Some((path, map)) = &output.map {
        save_map(map, path)?;
    }
    if let Some((path, gather)) = &output.gather {
        if let Err(e) = save_gather(gather, path) {
            if let Some((map_path, _)) = &output.map {
                let _ = fs::remove_file(map_path);
            }
            return Err(e.into());
        }
    }
    Ok(output.record)
}
