//! Batch front end for the geoforge library.
//!
//! Every stage of the pipeline is exposed as its own subcommand so a run
//! can be reproduced piecewise: `propose`, `moveleak`, `align`, and
//! `forward` chained with the same config and per-sample seed produce
//! byte-identical files to one `pipeline` sample. Exit codes: 0 success,
//! 1 runtime failure (details on stderr), 2 usage error.

use std::collections::BTreeMap;
use std::error::Error;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use geoforge_core::forward::simulate;
use geoforge_core::generator::{propose_map, ProposalParams};
use geoforge_core::io::{load_map, load_pert, save_gather, save_map, save_pert, write_atomic};
use geoforge_core::metrics::compare;
use geoforge_core::model::Grid;
use geoforge_core::pipeline::{
    align_and_recompose, build_align_spec, build_shot, load_config_with_overrides, propose_seed,
    relocate_leak, run_pipeline_with_workers, validate_config, MetricsConfig, PipelineConfig,
};

#[derive(Parser)]
#[command(
    name = "geoforge",
    version,
    about = "Synthesize leak velocity maps and paired seismic gathers"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

/// Options shared by every config-driven subcommand.
#[derive(Args)]
struct ConfigArgs {
    /// Pipeline config (TOML).
    #[arg(long, value_name = "FILE")]
    config: PathBuf,
    /// Override one config value, e.g. --set run.master_seed=7 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<PipelineConfig, Box<dyn Error>> {
        let mut overrides = Vec::with_capacity(self.set.len());
        for pair in &self.set {
            let (key, value) = pair
                .split_once('=')
                .ok_or_else(|| format!("--set expects KEY=VALUE, got {pair:?}"))?;
            overrides.push((key.trim().to_string(), value.trim().to_string()));
        }
        Ok(load_config_with_overrides(&self.config, &overrides)?)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Check a config end to end without running anything.
    Validate {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Synthesize one proposal map from a condition map.
    Propose {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Condition map the proposal is derived from.
        #[arg(long, value_name = "FILE")]
        condition: PathBuf,
        /// Sample seed (the stage derives its own namespaced stream).
        #[arg(long)]
        seed: u64,
        /// Output velocity map.
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Extract a map's leak signature and relocate it to the shallow
    /// boundary; writes the moved perturbation.
    Moveleak {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Leaked velocity map to take the signature from.
        #[arg(long, value_name = "FILE")]
        map: PathBuf,
        /// Sample seed (the split derives its own namespaced stream).
        #[arg(long)]
        seed: u64,
        /// Output perturbation.
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Align a moved perturbation to the target layer distributions and
    /// recompose the final velocity map.
    Align {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Moved perturbation produced by `moveleak`.
        #[arg(long, value_name = "FILE")]
        pert: PathBuf,
        /// Output velocity map.
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Run the forward model on one velocity map.
    Forward {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Velocity map to shoot through.
        #[arg(long, value_name = "FILE")]
        map: PathBuf,
        /// Output gather.
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Compare predicted velocity maps against ground truth.
    Metrics {
        /// Predicted map, or a directory of them.
        #[arg(long, value_name = "PATH")]
        pred: PathBuf,
        /// Ground-truth map, or a directory matched by file name.
        #[arg(long, value_name = "PATH")]
        truth: PathBuf,
        /// Optional config supplying [metrics] normalization bounds.
        #[arg(long, value_name = "FILE")]
        config: Option<PathBuf>,
        /// Write the CSV report here instead of stdout.
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Run the full batch pipeline.
    Pipeline {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Worker threads (default: GEOFORGE_WORKERS, then one per CPU).
        #[arg(long)]
        workers: Option<usize>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<(), Box<dyn Error>> {
    match cli.cmd {
        Cmd::Validate { cfg } => {
            let cfg = cfg.load()?;
            validate_config(&cfg)?;
            println!("config OK");
        }
        Cmd::Propose {
            cfg,
            condition,
            seed,
            out,
        } => {
            let cfg = cfg.load()?;
            let baseline = load_map(&cfg.paths.baseline)?;
            let condition = load_map(&condition)?;
            let params = ProposalParams {
                jitter_min: cfg.proposal.jitter_min,
                jitter_max: cfg.proposal.jitter_max,
                smooth_warp_sigma: cfg.proposal.smooth_warp_sigma,
                warp_max_shift: cfg.proposal.warp_max_shift,
                seed: propose_seed(seed),
            };
            let map = propose_map(&condition, &baseline, &params, cfg.run.v_min, cfg.run.v_max)?;
            save_map(&map, &out)?;
            println!("wrote {}", out.display());
        }
        Cmd::Moveleak {
            cfg,
            map,
            seed,
            out,
        } => {
            let cfg = cfg.load()?;
            let baseline = load_map(&cfg.paths.baseline)?;
            let map = load_map(&map)?;
            let (moved, split_row, th_l) =
                relocate_leak(&map, &baseline, &cfg.thresholds, &cfg.layers, seed)?;
            save_pert(&moved, &out)?;
            println!("wrote {} (split_row={split_row} th_l={th_l})", out.display());
        }
        Cmd::Align { cfg, pert, out } => {
            let cfg = cfg.load()?;
            let baseline = load_map(&cfg.paths.baseline)?;
            let pert = load_pert(&pert)?;
            let spec = build_align_spec(&cfg)?;
            let map = align_and_recompose(
                &pert,
                &baseline,
                &spec,
                &cfg.layers,
                cfg.run.v_min,
                cfg.run.v_max,
            )?;
            save_map(&map, &out)?;
            println!("wrote {}", out.display());
        }
        Cmd::Forward { cfg, map, out } => {
            let cfg = cfg.load()?;
            let map = load_map(&map)?;
            let shot = build_shot(&cfg.shot, map.width_cells());
            let gather = simulate(&map, &cfg.sim, &shot)?;
            save_gather(&gather, &out)?;
            println!("wrote {}", out.display());
        }
        Cmd::Metrics {
            pred,
            truth,
            config,
            out,
        } => {
            let norms = match config {
                Some(path) => load_config_with_overrides(&path, &[])?.metrics,
                None => MetricsConfig::default(),
            };
            let report = metrics_report(&pred, &truth, &norms)?;
            match out {
                Some(path) => {
                    write_atomic(&path, report.as_bytes())?;
                    println!("wrote {}", path.display());
                }
                None => print!("{report}"),
            }
        }
        Cmd::Pipeline { cfg, workers } => {
            let cfg = cfg.load()?;
            let workers = workers.or_else(|| {
                std::env::var("GEOFORGE_WORKERS")
                    .ok()
                    .and_then(|s| s.parse().ok())
            });
            let records = run_pipeline_with_workers(&cfg, workers)?;
            let ok = records.iter().filter(|r| r.is_ok()).count();
            let skipped = records.len() - ok;
            println!(
                "{} samples: {ok} ok, {skipped} skipped; manifest at {}",
                records.len(),
                cfg.paths.output_dir.join("manifest.csv").display()
            );
        }
    }
    Ok(())
}

/// Pair predicted and truth maps, compare each pair, and render the CSV
/// report with a trailing mean row.
fn metrics_report(
    pred: &Path,
    truth: &Path,
    norms: &MetricsConfig,
) -> Result<String, Box<dyn Error>> {
    let pairs = pair_maps(pred, truth)?;
    let mut csv = String::from("sample_id,ssim,mae,mse\n");
    let (mut s_sum, mut a_sum, mut m_sum) = (0.0f64, 0.0f64, 0.0f64);
    for (name, pred_path, truth_path) in &pairs {
        let p = load_map(pred_path)?;
        let t = load_map(truth_path)?;
        let r = compare(&p, &t, norms.norm_min, norms.norm_max)?;
        csv.push_str(&format!("{name},{},{},{}\n", r.ssim, r.mae, r.mse));
        s_sum += r.ssim;
        a_sum += r.mae;
        m_sum += r.mse;
    }
    let n = pairs.len() as f64;
    csv.push_str(&format!("mean,{},{},{}\n", s_sum / n, a_sum / n, m_sum / n));
    Ok(csv)
}

/// Resolve (name, pred path, truth path) triples: two files compare
/// directly; two directories match by file name.
#[allow(clippy::type_complexity)]
fn pair_maps(pred: &Path, truth: &Path) -> Result<Vec<(String, PathBuf, PathBuf)>, Box<dyn Error>> {
    if pred.is_file() && truth.is_file() {
        let name = pred
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "sample".into());
        return Ok(vec![(name, pred.to_path_buf(), truth.to_path_buf())]);
    }
    if !(pred.is_dir() && truth.is_dir()) {
        return Err("--pred and --truth must both be files or both be directories".into());
    }
    let list = |dir: &Path| -> Result<BTreeMap<String, PathBuf>, Box<dyn Error>> {
        let mut out = BTreeMap::new();
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            if path.is_file() {
                if let Some(name) = path.file_name() {
                    out.insert(name.to_string_lossy().into_owned(), path);
                }
            }
        }
        Ok(out)
    };
    let preds = list(pred)?;
    let mut truths = list(truth)?;
    let pairs: Vec<_> = preds
        .into_iter()
        .filter_map(|(name, p)| truths.remove(&name).map(|t| (name, p, t)))
        .collect();
    if pairs.is_empty() {
        return Err(format!(
            "no file names shared between {} and {}",
            pred.display(),
            truth.display()
        )
        .into());
    }
    Ok(pairs)
}
