//! Shared scene builder for CLI integration tests: a miniature but complete
//! working directory (baseline, condition maps, target CDFs, config) that
//! the binary can run against with all paths relative to that directory.

use std::path::Path;
use std::process::Command;

use geoforge_core::align::EmpiricalCdf;
use geoforge_core::io::save_map;
use geoforge_core::model::{Grid, VelocityMap};

pub const DEPTH: usize = 28;
pub const WIDTH: usize = 28;

pub fn baseline_values() -> Vec<f32> {
    let mut vals = Vec::with_capacity(DEPTH * WIDTH);
    for r in 0..DEPTH {
        for _ in 0..WIDTH {
            vals.push(1500.0 + 30.0 * r as f32);
        }
    }
    vals
}

/// Populate `dir` with a complete scene and write `cfg.toml` (relative
/// paths only, so two directories populated this way are interchangeable).
pub fn write_scene(dir: &Path) {
    let baseline = VelocityMap::new(DEPTH, WIDTH, 10.0, baseline_values()).unwrap();
    save_map(&baseline, &dir.join("baseline.gfvm")).unwrap();

    let cond_dir = dir.join("conditions");
    std::fs::create_dir_all(&cond_dir).unwrap();
    for (i, (r0, c0)) in [(14usize, 8usize), (16, 14)].iter().enumerate() {
        let mut vals = baseline.values().to_vec();
        for r in *r0..r0 + 6 {
            for c in *c0..c0 + 7 {
                vals[r * WIDTH + c] -= 280.0 + ((r + c) % 4) as f32 * 30.0;
            }
        }
        let cond = VelocityMap::new(DEPTH, WIDTH, 10.0, vals).unwrap();
        save_map(&cond, &cond_dir.join(format!("cond_{i}.gfvm"))).unwrap();
    }

    let shallow: Vec<f64> = (0..40).map(|i| 1480.0 + 6.0 * i as f64).collect();
    let inter: Vec<f64> = (0..40).map(|i| 1650.0 + 8.0 * i as f64).collect();
    EmpiricalCdf::from_samples(&shallow, 0.0)
        .unwrap()
        .write_csv(&dir.join("shallow.csv"))
        .unwrap();
    EmpiricalCdf::from_samples(&inter, 0.0)
        .unwrap()
        .write_csv(&dir.join("inter.csv"))
        .unwrap();

    std::fs::write(
        dir.join("cfg.toml"),
        r#"[paths]
baseline = "baseline.gfvm"
condition_dir = "conditions"
output_dir = "out"
target_shallow_cdf = "shallow.csv"
target_intermediate_cdf = "inter.csv"

[layers]
shallow_end = 9
intermediate_end = 20

[sim]
dt = 0.0015
nt = 60
source_freq = 12.0
source_delay = 0.09
sponge_width = 5

[shot]
source_col = 14
receiver_stride = 4

[run]
master_seed = 42
n_samples = 2
"#,
    )
    .unwrap();
}

/// The binary under test, with its working directory set to the scene.
pub fn geoforge(dir: &Path) -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_geoforge"));
    cmd.current_dir(dir);
    cmd
}
