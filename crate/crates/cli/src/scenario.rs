//! Executes a configured run and writes its artifacts.
//!
//! Output layout:
//!
//! ```text
//! <out>/config.json         canonical config echo
//! <out>/manifest.json       seeds, stream layout, version, status
//! <out>/metrics.csv         one row per step
//! <out>/timing.csv          step,wall_ms (always measured)
//! <out>/moments.csv         per-snapshot mean and diagonal covariance
//! <out>/ring.csv            interaction runs only
//! <out>/map.ckpt            final (or last good) map
//! <out>/snapshots/index.csv step,t,file,rows
//! <out>/snapshots/step_XXXXXX.csv
//! ```

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde_json::json;

use pwgf_core::energy::{EnergyFunctional, Potential};
use pwgf_core::flow::{streams, Flow, PwgfState, RunMetrics, RunOutput, Snapshot};
use pwgf_core::maps::{write_checkpoint, PushforwardMap};
use pwgf_core::numerics::{ReferenceDensity, SampleBatch};
use pwgf_core::oracles::{mean_radius, ou_moments, ring_deviation, ZkbProfile};

use crate::config::{ComponentConfig, ReferenceConfig, RunConfig};
use crate::error::CliError;

/// Ring radius reported in `ring.csv`.
pub const RING_RADIUS: f64 = 0.5;

pub const MANIFEST_VERSION: u32 = 1;

/// Everything a finished run leaves in memory.
pub struct ScenarioRun {
    pub dir: PathBuf,
    pub output: RunOutput,
}

pub fn build_reference(cfg: &RunConfig) -> Result<Arc<dyn ReferenceDensity>, CliError> {
    Ok(match &cfg.reference {
        ReferenceConfig::Zkb { m, t } => Arc::new(ZkbProfile::new(cfg.dim, *m)?.at(*t)?),
        _ => Arc::new(cfg.sampler_spec()?),
    })
}

pub fn build_map(cfg: &RunConfig) -> Result<PushforwardMap, CliError> {
    Ok(PushforwardMap::identity(
        cfg.architecture()?,
        cfg.dim,
        cfg.map_seed(),
        cfg.map.init_scale,
    )?)
}

pub fn build_flow(cfg: &RunConfig) -> Result<Flow, CliError> {
    Ok(Flow::new(cfg.energy()?, build_reference(cfg)?, cfg.flow_config()?)?)
}

/// Initial isotropic Gaussian `(m₀, σ₀²)` when the run is the OU problem
/// (quadratic potential, affine map, one isotropic Gaussian component).
pub fn ou_setup(cfg: &RunConfig) -> Option<(Vec<f64>, f64, f64)> {
    let diffusion = match cfg.energy().ok()? {
        EnergyFunctional::RelativeEntropy {
            potential: Potential::Quadratic,
            diffusion,
        } => diffusion,
        _ => return None,
    };
    if cfg.map.architecture != "affine" {
        return None;
    }
    let components = match &cfg.reference {
        ReferenceConfig::Gaussian { components } if components.len() == 1 => components,
        _ => return None,
    };
    match &components[0] {
        ComponentConfig::Gaussian { mean, std, .. } => {
            let s0 = std[0];
            std.iter()
                .all(|s| *s == s0)
                .then(|| (mean.clone(), s0 * s0, diffusion))
        }
        _ => None,
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", path.display())))
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

pub fn snapshot_file_name(step: usize) -> String {
    format!("step_{step:06}.csv")
}

/// Writes points as CSV with header `x0..x{d−1}` and 17 significant digits.
pub fn write_points<W: Write>(out: &mut W, batch: &SampleBatch, rows: usize) -> std::io::Result<()> {
    let header: Vec<String> = (0..batch.dim()).map(|i| format!("x{i}")).collect();
    writeln!(out, "{}", header.join(","))?;
    for p in batch.iter().take(rows) {
        let cells: Vec<String> = p.iter().map(|v| format!("{v:.16e}")).collect();
        writeln!(out, "{}", cells.join(","))?;
    }
    Ok(())
}

fn write_snapshots(dir: &Path, snapshots: &[Snapshot], rows: Option<usize>) -> Result<(), CliError> {
    let sdir = dir.join("snapshots");
    fs::create_dir_all(&sdir).map_err(io_err(&sdir))?;
    let index_path = sdir.join("index.csv");
    let mut index = create(&index_path)?;
    writeln!(index, "step,t,file,rows").map_err(io_err(&index_path))?;
    for s in snapshots {
        let name = snapshot_file_name(s.step);
        let path = sdir.join(&name);
        let n = rows.unwrap_or(s.points.len()).min(s.points.len());
        let mut f = create(&path)?;
        write_points(&mut f, &s.points, n).map_err(io_err(&path))?;
        f.flush().map_err(io_err(&path))?;
        writeln!(index, "{},{:?},{name},{n}", s.step, s.t).map_err(io_err(&index_path))?;
    }
    index.flush().map_err(io_err(&index_path))?;
    Ok(())
}

fn write_moments(dir: &Path, cfg: &RunConfig, snapshots: &[Snapshot]) -> Result<(), CliError> {
    let d = cfg.dim;
    let path = dir.join("moments.csv");
    let mut f = create(&path)?;
    let ou = ou_setup(cfg);
    let mut header = vec!["step".to_string(), "t".to_string()];
    header.extend((0..d).map(|i| format!("mean{i}")));
    header.extend((0..d).map(|i| format!("var{i}")));
    if ou.is_some() {
        header.extend((0..d).map(|i| format!("oracle_mean{i}")));
        header.push("oracle_var".into());
    }
    let w = io_err(&path);
    writeln!(f, "{}", header.join(",")).map_err(&w)?;
    for s in snapshots {
        let mean = s.points.mean();
        let cov = s.points.covariance();
        let mut cells = vec![s.step.to_string(), format!("{:?}", s.t)];
        cells.extend(mean.iter().map(|v| format!("{v:?}")));
        cells.extend((0..d).map(|i| format!("{:?}", cov[i * d + i])));
        if let Some((m0, var0, diffusion)) = &ou {
            let o = ou_moments(m0, *var0, *diffusion, s.t - cfg.integrator.t0)?;
            cells.extend(o.mean.iter().map(|v| format!("{v:?}")));
            cells.push(format!("{:?}", o.variance));
        }
        writeln!(f, "{}", cells.join(",")).map_err(&w)?;
    }
    f.flush().map_err(&w)?;
    Ok(())
}

/// Ring statistics about the sample mean: `mean_radius` and
/// `ring_deviation = mean |‖x − x̄‖ − 0.5|`.
pub fn ring_row(points: &SampleBatch) -> (Vec<f64>, f64, f64) {
    (
        points.mean(),
        mean_radius(points),
        ring_deviation(points, RING_RADIUS),
    )
}

fn write_ring(dir: &Path, snapshots: &[Snapshot]) -> Result<(), CliError> {
    let path = dir.join("ring.csv");
    let mut f = create(&path)?;
    let w = io_err(&path);
    writeln!(f, "step,t,center0,center1,mean_radius,ring_deviation").map_err(&w)?;
    for s in snapshots {
        let (c, r, dev) = ring_row(&s.points);
        let c1 = c.get(1).copied().unwrap_or(0.0);
        writeln!(f, "{},{:?},{:?},{:?},{:?},{:?}", s.step, s.t, c[0], c1, r, dev).map_err(&w)?;
    }
    f.flush().map_err(&w)?;
    Ok(())
}

fn write_metrics(dir: &Path, metrics: &RunMetrics, timing: bool) -> Result<(), CliError> {
    let path = dir.join("metrics.csv");
    let mut f = create(&path)?;
    metrics.write_csv(&mut f, timing)?;
    f.flush().map_err(io_err(&path))?;
    let path = dir.join("timing.csv");
    let mut f = create(&path)?;
    let w = io_err(&path);
    writeln!(f, "step,wall_ms").map_err(&w)?;
    for r in metrics.records() {
        writeln!(f, "{},{:.3}", r.step, r.wall_ms).map_err(&w)?;
    }
    f.flush().map_err(&w)?;
    Ok(())
}

fn write_map(dir: &Path, map: &PushforwardMap) -> Result<(), CliError> {
    let path = dir.join("map.ckpt");
    let mut f = create(&path)?;
    write_checkpoint(map, &mut f)?;
    f.flush().map_err(io_err(&path))?;
    Ok(())
}

fn manifest(cfg: &RunConfig, state: &PwgfState, error: Option<&str>) -> serde_json::Value {
    json!({
        "format": MANIFEST_VERSION,
        "tool": "pwgf",
        "version": env!("CARGO_PKG_VERSION"),
        "scenario": cfg.scenario,
        "status": if error.is_some() { "failed" } else { "completed" },
        "error": error,
        "steps_completed": state.step,
        "final_time": state.t,
        "param_count": state.map.param_count(),
        "threads": rayon::current_num_threads(),
        "seeds": {
            "global": cfg.seed,
            "map_init": cfg.map_seed(),
        },
        "rng": {
            "generator": "ChaCha8",
            "streams": {
                "energy_eval": streams::EVAL,
                "snapshot": streams::SNAPSHOT,
                "energy_eval_pairs": streams::EVAL_PAIRS,
                "step_batch": "2^32 + 4*step + stage",
                "step_pairs": "2*2^32 + 4*step + stage",
                "map_init": "stream 0 of seeds.map_init",
            },
            "resampling": cfg.integrator.resampling,
        },
        "config": cfg.to_value(),
    })
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("json value serializes");
    fs::write(path, text + "\n").map_err(io_err(path))
}

fn write_artifacts(
    dir: &Path,
    cfg: &RunConfig,
    state: &PwgfState,
    metrics: &RunMetrics,
    snapshots: &[Snapshot],
    error: Option<&str>,
) -> Result<(), CliError> {
    write_metrics(dir, metrics, !cfg.integrator.deterministic)?;
    write_snapshots(dir, snapshots, cfg.snapshots.rows)?;
    write_moments(dir, cfg, snapshots)?;
    if matches!(cfg.energy()?, EnergyFunctional::Interaction { .. }) {
        write_ring(dir, snapshots)?;
    }
    write_map(dir, &state.map)?;
    write_json(&dir.join("manifest.json"), &manifest(cfg, state, error))
}

/// Runs `cfg` and writes all artifacts under `dir`. A failing run still
/// writes its partial artifacts and a manifest with `"status": "failed"`.
pub fn run_scenario(cfg: &RunConfig, dir: &Path) -> Result<ScenarioRun, CliError> {
    run_scenario_with(cfg, dir, |_| {})
}

/// [`run_scenario`] with a per-step progress callback `(step, t, energy)`.
pub fn run_scenario_with<F: FnMut((usize, f64, f64))>(
    cfg: &RunConfig,
    dir: &Path,
    mut progress: F,
) -> Result<ScenarioRun, CliError> {
    cfg.validate()?;
    let flow = build_flow(cfg)?;
    let map = build_map(cfg)?;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    fs::write(dir.join("config.json"), cfg.to_canonical_json() + "\n").map_err(io_err(dir))?;
    match flow.run_with(map, |r| progress((r.step, r.t, r.energy))) {
        Ok(output) => {
            write_artifacts(dir, cfg, &output.state, &output.metrics, &output.snapshots, None)?;
            Ok(ScenarioRun {
                dir: dir.to_path_buf(),
                output,
            })
        }
        Err(failure) => {
            let msg = failure.error.to_string();
            write_artifacts(
                dir,
                cfg,
                &failure.state,
                &failure.metrics,
                &failure.snapshots,
                Some(&msg),
            )?;
            Err(match failure.error {
                pwgf_core::Error::Io(e) => CliError::Io(e.to_string()),
                _ => CliError::Numerical(format!("{msg} (partial artifacts in {})", dir.display())),
            })
        }
    }
}
