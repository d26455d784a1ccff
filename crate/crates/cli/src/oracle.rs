//! Oracle generators exposed on the command line.

use std::path::Path;

use pwgf_core::numerics::SampleBatch;
use pwgf_core::oracles::{
    empirical_w2_subsampled, ou_moments, particle_simulate, zkb_sample, ZkbProfile,
};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::scenario::{build_flow, ring_row, write_points};

/// Exact ZKB samples as CSV text, preceded by a comment line with the
/// profile constants.
pub fn zkb_csv(dim: usize, m: f64, t: f64, n: usize, seed: u64) -> Result<String, CliError> {
    let profile = ZkbProfile::new(dim, m)?;
    let (batch, rate) = zkb_sample(&profile, t, n, seed)?;
    let mut out = format!(
        "# alpha={:?} beta={:?} k={:?} C={:?} radius={:?} acceptance={rate:.4}\n",
        profile.alpha,
        profile.beta,
        profile.k,
        profile.c,
        profile.support_radius(t)
    );
    let mut buf = Vec::new();
    write_points(&mut buf, &batch, batch.len())?;
    out.push_str(&String::from_utf8(buf).expect("ascii"));
    Ok(out)
}

/// OU moments as JSON.
pub fn ou_json(m0: &[f64], var0: f64, diffusion: f64, t: f64) -> Result<String, CliError> {
    let o = ou_moments(m0, var0, diffusion, t)?;
    Ok(serde_json::json!({"t": t, "mean": o.mean, "variance": o.variance}).to_string())
}

/// Direct particle simulation from the configured initial samples, using
/// the metric batch size and the configured `h` and step count. Returns a
/// CSV of ring statistics per recorded frame.
pub fn particles_csv(cfg: &RunConfig, record_every: usize) -> Result<String, CliError> {
    let flow = build_flow(cfg)?;
    let initial = flow.draw(cfg.sampling.n_metric, pwgf_core::flow::streams::SNAPSHOT);
    let frames = particle_simulate(
        flow.energy(),
        &initial,
        cfg.integrator.h,
        cfg.integrator.steps,
        record_every.max(1),
    )?;
    let every = record_every.max(1);
    let mut out = String::from("step,t,center0,center1,mean_radius,ring_deviation\n");
    for (k, frame) in frames.iter().enumerate() {
        let step = (k * every).min(cfg.integrator.steps);
        let (c, r, dev) = ring_row(frame);
        out.push_str(&format!(
            "{step},{:?},{:?},{:?},{r:?},{dev:?}\n",
            cfg.integrator.t0 + step as f64 * cfg.integrator.h,
            c[0],
            c.get(1).copied().unwrap_or(0.0),
        ));
    }
    Ok(out)
}

/// Reads a snapshot-format CSV (header line, then one point per row).
pub fn read_points(path: &Path) -> Result<SampleBatch, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for line in text.lines().filter(|l| !l.starts_with('#') && !l.is_empty()).skip(1) {
        let row: Result<Vec<f64>, _> = line.split(',').map(|c| c.trim().parse::<f64>()).collect();
        rows.push(row.map_err(|_| CliError::Io(format!("{}: bad row '{line}'", path.display())))?);
    }
    SampleBatch::from_points(&rows).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// Empirical W2 between two point files; sub-sampled above the exact limit.
pub fn w2_report(a: &Path, b: &Path, seed: u64) -> Result<String, CliError> {
    let (pa, pb) = (read_points(a)?, read_points(b)?);
    let est = empirical_w2_subsampled(&pa, &pb, 1024, 8, seed)?;
    if est.draws.len() == 1 {
        Ok(format!("{:?}\n", est.median))
    } else {
        Ok(format!(
            "{:?} (median of {} draws of 1024, range {:?}..{:?})\n",
            est.median,
            est.draws.len(),
            est.min,
            est.max
        ))
    }
}
