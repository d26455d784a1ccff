//! Plot-ready CSVs derived from a finished run directory.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use pwgf_core::oracles::ZkbProfile;

use crate::config::{parse_config, ReferenceConfig};
use crate::error::CliError;

/// Parsed snapshot: time and points (row-major).
struct SnapshotData {
    step: usize,
    t: f64,
    dim: usize,
    points: Vec<f64>,
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn bad(path: &Path, msg: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {msg}", path.display()))
}

fn parse_f64(path: &Path, s: &str) -> Result<f64, CliError> {
    s.trim()
        .parse()
        .map_err(|_| bad(path, format!("'{s}' is not a number")))
}

fn read_snapshot(path: &Path, step: usize, t: f64) -> Result<SnapshotData, CliError> {
    let text = read(path)?;
    let mut lines = text.lines();
    let dim = lines
        .next()
        .ok_or_else(|| bad(path, "empty snapshot"))?
        .split(',')
        .count();
    let mut points = Vec::new();
    for line in lines.filter(|l| !l.is_empty()) {
        let before = points.len();
        for cell in line.split(',') {
            points.push(parse_f64(path, cell)?);
        }
        if points.len() - before != dim {
            return Err(bad(path, "ragged row"));
        }
    }
    Ok(SnapshotData {
        step,
        t,
        dim,
        points,
    })
}

/// Value at quantile `q` (nearest rank) of `values`.
pub fn quantile(values: &mut [f64], q: f64) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    let rank = ((q * n as f64).ceil() as usize).clamp(1, n);
    values[rank - 1]
}

/// Writes `<run>/plotdata/*` and returns the created paths.
pub fn emit_plotdata(run: &Path) -> Result<Vec<PathBuf>, CliError> {
    let required = ["config.json", "metrics.csv", "snapshots/index.csv"];
    let missing: Vec<&str> = required
        .iter()
        .copied()
        .filter(|f| !run.join(f).is_file())
        .collect();
    if !missing.is_empty() {
        return Err(CliError::Io(format!(
            "{} is not a completed run directory; missing: {}",
            run.display(),
            missing.join(", ")
        )));
    }
    let cfg = parse_config(&read(&run.join("config.json"))?)?;
    let index_path = run.join("snapshots/index.csv");
    let index = read(&index_path)?;
    let mut entries = Vec::new();
    for line in index.lines().skip(1).filter(|l| !l.is_empty()) {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 4 {
            return Err(bad(&index_path, format!("malformed row '{line}'")));
        }
        let step: usize = cells[0]
            .parse()
            .map_err(|_| bad(&index_path, format!("bad step '{}'", cells[0])))?;
        entries.push((step, parse_f64(&index_path, cells[1])?, cells[2].to_string()));
    }
    let absent: Vec<String> = entries
        .iter()
        .filter(|(_, _, f)| !run.join("snapshots").join(f).is_file())
        .map(|(_, _, f)| format!("snapshots/{f}"))
        .collect();
    if !absent.is_empty() {
        return Err(CliError::Io(format!("missing snapshot files: {}", absent.join(", "))));
    }

    let out = run.join("plotdata");
    fs::create_dir_all(&out).map_err(|e| bad(&out, e))?;
    let mut written = Vec::new();

    // energy or KL trace
    let metrics_path = run.join("metrics.csv");
    let metrics = read(&metrics_path)?;
    let mut lines = metrics.lines();
    let header: Vec<&str> = lines.next().unwrap_or_default().split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name);
    let (ti, ei, ki) = match (col("t"), col("energy"), col("kl")) {
        (Some(t), Some(e), Some(k)) => (t, e, k),
        _ => return Err(bad(&metrics_path, "unexpected header")),
    };
    let rows: Vec<Vec<&str>> = lines.filter(|l| !l.is_empty()).map(|l| l.split(',').collect()).collect();
    let has_kl = rows.iter().all(|r| r.get(ki).is_some_and(|v| !v.is_empty())) && !rows.is_empty();
    let (name, column, vi) = if has_kl {
        ("kl_curve.csv", "kl", ki)
    } else {
        ("energy_curve.csv", "energy", ei)
    };
    let mut text = format!("t,{column}\n");
    for r in &rows {
        text.push_str(&format!("{},{}\n", r[ti], r[vi]));
    }
    let path = out.join(name);
    fs::write(&path, text).map_err(|e| bad(&path, e))?;
    written.push(path);

    let snaps: Vec<SnapshotData> = entries
        .iter()
        .map(|(step, t, f)| read_snapshot(&run.join("snapshots").join(f), *step, *t))
        .collect::<Result<_, _>>()?;

    // scatter projections onto (x0, x1)
    for s in &snaps {
        let path = out.join(format!("scatter_step_{:06}.csv", s.step));
        let mut f = fs::File::create(&path).map_err(|e| bad(&path, e))?;
        let mut body = String::new();
        if s.dim >= 2 {
            body.push_str("t,x0,x1\n");
            for p in s.points.chunks_exact(s.dim) {
                body.push_str(&format!("{:?},{:.16e},{:.16e}\n", s.t, p[0], p[1]));
            }
        } else {
            body.push_str("t,x0\n");
            for v in &s.points {
                body.push_str(&format!("{:?},{v:.16e}\n", s.t));
            }
        }
        f.write_all(body.as_bytes()).map_err(|e| bad(&path, e))?;
        written.push(path);
    }

    // support radius for exact-profile runs
    if let ReferenceConfig::Zkb { m, .. } = cfg.reference {
        let profile = ZkbProfile::new(cfg.dim, m)?;
        let mut text = String::from("t,empirical_p99_radius,analytic_radius\n");
        for s in &snaps {
            let mut radii: Vec<f64> = s
                .points
                .chunks_exact(s.dim)
                .map(|p| p.iter().map(|v| v * v).sum::<f64>().sqrt())
                .collect();
            let p99 = if radii.is_empty() { f64::NAN } else { quantile(&mut radii, 0.99) };
            text.push_str(&format!("{:?},{p99:?},{:?}\n", s.t, profile.support_radius(s.t)));
        }
        let path = out.join("support.csv");
        fs::write(&path, text).map_err(|e| bad(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank_quantile() {
        let mut v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(quantile(&mut v, 0.99), 99.0);
        assert_eq!(quantile(&mut v, 1.0), 100.0);
        assert_eq!(quantile(&mut [3.0], 0.5), 3.0);
    }

    #[test]
    fn empty_dir_is_error() {
        let dir = tempfile::tempdir().unwrap();
        let err = emit_plotdata(dir.path()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("metrics.csv") && msg.contains("config.json"), "{msg}");
        assert_eq!(err.exit_code(), 4);
    }
}
