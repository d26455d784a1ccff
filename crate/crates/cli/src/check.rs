//! Quick self-test of the core invariants, run by `pwgf check`.

use pwgf_core::flow::{kernel_project, metric_matvec, MetricOperator};
use pwgf_core::energy::DriftField;
use pwgf_core::maps::{Architecture, PushforwardMap};
use pwgf_core::numerics::{
    dense_pinv_solve, minres_min_norm, sample_reference, DenseMatrix, MinresConfig, SamplerSpec,
};

use crate::error::CliError;
use crate::presets::{preset, PRESET_NAMES};

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn gaussian_vec(n: usize, seed: u64) -> Result<Vec<f64>, CliError> {
    let spec = SamplerSpec::standard_normal(n, seed)?;
    Ok(sample_reference(&spec, 1)?.into_flat())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn architectures() -> [Architecture; 3] {
    [
        Architecture::Affine,
        Architecture::PlanarFlowStack { layers: 3 },
        Architecture::ResidualMlp { hidden: vec![6, 5] },
    ]
}

fn metric_symmetry() -> Result<CheckResult, CliError> {
    let mut worst: f64 = 0.0;
    let mut min_quad = f64::INFINITY;
    for (k, arch) in architectures().into_iter().enumerate() {
        let d = 2;
        let map = PushforwardMap::random(arch, d, 7 + k as u64, 0.5)?;
        let batch = sample_reference(&SamplerSpec::standard_normal(d, 11)?, 64)?;
        let op = MetricOperator::new(&map, &batch, true)?;
        let n = map.param_count();
        let u = gaussian_vec(n, 100 + k as u64)?;
        let v = gaussian_vec(n, 200 + k as u64)?;
        let gu = metric_matvec(&op, &u)?;
        let gv = metric_matvec(&op, &v)?;
        let (a, b) = (dot(&v, &gu), dot(&u, &gv));
        worst = worst.max((a - b).abs() / a.abs().max(b.abs()).max(1e-300));
        min_quad = min_quad.min(dot(&v, &gv));
    }
    Ok(CheckResult {
        name: "metric symmetric and PSD",
        passed: worst < 1e-12 && min_quad >= 0.0,
        detail: format!("max relative asymmetry {worst:.2e}, min vᵀĜv {min_quad:.3e}"),
    })
}

fn minres_vs_pinv() -> Result<CheckResult, CliError> {
    // rank-3 PSD matrix B Bᵀ with B 5×3
    let b = DenseMatrix::new(5, 3, gaussian_vec(15, 5)?)?;
    let a = b.matmul(&b.transpose());
    let rhs = gaussian_vec(5, 6)?;
    let exact = dense_pinv_solve(&a, &rhs, 1e-12)?;
    let cfg = MinresConfig {
        tol: 1e-12,
        max_iter: Some(100),
    };
    let out = minres_min_norm(&a, &rhs, &cfg)?;
    let err = out
        .x
        .iter()
        .zip(&exact)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    Ok(CheckResult {
        name: "MINRES matches pseudo-inverse",
        passed: err < 1e-6,
        detail: format!("max abs difference {err:.2e}"),
    })
}

fn projection_idempotent() -> Result<CheckResult, CliError> {
    let d = 2;
    let map = PushforwardMap::random(Architecture::Affine, d, 3, 0.5)?;
    let batch = sample_reference(&SamplerSpec::standard_normal(d, 12)?, 128)?;
    let op = MetricOperator::new(&map, &batch, true)?;
    let f = DriftField::new(d, gaussian_vec(d * batch.len(), 13)?)?;
    let solver = MinresConfig::default();
    let (kf, _) = kernel_project(&op, &f, &solver)?;
    let (kkf, _) = kernel_project(&op, &kf, &solver)?;
    let norm = dot(kf.as_flat(), kf.as_flat()).sqrt();
    let diff: Vec<f64> = kf.as_flat().iter().zip(kkf.as_flat()).map(|(a, b)| a - b).collect();
    let rel = dot(&diff, &diff).sqrt() / norm.max(1e-300);
    Ok(CheckResult {
        name: "kernel projection idempotent (affine map)",
        passed: rel < 2.0 * solver.tol,
        detail: format!("‖𝒦𝒦f − 𝒦f‖/‖𝒦f‖ = {rel:.2e}"),
    })
}

fn jvp_vjp_adjoint() -> Result<CheckResult, CliError> {
    let mut worst: f64 = 0.0;
    for (k, arch) in architectures().into_iter().enumerate() {
        let d = 3;
        let map = PushforwardMap::random(arch, d, 21 + k as u64, 0.5)?;
        let z = gaussian_vec(d, 30 + k as u64)?;
        let v = gaussian_vec(map.param_count(), 40 + k as u64)?;
        let y = gaussian_vec(d, 50 + k as u64)?;
        let jv = map.param_jvp(&z, &v)?;
        let jty = map.param_vjp(&z, &y)?;
        let (a, b) = (dot(&y, &jv), dot(&v, &jty));
        worst = worst.max((a - b).abs() / a.abs().max(b.abs()).max(1e-300));
    }
    Ok(CheckResult {
        name: "parameter JVP/VJP adjoint",
        passed: worst < 1e-12,
        detail: format!("max relative mismatch {worst:.2e}"),
    })
}

fn presets_round_trip() -> Result<CheckResult, CliError> {
    let mut bad = Vec::new();
    for name in PRESET_NAMES {
        let cfg = preset(name)?;
        let text = cfg.to_canonical_json();
        let again = crate::config::parse_config(&text)?;
        if again != cfg || again.to_canonical_json() != text {
            bad.push(name);
        }
    }
    Ok(CheckResult {
        name: "preset configs round-trip",
        passed: bad.is_empty(),
        detail: if bad.is_empty() {
            format!("{} presets", PRESET_NAMES.len())
        } else {
            format!("failed: {}", bad.join(", "))
        },
    })
}

/// Runs every check; errors inside a check count as a failure.
pub fn run_checks() -> Vec<CheckResult> {
    let checks: [(&'static str, fn() -> Result<CheckResult, CliError>); 5] = [
        ("metric symmetric and PSD", metric_symmetry),
        ("MINRES matches pseudo-inverse", minres_vs_pinv),
        ("kernel projection idempotent (affine map)", projection_idempotent),
        ("parameter JVP/VJP adjoint", jvp_vjp_adjoint),
        ("preset configs round-trip", presets_round_trip),
    ];
    checks
        .iter()
        .map(|(name, f)| {
            f().unwrap_or_else(|e| CheckResult {
                name,
                passed: false,
                detail: e.to_string(),
            })
        })
        .collect()
}
