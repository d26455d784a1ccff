//! Named scenario presets. Each full-scale preset has a `-ci` variant sized
//! to finish in minutes on one core.

use crate::config::{
    ComponentConfig, EnergyConfig, IntegratorConfig, MapConfig, OutputConfig, ReferenceConfig,
    RunConfig, SamplingConfig, SnapshotConfig, SolverConfig,
};
use crate::error::CliError;

pub const DEFAULT_SEED: u64 = 20240501;

/// Every accepted preset name.
pub const PRESET_NAMES: [&str; 16] = [
    "fpe-styblinski",
    "fpe-styblinski-ci",
    "fpe-ou",
    "fpe-ou-ci",
    "pme-zkb",
    "pme-zkb-ci",
    "pme-zkb-d2",
    "pme-zkb-d2-ci",
    "pme-zkb-d5",
    "pme-zkb-d15",
    "pme-gaussian-mixture",
    "pme-gaussian-mixture-ci",
    "pme-mixed",
    "pme-mixed-ci",
    "aggregation",
    "aggregation-ci",
];

fn map(architecture: &str, layers: Option<usize>, hidden: Option<Vec<usize>>) -> MapConfig {
    MapConfig {
        architecture: architecture.into(),
        layers,
        hidden,
        init_scale: 1.0,
        seed: None,
    }
}

fn gaussian(weight: f64, mean: f64, variance: f64, d: usize) -> ComponentConfig {
    ComponentConfig::Gaussian {
        weight,
        mean: vec![mean; d],
        std: vec![variance.sqrt(); d],
    }
}

fn euler(h: f64, steps: usize, t0: f64) -> IntegratorConfig {
    IntegratorConfig {
        method: "euler".into(),
        h,
        steps,
        t0,
        resampling: "frozen-per-step".into(),
        deterministic: true,
    }
}

fn sampling(n: usize, n_energy: usize, n_snapshot: usize) -> SamplingConfig {
    SamplingConfig {
        n_metric: n,
        n_energy,
        n_pairs: None,
        n_snapshot,
    }
}

fn snapshots(times: &[f64]) -> SnapshotConfig {
    SnapshotConfig {
        times: times.to_vec(),
        rows: None,
    }
}

fn base(
    scenario: &str,
    dim: usize,
    map: MapConfig,
    reference: ReferenceConfig,
    energy: EnergyConfig,
    integrator: IntegratorConfig,
    sampling: SamplingConfig,
    snapshots: SnapshotConfig,
) -> RunConfig {
    RunConfig {
        scenario: scenario.into(),
        dim,
        seed: DEFAULT_SEED,
        map,
        reference,
        energy,
        integrator,
        solver: SolverConfig::default(),
        sampling,
        snapshots,
        output: OutputConfig::default(),
    }
}

fn fpe_styblinski(ci: bool) -> RunConfig {
    let d = if ci { 2 } else { 30 };
    let (n, n_energy) = if ci { (4000, 4000) } else { (12000, 12000) };
    base(
        "fpe-styblinski",
        d,
        map("planar-flow-stack", Some(40), None),
        ReferenceConfig::Gaussian {
            components: vec![gaussian(1.0, 0.0, 1.0, d)],
        },
        EnergyConfig::RelativeEntropy {
            potential: "styblinski-tang".into(),
            diffusion: 1.0,
        },
        euler(0.005, 300, 0.0),
        sampling(n, n_energy, 2000),
        snapshots(&[0.0, 0.3, 0.6, 0.9, 1.2, 1.5]),
    )
}

fn fpe_ou(ci: bool) -> RunConfig {
    let mut cfg = base(
        "fpe-ou",
        2,
        map("affine", None, None),
        ReferenceConfig::Gaussian {
            components: vec![gaussian(1.0, 1.0, 1.0, 2)],
        },
        EnergyConfig::RelativeEntropy {
            potential: "quadratic".into(),
            diffusion: 1.0,
        },
        euler(0.005, 200, 0.0),
        sampling(if ci { 500 } else { 5000 }, if ci { 2000 } else { 20000 }, 1_000_000),
        snapshots(&[0.0, 0.25, 0.5, 0.75, 1.0]),
    );
    cfg.snapshots.rows = Some(2000);
    cfg
}

/// ZKB runs at `d ∈ {2, 5, 15}` with `(m, t₀) = (2.4, 0.1), (3, 1), (2, 1)`.
fn pme_zkb(d: usize, ci: bool) -> RunConfig {
    let (m, t0) = match d {
        2 => (2.4, 0.1),
        5 => (3.0, 1.0),
        _ => (2.0, 1.0),
    };
    let (h, steps, n, hidden) = if ci {
        (1e-3, 500, 3000, vec![16, 16])
    } else {
        (1e-4, 5000, 30000, vec![100, 100, 100])
    };
    let times: Vec<f64> = (0..6).map(|i| t0 + 0.1 * i as f64).collect();
    let name = if d == 2 {
        "pme-zkb".to_string()
    } else {
        format!("pme-zkb-d{d}")
    };
    base(
        &name,
        d,
        map("residual-mlp", None, Some(hidden)),
        ReferenceConfig::Zkb { m, t: t0 },
        EnergyConfig::PmeInternal { m },
        euler(h, steps, t0),
        sampling(n, n, if ci { 3000 } else { 5000 }),
        snapshots(&times),
    )
}

fn pme_gaussian_mixture(ci: bool) -> RunConfig {
    let d = 10;
    let (h, steps, n, hidden) = if ci {
        (1e-2, 400, 1500, vec![16, 16])
    } else {
        (1e-3, 4000, 15000, vec![100, 100, 100])
    };
    base(
        "pme-gaussian-mixture",
        d,
        map("residual-mlp", None, Some(hidden)),
        ReferenceConfig::GaussianMixture {
            components: vec![gaussian(0.2, 0.0, 0.1, d), gaussian(0.8, 2.0, 0.2, d)],
        },
        EnergyConfig::PmeInternal { m: 3.0 },
        euler(h, steps, 0.0),
        sampling(n, n, if ci { 2000 } else { 5000 }),
        snapshots(&[0.0, 2.0, 4.0]),
    )
}

fn pme_mixed(ci: bool) -> RunConfig {
    let d = 5;
    let (h, steps, n, hidden) = if ci {
        (1e-2, 400, 2000, vec![16, 16])
    } else {
        (1e-3, 4000, 20000, vec![100, 100, 100])
    };
    base(
        "pme-mixed",
        d,
        map("residual-mlp", None, Some(hidden)),
        ReferenceConfig::Mixed {
            components: vec![
                gaussian(0.2, 2.0, 0.1, d),
                ComponentConfig::UniformBox {
                    weight: 0.8,
                    lower: vec![-1.0; d],
                    upper: vec![1.0; d],
                },
            ],
        },
        EnergyConfig::PmeInternal { m: 3.0 },
        euler(h, steps, 0.0),
        sampling(n, n, if ci { 2000 } else { 5000 }),
        snapshots(&[0.0, 2.0, 4.0]),
    )
}

fn aggregation(ci: bool) -> RunConfig {
    let (h, steps, n) = if ci { (1e-2, 1500, 1000) } else { (1e-3, 15000, 10000) };
    base(
        "aggregation",
        2,
        map("residual-mlp", None, Some(vec![50, 50])),
        ReferenceConfig::Gaussian {
            components: vec![gaussian(1.0, 1.25, 0.6, 2)],
        },
        EnergyConfig::Interaction { a: 4.0, b: 2.0 },
        euler(h, steps, 0.0),
        sampling(n, n, n),
        snapshots(&[0.0, 3.0, 6.0, 9.0, 12.0, 15.0]),
    )
}

/// Looks up a preset by name.
pub fn preset(name: &str) -> Result<RunConfig, CliError> {
    let (stem, ci) = match name.strip_suffix("-ci") {
        Some(s) => (s, true),
        None => (name, false),
    };
    let mut cfg = match stem {
        "fpe-styblinski" => fpe_styblinski(ci),
        "fpe-ou" => fpe_ou(ci),
        "pme-zkb" | "pme-zkb-d2" => pme_zkb(2, ci),
        "pme-zkb-d5" if !ci => pme_zkb(5, false),
        "pme-zkb-d15" if !ci => pme_zkb(15, false),
        "pme-gaussian-mixture" => pme_gaussian_mixture(ci),
        "pme-mixed" => pme_mixed(ci),
        "aggregation" => aggregation(ci),
        _ => {
            return Err(CliError::Config(format!(
                "unknown preset '{name}'; known presets: {}",
                PRESET_NAMES.join(", ")
            )))
        }
    };
    if ci {
        cfg.scenario.push_str("-ci");
    }
    cfg.validate()?;
    Ok(cfg)
}

/// One-line settings summary used by the preset table in the README.
pub fn settings_row(name: &str, cfg: &RunConfig) -> String {
    let map = match cfg.map.architecture.as_str() {
        "affine" => "affine".to_string(),
        "planar-flow-stack" => format!("planar ×{}", cfg.map.layers.unwrap_or(0)),
        _ => {
            let h = cfg.map.hidden.clone().unwrap_or_default();
            format!(
                "residual MLP {}×{}",
                h.len(),
                h.first().copied().unwrap_or(0)
            )
        }
    };
    let energy = match &cfg.energy {
        EnergyConfig::RelativeEntropy {
            potential,
            diffusion,
        } => format!("relative entropy, V={potential}, D={diffusion}"),
        EnergyConfig::PmeInternal { m } => format!("porous medium, m={m}"),
        EnergyConfig::Interaction { a, b } => format!("interaction, a={a}, b={b}"),
        EnergyConfig::LinearPotential { potential } => format!("potential energy, V={potential}"),
    };
    let t0 = cfg.integrator.t0;
    let t1 = t0 + cfg.integrator.h * cfg.integrator.steps as f64;
    format!(
        "| {name} | {} | {map} | {energy} | {} | {} | {t0}→{} | {} |",
        cfg.dim,
        cfg.integrator.h,
        cfg.integrator.steps,
        round6(t1),
        cfg.sampling.n_metric,
    )
}

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_validates() {
        for name in PRESET_NAMES {
            let cfg = preset(name).unwrap();
            assert!(cfg.scenario.starts_with("fpe") || cfg.scenario.starts_with("pme") || cfg.scenario.starts_with("aggregation"));
        }
        assert!(preset("nope").is_err());
        assert!(preset("pme-zkb-d5-ci").is_err());
    }

    #[test]
    fn aggregation_settings() {
        let cfg = preset("aggregation").unwrap();
        assert_eq!(cfg.dim, 2);
        assert_eq!(cfg.energy, EnergyConfig::Interaction { a: 4.0, b: 2.0 });
        assert_eq!(cfg.map.hidden, Some(vec![50, 50]));
        assert_eq!(cfg.sampling.n_metric, 10000);
        match &cfg.reference {
            ReferenceConfig::Gaussian { components } => match &components[0] {
                ComponentConfig::Gaussian { mean, std, .. } => {
                    assert_eq!(mean, &vec![1.25, 1.25]);
                    assert!((std[0] * std[0] - 0.6).abs() < 1e-15);
                }
                _ => panic!(),
            },
            _ => panic!(),
        }
    }

    #[test]
    fn zkb_d2_settings() {
        let cfg = preset("pme-zkb-d2").unwrap();
        assert_eq!(cfg.reference, ReferenceConfig::Zkb { m: 2.4, t: 0.1 });
        assert_eq!(cfg.integrator.h, 1e-4);
        assert_eq!(cfg.integrator.steps, 5000);
        assert_eq!(cfg.sampling.n_metric, 30000);
        let t_end = cfg.integrator.t0 + cfg.integrator.h * cfg.integrator.steps as f64;
        assert!((t_end - 0.6).abs() < 1e-12);
    }
}
