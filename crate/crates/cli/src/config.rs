//! Run configuration: JSON on disk, unknown keys rejected, every field
//! validated before a run starts.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use pwgf_core::energy::{EnergyFunctional, Potential};
use pwgf_core::flow::{FlowConfig, Integrator, Resampling};
use pwgf_core::maps::Architecture;
use pwgf_core::numerics::{Component, MinresConfig, SamplerKind, SamplerSpec, DEFAULT_TOL};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: String,
    pub dim: usize,
    pub seed: u64,
    pub map: MapConfig,
    pub reference: ReferenceConfig,
    pub energy: EnergyConfig,
    pub integrator: IntegratorConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    pub sampling: SamplingConfig,
    #[serde(default)]
    pub snapshots: SnapshotConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapConfig {
    /// `affine`, `planar-flow-stack` or `residual-mlp`.
    pub architecture: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layers: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden: Option<Vec<usize>>,
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
    /// Initialization seed; the global seed when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

fn default_init_scale() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ComponentConfig {
    Gaussian {
        weight: f64,
        mean: Vec<f64>,
        std: Vec<f64>,
    },
    UniformBox {
        weight: f64,
        lower: Vec<f64>,
        upper: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ReferenceConfig {
    Gaussian { components: Vec<ComponentConfig> },
    GaussianMixture { components: Vec<ComponentConfig> },
    UniformBox { components: Vec<ComponentConfig> },
    Mixed { components: Vec<ComponentConfig> },
    /// Exact porous-medium profile at time `t`.
    Zkb { m: f64, t: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EnergyConfig {
    RelativeEntropy { potential: String, diffusion: f64 },
    PmeInternal { m: f64 },
    Interaction { a: f64, b: f64 },
    LinearPotential { potential: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorConfig {
    pub method: String,
    pub h: f64,
    pub steps: usize,
    #[serde(default)]
    pub t0: f64,
    #[serde(default = "default_resampling")]
    pub resampling: String,
    #[serde(default = "default_true")]
    pub deterministic: bool,
}

fn default_resampling() -> String {
    "frozen-per-step".into()
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub tol: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iter: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingConfig {
    pub n_metric: usize,
    pub n_energy: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_pairs: Option<usize>,
    pub n_snapshot: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnapshotConfig {
    #[serde(default)]
    pub times: Vec<f64>,
    /// Rows written per snapshot file (all `n_snapshot` points when absent).
    /// Moment summaries always use every point.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rows: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

/// Parses JSON text into a config without validating it.
pub fn parse_value(value: Value) -> Result<RunConfig, CliError> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        invalid(format!("{path}: {}", e.inner()))
    })
}

/// Parses and validates config text. Errors name the key path and the
/// line and column.
pub fn parse_config(text: &str) -> Result<RunConfig, CliError> {
    if text.trim().is_empty() {
        return Err(invalid("configuration text is empty"));
    }
    let mut de = serde_json::Deserializer::from_str(text);
    let cfg: RunConfig = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        invalid(format!("{path}: {}", e.inner()))
    })?;
    de.end().map_err(|e| invalid(format!("trailing content: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text)
}

/// Applies `a.b.c=value` overrides to a JSON tree. The value is parsed as
/// JSON when possible and taken as a string otherwise.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| invalid(format!("override '{assignment}' is not key=value")))?;
    let value: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        node = match node {
            Value::Object(map) => {
                if last {
                    map.insert((*part).to_string(), value);
                    return Ok(());
                }
                map.entry((*part).to_string())
                    .or_insert_with(|| Value::Object(Default::default()))
            }
            Value::Array(items) => {
                let idx: usize = part
                    .parse()
                    .map_err(|_| invalid(format!("override key '{key}': '{part}' is not an index")))?;
                let slot = items
                    .get_mut(idx)
                    .ok_or_else(|| invalid(format!("override key '{key}': index {idx} out of range")))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => return Err(invalid(format!("override key '{key}' does not name an object field"))),
        };
    }
    Err(invalid(format!("override key '{key}' is empty")))
}

impl RunConfig {
    /// Canonical JSON encoding.
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }

    /// Re-parses after `--set` overrides.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<RunConfig, CliError> {
        let mut value = self.to_value();
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let cfg = parse_value(value)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.dim == 0 {
            return Err(invalid("dim must be ≥ 1"));
        }
        if self.scenario.trim().is_empty() {
            return Err(invalid("scenario must be non-empty"));
        }
        self.architecture()?;
        if self.snapshots.rows == Some(0) {
            return Err(invalid("snapshots.rows must be ≥ 1"));
        }
        self.energy()?.validate().map_err(|e| invalid(strip_prefix(e)))?;
        self.flow_config()?.validate().map_err(|e| invalid(strip_prefix(e)))?;
        match &self.reference {
            ReferenceConfig::Zkb { m, t } => {
                if !(*m > 1.0) {
                    return Err(invalid("reference.m must be > 1"));
                }
                if !(*t > 0.0) {
                    return Err(invalid("reference.t must be > 0"));
                }
            }
            _ => {
                self.sampler_spec()?;
            }
        }
        Ok(())
    }

    pub fn architecture(&self) -> Result<Architecture, CliError> {
        let m = &self.map;
        let arch = match m.architecture.as_str() {
            "affine" => Architecture::Affine,
            "planar-flow-stack" => match m.layers {
                Some(l) if l > 0 => Architecture::PlanarFlowStack { layers: l },
                _ => return Err(invalid("map.layers must be ≥ 1")),
            },
            "residual-mlp" => match &m.hidden {
                Some(h) if !h.is_empty() && !h.contains(&0) => {
                    Architecture::ResidualMlp { hidden: h.clone() }
                }
                _ => return Err(invalid("map.hidden must list positive widths")),
            },
            other => {
                return Err(invalid(format!(
                    "map.architecture must be affine, planar-flow-stack or residual-mlp, got '{other}'"
                )))
            }
        };
        let stray = match arch {
            Architecture::Affine => m.layers.is_some() || m.hidden.is_some(),
            Architecture::PlanarFlowStack { .. } => m.hidden.is_some(),
            Architecture::ResidualMlp { .. } => m.layers.is_some(),
        };
        if stray {
            return Err(invalid(format!(
                "map: field not used by architecture '{}'",
                m.architecture
            )));
        }
        if !(m.init_scale >= 0.0 && m.init_scale.is_finite()) {
            return Err(invalid("map.init_scale must be ≥ 0"));
        }
        Ok(arch)
    }

    pub fn map_seed(&self) -> u64 {
        self.map.seed.unwrap_or(self.seed)
    }

    pub fn energy(&self) -> Result<EnergyFunctional, CliError> {
        let pot = |name: &str| Potential::from_name(name).map_err(|_| {
            invalid(format!(
                "energy.potential must be one of {}, got '{name}'",
                Potential::NAMES.join(", ")
            ))
        });
        Ok(match &self.energy {
            EnergyConfig::RelativeEntropy {
                potential,
                diffusion,
            } => EnergyFunctional::RelativeEntropy {
                potential: pot(potential)?,
                diffusion: *diffusion,
            },
            EnergyConfig::PmeInternal { m } => EnergyFunctional::PmeInternal { m: *m },
            EnergyConfig::Interaction { a, b } => EnergyFunctional::Interaction { a: *a, b: *b },
            EnergyConfig::LinearPotential { potential } => EnergyFunctional::LinearPotential {
                potential: pot(potential)?,
            },
        })
    }

    pub fn sampler_spec(&self) -> Result<SamplerSpec, CliError> {
        let (declared, comps) = match &self.reference {
            ReferenceConfig::Gaussian { components } => (SamplerKind::Gaussian, components),
            ReferenceConfig::GaussianMixture { components } => (SamplerKind::GaussianMixture, components),
            ReferenceConfig::UniformBox { components } => (SamplerKind::UniformBox, components),
            ReferenceConfig::Mixed { components } => (SamplerKind::Mixed, components),
            ReferenceConfig::Zkb { .. } => {
                return Err(invalid("reference.kind 'zkb' has no component sampler"))
            }
        };
        let components: Vec<Component> = comps
            .iter()
            .map(|c| match c.clone() {
                ComponentConfig::Gaussian { weight, mean, std } => Component::Gaussian { weight, mean, std },
                ComponentConfig::UniformBox {
                    weight,
                    lower,
                    upper,
                } => Component::UniformBox {
                    weight,
                    lower,
                    upper,
                },
            })
            .collect();
        for (i, c) in comps.iter().enumerate() {
            let len = match c {
                ComponentConfig::Gaussian { mean, std, .. } => mean.len().max(std.len()),
                ComponentConfig::UniformBox { lower, upper, .. } => lower.len().max(upper.len()),
            };
            if len != self.dim {
                return Err(invalid(format!(
                    "reference.components[{i}] has dimension {len}, expected dim = {}",
                    self.dim
                )));
            }
        }
        let spec = SamplerSpec::new(components, self.seed)
            .map_err(|e| invalid(format!("reference: {}", strip_prefix(e))))?;
        if spec.kind() != declared {
            return Err(invalid(format!(
                "reference.kind does not match its components (components describe {:?})",
                spec.kind()
            )));
        }
        Ok(spec)
    }

    pub fn flow_config(&self) -> Result<FlowConfig, CliError> {
        let integrator = Integrator::from_name(&self.integrator.method)
            .map_err(|e| invalid(strip_prefix(e)))?;
        let resampling = Resampling::from_name(&self.integrator.resampling)
            .map_err(|e| invalid(strip_prefix(e)))?;
        Ok(FlowConfig {
            integrator,
            h: self.integrator.h,
            steps: self.integrator.steps,
            t0: self.integrator.t0,
            resampling,
            deterministic: self.integrator.deterministic,
            solver: MinresConfig {
                tol: self.solver.tol,
                max_iter: self.solver.max_iter,
            },
            n_metric: self.sampling.n_metric,
            n_energy: self.sampling.n_energy,
            n_pairs: self.sampling.n_pairs,
            n_snapshot: self.sampling.n_snapshot,
            snapshot_times: self.snapshots.times.clone(),
            seed: self.seed,
        })
    }
}

fn strip_prefix(e: pwgf_core::Error) -> String {
    match e {
        pwgf_core::Error::Config(m) => m,
        other => other.to_string(),
    }
}
