//! Time stepping of `θ̇ = −Ĝ(θ)† ∇_θ F(θ)` and the full run loop.

use std::sync::Arc;
use std::time::Instant;

use super::metric::{natural_velocity, MetricOperator, Velocity};
use super::metrics::{RunMetrics, StepRecord};
use crate::energy::{energy_estimate, EnergyEstimate, EnergyFunctional, PairSource};
use crate::error::{Error, Result};
use crate::maps::PushforwardMap;
use crate::numerics::{rng_for, MinresConfig, ReferenceDensity, SampleBatch};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Integrator {
    Euler,
    Rk4,
}

impl Integrator {
    pub fn tag(&self) -> &'static str {
        match self {
            Self::Euler => "euler",
            Self::Rk4 => "rk4",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "euler" => Ok(Self::Euler),
            "rk4" => Ok(Self::Rk4),
            other => Err(Error::Config(format!(
                "integrator.method must be 'euler' or 'rk4', got '{other}'"
            ))),
        }
    }
}

/// When fresh reference samples are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resampling {
    /// One batch per step, shared by every stage of that step.
    FrozenPerStep,
    /// One batch for the whole run.
    FrozenGlobal,
    /// A new batch for every stage evaluation.
    FreshPerStage,
}

impl Resampling {
    pub fn tag(&self) -> &'static str {
        match self {
            Self::FrozenPerStep => "frozen-per-step",
            Self::FrozenGlobal => "frozen-global",
            Self::FreshPerStage => "fresh-per-stage",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "frozen-per-step" => Ok(Self::FrozenPerStep),
            "frozen-global" => Ok(Self::FrozenGlobal),
            "fresh-per-stage" => Ok(Self::FreshPerStage),
            other => Err(Error::Config(format!(
                "integrator.resampling must be one of frozen-per-step, frozen-global, \
                 fresh-per-stage; got '{other}'"
            ))),
        }
    }
}

/// RNG stream layout. Every random draw of a run comes from the run seed
/// and one of these streams.
pub mod streams {
    pub const EVAL: u64 = 1;
    pub const SNAPSHOT: u64 = 2;
    pub const EVAL_PAIRS: u64 = 3;
    const BATCH_BASE: u64 = 1 << 32;
    const PAIR_BASE: u64 = 2 << 32;

    /// Metric/drift batch of `(step, stage)`.
    pub fn batch(step: usize, stage: usize) -> u64 {
        BATCH_BASE + 4 * step as u64 + stage as u64
    }

    /// Independent interaction pairs of `(step, stage)`.
    pub fn pairs(step: usize, stage: usize) -> u64 {
        PAIR_BASE + 4 * step as u64 + stage as u64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowConfig {
    pub integrator: Integrator,
    pub h: f64,
    pub steps: usize,
    pub t0: f64,
    pub resampling: Resampling,
    pub deterministic: bool,
    pub solver: MinresConfig,
    /// Batch size for `Ĝ`, the drift and `∇_θF`.
    pub n_metric: usize,
    /// Size of the fixed batch used for energy and KL traces.
    pub n_energy: usize,
    /// Independent interaction pair batch size; `None` reuses the batch.
    pub n_pairs: Option<usize>,
    pub n_snapshot: usize,
    pub snapshot_times: Vec<f64>,
    pub seed: u64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            integrator: Integrator::Euler,
            h: 0.005,
            steps: 100,
            t0: 0.0,
            resampling: Resampling::FrozenPerStep,
            deterministic: true,
            solver: MinresConfig::default(),
            n_metric: 1000,
            n_energy: 1000,
            n_pairs: None,
            n_snapshot: 1000,
            snapshot_times: Vec::new(),
            seed: 0,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.h > 0.0 && self.h.is_finite()) {
            return fail("integrator.h must be > 0");
        }
        if !self.t0.is_finite() {
            return fail("integrator.t0 must be finite");
        }
        if !(self.solver.tol > 0.0 && self.solver.tol < 1.0) {
            return fail("solver.tol must be in (0, 1)");
        }
        if self.solver.max_iter == Some(0) {
            return fail("solver.max_iter must be ≥ 1");
        }
        if self.n_metric == 0 {
            return fail("sampling.n_metric must be ≥ 1");
        }
        if self.n_energy == 0 {
            return fail("sampling.n_energy must be ≥ 1");
        }
        if self.n_pairs == Some(0) {
            return fail("sampling.n_pairs must be ≥ 1");
        }
        if self.snapshot_times.iter().any(|t| !t.is_finite()) {
            return fail("snapshots.times must be finite");
        }
        Ok(())
    }

    pub fn time_at(&self, step: usize) -> f64 {
        self.t0 + step as f64 * self.h
    }

    /// Steps nearest to the requested snapshot times, within `[0, steps]`.
    pub fn snapshot_steps(&self) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .snapshot_times
            .iter()
            .map(|t| ((t - self.t0) / self.h).round().clamp(0.0, self.steps as f64) as usize)
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }
}

#[derive(Debug, Clone)]
pub struct PwgfState {
    pub map: PushforwardMap,
    pub t: f64,
    pub step: usize,
}

/// Samples for one stage evaluation.
#[derive(Debug, Clone)]
pub struct StageBatch {
    pub batch: SampleBatch,
    pub pairs: Option<SampleBatch>,
}

impl StageBatch {
    pub fn new(batch: SampleBatch) -> Self {
        Self { batch, pairs: None }
    }

    pub fn pair_source(&self) -> PairSource<'_> {
        match &self.pairs {
            Some(p) => PairSource::Independent(p),
            None => PairSource::SameBatch,
        }
    }
}

/// Solver statistics of one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub grad_norm: f64,
    pub descent: f64,
    pub minres_iters: usize,
    pub minres_residual: f64,
    pub converged: bool,
}

impl StepStats {
    fn from_stages(stages: &[Velocity]) -> Self {
        let first = &stages[0];
        Self {
            grad_norm: first.grad_norm(),
            descent: first.descent(),
            minres_iters: stages.iter().map(|v| v.solve.iterations).sum(),
            minres_residual: stages
                .iter()
                .map(|v| v.relative_residual())
                .fold(0.0, f64::max),
            converged: stages.iter().all(|v| v.solve.converged()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Snapshot {
    pub step: usize,
    pub t: f64,
    pub points: SampleBatch,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub state: PwgfState,
    pub metrics: RunMetrics,
    pub snapshots: Vec<Snapshot>,
}

/// A failed run with everything produced before the failure.
#[derive(Debug)]
pub struct RunFailure {
    pub error: Error,
    pub state: PwgfState,
    pub metrics: RunMetrics,
    pub snapshots: Vec<Snapshot>,
}

/// A parameterized gradient-flow problem: energy, reference density and
/// integration settings.
pub struct Flow {
    energy: EnergyFunctional,
    reference: Arc<dyn ReferenceDensity>,
    config: FlowConfig,
}

fn axpy(theta: &[f64], a: f64, x: &[f64]) -> Vec<f64> {
    theta.iter().zip(x).map(|(t, v)| t + a * v).collect()
}

impl Flow {
    pub fn new(
        energy: EnergyFunctional,
        reference: Arc<dyn ReferenceDensity>,
        config: FlowConfig,
    ) -> Result<Self> {
        energy.validate()?;
        config.validate()?;
        Ok(Self {
            energy,
            reference,
            config,
        })
    }

    pub fn energy(&self) -> &EnergyFunctional {
        &self.energy
    }

    pub fn reference(&self) -> &dyn ReferenceDensity {
        self.reference.as_ref()
    }

    pub fn config(&self) -> &FlowConfig {
        &self.config
    }

    pub fn draw(&self, n: usize, stream: u64) -> SampleBatch {
        self.reference.sample(n, &mut rng_for(self.config.seed, stream))
    }

    /// Batch for `(step, stage)` under the configured resampling policy.
    pub fn stage_batch(&self, step: usize, stage: usize) -> StageBatch {
        let (step, stage) = match self.config.resampling {
            Resampling::FrozenGlobal => (0, 0),
            Resampling::FrozenPerStep => (step, 0),
            Resampling::FreshPerStage => (step, stage),
        };
        StageBatch {
            batch: self.draw(self.config.n_metric, streams::batch(step, stage)),
            pairs: self
                .config
                .n_pairs
                .map(|n| self.draw(n, streams::pairs(step, stage))),
        }
    }

    /// `η(θ) = −Ĝ(θ)† ∇_θF(θ)` on one batch.
    pub fn velocity(&self, map: &PushforwardMap, stage: &StageBatch) -> Result<Velocity> {
        let drift = self
            .energy
            .drift(map, &stage.batch, self.reference(), stage.pair_source())?;
        let op = MetricOperator::new(map, &stage.batch, self.config.deterministic)?;
        natural_velocity(&op, &drift, &self.config.solver)
    }

    fn commit(&self, state: &mut PwgfState, theta: Vec<f64>) -> Result<()> {
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "parameter update",
                sample: None,
            });
        }
        state.map.set_params(&theta)?;
        state.step += 1;
        state.t = self.config.time_at(state.step);
        Ok(())
    }

    /// `θ ← θ + h η(θ)`
    pub fn euler_step(&self, state: &mut PwgfState, stage: &StageBatch) -> Result<StepStats> {
        let v = self.velocity(&state.map, stage)?;
        let theta = axpy(state.map.params(), self.config.h, &v.eta);
        self.commit(state, theta)?;
        Ok(StepStats::from_stages(std::slice::from_ref(&v)))
    }

    /// Classical four-stage Runge–Kutta step; stage `s` uses `stages[s]`.
    pub fn rk4_step(&self, state: &mut PwgfState, stages: [&StageBatch; 4]) -> Result<StepStats> {
        let h = self.config.h;
        let theta0 = state.map.params().to_vec();
        let k1 = self.velocity(&state.map, stages[0])?;
        let m2 = state.map.with_params(&axpy(&theta0, 0.5 * h, &k1.eta))?;
        let k2 = self.velocity(&m2, stages[1])?;
        let m3 = state.map.with_params(&axpy(&theta0, 0.5 * h, &k2.eta))?;
        let k3 = self.velocity(&m3, stages[2])?;
        let m4 = state.map.with_params(&axpy(&theta0, h, &k3.eta))?;
        let k4 = self.velocity(&m4, stages[3])?;
        let theta: Vec<f64> = (0..theta0.len())
            .map(|i| {
                theta0[i] + h / 6.0 * (k1.eta[i] + 2.0 * k2.eta[i] + 2.0 * k3.eta[i] + k4.eta[i])
            })
            .collect();
        self.commit(state, theta)?;
        Ok(StepStats::from_stages(&[k1, k2, k3, k4]))
    }

    /// Advances one step, drawing batches per the resampling policy.
    pub fn step(&self, state: &mut PwgfState, global: &mut Option<StageBatch>) -> Result<StepStats> {
        let k = state.step;
        let shared = match self.config.resampling {
            Resampling::FrozenGlobal => Some(global.get_or_insert_with(|| self.stage_batch(0, 0)).clone()),
            Resampling::FrozenPerStep => Some(self.stage_batch(k, 0)),
            Resampling::FreshPerStage => None,
        };
        match (self.config.integrator, shared) {
            (Integrator::Euler, Some(b)) => self.euler_step(state, &b),
            (Integrator::Euler, None) => self.euler_step(state, &self.stage_batch(k, 0)),
            (Integrator::Rk4, Some(b)) => self.rk4_step(state, [&b, &b, &b, &b]),
            (Integrator::Rk4, None) => {
                let s: Vec<StageBatch> = (0..4).map(|i| self.stage_batch(k, i)).collect();
                self.rk4_step(state, [&s[0], &s[1], &s[2], &s[3]])
            }
        }
    }

    pub fn evaluate(&self, map: &PushforwardMap, eval: &StageBatch) -> Result<EnergyEstimate> {
        energy_estimate(&self.energy, map, &eval.batch, self.reference(), eval.pair_source())
    }

    /// Fixed batch for the energy trace.
    pub fn eval_batch(&self) -> StageBatch {
        StageBatch {
            batch: self.draw(self.config.n_energy, streams::EVAL),
            pairs: self
                .config
                .n_pairs
                .map(|n| self.draw(n, streams::EVAL_PAIRS)),
        }
    }

    pub fn snapshot_batch(&self) -> SampleBatch {
        self.draw(self.config.n_snapshot, streams::SNAPSHOT)
    }

    fn record(
        &self,
        state: &PwgfState,
        eval: &StageBatch,
        signs0: &[f64],
        stats: Option<StepStats>,
        wall_ms: f64,
    ) -> Result<StepRecord> {
        let signs = det_signs(&state.map, &eval.batch);
        let flipped = signs.iter().zip(signs0).position(|(s, s0)| s != s0);
        if let Some(sample) = flipped {
            if self.energy.needs_density() {
                return Err(Error::DetSignFlip {
                    sample,
                    step: state.step,
                });
            }
        }
        let e = self.evaluate(&state.map, eval)?;
        let kl = matches!(self.energy, EnergyFunctional::RelativeEntropy { .. }).then_some(e.value);
        Ok(StepRecord {
            step: state.step,
            t: state.t,
            energy: e.value,
            energy_se: e.std_error,
            kl,
            grad_norm: stats.map(|s| s.grad_norm),
            minres_iters: stats.map(|s| s.minres_iters),
            minres_residual: stats.map(|s| s.minres_residual),
            descent: stats.map(|s| s.descent),
            wall_ms,
            det_sign_ok: flipped.is_none(),
        })
    }

    /// Runs `steps` steps from `map`, recording metrics after every step and
    /// snapshots at the configured times.
    pub fn run(&self, map: PushforwardMap) -> std::result::Result<RunOutput, Box<RunFailure>> {
        self.run_with(map, |_| {})
    }

    /// [`Self::run`] with a callback invoked on every new metrics row.
    pub fn run_with<F: FnMut(&StepRecord)>(
        &self,
        map: PushforwardMap,
        mut observer: F,
    ) -> std::result::Result<RunOutput, Box<RunFailure>> {
        let mut state = PwgfState {
            map,
            t: self.config.t0,
            step: 0,
        };
        let mut metrics = RunMetrics::new();
        let mut snapshots = Vec::new();
        let snap_steps = self.config.snapshot_steps();
        let snap_batch = (!snap_steps.is_empty()).then(|| self.snapshot_batch());
        let eval = self.eval_batch();
        let signs0 = det_signs(&state.map, &eval.batch);
        let mut global = None;

        let fail = |error, state: PwgfState, metrics, snapshots| {
            Err(Box::new(RunFailure {
                error,
                state,
                metrics,
                snapshots,
            }))
        };
        if let Some(i) = signs0.iter().position(|s| *s == 0.0) {
            if self.energy.needs_density() {
                return fail(
                    Error::DegenerateJacobian { sample: Some(i) },
                    state,
                    metrics,
                    snapshots,
                );
            }
        }

        let mut stats = None;
        let mut wall_ms = 0.0;
        loop {
            match self.record(&state, &eval, &signs0, stats, wall_ms) {
                Ok(r) => {
                    observer(&r);
                    metrics.push(r);
                }
                Err(e) => return fail(e, state, metrics, snapshots),
            }
            if let Some(sb) = &snap_batch {
                if snap_steps.binary_search(&state.step).is_ok() {
                    snapshots.push(Snapshot {
                        step: state.step,
                        t: state.t,
                        points: push_batch(&state.map, sb),
                    });
                }
            }
            if state.step >= self.config.steps {
                break;
            }
            let start = Instant::now();
            match self.step(&mut state, &mut global) {
                Ok(s) => stats = Some(s),
                Err(e) => return fail(e, state, metrics, snapshots),
            }
            wall_ms = start.elapsed().as_secs_f64() * 1e3;
        }
        Ok(RunOutput {
            state,
            metrics,
            snapshots,
        })
    }
}

/// `sign det ∂_zT_θ(z_i)` for every sample.
pub fn det_signs(map: &PushforwardMap, batch: &SampleBatch) -> Vec<f64> {
    use rayon::prelude::*;
    (0..batch.len())
        .into_par_iter()
        .map(|i| map.det_sign(batch.point(i)))
        .collect()
}

/// `T_θ(z_i)` for every sample.
pub fn push_batch(map: &PushforwardMap, batch: &SampleBatch) -> SampleBatch {
    use rayon::prelude::*;
    let flat: Vec<f64> = (0..batch.len())
        .into_par_iter()
        .flat_map_iter(|i| map.apply(batch.point(i)))
        .collect();
    SampleBatch::new(map.dim(), flat).expect("map output matches map dimension")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::Potential;
    use crate::maps::Architecture;
    use crate::numerics::SamplerSpec;

    fn linear_flow(h: f64, integrator: Integrator) -> Flow {
        let spec = SamplerSpec::standard_normal(1, 0).unwrap();
        Flow::new(
            EnergyFunctional::LinearPotential {
                potential: Potential::Quadratic,
            },
            Arc::new(spec),
            FlowConfig {
                h,
                integrator,
                solver: MinresConfig {
                    tol: 1e-14,
                    max_iter: None,
                },
                ..FlowConfig::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn rk4_matches_taylor_polynomial() {
        // Ĝ = I and ∇F = θ on {−1, 1}, so θ̇ = −θ.
        let h = 0.1;
        let flow = linear_flow(h, Integrator::Rk4);
        let batch = StageBatch::new(SampleBatch::new(1, vec![-1.0, 1.0]).unwrap());
        let mut state = PwgfState {
            map: PushforwardMap::new(Architecture::Affine, 1, vec![0.7, -0.4]).unwrap(),
            t: 0.0,
            step: 0,
        };
        flow.rk4_step(&mut state, [&batch, &batch, &batch, &batch]).unwrap();
        let p = 1.0 - h + h * h / 2.0 - h.powi(3) / 6.0 + h.powi(4) / 24.0;
        assert!((state.map.params()[0] - 0.7 * p).abs() < 1e-12);
        assert!((state.map.params()[1] + 0.4 * p).abs() < 1e-12);
        assert_eq!(state.step, 1);
        assert!((state.t - h).abs() < 1e-15);
    }

    #[test]
    fn euler_is_explicit_update() {
        let h = 0.1;
        let flow = linear_flow(h, Integrator::Euler);
        let batch = StageBatch::new(SampleBatch::new(1, vec![-1.0, 1.0]).unwrap());
        let mut state = PwgfState {
            map: PushforwardMap::new(Architecture::Affine, 1, vec![0.7, -0.4]).unwrap(),
            t: 0.0,
            step: 0,
        };
        let stats = flow.euler_step(&mut state, &batch).unwrap();
        assert!((state.map.params()[0] - 0.63).abs() < 1e-12);
        assert!((state.map.params()[1] + 0.36).abs() < 1e-12);
        assert!(stats.descent < 0.0);
    }

    #[test]
    fn stationary_point_is_fixed() {
        let flow = linear_flow(0.1, Integrator::Euler);
        let batch = StageBatch::new(SampleBatch::new(1, vec![-1.0, 1.0]).unwrap());
        let mut state = PwgfState {
            map: PushforwardMap::new(Architecture::Affine, 1, vec![0.0, 0.0]).unwrap(),
            t: 0.0,
            step: 0,
        };
        flow.euler_step(&mut state, &batch).unwrap();
        assert_eq!(state.map.params(), &[0.0, 0.0]);
    }

    #[test]
    fn zero_steps_returns_initial_state() {
        let flow = Flow::new(
            EnergyFunctional::LinearPotential {
                potential: Potential::Quadratic,
            },
            Arc::new(SamplerSpec::standard_normal(1, 0).unwrap()),
            FlowConfig {
                steps: 0,
                n_energy: 10,
                ..FlowConfig::default()
            },
        )
        .unwrap();
        let map = PushforwardMap::new(Architecture::Affine, 1, vec![1.0, 0.0]).unwrap();
        let out = flow.run(map).unwrap();
        assert_eq!(out.metrics.len(), 1);
        assert_eq!(out.state.step, 0);
        assert_eq!(out.state.map.params(), &[1.0, 0.0]);
    }

    #[test]
    fn stream_layout_is_disjoint() {
        assert_ne!(streams::batch(0, 0), streams::pairs(0, 0));
        assert_eq!(streams::batch(3, 2), streams::batch(0, 0) + 14);
        assert!(streams::batch(0, 0) > streams::EVAL_PAIRS);
    }

    #[test]
    fn config_validation_names_key() {
        let cfg = FlowConfig {
            h: -1.0,
            ..FlowConfig::default()
        };
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("integrator.h must be > 0"), "{msg}");
    }

    #[test]
    fn snapshot_steps_round_to_grid() {
        let cfg = FlowConfig {
            t0: 0.1,
            h: 0.01,
            steps: 50,
            snapshot_times: vec![0.1, 0.35, 0.6, 9.0],
            ..FlowConfig::default()
        };
        assert_eq!(cfg.snapshot_steps(), vec![0, 25, 50]);
    }
}
