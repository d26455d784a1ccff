//! Energy functionals `𝓕(ρ_θ)`: drift fields `∇_x δ𝓕/δρ` at pushed samples and
//! Monte Carlo energy estimates.

use rayon::prelude::*;

use crate::error::{check_len, Error, Result};
use crate::maps::{DensityEvaluation, PushforwardMap};
use crate::numerics::{ReferenceDensity, SampleBatch};

/// External potential `V`, selectable by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Potential {
    /// `3/50 · Σ (x⁴ − 16x² + 5x)`
    StyblinskiTang,
    /// `|x|²/2`
    Quadratic,
    Zero,
}

impl Potential {
    pub const NAMES: [&'static str; 3] = ["styblinski-tang", "quadratic", "zero"];

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "styblinski-tang" => Ok(Self::StyblinskiTang),
            "quadratic" => Ok(Self::Quadratic),
            "zero" => Ok(Self::Zero),
            other => Err(Error::Config(format!(
                "unknown potential '{other}' (expected one of {})",
                Self::NAMES.join(", ")
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::StyblinskiTang => "styblinski-tang",
            Self::Quadratic => "quadratic",
            Self::Zero => "zero",
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            Self::StyblinskiTang => {
                0.06 * x
                    .iter()
                    .map(|v| v.powi(4) - 16.0 * v * v + 5.0 * v)
                    .sum::<f64>()
            }
            Self::Quadratic => 0.5 * x.iter().map(|v| v * v).sum::<f64>(),
            Self::Zero => 0.0,
        }
    }

    pub fn gradient(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Self::StyblinskiTang => {
                for (o, v) in out.iter_mut().zip(x) {
                    *o = 0.06 * (4.0 * v.powi(3) - 32.0 * v + 5.0);
                }
            }
            Self::Quadratic => out.copy_from_slice(x),
            Self::Zero => out.fill(0.0),
        }
    }
}

/// Where the convolution points of the interaction energy come from.
#[derive(Debug, Clone, Copy)]
pub enum PairSource<'a> {
    /// Field points double as convolution points; self-pairs are skipped.
    SameBatch,
    /// An independent reference batch, pushed through the same map.
    Independent(&'a SampleBatch),
}

#[derive(Debug, Clone, PartialEq)]
pub enum EnergyFunctional {
    /// `∫ V dρ + D ∫ ρ log ρ`; drift `∇V + D ∇log ρ`.
    RelativeEntropy { potential: Potential, diffusion: f64 },
    /// `1/(m−1) ∫ ρ^m`; drift `m ρ^{m−1} ∇log ρ`.
    PmeInternal { m: f64 },
    /// `½ ∬ J(x − y) dρ dρ` with `J(r) = |r|^a/a − |r|^b/b`.
    Interaction { a: f64, b: f64 },
    /// `∫ V dρ`.
    LinearPotential { potential: Potential },
}

impl EnergyFunctional {
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::RelativeEntropy { diffusion, .. } if !(*diffusion > 0.0 && diffusion.is_finite()) => {
                Err(Error::Config("energy.diffusion must be > 0".into()))
            }
            Self::PmeInternal { m } if !(*m > 1.0 && m.is_finite()) => {
                Err(Error::Config("energy.m must be > 1".into()))
            }
            Self::Interaction { a, b } if !(*b > 0.0 && a > b && a.is_finite()) => {
                Err(Error::Config("energy exponents must satisfy a > b > 0".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            Self::RelativeEntropy { .. } => "relative-entropy",
            Self::PmeInternal { .. } => "pme-internal",
            Self::Interaction { .. } => "interaction",
            Self::LinearPotential { .. } => "linear-potential",
        }
    }

    /// Whether the drift needs `log ρ_θ`, and hence an invertible map.
    pub fn needs_density(&self) -> bool {
        matches!(self, Self::RelativeEntropy { .. } | Self::PmeInternal { .. })
    }

    pub fn drift(
        &self,
        map: &PushforwardMap,
        batch: &SampleBatch,
        reference: &dyn ReferenceDensity,
        pairs: PairSource<'_>,
    ) -> Result<DriftField> {
        match *self {
            Self::RelativeEntropy {
                potential,
                diffusion,
            } => drift_relative_entropy(map, batch, reference, potential, diffusion),
            Self::PmeInternal { m } => drift_pme(map, batch, reference, m),
            Self::Interaction { a, b } => drift_interaction(map, batch, a, b, pairs),
            Self::LinearPotential { potential } => drift_linear_potential(map, batch, potential),
        }
    }
}

/// `v(z_i)` for every sample of a batch, stored flat.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftField {
    dim: usize,
    values: Vec<f64>,
}

impl DriftField {
    pub fn new(dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 || values.len() % dim != 0 {
            return Err(Error::InvalidInput(format!(
                "drift of length {} is not a multiple of dimension {dim}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "drift field",
                sample: Some(i / dim),
            });
        }
        Ok(Self { dim, values })
    }

    pub fn zeros(dim: usize, n: usize) -> Self {
        Self {
            dim,
            values: vec![0.0; dim * n],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.values
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `(1/N) Σ ⟨f_i, g_i⟩`
    pub fn mean_inner(&self, other: &DriftField) -> f64 {
        let s: f64 = self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum();
        s / self.len().max(1) as f64
    }
}

/// Evaluates `f` per sample (in parallel) and collects the results in
/// index order, tagging errors with the offending sample.
pub(crate) fn per_sample<T, F>(batch: &SampleBatch, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&[f64]) -> Result<T> + Sync,
{
    (0..batch.len())
        .into_par_iter()
        .map(|i| f(batch.point(i)).map_err(|e| with_sample(e, i)))
        .collect()
}

pub(crate) fn with_sample(err: Error, i: usize) -> Error {
    match err {
        Error::DegenerateJacobian { sample: None } => Error::DegenerateJacobian { sample: Some(i) },
        Error::NonFinite {
            context,
            sample: None,
        } => Error::NonFinite {
            context,
            sample: Some(i),
        },
        other => other,
    }
}

fn densities(
    map: &PushforwardMap,
    batch: &SampleBatch,
    reference: &dyn ReferenceDensity,
) -> Result<Vec<DensityEvaluation>> {
    check_len("reference dimension", map.dim(), reference.dim())?;
    check_len("batch dimension", map.dim(), batch.dim())?;
    per_sample(batch, |z| map.density_at(z, reference))
}

fn collect_field(dim: usize, rows: Vec<Vec<f64>>) -> Result<DriftField> {
    DriftField::new(dim, rows.into_iter().flatten().collect())
}

/// `v(z_i) = ∇V(x_i) + D ∇_x log ρ_θ(x_i)`
pub fn drift_relative_entropy(
    map: &PushforwardMap,
    batch: &SampleBatch,
    reference: &dyn ReferenceDensity,
    potential: Potential,
    diffusion: f64,
) -> Result<DriftField> {
    let d = map.dim();
    let evals = densities(map, batch, reference)?;
    let rows = evals
        .into_iter()
        .map(|ev| {
            let mut v = vec![0.0; d];
            potential.gradient(&ev.x, &mut v);
            for (vi, gi) in v.iter_mut().zip(&ev.grad_log_rho) {
                *vi += diffusion * gi;
            }
            v
        })
        .collect();
    collect_field(d, rows)
}

/// `v(z_i) = m · exp((m−1) log ρ_θ(x_i)) · ∇_x log ρ_θ(x_i)`
pub fn drift_pme(
    map: &PushforwardMap,
    batch: &SampleBatch,
    reference: &dyn ReferenceDensity,
    m: f64,
) -> Result<DriftField> {
    let d = map.dim();
    let evals = densities(map, batch, reference)?;
    let rows = evals
        .into_iter()
        .map(|ev| {
            let c = m * ((m - 1.0) * ev.log_rho).exp();
            ev.grad_log_rho.iter().map(|g| c * g).collect()
        })
        .collect();
    collect_field(d, rows)
}

/// `|r|^p` as a function of `|r|²`; even integer powers avoid `powf`.
#[derive(Debug, Clone, Copy)]
enum Power {
    Int(i32),
    Real(f64),
}

impl Power {
    fn new(p: f64) -> Self {
        let half = 0.5 * p;
        if half.fract() == 0.0 && half.abs() <= 32.0 {
            Power::Int(half as i32)
        } else {
            Power::Real(half)
        }
    }

    #[inline]
    fn of(self, n2: f64) -> f64 {
        match self {
            Power::Int(0) => 1.0,
            Power::Int(1) => n2,
            Power::Int(2) => n2 * n2,
            Power::Int(k) => n2.powi(k),
            Power::Real(h) => n2.powf(h),
        }
    }
}

#[inline]
fn abs_pow(n2: f64, p: f64) -> f64 {
    Power::new(p).of(n2)
}

/// `J(r) = |r|^a/a − |r|^b/b`
pub fn interaction_kernel(r: &[f64], a: f64, b: f64) -> f64 {
    let n2 = r.iter().map(|v| v * v).sum::<f64>();
    if n2 == 0.0 {
        return 0.0;
    }
    abs_pow(n2, a) / a - abs_pow(n2, b) / b
}

/// `∇J(r) = (|r|^{a−2} − |r|^{b−2}) r`, zero at `r = 0`.
pub fn interaction_kernel_grad(r: &[f64], a: f64, b: f64, out: &mut [f64]) {
    let n2 = r.iter().map(|v| v * v).sum::<f64>();
    if n2 == 0.0 {
        out.fill(0.0);
        return;
    }
    let c = abs_pow(n2, a - 2.0) - abs_pow(n2, b - 2.0);
    for (o, ri) in out.iter_mut().zip(r) {
        *o = c * ri;
    }
}

fn pushed(map: &PushforwardMap, batch: &SampleBatch) -> Result<SampleBatch> {
    check_len("batch dimension", map.dim(), batch.dim())?;
    let rows = per_sample(batch, |z| Ok(map.apply(z)))?;
    SampleBatch::new(map.dim(), rows.into_iter().flatten().collect())
}

/// Convolution drift `v(z_i) = mean_j ∇J(x_i − x′_j)`.
///
/// With [`PairSource::SameBatch`] the mean runs over the other `N − 1`
/// samples; with an independent batch over all `N′` pair points.
pub fn drift_interaction(
    map: &PushforwardMap,
    batch: &SampleBatch,
    a: f64,
    b: f64,
    pairs: PairSource<'_>,
) -> Result<DriftField> {
    let d = map.dim();
    let xs = pushed(map, batch)?;
    let ys = match pairs {
        PairSource::SameBatch => None,
        PairSource::Independent(p) => {
            if p.is_empty() {
                return Err(Error::InvalidInput("interaction pair batch is empty".into()));
            }
            Some(pushed(map, p)?)
        }
    };
    let same = ys.is_none();
    let ys = ys.as_ref().unwrap_or(&xs);
    let count = if same { xs.len().saturating_sub(1) } else { ys.len() };
    if count == 0 {
        return Ok(DriftField::zeros(d, xs.len()));
    }
    let inv = 1.0 / count as f64;
    let (pa, pb) = (Power::new(a - 2.0), Power::new(b - 2.0));
    let rows = per_sample(&xs, |x| {
        let mut v = vec![0.0; d];
        for y in ys.iter() {
            let n2: f64 = x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum();
            if n2 == 0.0 {
                continue;
            }
            let c = pa.of(n2) - pb.of(n2);
            for ((vk, xk), yk) in v.iter_mut().zip(x).zip(y) {
                *vk += c * (xk - yk);
            }
        }
        v.iter_mut().for_each(|vk| *vk *= inv);
        Ok(v)
    })?;
    collect_field(d, rows)
}

/// `v(z_i) = ∇V(T(z_i))`
pub fn drift_linear_potential(
    map: &PushforwardMap,
    batch: &SampleBatch,
    potential: Potential,
) -> Result<DriftField> {
    let d = map.dim();
    let xs = pushed(map, batch)?;
    let rows = per_sample(&xs, |x| {
        let mut v = vec![0.0; d];
        potential.gradient(x, &mut v);
        Ok(v)
    })?;
    collect_field(d, rows)
}

/// Monte Carlo energy with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyEstimate {
    pub value: f64,
    pub std_error: f64,
}

fn mean_and_se(values: &[f64]) -> EnergyEstimate {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    EnergyEstimate {
        value: mean,
        std_error: (var / n).sqrt(),
    }
}

/// Monte Carlo estimate of `𝓕(ρ_θ)` on a batch.
///
/// Relative entropy reports the unnormalized KL `mean(V/D + log ρ_θ)`,
/// i.e. `KL(ρ_θ ‖ e^{−V/D}/Z) − log Z`. Interaction energy is the
/// U-statistic `½ mean_{i≠j} J(x_i − x_j)` (or the full cross mean for an
/// independent pair batch).
pub fn energy_estimate(
    functional: &EnergyFunctional,
    map: &PushforwardMap,
    batch: &SampleBatch,
    reference: &dyn ReferenceDensity,
    pairs: PairSource<'_>,
) -> Result<EnergyEstimate> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("energy batch is empty".into()));
    }
    let values: Vec<f64> = match *functional {
        EnergyFunctional::RelativeEntropy {
            potential,
            diffusion,
        } => densities(map, batch, reference)?
            .iter()
            .map(|ev| potential.value(&ev.x) / diffusion + ev.log_rho)
            .collect(),
        EnergyFunctional::PmeInternal { m } => densities(map, batch, reference)?
            .iter()
            .map(|ev| ((m - 1.0) * ev.log_rho).exp() / (m - 1.0))
            .collect(),
        EnergyFunctional::LinearPotential { potential } => pushed(map, batch)?
            .iter()
            .map(|x| potential.value(x))
            .collect(),
        EnergyFunctional::Interaction { a, b } => {
            let xs = pushed(map, batch)?;
            let ys = match pairs {
                PairSource::SameBatch => None,
                PairSource::Independent(p) => Some(pushed(map, p)?),
            };
            let same = ys.is_none();
            let ys = ys.as_ref().unwrap_or(&xs);
            let count = if same { xs.len().saturating_sub(1) } else { ys.len() };
            if count == 0 {
                return Ok(EnergyEstimate {
                    value: 0.0,
                    std_error: 0.0,
                });
            }
            let (pa, pb) = (Power::new(a), Power::new(b));
            per_sample(&xs, |x| {
                let mut s = 0.0;
                for y in ys.iter() {
                    let n2: f64 = x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum();
                    if n2 != 0.0 {
                        s += pa.of(n2) / a - pb.of(n2) / b;
                    }
                }
                Ok(0.5 * s / count as f64)
            })?
        }
    };
    let est = mean_and_se(&values);
    if !est.value.is_finite() {
        return Err(Error::NonFinite {
            context: "energy estimate",
            sample: values.iter().position(|v| !v.is_finite()),
        });
    }
    Ok(est)
}
