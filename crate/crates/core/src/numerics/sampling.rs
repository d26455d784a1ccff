//! Seeded sampling from reference densities.
//!
//! Every random draw goes through a [`ChaCha8Rng`] keyed by a 64-bit seed
//! and a stream index, so a (seed, stream) pair names a batch exactly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{check_len, Error, Result};

/// `n` points in `R^d`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    dim: usize,
    points: Vec<f64>,
}

impl SampleBatch {
    pub fn new(dim: usize, points: Vec<f64>) -> Result<Self> {
        if dim == 0 || points.len() % dim != 0 {
            return Err(Error::InvalidInput(format!(
                "{} coordinates do not form points of dimension {dim}",
                points.len()
            )));
        }
        Ok(Self { dim, points })
    }

    pub fn from_points(points: &[Vec<f64>]) -> Result<Self> {
        let dim = points.first().map(|p| p.len()).unwrap_or(0);
        let mut flat = Vec::with_capacity(points.len() * dim);
        for p in points {
            check_len("SampleBatch::from_points", dim, p.len())?;
            flat.extend_from_slice(p);
        }
        Self::new(dim, flat)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> std::slice::ChunksExact<'_, f64> {
        self.points.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.points
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.points
    }

    /// First `n` points (or all of them if fewer).
    pub fn head(&self, n: usize) -> SampleBatch {
        let n = n.min(self.len());
        SampleBatch {
            dim: self.dim,
            points: self.points[..n * self.dim].to_vec(),
        }
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for p in self.iter() {
            for (a, b) in m.iter_mut().zip(p) {
                *a += b;
            }
        }
        let n = self.len() as f64;
        m.iter_mut().for_each(|a| *a /= n);
        m
    }

    /// Sample covariance (divides by `n − 1`), row-major `d×d`.
    pub fn covariance(&self) -> Vec<f64> {
        let d = self.dim;
        let m = self.mean();
        let mut c = vec![0.0; d * d];
        for p in self.iter() {
            for i in 0..d {
                for j in 0..d {
                    c[i * d + j] += (p[i] - m[i]) * (p[j] - m[j]);
                }
            }
        }
        let denom = (self.len().max(2) - 1) as f64;
        c.iter_mut().for_each(|v| *v /= denom);
        c
    }
}

/// RNG for a given seed and stream index.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// A density that can be sampled and whose log-density and score are known.
pub trait ReferenceDensity: Send + Sync {
    fn dim(&self) -> usize;

    fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> SampleBatch;

    fn log_density(&self, z: &[f64]) -> f64;

    /// `∇_z log ϱ(z)` written into `out`.
    fn grad_log_density(&self, z: &[f64], out: &mut [f64]);
}

/// One mixture component.
#[derive(Debug, Clone, PartialEq)]
pub enum Component {
    Gaussian {
        weight: f64,
        mean: Vec<f64>,
        /// Per-coordinate standard deviation (diagonal covariance).
        std: Vec<f64>,
    },
    UniformBox {
        weight: f64,
        lower: Vec<f64>,
        upper: Vec<f64>,
    },
}

impl Component {
    pub fn weight(&self) -> f64 {
        match self {
            Component::Gaussian { weight, .. } | Component::UniformBox { weight, .. } => *weight,
        }
    }

    fn dim(&self) -> usize {
        match self {
            Component::Gaussian { mean, .. } => mean.len(),
            Component::UniformBox { lower, .. } => lower.len(),
        }
    }

    fn log_density(&self, z: &[f64]) -> f64 {
        match self {
            Component::Gaussian { mean, std, .. } => {
                let mut acc = 0.0;
                for ((zi, mi), si) in z.iter().zip(mean).zip(std) {
                    let u = (zi - mi) / si;
                    acc += -0.5 * u * u - si.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
                }
                acc
            }
            Component::UniformBox { lower, upper, .. } => {
                let inside = z
                    .iter()
                    .zip(lower.iter().zip(upper))
                    .all(|(zi, (lo, hi))| *zi >= *lo && *zi <= *hi);
                if inside {
                    -lower.iter().zip(upper).map(|(lo, hi)| (hi - lo).ln()).sum::<f64>()
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    fn add_grad_log_density(&self, z: &[f64], scale: f64, out: &mut [f64]) {
        if let Component::Gaussian { mean, std, .. } = self {
            for (((o, zi), mi), si) in out.iter_mut().zip(z).zip(mean).zip(std) {
                *o -= scale * (zi - mi) / (si * si);
            }
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng, out: &mut [f64]) {
        match self {
            Component::Gaussian { mean, std, .. } => {
                for ((o, m), s) in out.iter_mut().zip(mean).zip(std) {
                    let g: f64 = rng.sample(StandardNormal);
                    *o = m + s * g;
                }
            }
            Component::UniformBox { lower, upper, .. } => {
                for ((o, lo), hi) in out.iter_mut().zip(lower).zip(upper) {
                    let u: f64 = rng.random();
                    *o = lo + (hi - lo) * u;
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplerKind {
    Gaussian,
    GaussianMixture,
    UniformBox,
    Mixed,
}

/// Validated reference-density description: a finite mixture of diagonal
/// Gaussians and axis-aligned boxes.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplerSpec {
    kind: SamplerKind,
    dim: usize,
    components: Vec<Component>,
    seed: u64,
}

impl SamplerSpec {
    pub fn new(components: Vec<Component>, seed: u64) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| Error::Config("sampler needs at least one component".into()))?;
        let dim = first.dim();
        if dim == 0 {
            return Err(Error::Config("sampler dimension must be ≥ 1".into()));
        }
        let mut total = 0.0;
        for c in &components {
            if c.dim() != dim {
                return Err(Error::Config(format!(
                    "sampler components disagree on dimension ({} vs {dim})",
                    c.dim()
                )));
            }
            if !(c.weight() > 0.0) {
                return Err(Error::Config("sampler weights must be positive".into()));
            }
            total += c.weight();
            match c {
                Component::Gaussian { mean, std, .. } => {
                    if std.len() != dim {
                        return Err(Error::Config("stddev length must equal mean length".into()));
                    }
                    if std.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
                        return Err(Error::Config("sampler stddevs must be positive".into()));
                    }
                    if mean.iter().any(|m| !m.is_finite()) {
                        return Err(Error::Config("sampler means must be finite".into()));
                    }
                }
                Component::UniformBox { lower, upper, .. } => {
                    if upper.len() != dim {
                        return Err(Error::Config("box bounds must have equal length".into()));
                    }
                    if lower.iter().zip(upper).any(|(lo, hi)| !(lo < hi)) {
                        return Err(Error::Config("box bounds must satisfy lower < upper".into()));
                    }
                }
            }
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "sampler weights must sum to 1, got {total}"
            )));
        }
        let gaussians = components
            .iter()
            .filter(|c| matches!(c, Component::Gaussian { .. }))
            .count();
        let kind = match (gaussians, components.len()) {
            (1, 1) => SamplerKind::Gaussian,
            (0, 1) => SamplerKind::UniformBox,
            (g, n) if g == n => SamplerKind::GaussianMixture,
            _ => SamplerKind::Mixed,
        };
        Ok(Self {
            kind,
            dim,
            components,
            seed,
        })
    }

    pub fn gaussian(mean: Vec<f64>, std: Vec<f64>, seed: u64) -> Result<Self> {
        Self::new(
            vec![Component::Gaussian {
                weight: 1.0,
                mean,
                std,
            }],
            seed,
        )
    }

    /// Isotropic `N(mean, σ²·I)`.
    pub fn isotropic(mean: Vec<f64>, std: f64, seed: u64) -> Result<Self> {
        let d = mean.len();
        Self::gaussian(mean, vec![std; d], seed)
    }

    pub fn standard_normal(dim: usize, seed: u64) -> Result<Self> {
        Self::isotropic(vec![0.0; dim], 1.0, seed)
    }

    pub fn uniform_box(lower: Vec<f64>, upper: Vec<f64>, seed: u64) -> Result<Self> {
        Self::new(
            vec![Component::UniformBox {
                weight: 1.0,
                lower,
                upper,
            }],
            seed,
        )
    }

    pub fn kind(&self) -> SamplerKind {
        self.kind
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    /// Index of the component that would be chosen by `u ∈ [0,1)`.
    fn pick(&self, u: f64) -> usize {
        let mut acc = 0.0;
        for (i, c) in self.components.iter().enumerate() {
            acc += c.weight();
            if u < acc {
                return i;
            }
        }
        self.components.len() - 1
    }

    /// Draws `n` points together with the index of the component used.
    pub fn sample_labelled(&self, n: usize, rng: &mut ChaCha8Rng) -> (SampleBatch, Vec<usize>) {
        let mut points = vec![0.0; n * self.dim];
        let mut labels = Vec::with_capacity(n);
        for row in points.chunks_exact_mut(self.dim) {
            let k = if self.components.len() == 1 {
                0
            } else {
                self.pick(rng.random())
            };
            self.components[k].draw(rng, row);
            labels.push(k);
        }
        (
            SampleBatch {
                dim: self.dim,
                points,
            },
            labels,
        )
    }
}

impl ReferenceDensity for SamplerSpec {
    fn dim(&self) -> usize {
        self.dim
    }

    fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> SampleBatch {
        self.sample_labelled(n, rng).0
    }

    fn log_density(&self, z: &[f64]) -> f64 {
        let logs: Vec<f64> = self
            .components
            .iter()
            .map(|c| c.weight().ln() + c.log_density(z))
            .collect();
        log_sum_exp(&logs)
    }

    fn grad_log_density(&self, z: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        let logs: Vec<f64> = self
            .components
            .iter()
            .map(|c| c.weight().ln() + c.log_density(z))
            .collect();
        let total = log_sum_exp(&logs);
        if !total.is_finite() {
            return;
        }
        for (c, l) in self.components.iter().zip(&logs) {
            let resp = (l - total).exp();
            if resp > 0.0 {
                c.add_grad_log_density(z, resp, out);
            }
        }
    }
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Draws `n` i.i.d. points from `spec` using its own seed on stream 0.
pub fn sample_reference(spec: &SamplerSpec, n: usize) -> Result<SampleBatch> {
    if n == 0 {
        return Err(Error::InvalidInput("sample count must be ≥ 1".into()));
    }
    Ok(spec.sample(n, &mut rng_for(spec.seed, 0)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_normal_mean_is_small() {
        let spec = SamplerSpec::standard_normal(1, 7).unwrap();
        let batch = sample_reference(&spec, 1_000_000).unwrap();
        assert!(batch.mean()[0].abs() < 0.004);
    }

    #[test]
    fn seeded_sampling_is_deterministic() {
        let spec = SamplerSpec::standard_normal(3, 11).unwrap();
        let a = sample_reference(&spec, 100).unwrap();
        let b = sample_reference(&spec, 100).unwrap();
        assert_eq!(a.as_flat(), b.as_flat());
    }

    #[test]
    fn mixture_frequencies() {
        let d = 10;
        let spec = SamplerSpec::new(
            vec![
                Component::Gaussian {
                    weight: 0.2,
                    mean: vec![0.0; d],
                    std: vec![0.1; d],
                },
                Component::Gaussian {
                    weight: 0.8,
                    mean: vec![2.0; d],
                    std: vec![0.2; d],
                },
            ],
            3,
        )
        .unwrap();
        assert_eq!(spec.kind(), SamplerKind::GaussianMixture);
        let n = 100_000;
        let (_, labels) = spec.sample_labelled(n, &mut rng_for(3, 0));
        let frac = labels.iter().filter(|&&k| k == 0).count() as f64 / n as f64;
        // 4 standard errors of a Bernoulli(0.2) frequency
        assert!((frac - 0.2).abs() < 4.0 * (0.2f64 * 0.8 / n as f64).sqrt());
    }

    #[test]
    fn mixed_box_fraction() {
        let d = 5;
        let spec = SamplerSpec::new(
            vec![
                Component::Gaussian {
                    weight: 0.2,
                    mean: vec![2.0; d],
                    std: vec![0.1; d],
                },
                Component::UniformBox {
                    weight: 0.8,
                    lower: vec![-1.0; d],
                    upper: vec![1.0; d],
                },
            ],
            5,
        )
        .unwrap();
        assert_eq!(spec.kind(), SamplerKind::Mixed);
        let n = 100_000;
        let batch = sample_reference(&spec, n).unwrap();
        let inside = batch
            .iter()
            .filter(|p| p.iter().all(|v| v.abs() <= 1.0))
            .count() as f64
            / n as f64;
        assert!((inside - 0.8).abs() < 4.0 * (0.16f64 / n as f64).sqrt());
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(SamplerSpec::gaussian(vec![0.0], vec![0.0], 1).is_err());
        assert!(SamplerSpec::new(
            vec![Component::Gaussian {
                weight: 0.5,
                mean: vec![0.0],
                std: vec![1.0]
            }],
            1
        )
        .is_err());
        assert!(SamplerSpec::uniform_box(vec![1.0], vec![0.0], 1).is_err());
        let spec = SamplerSpec::standard_normal(1, 1).unwrap();
        assert!(sample_reference(&spec, 0).is_err());
    }

    #[test]
    fn gaussian_score() {
        let spec = SamplerSpec::gaussian(vec![1.0, -1.0], vec![2.0, 0.5], 1).unwrap();
        let mut g = vec![0.0; 2];
        spec.grad_log_density(&[3.0, 0.0], &mut g);
        assert!((g[0] + 0.5).abs() < 1e-15);
        assert!((g[1] + 4.0).abs() < 1e-15);
        let expected = -0.5 - 2.0 - 2f64.ln() - 0.5f64.ln() - (2.0 * std::f64::consts::PI).ln();
        assert!((spec.log_density(&[3.0, 0.0]) - expected).abs() < 1e-13);
    }
}
