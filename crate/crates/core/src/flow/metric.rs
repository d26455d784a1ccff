//! Matrix-free pullback metric `Ĝ(θ) = (1/N) Σ J_iᵀ J_i`, the parameter
//! gradient `∇_θ F` and the kernel projection `𝒦_θ`.

use rayon::prelude::*;

use crate::energy::DriftField;
use crate::error::{check_len, Error, Result};
use crate::maps::{GramBlock, PushforwardMap, Tape};
use crate::numerics::{
    minres_min_norm, reduce_items, LinearOperator, MinresConfig, MinresOutcome, SampleBatch,
};

/// Samples per block in the blocked Gram product.
const GRAM_BLOCK: usize = 128;

/// `Ĝ(θ)` on a fixed batch, with one recorded forward pass per sample.
pub struct MetricOperator<'a> {
    map: &'a PushforwardMap,
    tapes: Vec<Tape>,
    /// Fixed-size sample blocks, for maps with a blocked Gram product.
    blocks: Option<Vec<GramBlock>>,
    deterministic: bool,
}

impl<'a> MetricOperator<'a> {
    pub fn new(map: &'a PushforwardMap, batch: &SampleBatch, deterministic: bool) -> Result<Self> {
        check_len("metric batch dimension", map.dim(), batch.dim())?;
        if batch.is_empty() {
            return Err(Error::InvalidInput("metric batch is empty".into()));
        }
        let tapes = (0..batch.len())
            .into_par_iter()
            .map(|i| map.record(batch.point(i)))
            .collect::<Vec<_>>();
        let blocks = tapes
            .par_chunks(GRAM_BLOCK)
            .map(|c| map.gram_block(c))
            .collect::<Option<Vec<_>>>();
        Ok(Self {
            map,
            tapes,
            blocks,
            deterministic,
        })
    }

    pub fn map(&self) -> &PushforwardMap {
        self.map
    }

    pub fn batch_len(&self) -> usize {
        self.tapes.len()
    }

    /// `T_θ(z_i)`
    pub fn output(&self, i: usize) -> &[f64] {
        self.tapes[i].output()
    }

    /// `J_i v`
    pub fn sample_jvp(&self, i: usize, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.map.dim()];
        self.map.jvp_recorded(&self.tapes[i], v, &mut out);
        out
    }

    fn accumulate<F>(&self, f: F) -> Vec<f64>
    where
        F: Fn(usize, &mut [f64]) + Sync,
    {
        self.accumulate_over(self.tapes.len(), f)
    }

    fn accumulate_over<F>(&self, items: usize, f: F) -> Vec<f64>
    where
        F: Fn(usize, &mut [f64]) + Sync,
    {
        let n = self.map.param_count();
        let mut acc = reduce_items(items, n, self.deterministic, f);
        let inv = 1.0 / self.tapes.len() as f64;
        acc.iter_mut().for_each(|a| *a *= inv);
        acc
    }

    /// `(1/N) Σ J_iᵀ f_i`
    pub fn gradient(&self, drift: &DriftField) -> Result<Vec<f64>> {
        check_len("drift batch size", self.tapes.len(), drift.len())?;
        check_len("drift dimension", self.map.dim(), drift.dim())?;
        let g = self.accumulate(|i, acc| {
            self.map.vjp_recorded(&self.tapes[i], drift.value(i), 1.0, acc)
        });
        if g.iter().all(|x| x.is_finite()) {
            return Ok(g);
        }
        let n = self.map.param_count();
        let sample = (0..self.tapes.len()).find(|&i| {
            let mut acc = vec![0.0; n];
            self.map.vjp_recorded(&self.tapes[i], drift.value(i), 1.0, &mut acc);
            acc.iter().any(|x| !x.is_finite())
        });
        Err(Error::NonFinite {
            context: "parameter gradient",
            sample,
        })
    }

    /// `(J_i ξ)_i` as a field on the batch.
    pub fn push_direction(&self, xi: &[f64]) -> Result<DriftField> {
        check_len("parameter direction", self.map.param_count(), xi.len())?;
        let d = self.map.dim();
        let values: Vec<f64> = (0..self.tapes.len())
            .into_par_iter()
            .flat_map_iter(|i| self.sample_jvp(i, xi))
            .collect();
        DriftField::new(d, values)
    }
}

impl LinearOperator for MetricOperator<'_> {
    fn dim(&self) -> usize {
        self.map.param_count()
    }

    fn apply(&self, v: &[f64], out: &mut [f64]) {
        if let Some(blocks) = &self.blocks {
            let g = self.accumulate_over(blocks.len(), |b, acc| self.map.gram_block_apply(&blocks[b], v, acc));
            out.copy_from_slice(&g);
            return;
        }
        let d = self.map.dim();
        let g = self.accumulate(|i, acc| {
            let mut jv = vec![0.0; d];
            self.map.jvp_recorded(&self.tapes[i], v, &mut jv);
            self.map.vjp_recorded(&self.tapes[i], &jv, 1.0, acc);
        });
        out.copy_from_slice(&g);
    }
}

/// `Ĝ v` with a per-sample finiteness check.
pub fn metric_matvec(op: &MetricOperator<'_>, v: &[f64]) -> Result<Vec<f64>> {
    check_len("metric matvec input", op.dim(), v.len())?;
    let mut out = vec![0.0; op.dim()];
    op.apply(v, &mut out);
    if out.iter().all(|x| x.is_finite()) {
        return Ok(out);
    }
    let sample = (0..op.batch_len()).find(|&i| op.sample_jvp(i, v).iter().any(|x| !x.is_finite()));
    Err(Error::NonFinite {
        context: "metric matvec",
        sample,
    })
}

/// `∇_θ F = (1/N) Σ ∂_θT_θ(z_i)ᵀ v(z_i)`
pub fn grad_theta_f(
    map: &PushforwardMap,
    batch: &SampleBatch,
    drift: &DriftField,
    deterministic: bool,
) -> Result<Vec<f64>> {
    check_len("drift batch size", batch.len(), drift.len())?;
    MetricOperator::new(map, batch, deterministic)?.gradient(drift)
}

/// `𝒦_θ[f](z_i) = J_i ξ` with `ξ = Ĝ† (1/N) Σ J_jᵀ f_j`.
pub fn kernel_project(
    op: &MetricOperator<'_>,
    f: &DriftField,
    solver: &MinresConfig,
) -> Result<(DriftField, MinresOutcome)> {
    let rhs = op.gradient(f)?;
    let solve = minres_min_norm(op, &rhs, solver)?;
    Ok((op.push_direction(&solve.x)?, solve))
}

/// Natural-gradient velocity `η = −Ĝ† ∇_θ F`.
#[derive(Debug, Clone)]
pub struct Velocity {
    pub eta: Vec<f64>,
    pub grad: Vec<f64>,
    pub solve: MinresOutcome,
}

impl Velocity {
    /// `⟨∇_θ F, η⟩`; non-positive for a descent direction.
    pub fn descent(&self) -> f64 {
        self.grad.iter().zip(&self.eta).map(|(g, e)| g * e).sum()
    }

    pub fn grad_norm(&self) -> f64 {
        self.grad.iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    /// `‖Ĝη + ∇_θ F‖ / ‖∇_θ F‖` (0 for a zero gradient).
    pub fn relative_residual(&self) -> f64 {
        let g = self.grad_norm();
        if g == 0.0 {
            0.0
        } else {
            self.solve.residual / g
        }
    }
}

pub fn natural_velocity(
    op: &MetricOperator<'_>,
    drift: &DriftField,
    solver: &MinresConfig,
) -> Result<Velocity> {
    let grad = op.gradient(drift)?;
    let rhs: Vec<f64> = grad.iter().map(|g| -g).collect();
    let solve = minres_min_norm(op, &rhs, solver)?;
    Ok(Velocity {
        eta: solve.x.clone(),
        grad,
        solve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maps::Architecture;

    #[test]
    fn zero_vector_maps_to_zero() {
        let map = PushforwardMap::random(Architecture::ResidualMlp { hidden: vec![4] }, 2, 1, 0.5).unwrap();
        let batch = SampleBatch::new(2, vec![0.1, 0.2, -0.3, 0.4]).unwrap();
        let op = MetricOperator::new(&map, &batch, true).unwrap();
        let out = metric_matvec(&op, &vec![0.0; map.param_count()]).unwrap();
        assert!(out.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn blocked_gram_matches_per_sample_products() {
        for hidden in [vec![], vec![7], vec![9, 5, 6]] {
            let map = PushforwardMap::random(Architecture::ResidualMlp { hidden }, 3, 2, 0.7).unwrap();
            let spec = crate::numerics::SamplerSpec::standard_normal(3, 5).unwrap();
            let batch = crate::numerics::sample_reference(&spec, 2 * GRAM_BLOCK + 37).unwrap();
            let op = MetricOperator::new(&map, &batch, true).unwrap();
            assert!(op.blocks.is_some());
            let n = map.param_count();
            let v: Vec<f64> = (0..n).map(|k| ((k * 7919) % 13) as f64 / 6.0 - 1.0).collect();
            let mut expected = vec![0.0; n];
            for i in 0..op.batch_len() {
                map.vjp_recorded(&op.tapes[i], &op.sample_jvp(i, &v), 1.0, &mut expected);
            }
            let got = metric_matvec(&op, &v).unwrap();
            let scale = expected.iter().fold(0.0f64, |m, x| m.max(x.abs())) / op.batch_len() as f64;
            for (g, e) in got.iter().zip(&expected) {
                assert!((g - e / op.batch_len() as f64).abs() <= 1e-12 * scale, "{g} vs {e}");
            }
        }
    }

    #[test]
    fn symmetric_batch_gives_identity_metric() {
        // T(z) = θ₁z + θ₂ on {−1, 1}: Ĝ = I exactly
        let map = PushforwardMap::new(Architecture::Affine, 1, vec![1.0, 0.0]).unwrap();
        let batch = SampleBatch::new(1, vec![-1.0, 1.0]).unwrap();
        let op = MetricOperator::new(&map, &batch, true).unwrap();
        assert_eq!(metric_matvec(&op, &[2.0, -3.0]).unwrap(), vec![2.0, -3.0]);
    }

    #[test]
    fn misaligned_drift_rejected() {
        let map = PushforwardMap::new(Architecture::Affine, 1, vec![1.0, 0.0]).unwrap();
        let batch = SampleBatch::new(1, vec![-1.0, 1.0]).unwrap();
        let drift = DriftField::zeros(1, 3);
        assert!(grad_theta_f(&map, &batch, &drift, true).is_err());
    }
}
