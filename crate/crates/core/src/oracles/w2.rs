//! Empirical Wasserstein-2 distance between equal-size point clouds by
//! exact assignment.

use rand::seq::index::sample;

use crate::error::{Error, Result};
use crate::numerics::{rng_for, SampleBatch};

/// Largest batch solved exactly.
pub const MAX_EXACT: usize = 2048;

/// Minimum-cost perfect matching on a dense `n × n` cost matrix
/// (shortest augmenting paths with potentials, `O(n³)`).
///
/// Returns `assignment[row] = column`.
pub fn min_cost_assignment(n: usize, cost: &[f64]) -> Vec<usize> {
    // 1-based arrays; index 0 is the virtual source column
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let row = &cost[(i0 - 1) * n..i0 * n];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = row[j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    assignment
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `√( min_π (1/N) Σ |a_i − b_π(i)|² )`
pub fn empirical_w2(a: &SampleBatch, b: &SampleBatch) -> Result<f64> {
    if a.len() != b.len() || a.dim() != b.dim() {
        return Err(Error::InvalidInput(format!(
            "W2 needs equal-size batches of equal dimension, got {}×{} and {}×{}",
            a.len(),
            a.dim(),
            b.len(),
            b.dim()
        )));
    }
    let n = a.len();
    if n == 0 || n > MAX_EXACT {
        return Err(Error::InvalidInput(format!(
            "exact W2 supports 1..={MAX_EXACT} points, got {n}"
        )));
    }
    let mut cost = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            cost[i * n + j] = sq_dist(a.point(i), b.point(j));
        }
    }
    let assignment = min_cost_assignment(n, &cost);
    let total: f64 = assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| cost[i * n + j])
        .sum();
    Ok((total / n as f64).sqrt())
}

/// Subsampled W2: median over repeated exact solves on random subsets.
#[derive(Debug, Clone, PartialEq)]
pub struct W2Estimate {
    pub median: f64,
    pub min: f64,
    pub max: f64,
    pub draws: Vec<f64>,
}

/// Exact W2 when both batches fit, otherwise the median of `draws`
/// exact solves on random subsets of `size` points.
pub fn empirical_w2_subsampled(
    a: &SampleBatch,
    b: &SampleBatch,
    size: usize,
    draws: usize,
    seed: u64,
) -> Result<W2Estimate> {
    if a.len() == b.len() && a.len() <= MAX_EXACT {
        let w = empirical_w2(a, b)?;
        return Ok(W2Estimate {
            median: w,
            min: w,
            max: w,
            draws: vec![w],
        });
    }
    let size = size.min(a.len()).min(b.len()).min(MAX_EXACT);
    if size == 0 || draws == 0 {
        return Err(Error::InvalidInput("W2 subsampling needs points and draws".into()));
    }
    let mut rng = rng_for(seed, 0);
    let mut values = Vec::with_capacity(draws);
    for _ in 0..draws {
        let pick = |batch: &SampleBatch, rng: &mut _| {
            let idx = sample(rng, batch.len(), size);
            let pts: Vec<f64> = idx.iter().flat_map(|i| batch.point(i).to_vec()).collect();
            SampleBatch::new(batch.dim(), pts)
        };
        let sa = pick(a, &mut rng)?;
        let sb = pick(b, &mut rng)?;
        values.push(empirical_w2(&sa, &sb)?);
    }
    let mut sorted = values.clone();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    let median = if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        0.5 * (sorted[mid - 1] + sorted[mid])
    };
    Ok(W2Estimate {
        median,
        min: sorted[0],
        max: sorted[sorted.len() - 1],
        draws: values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_instance() {
        let a = SampleBatch::new(1, vec![0.0, 1.0, 2.0]).unwrap();
        let b = SampleBatch::new(1, vec![2.5, 0.5, 1.5]).unwrap();
        assert!((empirical_w2(&a, &b).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn assignment_beats_identity_permutation() {
        let cost = vec![4.0, 1.0, 3.0, 2.0, 0.0, 5.0, 3.0, 2.0, 2.0];
        let asg = min_cost_assignment(3, &cost);
        let total: f64 = asg.iter().enumerate().map(|(i, &j)| cost[i * 3 + j]).sum();
        assert_eq!(total, 5.0);
    }

    #[test]
    fn size_checks() {
        let a = SampleBatch::new(1, vec![0.0, 1.0]).unwrap();
        let b = SampleBatch::new(1, vec![0.0]).unwrap();
        assert!(empirical_w2(&a, &b).is_err());
        let big = SampleBatch::new(1, vec![0.0; MAX_EXACT + 1]).unwrap();
        assert!(empirical_w2(&big, &big).is_err());
    }
}
