//! Dense linear algebra, seeded sampling and the matrix-free MINRES solver.

mod dense;
mod minres;
mod sampling;

pub use dense::{dense_pinv_solve, DenseMatrix};
pub use minres::{
    minres_min_norm, FnOperator, LinearOperator, MinresConfig, MinresOutcome, MinresStatus,
    DEFAULT_TOL, INCONSISTENCY_TOL,
};
pub use sampling::{
    rng_for, sample_reference, Component, ReferenceDensity, SampleBatch, SamplerKind,
    SamplerSpec,
};

use rayon::prelude::*;

/// Fixed chunk length for sample reductions; chunk boundaries never depend
/// on the thread count.
pub const REDUCTION_CHUNK: usize = 64;

/// Sums per-item contributions into a vector of length `dim`.
///
/// `f(i, acc)` adds item `i`'s contribution into `acc`. With
/// `deterministic` the partial sums are formed per fixed-size chunk and
/// combined in index order, so the result is bit-identical for any number
/// of worker threads.
pub fn reduce_items<F>(n: usize, dim: usize, deterministic: bool, f: F) -> Vec<f64>
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    if deterministic {
        let partials: Vec<Vec<f64>> = (0..n.div_ceil(REDUCTION_CHUNK))
            .into_par_iter()
            .map(|c| {
                let mut acc = vec![0.0; dim];
                let end = ((c + 1) * REDUCTION_CHUNK).min(n);
                for i in c * REDUCTION_CHUNK..end {
                    f(i, &mut acc);
                }
                acc
            })
            .collect();
        let mut total = vec![0.0; dim];
        for p in partials {
            for (t, v) in total.iter_mut().zip(p) {
                *t += v;
            }
        }
        total
    } else {
        (0..n)
            .into_par_iter()
            .fold(
                || vec![0.0; dim],
                |mut acc, i| {
                    f(i, &mut acc);
                    acc
                },
            )
            .reduce(
                || vec![0.0; dim],
                |mut a, b| {
                    for (x, y) in a.iter_mut().zip(b) {
                        *x += y;
                    }
                    a
                },
            )
    }
}
