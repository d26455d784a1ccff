//! Matrix-free MINRES for symmetric positive-semidefinite operators.
//!
//! Unpreconditioned Paige–Saunders recurrence started from `x₀ = 0`. The
//! iterates stay in the Krylov space of `b`, so for a consistent singular
//! system (`b ∈ range(A)`) the result is the minimum-norm solution.

use crate::error::{check_len, Error, Result};

/// Default relative residual tolerance.
pub const DEFAULT_TOL: f64 = 3e-4;

/// Threshold on `‖A r‖ / (‖A‖ ‖r‖)` below which `b` is treated as having a
/// component outside `range(A)`. Kept at `√ε` rather than the residual
/// tolerance: on consistent but ill-conditioned systems the ratio reaches
/// `λ/λ_max` of the slowest resolved eigenvalue long before the residual
/// itself is small.
pub const INCONSISTENCY_TOL: f64 = 1.5e-8;

/// A symmetric linear operator known only through its action on vectors.
///
/// `apply` must be re-entrant: callers may evaluate it from several threads.
pub trait LinearOperator: Sync {
    fn dim(&self) -> usize;

    /// Writes `A·v` into `out` (overwriting it).
    fn apply(&self, v: &[f64], out: &mut [f64]);
}

/// Adapts a closure into a [`LinearOperator`].
pub struct FnOperator<F> {
    dim: usize,
    f: F,
}

impl<F> FnOperator<F>
where
    F: Fn(&[f64], &mut [f64]) + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F> LinearOperator for FnOperator<F>
where
    F: Fn(&[f64], &mut [f64]) + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, v: &[f64], out: &mut [f64]) {
        (self.f)(v, out)
    }
}

impl LinearOperator for super::DenseMatrix {
    fn dim(&self) -> usize {
        self.rows()
    }

    fn apply(&self, v: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.matvec(v));
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinresConfig {
    pub tol: f64,
    /// `None` means `2·dim`.
    pub max_iter: Option<usize>,
}

impl Default for MinresConfig {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iter: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MinresStatus {
    /// `‖b − A x‖ ≤ tol·‖b‖`.
    Converged,
    /// `b` has a component outside `range(A)`; `x` is a least-squares
    /// solution with `‖A r‖` below [`INCONSISTENCY_TOL`].
    LeastSquares,
    /// Iteration cap reached; `x` is the last (best) iterate.
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct MinresOutcome {
    pub x: Vec<f64>,
    /// True residual norm `‖b − A x‖`, recomputed after the last iterate.
    pub residual: f64,
    pub iterations: usize,
    pub status: MinresStatus,
}

impl MinresOutcome {
    pub fn converged(&self) -> bool {
        self.status != MinresStatus::MaxIterations
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Minimum-norm least-squares solve of `A x = b`.
///
/// Non-convergence is not an error: it is reported through
/// [`MinresStatus::MaxIterations`] and the caller decides what to do. A
/// non-finite value produced by the operator is a hard error.
///
/// When the recurrence detects that `b` has a component outside
/// `range(A)`, plain MINRES iterates pick up a null-space component. The
/// solve is then repeated on the consistent system `A² x = A b`, whose
/// Krylov space lies in `range(A)`, so the returned `x` is again the
/// minimum-norm least-squares solution.
pub fn minres_min_norm<A: LinearOperator + ?Sized>(
    a: &A,
    b: &[f64],
    config: &MinresConfig,
) -> Result<MinresOutcome> {
    let n = a.dim();
    check_len("minres right-hand side", n, b.len())?;
    if b.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "minres right-hand side",
            sample: None,
        });
    }
    let first = minres_core(a, b, config)?;
    if first.status != MinresStatus::LeastSquares {
        return Ok(first);
    }
    let squared = FnOperator::new(n, |v: &[f64], out: &mut [f64]| {
        let mut tmp = vec![0.0; v.len()];
        a.apply(v, &mut tmp);
        a.apply(&tmp, out);
    });
    let mut ab = vec![0.0; n];
    a.apply(b, &mut ab);
    let second = minres_core(&squared, &ab, config)?;
    let mut ax = vec![0.0; n];
    a.apply(&second.x, &mut ax);
    let residual = b
        .iter()
        .zip(&ax)
        .map(|(bi, ai)| (bi - ai) * (bi - ai))
        .sum::<f64>()
        .sqrt();
    Ok(MinresOutcome {
        x: second.x,
        residual,
        iterations: first.iterations + second.iterations,
        status: if second.status == MinresStatus::MaxIterations {
            MinresStatus::MaxIterations
        } else {
            MinresStatus::LeastSquares
        },
    })
}

fn minres_core<A: LinearOperator + ?Sized>(
    a: &A,
    b: &[f64],
    config: &MinresConfig,
) -> Result<MinresOutcome> {
    let n = a.dim();
    let max_iter = config.max_iter.unwrap_or(2 * n).max(1);
    let tol = config.tol;
    let lsq_tol = tol.min(INCONSISTENCY_TOL);

    let mut x = vec![0.0; n];
    let bnorm = norm(b);
    if bnorm == 0.0 {
        return Ok(MinresOutcome {
            x,
            residual: 0.0,
            iterations: 0,
            status: MinresStatus::Converged,
        });
    }

    let mut r1 = b.to_vec();
    let mut r2 = b.to_vec();
    let mut y = b.to_vec();
    let mut v = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut w1 = vec![0.0; n];
    let mut w2 = vec![0.0; n];

    let mut beta = bnorm;
    let mut oldb = 0.0;
    let mut dbar = 0.0;
    let mut epsln = 0.0;
    let mut phibar = bnorm;
    let mut cs = -1.0;
    let mut sn = 0.0;
    let mut tnorm2 = 0.0;
    let mut status = MinresStatus::MaxIterations;
    let mut iterations = 0;

    for itn in 1..=max_iter {
        iterations = itn;
        let s = 1.0 / beta;
        for (vi, yi) in v.iter_mut().zip(&y) {
            *vi = s * yi;
        }
        a.apply(&v, &mut y);
        if itn >= 2 {
            let f = beta / oldb;
            for (yi, ri) in y.iter_mut().zip(&r1) {
                *yi -= f * ri;
            }
        }
        let alfa = dot(&v, &y);
        let f = alfa / beta;
        for (yi, ri) in y.iter_mut().zip(&r2) {
            *yi -= f * ri;
        }
        std::mem::swap(&mut r1, &mut r2);
        r2.copy_from_slice(&y);
        oldb = beta;
        beta = norm(&y);
        if !alfa.is_finite() || !beta.is_finite() {
            return Err(Error::NonFinite {
                context: "minres operator application",
                sample: None,
            });
        }
        tnorm2 += alfa * alfa + oldb * oldb + beta * beta;

        let oldeps = epsln;
        let delta = cs * dbar + sn * alfa;
        let gbar = sn * dbar - cs * alfa;
        epsln = sn * beta;
        dbar = -cs * beta;
        let root = gbar.hypot(dbar);
        let arnorm = phibar * root;

        let gamma = gbar.hypot(beta).max(f64::EPSILON);
        cs = gbar / gamma;
        sn = beta / gamma;
        let phi = cs * phibar;
        phibar *= sn;

        let denom = 1.0 / gamma;
        std::mem::swap(&mut w1, &mut w2);
        std::mem::swap(&mut w2, &mut w);
        for i in 0..n {
            w[i] = (v[i] - oldeps * w1[i] - delta * w2[i]) * denom;
            x[i] += phi * w[i];
        }

        let anorm = tnorm2.sqrt();
        if phibar <= tol * bnorm {
            status = MinresStatus::Converged;
            break;
        }
        if arnorm <= lsq_tol * anorm * phibar {
            status = MinresStatus::LeastSquares;
            break;
        }
        // Lanczos exhausted an invariant subspace: nothing more to gain.
        if beta <= f64::EPSILON * anorm {
            status = if phibar <= tol.max(1e-12) * bnorm {
                MinresStatus::Converged
            } else {
                MinresStatus::LeastSquares
            };
            break;
        }
    }

    let mut ax = vec![0.0; n];
    a.apply(&x, &mut ax);
    let residual = b
        .iter()
        .zip(&ax)
        .map(|(bi, ai)| (bi - ai) * (bi - ai))
        .sum::<f64>()
        .sqrt();
    if !residual.is_finite() {
        return Err(Error::NonFinite {
            context: "minres residual",
            sample: None,
        });
    }
    Ok(MinresOutcome {
        x,
        residual,
        iterations,
        status,
    })
}
