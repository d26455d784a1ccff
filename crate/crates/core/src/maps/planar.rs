//! Stack of planar layers `f(x) = x + tanh(wᵀx + b)·u`.
//!
//! Parameter layout, layer-major: `[w (d), b, u (d)]` per layer.

use crate::numerics::DenseMatrix;

#[inline]
pub(crate) fn stride(d: usize) -> usize {
    2 * d + 1
}

pub(crate) fn param_count(d: usize, layers: usize) -> usize {
    layers * stride(d)
}

/// Borrowed view of one layer inside θ.
#[derive(Debug, Clone, Copy)]
pub struct PlanarLayer<'a> {
    pub w: &'a [f64],
    pub b: f64,
    pub u: &'a [f64],
}

pub(crate) fn layer(theta: &[f64], d: usize, j: usize) -> PlanarLayer<'_> {
    let s = &theta[j * stride(d)..(j + 1) * stride(d)];
    PlanarLayer {
        w: &s[..d],
        b: s[d],
        u: &s[d + 1..],
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Layer inputs and activations recorded on the forward pass.
#[derive(Debug, Clone)]
pub struct PlanarTape {
    /// Input to each layer, `layers × d`.
    pub(crate) inputs: Vec<f64>,
    pub(crate) h: Vec<f64>,
    pub(crate) hp: Vec<f64>,
}

pub(crate) fn record(theta: &[f64], d: usize, layers: usize, z: &[f64]) -> (Vec<f64>, PlanarTape) {
    let mut x = z.to_vec();
    let mut inputs = Vec::with_capacity(layers * d);
    let mut hs = Vec::with_capacity(layers);
    let mut hps = Vec::with_capacity(layers);
    for j in 0..layers {
        let l = layer(theta, d, j);
        inputs.extend_from_slice(&x);
        let h = (dot(l.w, &x) + l.b).tanh();
        for (xi, ui) in x.iter_mut().zip(l.u) {
            *xi += h * ui;
        }
        hs.push(h);
        hps.push(1.0 - h * h);
    }
    (
        x,
        PlanarTape {
            inputs,
            h: hs,
            hp: hps,
        },
    )
}

pub(crate) fn jvp(theta: &[f64], d: usize, layers: usize, tape: &PlanarTape, v: &[f64], out: &mut [f64]) {
    out.fill(0.0);
    for j in 0..layers {
        let l = layer(theta, d, j);
        let dl = layer(v, d, j);
        let xin = &tape.inputs[j * d..(j + 1) * d];
        let ds = dot(l.w, out) + dot(dl.w, xin) + dl.b;
        let g = tape.hp[j] * ds;
        let h = tape.h[j];
        for k in 0..d {
            out[k] += g * l.u[k] + h * dl.u[k];
        }
    }
}

pub(crate) fn vjp(
    theta: &[f64],
    d: usize,
    layers: usize,
    tape: &PlanarTape,
    y: &[f64],
    scale: f64,
    acc: &mut [f64],
) {
    let mut adj: Vec<f64> = y.iter().map(|v| v * scale).collect();
    for j in (0..layers).rev() {
        let l = layer(theta, d, j);
        let xin = &tape.inputs[j * d..(j + 1) * d];
        let base = j * stride(d);
        let h = tape.h[j];
        let g = tape.hp[j] * dot(l.u, &adj);
        for k in 0..d {
            acc[base + k] += g * xin[k];
            acc[base + d + 1 + k] += h * adj[k];
        }
        acc[base + d] += g;
        for (a, wk) in adj.iter_mut().zip(l.w) {
            *a += g * wk;
        }
    }
}

/// Output point, spatial Jacobian, `(sign, log|det|)` and `∇_z log|det|`.
pub(crate) fn spatial(
    theta: &[f64],
    d: usize,
    layers: usize,
    z: &[f64],
) -> (Vec<f64>, DenseMatrix, f64, f64, Vec<f64>) {
    let mut x = z.to_vec();
    let mut jac = DenseMatrix::identity(d);
    let mut sign = 1.0;
    let mut logdet = 0.0;
    let mut grad = vec![0.0; d];
    let mut w_j = vec![0.0; d];
    for j in 0..layers {
        let l = layer(theta, d, j);
        let h = (dot(l.w, &x) + l.b).tanh();
        let hp = 1.0 - h * h;
        let c = dot(l.u, l.w);
        let det = 1.0 + hp * c;
        if det < 0.0 {
            sign = -sign;
        }
        logdet += det.abs().ln();
        // ∇_z s_j = J_{j-1}ᵀ w_j
        w_j.copy_from_slice(&jac.transpose_matvec(l.w));
        // d/ds log|1 + tanh'(s) c| = tanh''(s) c / (1 + tanh'(s) c)
        let coef = -2.0 * h * hp * c / det;
        for (g, wk) in grad.iter_mut().zip(&w_j) {
            *g += coef * wk;
        }
        for r in 0..d {
            let ur = hp * l.u[r];
            for k in 0..d {
                let v = jac.get(r, k) + ur * w_j[k];
                jac.set(r, k, v);
            }
        }
        for (xi, ui) in x.iter_mut().zip(l.u) {
            *xi += h * ui;
        }
    }
    (x, jac, sign, logdet, grad)
}

/// Per-layer log-determinants at the intermediate points.
pub(crate) fn layer_logdets(theta: &[f64], d: usize, layers: usize, z: &[f64]) -> Vec<f64> {
    let mut x = z.to_vec();
    (0..layers)
        .map(|j| {
            let l = layer(theta, d, j);
            let h = (dot(l.w, &x) + l.b).tanh();
            let det = 1.0 + (1.0 - h * h) * dot(l.u, l.w);
            for (xi, ui) in x.iter_mut().zip(l.u) {
                *xi += h * ui;
            }
            det.abs().ln()
        })
        .collect()
}

/// `m(s) = −1 + log(1 + eˢ)`
fn softplus_shift(s: f64) -> f64 {
    let sp = if s > 30.0 { s } else { s.exp().ln_1p() };
    -1.0 + sp
}

/// Reprojects `u ← u + (m(uᵀw) − uᵀw)·w/‖w‖²` on every layer with
/// `uᵀw ≤ −1`. Returns the number of layers changed.
pub(crate) fn enforce_invertibility(theta: &mut [f64], d: usize, layers: usize) -> usize {
    let mut changed = 0;
    for j in 0..layers {
        let s = &mut theta[j * stride(d)..(j + 1) * stride(d)];
        let (w, rest) = s.split_at_mut(d);
        let u = &mut rest[1..];
        let uw = dot(u, w);
        if uw > -1.0 {
            continue;
        }
        let ww = dot(w, w);
        if ww == 0.0 {
            continue;
        }
        let shift = (softplus_shift(uw) - uw) / ww;
        for (ui, wi) in u.iter_mut().zip(w.iter()) {
            *ui += shift * wi;
        }
        changed += 1;
    }
    changed
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reprojection_restores_constraint() {
        // w = (1, 0), u = (−3, 2): uᵀw = −3
        let mut theta = vec![1.0, 0.0, 0.2, -3.0, 2.0];
        assert_eq!(enforce_invertibility(&mut theta, 2, 1), 1);
        let l = layer(&theta, 2, 0);
        let uw = dot(l.u, l.w);
        assert!(uw > -1.0);
        assert!((uw - softplus_shift(-3.0)).abs() < 1e-15);
        // component orthogonal to w untouched
        assert_eq!(l.u[1], 2.0);
    }

    #[test]
    fn admissible_layers_untouched() {
        let mut theta = vec![1.0, 0.5, 0.0, 0.3, 0.1];
        let before = theta.clone();
        assert_eq!(enforce_invertibility(&mut theta, 2, 1), 0);
        assert_eq!(theta, before);
    }
}
