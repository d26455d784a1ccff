//! Residual network `T(z) = z + W_out·σ(…σ(W₁z + c₁)…)` with `σ = tanh` and
//! no output bias.
//!
//! Parameter layout: for each hidden layer the weight matrix (row-major,
//! `width × fan_in`) followed by its bias, then the output weight matrix
//! (`d × last_width`, row-major).

use crate::numerics::DenseMatrix;

#[derive(Debug, Clone, Copy)]
pub(crate) struct LayerShape {
    pub fan_in: usize,
    pub width: usize,
    /// Offset of the weight matrix in θ; the bias follows it.
    pub offset: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct MlpLayout {
    pub d: usize,
    pub hidden: Vec<LayerShape>,
    pub out_offset: usize,
    pub n: usize,
}

impl MlpLayout {
    pub fn new(d: usize, widths: &[usize]) -> Self {
        let mut hidden = Vec::with_capacity(widths.len());
        let mut offset = 0;
        let mut fan_in = d;
        for &w in widths {
            hidden.push(LayerShape {
                fan_in,
                width: w,
                offset,
            });
            offset += w * fan_in + w;
            fan_in = w;
        }
        let out_offset = offset;
        let n = offset + d * fan_in;
        Self {
            d,
            hidden,
            out_offset,
            n,
        }
    }

    fn last_width(&self) -> usize {
        self.hidden.last().map(|l| l.width).unwrap_or(self.d)
    }
}

/// Hidden activations `a_1 … a_L` recorded on the forward pass.
#[derive(Debug, Clone)]
pub struct MlpTape {
    pub(crate) z: Vec<f64>,
    pub(crate) acts: Vec<Vec<f64>>,
}

/// Dot product with four independent accumulators, so the reduction
/// vectorizes instead of serializing on the add latency.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn affine_into(w: &[f64], bias: Option<&[f64]>, input: &[f64], out: &mut [f64]) {
    let fan_in = input.len();
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w[r * fan_in..(r + 1) * fan_in];
        *o = bias.map(|b| b[r]).unwrap_or(0.0) + dot(row, input);
    }
}

/// `out += Wᵀ v` for row-major `W` of shape `v.len() × out.len()`.
#[inline]
fn transpose_accumulate(w: &[f64], v: &[f64], out: &mut [f64]) {
    let fan_in = out.len();
    for (r, vr) in v.iter().enumerate() {
        if *vr == 0.0 {
            continue;
        }
        let row = &w[r * fan_in..(r + 1) * fan_in];
        for (o, a) in out.iter_mut().zip(row) {
            *o += vr * a;
        }
    }
}

pub(crate) fn record(theta: &[f64], layout: &MlpLayout, z: &[f64]) -> (Vec<f64>, MlpTape) {
    let mut acts: Vec<Vec<f64>> = Vec::with_capacity(layout.hidden.len());
    for shape in &layout.hidden {
        let input: &[f64] = acts.last().map(|a| a.as_slice()).unwrap_or(z);
        let w = &theta[shape.offset..shape.offset + shape.width * shape.fan_in];
        let c = &theta[shape.offset + shape.width * shape.fan_in..][..shape.width];
        let mut a = vec![0.0; shape.width];
        affine_into(w, Some(c), input, &mut a);
        a.iter_mut().for_each(|v| *v = v.tanh());
        acts.push(a);
    }
    let last: &[f64] = acts.last().map(|a| a.as_slice()).unwrap_or(z);
    let wo = &theta[layout.out_offset..layout.n];
    let mut x = vec![0.0; layout.d];
    affine_into(wo, None, last, &mut x);
    for (xi, zi) in x.iter_mut().zip(z) {
        *xi += zi;
    }
    (
        x,
        MlpTape {
            z: z.to_vec(),
            acts,
        },
    )
}

pub(crate) fn jvp(theta: &[f64], layout: &MlpLayout, tape: &MlpTape, v: &[f64], out: &mut [f64]) {
    let mut dot_a: Vec<f64> = Vec::new();
    for (l, shape) in layout.hidden.iter().enumerate() {
        let input: &[f64] = if l == 0 { &tape.z } else { &tape.acts[l - 1] };
        let wsize = shape.width * shape.fan_in;
        let w = &theta[shape.offset..shape.offset + wsize];
        let dw = &v[shape.offset..shape.offset + wsize];
        let dc = &v[shape.offset + wsize..][..shape.width];
        let mut dp = vec![0.0; shape.width];
        affine_into(dw, Some(dc), input, &mut dp);
        if l > 0 {
            for (r, o) in dp.iter_mut().enumerate() {
                let row = &w[r * shape.fan_in..(r + 1) * shape.fan_in];
                *o += dot(row, &dot_a);
            }
        }
        let a = &tape.acts[l];
        for (p, ai) in dp.iter_mut().zip(a) {
            *p *= 1.0 - ai * ai;
        }
        dot_a = dp;
    }
    let last: &[f64] = tape.acts.last().map(|a| a.as_slice()).unwrap_or(&tape.z);
    let wo = &theta[layout.out_offset..layout.n];
    let dwo = &v[layout.out_offset..layout.n];
    affine_into(dwo, None, last, out);
    if !layout.hidden.is_empty() {
        let width = layout.last_width();
        for (r, o) in out.iter_mut().enumerate() {
            let row = &wo[r * width..(r + 1) * width];
            *o += dot(row, &dot_a);
        }
    }
}

pub(crate) fn vjp(
    theta: &[f64],
    layout: &MlpLayout,
    tape: &MlpTape,
    y: &[f64],
    scale: f64,
    acc: &mut [f64],
) {
    let width = layout.last_width();
    let last: &[f64] = tape.acts.last().map(|a| a.as_slice()).unwrap_or(&tape.z);
    for (r, yr) in y.iter().enumerate() {
        let g = scale * yr;
        let dst = &mut acc[layout.out_offset + r * width..layout.out_offset + (r + 1) * width];
        for (o, a) in dst.iter_mut().zip(last) {
            *o += g * a;
        }
    }
    if layout.hidden.is_empty() {
        return;
    }
    let wo = &theta[layout.out_offset..layout.n];
    let mut adj = vec![0.0; width];
    let ys: Vec<f64> = y.iter().map(|v| v * scale).collect();
    transpose_accumulate(wo, &ys, &mut adj);
    for (l, shape) in layout.hidden.iter().enumerate().rev() {
        let a = &tape.acts[l];
        for (g, ai) in adj.iter_mut().zip(a) {
            *g *= 1.0 - ai * ai;
        }
        let input: &[f64] = if l == 0 { &tape.z } else { &tape.acts[l - 1] };
        let wsize = shape.width * shape.fan_in;
        for (r, gr) in adj.iter().enumerate() {
            if *gr == 0.0 {
                continue;
            }
            let dst = &mut acc[shape.offset + r * shape.fan_in..shape.offset + (r + 1) * shape.fan_in];
            for (o, xi) in dst.iter_mut().zip(input) {
                *o += gr * xi;
            }
            acc[shape.offset + wsize + r] += gr;
        }
        if l > 0 {
            let w = &theta[shape.offset..shape.offset + wsize];
            let mut prev = vec![0.0; shape.fan_in];
            transpose_accumulate(w, &adj, &mut prev);
            adj = prev;
        }
    }
}

/// Strided view of a matrix in a flat buffer.
#[derive(Clone, Copy)]
struct Mat<'a> {
    data: &'a [f64],
    rows: usize,
    cols: usize,
    rs: usize,
    cs: usize,
}

impl<'a> Mat<'a> {
    fn rm(data: &'a [f64], rows: usize, cols: usize) -> Self {
        Self { data, rows, cols, rs: cols, cs: 1 }
    }

    fn t(self) -> Self {
        Self {
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
            ..self
        }
    }

    fn fits(&self) -> bool {
        self.rows == 0 || self.cols == 0 || (self.rows - 1) * self.rs + (self.cols - 1) * self.cs < self.data.len()
    }
}

/// `C = A B + beta C` for a row-major `C`.
fn gemm(a: Mat<'_>, b: Mat<'_>, beta: f64, c: &mut [f64], rows: usize, cols: usize) {
    assert!(a.rows == rows && b.cols == cols && a.cols == b.rows);
    assert!(a.fits() && b.fits() && c.len() >= rows * cols);
    if rows == 0 || cols == 0 {
        return;
    }
    if a.cols == 0 {
        c[..rows * cols].iter_mut().for_each(|x| *x *= beta);
        return;
    }
    // SAFETY: every index reached through the strides lies inside the
    // checked buffers, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            rows,
            a.cols,
            cols,
            1.0,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.as_mut_ptr(),
            cols as isize,
            1,
        );
    }
}

/// Tapes of a block of samples, sample-major, so that the Gram product
/// over the block is a short chain of matrix products.
#[derive(Debug, Clone)]
pub(crate) struct MlpBlock {
    m: usize,
    z: Vec<f64>,
    acts: Vec<Vec<f64>>,
    /// `σ'(p) = 1 − a²` per layer
    slopes: Vec<Vec<f64>>,
}

pub(crate) fn block(layout: &MlpLayout, tapes: &[&MlpTape]) -> MlpBlock {
    let z = tapes.iter().flat_map(|t| t.z.iter().copied()).collect();
    let acts: Vec<Vec<f64>> = (0..layout.hidden.len())
        .map(|l| tapes.iter().flat_map(|t| t.acts[l].iter().copied()).collect())
        .collect();
    let slopes = acts.iter().map(|a| a.iter().map(|v| 1.0 - v * v).collect()).collect();
    MlpBlock {
        m: tapes.len(),
        z,
        acts,
        slopes,
    }
}

/// `acc += Σ_i J_iᵀ J_i v` over the samples of `b`.
pub(crate) fn gram_block(theta: &[f64], layout: &MlpLayout, b: &MlpBlock, v: &[f64], acc: &mut [f64]) {
    let m = b.m;
    let (d, width) = (layout.d, layout.last_width());
    let input = |l: usize| if l == 0 { &b.z } else { &b.acts[l - 1] };
    let mut tangent: Vec<f64> = Vec::new();
    for (l, s) in layout.hidden.iter().enumerate() {
        let wsize = s.width * s.fan_in;
        let w = &theta[s.offset..][..wsize];
        let dw = &v[s.offset..][..wsize];
        let dc = &v[s.offset + wsize..][..s.width];
        let mut h: Vec<f64> = dc.iter().copied().cycle().take(m * s.width).collect();
        gemm(Mat::rm(input(l), m, s.fan_in), Mat::rm(dw, s.width, s.fan_in).t(), 1.0, &mut h, m, s.width);
        if l > 0 {
            gemm(Mat::rm(&tangent, m, s.fan_in), Mat::rm(w, s.width, s.fan_in).t(), 1.0, &mut h, m, s.width);
        }
        h.iter_mut().zip(&b.slopes[l]).for_each(|(x, s)| *x *= s);
        tangent = h;
    }
    let nl = layout.hidden.len();
    let last = input(nl);
    let wo = &theta[layout.out_offset..layout.n];
    let dwo = &v[layout.out_offset..layout.n];
    let mut y = vec![0.0; m * d];
    gemm(Mat::rm(last, m, width), Mat::rm(dwo, d, width).t(), 0.0, &mut y, m, d);
    if nl > 0 {
        gemm(Mat::rm(&tangent, m, width), Mat::rm(wo, d, width).t(), 1.0, &mut y, m, d);
    }

    let acc_out = &mut acc[layout.out_offset..layout.n];
    gemm(Mat::rm(&y, m, d).t(), Mat::rm(last, m, width), 1.0, acc_out, d, width);
    if nl == 0 {
        return;
    }
    let mut g = vec![0.0; m * width];
    gemm(Mat::rm(&y, m, d), Mat::rm(wo, d, width), 0.0, &mut g, m, width);
    for (l, s) in layout.hidden.iter().enumerate().rev() {
        g.iter_mut().zip(&b.slopes[l]).for_each(|(x, s)| *x *= s);
        let wsize = s.width * s.fan_in;
        let acc_w = &mut acc[s.offset..][..wsize];
        gemm(Mat::rm(&g, m, s.width).t(), Mat::rm(input(l), m, s.fan_in), 1.0, acc_w, s.width, s.fan_in);
        let acc_c = &mut acc[s.offset + wsize..][..s.width];
        for row in g.chunks_exact(s.width) {
            acc_c.iter_mut().zip(row).for_each(|(a, x)| *a += x);
        }
        if l > 0 {
            let w = &theta[s.offset..][..wsize];
            let mut prev = vec![0.0; m * s.fan_in];
            gemm(Mat::rm(&g, m, s.width), Mat::rm(w, s.width, s.fan_in), 0.0, &mut prev, m, s.fan_in);
            g = prev;
        }
    }
}

/// Output, spatial Jacobian, `(sign, log|det|)` and `∇_z log|det J|`.
///
/// The Jacobian comes from `d` forward-mode tangents; its spatial
/// derivatives from nested forward-mode directional derivatives, then
/// `∂_k log|det J| = tr(J⁻¹ ∂_k J)`.
pub(crate) fn spatial(
    theta: &[f64],
    layout: &MlpLayout,
    z: &[f64],
    want_grad: bool,
) -> (Vec<f64>, DenseMatrix, f64, f64, Option<Vec<f64>>) {
    let d = layout.d;
    let (x, tape) = record(theta, layout, z);
    let nl = layout.hidden.len();
    // tangents[k][l] = ṗ_l along e_k (pre-activation tangent)
    let mut tangents: Vec<Vec<Vec<f64>>> = Vec::with_capacity(d);
    let mut jac = DenseMatrix::identity(d);
    let wo = &theta[layout.out_offset..layout.n];
    for k in 0..d {
        let mut dir_a = vec![0.0; d];
        dir_a[k] = 1.0;
        let mut per_layer = Vec::with_capacity(nl);
        for (l, shape) in layout.hidden.iter().enumerate() {
            let w = &theta[shape.offset..shape.offset + shape.width * shape.fan_in];
            let mut dp = vec![0.0; shape.width];
            affine_into(w, None, &dir_a, &mut dp);
            let a = &tape.acts[l];
            dir_a = dp.iter().zip(a).map(|(p, ai)| p * (1.0 - ai * ai)).collect();
            per_layer.push(dp);
        }
        let mut col = vec![0.0; d];
        affine_into(wo, None, &dir_a, &mut col);
        for r in 0..d {
            jac.set(r, k, jac.get(r, k) + col[r]);
        }
        tangents.push(per_layer);
    }
    let (sign, logdet) = jac.sign_logdet();
    if !want_grad {
        return (x, jac, sign, logdet, None);
    }
    let inv = match jac.inverse() {
        Ok(inv) => inv,
        Err(_) => return (x, jac, sign, logdet, None),
    };
    // second[(k, l)] = ∂_k (J e_l) = W_out ä_L
    let mut second = vec![vec![0.0; d]; d * d];
    for k in 0..d {
        for l in k..d {
            let mut dd_a = vec![0.0; d];
            for (li, shape) in layout.hidden.iter().enumerate() {
                let w = &theta[shape.offset..shape.offset + shape.width * shape.fan_in];
                let mut ddp = vec![0.0; shape.width];
                if li > 0 {
                    affine_into(w, None, &dd_a, &mut ddp);
                }
                let a = &tape.acts[li];
                let tk = &tangents[k][li];
                let tl = &tangents[l][li];
                dd_a = (0..shape.width)
                    .map(|i| {
                        let sp = 1.0 - a[i] * a[i];
                        sp * ddp[i] - 2.0 * a[i] * sp * tk[i] * tl[i]
                    })
                    .collect();
            }
            let mut col = vec![0.0; d];
            affine_into(wo, None, &dd_a, &mut col);
            second[k * d + l] = col.clone();
            second[l * d + k] = col;
        }
    }
    let grad = (0..d)
        .map(|k| {
            // tr(J⁻¹ ∂_k J) = Σ_l Σ_i (J⁻¹)_{l i} (∂_k J)_{i l}
            let mut t = 0.0;
            for l in 0..d {
                let col = &second[k * d + l];
                for i in 0..d {
                    t += inv.get(l, i) * col[i];
                }
            }
            t
        })
        .collect();
    (x, jac, sign, logdet, Some(grad))
}
