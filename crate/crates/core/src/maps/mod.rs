//! Parameterized push-forward maps `T_θ: R^d → R^d`.
//!
//! Three architectures share one parameter vector convention (see
//! [`Architecture`]) and expose the same derivative surface:
//!
//! * `forward`: output, spatial Jacobian and `log|det ∂_z T|`;
//! * `param_jvp` / `param_vjp`: products with `∂_θ T_θ(z)` and its transpose;
//! * `grad_logdet_z`: `∇_z log|det ∂_z T|`, from analytic second derivatives;
//! * `pushforward_logdensity`: `log ρ_θ` and `∇_x log ρ_θ` at `T(z)`.
//!
//! For batched work, [`PushforwardMap::record`] caches the forward pass in a
//! [`Tape`] so repeated JVP/VJP products at the same point skip it.

mod checkpoint;
mod mlp;
mod planar;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{check_len, Error, Result};
use crate::numerics::{rng_for, DenseMatrix, ReferenceDensity};

pub use checkpoint::{read_checkpoint, write_checkpoint};
pub use mlp::MlpTape;
pub use planar::{PlanarLayer, PlanarTape};

/// `|det| < 1e-300` is treated as loss of invertibility.
pub const MIN_LOG_ABS_DET: f64 = -690.775_527_898_213_7;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Architecture {
    /// `T(z) = A z + b`; θ = (A row-major, b).
    Affine,
    /// `f_M ∘ … ∘ f_1` with `f_j(x) = x + tanh(w_jᵀx + b_j) u_j`;
    /// θ = per layer (w, b, u).
    PlanarFlowStack { layers: usize },
    /// `T = Id + R_θ`, `R_θ` a tanh MLP without output bias;
    /// θ = per hidden layer (W row-major, bias), then W_out row-major.
    ResidualMlp { hidden: Vec<usize> },
}

impl Architecture {
    pub fn tag(&self) -> &'static str {
        match self {
            Architecture::Affine => "affine",
            Architecture::PlanarFlowStack { .. } => "planar-flow-stack",
            Architecture::ResidualMlp { .. } => "residual-mlp",
        }
    }

    pub fn param_count(&self, d: usize) -> usize {
        match self {
            Architecture::Affine => d * d + d,
            Architecture::PlanarFlowStack { layers } => planar::param_count(d, *layers),
            Architecture::ResidualMlp { hidden } => mlp::MlpLayout::new(d, hidden).n,
        }
    }

    /// True when the map is invertible for every admitted θ.
    pub fn structurally_invertible(&self) -> bool {
        !matches!(self, Architecture::ResidualMlp { .. })
    }
}

/// Spatial evaluation of a map at one point.
#[derive(Debug, Clone)]
pub struct MapEvaluation {
    pub z: Vec<f64>,
    pub x: Vec<f64>,
    pub jacobian: DenseMatrix,
    pub logdet: f64,
    pub sign: f64,
}

/// Density of the pushed-forward measure at `x = T(z)`.
#[derive(Debug, Clone)]
pub struct DensityEvaluation {
    pub x: Vec<f64>,
    pub logdet: f64,
    pub sign: f64,
    pub log_rho: f64,
    pub grad_log_rho: Vec<f64>,
}

/// Forward-pass cache at a single point.
#[derive(Debug, Clone)]
pub enum Tape {
    Affine { z: Vec<f64>, x: Vec<f64> },
    Planar { x: Vec<f64>, tape: PlanarTape },
    Mlp { x: Vec<f64>, tape: MlpTape },
}

impl Tape {
    /// `T_θ(z)` at the recorded point.
    pub fn output(&self) -> &[f64] {
        match self {
            Tape::Affine { x, .. } | Tape::Planar { x, .. } | Tape::Mlp { x, .. } => x,
        }
    }
}

#[derive(Debug, Clone)]
enum Layout {
    Affine,
    Planar { layers: usize },
    Mlp(mlp::MlpLayout),
}

/// Tapes of consecutive samples batched for [`PushforwardMap::gram_block_apply`].
#[derive(Debug, Clone)]
pub struct GramBlock(mlp::MlpBlock);

/// A push-forward map: architecture, space dimension and parameters.
#[derive(Debug, Clone)]
pub struct PushforwardMap {
    arch: Architecture,
    dim: usize,
    theta: Vec<f64>,
    layout: Layout,
}

impl PushforwardMap {
    pub fn new(arch: Architecture, dim: usize, theta: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("map dimension must be ≥ 1".into()));
        }
        let layout = match &arch {
            Architecture::Affine => Layout::Affine,
            Architecture::PlanarFlowStack { layers } => {
                if *layers == 0 {
                    return Err(Error::Config("planar stack needs at least one layer".into()));
                }
                Layout::Planar { layers: *layers }
            }
            Architecture::ResidualMlp { hidden } => {
                if hidden.iter().any(|w| *w == 0) {
                    return Err(Error::Config("hidden widths must be positive".into()));
                }
                Layout::Mlp(mlp::MlpLayout::new(dim, hidden))
            }
        };
        check_len("map parameters", arch.param_count(dim), theta.len())?;
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "map parameters",
                sample: None,
            });
        }
        Ok(Self {
            arch,
            dim,
            theta,
            layout,
        })
    }

    /// Identity-initialized map.
    ///
    /// Affine: `A = I, b = 0`. Planar: `u_j = 0` with `w_j ~ N(0, scale²/d)`,
    /// `b_j ~ N(0, scale²)`. Residual MLP: `W_out = 0`, hidden weights
    /// `~ N(0, scale²/fan_in)`, hidden biases `~ N(0, (scale/2)²)`.
    pub fn identity(arch: Architecture, dim: usize, seed: u64, scale: f64) -> Result<Self> {
        let n = arch.param_count(dim);
        let mut theta = vec![0.0; n];
        let mut rng = rng_for(seed, 0);
        let mut normal = || -> f64 { rng.sample(StandardNormal) };
        match &arch {
            Architecture::Affine => {
                for i in 0..dim {
                    theta[i * dim + i] = 1.0;
                }
            }
            Architecture::PlanarFlowStack { layers } => {
                let s = planar::stride(dim);
                for j in 0..*layers {
                    for k in 0..dim {
                        theta[j * s + k] = scale * normal() / (dim as f64).sqrt();
                    }
                    theta[j * s + dim] = scale * normal();
                }
            }
            Architecture::ResidualMlp { hidden } => {
                let layout = mlp::MlpLayout::new(dim, hidden);
                for shape in &layout.hidden {
                    let wsize = shape.width * shape.fan_in;
                    let std = scale / (shape.fan_in as f64).sqrt();
                    for v in &mut theta[shape.offset..shape.offset + wsize] {
                        *v = std * normal();
                    }
                    for v in &mut theta[shape.offset + wsize..shape.offset + wsize + shape.width] {
                        *v = 0.5 * scale * normal();
                    }
                }
            }
        }
        Self::new(arch, dim, theta)
    }

    /// Map with every parameter drawn at random (test and diagnostic use).
    pub fn random(arch: Architecture, dim: usize, seed: u64, scale: f64) -> Result<Self> {
        let n = arch.param_count(dim);
        let mut rng = rng_for(seed, 1);
        let mut theta: Vec<f64> = (0..n)
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        match &arch {
            Architecture::Affine => {
                for i in 0..dim {
                    theta[i * dim + i] += 1.0;
                }
            }
            Architecture::PlanarFlowStack { layers } => {
                planar::enforce_invertibility(&mut theta, dim, *layers);
            }
            Architecture::ResidualMlp { hidden } => {
                let layout = mlp::MlpLayout::new(dim, hidden);
                for shape in &layout.hidden {
                    let wsize = shape.width * shape.fan_in;
                    let f = 1.0 / (shape.fan_in as f64).sqrt();
                    theta[shape.offset..shape.offset + wsize]
                        .iter_mut()
                        .for_each(|v| *v *= f);
                }
                let f = 1.0 / (layout.hidden.last().map(|l| l.width).unwrap_or(dim) as f64).sqrt();
                theta[layout.out_offset..].iter_mut().for_each(|v| *v *= f);
            }
        }
        Self::new(arch, dim, theta)
    }

    /// Affine map from an explicit matrix and offset.
    pub fn affine(a: &DenseMatrix, b: &[f64]) -> Result<Self> {
        let d = b.len();
        check_len("affine matrix rows", d, a.rows())?;
        check_len("affine matrix cols", d, a.cols())?;
        let mut theta = a.entries().to_vec();
        theta.extend_from_slice(b);
        Self::new(Architecture::Affine, d, theta)
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn param_count(&self) -> usize {
        self.theta.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.theta
    }

    /// Replaces θ and re-applies the planar invertibility guard.
    pub fn set_params(&mut self, theta: &[f64]) -> Result<usize> {
        check_len("map parameters", self.theta.len(), theta.len())?;
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "map parameters",
                sample: None,
            });
        }
        self.theta.copy_from_slice(theta);
        Ok(self.enforce_invertibility())
    }

    pub fn with_params(&self, theta: &[f64]) -> Result<Self> {
        let mut m = self.clone();
        m.set_params(theta)?;
        Ok(m)
    }

    /// Planar layers with `uᵀw ≤ −1` are reprojected; returns how many.
    pub fn enforce_invertibility(&mut self) -> usize {
        match self.layout {
            Layout::Planar { layers } => {
                planar::enforce_invertibility(&mut self.theta, self.dim, layers)
            }
            _ => 0,
        }
    }

    /// Planar layer `j` (None for other architectures).
    pub fn planar_layer(&self, j: usize) -> Option<PlanarLayer<'_>> {
        match self.layout {
            Layout::Planar { layers } if j < layers => Some(planar::layer(&self.theta, self.dim, j)),
            _ => None,
        }
    }

    /// Per-layer `log|det|` of a planar stack at its intermediate points.
    pub fn planar_layer_logdets(&self, z: &[f64]) -> Option<Vec<f64>> {
        match self.layout {
            Layout::Planar { layers } => Some(planar::layer_logdets(&self.theta, self.dim, layers, z)),
            _ => None,
        }
    }

    fn check_point(&self, z: &[f64]) -> Result<()> {
        check_len("map input point", self.dim, z.len())?;
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "map input point",
                sample: None,
            });
        }
        Ok(())
    }

    /// `T_θ(z)` only.
    pub fn apply(&self, z: &[f64]) -> Vec<f64> {
        self.record(z).output().to_vec()
    }

    /// Forward pass with the intermediates needed for parameter products.
    pub fn record(&self, z: &[f64]) -> Tape {
        match &self.layout {
            Layout::Affine => {
                let d = self.dim;
                let mut x = self.theta[d * d..].to_vec();
                for (r, xr) in x.iter_mut().enumerate() {
                    *xr += self.theta[r * d..(r + 1) * d]
                        .iter()
                        .zip(z)
                        .map(|(a, b)| a * b)
                        .sum::<f64>();
                }
                Tape::Affine { z: z.to_vec(), x }
            }
            Layout::Planar { layers } => {
                let (x, tape) = planar::record(&self.theta, self.dim, *layers, z);
                Tape::Planar { x, tape }
            }
            Layout::Mlp(layout) => {
                let (x, tape) = mlp::record(&self.theta, layout, z);
                Tape::Mlp { x, tape }
            }
        }
    }

    /// Writes `∂_θ T_θ(z) · v` into `out` using a recorded tape.
    pub fn jvp_recorded(&self, tape: &Tape, v: &[f64], out: &mut [f64]) {
        match (&self.layout, tape) {
            (Layout::Affine, Tape::Affine { z, .. }) => {
                let d = self.dim;
                for r in 0..d {
                    out[r] = v[d * d + r]
                        + v[r * d..(r + 1) * d]
                            .iter()
                            .zip(z)
                            .map(|(a, b)| a * b)
                            .sum::<f64>();
                }
            }
            (Layout::Planar { layers }, Tape::Planar { tape, .. }) => {
                planar::jvp(&self.theta, self.dim, *layers, tape, v, out)
            }
            (Layout::Mlp(layout), Tape::Mlp { tape, .. }) => mlp::jvp(&self.theta, layout, tape, v, out),
            _ => panic!("tape recorded by a different architecture"),
        }
    }

    /// Adds `scale · ∂_θ T_θ(z)ᵀ · y` into `acc` using a recorded tape.
    pub fn vjp_recorded(&self, tape: &Tape, y: &[f64], scale: f64, acc: &mut [f64]) {
        match (&self.layout, tape) {
            (Layout::Affine, Tape::Affine { z, .. }) => {
                let d = self.dim;
                for r in 0..d {
                    let g = scale * y[r];
                    for (a, zc) in acc[r * d..(r + 1) * d].iter_mut().zip(z) {
                        *a += g * zc;
                    }
                    acc[d * d + r] += g;
                }
            }
            (Layout::Planar { layers }, Tape::Planar { tape, .. }) => {
                planar::vjp(&self.theta, self.dim, *layers, tape, y, scale, acc)
            }
            (Layout::Mlp(layout), Tape::Mlp { tape, .. }) => {
                mlp::vjp(&self.theta, layout, tape, y, scale, acc)
            }
            _ => panic!("tape recorded by a different architecture"),
        }
    }

    /// Batches `tapes` for blocked Gram products. `None` for architectures
    /// without a blocked path.
    pub fn gram_block(&self, tapes: &[Tape]) -> Option<GramBlock> {
        let Layout::Mlp(layout) = &self.layout else {
            return None;
        };
        let inner: Vec<&MlpTape> = tapes
            .iter()
            .map(|t| match t {
                Tape::Mlp { tape, .. } => tape,
                _ => panic!("tape recorded by a different architecture"),
            })
            .collect();
        Some(GramBlock(mlp::block(layout, &inner)))
    }

    /// Adds `Σ_i J_iᵀ J_i v` over the samples of `block` into `acc`.
    pub fn gram_block_apply(&self, block: &GramBlock, v: &[f64], acc: &mut [f64]) {
        match &self.layout {
            Layout::Mlp(layout) => mlp::gram_block(&self.theta, layout, &block.0, v, acc),
            _ => panic!("gram block built for a different architecture"),
        }
    }

    /// `∂_θ T_θ(z) · v`
    pub fn param_jvp(&self, z: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        self.check_point(z)?;
        check_len("param_jvp direction", self.theta.len(), v.len())?;
        let tape = self.record(z);
        let mut out = vec![0.0; self.dim];
        self.jvp_recorded(&tape, v, &mut out);
        Ok(out)
    }

    /// `∂_θ T_θ(z)ᵀ · y`
    pub fn param_vjp(&self, z: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        self.check_point(z)?;
        check_len("param_vjp cotangent", self.dim, y.len())?;
        let tape = self.record(z);
        let mut acc = vec![0.0; self.theta.len()];
        self.vjp_recorded(&tape, y, 1.0, &mut acc);
        Ok(acc)
    }

    fn spatial(&self, z: &[f64], want_grad: bool) -> (Vec<f64>, DenseMatrix, f64, f64, Option<Vec<f64>>) {
        let d = self.dim;
        match &self.layout {
            Layout::Affine => {
                let a = DenseMatrix::new(d, d, self.theta[..d * d].to_vec())
                    .expect("finite parameters");
                let (sign, logdet) = a.sign_logdet();
                let x = self.apply(z);
                (x, a, sign, logdet, want_grad.then(|| vec![0.0; d]))
            }
            Layout::Planar { layers } => {
                let (x, j, s, l, g) = planar::spatial(&self.theta, d, *layers, z);
                (x, j, s, l, Some(g))
            }
            Layout::Mlp(layout) => mlp::spatial(&self.theta, layout, z, want_grad),
        }
    }

    /// Output, spatial Jacobian and `log|det|` at `z`.
    pub fn forward(&self, z: &[f64]) -> Result<MapEvaluation> {
        self.check_point(z)?;
        let (x, jacobian, sign, logdet, _) = self.spatial(z, false);
        if sign == 0.0 || logdet < MIN_LOG_ABS_DET {
            return Err(Error::DegenerateJacobian { sample: None });
        }
        if x.iter().any(|v| !v.is_finite()) || !logdet.is_finite() {
            return Err(Error::NonFinite {
                context: "map forward",
                sample: None,
            });
        }
        Ok(MapEvaluation {
            z: z.to_vec(),
            x,
            jacobian,
            logdet,
            sign,
        })
    }

    /// Sign of `det ∂_z T_θ(z)` (0 if numerically singular).
    pub fn det_sign(&self, z: &[f64]) -> f64 {
        let (_, _, sign, logdet, _) = self.spatial(z, false);
        if logdet < MIN_LOG_ABS_DET {
            0.0
        } else {
            sign
        }
    }

    /// `∇_z log|det ∂_z T_θ(z)|`
    pub fn grad_logdet_z(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check_point(z)?;
        let (_, _, sign, logdet, grad) = self.spatial(z, true);
        if sign == 0.0 || logdet < MIN_LOG_ABS_DET {
            return Err(Error::DegenerateJacobian { sample: None });
        }
        grad.ok_or(Error::DegenerateJacobian { sample: None })
    }

    /// `log ρ_θ(T(z)) = log ϱ(z) − log|det J|` and
    /// `∇_x log ρ_θ(T(z)) = J⁻ᵀ (∇_z log ϱ(z) − ∇_z log|det J|)`.
    pub fn pushforward_logdensity(
        &self,
        z: &[f64],
        ref_logdensity: f64,
        ref_grad: &[f64],
    ) -> Result<DensityEvaluation> {
        self.check_point(z)?;
        check_len("reference score", self.dim, ref_grad.len())?;
        let (x, jac, sign, logdet, grad) = self.spatial(z, true);
        if sign == 0.0 || logdet < MIN_LOG_ABS_DET {
            return Err(Error::DegenerateJacobian { sample: None });
        }
        let grad = grad.ok_or(Error::DegenerateJacobian { sample: None })?;
        let rhs: Vec<f64> = ref_grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let grad_log_rho = jac.transpose_solve(&rhs)?;
        let log_rho = ref_logdensity - logdet;
        if grad_log_rho.iter().any(|v| !v.is_finite()) || log_rho.is_nan() {
            return Err(Error::NonFinite {
                context: "pushforward log-density",
                sample: None,
            });
        }
        Ok(DensityEvaluation {
            x,
            logdet,
            sign,
            log_rho,
            grad_log_rho,
        })
    }

    /// [`Self::pushforward_logdensity`] with the reference supplied as a density.
    pub fn density_at(&self, z: &[f64], reference: &dyn ReferenceDensity) -> Result<DensityEvaluation> {
        let mut g = vec![0.0; self.dim];
        reference.grad_log_density(z, &mut g);
        self.pushforward_logdensity(z, reference.log_density(z), &g)
    }
}
