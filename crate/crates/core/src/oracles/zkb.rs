//! Zel'dovich–Kompaneets–Barenblatt solution of `∂_tρ = Δ(ρ^m)`:
//! `ρ(x, t) = t^{−α} (C − k|x/t^β|²)₊^{1/(m−1)}`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::function::beta::ln_beta;
use statrs::function::gamma::ln_gamma;

use crate::error::{check_len, Error, Result};
use crate::numerics::{rng_for, ReferenceDensity, SampleBatch};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZkbProfile {
    pub d: usize,
    pub m: f64,
    pub alpha: f64,
    pub beta: f64,
    pub k: f64,
    pub c: f64,
}

/// Adaptive Simpson on `[a, b]`.
pub(crate) fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn rec<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
                + rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
        }
    }
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, tol, 48)
}

/// `|S^{d−1}| = 2π^{d/2}/Γ(d/2)`
fn sphere_area(d: usize) -> f64 {
    let h = 0.5 * d as f64;
    2.0 * (h * std::f64::consts::PI.ln() - ln_gamma(h)).exp()
}

impl ZkbProfile {
    pub fn new(d: usize, m: f64) -> Result<Self> {
        if d == 0 {
            return Err(Error::Config("zkb dimension must be ≥ 1".into()));
        }
        if !(m > 1.0 && m.is_finite()) {
            return Err(Error::Config("zkb exponent m must be > 1".into()));
        }
        let df = d as f64;
        let alpha = df / (df * (m - 1.0) + 2.0);
        let beta = alpha / df;
        let k = (m - 1.0) * alpha / (2.0 * m * df);
        // ∫ (C − k|ξ|²)₊^{1/(m−1)} dξ = 1  ⇔
        // C^γ = (k/π)^{d/2} Γ(d/2) / B(d/2, m/(m−1)),  γ = d/(2(m−1)α)
        let gamma = df / (2.0 * (m - 1.0) * alpha);
        let ln_cg = 0.5 * df * (k / std::f64::consts::PI).ln() + ln_gamma(0.5 * df)
            - ln_beta(0.5 * df, m / (m - 1.0));
        let c = (ln_cg / gamma).exp();
        Ok(Self {
            d,
            m,
            alpha,
            beta,
            k,
            c,
        })
    }

    fn exponent(&self) -> f64 {
        1.0 / (self.m - 1.0)
    }

    /// `r(t) = √(C/k) · t^β`
    pub fn support_radius(&self, t: f64) -> f64 {
        (self.c / self.k).sqrt() * t.powf(self.beta)
    }

    fn check_time(t: f64) -> Result<()> {
        if t > 0.0 && t.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("zkb time must be > 0, got {t}")))
        }
    }

    /// `ρ(x, t)`; zero outside the support.
    pub fn density(&self, x: &[f64], t: f64) -> Result<f64> {
        Self::check_time(t)?;
        check_len("zkb point", self.d, x.len())?;
        let r2: f64 = x.iter().map(|v| v * v).sum();
        Ok(self.radial_density(r2.sqrt(), t))
    }

    fn radial_density(&self, r: f64, t: f64) -> f64 {
        let xi = r / t.powf(self.beta);
        let base = self.c - self.k * xi * xi;
        if base <= 0.0 {
            0.0
        } else {
            t.powf(-self.alpha) * base.powf(self.exponent())
        }
    }

    /// Mass inside radius `r` at time `t`, by radial quadrature.
    pub fn radial_cdf(&self, r: f64, t: f64) -> Result<f64> {
        Self::check_time(t)?;
        let big_r = self.support_radius(t);
        if r <= 0.0 {
            return Ok(0.0);
        }
        let r = r.min(big_r);
        // r = R sin φ removes the endpoint singularity of (C − k ξ²)^{1/(m−1)}
        let d = self.d as i32;
        let f = |phi: f64| {
            let s = big_r * phi.sin();
            self.radial_density(s, t) * s.powi(d - 1) * big_r * phi.cos()
        };
        let top = (r / big_r).clamp(0.0, 1.0).asin();
        Ok(sphere_area(self.d) * adaptive_simpson(&f, 0.0, top, 1e-14))
    }

    /// `∫ ρ(x, t) dx` by quadrature.
    pub fn mass(&self, t: f64) -> Result<f64> {
        self.radial_cdf(self.support_radius(t), t)
    }

    /// Exact particle velocity `βx/t` (self-similar dilation).
    pub fn velocity(&self, x: &[f64], t: f64) -> Vec<f64> {
        x.iter().map(|v| self.beta * v / t).collect()
    }

    /// Density frozen at time `t`, usable as a reference.
    pub fn at(&self, t: f64) -> Result<ZkbReference> {
        Self::check_time(t)?;
        Ok(ZkbReference { profile: *self, t })
    }
}

/// Rejection sampler: uniform proposals in the support ball, accepted
/// with probability `F(ξ)/F(0)`.
fn rejection_sample(profile: &ZkbProfile, t: f64, n: usize, rng: &mut ChaCha8Rng) -> (SampleBatch, f64) {
    let d = profile.d;
    let big_r = profile.support_radius(t);
    let p = profile.exponent();
    let mut points = Vec::with_capacity(n * d);
    let mut dir = vec![0.0; d];
    let mut proposals = 0usize;
    while points.len() < n * d {
        proposals += 1;
        let mut n2 = 0.0f64;
        for v in dir.iter_mut() {
            *v = rng.sample(StandardNormal);
            n2 += *v * *v;
        }
        let u: f64 = rng.random();
        let radius = big_r * u.powf(1.0 / d as f64);
        let s = radius / big_r;
        let accept = (1.0 - s * s).max(0.0).powf(p);
        let w: f64 = rng.random();
        if w < accept && n2 > 0.0 {
            let scale = radius / n2.sqrt();
            points.extend(dir.iter().map(|v| v * scale));
        }
    }
    let batch = SampleBatch::new(d, points).expect("consistent dimension");
    (batch, n as f64 / proposals.max(1) as f64)
}

/// `n` exact samples at time `t` and the acceptance rate.
pub fn zkb_sample(profile: &ZkbProfile, t: f64, n: usize, seed: u64) -> Result<(SampleBatch, f64)> {
    ZkbProfile::check_time(t)?;
    if n == 0 {
        return Err(Error::InvalidInput("sample count must be ≥ 1".into()));
    }
    Ok(rejection_sample(profile, t, n, &mut rng_for(seed, 0)))
}

pub fn zkb_density(profile: &ZkbProfile, x: &[f64], t: f64) -> Result<f64> {
    profile.density(x, t)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZkbReference {
    pub profile: ZkbProfile,
    pub t: f64,
}

impl ReferenceDensity for ZkbReference {
    fn dim(&self) -> usize {
        self.profile.d
    }

    fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> SampleBatch {
        rejection_sample(&self.profile, self.t, n, rng).0
    }

    fn log_density(&self, z: &[f64]) -> f64 {
        let r = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        self.profile.radial_density(r, self.t).ln()
    }

    fn grad_log_density(&self, z: &[f64], out: &mut [f64]) {
        let p = &self.profile;
        let tb = self.t.powf(-2.0 * p.beta);
        let xi2 = z.iter().map(|v| v * v).sum::<f64>() * tb;
        let base = p.c - p.k * xi2;
        if base <= 0.0 {
            out.fill(0.0);
            return;
        }
        let coef = -2.0 * p.k * p.exponent() * tb / base;
        for (o, zi) in out.iter_mut().zip(z) {
            *o = coef * zi;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn d2_constants() {
        let p = ZkbProfile::new(2, 2.4).unwrap();
        assert!((p.alpha - 5.0 / 12.0).abs() < 1e-15);
        assert!((p.beta - 5.0 / 24.0).abs() < 1e-15);
        assert!((p.k - 7.0 / 115.2).abs() < 1e-15);
    }

    #[test]
    fn outside_support_is_zero() {
        let p = ZkbProfile::new(2, 2.4).unwrap();
        let r = p.support_radius(0.3);
        assert_eq!(p.density(&[r * 1.0001, 0.0], 0.3).unwrap(), 0.0);
        assert!(p.density(&[r * 0.9999, 0.0], 0.3).unwrap() > 0.0);
        assert!(p.density(&[0.0, 0.0], 0.0).is_err());
    }

    #[test]
    fn simpson_integrates_polynomial() {
        let v = adaptive_simpson(&|x: f64| x.powi(3), 0.0, 2.0, 1e-12);
        assert!((v - 4.0).abs() < 1e-12);
    }
}
