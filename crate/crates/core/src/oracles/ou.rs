//! Gaussian moments of the Fokker–Planck flow with `V(x) = |x|²/2`.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct OuMoments {
    pub mean: Vec<f64>,
    /// Isotropic variance.
    pub variance: f64,
}

/// Mean `m₀e^{−t}` and variance `D + (σ₀² − D)e^{−2t}` at time `t`.
pub fn ou_moments(m0: &[f64], var0: f64, diffusion: f64, t: f64) -> Result<OuMoments> {
    if !(var0 > 0.0) || !(diffusion > 0.0) {
        return Err(Error::InvalidInput(
            "OU moments need positive initial variance and diffusion".into(),
        ));
    }
    let decay = (-t).exp();
    Ok(OuMoments {
        mean: m0.iter().map(|m| m * decay).collect(),
        variance: diffusion + (var0 - diffusion) * (-2.0 * t).exp(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn limits_and_values() {
        let m = ou_moments(&[1.0, -2.0], 0.3, 1.5, 0.0).unwrap();
        assert_eq!(m.mean, vec![1.0, -2.0]);
        assert!((m.variance - 0.3).abs() < 1e-15);
        let m = ou_moments(&[1.0], 0.3, 1.5, 60.0).unwrap();
        assert!(m.mean[0].abs() < 1e-20 && (m.variance - 1.5).abs() < 1e-15);
        let m = ou_moments(&[1.0], 1.0, 1.0, 1.0).unwrap();
        assert!((m.mean[0] - 0.367879441171442).abs() < 1e-12);
        assert_eq!(m.variance, 1.0);
        assert!(ou_moments(&[0.0], 0.0, 1.0, 1.0).is_err());
    }
}
