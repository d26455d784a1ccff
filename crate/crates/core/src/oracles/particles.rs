//! Direct all-pairs particle dynamics for the interaction energy.

use rayon::prelude::*;

use crate::energy::{interaction_kernel_grad, EnergyFunctional};
use crate::error::{Error, Result};
use crate::numerics::SampleBatch;

/// Forward Euler on `ẋ_i = −(1/N) Σ_j ∇J(x_i − x_j)`.
///
/// Returns frames every `record_every` steps, always including the initial
/// and final configuration.
pub fn particle_simulate(
    energy: &EnergyFunctional,
    initial: &SampleBatch,
    h: f64,
    steps: usize,
    record_every: usize,
) -> Result<Vec<SampleBatch>> {
    let (a, b) = match *energy {
        EnergyFunctional::Interaction { a, b } => (a, b),
        _ => {
            return Err(Error::InvalidInput(
                "particle simulation supports interaction energies only".into(),
            ))
        }
    };
    if !(h > 0.0) {
        return Err(Error::InvalidInput("particle step h must be > 0".into()));
    }
    let d = initial.dim();
    let n = initial.len();
    let every = record_every.max(1);
    let mut x = initial.as_flat().to_vec();
    let mut frames = vec![initial.clone()];
    let inv = 1.0 / n.max(1) as f64;
    for s in 1..=steps {
        let cur = &x;
        let next: Vec<f64> = (0..n)
            .into_par_iter()
            .flat_map_iter(|i| {
                let xi = &cur[i * d..(i + 1) * d];
                let mut f = vec![0.0; d];
                let mut r = vec![0.0; d];
                let mut g = vec![0.0; d];
                for j in 0..n {
                    let xj = &cur[j * d..(j + 1) * d];
                    for k in 0..d {
                        r[k] = xi[k] - xj[k];
                    }
                    interaction_kernel_grad(&r, a, b, &mut g);
                    for k in 0..d {
                        f[k] += g[k];
                    }
                }
                (0..d).map(move |k| xi[k] - h * inv * f[k]).collect::<Vec<_>>()
            })
            .collect();
        x = next;
        if s % every == 0 || s == steps {
            frames.push(SampleBatch::new(d, x.clone())?);
        }
    }
    Ok(frames)
}

/// `mean_i | ‖x_i − x̄‖ − radius |`
pub fn ring_deviation(batch: &SampleBatch, radius: f64) -> f64 {
    let c = batch.mean();
    let total: f64 = batch
        .iter()
        .map(|x| {
            let r = x.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            (r - radius).abs()
        })
        .sum();
    total / batch.len().max(1) as f64
}

/// Mean distance to the centre of mass.
pub fn mean_radius(batch: &SampleBatch) -> f64 {
    ring_deviation(batch, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    const KERNEL: EnergyFunctional = EnergyFunctional::Interaction { a: 4.0, b: 2.0 };

    #[test]
    fn unit_distance_pair_is_stationary() {
        let init = SampleBatch::new(2, vec![0.0, 0.0, 1.0, 0.0]).unwrap();
        let frames = particle_simulate(&KERNEL, &init, 0.1, 10, 10).unwrap();
        assert_eq!(frames.last().unwrap().as_flat(), init.as_flat());
    }

    #[test]
    fn distant_pair_attracts_toward_unit_distance() {
        let init = SampleBatch::new(1, vec![0.0, 2.0]).unwrap();
        let frames = particle_simulate(&KERNEL, &init, 0.01, 400, 1).unwrap();
        let gaps: Vec<f64> = frames.iter().map(|f| f.point(1)[0] - f.point(0)[0]).collect();
        assert!(gaps.windows(2).all(|w| w[1] < w[0]));
        assert!(gaps.iter().all(|g| *g > 1.0));
        assert!((gaps.last().unwrap() - 1.0).abs() < 1e-2);
    }

    #[test]
    fn rejects_density_energies() {
        let init = SampleBatch::new(1, vec![0.0]).unwrap();
        assert!(particle_simulate(&EnergyFunctional::PmeInternal { m: 2.0 }, &init, 0.1, 1, 1).is_err());
    }
}
