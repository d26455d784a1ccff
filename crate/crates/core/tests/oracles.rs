use approx::assert_relative_eq;
use proptest::prelude::*;

use pwgf_core::energy::{drift_pme, energy_estimate, EnergyFunctional, PairSource, Potential};
use pwgf_core::maps::{Architecture, PushforwardMap};
use pwgf_core::numerics::{sample_reference, SampleBatch, SamplerSpec};
use pwgf_core::oracles::{
    empirical_w2, particle_simulate, zkb_density, zkb_sample, ZkbProfile,
};

/// Mass of a radial profile by the midpoint rule on a fine 2-d grid.
fn grid_mass(p: &ZkbProfile, t: f64) -> f64 {
    let r = p.support_radius(t);
    let n = 1200;
    let h = 2.0 * r / n as f64;
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            let x = [-r + (i as f64 + 0.5) * h, -r + (j as f64 + 0.5) * h];
            total += zkb_density(p, &x, t).unwrap();
        }
    }
    total * h * h
}

#[test]
fn zkb_mass_is_one_at_three_times() {
    for (d, m, times) in [(2, 2.4, [0.1, 0.35, 0.6]), (5, 3.0, [1.0, 1.25, 1.5]), (15, 2.0, [1.0, 1.2, 1.5])] {
        let p = ZkbProfile::new(d, m).unwrap();
        for t in times {
            assert_relative_eq!(p.mass(t).unwrap(), 1.0, max_relative = 1e-8);
        }
    }
}

#[test]
fn zkb_normalisation_against_grid_quadrature() {
    let p = ZkbProfile::new(2, 2.4).unwrap();
    assert_relative_eq!(p.c, 0.137089551306873, max_relative = 1e-12);
    // midpoint rule on a profile with a (1 − s²)^{0.71} edge converges slowly
    assert_relative_eq!(grid_mass(&p, 0.3), 1.0, max_relative = 1e-4);
}

#[test]
fn zkb_exponent_identities() {
    for (d, m) in [(2, 2.4), (5, 3.0), (15, 2.0)] {
        let p = ZkbProfile::new(d, m).unwrap();
        assert_relative_eq!(p.alpha, d as f64 * p.beta, max_relative = 1e-15);
        assert_relative_eq!(p.alpha * (m - 1.0) + 2.0 * p.beta, 1.0, max_relative = 1e-15);
        assert_relative_eq!(p.k, (m - 1.0) * p.alpha / (2.0 * m * d as f64), max_relative = 1e-15);
    }
}

#[test]
fn zkb_support_grows_as_t_to_the_beta() {
    let p = ZkbProfile::new(2, 2.4).unwrap();
    let ratio = p.support_radius(0.6) / p.support_radius(0.1);
    // β = 1/(d(m − 1) + 2) = 1/4.8
    assert_relative_eq!(ratio, 6f64.powf(1.0 / 4.8), max_relative = 1e-14);
    assert!((ratio - 1.45250).abs() < 5e-6);
}

#[test]
fn zkb_samples_follow_radial_cdf() {
    let p = ZkbProfile::new(2, 2.4).unwrap();
    let t = 0.6;
    let n = 1_000_000;
    let (batch, rate) = zkb_sample(&p, t, n, 42).unwrap();
    assert!(rate > 0.0 && rate <= 1.0);
    let mut radii: Vec<f64> = batch.iter().map(|x| (x[0] * x[0] + x[1] * x[1]).sqrt()).collect();
    radii.sort_by(f64::total_cmp);
    let r_max = p.support_radius(t);
    assert!(radii[n - 1] <= r_max);
    // KS distance on a grid of radii
    let mut ks: f64 = 0.0;
    for k in 1..200 {
        let r = r_max * k as f64 / 200.0;
        let emp = radii.partition_point(|v| *v <= r) as f64 / n as f64;
        ks = ks.max((emp - p.radial_cdf(r, t).unwrap()).abs());
    }
    assert!(ks < 0.002, "KS {ks}");
}

#[test]
fn pme_drift_at_zkb_is_minus_beta_x_over_t() {
    for (d, m, t) in [(2, 2.4, 0.3), (5, 3.0, 1.2)] {
        let p = ZkbProfile::new(d, m).unwrap();
        let reference = p.at(t).unwrap();
        let map = PushforwardMap::identity(Architecture::Affine, d, 0, 1.0).unwrap();
        let (batch, _) = zkb_sample(&p, t, 200, 3).unwrap();
        let drift = drift_pme(&map, &batch, &reference, m).unwrap();
        for (i, x) in batch.iter().enumerate() {
            for (v, xi) in drift.value(i).iter().zip(x) {
                assert_relative_eq!(*v, -p.beta * xi / t, max_relative = 1e-10, epsilon = 1e-13);
            }
            let exact = p.velocity(x, t);
            assert_relative_eq!(exact[0], p.beta * x[0] / t, max_relative = 1e-15);
        }
    }
}

#[test]
fn gibbs_relative_entropy_is_log_normaliser() {
    let d = 3;
    let diffusion = 1.7f64;
    let spec = SamplerSpec::isotropic(vec![0.0; d], diffusion.sqrt(), 5).unwrap();
    let batch = sample_reference(&spec, 500).unwrap();
    let map = PushforwardMap::identity(Architecture::Affine, d, 0, 1.0).unwrap();
    let e = energy_estimate(
        &EnergyFunctional::RelativeEntropy {
            potential: Potential::Quadratic,
            diffusion,
        },
        &map,
        &batch,
        &spec,
        PairSource::SameBatch,
    )
    .unwrap();
    let expected = -0.5 * d as f64 * (2.0 * std::f64::consts::PI * diffusion).ln();
    assert_relative_eq!(e.value, expected, max_relative = 1e-12);
}

fn points(d: usize, n: usize, seed: u64) -> SampleBatch {
    sample_reference(&SamplerSpec::standard_normal(d, seed).unwrap(), n).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn w2_is_a_metric_on_samples(seed in 0u64..1000, n in 2usize..40) {
        let a = points(2, n, seed);
        let b = points(2, n, seed + 1);
        let c = points(2, n, seed + 2);
        let ab = empirical_w2(&a, &b).unwrap();
        prop_assert!(empirical_w2(&a, &a).unwrap().abs() < 1e-12);
        prop_assert!((ab - empirical_w2(&b, &a).unwrap()).abs() < 1e-12);
        let ac = empirical_w2(&a, &c).unwrap();
        let cb = empirical_w2(&c, &b).unwrap();
        prop_assert!(ab <= ac + cb + 1e-12);
    }

    #[test]
    fn w2_of_translation_is_shift_length(seed in 0u64..1000, sx in -2.0f64..2.0, sy in -2.0f64..2.0) {
        let a = points(2, 25, seed);
        let shifted: Vec<f64> = a.iter().flat_map(|p| [p[0] + sx, p[1] + sy]).collect();
        let b = SampleBatch::new(2, shifted).unwrap();
        let w = empirical_w2(&a, &b).unwrap();
        prop_assert!((w - (sx * sx + sy * sy).sqrt()).abs() < 1e-9);
    }
}

#[test]
fn particle_dynamics_conserve_centre_of_mass() {
    let init = points(2, 200, 77);
    let before = init.mean();
    let frames = particle_simulate(&EnergyFunctional::Interaction { a: 4.0, b: 2.0 }, &init, 0.01, 300, 100).unwrap();
    assert_eq!(frames.len(), 4);
    let after = frames.last().unwrap().mean();
    for (a, b) in before.iter().zip(&after) {
        assert!((a - b).abs() < 1e-12);
    }
}
