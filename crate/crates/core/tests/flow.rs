use std::sync::Arc;

use pwgf_core::energy::{EnergyFunctional, Potential};
use pwgf_core::flow::{Flow, FlowConfig, Integrator, Resampling};
use pwgf_core::maps::{Architecture, PushforwardMap};
use pwgf_core::numerics::{MinresConfig, SamplerSpec};
use pwgf_core::oracles::ou_moments;

fn ou_flow(integrator: Integrator, h: f64, steps: usize, resampling: Resampling) -> Flow {
    let reference = SamplerSpec::isotropic(vec![1.0, -0.5], 0.6f64.sqrt(), 3).unwrap();
    let config = FlowConfig {
        integrator,
        h,
        steps,
        resampling,
        n_metric: 300,
        n_energy: 500,
        n_snapshot: 200_000,
        snapshot_times: vec![h * steps as f64],
        seed: 11,
        ..FlowConfig::default()
    };
    Flow::new(
        EnergyFunctional::RelativeEntropy {
            potential: Potential::Quadratic,
            diffusion: 1.0,
        },
        Arc::new(reference),
        config,
    )
    .unwrap()
}

fn identity(d: usize) -> PushforwardMap {
    PushforwardMap::identity(Architecture::Affine, d, 0, 1.0).unwrap()
}

#[test]
fn affine_ou_flow_tracks_closed_form_moments() {
    let flow = ou_flow(Integrator::Rk4, 0.01, 50, Resampling::FrozenPerStep);
    let out = flow.run(identity(2)).map_err(|f| f.error).unwrap();
    let snap = out.snapshots.last().unwrap();
    let exact = ou_moments(&[1.0, -0.5], 0.6, 1.0, 0.5).unwrap();
    let mean = snap.points.mean();
    let cov = snap.points.covariance();
    for i in 0..2 {
        assert!((mean[i] - exact.mean[i]).abs() < 0.01, "{mean:?} vs {:?}", exact.mean);
        assert!((cov[i * 2 + i] - exact.variance).abs() / exact.variance < 0.02);
    }
}

#[test]
fn every_step_is_a_descent_step() {
    let flow = ou_flow(Integrator::Euler, 0.02, 30, Resampling::FreshPerStage);
    let out = flow.run(identity(2)).map_err(|f| f.error).unwrap();
    for r in &out.metrics.records()[1..] {
        assert!(r.descent.unwrap() <= 0.0);
        assert!(r.det_sign_ok);
    }
    let first = out.metrics.records()[0].energy;
    assert!(out.metrics.last().unwrap().energy < first);
}

#[test]
fn repeated_runs_are_bit_identical() {
    let run = || {
        let flow = ou_flow(Integrator::Euler, 0.02, 10, Resampling::FrozenPerStep);
        let out = flow.run(identity(2)).map_err(|f| f.error).unwrap();
        let mut buf = Vec::new();
        out.metrics.write_csv(&mut buf, false).unwrap();
        (buf, out.state.map.params().to_vec())
    };
    let (a, ta) = run();
    let (b, tb) = run();
    assert_eq!(a, b);
    assert_eq!(ta, tb);
}

#[test]
fn planar_flow_dissipates_relative_entropy() {
    let reference = SamplerSpec::standard_normal(2, 1).unwrap();
    let config = FlowConfig {
        h: 0.01,
        steps: 25,
        n_metric: 400,
        n_energy: 400,
        solver: MinresConfig::default(),
        seed: 4,
        ..FlowConfig::default()
    };
    let flow = Flow::new(
        EnergyFunctional::RelativeEntropy {
            potential: Potential::StyblinskiTang,
            diffusion: 1.0,
        },
        Arc::new(reference),
        config,
    )
    .unwrap();
    let map = PushforwardMap::identity(Architecture::PlanarFlowStack { layers: 6 }, 2, 2, 1.0).unwrap();
    let out = flow.run(map).map_err(|f| f.error).unwrap();
    let recs = out.metrics.records();
    for w in recs.windows(2) {
        assert!(w[1].energy <= w[0].energy + 3.0 * w[0].energy_se);
    }
    assert!(recs.last().unwrap().energy < recs[0].energy);
}

#[test]
fn failed_step_preserves_partial_state() {
    let flow = ou_flow(Integrator::Euler, 0.02, 5, Resampling::FrozenPerStep);
    // singular map: the density drift cannot be evaluated
    let map = PushforwardMap::new(Architecture::Affine, 2, vec![0.0; 6]).unwrap();
    let failure = flow.run(map).err().unwrap();
    assert_eq!(failure.state.step, 0);
    assert!(failure.metrics.is_empty());
    assert_eq!(failure.state.map.params(), &[0.0; 6]);
}
