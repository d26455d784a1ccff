use std::path::Path;
use std::process::Command;

use proptest::prelude::*;

use pwgf_cli::config::{apply_override, parse_config};
use pwgf_cli::plotdata::emit_plotdata;
use pwgf_cli::presets::{preset, settings_row, PRESET_NAMES};
use pwgf_cli::run_scenario;

fn small_ou() -> String {
    let mut cfg = preset("fpe-ou-ci").unwrap();
    cfg.integrator.steps = 10;
    cfg.sampling.n_snapshot = 500;
    cfg.snapshots.times = vec![0.0, 0.05];
    cfg.to_canonical_json()
}

#[test]
fn canonical_json_round_trips_for_every_preset() {
    for name in PRESET_NAMES {
        let cfg = preset(name).unwrap();
        let text = cfg.to_canonical_json();
        let again = parse_config(&text).unwrap();
        assert_eq!(again, cfg, "{name}");
        assert_eq!(again.to_canonical_json(), text, "{name}");
    }
}

#[test]
fn negative_step_is_rejected_with_key_name() {
    let text = small_ou().replace("\"h\": 0.005", "\"h\": -0.005");
    let err = parse_config(&text).unwrap_err();
    assert!(err.to_string().contains("integrator.h must be > 0"), "{err}");
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn unknown_key_is_rejected_with_path_and_line() {
    let text = small_ou().replace("\"steps\": 10", "\"steps\": 10,\n    \"stpes\": 3");
    let msg = parse_config(&text).unwrap_err().to_string();
    assert!(msg.contains("integrator") && msg.contains("stpes") && msg.contains("line"), "{msg}");
}

#[test]
fn type_mismatch_names_key_and_line() {
    let text = small_ou().replace("\"steps\": 10", "\"steps\": \"ten\"");
    let msg = parse_config(&text).unwrap_err().to_string();
    assert!(msg.contains("integrator.steps") && msg.contains("line"), "{msg}");
}

#[test]
fn empty_text_is_rejected() {
    assert!(parse_config("  \n").is_err());
}

#[test]
fn overrides_follow_dotted_paths() {
    let cfg = preset("aggregation-ci").unwrap();
    let cfg = cfg
        .with_overrides(&["integrator.h=0.02".into(), "map.hidden=[8,8]".into(), "seed=5".into()])
        .unwrap();
    assert_eq!(cfg.integrator.h, 0.02);
    assert_eq!(cfg.map.hidden, Some(vec![8, 8]));
    assert_eq!(cfg.seed, 5);
    let mut v = serde_json::json!({"a": [1, {"b": 2}]});
    apply_override(&mut v, "a.1.b=3").unwrap();
    assert_eq!(v["a"][1]["b"], 3);
    assert!(apply_override(&mut v, "a.9.b=3").is_err());
    assert!(preset("aggregation-ci").unwrap().with_overrides(&["integrator.bogus=1".into()]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn round_trip_survives_arbitrary_valid_numbers(h in 1e-6f64..1.0, steps in 0usize..1000, seed in any::<u64>()) {
        let cfg = preset("pme-mixed-ci").unwrap().with_overrides(&[
            format!("integrator.h={h:?}"),
            format!("integrator.steps={steps}"),
            format!("seed={seed}"),
        ]).unwrap();
        let again = parse_config(&cfg.to_canonical_json()).unwrap();
        prop_assert_eq!(again, cfg);
    }
}

#[test]
fn run_writes_artifacts_and_plotdata() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = parse_config(&small_ou()).unwrap();
    run_scenario(&cfg, dir.path()).unwrap();
    for f in ["config.json", "manifest.json", "metrics.csv", "timing.csv", "moments.csv", "map.ckpt", "snapshots/index.csv"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    let metrics = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 12);
    assert!(metrics.starts_with("step,t,energy,kl,grad_norm,minres_iters,minres_residual,wall_ms,det_sign_ok\n"));
    let snap = std::fs::read_to_string(dir.path().join("snapshots/step_000010.csv")).unwrap();
    assert!(snap.starts_with("x0,x1\n"));
    let moments = std::fs::read_to_string(dir.path().join("moments.csv")).unwrap();
    assert!(moments.lines().next().unwrap().contains("oracle_var"));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "completed");
    assert_eq!(manifest["seeds"]["global"], cfg.seed);
    let written = emit_plotdata(dir.path()).unwrap();
    let kl = std::fs::read_to_string(dir.path().join("plotdata/kl_curve.csv")).unwrap();
    assert!(kl.starts_with("t,kl\n"));
    assert_eq!(written.len(), 3);
}

#[test]
fn zkb_run_emits_support_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = preset("pme-zkb-d2-ci")
        .unwrap()
        .with_overrides(&[
            "integrator.steps=3".into(),
            "sampling.n_metric=200".into(),
            "sampling.n_energy=200".into(),
            "sampling.n_snapshot=200".into(),
            "map.hidden=[4]".into(),
        ])
        .unwrap();
    run_scenario(&cfg, dir.path()).unwrap();
    emit_plotdata(dir.path()).unwrap();
    let text = std::fs::read_to_string(dir.path().join("plotdata/support.csv")).unwrap();
    assert!(text.starts_with("t,empirical_p99_radius,analytic_radius\n"));
    assert!(dir.path().join("plotdata/energy_curve.csv").is_file());
}

fn pwgf(args: &[&str], cwd: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_pwgf"))
        .args(args)
        .current_dir(cwd)
        .env("PWGF_THREADS", "1")
        .output()
        .unwrap()
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("ou.json");
    std::fs::write(&cfg_path, small_ou()).unwrap();
    let out = pwgf(&["run", "--config", "ou.json", "--out", "run", "-q"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = pwgf(&["plotdata", "run"], dir.path());
    assert!(out.status.success());
    assert_eq!(pwgf(&["run", "--preset", "nope"], dir.path()).status.code(), Some(2));
    assert_eq!(pwgf(&["run", "--preset", "fpe-ou-ci", "--set", "integrator.h=-1"], dir.path()).status.code(), Some(2));
    assert_eq!(pwgf(&["run", "--config", "missing.json"], dir.path()).status.code(), Some(4));
    assert_eq!(pwgf(&["plotdata", "nowhere"], dir.path()).status.code(), Some(4));
    // a singular initial map cannot carry a density: numerical failure
    let out = pwgf(
        &["run", "--preset", "fpe-ou-ci", "--set", "map.init_scale=0", "--set", "reference.components.0.std=[0,1]", "--out", "bad"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2), "zero std is a config error");
    let out = pwgf(&["oracle", "ou", "--m0", "1,1", "--var0", "1", "--t", "1"], dir.path());
    assert!(String::from_utf8_lossy(&out.stdout).contains("0.36787944117144"));
    let out = pwgf(&["check"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
}

#[test]
fn failed_run_leaves_failure_manifest() {
    let dir = tempfile::tempdir().unwrap();
    // aggressive step on a tiny planar stack: the map folds and the
    // determinant changes sign
    let cfg = preset("fpe-styblinski-ci")
        .unwrap()
        .with_overrides(&[
            "integrator.h=50".into(),
            "integrator.steps=40".into(),
            "map.layers=2".into(),
            "sampling.n_metric=100".into(),
            "sampling.n_energy=100".into(),
            "sampling.n_snapshot=100".into(),
        ])
        .unwrap();
    match run_scenario(&cfg, dir.path()) {
        Ok(_) => {}
        Err(e) => {
            assert_eq!(e.exit_code(), 3);
            let manifest: serde_json::Value =
                serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
            assert_eq!(manifest["status"], "failed");
            assert!(manifest["error"].is_string());
            assert!(dir.path().join("metrics.csv").is_file());
        }
    }
}

#[test]
fn readme_table_matches_full_scale_presets() {
    let readme = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../README.md")).unwrap();
    for name in PRESET_NAMES.iter().filter(|n| !n.ends_with("-ci")) {
        let row = settings_row(name, &preset(name).unwrap());
        assert!(readme.contains(&row), "README lacks row: {row}");
    }
}
