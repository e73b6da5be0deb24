//! Command-level behavior: output determinism, config validation, override
//! handling, and process exit codes.

use std::path::PathBuf;
use std::process::Command;

use cavlink_cli::commands::{cmd_env_check, cmd_physical, cmd_protocol, cmd_pulse_design};
use cavlink_cli::config::{apply_overrides, RunConfig};
use cavlink_cli::CliError;

fn temp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("cavlink_cli_{}_{tag}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn protocol_config(out: &std::path::Path, extra: &str) -> RunConfig {
    let text = format!(
        r#"{{
            "mode": "protocol",
            "seed": 11,
            "n_runs": 200,
            "max_rounds": 200,
            "noise": {{ "p_nojump": 1.0, "sampler": {{ "kind": "ideal" }}, "correlated": true }},
            "out_dir": {:?}
            {extra}
        }}"#,
        out.to_string_lossy()
    );
    RunConfig::from_json(&text).expect("valid config")
}

#[test]
fn ideal_noise_gives_success_rate_one_in_one_round() {
    let dir = temp_dir("ideal");
    let cfg = protocol_config(&dir, "");
    let summary = cmd_protocol(&cfg).unwrap();
    assert_eq!(summary.success_rate, 1.0);
    assert_eq!(summary.mean_rounds, 1.0);
    assert!(summary.min_fidelity > 1.0 - 1e-9);
    assert!(dir.join("runs.jsonl").exists());
    assert!(dir.join("summary.json").exists());
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn half_nojump_rounds_follow_the_squared_geometric_mean() {
    // With per-transmission no-jump probability P and an otherwise ideal
    // sampler, a round succeeds only when both transmissions stay jump-free:
    // mean rounds = 1/P².
    let dir = temp_dir("geom");
    let mut cfg = protocol_config(&dir, "");
    cfg.noise.as_mut().unwrap().p_nojump = 0.5;
    cfg.n_runs = 400;
    let summary = cmd_protocol(&cfg).unwrap();
    assert_eq!(summary.success_rate, 1.0);
    let expect = 4.0;
    let sd = (1.0f64 - 0.25).sqrt() / 0.25 / (cfg.n_runs as f64).sqrt();
    assert!(
        (summary.mean_rounds - expect).abs() < 4.0 * sd,
        "mean rounds {} vs {expect} (4σ = {})",
        summary.mean_rounds,
        4.0 * sd
    );
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn outputs_are_byte_identical_for_identical_seed_and_config() {
    let dir_a = temp_dir("det_a");
    let dir_b = temp_dir("det_b");
    let mut cfg_a = protocol_config(&dir_a, "");
    let mut cfg_b = protocol_config(&dir_b, "");
    for cfg in [&mut cfg_a, &mut cfg_b] {
        cfg.noise.as_mut().unwrap().p_nojump = 0.6;
        cfg.noise.as_mut().unwrap().sampler = Default::default();
        cfg.n_runs = 50;
    }
    cmd_protocol(&cfg_a).unwrap();
    cmd_protocol(&cfg_b).unwrap();
    let runs_a = std::fs::read(dir_a.join("runs.jsonl")).unwrap();
    let runs_b = std::fs::read(dir_b.join("runs.jsonl")).unwrap();
    assert_eq!(runs_a, runs_b, "runs.jsonl differs between identical runs");
    let sum_a = std::fs::read_to_string(dir_a.join("summary.json")).unwrap();
    let sum_b = std::fs::read_to_string(dir_b.join("summary.json")).unwrap();
    assert_eq!(sum_a, sum_b);
    let _ = std::fs::remove_dir_all(&dir_a);
    let _ = std::fs::remove_dir_all(&dir_b);
}

#[test]
fn reference_qubit_is_accepted_and_normalized() {
    // c₀/√2 = −0.29+0.25i, c₁/√2 = 0.36+0.473i is 1.4e-4 off normalization
    // and must pass with renormalization.
    let q = cavlink_cli::config::QubitSpec::reference()
        .to_qubit()
        .unwrap();
    let n2 = q.c0.norm_sqr() + q.c1.norm_sqr();
    assert!((n2 - 1.0).abs() < 1e-12);
}

#[test]
fn config_validation_rejects_bad_values() {
    let bad_p = r#"{ "mode": "protocol", "seed": 1, "noise": { "p_nojump": 1.5 } }"#;
    match RunConfig::from_json(bad_p) {
        Err(CliError::Config(msg)) => assert!(msg.contains("p_nojump"), "{msg}"),
        other => panic!("expected config error, got {other:?}"),
    }

    let bad_qubit = r#"{
        "mode": "protocol", "seed": 1,
        "noise": { "p_nojump": 0.5 },
        "qubit": { "c0": [1.0, 0.0], "c1": [0.5, 0.0] }
    }"#;
    match RunConfig::from_json(bad_qubit) {
        Err(CliError::Config(msg)) => assert!(msg.contains("qubit"), "{msg}"),
        other => panic!("expected config error, got {other:?}"),
    }

    let missing_seed = r#"{ "mode": "protocol", "noise": { "p_nojump": 0.5 } }"#;
    match RunConfig::from_json(missing_seed) {
        Err(CliError::Config(msg)) => {
            assert!(msg.contains("line"), "message not line-precise: {msg}")
        }
        other => panic!("expected config error, got {other:?}"),
    }
}

#[test]
fn overrides_patch_nested_fields() {
    let base = r#"{ "mode": "protocol", "seed": 1, "noise": { "p_nojump": 0.9 } }"#;
    let patched = apply_overrides(
        base,
        &[
            "noise.p_nojump=0.25".to_string(),
            "seed=77".to_string(),
            "out_dir=\"elsewhere\"".to_string(),
        ],
    )
    .unwrap();
    let cfg = RunConfig::from_json(&patched).unwrap();
    assert_eq!(cfg.noise.unwrap().p_nojump, 0.25);
    assert_eq!(cfg.seed, 77);
    assert_eq!(cfg.out_dir, "elsewhere");

    let err = apply_overrides(base, &["no_equals_sign".to_string()]);
    assert!(matches!(err, Err(CliError::Config(_))));
}

#[test]
fn env_check_writes_report() {
    let dir = temp_dir("env");
    let text = format!(
        r#"{{ "mode": "env-check", "seed": 3, "out_dir": {:?} }}"#,
        dir.to_string_lossy()
    );
    let cfg = RunConfig::from_json(&text).unwrap();
    let report = cmd_env_check(&cfg).unwrap();
    assert_eq!(report.models.len(), 2);
    assert!(dir.join("env_report.json").exists());
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn pulse_design_below_target_is_a_threshold_error() {
    let dir = temp_dir("design_fail");
    let text = format!(
        r#"{{ "mode": "pulse-design", "seed": 3,
             "physical": {{ "g": 0.0 }},
             "out_dir": {:?} }}"#,
        dir.to_string_lossy()
    );
    let cfg = RunConfig::from_json(&text).unwrap();
    match cmd_pulse_design(&cfg) {
        Err(e @ CliError::Threshold(_)) => assert_eq!(e.exit_code(), 3),
        other => panic!("expected threshold failure, got {other:?}"),
    }
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn physical_smoke_run_produces_series_and_summaries() {
    let dir = temp_dir("phys");
    let text = format!(
        r#"{{ "mode": "physical", "seed": 5, "n_runs": 1, "max_rounds": 2,
             "dt": 2e-3, "out_dir": {:?} }}"#,
        dir.to_string_lossy()
    );
    let cfg = RunConfig::from_json(&text).unwrap();
    let summary = cmd_physical(&cfg).unwrap();
    assert_eq!(summary.variants.len(), 7);
    let ideal = summary
        .variants
        .iter()
        .find(|v| v.name == "kp0_g0")
        .unwrap();
    assert!(ideal.conditional_final_fidelity > 0.999);
    assert!(ideal.overlap_ii_end > 0.98);
    let heavy = summary
        .variants
        .iter()
        .find(|v| v.name == "kp10_g0")
        .unwrap();
    assert!(heavy.conditional_final_fidelity > 0.99);
    assert!(heavy.overlap_ii_end < 0.5);
    for v in &summary.variants {
        let vdir = dir.join(&v.name);
        assert!(vdir.join("conditional.csv").exists());
        assert!(vdir.join("summary.json").exists());
        assert!(vdir.join("traj_000.csv").exists());
    }
    let text = std::fs::read_to_string(dir.join(ideal.name.clone()).join("conditional.csv")).unwrap();
    assert!(text.starts_with("t,overlap_after_step_ii_target,overlap_final_target,backup_overlap"));
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn binary_exit_codes_match_the_contract() {
    let bin = env!("CARGO_BIN_EXE_cavlink");

    // Unreadable config: exit 2.
    let out = Command::new(bin)
        .args(["protocol", "--config", "/nonexistent/config.json"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    // Invalid config value: exit 2, actionable message.
    let dir = temp_dir("bin_bad");
    let cfg_path = dir.join("bad.json");
    std::fs::write(
        &cfg_path,
        r#"{ "mode": "protocol", "seed": 1, "noise": { "p_nojump": 2.0 } }"#,
    )
    .unwrap();
    let out = Command::new(bin)
        .args(["protocol", "--config"])
        .arg(&cfg_path)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("p_nojump"));

    // Small successful run: exit 0.
    let good_path = dir.join("good.json");
    std::fs::write(
        &good_path,
        r#"{ "mode": "protocol", "seed": 1, "n_runs": 5,
             "noise": { "p_nojump": 1.0, "sampler": { "kind": "ideal" } } }"#,
    )
    .unwrap();
    let out = Command::new(bin)
        .args(["protocol", "--config"])
        .arg(&good_path)
        .args(["--out"])
        .arg(dir.join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("success rate 1.0000"));
    let _ = std::fs::remove_dir_all(&dir);
}
