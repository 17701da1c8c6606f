use std::path::PathBuf;
use std::process::Command as Process;

use clap::Parser;
use sleepscale_cli::config::ExperimentConfig;
use sleepscale_cli::{execute, Cli, Command};

fn fixture(name: &str, text: &str) -> PathBuf {
    let path = std::env::temp_dir().join(format!("sleepscale-cli-{}-{name}", std::process::id()));
    std::fs::write(&path, text).unwrap();
    path
}

const REF_CONFIG: &str = r#"{
  "params": { "mu": 1.0, "c": 2.0, "gamma": 0.5, "p_idle": 0.6, "p_setup": 4.0, "p_slow": 1.0, "p_fast": 4.0, "beta": 0.5 },
  "policy": { "k1": 1, "k2": "inf", "alpha": 0.0 },
  "sim": { "horizon": 120000, "warmup": 6000, "batches": 20, "seed": 7 }
}"#;

fn parse(args: &[&str]) -> Command {
    Cli::try_parse_from(args).expect("arguments parse").command
}

#[test]
fn config_round_trip_is_identity() {
    let parsed = ExperimentConfig::parse(REF_CONFIG).unwrap();
    let reparsed = ExperimentConfig::parse(&parsed.to_json()).unwrap();
    assert_eq!(parsed, reparsed);
}

#[test]
fn unknown_keys_are_rejected() {
    let bad = r#"{ "params": { "mu": 1.0, "speling": 2 } }"#;
    assert!(ExperimentConfig::parse(bad).is_err());
    let bad_top = r#"{ "lambada": 0.5 }"#;
    assert!(ExperimentConfig::parse(bad_top).is_err());
}

#[test]
fn inf_sentinels_round_trip() {
    let text = r#"{
      "policy": { "k1": 3, "k2": "inf", "alpha": "inf" },
      "search": { "k1_max": 4, "k2_max": 6, "alpha_grid": [0.0, 0.5, "inf"] }
    }"#;
    let config = ExperimentConfig::parse(text).unwrap();
    let policy = config.policy.unwrap().to_policy();
    assert_eq!(policy.k2, sleepscale::SpeedThreshold::Infinite);
    assert!(policy.alpha.is_infinite());
    let json = config.to_json();
    assert!(json.contains("\"k2\": \"inf\""));
    assert!(json.contains("\"inf\""));
    assert_eq!(config, ExperimentConfig::parse(&json).unwrap());
}

#[test]
fn defaults_fill_derived_power_levels() {
    let config = ExperimentConfig::parse("{}").unwrap();
    let params = config.params.resolve(0.5);
    assert_eq!(params.mu, 1.0);
    assert_eq!(params.c, 2.0);
    // p_fast defaults to c^2 * p_slow, p_setup to p_fast.
    assert_eq!(params.p_fast, 4.0);
    assert_eq!(params.p_setup, 4.0);
    assert_eq!(params.beta, 0.5);
}

#[test]
fn eval_reduction_row_has_the_closed_form_response() {
    let path = fixture("eval.json", REF_CONFIG);
    let cmd = parse(&[
        "sleepscale",
        "eval",
        "--config",
        path.to_str().unwrap(),
        "--lambda",
        "0.5",
    ]);
    let execution = execute(&cmd).unwrap();
    let mut lines = execution.artifact.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(
        header,
        vec![
            "lambda",
            "k1",
            "k2",
            "alpha",
            "regime",
            "E_N",
            "E_R",
            "E_P",
            "cost",
            "residual",
            "q_max",
            "tail_mass"
        ]
    );
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    let e_r: f64 = row[6].parse().unwrap();
    assert!((e_r - 2.0).abs() <= 1e-8);
    assert_eq!(row[4], "slow_only_always_on");
    // Diagnostics columns are populated.
    assert!(row[9].parse::<f64>().is_ok());
    assert!(row[10].parse::<u32>().unwrap() > 0);
}

#[test]
fn artifacts_are_byte_identical_across_runs() {
    let path = fixture("determinism.json", REF_CONFIG);
    let p = path.to_str().unwrap();
    let commands = [
        vec!["sleepscale", "eval", "--config", p, "--lambda", "0.5"],
        vec![
            "sleepscale",
            "optimize",
            "--config",
            p,
            "--lambda",
            "0.8",
            "--format",
            "json",
        ],
        vec![
            "sleepscale",
            "sweep",
            "--config",
            p,
            "--lambda-range",
            "0.3:0.5",
            "--resolution",
            "0.1",
        ],
        vec![
            "sleepscale",
            "simulate",
            "--config",
            p,
            "--lambda",
            "0.5",
            "--seed",
            "11",
        ],
    ];
    for argv in commands {
        let cmd = parse(&argv);
        let first = execute(&cmd).unwrap();
        let second = execute(&cmd).unwrap();
        assert_eq!(
            first.artifact.as_bytes(),
            second.artifact.as_bytes(),
            "{argv:?}"
        );
        assert_eq!(first.summary, second.summary);
    }
}

#[test]
fn missing_lambda_is_a_usage_error() {
    let path = fixture("nolambda.json", REF_CONFIG);
    let cmd = parse(&["sleepscale", "eval", "--config", path.to_str().unwrap()]);
    let err = execute(&cmd).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("--lambda"));
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_sleepscale");
    let path = fixture("exitcodes.json", REF_CONFIG);
    let p = path.to_str().unwrap();

    // Unknown flag: clap usage error, exit 2, message names the flag.
    let out = Process::new(bin)
        .args(["eval", "--config", p, "--lambda", "0.5", "--bogus"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--bogus"));

    // Missing required --config flag: exit 2 naming it.
    let out = Process::new(bin).args(["eval"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--config"));

    // Domain error (unstable load): exit 1.
    let out = Process::new(bin)
        .args(["eval", "--config", p, "--lambda", "1.5"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unstable"));

    // Happy path writes the artifact to --out and exits 0.
    let out_path = std::env::temp_dir().join(format!("sleepscale-out-{}.csv", std::process::id()));
    let out = Process::new(bin)
        .args([
            "eval",
            "--config",
            p,
            "--lambda",
            "0.5",
            "--out",
            out_path.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let written = std::fs::read_to_string(&out_path).unwrap();
    assert!(written.starts_with("lambda,"));
    let _ = std::fs::remove_file(out_path);
}

#[test]
fn validate_subcommand_passes_on_the_reference_config() {
    let bin = env!("CARGO_BIN_EXE_sleepscale");
    let path = fixture("validate.json", REF_CONFIG);
    let out = Process::new(bin)
        .args([
            "validate",
            "--config",
            path.to_str().unwrap(),
            "--jobs",
            "2",
        ])
        .output()
        .unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "stdout: {stdout}");
    assert!(stdout.contains("7/7 checks passed"), "stdout: {stdout}");
}
