//! Runs the built binary on small configs and pins output schemas.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn widebnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_widebnn"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn header(path: &Path) -> String {
    fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("{}: {e}", path.display()))
        .lines()
        .find(|l| !l.starts_with('#'))
        .unwrap()
        .to_string()
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("config.json");
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

const TINY_TRAIN: &str = r#""train": {"steps": 40, "batch_size": 100, "learning_rate": 0.001, "momentum": 0.9,
    "mc_samples": 4, "grad_clip_norm": 10.0, "cosine_restart_period": 500, "init_nu": 100.0, "seed": 3}"#;

#[test]
fn convergence_sweep_csv_headers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &format!(
            r#"{{"experiment": "convergence", "dataset": {{"kind": "two_points"}},
                "arch": {{"depth": 1, "activation": "tanh", "widths": [4, 8]}},
                {TINY_TRAIN}, "seeds": [0, 1], "eval_samples": 50, "kl_bound_samples": 50}}"#
        ),
    );
    let out = dir.path().join("out");
    let o = widebnn(&["sweep", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.code().is_some_and(|c| c == 0 || c == 1), "{o:?}");
    assert_eq!(
        header(&out.join("convergence.csv")),
        "width,seed_index,max_mean_dist,max_mean_dist_tilde,final_kl,final_elbo,bound"
    );
    assert_eq!(
        header(&out.join("convergence_summary.csv")),
        "width,min,mean,max,bound,kl_bound,kl_bound_se,nngp_posterior_dist"
    );
    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("metadata.json")).unwrap()).unwrap();
    assert_eq!(meta["config_hash"].as_str().unwrap().len(), 64);
    assert!(meta["version"].is_string());
    assert_eq!(meta["base_seed"], 3);
}

#[test]
fn rmse_sweep_csv_headers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &format!(
            r#"{{"experiment": "rmse_sweep", "dataset": {{"kind": "sine", "n": 20}},
                "arch": {{"depth": 1, "activation": "tanh", "widths": [4]}},
                {TINY_TRAIN}, "seeds": [0, 1], "restarts": 1, "eval_samples": 20, "eval_points": 10}}"#
        ),
    );
    let out = dir.path().join("out");
    let o = widebnn(&["sweep", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    assert_eq!(
        header(&out.join("rmse_sweep.csv")),
        "dataset,width,split,rmse_mean_to_prior,rmse_mean_to_test_y,rmse_var_to_prior_var,final_kl,final_elbo,max_mean_dist_to_prior"
    );
    assert_eq!(header(&out.join("rmse_summary.csv")), "width,metric,mean,ci_low,ci_high");
    // One width gives one row per split and metric and no trend.
    let rows = fs::read_to_string(out.join("rmse_sweep.csv")).unwrap().lines().count();
    assert_eq!(rows, 3);
}

#[test]
fn counterexample_csv_header() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &format!(
            r#"{{"experiment": "counterexample", "dataset": {{"kind": "counterexample"}},
                "arch": {{"depth": 1, "activation": "erf", "widths": [4]}},
                {TINY_TRAIN}, "seeds": [0], "eval_samples": 20}}"#
        ),
    );
    let out = dir.path().join("out");
    let o = widebnn(&["counterexample", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    assert_eq!(
        header(&out.join("counterexample.csv")),
        "width,gap,elbo_trained,elbo_qc,elbo_prior_optbias"
    );
}

#[test]
fn bounds_table_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"experiment": "bounds_table", "dataset": {"kind": "two_points"},
            "arch": {"depth": 1, "activation": "tanh", "widths": [64, 256]}, "kl_bound_samples": 50}"#,
    );
    let out = dir.path().join("out");
    let o = widebnn(&["bounds", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains("mean_1hl") && stdout.contains("second_moment"));
    assert!(header(&out.join("bounds.csv")).starts_with("formula_id,value,"));
}

#[test]
fn nngp_and_plot_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &format!(
            r#"{{"experiment": "posterior_plot", "dataset": {{"kind": "two_points"}},
                "arch": {{"depth": 1, "activation": "tanh", "widths": [4]}},
                {TINY_TRAIN}, "eval_samples": 20}}"#
        ),
    );
    let out = dir.path().join("out");
    let o = widebnn(&["nngp", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    assert_eq!(header(&out.join("nngp.csv")), "x,prior_var,post_mean,post_var");
    let o = widebnn(&["plot", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    assert_eq!(header(&out.join("posterior.csv")), "series,x,mean,sd");
    let svg = fs::read_to_string(out.join("posterior.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
}

#[test]
fn train_writes_history() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &format!(
            r#"{{"experiment": "convergence", "dataset": {{"kind": "two_points"}},
                "arch": {{"depth": 2, "activation": "relu", "widths": [5]}}, {TINY_TRAIN}}}"#
        ),
    );
    let out = dir.path().join("out");
    let o = widebnn(&["train", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    assert_eq!(header(&out.join("history.csv")), "step,elbo,kl,ell,grad_norm,lr");
    let q: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("posterior.json")).unwrap()).unwrap();
    assert!(q["mu"].is_array() && q["log_sigma"].is_array());
}

#[test]
fn train_is_reproducible_for_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &format!(
            r#"{{"experiment": "convergence", "dataset": {{"kind": "two_points"}},
                "arch": {{"depth": 1, "activation": "tanh", "widths": [6]}}, {TINY_TRAIN}}}"#
        ),
    );
    let run = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        let o = widebnn(&["train", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", seed]);
        assert_eq!(o.status.code(), Some(0), "{o:?}");
        fs::read_to_string(out.join("posterior.json")).unwrap()
    };
    assert_eq!(run("a", "9"), run("b", "9"));
    assert_ne!(run("a", "9"), run("c", "10"));
}

#[test]
fn verify_passes_with_json_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = widebnn(&["verify", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("verify.json")).unwrap()).unwrap();
    let checks = report["checks"].as_array().unwrap();
    assert!(checks.len() >= 5);
    for c in checks {
        assert!(c["name"].is_string() && c["slack"].is_number() && c["pass"].as_bool().unwrap());
    }
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), "{ not json");
    assert_eq!(widebnn(&["train", "--config", &bad]).status.code(), Some(2));
    let empty = write_config(
        dir.path(),
        r#"{"experiment": "convergence", "dataset": {"kind": "two_points"},
            "arch": {"depth": 1, "activation": "tanh", "widths": []}}"#,
    );
    assert_eq!(widebnn(&["sweep", "--config", &empty]).status.code(), Some(2));
    let missing = dir.path().join("nope.json");
    assert_eq!(
        widebnn(&["bounds", "--config", missing.to_str().unwrap()]).status.code(),
        Some(2)
    );
}

#[test]
fn unknown_subcommand_is_rejected() {
    assert_eq!(widebnn(&["frobnicate"]).status.code(), Some(2));
}
