use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn nwformer(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nwformer"))
        .args(args)
        .current_dir(out)
        .output()
        .expect("binary runs")
}

fn text(o: &Output) -> String {
    format!(
        "{}{}",
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    )
}

#[test]
fn verify_default_passes_and_writes_under_out() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("res");
    let o = nwformer(&["verify", "--out", out.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    assert!(out.join("equivalence.csv").exists());
    assert!(out.join("equivalence.json").exists());
    // Nothing else lands in the working directory.
    let entries: Vec<_> = fs::read_dir(dir.path()).unwrap().collect();
    assert_eq!(entries.len(), 1);
}

#[test]
fn verify_with_unsafe_constant_fails_naming_the_lemma() {
    let dir = tempfile::tempdir().unwrap();
    let o = nwformer(&["verify", "--safety-factor", "0.1", "--out", "o"], dir.path());
    assert_eq!(o.status.code(), Some(1), "{}", text(&o));
    assert!(text(&o).contains("lemma"), "{}", text(&o));
}

#[test]
fn malformed_config_exits_2_with_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"n_grid": [4, 16], "n_gird": [4]}"#).unwrap();
    let o = nwformer(&["verify", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o).contains("n_gird"), "{}", text(&o));

    fs::write(&cfg, r#"{"tasks_per_point": "many"}"#).unwrap();
    let o = nwformer(&["verify", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o).contains("tasks_per_point"), "{}", text(&o));

    fs::write(&cfg, r#"{"n_grid": [16, 4]}"#).unwrap();
    let o = nwformer(&["verify", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn usage_errors_exit_2_and_help_exits_0() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(nwformer(&["--help"], dir.path()).status.code(), Some(0));
    assert_eq!(nwformer(&["frobnicate"], dir.path()).status.code(), Some(2));
    assert_eq!(nwformer(&["verify", "--manifold", "klein"], dir.path()).status.code(), Some(2));
    assert_eq!(nwformer(&["rates", "--which", "bias", "--alpha", "1.5"], dir.path()).status.code(), Some(2));
}

#[test]
fn lemmas_pass_and_fault_hook_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = nwformer(&["lemmas", "--out", "o"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    let s = text(&o);
    for name in ["interaction", "gating", "decrementing"] {
        assert!(s.contains(name), "{s}");
    }
    let o = nwformer(&["lemmas", "--trials", "1", "--seed", "17", "--out", "o"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    let o = nwformer(
        &["lemmas", "--trials", "100", "--inject-fault", "gating-off-by-one", "--out", "o"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(1), "{}", text(&o));
    assert!(text(&o).contains("FAIL"));
}

#[test]
fn rate_csv_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("rate.json");
    fs::write(
        &cfg,
        r#"{"tasks_per_point": 8, "queries_per_task": 4, "estimator": "direct"}"#,
    )
    .unwrap();
    let run = |out: &str| {
        let o = nwformer(
            &["rates", "--which", "rate", "--manifold", "circle", "--config", cfg.to_str().unwrap(), "--seed", "3", "--out", out],
            dir.path(),
        );
        assert!(matches!(o.status.code(), Some(0) | Some(1)), "{}", text(&o));
        fs::read(dir.path().join(out).join("rate.csv")).unwrap()
    };
    let a = run("a");
    assert_eq!(a, run("b"));
    let rows = String::from_utf8(a).unwrap();
    assert_eq!(rows.lines().count(), 9);
}

#[test]
fn bias_slope_via_cli() {
    let dir = tempfile::tempdir().unwrap();
    let o = nwformer(&["rates", "--which", "bias", "--alpha", "0.5", "--tasks", "8", "--out", "o"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("o/bias.json")).unwrap()).unwrap();
    let slope = json["slope"]["fit"]["slope"].as_f64().unwrap();
    assert!((slope - 0.5).abs() < 0.25, "{slope}");
    assert_eq!(json["schema_version"], 1);
}
