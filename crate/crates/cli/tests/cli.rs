use std::path::Path;
use std::process::{Command, Output};

fn cpsrl(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cpsrl"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

const CONFIG: &str = r#"
horizon = 600
seeds = [0]
log_every = 50

[env]
kind = "river_swim"
n = 4

[schedule]
kind = "fixed"
gamma = 0.9
"#;

#[test]
fn run_writes_outputs_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("exp.toml"), CONFIG).unwrap();
    let out = cpsrl(
        &[
            "run",
            "exp.toml",
            "--seeds",
            "1,2",
            "--horizon",
            "400",
            "--out",
            "res",
            "--agent",
            "tsde",
        ],
        dir.path(),
    );
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let res = dir.path().join("res");
    for file in [
        "seed_1.csv",
        "seed_2.csv",
        "episodes_seed_1.csv",
        "aggregate.csv",
        "regret.svg",
        "manifest.json",
    ] {
        assert!(res.join(file).exists(), "{file}");
    }
    let curve = std::fs::read_to_string(res.join("seed_1.csv")).unwrap();
    assert!(curve.starts_with("t,cumulative_regret,k,gamma\n"));
    assert!(curve.trim_end().lines().last().unwrap().starts_with("400,"));
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(res.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["agent"], "tsde");
}

#[test]
fn schedule_flags() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("exp.toml"), CONFIG).unwrap();
    let ok = cpsrl(
        &[
            "run",
            "exp.toml",
            "--schedule",
            "doubling_trick",
            "--out",
            "d",
        ],
        dir.path(),
    );
    assert_eq!(ok.status.code(), Some(0));
    let ok = cpsrl(
        &["run", "exp.toml", "--gamma", "0.5", "--out", "g"],
        dir.path(),
    );
    assert_eq!(ok.status.code(), Some(0));
    let bad = cpsrl(&["run", "exp.toml", "--schedule", "fixed"], dir.path());
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn config_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        cpsrl(&["run", "missing.toml"], dir.path()).status.code(),
        Some(1)
    );
    std::fs::write(
        dir.path().join("bad.toml"),
        "horizon = 0\n[env]\nkind = \"river_swim\"\n",
    )
    .unwrap();
    assert_eq!(
        cpsrl(&["run", "bad.toml"], dir.path()).status.code(),
        Some(1)
    );
    std::fs::write(dir.path().join("exp.toml"), CONFIG).unwrap();
    assert_eq!(
        cpsrl(&["run", "exp.toml", "--agent", "greedy"], dir.path())
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        cpsrl(&["run", "exp.toml", "--seeds", "x"], dir.path())
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn run_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("zero.toml"),
        "horizon = 10\n[env]\nkind = \"random_dirichlet\"\nn_states = 0\nn_actions = 2\n",
    )
    .unwrap();
    let out = cpsrl(&["run", "zero.toml", "--out", "z"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(dir.path().join("z/errors.json").exists());
}

#[test]
fn verify_single_check_and_unknown_names() {
    let dir = tempfile::tempdir().unwrap();
    let out = cpsrl(&["verify", "lemma1", "--out", "report.json"], dir.path());
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stdout)
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("lemma1"));
    assert!(!stdout.contains("episode_cap"));
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report.as_array().unwrap().len(), 1);

    let unknown = cpsrl(&["verify", "nonsense"], dir.path());
    assert_eq!(unknown.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&unknown.stderr);
    assert!(stderr.contains("nonsense") && stderr.contains("episode_geometric_fit"));

    assert_eq!(cpsrl(&["verify"], dir.path()).status.code(), Some(1));
}

#[test]
fn plot_combines_series() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("exp.toml"), CONFIG).unwrap();
    for agent in ["cpsrl", "random"] {
        let out = cpsrl(
            &["run", "exp.toml", "--agent", agent, "--out", agent],
            dir.path(),
        );
        assert_eq!(out.status.code(), Some(0));
    }
    let out = cpsrl(
        &[
            "plot",
            "cpsrl/aggregate.csv",
            "random/aggregate.csv",
            "--out",
            "both.svg",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    let svg = std::fs::read_to_string(dir.path().join("both.svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 2);
    assert!(svg.contains(">cpsrl<") && svg.contains(">random<"));
    assert_eq!(
        cpsrl(&["plot", "nope.csv"], dir.path()).status.code(),
        Some(1)
    );
}
