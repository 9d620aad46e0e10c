use std::path::Path;
use std::process::{Command, Output};

fn pclbench(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pclbench"))
        .args(args)
        .current_dir(dir)
        .env_remove("PCLBENCH_SEED")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn helmholtz_writes_trace_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let o = pclbench(
        &[
            "helmholtz",
            "--domain",
            "square",
            "--k",
            "0.5",
            "--refine",
            "2",
            "--method",
            "pcl",
            "--out",
            "t.csv",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("t.csv")).unwrap();
    assert!(csv.starts_with("iteration,loss,error,grad_norm\n"));
    let first: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(first[0], "0");
    assert!((first[2].parse::<f64>().unwrap() - 29f64.sqrt()).abs() < 1e-12);
    let s: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("t.json")).unwrap()).unwrap();
    assert_eq!(s["config"]["k"], 0.5);
    assert_eq!(s["method"], "pcl");
    assert!(s["final_error"].as_f64().unwrap() < 1e-4);
    assert_eq!(
        s["iterations"].as_u64().unwrap() as usize,
        csv.lines().count() - 2
    );
    assert!(s["wall_time_s"].is_number());
}

#[test]
fn identical_runs_give_identical_csv() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a.csv", "b.csv"] {
        let o = pclbench(
            &[
                "poisson-1d",
                "--seed",
                "4",
                "--max-iters",
                "40",
                "--out",
                out,
            ],
            dir.path(),
        );
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    let a = std::fs::read(dir.path().join("a.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b.csv")).unwrap();
    assert_eq!(a, b);
    assert!(a.len() > 100);
}

#[test]
fn penalty_without_lambda_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = pclbench(&["poisson-nn", "--method", "pm"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("penalty weight"), "{}", stderr(&o));
    assert!(!dir.path().join("poisson-nn.csv").exists());
}

#[test]
fn bad_arguments_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        pclbench(&["helmholtz", "--bogus"], dir.path())
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        pclbench(&["helmholtz", "--refine", "many"], dir.path())
            .status
            .code(),
        Some(1)
    );
    assert_eq!(pclbench(&[], dir.path()).status.code(), Some(1));
    assert_eq!(pclbench(&["--help"], dir.path()).status.code(), Some(0));
    std::fs::write(dir.path().join("c.json"), "[1, 2").unwrap();
    let o = pclbench(&["helmholtz", "--config", "c.json"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("c.json"), "{}", stderr(&o));
    let o = pclbench(&["helmholtz", "--config", "missing.json"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("missing.json"));
}

#[test]
fn missing_output_directory_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = pclbench(
        &["helmholtz", "--refine", "1", "--out", "nowhere/t.csv"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("nowhere"), "{}", stderr(&o));
}

#[test]
fn config_file_merges_under_flags() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("c.json"),
        r#"{"k": 0.25, "refinement": 1, "domain": "pipe"}"#,
    )
    .unwrap();
    let o = pclbench(
        &[
            "helmholtz",
            "--config",
            "c.json",
            "--k",
            "1.0",
            "--out",
            "t.csv",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let s: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("t.json")).unwrap()).unwrap();
    assert_eq!(s["config"]["k"], 1.0);
    assert_eq!(s["config"]["domain"], "pipe");
    assert_eq!(s["config"]["refinement"], 1);
}

#[test]
fn seed_defaults_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let run = |env: Option<&str>, extra: &[&str]| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_pclbench"));
        c.args(["poisson-1d", "--max-iters", "1", "--out", "s.csv"])
            .args(extra)
            .current_dir(dir.path());
        match env {
            Some(v) => c.env("PCLBENCH_SEED", v),
            None => c.env_remove("PCLBENCH_SEED"),
        };
        let o = c.output().unwrap();
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        let s: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("s.json")).unwrap())
                .unwrap();
        s["config"]["seed"].as_u64().unwrap()
    };
    assert_eq!(run(None, &[]), 0);
    assert_eq!(run(Some("42"), &[]), 42);
    assert_eq!(run(Some("42"), &["--seed", "3"]), 3);
    let o = Command::new(env!("CARGO_BIN_EXE_pclbench"))
        .args(["poisson-1d"])
        .env("PCLBENCH_SEED", "minus one")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn conditioning_writes_sweep_csv() {
    let dir = tempfile::tempdir().unwrap();
    let o = pclbench(
        &[
            "conditioning",
            "--min-exp",
            "2",
            "--max-exp",
            "10",
            "--out",
            "k.csv",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("k.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next(),
        Some("lambda,kappa_A_lambda,kappa_A_squared,ratio")
    );
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 9);
    assert_eq!(rows[0][0], 100.0);
    assert!(rows[8][1] >= 100.0 && rows[8][2] == 100.0);
    let s: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("k.json")).unwrap()).unwrap();
    assert_eq!(s["bound_met_at_max_lambda"], true);
}

#[test]
fn selftest_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = pclbench(&["selftest"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = String::from_utf8_lossy(&o.stdout);
    assert_eq!(text.lines().count(), 4);
    assert!(text.lines().all(|l| l.starts_with("ok")), "{text}");
}

#[test]
fn sweep_runs_in_parallel_and_matches_serial() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("s.json"),
        r#"[
            {"command": "helmholtz", "name": "h1", "refinement": 1},
            {"command": "helmholtz", "name": "h2", "refinement": 1, "method": "pm", "lambda": 1.0,
             "optimizer": {"max_iters": 50}},
            {"command": "poisson-1d", "name": "p", "optimizer": {"max_iters": 20}}
        ]"#,
    )
    .unwrap();
    std::fs::create_dir(dir.path().join("par")).unwrap();
    std::fs::create_dir(dir.path().join("ser")).unwrap();
    let o = pclbench(
        &[
            "sweep",
            "--file",
            "s.json",
            "--out-dir",
            "par",
            "--jobs",
            "3",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = pclbench(
        &["sweep", "--file", "s.json", "--out-dir", "ser"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for name in ["h1", "h2", "p"] {
        let a = std::fs::read(dir.path().join("par").join(format!("{name}.csv"))).unwrap();
        let b = std::fs::read(dir.path().join("ser").join(format!("{name}.csv"))).unwrap();
        assert_eq!(a, b, "{name}");
        assert!(dir.path().join("par").join(format!("{name}.json")).exists());
    }
    let o = pclbench(
        &["sweep", "--file", "s.json", "--out-dir", "absent"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn solver_failure_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    // Overflowing coefficients make the initial forward solve fail.
    std::fs::write(
        dir.path().join("c.json"),
        r#"{"theta0": [1e308, 1e308, 1e308, 1e308, 1e308, 1e308], "method": "pm", "lambda": 1.0}"#,
    )
    .unwrap();
    let o = pclbench(
        &[
            "helmholtz",
            "--config",
            "c.json",
            "--refine",
            "1",
            "--out",
            "t.csv",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}
