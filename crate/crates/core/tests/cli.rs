use std::path::Path;
use std::process::{Command, Output};

fn fpsim(args: &[&str], threads: Option<&str>) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_fpsim"));
    c.args(args);
    match threads {
        Some(t) => c.env("FPSIM_THREADS", t),
        None => c.env_remove("FPSIM_THREADS"),
    };
    c.output().unwrap()
}

fn write_spec(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p.to_string_lossy().into_owned()
}

fn grover_spec(out: &Path) -> String {
    format!(
        r#"{{
  "schema_version": 1,
  "family": "grover",
  "family_params": {{"n_qubits": [1, 2, 3, 4], "instance_seed": 5}},
  "m": [1, 2, 3, 4, 5, 6, 8, 10, 12, 15, 18, 22, 26, 30],
  "fpqs_levels": [0, 1],
  "oracle_modes": ["exact"],
  "trials": 40,
  "seed_base": 1000,
  "output": "{}"
}}"#,
        out.display()
    )
}

#[test]
fn run_writes_deterministic_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let sa = write_spec(dir.path(), "a.json", &grover_spec(&a));
    let sb = write_spec(dir.path(), "b.json", &grover_spec(&b));
    let o = fpsim(&["run", &sa], None);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = fpsim(&["run", &sb], Some("1"));
    assert!(o.status.success());

    let ja = std::fs::read_to_string(a.with_extension("jsonl")).unwrap();
    let jb = std::fs::read_to_string(b.with_extension("jsonl")).unwrap();
    assert_eq!(ja, jb, "thread count changed results");
    // 4 instances x 14 M x 2 levels x 40 trials
    assert_eq!(ja.lines().count(), 4 * 14 * 2 * 40);
    let first: serde_json::Value = serde_json::from_str(ja.lines().next().unwrap()).unwrap();
    assert_eq!(first["cell"], 0);
    assert_eq!(first["trial"], 0);
    assert_eq!(first["config"]["seed"], 1000);
    assert!(first["ledger"]["oracle_queries"].is_u64());

    let csv = std::fs::read_to_string(a.with_extension("csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "family,N,gamma,g,M,n,mode,trials,success_rate,mean_u_apps,mean_queries"
    );
    assert_eq!(lines.count(), 4 * 14 * 2);

    let fit = fpsim(&["fit", a.with_extension("jsonl").to_str().unwrap(), "--model", "childs_M"], None);
    assert!(fit.status.success(), "{}", String::from_utf8_lossy(&fit.stderr));
    let rep: serde_json::Value = serde_json::from_slice(&fit.stdout).unwrap();
    assert_eq!(rep["x"].as_array().unwrap().len(), 4);
    assert!(rep["slope"].as_f64().unwrap() > 0.5);
    assert!(rep["r2"].as_f64().unwrap() <= 1.0);

    let bad = fpsim(&["fit", a.with_extension("jsonl").to_str().unwrap(), "--model", "nope"], None);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn fit_needs_four_points() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("few");
    let spec = write_spec(
        dir.path(),
        "few.json",
        &format!(
            r#"{{"schema_version": 1, "family": "two_level", "family_params": {{"gaps": [0.5, 0.25]}},
                "m": [4, 8, 16], "fpqs_levels": [1], "oracle_modes": ["exact"],
                "trials": 5, "seed_base": 0, "output": "{}"}}"#,
            out.display()
        ),
    );
    assert!(fpsim(&["run", &spec], None).status.success());
    let o = fpsim(&["fit", out.with_extension("jsonl").to_str().unwrap(), "--model", "fpqs_M"], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("insufficient points"));
}

#[test]
fn invalid_specs_exit_two_before_running() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("never");
    let step = write_spec(
        dir.path(),
        "step.json",
        &format!(
            r#"{{"schema_version": 1, "family": "grover", "family_params": {{"n_qubits": [2, 3]}},
                "m": [40, 4], "fpqs_levels": [1], "oracle_modes": ["pea"], "ancilla_qubits": [10],
                "trials": 5, "seed_base": 0, "output": "{}"}}"#,
            out.display()
        ),
    );
    let o = fpsim(&["run", &step], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Delta <= g/(2 Gamma)"));
    assert!(!out.with_extension("jsonl").exists());

    let garbage = write_spec(dir.path(), "g.json", "{ not json");
    assert_eq!(fpsim(&["run", &garbage], None).status.code(), Some(2));
    let unknown = write_spec(dir.path(), "u.json", r#"{"schema_version": 1, "bogus": true}"#);
    assert_eq!(fpsim(&["run", &unknown], None).status.code(), Some(2));
    assert_eq!(fpsim(&["run", "/nonexistent/spec.json"], None).status.code(), Some(2));
    assert_eq!(fpsim(&["bogus"], None).status.code(), Some(2));
}

#[test]
fn verify_suites() {
    for suite in ["fpqs", "pea", "boost", "bounds"] {
        let o = fpsim(&["verify", suite], None);
        assert!(o.status.success(), "{suite}: {}", String::from_utf8_lossy(&o.stdout));
        assert!(String::from_utf8_lossy(&o.stdout).contains("PASS"));
    }
    let o = fpsim(&["verify", "boost", "--format", "json"], None);
    let rows: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(rows.as_array().unwrap().iter().all(|r| r["passed"] == true));
    assert_eq!(fpsim(&["verify", "nope"], None).status.code(), Some(2));
}

#[test]
fn bad_thread_count_is_rejected() {
    assert_eq!(fpsim(&["verify", "fpqs"], Some("zero")).status.code(), Some(2));
}
