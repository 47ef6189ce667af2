use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use batchbound::harness::{read_sweep_csv, GameReport, Outcome};
use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_batchbound"));
    c.env_remove("BATCHBOUND_SEED").env_remove("BATCHBOUND_OUT");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!("bad JSON ({e}): {}\nstderr: {}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr))
    })
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn simulate(config: &str, dir: &Path) -> GameReport {
    let cfg = write(dir, "config.json", config);
    let out_dir = dir.join("out");
    let out = run(&["simulate", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let from_file: GameReport = serde_json::from_str(&fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    let from_stdout: GameReport = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(from_file, from_stdout);
    from_file
}

#[test]
fn simulate_multi_batch_example_is_indistinguishable() {
    let dir = tempfile::tempdir().unwrap();
    let r = simulate(
        r#"{"d":16,"gamma":0.9,"K":2,"n_per_round":[10,10],"problem":"PE","learner_kind":"coordinate","adversary_mode":"multi_batch","seed":1}"#,
        dir.path(),
    );
    assert_eq!(r.outcome, Outcome::Indistinguishable);
    assert_eq!(r.q_gap, Some(2.0));
    let cert: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("out/certificate.json")).unwrap()).unwrap();
    assert_eq!(cert["q_gap"], 2.0);
    assert_eq!(cert["replay_match"], true);
    assert_eq!(cert["sign_pair"], true);
    assert_eq!(cert["w"].as_array().unwrap().len(), 16);
    let lines = fs::read_to_string(dir.path().join("out/transcript.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 20);
}

#[test]
fn simulate_solver_examples() {
    let dir = tempfile::tempdir().unwrap();
    let r = simulate(
        r#"{"d":8,"gamma":0.9,"K":8,"n_per_round":[1,1,1,1,1,1,1,1],"problem":"PE","learner_kind":"exact_solver","adversary_mode":"fully_adaptive","seed":7}"#,
        dir.path(),
    );
    assert_eq!(r.outcome, Outcome::LearnerSound);
    assert!(r.max_error.unwrap() <= 1e-9);

    let dir = tempfile::tempdir().unwrap();
    let r = simulate(
        r#"{"d":8,"gamma":0.9,"K":7,"n_per_round":[1,1,1,1,1,1,1],"problem":"PE","learner_kind":"exact_solver","adversary_mode":"fully_adaptive","seed":7}"#,
        dir.path(),
    );
    assert_eq!(r.outcome, Outcome::Indistinguishable);
    assert_eq!(r.q_gap, Some(2.0));
}

#[test]
fn sweep_has_one_row_per_cell_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let serial = dir.path().join("serial.csv");
    let parallel = dir.path().join("parallel.csv");
    for (path, jobs) in [(&serial, "1"), (&parallel, "4")] {
        let out = run(&["sweep", "--d", "4,8,16", "--K", "1,2,3", "--n", "5", "--jobs", jobs, "--out", path.to_str().unwrap()]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    let a = fs::read_to_string(&serial).unwrap();
    assert_eq!(a, fs::read_to_string(&parallel).unwrap());
    assert!(a.starts_with("schema_version,"));
    let rows = read_sweep_csv(a.as_bytes()).unwrap();
    assert_eq!(rows.len(), 9);
    assert!(rows.iter().all(|r| r.schema_version == 1));
    for r in rows.iter().filter(|r| r.k == 1) {
        assert_eq!(r.outcome, "indistinguishable", "{r:?}");
    }
}

#[test]
fn sweep_solver_with_k_equal_n_is_sound() {
    let dir = tempfile::tempdir().unwrap();
    let grid = write(
        dir.path(),
        "grid.json",
        r#"{"d":[4],"K":[4],"n_per_round":1,"learners":["exact_solver"],"adversary_modes":["fully_adaptive","multi_batch","fixed_instance"],"gamma":0.9,"problem":"PE","seed":2}"#,
    );
    let out = run(&["sweep", "--grid", &grid]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let rows = read_sweep_csv(out.stdout.as_slice()).unwrap();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r.outcome == "learner_sound"), "{rows:?}");
}

#[test]
fn exit_codes_by_error_class() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();

    // Config errors: 3.
    let bad = write(p, "bad.json", r#"{"d":1}"#);
    assert_eq!(code(&run(&["simulate", "--config", &bad])), 3);
    let gamma = write(p, "gamma.json", r#"{"d":4,"gamma":0.5,"K":1,"n_per_round":[1],"problem":"PE"}"#);
    let out = run(&["simulate", "--config", &gamma]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("gamma"));
    let fixed = write(p, "fixed.json", r#"{"d":4,"gamma":0.9,"K":1,"n_per_round":[1],"problem":"PE"}"#);
    assert_eq!(code(&run(&["adversary", "play", "--config", &fixed])), 3);
    assert_eq!(code(&run(&["bounds", "--d", "256", "--K", "1", "--gamma", "0.5"])), 3);

    // Failed verification (an invariant does not hold): 2.
    let packing = write(
        p,
        "packing.json",
        r#"{"d":2,"m":1,"gamma":0.9,"members":[{"ambient_dim":2,"dim":1,"basis":[[1.0,0.0]]},{"ambient_dim":2,"dim":1,"basis":[[0.6,0.8]]}]}"#,
    );
    let out = run(&["packing", "verify", &packing, "--dmin", "0.9"]);
    assert_eq!(code(&out), 2);
    assert_eq!(stdout_json(&out)["ok"], false);
    let out = run(&["packing", "verify", &packing, "--dmin", "0.5"]);
    assert_eq!(code(&out), 0);
    assert!((stdout_json(&out)["actual_dmin"].as_f64().unwrap() - 0.8).abs() < 1e-12);

    // Anything else (here an unwritable output location): 1.
    let blocker = write(p, "blocker", "");
    let out = run(&["simulate", "--config", &fixed, "--out", &format!("{blocker}/sub")]);
    assert_eq!(code(&out), 1);

    // Completed: 0.
    assert_eq!(code(&run(&["simulate", "--config", &fixed, "--out", p.join("ok").to_str().unwrap()])), 0);
}

#[test]
fn environment_overrides_apply() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.json",
        r#"{"d":6,"gamma":0.9,"K":2,"n_per_round":[2,2],"problem":"PE","learner_kind":"random_unit","adversary_mode":"multi_batch"}"#,
    );
    let out_dir = dir.path().join("via-env");
    let out = bin()
        .args(["simulate", "--config", &cfg])
        .env("BATCHBOUND_SEED", "99")
        .env("BATCHBOUND_OUT", &out_dir)
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
    let r: GameReport = serde_json::from_str(&fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(r.config.seed, 99);
    let bad = bin().args(["simulate", "--config", &cfg]).env("BATCHBOUND_SEED", "x").output().unwrap();
    assert_eq!(code(&bad), 3);
}

#[test]
fn protocol_run_prints_transcript() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.json",
        r#"{"d":5,"gamma":0.9,"K":2,"n_per_round":[3,2],"problem":"PE","query_mode":"policy_free","seed":4}"#,
    );
    let out = run(&["protocol", "run", "--config", &cfg]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    let t = batchbound::protocol::Transcript::from_jsonl(&text).unwrap();
    assert_eq!(t.n_total(), 5);
    assert_eq!(t.k(), 2);
}

#[test]
fn instance_tools_chain_together() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["mdp", "sample", "--d", "5", "--dims", "3,1", "--sign", "-1", "--seed", "3"]);
    assert_eq!(code(&out), 0);
    let inst = write(dir.path(), "inst.json", &String::from_utf8(out.stdout).unwrap());

    let out = run(&["mdp", "verify-realizability", &inst, "--samples", "1000", "--seed", "1"]);
    assert_eq!(code(&out), 0);
    let rep = stdout_json(&out);
    assert_eq!(rep["pass"], true);
    assert!(rep["max_residual"].as_f64().unwrap() <= 1e-9);

    let out = run(&["learner", "solve", "--env", &inst, "--gamma", "0.9"]);
    assert_eq!(code(&out), 0);
    let rep = stdout_json(&out);
    assert_eq!(rep["queries"], 5);
    let inst_json: Value = serde_json::from_str(&fs::read_to_string(&inst).unwrap()).unwrap();
    for (t, w) in rep["theta"].as_array().unwrap().iter().zip(inst_json["w"].as_array().unwrap()) {
        assert!((t.as_f64().unwrap() + w.as_f64().unwrap()).abs() <= 1e-9);
    }
}

#[test]
fn bounds_and_verify_commands() {
    let out = run(&["bounds", "--d", "256", "--K", "1", "--gamma", "0.8660254037844386"]);
    assert_eq!(code(&out), 0);
    let r = stdout_json(&out);
    assert!((r["W"].as_f64().unwrap() - 0.25f64.exp()).abs() <= 1e-12);

    for target in ["realizability", "geometry", "packing"] {
        let out = run(&["verify", target, "--d", "3,4", "--samples", "300", "--trials", "100"]);
        assert_eq!(code(&out), 0, "{target}: {}", String::from_utf8_lossy(&out.stdout));
        assert_eq!(stdout_json(&out)["pass"], true);
    }
}
