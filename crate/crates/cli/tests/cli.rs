use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn pcsft(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pcsft")).args(args).output().expect("binary runs")
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    let mut full: Vec<&str> = args.to_vec();
    let out = dir.to_str().unwrap();
    full.extend(["--out", out]);
    pcsft(&full)
}

fn results(dir: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(dir.join("results.json")).unwrap()).unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn born_run_writes_tagged_results() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run_in(tmp.path(), &["born", "--seed", "3", "--trials", "20000"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("PASS        born-exact"));
    let r = results(tmp.path());
    assert_eq!(r["passed"], true);
    for v in r["values"].as_array().unwrap() {
        match v["provenance"].as_str().unwrap() {
            "mc" => assert!(v["n_samples"].is_u64() && v["standard_error"].is_f64(), "{v}"),
            "exact" | "reference-oracle" => assert!(v.get("n_samples").is_none()),
            other => panic!("unexpected provenance {other}"),
        }
    }
    let csv = std::fs::read_to_string(tmp.path().join("convergence.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "n,mc_mean,standard_error,exact");
    assert_eq!(csv.lines().count(), 21);
    let manifest: Value = serde_json::from_slice(&std::fs::read(tmp.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 3);
    assert_eq!(manifest["artifacts"], serde_json::json!(["convergence.csv", "results.json"]));
}

#[test]
fn every_experiment_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let runs: [(&str, &[&str], &str); 6] = [
        ("dynamics", &["--seed", "1", "--trials", "2000"], "trajectory.csv"),
        ("hessian", &["--seed", "1", "--trials", "20000"], "hessian.csv"),
        ("epr", &["--seed", "1", "--trials", "20000"], "epr_curve.csv"),
        ("chsh", &["--seed", "1", "--trials", "20000"], "witness.csv"),
        ("kolmogorov", &["--seed", "1", "--trials", "100"], "random_tables.csv"),
        ("triangle", &["--seed", "1", "--angles", "pi/2, pi/4, pi/4"], "results.json"),
    ];
    for (kind, args, artifact) in runs {
        let dir = tmp.path().join(kind);
        let mut full = vec![kind];
        full.extend_from_slice(args);
        let o = run_in(&dir, &full);
        assert!(o.status.success(), "{kind}: {}{}", stdout(&o), stderr(&o));
        assert!(dir.join(artifact).exists(), "{kind} did not write {artifact}");
        assert_eq!(results(&dir)["experiment"], kind);
    }
}

#[test]
fn singlet_chsh_is_infeasible_and_lhv_is_not() {
    let tmp = tempfile::tempdir().unwrap();
    let singlet = tmp.path().join("s");
    assert!(run_in(&singlet, &["chsh", "--seed", "1", "--source", "singlet"]).status.success());
    let r = results(&singlet);
    assert_eq!(r["labels"]["kolmogorov"], "infeasible");
    let s = r["values"].as_array().unwrap().iter().find(|v| v["name"] == "chsh").unwrap()["value"].as_f64().unwrap();
    assert!((s + 2.0 * 2f64.sqrt()).abs() < 1e-12);

    let lhv = tmp.path().join("l");
    assert!(run_in(&lhv, &["chsh", "--seed", "1", "--trials", "20000"]).status.success());
    assert_eq!(results(&lhv)["labels"]["kolmogorov"], "feasible");
}

#[test]
fn kolmogorov_reads_trials_written_by_chsh() {
    let tmp = tempfile::tempdir().unwrap();
    let clicks = tmp.path().join("clicks");
    let o = run_in(&clicks, &["chsh", "--seed", "2", "--source", "clicks", "--trials", "20000"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let trials = clicks.join("trials.csv");
    let k = tmp.path().join("k");
    let o = run_in(&k, &["kolmogorov", "--seed", "2", "--trials-csv", trials.to_str().unwrap()]);
    assert!(o.status.success(), "{}{}", stdout(&o), stderr(&o));
    assert_eq!(results(&k)["labels"]["kolmogorov"], "infeasible");
}

#[test]
fn kolmogorov_reads_json_table() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("table.json");
    let entry = |e: f64| serde_json::json!({"correlation": e, "standard_error": 0.0});
    let table = serde_json::json!({
        "settings1": [0.0, 1.0],
        "settings2": [0.0, 1.0],
        "entries": [[entry(1.0), entry(1.0)], [entry(1.0), entry(-1.0)]],
    });
    std::fs::write(&path, table.to_string()).unwrap();
    let out = tmp.path().join("out");
    let o = run_in(&out, &["kolmogorov", "--seed", "1", "--table", path.to_str().unwrap()]);
    assert!(o.status.success(), "{}{}", stdout(&o), stderr(&o));
    assert_eq!(results(&out)["labels"]["kolmogorov"], "infeasible");
}

#[test]
fn validate_lists_every_problem() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("bad.toml");
    std::fs::write(&config, "kind = \"born\"\nepsilon = -0.5\ntrials = 0\ncolour = \"red\"\n").unwrap();
    let o = pcsft(&["validate", "--config", config.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    for needle in
        ["unknown key `colour`", "seed is required", "epsilon must be non-negative", "trials must be at least 1"]
    {
        assert!(err.contains(needle), "missing {needle:?} in {err}");
    }
}

#[test]
fn flags_override_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("c.toml");
    std::fs::write(&config, "kind = \"born\"\nseed = 4\nepsilon = -1.0\n").unwrap();
    let o = pcsft(&["validate", "--config", config.to_str().unwrap(), "--epsilon", "0.2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("born experiment, seed 4"));
}

#[test]
fn runs_refuse_invalid_configs() {
    let o = pcsft(&["epr", "--seed", "1", "--epsilon", "0.1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("epsilon must be at least"));
    let o = pcsft(&["triangle", "--seed", "1", "--angles", "1,2"]);
    assert_eq!(o.status.code(), Some(2));
    let o = pcsft(&["triangle", "--seed", "1", "--angles", "4,1,1"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn output_is_independent_of_thread_count() {
    let tmp = tempfile::tempdir().unwrap();
    let one = tmp.path().join("one");
    let four = tmp.path().join("four");
    for (dir, threads) in [(&one, "1"), (&four, "4")] {
        let o = run_in(dir, &["epr", "--seed", "9", "--trials", "8000", "--threads", threads]);
        assert!(o.status.code().is_some_and(|c| c <= 1), "{}", stderr(&o));
    }
    for name in ["results.json", "manifest.json", "epr_curve.csv", "double_clicks.csv"] {
        assert_eq!(std::fs::read(one.join(name)).unwrap(), std::fs::read(four.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn out_dir_defaults_to_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_pcsft"))
        .args(["triangle", "--seed", "1", "--angles", "1,1,1"])
        .env("PCSFT_OUT_DIR", tmp.path())
        .output()
        .unwrap();
    assert!(o.status.success());
    assert_eq!(results(tmp.path())["labels"]["class"], "deficit");
}
