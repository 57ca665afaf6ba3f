use std::path::{Path, PathBuf};
use std::process::Command;

use smoothfit::cli::{self, Artifact, RegularityData, SimulationData, Status, ValueData, WitnessData};

fn run(args: &[&str]) -> i32 {
    cli::run(std::iter::once("smoothfit").chain(args.iter().copied()))
}

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Self {
        Workspace { dir: tempfile::tempdir().unwrap() }
    }

    fn config(&self, name: &str, text: &str) -> String {
        let path = self.dir.path().join(name);
        std::fs::write(&path, text).unwrap();
        path.to_str().unwrap().to_string()
    }

    fn out(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }
}

fn read<T: serde::de::DeserializeOwned>(path: &Path) -> Artifact<T> {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn solve_then_verify_put() {
    let w = Workspace::new();
    let cfg = w.config("b1.json", r#"{"problem": {"benchmark": "B1"}}"#);
    let out = w.out("b1");
    let o = out.to_str().unwrap();
    assert_eq!(run(&["solve", "--config", &cfg, "--out", o]), 0);
    let v: Artifact<ValueData> = read(&out.join("V.json"));
    assert_eq!(v.version, env!("CARGO_PKG_VERSION"));
    assert_eq!(v.config_hash.len(), 64);
    assert_eq!(v.status, Status::Pass);
    assert!(out.join("report.json").exists());
    assert_eq!(run(&["verify", "--config", &cfg, "--out", o]), 0);
    let r: Artifact<RegularityData> = read(&out.join("regularity.json"));
    assert!(r.data.passed && r.data.smooth_fit.unwrap().passed());
    assert_eq!(r.config_hash, v.config_hash);
}

#[test]
fn degenerate_benchmark_reports_kernel_kinks_but_passes() {
    let w = Workspace::new();
    let cfg = w.config("b3.json", r#"{"problem": {"benchmark": "B3"}}"#);
    let o = w.out("b3");
    let o = o.to_str().unwrap();
    assert_eq!(run(&["solve", "--config", &cfg, "--out", o]), 0);
    assert_eq!(run(&["verify", "--config", &cfg, "--out", o]), 0);
    let r: Artifact<RegularityData> = read(&Path::new(o).join("regularity.json"));
    assert!(r.data.probes.kernel_kinks > 0);
    assert_eq!(r.data.probes.range_violations, 0);
}

#[test]
fn problem_file_relative_to_config() {
    let w = Workspace::new();
    let problem = serde_json::to_string(&smoothfit::problems::catalog::b1_config()).unwrap();
    w.config("put.json", &problem);
    let cfg = w.config("run.json", r#"{"problem": {"path": "put.json"}, "solve": {"tol": 1e-9}}"#);
    assert_eq!(run(&["solve", "--config", &cfg, "--out", w.out("p").to_str().unwrap()]), 0);
}

#[test]
fn invalid_inputs_exit_with_one() {
    let w = Workspace::new();
    let o = w.out("bad");
    let o = o.to_str().unwrap();
    let neg = w.config("neg.json", r#"{"problem": {"benchmark": "B1"}, "solve": {"tol": -1}}"#);
    let bin = env!("CARGO_BIN_EXE_smoothfit");
    let res = Command::new(bin).args(["solve", "--config", &neg, "--out", o]).output().unwrap();
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("tolerances > 0"));

    let typo = w.config("typo.json", r#"{"problem": {"benchmark": "B1"}, "solve": {"tolerance": 1e-6}}"#);
    let res = Command::new(bin).args(["solve", "--config", &typo, "--out", o]).output().unwrap();
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("tolerance"));

    assert_eq!(run(&["solve", "--out", o]), 1);
    assert_eq!(run(&["frobnicate"]), 1);
    let cfg = w.config("b1.json", r#"{"problem": {"benchmark": "B1"}}"#);
    assert_eq!(run(&["verify", "--config", &cfg, "--out", o]), 1);
    std::fs::create_dir_all(o).unwrap();
    std::fs::write(Path::new(o).join("V.json"), "{\"tool\": ").unwrap();
    assert_eq!(run(&["verify", "--config", &cfg, "--out", o]), 1);
    assert_eq!(run(&["report", "--out", w.out("empty").to_str().unwrap()]), 1);
}

#[test]
fn forced_non_convergence_keeps_flagged_artifacts() {
    let w = Workspace::new();
    let cfg = w.config("b4.json", r#"{"problem": {"benchmark": "B4"}, "solve": {"max_iter": 1}}"#);
    let out = w.out("b4");
    assert_eq!(run(&["solve", "--config", &cfg, "--out", out.to_str().unwrap()]), 2);
    let v: Artifact<ValueData> = read(&out.join("V.json"));
    assert_eq!(v.status, Status::NotConverged);
    assert!(v.warning.is_some());
    assert_eq!(run(&["report", "--out", out.to_str().unwrap()]), 2);
}

#[test]
fn witness_command() {
    let w = Workspace::new();
    let out = w.out("w");
    let o = out.to_str().unwrap();
    assert_eq!(run(&["witness", "--out", o]), 0);
    let a: Artifact<WitnessData> = read(&out.join("witness.json"));
    assert_eq!(a.data.witnesses[0].lambda, vec![4.0, 40.0, 400.0]);

    let same = w.config("same.json", r#"{"witness": {"instances": [{"p1": [1.0], "p2": [1.0], "sigma0": [[1.0]]}]}}"#);
    let bin = env!("CARGO_BIN_EXE_smoothfit");
    let res = Command::new(bin).args(["witness", "--config", &same, "--out", o]).output().unwrap();
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("sigma0^T (p1 - p2)"));

    let random = w.config(
        "random.json",
        r#"{"witness": {"j_list": [1, 10, 100, 1000], "random": {"n": 3, "m": 2, "count": 5}}}"#,
    );
    assert_eq!(run(&["witness", "--config", &random, "--out", o, "--seed", "99"]), 0);
    let a: Artifact<WitnessData> = read(&out.join("witness.json"));
    assert_eq!(a.data.witnesses.len(), 5);
    assert!(a.data.passed);
}

#[test]
fn simulate_drift_control_and_never_stop() {
    let w = Workspace::new();
    let b4 = w.config(
        "b4.json",
        r#"{"problem": {"benchmark": "B4"},
            "simulate": {"n_paths": 1000, "dt": 0.01, "t_max": 14.0, "x0": [[-1.0], [0.0], [1.0]], "allowance": 0.005}}"#,
    );
    let out = w.out("b4");
    let o = out.to_str().unwrap();
    assert_eq!(run(&["solve", "--config", &b4, "--out", o]), 0);
    assert_eq!(run(&["simulate", "--config", &b4, "--out", o]), 0);
    let s: Artifact<SimulationData> = read(&out.join("simulation.json"));
    assert!(!s.data.any_significantly_negative);

    let b1 = w.config(
        "b1.json",
        r#"{"problem": {"benchmark": "B1"},
            "simulate": {"n_paths": 200, "dt": 0.01, "t_max": 400.0, "x0": [[0.8], [1.2]], "policy": "never_act"}}"#,
    );
    let out = w.out("b1");
    let o = out.to_str().unwrap();
    assert_eq!(run(&["solve", "--config", &b1, "--out", o]), 0);
    assert_eq!(run(&["simulate", "--config", &b1, "--out", o]), 0);
    let s: Artifact<SimulationData> = read(&out.join("simulation.json"));
    assert!(s.data.any_significantly_positive && !s.data.any_significantly_negative);

    let zero = w.config(
        "zero.json",
        r#"{"problem": {"benchmark": "B1"}, "simulate": {"n_paths": 0, "dt": 0.01, "t_max": 400.0, "x0": [[1.0]]}}"#,
    );
    assert_eq!(run(&["simulate", "--config", &zero, "--out", o]), 1);
}

#[test]
fn csv_tables_follow_frozen_headers() {
    let w = Workspace::new();
    let cfg = w.config(
        "b1.json",
        r#"{"problem": {"benchmark": "B1"},
            "simulate": {"n_paths": 50, "dt": 0.01, "t_max": 400.0, "x0": [[1.0]], "policy": "solved"}}"#,
    );
    let out = w.out("csv");
    let o = out.to_str().unwrap();
    for cmd in ["solve", "verify", "simulate", "witness"] {
        assert_eq!(run(&[cmd, "--config", &cfg, "--out", o, "--format", "csv"]), 0, "{cmd}");
    }
    assert_eq!(run(&["report", "--out", o, "--format", "csv"]), 0);
    let header = |f: &str| std::fs::read_to_string(out.join(f)).unwrap().lines().next().unwrap().to_string();
    assert_eq!(header("V.csv"), "x1,value,region");
    assert_eq!(header("probes.csv"), "x1,d1,kind,slope_plus,slope_minus,jump,tol_jump,classification");
    assert_eq!(
        header("smooth_fit.csv"),
        "x1,d1,kind,value_gap,slope_plus,slope_minus,obstacle_slope,gap,judged,passed"
    );
    assert_eq!(
        header("simulation.csv"),
        "x1,value,mean,stderr,tail_bound,gap,allowance,significantly_positive,significantly_negative"
    );
    assert_eq!(header("witness.csv"), "instance,j,lambda,gradient_error,trace,trace_error,residual");
    assert_eq!(header("summary.csv"), "artifact,command,config_hash,status,warning");
    let rows = std::fs::read_to_string(out.join("V.csv")).unwrap().lines().count();
    assert_eq!(rows, 4001);
}

#[test]
fn thread_count_from_environment_matches_flag() {
    let w = Workspace::new();
    let cfg = w.config(
        "b4.json",
        r#"{"problem": {"benchmark": "B4"}, "seed": 3,
            "simulate": {"n_paths": 200, "dt": 0.02, "t_max": 14.0, "x0": [[0.7]]}}"#,
    );
    let bin = env!("CARGO_BIN_EXE_smoothfit");
    let mut outputs = Vec::new();
    for (flag, env) in [(Some("1"), None), (None, Some("3"))] {
        let out = w.out(&format!("{flag:?}{env:?}").replace(['"', '(', ')'], ""));
        let o = out.to_str().unwrap();
        for cmd in ["solve", "simulate"] {
            let mut c = Command::new(bin);
            c.args([cmd, "--config", &cfg, "--out", o]);
            if let Some(t) = flag {
                c.args(["--threads", t]);
            }
            if let Some(t) = env {
                c.env("SMOOTHFIT_THREADS", t);
            } else {
                c.env_remove("SMOOTHFIT_THREADS");
            }
            assert_eq!(c.status().unwrap().code(), Some(0));
        }
        outputs.push(std::fs::read(out.join("simulation.json")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn seed_flag_changes_hash_and_estimate() {
    let w = Workspace::new();
    let cfg = w.config(
        "b4.json",
        r#"{"problem": {"benchmark": "B4"}, "simulate": {"n_paths": 100, "dt": 0.02, "t_max": 14.0, "x0": [[0.7]]}}"#,
    );
    let out = w.out("s");
    let o = out.to_str().unwrap();
    assert_eq!(run(&["solve", "--config", &cfg, "--out", o]), 0);
    let mut seen = Vec::new();
    for seed in ["1", "2"] {
        assert_eq!(run(&["simulate", "--config", &cfg, "--out", o, "--seed", seed]), 0);
        let s: Artifact<SimulationData> = read(&out.join("simulation.json"));
        seen.push((s.config_hash, s.data.report.entries[0].estimate.mean));
    }
    assert_ne!(seen[0].0, seen[1].0);
    assert_ne!(seen[0].1, seen[1].1);
}
