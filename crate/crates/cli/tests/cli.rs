use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pgo-rls"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

fn s(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn gen(dir: &Path, seed: &str) -> (PathBuf, PathBuf) {
    let (g, t) = (p(dir, "g.g2o"), p(dir, "t.g2o"));
    ok(&[
        "gen", "--shape", "grid3d", "--nx", "3", "--ny", "3", "--nz", "2", "--seed", seed, "--output", s(&g), "--truth",
        s(&t),
    ]);
    (g, t)
}

fn eval(graph: &Path, poses: &Path) -> f64 {
    ok(&["eval", "--input", s(graph), "--poses", s(poses)]).trim().parse().unwrap()
}

fn report(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn truth_has_zero_cost() {
    let dir = tempfile::tempdir().unwrap();
    let (g, t) = gen(dir.path(), "3");
    let out = ok(&["eval", "--input", s(&g), "--poses", s(&t)]);
    // 12 significant digits in scientific notation
    let mantissa = out.trim().split('e').next().unwrap();
    assert_eq!(mantissa.trim_start_matches('-').len(), 13, "{out}");
    assert!(out.trim().parse::<f64>().unwrap() <= 1e-9);
}

#[test]
fn solve_then_eval_matches_report() {
    let dir = tempfile::tempdir().unwrap();
    let (g, _) = gen(dir.path(), "4");
    let noisy = p(dir.path(), "noisy.g2o");
    ok(&["perturb", "--input", s(&g), "--rot-sigma-deg", "20", "--trans-sigma", "0.05", "--seed", "4", "--output", s(&noisy)]);
    for method in ["chordal", "alg1", "alg2"] {
        let (poses, rep) = (p(dir.path(), "poses.g2o"), p(dir.path(), "report.json"));
        ok(&["solve", "--input", s(&noisy), "--method", method, "--output", s(&poses), "--report", s(&rep)]);
        let r = report(&rep);
        assert_eq!(r["method"], method);
        let final_cost = r["final_cost"].as_f64().unwrap();
        if method != "chordal" {
            let history = r["cost_history"].as_array().unwrap();
            assert_eq!(history.last().unwrap().as_f64().unwrap(), final_cost);
        }
        let evaluated = eval(&noisy, &poses);
        assert!((evaluated - final_cost).abs() <= 1e-9 * final_cost.max(1.0), "{method}: {evaluated} vs {final_cost}");
    }
}

#[test]
fn joint_solve_beats_chordal_at_high_noise() {
    let dir = tempfile::tempdir().unwrap();
    let (g, _) = gen(dir.path(), "5");
    let noisy = p(dir.path(), "noisy.g2o");
    ok(&["perturb", "--input", s(&g), "--rot-sigma-deg", "50", "--seed", "5", "--output", s(&noisy)]);
    let mut costs = Vec::new();
    for method in ["chordal", "alg2"] {
        let (poses, rep) = (p(dir.path(), &format!("{method}.g2o")), p(dir.path(), "r.json"));
        ok(&["solve", "--input", s(&noisy), "--method", method, "--output", s(&poses), "--report", s(&rep)]);
        costs.push(eval(&noisy, &poses));
    }
    assert!(costs[1] < costs[0], "{costs:?}");
}

#[test]
fn reports_are_reproducible_apart_from_timing() {
    let dir = tempfile::tempdir().unwrap();
    let (g, _) = gen(dir.path(), "6");
    let noisy = p(dir.path(), "noisy.g2o");
    ok(&["perturb", "--input", s(&g), "--rot-sigma-deg", "15", "--seed", "6", "--output", s(&noisy)]);
    let mut reports = Vec::new();
    let mut poses = Vec::new();
    for k in 0..2 {
        let (out, rep) = (p(dir.path(), &format!("p{k}.g2o")), p(dir.path(), &format!("r{k}.json")));
        ok(&["solve", "--input", s(&noisy), "--method", "alg2", "--output", s(&out), "--report", s(&rep)]);
        let mut r = report(&rep);
        r["time_init_s"] = Value::Null;
        r["time_solve_s"] = Value::Null;
        reports.push(r);
        poses.push(std::fs::read(&out).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
    assert_eq!(poses[0], poses[1]);
    let keys = [
        "method", "iterations", "termination", "max_delta_history", "cost_history", "clamp_count", "time_init_s",
        "time_solve_s",
    ];
    for key in keys {
        assert!(reports[0].get(key).is_some(), "{key}");
    }
}

#[test]
fn analyze_prints_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let (g, t) = gen(dir.path(), "7");
    let v: Value = serde_json::from_str(&ok(&["analyze", "--input", s(&g)])).unwrap();
    assert_eq!(v["m"], 33);
    assert_eq!(v["n"], 17);
    assert_eq!(v["connected"], true);
    assert!(v["a_m"].as_f64().unwrap() > 0.0);
    assert!(v["e_m"].is_null());
    let noisy = p(dir.path(), "noisy.g2o");
    ok(&["perturb", "--input", s(&g), "--rot-sigma-deg", "5", "--seed", "7", "--output", s(&noisy)]);
    let v: Value = serde_json::from_str(&ok(&["analyze", "--input", s(&noisy), "--truth", s(&t)])).unwrap();
    let (a, c, e) = (v["a_m"].as_f64().unwrap(), v["c_m"].as_f64().unwrap(), v["e_m"].as_f64().unwrap());
    assert!(e > 0.0);
    assert!((v["bound"].as_f64().unwrap() - a * (c + e)).abs() <= 1e-15);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&["solve", "--bogus"]).status.code(), Some(1));
    assert_eq!(run(&[]).status.code(), Some(1));
    let missing = p(dir.path(), "missing.g2o");
    let out = p(dir.path(), "o.g2o");
    let rep = p(dir.path(), "r.json");
    let code = |args: &[&str]| run(args).status.code();
    assert_eq!(code(&["solve", "--input", s(&missing), "--method", "alg1", "--output", s(&out), "--report", s(&rep)]), Some(2));
    let bad = p(dir.path(), "bad.g2o");
    std::fs::write(&bad, "EDGE_SE3:QUAT 0 1 x\n").unwrap();
    assert_eq!(code(&["eval", "--input", s(&bad), "--poses", s(&bad)]), Some(2));
    let disconnected = p(dir.path(), "disc.g2o");
    std::fs::write(
        &disconnected,
        "VERTEX_SE3:QUAT 0 0 0 0 0 0 0 1\nVERTEX_SE3:QUAT 1 0 0 0 0 0 0 1\nVERTEX_SE3:QUAT 2 0 0 0 0 0 0 1\n\
         EDGE_SE3:QUAT 0 1 1 0 0 0 0 0 1 1 0 0 0 0 0 1 0 0 0 0 1 0 0 0 1 0 0 1 0 1\n",
    )
    .unwrap();
    assert_eq!(code(&["analyze", "--input", s(&disconnected)]), Some(2));
    let (g, _) = gen(dir.path(), "1");
    assert_eq!(
        code(&["solve", "--input", s(&g), "--method", "alg1", "--max-iters", "0", "--output", s(&out), "--report", s(&rep)]),
        Some(2)
    );
}
