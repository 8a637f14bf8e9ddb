use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use turnpike_cli::{config, pipeline};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn turnpike(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_turnpike"))
        .args(args)
        .current_dir(cwd)
        .env_remove("TURNPIKE_OUT")
        .output()
        .expect("spawn turnpike")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("config.json");
    std::fs::write(&p, body).unwrap();
    p
}

/// Header plus rows of a trajectory CSV, read without the crate's own types.
fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(str::to_string).collect();
    let rows = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    (header, rows)
}

#[test]
fn fig2_run_is_certified_and_its_csv_is_consistent() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("fig2.json");
    let out = turnpike(&["run", cfg.to_str().unwrap(), "--out-dir", "art"], tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let dir = tmp.path().join("art");
    for name in ["certificate.json", "distance.svg", "trajectory_T5.csv", "trajectory_T20.csv"] {
        assert!(dir.join(name).is_file(), "{name} missing");
    }
    let cert: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("certificate.json")).unwrap()).unwrap();
    assert_eq!(cert["verdict"], "Certified");

    let (header, rows) = read_csv(&dir.join("trajectory_T20.csv"));
    assert_eq!(header, ["t", "x1", "x2", "p1", "p2", "u1", "dist_to_steady", "hamiltonian"]);
    let first = &rows[0];
    let last = rows.last().unwrap();
    assert!((first[1] - 1.0).abs() < 1e-12 && (first[2] - 0.2).abs() < 1e-12);
    assert!((last[0] - 20.0).abs() < 1e-12);
    assert!(last[3].abs() < 1e-8 && last[4].abs() < 1e-8, "p(T) = ({}, {})", last[3], last[4]);
    // u = −gᵀp with g = (0, 1).
    assert!(rows.iter().all(|r| (r[5] + r[4]).abs() < 1e-12));
    let h0 = first[7];
    assert!(rows.iter().all(|r| (r[7] - h0).abs() < 1e-6 * (1.0 + h0.abs())));
    // Hamiltonian recomputed from the columns: pᵀf − ½|gᵀp|² + ½|x − z|².
    for r in rows.iter().step_by(97) {
        let (x1, x2, p1, p2) = (r[1], r[2], r[3], r[4]);
        let h = p1 * (-x1 + x1 * x1 * x2) - 0.5 * p2 * p2 + 0.5 * ((x1 - 1.0).powi(2) + (x2 + 2.0).powi(2));
        assert!((h - r[7]).abs() < 1e-9 * (1.0 + h.abs()));
    }
    // Central differences of the state columns follow ẋ₁ = −x₁ + x₁²x₂, ẋ₂ = u.
    for w in rows.windows(3).step_by(50) {
        let dt = w[2][0] - w[0][0];
        let (x1, x2, u) = (w[1][1], w[1][2], w[1][5]);
        assert!(((w[2][1] - w[0][1]) / dt - (-x1 + x1 * x1 * x2)).abs() < 1e-3);
        assert!(((w[2][2] - w[0][2]) / dt - u).abs() < 1e-3);
    }
}

#[test]
fn inconclusive_run_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("fig5.json");
    let out = turnpike(&["run", cfg.to_str().unwrap(), "--out-dir", "art"], tmp.path());
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    let cert: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(tmp.path().join("art/certificate.json")).unwrap()).unwrap();
    assert_eq!(cert["verdict"], "Inconclusive");
    assert_eq!(cert["control_residence"]["bounded"], true);
}

#[test]
fn two_horizons_give_an_inconclusive_note() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{"version": 1, "problem": "ocp1", "system": "byrnes", "z": [1, -2], "x0": [1, 0.2],
            "horizons": [5, 10], "sop": {"seeds": [[0, -2]]}}"#,
    );
    let out = turnpike(&["run", cfg.to_str().unwrap(), "--out-dir", "art"], tmp.path());
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    let cert: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(tmp.path().join("art/certificate.json")).unwrap()).unwrap();
    assert_eq!(cert["verdict"], "Inconclusive");
    assert!(cert["certify_note"].as_str().is_some_and(|s| s.contains('3')), "{cert}");
}

#[test]
fn xf_on_a_tracking_problem_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{"version": 1, "problem": "ocp1", "system": "byrnes", "z": [1, -2], "xf": [0, 0], "x0": [1, 0.2], "horizons": [5]}"#,
    );
    let out = turnpike(&["validate", cfg.to_str().unwrap()], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("`xf` is only valid for problem \"ocp2\""), "{}", stderr(&out));
}

#[test]
fn unknown_fields_and_versions_are_schema_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{"version": 1, "problem": "ocp1", "system": "byrnes", "z": [1, -2], "x0": [1, 0.2], "horizons": [5], "horizon": 3}"#,
    );
    let out = turnpike(&["validate", cfg.to_str().unwrap()], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("schema") && stderr(&out).contains("horizon"), "{}", stderr(&out));

    let cfg = write_config(tmp.path(), r#"{"version": 9, "problem": "ocp1", "system": "byrnes", "z": [1, -2], "x0": [1, 0.2], "horizons": [5]}"#);
    let out = turnpike(&["validate", cfg.to_str().unwrap()], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("version 9"), "{}", stderr(&out));
}

#[test]
fn unknown_system_lists_the_registry() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), r#"{"version": 1, "problem": "ocp1", "system": "pendulum", "z": [0], "x0": [1], "horizons": [5]}"#);
    let out = turnpike(&["validate", cfg.to_str().unwrap()], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.contains("pendulum") && err.contains("byrnes, scalar_cubic, lqr"), "{err}");
}

#[test]
fn expression_errors_carry_an_offset() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{"version": 1, "problem": "ocp1", "system": {"expr": {"n": 1, "m": 1, "f": ["x1 +"], "g": [["1"]]}},
            "c": [[1]], "z": [0], "x0": [1], "horizons": [5]}"#,
    );
    let out = turnpike(&["validate", cfg.to_str().unwrap()], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains('4'), "{}", stderr(&out));
}

#[test]
fn dsl_byrnes_matches_the_builtin() {
    let builtin = config::load(&configs().join("fig2.json")).unwrap();
    let dsl = config::load(&configs().join("byrnes_dsl.json")).unwrap();
    let (_, oa) = pipeline::select_optimum(&builtin).unwrap();
    let (_, ob) = pipeline::select_optimum(&dsl).unwrap();
    assert!((oa.point() - ob.point()).amax() < 1e-12);
    let ra = pipeline::solve_horizons(&builtin, &oa, 2).unwrap();
    let rb = pipeline::solve_horizons(&dsl, &ob, 2).unwrap();
    for (x, y) in ra.iter().zip(&rb) {
        let gap = (&x.solution.p0 - &y.solution.p0).amax();
        assert!(gap < 1e-9, "T = {}: p0 differs by {gap:e}", x.solution.horizon);
    }
}

#[test]
fn out_dir_precedence() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("cubic_portrait.json");
    let bin = env!("CARGO_BIN_EXE_turnpike");
    let run = |extra: &[&str], env: Option<&str>| {
        let mut c = Command::new(bin);
        c.args(["sop", cfg.to_str().unwrap()]).args(extra).current_dir(tmp.path()).env_remove("TURNPIKE_OUT");
        if let Some(e) = env {
            c.env("TURNPIKE_OUT", e);
        }
        let o = c.output().unwrap();
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    };
    run(&[], None);
    assert!(tmp.path().join("out/portrait/sop.json").is_file(), "config out_dir");
    run(&[], Some("from_env"));
    assert!(tmp.path().join("from_env/sop.json").is_file(), "env beats config");
    run(&["--out-dir", "from_flag"], Some("from_env2"));
    assert!(tmp.path().join("from_flag/sop.json").is_file(), "flag beats env");
    assert!(!tmp.path().join("from_env2").exists());
}

#[test]
fn sop_verb_finds_the_three_cubic_equilibria() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("cubic_portrait.json");
    let out = turnpike(&["sop", cfg.to_str().unwrap(), "--out-dir", "art"], tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let optima = doc["optima"].as_array().unwrap();
    assert_eq!(optima.len(), 3);
    assert!(tmp.path().join("art/sop.json").is_file());
}

#[test]
fn portrait_verb_writes_branches() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("cubic_portrait.json");
    let out = turnpike(&["portrait", cfg.to_str().unwrap(), "--out-dir", "art"], tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = std::fs::read_to_string(tmp.path().join("art/portrait.csv")).unwrap();
    assert!(text.lines().count() > 100);
    assert!(std::fs::read_to_string(tmp.path().join("art/portrait.svg")).unwrap().starts_with("<svg"));

    let fig2 = configs().join("fig2.json");
    let out = turnpike(&["portrait", fig2.to_str().unwrap(), "--out-dir", "art2"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("n = 1"));
}

#[test]
fn riccati_verb() {
    let tmp = tempfile::tempdir().unwrap();
    let out = turnpike(&["riccati", "--A", "0", "--B", "1", "--C", "1"], tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    // a = 0, r = q = 1: P = 1, A_c = −1, L = −½.
    assert!((doc["P"][0][0].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert!((doc["closed_loop"][0][0].as_f64().unwrap() + 1.0).abs() < 1e-12);
    assert!((doc["L"][0][0].as_f64().unwrap() + 0.5).abs() < 1e-12);
    assert_eq!(doc["closed_loop_hurwitz"], true);

    let out = turnpike(&["riccati", "--A", "1 2; 3", "--B", "1", "--C", "1"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("rectangular"));
}
