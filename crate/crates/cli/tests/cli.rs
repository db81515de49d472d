use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use equilibra::equilibria::{verify, Parameter, REProblem};
use equilibra::forcelaw::ForceLaw;
use equilibra::geometry::{planar_generator, validate_generator, SpaceForm};
use equilibra::io::{read_family_csv, FAMILY_COLUMNS};
use nalgebra::DVector;
use serde_json::Value;
use tempfile::TempDir;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_equilibra"))
        .args(args)
        .output()
        .expect("binary runs")
}

/// Run `command` on a shipped config; returns exit code and output dir.
fn shipped(command: &str, name: &str) -> (i32, TempDir) {
    let out = TempDir::new().unwrap();
    let cfg = configs().join(format!("{name}.json"));
    let o = run(&[command, "--config", cfg.to_str().unwrap(), "--out", out.path().to_str().unwrap()]);
    (o.status.code().unwrap(), out)
}

/// Run `command` on an inline config.
fn inline(command: &str, config: &str) -> (i32, TempDir) {
    let out = TempDir::new().unwrap();
    let cfg = out.path().join("config.json");
    fs::write(&cfg, config).unwrap();
    let o = run(&[command, "--config", cfg.to_str().unwrap(), "--out", out.path().to_str().unwrap()]);
    (o.status.code().unwrap(), out)
}

fn report(dir: &TempDir, command: &str) -> Value {
    let text = fs::read_to_string(dir.path().join(format!("{command}_report.json"))).unwrap();
    serde_json::from_str(&text).unwrap()
}

fn rows(v: &Value) -> Vec<Vec<f64>> {
    v.as_array()
        .unwrap()
        .iter()
        .map(|r| r.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect())
        .collect()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

// ---------------------------------------------------------------- usage

#[test]
fn help_exits_zero_and_bad_usage_exits_one() {
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&["find"]).status.code(), Some(1));
    assert_eq!(run(&["frobnicate", "--config", "x.json"]).status.code(), Some(1));
    assert_eq!(run(&["find", "--config", "/nonexistent/config.json"]).status.code(), Some(1));
}

#[test]
fn unknown_keys_are_rejected() {
    let (code, _) = inline("validate-law", r#"{ "law": { "kind": "newtonian" }, "lawz": 1 }"#);
    assert_eq!(code, 1);
    let (code, _) = inline("validate-law", r#"{ "law": { "kind": "newtonian", "alpha": 3 } }"#);
    assert_eq!(code, 1);
    let (code, _) = inline(
        "find",
        r#"{ "space": { "kind": "flat", "k": 2 }, "law": { "kind": "newtonian" }, "masses": [1, 1],
             "seed": { "name": "two_body" }, "solver": { "tol": 1e-12, "tolerance": 1 } }"#,
    );
    assert_eq!(code, 1);
}

#[test]
fn zero_threads_is_a_usage_error() {
    let cfg = configs().join("validate_newtonian.json");
    let o = run(&["validate-law", "--config", cfg.to_str().unwrap(), "--threads", "0"]);
    assert_eq!(o.status.code(), Some(1));
}

// ---------------------------------------------------------------- validate-law

#[test]
fn validate_law_outcomes() {
    let (code, dir) = shipped("validate-law", "validate_newtonian");
    assert_eq!(code, 0);
    assert_eq!(report(&dir, "validate_law")["passed"], true);

    let (code, dir) = shipped("validate-law", "validate_sin_inverse");
    assert_eq!(code, 2);
    assert_eq!(report(&dir, "validate_law")["error"]["kind"], "AdmissibilityFailure");

    let (code, _) = inline("validate-law", r#"{ "space": { "kind": "flat", "k": 2 } }"#);
    assert_eq!(code, 1);
}

// ---------------------------------------------------------------- find

#[test]
fn find_lagrange_is_equilateral_with_the_closed_form_size() {
    let (code, dir) = shipped("find", "find_lagrange");
    assert_eq!(code, 0);
    let sol: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("solution.json")).unwrap()).unwrap();
    let q = rows(&sol["positions"]);
    let sides = [dist(&q[0], &q[1]), dist(&q[1], &q[2]), dist(&q[2], &q[0])];
    // omega^2 = M / d^3 with M = 3, omega = 1
    let d = 3f64.cbrt();
    for s in sides {
        assert!((s - d).abs() < 1e-8, "side {s}, expected {d}");
    }
}

#[test]
fn find_reports_collisions() {
    let (code, dir) = shipped("find", "find_collision");
    assert_eq!(code, 2);
    let r = report(&dir, "find");
    assert_eq!(r["status"], "failed");
    assert_eq!(r["error"]["kind"], "CollisionSingularity");
    assert!(!dir.path().join("solution.json").exists());
}

/// Independent check on S^2: for rotation about the polar axis with speed w,
/// each body satisfies `F_i = w^2 (r^2 q_i - (x, y, 0))`, where
/// `F_i = sum_j m_j (q_j - c q_i) / (1 - c^2)^{3/2}` and `c = q_i . q_j`.
#[test]
fn find_sphere_lagrange_satisfies_the_latitude_balance() {
    let (code, dir) = shipped("find", "find_sphere_lagrange");
    assert_eq!(code, 0);
    let r = report(&dir, "find");
    assert!(r["solution"]["residual_norm"].as_f64().unwrap() < 1e-10);
    let w = r["omega"].as_f64().unwrap();
    let q: Vec<DVector<f64>> = rows(&r["solution"]["positions"]).into_iter().map(DVector::from_vec).collect();
    for (i, qi) in q.iter().enumerate() {
        assert!((qi.norm() - 1.0).abs() < 1e-12);
        let mut f = DVector::zeros(3);
        for (j, qj) in q.iter().enumerate() {
            if i != j {
                let c = qi.dot(qj);
                f += (qj - qi * c) / (1.0 - c * c).powf(1.5);
            }
        }
        let r2 = qi[0] * qi[0] + qi[1] * qi[1];
        let rhs = (qi * r2 - DVector::from_vec(vec![qi[0], qi[1], 0.0])) * (w * w);
        assert!((f - rhs).norm() < 1e-9);
    }
    let sides = [(&q[0] - &q[1]).norm(), (&q[1] - &q[2]).norm(), (&q[2] - &q[0]).norm()];
    assert!((sides[0] - sides[1]).abs() < 1e-9 && (sides[1] - sides[2]).abs() < 1e-9);
}

// ---------------------------------------------------------------- sweep

#[test]
fn sweep_two_body_matches_the_closed_form_rowwise() {
    let (code, dir) = shipped("sweep", "sweep_two_body_omega");
    assert_eq!(code, 0);
    let text = fs::read_to_string(dir.path().join("family.csv")).unwrap();
    assert_eq!(text.lines().next().unwrap(), FAMILY_COLUMNS.join(","));
    let steps = read_family_csv(text.as_bytes()).unwrap();
    assert_eq!(steps.len(), 20);
    for s in &steps {
        let d = (2.0 / (s.param_value * s.param_value)).cbrt();
        assert!((s.min_separation - d).abs() < 1e-8, "omega {}: {} vs {d}", s.param_value, s.min_separation);
    }
    let certs: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("certificates.json")).unwrap()).unwrap();
    let c = certs["boundedness"]["certificate"]["big_c_hat"].as_f64().unwrap();
    assert!((c - 1.0).abs() < 1e-6);
    let sep = certs["separation"]["certificate"]["c_hat"].as_f64().unwrap();
    assert!((sep - 0.5f64.cbrt()).abs() < 1e-8);
}

/// Write, re-read and re-verify: the CSV residuals and the positions in the
/// family JSON give the same RE classification.
#[test]
fn sweep_outputs_round_trip() {
    let (code, dir) = shipped("sweep", "sweep_two_body_omega");
    assert_eq!(code, 0);
    let steps = read_family_csv(fs::File::open(dir.path().join("family.csv")).unwrap()).unwrap();
    let fam: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("family.json")).unwrap()).unwrap();
    let gen = validate_generator(planar_generator(2, 1.0), SpaceForm::flat(2).unwrap()).unwrap();
    let base = REProblem::new(vec![1.0, 1.0], Some(ForceLaw::newtonian()), gen).unwrap();
    let tol = 1e-12;
    for (s, m) in steps.iter().zip(fam["members"].as_array().unwrap()) {
        let problem = Parameter::Omega.apply(&base, s.param_value).unwrap();
        let q: Vec<DVector<f64>> = rows(&m["positions"]).into_iter().map(DVector::from_vec).collect();
        let check = verify(&q, &problem, tol);
        assert_eq!(check.is_re, s.residual_norm <= tol);
        assert!(check.is_re);
    }
}

#[test]
fn sweep_refuses_boundedness_without_the_hypothesis() {
    let (code, dir) = shipped("sweep", "sweep_weak_law");
    assert_eq!(code, 2);
    let certs: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("certificates.json")).unwrap()).unwrap();
    assert_eq!(certs["boundedness"]["issued"], false);
    assert_eq!(certs["boundedness"]["reason"], "HypothesisNotMet");
    assert_eq!(report(&dir, "sweep")["error"]["kind"], "HypothesisNotMet");
}

#[test]
fn single_point_grid_gives_one_row() {
    let (code, dir) = inline(
        "sweep",
        r#"{ "space": { "kind": "flat", "k": 2 }, "law": { "kind": "newtonian" }, "masses": [1, 1],
             "seed": { "name": "two_body" },
             "sweep": { "parameter": { "kind": "omega" }, "grid": [1.0] } }"#,
    );
    assert_eq!(code, 0);
    let text = fs::read_to_string(dir.path().join("family.csv")).unwrap();
    assert_eq!(text.lines().count(), 2);
}

#[test]
fn lost_branch_still_writes_the_partial_family() {
    let (code, dir) = inline(
        "sweep",
        r#"{ "space": { "kind": "flat", "k": 2 }, "law": { "kind": "newtonian" }, "masses": [1, 1],
             "seed": { "name": "two_body" },
             "sweep": { "parameter": { "kind": "omega" }, "grid": [0.5, 1.0, 1.5], "trust_radius": 1e-6 } }"#,
    );
    assert_eq!(code, 2);
    assert_eq!(report(&dir, "sweep")["error"]["kind"], "BranchLost");
    let steps = read_family_csv(fs::File::open(dir.path().join("family.csv")).unwrap()).unwrap();
    assert_eq!(steps.len(), 1);
}

// ---------------------------------------------------------------- certify

#[test]
fn certify_flat_divergence_default_path() {
    let (code, dir) = shipped("certify", "certify_divergence_flat");
    assert_eq!(code, 0);
    let slope = report(&dir, "certify")["result"]["slope"].as_f64().unwrap();
    assert!((slope + 3.0).abs() <= 0.05);
    let csv = fs::read_to_string(dir.path().join("probe.csv")).unwrap();
    assert!(csv.starts_with("s,required_bound,remainder,triangle_ratio"));
}

#[test]
fn certify_identity_on_the_sphere() {
    let (code, dir) = shipped("certify", "certify_identity_sphere");
    assert_eq!(code, 0);
    let r = report(&dir, "certify");
    assert!(r["result"]["max_relative_residual"].as_f64().unwrap() < 1e-12);
    assert_eq!(r["result"]["seed"], 2024);
}

#[test]
fn certify_identity_is_deterministic_across_thread_counts() {
    let cfg = configs().join("certify_identity_sphere.json");
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    for (dir, threads) in [(&a, "1"), (&b, "4")] {
        let o = run(&[
            "certify",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            dir.path().to_str().unwrap(),
            "--threads",
            threads,
        ]);
        assert_eq!(o.status.code(), Some(0));
    }
    let read = |d: &TempDir| fs::read(d.path().join("certify_report.json")).unwrap();
    assert_eq!(read(&a), read(&b));
}

#[test]
fn certify_cluster_divergence_on_both_curved_spaces() {
    for kind in ["sphere", "hyperboloid"] {
        let (code, dir) = inline(
            "certify",
            &format!(r#"{{ "space": {{ "kind": "{kind}", "k": 2 }}, "probe": {{ "kind": "cluster_divergence" }} }}"#),
        );
        assert_eq!(code, 0, "{kind}");
        let r = report(&dir, "certify");
        assert!((r["result"]["rhs_slope"].as_f64().unwrap() + 1.0).abs() <= 0.1);
    }
}

#[test]
fn certify_rejects_antipodal_paths() {
    let (code, dir) = shipped("certify", "certify_cluster_antipodal");
    assert_eq!(code, 2);
    assert_eq!(report(&dir, "certify")["error"]["kind"], "AntipodalGuardViolation");
}

// ---------------------------------------------------------------- simulate

#[test]
fn simulate_two_body_stays_rigid() {
    let (code, dir) = shipped("simulate", "simulate_two_body");
    assert_eq!(code, 0);
    let r = report(&dir, "simulate");
    assert!(r["rigidity"]["drift"].as_f64().unwrap() < 1e-6);
    let header = fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    assert!(header.starts_with("t,body,q0,q1,v0,v1"));
}

#[test]
fn simulate_detects_a_pseudo_equilibrium() {
    let (code, dir) = shipped("simulate", "simulate_pseudo_re");
    assert_eq!(code, 2);
    let r = report(&dir, "simulate");
    assert!(r["rigidity"]["drift"].as_f64().unwrap() > 1e-3);
    assert_eq!(r["error"]["kind"], "RigidityDrift");
}

#[test]
fn simulate_zero_horizon() {
    let (code, dir) = inline(
        "simulate",
        r#"{ "space": { "kind": "flat", "k": 2 }, "law": { "kind": "newtonian" }, "masses": [1, 1],
             "seed": { "name": "two_body" }, "simulate": { "horizon": 0 } }"#,
    );
    assert_eq!(code, 0);
    let r = report(&dir, "simulate");
    assert_eq!(r["rigidity"]["drift"].as_f64().unwrap(), 0.0);
    assert_eq!(r["rigidity"]["samples"], 1);
    let csv = fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2);
}

#[test]
fn simulate_from_a_saved_solution() {
    let sphere = |z0: f64, extra: &str| {
        format!(
            r#"{{ "space": {{ "kind": "sphere", "k": 2 }}, "masses": [1, 1, 1],
                  "seed": {{ "name": "sphere_lagrange", "z0": {z0} }}{extra} }}"#
        )
    };
    let (code, found) = inline("find", &sphere(0.3, ""));
    assert_eq!(code, 0);
    let solution = found.path().join("solution.json");
    let sim = format!(r#", "simulate": {{ "periods": 10, "solution": {:?} }}"#, solution.to_str().unwrap());

    // a z0 = 0.3 solution does not belong to the z0 = 0.7 problem
    let (code, dir) = inline("simulate", &sphere(0.7, &sim));
    assert_eq!(code, 2);
    let r = report(&dir, "simulate");
    assert_eq!(r["verify"]["is_re"], false);
    assert_eq!(r["error"]["kind"], "NotARelativeEquilibrium");

    let (code, dir) = inline("simulate", &sphere(0.3, &sim));
    assert_eq!(code, 0);
    let r = report(&dir, "simulate");
    assert_eq!(r["solved"], false);
    assert!(r["rigidity"]["drift"].as_f64().unwrap() < 1e-6);
    assert!(r["rigidity"]["constraint_drift"].as_f64().unwrap() < 1e-9);
}

#[test]
fn log_level_from_the_environment() {
    let cfg = configs().join("validate_newtonian.json");
    let out = TempDir::new().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_equilibra"))
        .args(["validate-law", "--config", cfg.to_str().unwrap(), "--out", out.path().to_str().unwrap()])
        .env("EQUILIBRA_LOG", "info")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stderr).contains("admissibility"));
}
