//! The five subcommands. Each writes a `<command>_report.json` (also echoed
//! to stdout) plus its CSV series, then maps the outcome to an exit code.

use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use equilibra::certify::{
    boundedness_scan, cluster_identity_batch, collision_divergence_probe, curved_cluster_divergence, separation_scan,
    shrink_grid, ClusterPath, ShrinkPath, IDENTITY_TOL,
};
use equilibra::dynamics::rigidity_report;
use equilibra::equilibria::{continue_family, integrate_rigid, newton_solve, verify, ContinuationFamily, RESolution};
use equilibra::forcelaw::{admissibility_report, AdmissibilityOptions, ConditionOutcome};
use equilibra::geometry::{validate_generator, RotationGenerator};
use equilibra::io::{rows_of, write_family_csv, write_records_csv, write_trajectory_csv};
use log::info;
use nalgebra::DVector;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{ProbeConfig, RunConfig, ShrinkGrid, SimulateConfig};
use crate::{error_kind, CliError};

pub struct Context {
    pub cfg: RunConfig,
    pub out: PathBuf,
}

impl Context {
    fn create(&self, name: &str) -> Result<BufWriter<File>, CliError> {
        let path = self.out.join(name);
        File::create(&path)
            .map(BufWriter::new)
            .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
    }

    fn write_json<S: Serialize>(&self, name: &str, value: &S) -> Result<(), CliError> {
        serde_json::to_writer_pretty(self.create(name)?, value)
            .map_err(|e| CliError::Io(format!("cannot write {name}: {e}")))
    }

    fn csv<F>(&self, name: &str, write: F) -> Result<(), CliError>
    where
        F: FnOnce(BufWriter<File>) -> csv::Result<()>,
    {
        write(self.create(name)?).map_err(|e| CliError::Io(format!("cannot write {name}: {e}")))
    }

    /// Write the report, echo it, and turn a failure into the exit status.
    fn finish(&self, command: &str, mut body: Value, failure: Option<CliError>) -> Result<(), CliError> {
        let obj = body.as_object_mut().expect("report body is an object");
        obj.insert("command".into(), json!(command));
        obj.insert("status".into(), json!(if failure.is_none() { "ok" } else { "failed" }));
        if let Some(CliError::Math { kind, message }) = &failure {
            obj.insert("error".into(), json!({ "kind": kind, "message": message }));
        }
        self.write_json(&format!("{command}_report.json"), &body)?;
        println!("{}", serde_json::to_string(&body).unwrap_or_default());
        failure.map_or(Ok(()), Err)
    }
}

fn failed_conditions(conds: &[ConditionOutcome]) -> Option<CliError> {
    let bad: Vec<&str> = conds.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    (!bad.is_empty()).then(|| CliError::Math {
        kind: "ProbeAssertionFailed".into(),
        message: format!("failed: {}", bad.join(", ")),
    })
}

// ------------------------------------------------------------------ validate-law

pub fn validate_law(ctx: &Context) -> Result<(), CliError> {
    let law = ctx.cfg.law_spec()?.build::<f64>().map_err(CliError::config)?;
    let a = ctx.cfg.admissibility.unwrap_or_default();
    let opts = AdmissibilityOptions {
        delta: a.delta,
        x_max: a.x_max,
        grid_size: a.grid_size,
        ..Default::default()
    };
    let report = admissibility_report(&law, &opts).map_err(CliError::config)?;
    info!("admissibility of {}: passed = {}", report.law, report.passed());
    let failure = report.first_failure().map(|c| CliError::Math {
        kind: "AdmissibilityFailure".into(),
        message: format!("condition {} failed: {}", c.name, c.detail),
    });
    ctx.finish("validate_law", json!({ "passed": report.passed(), "admissibility": report }), failure)
}

// ------------------------------------------------------------------ find

pub fn find(ctx: &Context) -> Result<(), CliError> {
    let (problem, q0) = ctx.cfg.start(None)?;
    let start = json!({ "positions": rows_of(&q0), "masses": problem.masses() });
    match newton_solve(&problem, &q0, &ctx.cfg.solver) {
        Ok(sol) => {
            let check = verify(&sol.positions, &problem, ctx.cfg.solver.tol);
            ctx.write_json("solution.json", &sol)?;
            info!("converged in {} iterations", sol.newton_iterations);
            ctx.finish(
                "find",
                json!({
                    "start": start,
                    "omega": problem.generator().c2().sqrt(),
                    "solution": sol,
                    "verify": check,
                }),
                None,
            )
        }
        Err(e) => ctx.finish("find", json!({ "start": start }), Some(CliError::math(&e))),
    }
}

// ------------------------------------------------------------------ sweep

fn write_family(ctx: &Context, family: &ContinuationFamily<f64>) -> Result<(), CliError> {
    ctx.csv("family.csv", |w| write_family_csv(family.steps(), w))?;
    ctx.write_json("family.json", family)
}

pub fn sweep(ctx: &Context) -> Result<(), CliError> {
    let spec = ctx.cfg.sweep.as_ref().ok_or_else(|| CliError::Config("missing key 'sweep'".into()))?;
    let grid = spec.grid.values()?;
    let param = spec.parameter;
    let (problem, q0) = ctx.cfg.start(Some((param, grid[0])))?;
    let first = param.apply(&problem, grid[0]).map_err(CliError::config)?;
    let law = first.law().cloned();
    let opts = ctx.cfg.continuation();

    let seed = match newton_solve(&first, &q0, &opts.solver) {
        Ok(s) => s,
        Err(e) => {
            return ctx.finish(
                "sweep",
                json!({ "stage": "seed", "parameter": param.name() }),
                Some(CliError::math(&e)),
            )
        }
    };
    let family = match continue_family(&first, &seed, param, &grid, &opts) {
        Ok(f) => f,
        Err(e) => {
            write_family(ctx, &e.family)?;
            return ctx.finish(
                "sweep",
                json!({ "stage": "continuation", "parameter": param.name(), "members": e.family.len() }),
                Some(CliError::math(&e.error)),
            );
        }
    };
    write_family(ctx, &family)?;

    let mut failure = None;
    let separation = match separation_scan(&family) {
        Ok(c) => json!({ "issued": true, "certificate": c }),
        Err(e) => {
            let v = json!({ "issued": false, "reason": error_kind(&e), "message": e.to_string() });
            failure = Some(CliError::math(&e));
            v
        }
    };
    let boundedness = if spec.boundedness {
        let scan = match &law {
            Some(l) => boundedness_scan(&family, l),
            None => Err(equilibra::Error::HypothesisNotMet(
                "boundedness certificates apply to flat laws".into(),
            )),
        };
        match scan {
            Ok(c) => json!({ "issued": true, "certificate": c }),
            Err(e) => {
                let v = json!({ "issued": false, "reason": error_kind(&e), "message": e.to_string() });
                failure = failure.or(Some(CliError::math(&e)));
                v
            }
        }
    } else {
        Value::Null
    };
    ctx.write_json("certificates.json", &json!({ "separation": separation, "boundedness": boundedness }))?;
    ctx.finish(
        "sweep",
        json!({
            "parameter": param.name(),
            "members": family.len(),
            "separation": separation,
            "boundedness": boundedness,
        }),
        failure,
    )
}

// ------------------------------------------------------------------ certify

fn vector(v: &[f64], d: usize, what: &str) -> Result<DVector<f64>, CliError> {
    if v.len() != d {
        return Err(CliError::Config(format!("'{what}' must have length {d}")));
    }
    Ok(DVector::from_column_slice(v))
}

fn vectors(rows: &[Vec<f64>], d: usize, what: &str) -> Result<Vec<DVector<f64>>, CliError> {
    rows.iter().map(|r| vector(r, d, what)).collect()
}

fn s_grid(g: Option<ShrinkGrid>, default_min: f64) -> Vec<f64> {
    let g = g.unwrap_or(ShrinkGrid {
        s_max: 1e-1,
        s_min: default_min,
        per_decade: 10,
    });
    shrink_grid(g.s_max, g.s_min, g.per_decade)
}

fn generator(cfg: &RunConfig) -> Result<RotationGenerator<f64>, CliError> {
    validate_generator(cfg.generator_matrix()?, cfg.space()?).map_err(CliError::config)
}

pub fn certify(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    let probe = cfg.probe.as_ref().ok_or_else(|| CliError::Config("missing key 'probe'".into()))?;
    match probe {
        ProbeConfig::DivergenceFlat {
            grid,
            slope_window,
            center,
            direction,
            far,
        } => {
            let space = cfg.space()?;
            if !space.is_flat() {
                return Err(CliError::Config("divergence_flat needs a flat space".into()));
            }
            let law = cfg.law()?.expect("flat spaces carry a law");
            let d = space.ambient_dim();
            let n = match (&cfg.masses, far) {
                (Some(m), _) => m.len(),
                (None, Some(f)) => f.len() + 2,
                (None, None) => 3,
            };
            let mut path = ShrinkPath::default_for(d, n).map_err(CliError::config)?;
            if let Some(c) = center {
                path.center = vector(c, d, "center")?;
            }
            if let Some(u) = direction {
                path.direction = vector(u, d, "direction")?;
            }
            if let Some(f) = far {
                path.far = vectors(f, d, "far")?;
            }
            if path.far.len() + 2 != n {
                return Err(CliError::Config(format!("{n} masses need {} far positions", n - 2)));
            }
            let masses = cfg.masses.clone().unwrap_or_else(|| vec![1.0; n]);
            let grid = s_grid(*grid, 1e-4);
            match collision_divergence_probe(&masses, &generator(cfg)?, &law, &path, &grid) {
                Ok(r) => {
                    let conds = r.invariants(*slope_window);
                    ctx.csv("probe.csv", |w| write_records_csv(&r.rows, w))?;
                    ctx.finish(
                        "certify",
                        json!({ "probe": "divergence_flat", "masses": masses, "invariants": conds, "result": r }),
                        failed_conditions(&conds),
                    )
                }
                Err(e) => ctx.finish("certify", json!({ "probe": "divergence_flat" }), Some(CliError::math(&e))),
            }
        }
        ProbeConfig::ClusterIdentity {
            count,
            max_bodies,
            rng_seed,
        } => {
            let space = cfg.space()?;
            if space.is_flat() {
                return Err(CliError::Config("cluster_identity needs a curved space".into()));
            }
            match cluster_identity_batch(space, *count, *max_bodies, *rng_seed) {
                Ok(r) => {
                    let conds = vec![ConditionOutcome {
                        name: "identity".into(),
                        passed: r.max_relative_residual <= IDENTITY_TOL,
                        detail: format!(
                            "max relative residual {:.3e} (tolerance {IDENTITY_TOL:e})",
                            r.max_relative_residual
                        ),
                    }];
                    ctx.finish(
                        "certify",
                        json!({ "probe": "cluster_identity", "invariants": conds, "result": r }),
                        failed_conditions(&conds),
                    )
                }
                Err(e) => ctx.finish("certify", json!({ "probe": "cluster_identity" }), Some(CliError::math(&e))),
            }
        }
        ProbeConfig::ClusterDivergence {
            grid,
            cluster,
            epsilon,
            threshold,
            s_threshold,
            slope_window,
            anchor,
            direction,
            far,
        } => {
            let space = cfg.space()?;
            if space.is_flat() {
                return Err(CliError::Config("cluster_divergence needs a curved space".into()));
            }
            let d = space.ambient_dim();
            let n = match (&cfg.masses, far) {
                (Some(m), _) => m.len(),
                (None, Some(f)) => f.len() + 2,
                (None, None) => 3,
            };
            let mut path = ClusterPath::default_for(space, n).map_err(CliError::config)?;
            if let Some(p) = anchor {
                path.anchor = vector(p, d, "anchor")?;
            }
            if let Some(u) = direction {
                path.direction = vector(u, d, "direction")?;
            }
            if let Some(f) = far {
                path.far = vectors(f, d, "far")?;
            }
            if path.far.len() + 2 != n {
                return Err(CliError::Config(format!("{n} masses need {} far positions", n - 2)));
            }
            // heavy pair so that m1 m2 / s clears the default threshold
            let masses = cfg.masses.clone().unwrap_or_else(|| {
                let mut m = vec![1.0; n];
                m[0] = 4.0;
                m[1] = 4.0;
                m
            });
            let grid = s_grid(*grid, 1e-5);
            match curved_cluster_divergence(&masses, &generator(cfg)?, &path, cluster, &grid, *epsilon) {
                Ok(r) => {
                    let conds = r.invariants(*threshold, *s_threshold, *slope_window);
                    ctx.csv("probe.csv", |w| write_records_csv(&r.rows, w))?;
                    ctx.finish(
                        "certify",
                        json!({ "probe": "cluster_divergence", "masses": masses, "invariants": conds, "result": r }),
                        failed_conditions(&conds),
                    )
                }
                Err(e) => ctx.finish("certify", json!({ "probe": "cluster_divergence" }), Some(CliError::math(&e))),
            }
        }
    }
}

// ------------------------------------------------------------------ simulate

fn load_solution(path: &std::path::Path) -> Result<RESolution<f64>, CliError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

pub fn simulate(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    let sim = cfg.simulate.clone().unwrap_or(SimulateConfig {
        periods: None,
        horizon: None,
        drift_bound: 1e-6,
        constraint_bound: 1e-9,
        integrator: Default::default(),
        solution: None,
        integration_masses: None,
    });

    let (problem, positions, solved) = match &sim.solution {
        Some(path) => {
            let sol = load_solution(path)?;
            let problem = if cfg.seed.is_some() { cfg.start(None)?.0 } else { cfg.problem()? };
            (problem, sol.positions, false)
        }
        None => {
            let (problem, q0) = cfg.start(None)?;
            match newton_solve(&problem, &q0, &cfg.solver) {
                Ok(sol) => (problem, sol.positions, true),
                Err(e) => return ctx.finish("simulate", json!({ "stage": "solve" }), Some(CliError::math(&e))),
            }
        }
    };
    let check = verify(&positions, &problem, cfg.solver.tol);
    if !check.is_re {
        let failure = CliError::Math {
            kind: "NotARelativeEquilibrium".into(),
            message: format!("start positions have residual {:.3e}", check.residual_norm),
        };
        return ctx.finish("simulate", json!({ "solved": solved, "verify": check }), Some(failure));
    }

    let period = problem.generator().period();
    let t_end = match (sim.periods, sim.horizon) {
        (Some(_), Some(_)) => return Err(CliError::Config("give either 'periods' or 'horizon', not both".into())),
        (Some(p), None) => p * period,
        (None, Some(h)) => h,
        (None, None) => 10.0 * period,
    };
    if !(t_end >= 0.0 && t_end.is_finite()) {
        return Err(CliError::Config(format!("horizon must be finite and non-negative, got {t_end}")));
    }
    let integration = match &sim.integration_masses {
        Some(m) => problem.with_masses(m.clone()).map_err(CliError::config)?,
        None => problem.clone(),
    };

    let header = json!({
        "solved": solved,
        "verify": check,
        "period": period,
        "t_end": t_end,
        "masses": problem.masses(),
        "integration_masses": integration.masses(),
        "drift_bound": sim.drift_bound,
    });
    let traj = match integrate_rigid(&integration, &positions, t_end, &sim.integrator) {
        Ok(t) => t,
        Err(e) => return ctx.finish("simulate", header, Some(CliError::math(&e))),
    };
    ctx.csv("trajectory.csv", |w| write_trajectory_csv(&traj, w))?;

    let drift = rigidity_report(&traj);
    let curved = !problem.space().is_flat();
    let constraint = traj.max_constraint_drift();
    let mut failure = None;
    if !(drift <= sim.drift_bound) {
        failure = Some(CliError::Math {
            kind: "RigidityDrift".into(),
            message: format!("drift {drift:.3e} exceeds {:.1e}", sim.drift_bound),
        });
    } else if curved && !(constraint <= sim.constraint_bound) {
        failure = Some(CliError::Math {
            kind: "ConstraintDrift".into(),
            message: format!("constraint drift {constraint:.3e} exceeds {:.1e}", sim.constraint_bound),
        });
    }
    let rigidity = json!({
        "drift": drift,
        "drift_bound": sim.drift_bound,
        "constraint_drift": if curved { json!(constraint) } else { Value::Null },
        "samples": traj.len(),
        "diagnostics": traj.diagnostics(),
    });
    let mut body = header;
    body["rigidity"] = rigidity;
    ctx.finish("simulate", body, failure)
}
