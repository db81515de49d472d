use std::fmt;

use nalgebra::DVector;
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};

use super::{newton_solve, separation_stats, verify, RESolution, REProblem, SolverOptions};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Quantity varied along a family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Parameter {
    /// Mass of body `index` (zero based).
    Mass { index: usize },
    /// Dominant exponent of the force law.
    LawExponent,
    /// Angular speed: the generator is rescaled so that `sqrt(c2)` equals the value.
    Omega,
}

impl Parameter {
    pub fn name(&self) -> String {
        match self {
            Parameter::Mass { index } => format!("mass[{index}]"),
            Parameter::LawExponent => "law_exponent".into(),
            Parameter::Omega => "omega".into(),
        }
    }

    /// The problem with this parameter set to `value`.
    pub fn apply<T: Real>(&self, problem: &REProblem<T>, value: f64) -> Result<REProblem<T>> {
        let v = T::lit(value);
        match *self {
            Parameter::Mass { index } => {
                if index >= problem.len() {
                    return Err(Error::InvalidInput(format!(
                        "mass index {index} out of range for {} bodies",
                        problem.len()
                    )));
                }
                let mut m = problem.masses().to_vec();
                m[index] = v;
                problem.with_masses(m)
            }
            Parameter::LawExponent => {
                let law = problem
                    .law()
                    .ok_or_else(|| Error::InvalidInput("law exponent continuation needs a flat problem".into()))?;
                problem.with_law(law.with_leading_exponent(v)?)
            }
            Parameter::Omega => {
                if !(value > 0.0) {
                    return Err(Error::InvalidInput(format!("omega must be positive, got {value}")));
                }
                let gen = problem.generator();
                problem.with_generator(gen.scaled(v / gen.c2().sqrt()))
            }
        }
    }
}

/// Continuation controls.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContinuationOptions {
    pub solver: SolverOptions,
    /// Largest allowed move of any body between consecutive members.
    /// Defaults to `0.5 (1 + max |Q_i|)` of the previous member.
    pub trust_radius: Option<f64>,
}

/// Per-member diagnostics, one sweep CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyStep {
    pub step: usize,
    pub param_value: f64,
    pub residual_norm: f64,
    pub min_separation: f64,
    pub max_norm: f64,
    pub newton_iterations: usize,
}

/// A sampled branch of relative equilibria.
#[derive(Debug, Clone)]
pub struct ContinuationFamily<T: Real> {
    parameter: Parameter,
    grid: Vec<f64>,
    problem: REProblem<T>,
    opts: ContinuationOptions,
    members: Vec<RESolution<T>>,
    steps: Vec<FamilyStep>,
}

impl<T: Real> ContinuationFamily<T> {
    pub fn parameter(&self) -> Parameter {
        self.parameter
    }

    /// Requested grid; members cover a prefix of it.
    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn members(&self) -> &[RESolution<T>] {
        &self.members
    }

    pub fn steps(&self) -> &[FamilyStep] {
        &self.steps
    }

    pub fn options(&self) -> &ContinuationOptions {
        &self.opts
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Problem at member `index`.
    pub fn problem_at(&self, index: usize) -> Result<REProblem<T>> {
        self.parameter.apply(&self.problem, self.grid[index])
    }

    /// Problem at an arbitrary parameter value.
    pub fn problem_for(&self, value: f64) -> Result<REProblem<T>> {
        self.parameter.apply(&self.problem, value)
    }

    /// Re-trace the branch from the first member on a grid with `factor - 1`
    /// points inserted uniformly into each interval.
    pub fn refined(&self, factor: usize) -> Result<Self, ContinuationError<T>> {
        let seed = self.members.first().cloned().ok_or_else(|| ContinuationError {
            family: self.clone(),
            error: Error::InvalidInput("cannot refine an empty family".into()),
        })?;
        let factor = factor.max(1);
        let mut grid = Vec::with_capacity(self.grid.len() * factor);
        for w in self.grid.windows(2) {
            for k in 0..factor {
                grid.push(w[0] + (w[1] - w[0]) * k as f64 / factor as f64);
            }
        }
        grid.extend(self.grid.last().copied());
        continue_family(&self.problem, &seed, self.parameter, &grid, &self.opts)
    }
}

/// Member entry of the JSON form.
#[derive(Serialize)]
struct MemberView<'a> {
    #[serde(flatten)]
    step: &'a FamilyStep,
    positions: Vec<Vec<f64>>,
    condition_estimate: f64,
}

impl<T: Real> Serialize for ContinuationFamily<T> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct View<'a> {
            parameter: Parameter,
            parameter_name: String,
            grid: &'a [f64],
            members: Vec<MemberView<'a>>,
        }
        View {
            parameter: self.parameter,
            parameter_name: self.parameter.name(),
            grid: &self.grid,
            members: self
                .steps
                .iter()
                .zip(&self.members)
                .map(|(step, m)| MemberView {
                    step,
                    positions: m.positions.iter().map(|q| q.iter().map(|v| v.as_f64()).collect()).collect(),
                    condition_estimate: m.condition_estimate,
                })
                .collect(),
        }
        .serialize(s)
    }
}

/// A branch that could not be continued, with the members traced so far.
#[derive(Debug, Clone)]
pub struct ContinuationError<T: Real> {
    pub family: ContinuationFamily<T>,
    pub error: Error,
}

impl<T: Real> fmt::Display for ContinuationError<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({} members traced)", self.error, self.family.len())
    }
}

impl<T: Real> std::error::Error for ContinuationError<T> {}

fn step_record<T: Real>(step: usize, value: f64, sol: &RESolution<T>) -> FamilyStep {
    let (min_separation, max_norm) = separation_stats(&sol.positions);
    FamilyStep {
        step,
        param_value: value,
        residual_norm: sol.residual_norm,
        min_separation,
        max_norm,
        newton_iterations: sol.newton_iterations,
    }
}

fn max_move<T: Real>(a: &[DVector<T>], b: &[DVector<T>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm().as_f64()).fold(0.0, f64::max)
}

/// Trace a branch through `grid` by secant prediction and Newton correction.
///
/// `seed` must verify at `grid[0]`; it becomes the first member unchanged.
pub fn continue_family<T: Real>(
    problem: &REProblem<T>,
    seed: &RESolution<T>,
    parameter: Parameter,
    grid: &[f64],
    opts: &ContinuationOptions,
) -> Result<ContinuationFamily<T>, ContinuationError<T>> {
    let mut family = ContinuationFamily {
        parameter,
        grid: grid.to_vec(),
        problem: problem.clone(),
        opts: *opts,
        members: Vec::new(),
        steps: Vec::new(),
    };
    macro_rules! bail {
        ($e:expr) => {
            return Err(ContinuationError { family, error: $e })
        };
    }
    if grid.is_empty() {
        bail!(Error::InvalidInput("continuation grid is empty".into()));
    }
    let first = match parameter.apply(problem, grid[0]) {
        Ok(p) => p,
        Err(e) => bail!(e),
    };
    let seed_tol = (10.0 * opts.solver.tol).max(seed.residual_norm);
    let report = verify(&seed.positions, &first, seed_tol);
    if !report.is_re {
        bail!(Error::InvalidInput(format!(
            "seed does not verify at the first grid point (residual {:.3e})",
            report.residual_norm
        )));
    }
    family.steps.push(step_record(0, grid[0], seed));
    family.members.push(seed.clone());

    for (k, &value) in grid.iter().enumerate().skip(1) {
        let lost = |reason: String| Error::BranchLost { step: k, value, reason };
        let target = match parameter.apply(problem, value) {
            Ok(p) => p,
            Err(e) => bail!(lost(e.to_string())),
        };
        let prev = &family.members[k - 1].positions;
        let predictor: Vec<DVector<T>> = if k >= 2 && grid[k - 1] != grid[k - 2] {
            let older = &family.members[k - 2].positions;
            let t = T::lit((value - grid[k - 1]) / (grid[k - 1] - grid[k - 2]));
            prev.iter().zip(older).map(|(a, b)| a + (a - b) * t).collect()
        } else {
            prev.clone()
        };
        let sol = match newton_solve(&target, &predictor, &opts.solver) {
            Ok(s) => s,
            Err(e) => bail!(lost(e.to_string())),
        };
        let prev_norm = prev.iter().map(|q| q.norm().as_f64()).fold(0.0, f64::max);
        let trust = opts.trust_radius.unwrap_or(0.5 * (1.0 + prev_norm));
        let moved = max_move(&sol.positions, prev);
        if moved > trust {
            bail!(lost(format!("corrector moved {moved:.3e} beyond the trust radius {trust:.3e}")));
        }
        log::info!(
            "{} = {value}: |R| = {:.2e} after {} iterations",
            parameter.name(),
            sol.residual_norm,
            sol.newton_iterations
        );
        family.steps.push(step_record(k, value, &sol));
        family.members.push(sol);
    }
    Ok(family)
}
