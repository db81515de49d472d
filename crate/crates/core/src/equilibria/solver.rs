use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{jacobian_raw, residual_raw, weighted_centroid_defect, REProblem};
use crate::error::{Error, Result};
use crate::scalar::Real;

const LAMBDA_FLOOR: f64 = 1e-12;
const LAMBDA_CEIL: f64 = 1e16;

/// Newton/Levenberg-Marquardt controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    /// Target Euclidean norm of the full residual; at least `1e-13`.
    pub tol: f64,
    pub max_iter: usize,
    /// Initial damping `lambda_0`. Zero selects undamped Gauss-Newton.
    pub damping: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 50,
            damping: 1e-3,
        }
    }
}

/// Which coordinate was held fixed to remove the rotational null direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gauge {
    pub body: usize,
    /// Index into the solver coordinates of that body: ambient coordinates,
    /// or coordinates in the generator's range basis when one is active.
    pub coordinate: usize,
    pub value: f64,
    pub range_basis: bool,
}

/// An accepted solution of the reduced system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct RESolution<T: Real> {
    #[serde(with = "crate::io::positions_serde")]
    pub positions: Vec<DVector<T>>,
    pub residual_norm: f64,
    pub newton_iterations: usize,
    pub gauge: Gauge,
    /// Ratio of extreme singular values of the gauge-fixed Jacobian.
    pub condition_estimate: f64,
    /// Flat only: `|A sum m_i Q_i|` at the solution.
    pub centroid_defect: Option<f64>,
}

struct Chart<T: Real> {
    basis: Option<DMatrix<T>>,
    n: usize,
    r: usize,
    pinned: usize,
    value: T,
}

impl<T: Real> Chart<T> {
    fn coords(&self, q: &DVector<T>) -> DVector<T> {
        match &self.basis {
            Some(v) => v.transpose() * q,
            None => q.clone(),
        }
    }

    fn position(&self, y: DVector<T>) -> DVector<T> {
        match &self.basis {
            Some(v) => v * y,
            None => y,
        }
    }

    fn reduce(&self, q: &[DVector<T>]) -> DVector<T> {
        let full: Vec<T> = q.iter().flat_map(|x| self.coords(x).iter().copied().collect::<Vec<_>>()).collect();
        let free: Vec<T> = full
            .iter()
            .enumerate()
            .filter(|(k, _)| *k != self.pinned)
            .map(|(_, v)| *v)
            .collect();
        DVector::from_vec(free)
    }

    fn expand(&self, x: &DVector<T>) -> Vec<DVector<T>> {
        let mut full = Vec::with_capacity(self.n * self.r);
        full.extend(x.iter().take(self.pinned).copied());
        full.push(self.value);
        full.extend(x.iter().skip(self.pinned).copied());
        (0..self.n)
            .map(|i| self.position(DVector::from_column_slice(&full[i * self.r..(i + 1) * self.r])))
            .collect()
    }

    /// Chain the ambient Jacobian through the chart and drop the pinned column.
    fn reduce_jacobian(&self, jac: &DMatrix<T>, d: usize) -> DMatrix<T> {
        let full = match &self.basis {
            None => jac.clone(),
            Some(v) => {
                let mut out = DMatrix::zeros(jac.nrows(), self.n * self.r);
                for i in 0..self.n {
                    let block = jac.columns(i * d, d) * v;
                    out.columns_mut(i * self.r, self.r).copy_from(&block);
                }
                out
            }
        };
        full.remove_column(self.pinned)
    }
}

/// Pin the coordinate of `Q_1` moved fastest by the rotation.
fn choose_gauge<T: Real>(problem: &REProblem<T>, q0: &[DVector<T>]) -> Result<Chart<T>> {
    let gen = problem.generator();
    let basis = gen.range_basis().cloned();
    let r = basis.as_ref().map_or(problem.space().ambient_dim(), |v| v.ncols());
    let mut chart = Chart {
        basis,
        n: q0.len(),
        r,
        pinned: 0,
        value: T::zero(),
    };
    let y1 = chart.coords(&q0[0]);
    let motion = chart.coords(&(gen.matrix() * &q0[0]));
    let (c, mag) = motion
        .iter()
        .enumerate()
        .map(|(c, v)| (c, v.abs()))
        .fold((0, T::zero()), |best, cur| if cur.1 > best.1 { cur } else { best });
    let scale = gen.matrix().amax() * (T::one() + q0[0].norm());
    if !(mag > T::lit(1e-10) * scale) {
        return Err(Error::GaugeConflict(
            "the generator fixes Q_1, so no coordinate of Q_1 carries the rotational phase".into(),
        ));
    }
    chart.pinned = c;
    chart.value = y1[c];
    Ok(chart)
}

fn check_inputs<T: Real>(problem: &REProblem<T>, q0: &[DVector<T>], opts: &SolverOptions) -> Result<()> {
    if !(opts.tol >= 1e-13) {
        return Err(Error::ToleranceUnachievable(format!("solver tol {} is below 1e-13", opts.tol)));
    }
    if !(opts.damping >= 0.0) || !opts.damping.is_finite() {
        return Err(Error::InvalidInput(format!("damping must be finite and >= 0, got {}", opts.damping)));
    }
    if q0.len() != problem.len() {
        return Err(Error::DimensionMismatch {
            expected: problem.len(),
            got: q0.len(),
        });
    }
    for x in q0 {
        problem.space().check_dim(x)?;
    }
    if let Some(v) = problem.generator().range_basis() {
        for (i, x) in q0.iter().enumerate() {
            let off = (x - v * (v.transpose() * x)).norm();
            if off > T::lit(1e-10) * (T::one() + x.norm()) {
                return Err(Error::InvalidInput(format!(
                    "initial position {i} leaves the generator's invariant subspace"
                )));
            }
        }
    }
    Ok(())
}

/// Solve the gauge-fixed reduced system from the guess `q0`.
pub fn newton_solve<T: Real>(problem: &REProblem<T>, q0: &[DVector<T>], opts: &SolverOptions) -> Result<RESolution<T>> {
    check_inputs(problem, q0, opts)?;
    // Surface singular guesses before anything else.
    let mut res = residual_raw(q0, problem)?;
    let chart = choose_gauge(problem, q0)?;
    let d = problem.space().ambient_dim();
    let tol = T::lit(opts.tol);
    let mut x = chart.reduce(q0);
    let mut q = chart.expand(&x);
    let mut lambda = T::lit(opts.damping);
    let undamped = opts.damping == 0.0;
    let mut iterations = 0usize;

    loop {
        let rn = res.norm();
        log::debug!("newton iter {iterations}: |R| = {:.3e}, lambda = {:.1e}", rn.as_f64(), lambda.as_f64());
        if rn <= tol {
            let jac = chart.reduce_jacobian(&jacobian_raw(&q, problem)?, d);
            return Ok(finish(problem, q, rn, iterations, &chart, &jac));
        }
        if iterations >= opts.max_iter || !rn.is_finite_real() {
            return Err(Error::NoConvergence {
                iterations,
                residual: rn.as_f64(),
            });
        }
        iterations += 1;
        let jac = chart.reduce_jacobian(&jacobian_raw(&q, problem)?, d);
        let jtj = jac.transpose() * &jac;
        let grad = jac.transpose() * &res;

        if undamped {
            let step = jtj.cholesky().ok_or(Error::SingularJacobian)?.solve(&grad);
            x -= step;
            q = chart.expand(&x);
            res = residual_raw(&q, problem)?;
            continue;
        }

        let diag_max = jtj.diagonal().amax();
        if !(diag_max > T::zero()) {
            return Err(Error::SingularJacobian);
        }
        let diag = jtj.diagonal().map(|v| v.max(T::lit(1e-12) * diag_max));
        loop {
            let mut m = jtj.clone();
            for k in 0..m.nrows() {
                m[(k, k)] += lambda * diag[k];
            }
            let accepted = match m.cholesky() {
                None => None,
                Some(ch) => {
                    let trial_x = &x - ch.solve(&grad);
                    let trial_q = chart.expand(&trial_x);
                    match residual_raw(&trial_q, problem) {
                        Ok(r) if r.norm() < rn => Some((trial_x, trial_q, r)),
                        _ => None,
                    }
                }
            };
            match accepted {
                Some((nx, nq, nr)) => {
                    x = nx;
                    q = nq;
                    res = nr;
                    lambda = (lambda / T::lit(10.0)).max(T::lit(LAMBDA_FLOOR));
                    break;
                }
                None => {
                    lambda *= T::lit(10.0);
                    if lambda > T::lit(LAMBDA_CEIL) {
                        // No descent left: either the Jacobian is rank deficient
                        // or the residual sits at its roundoff floor above tol.
                        let rank_deficient = jtj.clone().cholesky().is_none();
                        return Err(if rank_deficient {
                            Error::SingularJacobian
                        } else {
                            Error::NoConvergence {
                                iterations,
                                residual: rn.as_f64(),
                            }
                        });
                    }
                }
            }
        }
    }
}

fn finish<T: Real>(
    problem: &REProblem<T>,
    q: Vec<DVector<T>>,
    rn: T,
    iterations: usize,
    chart: &Chart<T>,
    jac: &DMatrix<T>,
) -> RESolution<T> {
    let sv = jac.clone().singular_values();
    let smax = sv.max();
    let smin = sv.min();
    let condition_estimate = if smin > T::zero() { (smax / smin).as_f64() } else { f64::INFINITY };
    let centroid_defect = problem.space().is_flat().then(|| {
        let defect = weighted_centroid_defect(&q, problem).as_f64();
        let scale = 1.0 + problem.generator().c2().as_f64() * q.iter().map(|x| x.norm().as_f64()).fold(0.0, f64::max);
        if defect > 1e-8 * scale {
            log::warn!("weighted centroid defect {defect:.3e} at an accepted solution");
        }
        defect
    });
    RESolution {
        positions: q,
        residual_norm: rn.as_f64(),
        newton_iterations: iterations,
        gauge: Gauge {
            body: 0,
            coordinate: chart.pinned,
            value: chart.value.as_f64(),
            range_basis: chart.basis.is_some(),
        },
        condition_estimate,
        centroid_defect,
    }
}
