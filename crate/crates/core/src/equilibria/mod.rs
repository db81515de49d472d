//! Reduced relative-equilibrium equations, a gauge-fixed damped Newton
//! solver and predictor-corrector continuation.
//!
//! Substituting `q_i = exp(tG) Q_i` into the equations of motion leaves an
//! algebraic system for the constant shape vectors `Q_i`.

mod continuation;
pub mod seeds;
mod solver;

pub use continuation::{
    continue_family, ContinuationError, ContinuationFamily, ContinuationOptions, FamilyStep, Parameter,
};
pub use solver::{newton_solve, Gauge, RESolution, SolverOptions};

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::dynamics::{integrate, Configuration, IntegratorOptions, PhaseState, Trajectory, SINGULARITY_GUARD};
use crate::error::{Error, Result};
use crate::forcelaw::ForceLaw;
use crate::geometry::{inner_unchecked, manifold_defect, RotationGenerator, SpaceForm};
use crate::scalar::Real;

/// Positions are accepted as on-manifold up to this defect.
const MANIFOLD_TOL: f64 = 1e-10;

/// Masses, interaction and generator defining one reduced system.
#[derive(Debug, Clone)]
pub struct REProblem<T: Real> {
    space: SpaceForm,
    masses: Vec<T>,
    law: Option<ForceLaw<T>>,
    gen: RotationGenerator<T>,
}

impl<T: Real> REProblem<T> {
    /// `law` must be present for flat spaces and absent for curved ones
    /// (the curved interaction is fixed).
    pub fn new(masses: Vec<T>, law: Option<ForceLaw<T>>, gen: RotationGenerator<T>) -> Result<Self> {
        let space = gen.space();
        if masses.len() < 2 {
            return Err(Error::InvalidInput(format!("need at least 2 bodies, got {}", masses.len())));
        }
        if let Some(m) = masses.iter().find(|m| !(**m > T::zero()) || !m.is_finite_real()) {
            return Err(Error::InvalidInput(format!("masses must be positive and finite, got {m}")));
        }
        match (space.is_flat(), law.is_some()) {
            (true, false) => return Err(Error::InvalidInput("flat problems need a force law".into())),
            (false, true) => {
                return Err(Error::InvalidInput(
                    "curved problems use the fixed curved interaction; omit the force law".into(),
                ))
            }
            _ => {}
        }
        Ok(Self {
            space,
            masses,
            law,
            gen,
        })
    }

    pub fn space(&self) -> SpaceForm {
        self.space
    }

    pub fn masses(&self) -> &[T] {
        &self.masses
    }

    pub fn law(&self) -> Option<&ForceLaw<T>> {
        self.law.as_ref()
    }

    pub fn generator(&self) -> &RotationGenerator<T> {
        &self.gen
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    pub fn with_masses(&self, masses: Vec<T>) -> Result<Self> {
        Self::new(masses, self.law.clone(), self.gen.clone())
    }

    pub fn with_law(&self, law: ForceLaw<T>) -> Result<Self> {
        Self::new(self.masses.clone(), Some(law), self.gen.clone())
    }

    pub fn with_generator(&self, gen: RotationGenerator<T>) -> Result<Self> {
        Self::new(self.masses.clone(), self.law.clone(), gen)
    }

    /// Number of residual rows: `n d`, plus `n` constraint rows when curved.
    pub fn residual_len(&self) -> usize {
        let n = self.len();
        let d = self.space.ambient_dim();
        if self.space.is_flat() {
            n * d
        } else {
            n * (d + 1)
        }
    }

    fn check_positions(&self, q: &[DVector<T>]) -> Result<()> {
        if q.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: q.len(),
            });
        }
        for x in q {
            self.space.check_dim(x)?;
        }
        Ok(())
    }
}

/// Flat reduced residual `R_i = A Q_i + sum_j m_j (Q_j - Q_i) f(|Q_j - Q_i|)`,
/// stacked over bodies.
pub fn residual_flat<T: Real>(q: &[DVector<T>], problem: &REProblem<T>) -> Result<DVector<T>> {
    if !problem.space.is_flat() {
        return Err(Error::InvalidInput("residual_flat needs a flat problem".into()));
    }
    problem.check_positions(q)?;
    flat_raw(q, problem)
}

/// Curved reduced residual with the `n` constraint rows `Q_i ⊙ Q_i - sigma`
/// appended after the `n (k+1)` force rows.
pub fn residual_curved<T: Real>(q: &[DVector<T>], problem: &REProblem<T>) -> Result<DVector<T>> {
    if problem.space.is_flat() {
        return Err(Error::InvalidInput("residual_curved needs a curved problem".into()));
    }
    problem.check_positions(q)?;
    for (i, x) in q.iter().enumerate() {
        let defect = manifold_defect(x, problem.space);
        if defect.as_f64() > MANIFOLD_TOL {
            return Err(Error::OffManifold {
                body: i,
                defect: defect.as_f64(),
            });
        }
    }
    curved_raw(q, problem)
}

/// Dispatches on the space.
pub fn residual<T: Real>(q: &[DVector<T>], problem: &REProblem<T>) -> Result<DVector<T>> {
    if problem.space.is_flat() {
        residual_flat(q, problem)
    } else {
        residual_curved(q, problem)
    }
}

/// Residual without the on-manifold precondition; used inside the solver
/// where iterates leave the manifold.
pub(crate) fn residual_raw<T: Real>(q: &[DVector<T>], problem: &REProblem<T>) -> Result<DVector<T>> {
    if problem.space.is_flat() {
        flat_raw(q, problem)
    } else {
        curved_raw(q, problem)
    }
}

fn flat_raw<T: Real>(q: &[DVector<T>], problem: &REProblem<T>) -> Result<DVector<T>> {
    let law = problem.law.as_ref().expect("flat problem has a law");
    let d = problem.space.ambient_dim();
    let acc = crate::dynamics::flat_accelerations(&problem.masses, q, law)?;
    let a = problem.gen.a_operator();
    let mut out = DVector::zeros(q.len() * d);
    for (i, (qi, ai)) in q.iter().zip(acc.iter()).enumerate() {
        let r = a * qi + ai;
        out.rows_mut(i * d, d).copy_from(&r);
    }
    Ok(out)
}

fn curved_raw<T: Real>(q: &[DVector<T>], problem: &REProblem<T>) -> Result<DVector<T>> {
    let space = problem.space;
    let sigma = space.sigma_real::<T>();
    let n = q.len();
    let d = space.ambient_dim();
    let g = problem.gen.matrix();
    let mut out = DVector::zeros(n * (d + 1));
    for i in 0..n {
        let mut r = crate::dynamics::curved_interaction(space, &problem.masses, q, i)?;
        let gq = g * &q[i];
        let ggq = g * &gq;
        let vv = inner_unchecked(&gq, &gq, space);
        r -= ggq;
        r.axpy(-sigma * vv, &q[i], T::one());
        out.rows_mut(i * d, d).copy_from(&r);
        out[n * d + i] = inner_unchecked(&q[i], &q[i], space) - sigma;
    }
    Ok(out)
}

/// Jacobian of the residual with respect to the stacked positions.
///
/// Flat problems use the analytic blocks; curved problems use central
/// differences with step `eps^(1/3) (1 + |Q|)`.
pub fn jacobian<T: Real>(q: &[DVector<T>], problem: &REProblem<T>) -> Result<DMatrix<T>> {
    problem.check_positions(q)?;
    jacobian_raw(q, problem)
}

pub(crate) fn jacobian_raw<T: Real>(q: &[DVector<T>], problem: &REProblem<T>) -> Result<DMatrix<T>> {
    if problem.space.is_flat() {
        flat_jacobian(q, problem)
    } else {
        fd_jacobian(q, problem)
    }
}

fn flat_jacobian<T: Real>(q: &[DVector<T>], problem: &REProblem<T>) -> Result<DMatrix<T>> {
    let law = problem.law.as_ref().expect("flat problem has a law");
    let n = q.len();
    let d = problem.space.ambient_dim();
    let guard = T::lit(SINGULARITY_GUARD);
    let mut jac = DMatrix::zeros(n * d, n * d);
    let a = problem.gen.a_operator();
    for i in 0..n {
        jac.view_mut((i * d, i * d), (d, d)).copy_from(a);
    }
    for i in 0..n {
        for j in i + 1..n {
            let u = &q[j] - &q[i];
            let r = u.norm();
            if r < guard {
                return Err(Error::CollisionSingularity {
                    i,
                    j,
                    distance: r.as_f64(),
                });
            }
            // K = f I + (f'/r) u u^T; dR_i/dQ_j = m_j K, dR_j/dQ_i = m_i K.
            let mut k = &u * u.transpose() * (law.derivative(r) / r);
            for c in 0..d {
                k[(c, c)] += law.f(r);
            }
            let (mi, mj) = (problem.masses[i], problem.masses[j]);
            let kj = &k * mj;
            let ki = &k * mi;
            jac.view_mut((i * d, j * d), (d, d)).copy_from(&kj);
            jac.view_mut((j * d, i * d), (d, d)).copy_from(&ki);
            let mut dii = jac.view_mut((i * d, i * d), (d, d));
            dii -= &kj;
            let mut djj = jac.view_mut((j * d, j * d), (d, d));
            djj -= &ki;
        }
    }
    Ok(jac)
}

/// Central-difference Jacobian of [`residual_raw`].
pub(crate) fn fd_jacobian<T: Real>(q: &[DVector<T>], problem: &REProblem<T>) -> Result<DMatrix<T>> {
    let d = problem.space.ambient_dim();
    let n = q.len();
    let m = problem.residual_len();
    let norm = q.iter().fold(T::zero(), |acc, x| acc + x.norm_squared()).sqrt();
    let h = T::eps().powf(T::lit(1.0 / 3.0)) * (T::one() + norm);
    let two_h = h + h;
    let mut jac = DMatrix::zeros(m, n * d);
    let mut work: Vec<DVector<T>> = q.to_vec();
    for b in 0..n {
        for c in 0..d {
            let x0 = work[b][c];
            work[b][c] = x0 + h;
            let rp = residual_raw(&work, problem)?;
            work[b][c] = x0 - h;
            let rm = residual_raw(&work, problem)?;
            work[b][c] = x0;
            jac.column_mut(b * d + c).copy_from(&((rp - rm) / two_h));
        }
    }
    Ok(jac)
}

/// Outcome of [`verify`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub is_re: bool,
    pub residual_norm: f64,
    /// Smallest extrinsic `|Q_i - Q_j|`.
    pub min_separation: f64,
    pub max_norm: f64,
    /// Curved only: extreme values of `Q_i ⊙ Q_j` over pairs.
    pub min_pair_product: Option<f64>,
    pub max_pair_product: Option<f64>,
    /// Set when the residual could not be evaluated.
    pub diagnostic: Option<String>,
}

/// Evaluate the residual at `q` and report the separation statistics.
/// Never fails: singular or malformed inputs give `is_re = false` with a
/// diagnostic.
pub fn verify<T: Real>(q: &[DVector<T>], problem: &REProblem<T>, tol: f64) -> VerifyReport {
    let (min_separation, max_norm) = separation_stats(q);
    let (min_pair_product, max_pair_product) = if problem.space.is_flat() || q.len() < 2 {
        (None, None)
    } else {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..q.len() {
            for j in i + 1..q.len() {
                if q[i].len() == q[j].len() && q[i].len() == problem.space.ambient_dim() {
                    let c = inner_unchecked(&q[i], &q[j], problem.space).as_f64();
                    lo = lo.min(c);
                    hi = hi.max(c);
                }
            }
        }
        (Some(lo), Some(hi))
    };
    let (residual_norm, diagnostic) = match residual(q, problem) {
        Ok(r) => (r.norm().as_f64(), None),
        Err(e) => (f64::INFINITY, Some(e.to_string())),
    };
    VerifyReport {
        is_re: residual_norm.is_finite() && residual_norm <= tol,
        residual_norm,
        min_separation,
        max_norm,
        min_pair_product,
        max_pair_product,
        diagnostic,
    }
}

/// Integrate the rigid motion `q_i(0) = Q_i`, `v_i(0) = G Q_i` of a
/// candidate relative equilibrium up to `t_end`.
pub fn integrate_rigid<T: Real>(
    problem: &REProblem<T>,
    q: &[DVector<T>],
    t_end: T,
    opts: &IntegratorOptions,
) -> Result<Trajectory<T>> {
    let config = Configuration::new(problem.space, problem.masses.clone(), q.to_vec())?;
    let state = PhaseState::rigid(config, &problem.gen)?;
    integrate(&state, problem.law.as_ref(), t_end, opts)
}

/// Minimum pairwise Euclidean separation and maximum Euclidean norm.
pub fn separation_stats<T: Real>(q: &[DVector<T>]) -> (f64, f64) {
    let mut min_sep = f64::INFINITY;
    let mut max_norm = 0.0f64;
    for i in 0..q.len() {
        max_norm = max_norm.max(q[i].norm().as_f64());
        for j in i + 1..q.len() {
            if q[i].len() == q[j].len() {
                min_sep = min_sep.min((&q[i] - &q[j]).norm().as_f64());
            }
        }
    }
    (min_sep, max_norm)
}

/// `|A sum_i m_i Q_i|`: vanishes at every flat relative equilibrium.
pub fn weighted_centroid_defect<T: Real>(q: &[DVector<T>], problem: &REProblem<T>) -> T {
    let d = problem.space.ambient_dim();
    let mut c = DVector::zeros(d);
    for (m, x) in problem.masses.iter().zip(q) {
        c.axpy(*m, x, T::one());
    }
    (problem.gen.a_operator() * c).norm()
}

#[cfg(test)]
pub(crate) fn unstack<T: Real>(x: &DVector<T>, d: usize) -> Vec<DVector<T>> {
    (0..x.len() / d).map(|i| x.rows(i * d, d).into_owned()).collect()
}

#[cfg(test)]
pub(crate) fn stack<T: Real>(q: &[DVector<T>]) -> DVector<T> {
    let d = q.first().map_or(0, |x| x.len());
    let mut out = DVector::zeros(q.len() * d);
    for (i, x) in q.iter().enumerate() {
        out.rows_mut(i * d, d).copy_from(x);
    }
    out
}
