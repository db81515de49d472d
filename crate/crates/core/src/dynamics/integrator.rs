//! Dormand–Prince 5(4) integration of the equations of motion.
//!
//! Curved states are pulled back onto the manifold (and velocities back onto
//! the tangent space) after any accepted step whose constraint drift exceeds
//! ten times the relative tolerance.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{curved_accelerations, flat_accelerations, PhaseState};
use crate::error::{Error, Result};
use crate::forcelaw::ForceLaw;
use crate::geometry::{inner_unchecked, manifold_defect, project_to_manifold, tangent_projection, SpaceForm};
use crate::scalar::Real;

const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
// fifth-order weights minus embedded fourth-order weights
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorOptions {
    /// Relative tolerance in `[1e-13, 1e-6]`; also used as absolute tolerance.
    pub rel_tol: f64,
    /// Number of equal sample intervals on `[0, t_end]`.
    pub samples: usize,
    pub max_steps: usize,
    /// Take fixed steps of this size without error control.
    pub fixed_step: Option<f64>,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            samples: 100,
            max_steps: 2_000_000,
            fixed_step: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DriftDiagnostics {
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub projections: usize,
    /// Largest constraint defect `|Q ⊙ Q - sigma|` seen before any projection.
    pub max_constraint_drift: f64,
    /// Largest tangency defect `|Q ⊙ V|` seen before any projection.
    pub max_tangency_drift: f64,
    /// Largest constraint defect over the returned samples.
    pub sample_constraint_drift: f64,
    pub min_step: f64,
    pub max_step: f64,
}

/// One sample: time, positions, velocities.
pub type Sample<T> = (T, Vec<DVector<T>>, Vec<DVector<T>>);

/// Sampled solution of the equations of motion.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T: Real> {
    space: SpaceForm,
    masses: Vec<T>,
    times: Vec<T>,
    positions: Vec<Vec<DVector<T>>>,
    velocities: Vec<Vec<DVector<T>>>,
    diagnostics: DriftDiagnostics,
}

impl<T: Real> Trajectory<T> {
    /// Assemble a trajectory from externally generated samples.
    pub fn from_samples(
        space: SpaceForm,
        masses: Vec<T>,
        samples: Vec<Sample<T>>,
    ) -> Self {
        let mut traj = Self {
            space,
            masses,
            times: Vec::new(),
            positions: Vec::new(),
            velocities: Vec::new(),
            diagnostics: DriftDiagnostics::default(),
        };
        for (t, q, v) in samples {
            traj.push(t, q, v);
        }
        traj
    }

    fn push(&mut self, t: T, q: Vec<DVector<T>>, v: Vec<DVector<T>>) {
        let drift = q
            .iter()
            .map(|x| manifold_defect(x, self.space).as_f64())
            .fold(0.0, f64::max);
        self.diagnostics.sample_constraint_drift = self.diagnostics.sample_constraint_drift.max(drift);
        self.times.push(t);
        self.positions.push(q);
        self.velocities.push(v);
    }

    pub fn space(&self) -> SpaceForm {
        self.space
    }

    pub fn masses(&self) -> &[T] {
        &self.masses
    }

    pub fn times(&self) -> &[T] {
        &self.times
    }

    pub fn positions(&self) -> &[Vec<DVector<T>>] {
        &self.positions
    }

    pub fn velocities(&self) -> &[Vec<DVector<T>>] {
        &self.velocities
    }

    pub fn diagnostics(&self) -> &DriftDiagnostics {
        &self.diagnostics
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// `max_i |Q_i ⊙ Q_i - sigma|` over all samples.
    #[allow(clippy::misnamed_getters)] // sampled, not the per-step diagnostic
    pub fn max_constraint_drift(&self) -> f64 {
        self.diagnostics.sample_constraint_drift
    }
}

struct System<'a, T: Real> {
    space: SpaceForm,
    masses: &'a [T],
    law: Option<&'a ForceLaw<T>>,
    n: usize,
    dim: usize,
}

impl<T: Real> System<'_, T> {
    fn unpack(&self, y: &DVector<T>) -> (Vec<DVector<T>>, Vec<DVector<T>>) {
        let (n, d) = (self.n, self.dim);
        let q = (0..n).map(|i| y.rows(i * d, d).into_owned()).collect();
        let v = (0..n).map(|i| y.rows((n + i) * d, d).into_owned()).collect();
        (q, v)
    }

    fn pack(&self, q: &[DVector<T>], v: &[DVector<T>]) -> DVector<T> {
        let (n, d) = (self.n, self.dim);
        let mut y = DVector::zeros(2 * n * d);
        for i in 0..n {
            y.rows_mut(i * d, d).copy_from(&q[i]);
            y.rows_mut((n + i) * d, d).copy_from(&v[i]);
        }
        y
    }

    fn rhs(&self, t: T, y: &DVector<T>) -> Result<DVector<T>> {
        let (q, v) = self.unpack(y);
        let acc = match self.law {
            Some(law) => flat_accelerations(self.masses, &q, law),
            None => curved_accelerations(self.space, self.masses, &q, &v),
        }
        .map_err(|e| Error::SingularityEncountered {
            t: t.as_f64(),
            reason: e.to_string(),
        })?;
        let (n, d) = (self.n, self.dim);
        let mut dy = DVector::zeros(2 * n * d);
        for i in 0..n {
            dy.rows_mut(i * d, d).copy_from(&v[i]);
            dy.rows_mut((n + i) * d, d).copy_from(&acc[i]);
        }
        Ok(dy)
    }

    /// Constraint and tangency defects of a packed state.
    fn defects(&self, y: &DVector<T>) -> (f64, f64) {
        if self.space.is_flat() {
            return (0.0, 0.0);
        }
        let (q, v) = self.unpack(y);
        q.iter().zip(&v).fold((0.0, 0.0), |(c, tg), (qi, vi)| {
            (
                c.max(manifold_defect(qi, self.space).as_f64()),
                tg.max(inner_unchecked(qi, vi, self.space).abs().as_f64()),
            )
        })
    }

    fn project(&self, y: &DVector<T>) -> Result<DVector<T>> {
        let (q, v) = self.unpack(y);
        let q: Vec<_> = q
            .iter()
            .map(|x| project_to_manifold(x, self.space))
            .collect::<Result<_>>()?;
        let v: Vec<_> = q.iter().zip(&v).map(|(qi, vi)| tangent_projection(qi, vi, self.space)).collect();
        Ok(self.pack(&q, &v))
    }
}

/// Integrate from `state0` to `t_end`.
///
/// `law` selects the flat equations and must be `None` for curved spaces.
pub fn integrate<T: Real>(
    state0: &PhaseState<T>,
    law: Option<&ForceLaw<T>>,
    t_end: T,
    opts: &IntegratorOptions,
) -> Result<Trajectory<T>> {
    let config = state0.config();
    let space = config.space();
    match (space.is_flat(), law.is_some()) {
        (true, false) => return Err(Error::InvalidInput("flat integration needs a force law".into())),
        (false, true) => return Err(Error::InvalidInput("curved integration takes no force law".into())),
        _ => {}
    }
    if opts.fixed_step.is_none() && !(1e-13..=1e-6).contains(&opts.rel_tol) {
        return Err(Error::ToleranceUnachievable(format!(
            "rel_tol {} outside [1e-13, 1e-6]",
            opts.rel_tol
        )));
    }
    if t_end < T::zero() {
        return Err(Error::InvalidInput("t_end must be non-negative".into()));
    }

    let sys = System {
        space,
        masses: config.masses(),
        law,
        n: config.len(),
        dim: space.ambient_dim(),
    };
    let mut traj = Trajectory {
        space,
        masses: config.masses().to_vec(),
        times: Vec::new(),
        positions: Vec::new(),
        velocities: Vec::new(),
        diagnostics: DriftDiagnostics {
            min_step: f64::INFINITY,
            ..Default::default()
        },
    };
    traj.push(T::zero(), config.positions().to_vec(), state0.velocities().to_vec());
    if t_end == T::zero() {
        traj.diagnostics.min_step = 0.0;
        return Ok(traj);
    }

    let samples = opts.samples.max(1);
    let sample_times: Vec<T> = (1..=samples)
        .map(|k| t_end * T::lit(k as f64 / samples as f64))
        .collect();

    let rtol = T::lit(opts.rel_tol);
    let mut y = sys.pack(config.positions(), state0.velocities());
    let mut t = T::zero();
    let mut k1 = sys.rhs(t, &y)?;
    let mut h = match opts.fixed_step {
        Some(h) => T::lit(h),
        None => initial_step(&y, &k1, rtol, t_end),
    };
    let mut next = 0usize;
    let mut steps = 0usize;

    while next < sample_times.len() {
        steps += 1;
        if steps > opts.max_steps {
            return Err(Error::ToleranceUnachievable(format!(
                "step budget of {} exhausted at t = {}",
                opts.max_steps, t
            )));
        }
        let target = sample_times[next];
        let h_try = h.min(target - t);
        let min_step = T::lit(1e-14) * T::one().max(t.abs());
        if h_try < min_step && target - t > min_step {
            return Err(Error::SingularityEncountered {
                t: t.as_f64(),
                reason: format!("step size collapsed to {:.3e}", h_try.as_f64()),
            });
        }

        let (y_new, err_vec, k7) = stage_step(&sys, t, &y, &k1, h_try)?;
        let accept;
        let err_norm;
        if opts.fixed_step.is_some() {
            accept = true;
            err_norm = T::zero();
        } else {
            err_norm = error_norm(&err_vec, &y, &y_new, rtol);
            accept = err_norm <= T::one();
        }

        if accept {
            traj.diagnostics.accepted_steps += 1;
            traj.diagnostics.min_step = traj.diagnostics.min_step.min(h_try.as_f64());
            traj.diagnostics.max_step = traj.diagnostics.max_step.max(h_try.as_f64());
            t = if h_try == target - t { target } else { t + h_try };
            y = y_new;
            k1 = k7;
            let (cd, td) = sys.defects(&y);
            traj.diagnostics.max_constraint_drift = traj.diagnostics.max_constraint_drift.max(cd);
            traj.diagnostics.max_tangency_drift = traj.diagnostics.max_tangency_drift.max(td);
            if cd.max(td) > 10.0 * opts.rel_tol {
                y = sys.project(&y).map_err(|e| Error::SingularityEncountered {
                    t: t.as_f64(),
                    reason: e.to_string(),
                })?;
                k1 = sys.rhs(t, &y)?;
                traj.diagnostics.projections += 1;
            }
            if t == target {
                let (q, v) = sys.unpack(&y);
                traj.push(t, q, v);
                next += 1;
            }
        } else {
            traj.diagnostics.rejected_steps += 1;
        }

        if opts.fixed_step.is_none() {
            let factor = if err_norm == T::zero() {
                T::lit(5.0)
            } else {
                (T::lit(0.9) * err_norm.powf(T::lit(-0.2))).clamp(T::lit(0.2), T::lit(5.0))
            };
            let factor = if accept { factor } else { factor.min(T::one()) };
            let proposed = h_try * factor;
            // a step truncated to land on a sample time says little about h
            h = if accept && h_try < h { h.max(proposed) } else { proposed };
        }
    }
    Ok(traj)
}

fn stage_step<T: Real>(
    sys: &System<'_, T>,
    t: T,
    y: &DVector<T>,
    k1: &DVector<T>,
    h: T,
) -> Result<(DVector<T>, DVector<T>, DVector<T>)> {
    let mut ks: Vec<DVector<T>> = Vec::with_capacity(7);
    ks.push(k1.clone());
    for s in 1..7 {
        let mut ys = y.clone();
        for (j, kj) in ks.iter().enumerate() {
            let a = A[s][j];
            if a != 0.0 {
                ys.axpy(h * T::lit(a), kj, T::one());
            }
        }
        if s == 6 {
            // FSAL: the seventh stage is evaluated at the new solution
            let k7 = sys.rhs(t + h, &ys)?;
            let mut err = DVector::zeros(y.len());
            for (j, kj) in ks.iter().enumerate() {
                if E[j] != 0.0 {
                    err.axpy(h * T::lit(E[j]), kj, T::one());
                }
            }
            err.axpy(h * T::lit(E[6]), &k7, T::one());
            return Ok((ys, err, k7));
        }
        ks.push(sys.rhs(t + h * T::lit(C[s]), &ys)?);
    }
    unreachable!()
}

fn error_norm<T: Real>(err: &DVector<T>, y0: &DVector<T>, y1: &DVector<T>, rtol: T) -> T {
    let mut acc = T::zero();
    for i in 0..err.len() {
        let sc = rtol + rtol * y0[i].abs().max(y1[i].abs());
        let r = err[i] / sc;
        acc += r * r;
    }
    (acc / T::lit(err.len() as f64)).sqrt()
}

fn initial_step<T: Real>(y: &DVector<T>, dy: &DVector<T>, rtol: T, t_end: T) -> T {
    let scale = |v: &DVector<T>| {
        let mut acc = T::zero();
        for i in 0..v.len() {
            let sc = rtol + rtol * y[i].abs();
            acc += (v[i] / sc) * (v[i] / sc);
        }
        (acc / T::lit(v.len() as f64)).sqrt()
    };
    let d0 = scale(y);
    let d1 = scale(dy);
    let h = if d0 < T::lit(1e-5) || d1 < T::lit(1e-5) {
        T::lit(1e-6)
    } else {
        T::lit(0.01) * d0 / d1
    };
    h.min(t_end)
}
