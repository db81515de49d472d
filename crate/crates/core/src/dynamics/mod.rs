//! Equations of motion and trajectory validation.

mod integrator;

pub use integrator::{integrate, DriftDiagnostics, IntegratorOptions, Trajectory};

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::forcelaw::ForceLaw;
use crate::geometry::{inner_unchecked, manifold_defect, RotationGenerator, SpaceForm};
use crate::scalar::Real;

/// Separations (flat) or curved denominators below this are singular.
pub const SINGULARITY_GUARD: f64 = 1e-14;

/// Masses and constant position vectors of `n` bodies.
#[derive(Debug, Clone, PartialEq)]
pub struct Configuration<T: Real> {
    space: SpaceForm,
    masses: Vec<T>,
    positions: Vec<DVector<T>>,
}

impl<T: Real> Configuration<T> {
    pub fn new(space: SpaceForm, masses: Vec<T>, positions: Vec<DVector<T>>) -> Result<Self> {
        if masses.len() < 2 {
            return Err(Error::InvalidInput(format!("need at least 2 bodies, got {}", masses.len())));
        }
        if masses.len() != positions.len() {
            return Err(Error::InvalidInput(format!(
                "{} masses but {} positions",
                masses.len(),
                positions.len()
            )));
        }
        if let Some(m) = masses.iter().find(|m| !(**m > T::zero()) || !m.is_finite_real()) {
            return Err(Error::InvalidInput(format!("masses must be positive and finite, got {m}")));
        }
        for (i, q) in positions.iter().enumerate() {
            space.check_dim(q)?;
            let defect = manifold_defect(q, space);
            if defect.as_f64() > 1e-10 {
                return Err(Error::OffManifold {
                    body: i,
                    defect: defect.as_f64(),
                });
            }
        }
        check_separated(space, &positions)?;
        Ok(Self {
            space,
            masses,
            positions,
        })
    }

    pub fn space(&self) -> SpaceForm {
        self.space
    }

    pub fn masses(&self) -> &[T] {
        &self.masses
    }

    pub fn positions(&self) -> &[DVector<T>] {
        &self.positions
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    /// Apply a linear map to every position (no revalidation).
    pub fn mapped(&self, m: &nalgebra::DMatrix<T>) -> Self {
        Self {
            space: self.space,
            masses: self.masses.clone(),
            positions: self.positions.iter().map(|q| m * q).collect(),
        }
    }

    pub fn with_masses(&self, masses: Vec<T>) -> Result<Self> {
        Self::new(self.space, masses, self.positions.clone())
    }
}

fn check_separated<T: Real>(space: SpaceForm, positions: &[DVector<T>]) -> Result<()> {
    let guard = T::lit(SINGULARITY_GUARD);
    for i in 0..positions.len() {
        for j in i + 1..positions.len() {
            if space.is_flat() {
                let d = (&positions[j] - &positions[i]).norm();
                if d < guard {
                    return Err(Error::CollisionSingularity {
                        i,
                        j,
                        distance: d.as_f64(),
                    });
                }
            } else if curved_denominator(&positions[i], &positions[j], space).abs() < guard {
                return Err(Error::AntipodalOrCoincidentSingularity { i, j });
            }
        }
    }
    Ok(())
}

/// `sigma - sigma (x ⊙ y)^2`, positive for distinct non-antipodal points.
#[inline]
pub(crate) fn curved_denominator<T: Real>(x: &DVector<T>, y: &DVector<T>, space: SpaceForm) -> T {
    let s = space.sigma_real::<T>();
    let c = inner_unchecked(x, y, space);
    s - s * c * c
}

/// Configuration plus velocities.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseState<T: Real> {
    config: Configuration<T>,
    velocities: Vec<DVector<T>>,
}

impl<T: Real> PhaseState<T> {
    pub fn new(config: Configuration<T>, velocities: Vec<DVector<T>>) -> Result<Self> {
        if velocities.len() != config.len() {
            return Err(Error::InvalidInput(format!(
                "{} bodies but {} velocities",
                config.len(),
                velocities.len()
            )));
        }
        let space = config.space();
        for (i, (q, v)) in config.positions().iter().zip(&velocities).enumerate() {
            space.check_dim(v)?;
            if !space.is_flat() {
                let defect = inner_unchecked(q, v, space).abs();
                if defect.as_f64() > 1e-10 {
                    return Err(Error::NotTangent {
                        body: i,
                        defect: defect.as_f64(),
                    });
                }
            }
        }
        Ok(Self { config, velocities })
    }

    /// Initial data of the rigid motion `q_i(t) = exp(tG) Q_i`: velocities `G Q_i`.
    pub fn rigid(config: Configuration<T>, gen: &RotationGenerator<T>) -> Result<Self> {
        let v = config.positions().iter().map(|q| gen.matrix() * q).collect();
        Self::new(config, v)
    }

    pub fn config(&self) -> &Configuration<T> {
        &self.config
    }

    pub fn velocities(&self) -> &[DVector<T>] {
        &self.velocities
    }
}

/// `a_i = sum_{j != i} m_j (Q_j - Q_i) f(|Q_j - Q_i|)`.
pub fn accel_flat<T: Real>(config: &Configuration<T>, law: &ForceLaw<T>) -> Result<Vec<DVector<T>>> {
    if !config.space().is_flat() {
        return Err(Error::InvalidInput("accel_flat needs a flat space".into()));
    }
    flat_accelerations(config.masses(), config.positions(), law)
}

pub(crate) fn flat_accelerations<T: Real>(
    masses: &[T],
    positions: &[DVector<T>],
    law: &ForceLaw<T>,
) -> Result<Vec<DVector<T>>> {
    let n = positions.len();
    let dim = positions[0].len();
    let mut acc = vec![DVector::zeros(dim); n];
    let guard = T::lit(SINGULARITY_GUARD);
    for i in 0..n {
        for j in i + 1..n {
            let u = &positions[j] - &positions[i];
            let r = u.norm();
            if r < guard {
                return Err(Error::CollisionSingularity {
                    i,
                    j,
                    distance: r.as_f64(),
                });
            }
            let w = law.f(r);
            acc[i].axpy(masses[j] * w, &u, T::one());
            acc[j].axpy(-masses[i] * w, &u, T::one());
        }
    }
    Ok(acc)
}

/// Accelerations of the curved problem, including the constraint force
/// `-sigma (V_i ⊙ V_i) Q_i`.
pub fn accel_curved<T: Real>(state: &PhaseState<T>) -> Result<Vec<DVector<T>>> {
    let config = state.config();
    if config.space().is_flat() {
        return Err(Error::InvalidInput("accel_curved needs a curved space".into()));
    }
    curved_accelerations(config.space(), config.masses(), config.positions(), state.velocities())
}

pub(crate) fn curved_interaction<T: Real>(
    space: SpaceForm,
    masses: &[T],
    positions: &[DVector<T>],
    i: usize,
) -> Result<DVector<T>> {
    let sigma = space.sigma_real::<T>();
    let guard = T::lit(SINGULARITY_GUARD);
    let qi = &positions[i];
    let mut acc = DVector::zeros(qi.len());
    for (j, qj) in positions.iter().enumerate() {
        if j == i {
            continue;
        }
        let c = inner_unchecked(qi, qj, space);
        let d = sigma - sigma * c * c;
        if d.abs() < guard {
            return Err(Error::AntipodalOrCoincidentSingularity { i: i.min(j), j: i.max(j) });
        }
        let w = masses[j] / (d * d.sqrt());
        acc.axpy(w, qj, T::one());
        acc.axpy(-w * sigma * c, qi, T::one());
    }
    Ok(acc)
}

pub(crate) fn curved_accelerations<T: Real>(
    space: SpaceForm,
    masses: &[T],
    positions: &[DVector<T>],
    velocities: &[DVector<T>],
) -> Result<Vec<DVector<T>>> {
    let sigma = space.sigma_real::<T>();
    (0..positions.len())
        .map(|i| {
            let mut a = curved_interaction(space, masses, positions, i)?;
            let vv = inner_unchecked(&velocities[i], &velocities[i], space);
            a.axpy(-sigma * vv, &positions[i], T::one());
            Ok(a)
        })
        .collect()
}

/// Largest deviation over time of the pairwise distances (flat) or pairwise
/// products `q_i ⊙ q_j` (curved) from their initial values.
pub fn rigidity_report<T: Real>(traj: &Trajectory<T>) -> T {
    let space = traj.space();
    let pair = |qs: &[DVector<T>], i: usize, j: usize| -> T {
        if space.is_flat() {
            (&qs[i] - &qs[j]).norm()
        } else {
            inner_unchecked(&qs[i], &qs[j], space)
        }
    };
    let first = match traj.positions().first() {
        Some(p) => p,
        None => return T::zero(),
    };
    let n = first.len();
    let mut drift = T::zero();
    for qs in traj.positions().iter().skip(1) {
        for i in 0..n {
            for j in i + 1..n {
                drift = drift.max((pair(qs, i, j) - pair(first, i, j)).abs());
            }
        }
    }
    drift
}
