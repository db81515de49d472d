//! Named starting configurations.
//!
//! The flat seeds fix a shape, centre it, and scale it so that the virial
//! balance `omega^2 sum m_i |Q_i|^2 = sum_{i<j} m_i m_j r_ij^2 f(r_ij)` holds;
//! for shapes that are exact central configurations of the law this lands
//! on the relative equilibrium. The curved seeds place equal masses
//! symmetrically and solve a scalar equation for the angular speed.

use nalgebra::DVector;

use super::{residual_raw, REProblem};
use crate::dynamics::flat_accelerations;
use crate::error::{Error, Result};
use crate::forcelaw::ForceLaw;
use crate::geometry::{inner_unchecked, planar_generator, validate_generator, SpaceForm};
use crate::scalar::Real;

/// A problem together with its starting positions.
#[derive(Debug, Clone)]
pub struct Seed<T: Real> {
    pub problem: REProblem<T>,
    pub positions: Vec<DVector<T>>,
}

fn planar_problem<T: Real>(masses: &[T], law: ForceLaw<T>, omega: T) -> Result<REProblem<T>> {
    if !(omega > T::zero()) {
        return Err(Error::InvalidInput(format!("omega must be positive, got {omega}")));
    }
    let space = SpaceForm::flat(2)?;
    let gen = validate_generator(planar_generator(2, omega), space)?;
    REProblem::new(masses.to_vec(), Some(law), gen)
}

fn point<T: Real>(x: f64, y: f64) -> DVector<T> {
    DVector::from_vec(vec![T::lit(x), T::lit(y)])
}

fn centred<T: Real>(masses: &[T], mut q: Vec<DVector<T>>) -> Vec<DVector<T>> {
    let total = masses.iter().fold(T::zero(), |a, m| a + *m);
    let mut c = DVector::zeros(q[0].len());
    for (m, x) in masses.iter().zip(&q) {
        c.axpy(*m / total, x, T::one());
    }
    for x in q.iter_mut() {
        *x -= &c;
    }
    q
}

/// First root of `h` on a logarithmic scan of `[lo, hi]`, refined by bisection.
fn first_root<T: Real>(mut h: impl FnMut(T) -> Result<T>, lo: f64, hi: f64) -> Result<T> {
    let n = 400;
    let ratio = (hi / lo).powf(1.0 / n as f64);
    let mut a = T::lit(lo);
    let mut ha = h(a)?;
    for k in 1..=n {
        let b = T::lit(lo * ratio.powi(k));
        let hb = h(b)?;
        if ha == T::zero() {
            return Ok(a);
        }
        if (ha < T::zero()) != (hb < T::zero()) {
            return bisect(h, a, b, ha);
        }
        a = b;
        ha = hb;
    }
    Err(Error::InvalidInput(format!("no scale in [{lo:e}, {hi:e}] balances the rotation")))
}

fn bisect<T: Real>(mut h: impl FnMut(T) -> Result<T>, mut a: T, mut b: T, mut ha: T) -> Result<T> {
    let two = T::lit(2.0);
    for _ in 0..300 {
        let mid = (a + b) / two;
        if mid <= a || mid >= b {
            break;
        }
        let hm = h(mid)?;
        if hm == T::zero() {
            return Ok(mid);
        }
        if (hm < T::zero()) == (ha < T::zero()) {
            a = mid;
            ha = hm;
        } else {
            b = mid;
        }
    }
    Ok((a + b) / two)
}

/// Scale the centred `shape` so that the virial balance holds.
fn scale_shape<T: Real>(problem: &REProblem<T>, shape: Vec<DVector<T>>) -> Result<Vec<DVector<T>>> {
    let masses = problem.masses().to_vec();
    let shape = centred(&masses, shape);
    let law = problem.law().expect("flat seed").clone();
    let a = problem.generator().a_operator().clone();
    let balance = |s: T| -> Result<T> {
        let q: Vec<DVector<T>> = shape.iter().map(|x| x * s).collect();
        let acc = flat_accelerations(&masses, &q, &law)?;
        Ok(q.iter()
            .zip(&acc)
            .zip(&masses)
            .fold(T::zero(), |sum, ((x, f), m)| sum + *m * x.dot(&(&a * x + f))))
    };
    let s = first_root(balance, 1e-6, 1e6)?;
    Ok(shape.iter().map(|x| x * s).collect())
}

fn check_count<T>(masses: &[T], n: usize, name: &str) -> Result<()> {
    if masses.len() != n {
        return Err(Error::InvalidInput(format!("{name} seed needs {n} masses, got {}", masses.len())));
    }
    Ok(())
}

/// Two bodies on the first axis about their centre of mass.
pub fn two_body<T: Real>(masses: &[T], law: ForceLaw<T>, omega: T) -> Result<Seed<T>> {
    check_count(masses, 2, "two_body")?;
    let problem = planar_problem(masses, law, omega)?;
    let positions = scale_shape(&problem, vec![point(1.0, 0.0), point(0.0, 0.0)])?;
    Ok(Seed { problem, positions })
}

/// Equilateral triangle, body 1 on the second axis.
pub fn lagrange<T: Real>(masses: &[T], law: ForceLaw<T>, omega: T) -> Result<Seed<T>> {
    check_count(masses, 3, "lagrange")?;
    let problem = planar_problem(masses, law, omega)?;
    let shape = (0..3)
        .map(|k| {
            let th = std::f64::consts::FRAC_PI_2 + 2.0 * std::f64::consts::PI * k as f64 / 3.0;
            point(th.cos(), th.sin())
        })
        .collect();
    let positions = scale_shape(&problem, shape)?;
    Ok(Seed { problem, positions })
}

/// Root `rho > 0` of Euler's quintic
/// `(m1+m2) r^5 + (3m1+2m2) r^4 + (3m1+m2) r^3 - (m2+3m3) r^2 - (2m2+3m3) r - (m2+m3)`,
/// the ratio `(x3 - x2) / (x2 - x1)` of the collinear central configuration
/// with the bodies in index order.
pub fn euler_quintic_ratio<T: Real>(m1: T, m2: T, m3: T) -> Result<T> {
    let c = |v: f64| T::lit(v);
    let coeffs = [
        m1 + m2,
        c(3.0) * m1 + c(2.0) * m2,
        c(3.0) * m1 + m2,
        -(m2 + c(3.0) * m3),
        -(c(2.0) * m2 + c(3.0) * m3),
        -(m2 + m3),
    ];
    let p = |r: T| -> Result<T> { Ok(coeffs.iter().fold(T::zero(), |acc, a| acc * r + *a)) };
    first_root(p, 1e-6, 1e6)
}

/// Collinear configuration along the first axis. The spacing comes from
/// Euler's quintic, which is exact for the Newtonian law; other laws get a
/// starting guess for [`newton_solve`](super::newton_solve).
pub fn euler_collinear<T: Real>(masses: &[T], law: ForceLaw<T>, omega: T) -> Result<Seed<T>> {
    check_count(masses, 3, "euler_collinear")?;
    let rho = euler_quintic_ratio(masses[0], masses[1], masses[2])?.as_f64();
    let problem = planar_problem(masses, law, omega)?;
    let positions = scale_shape(&problem, vec![point(0.0, 0.0), point(1.0, 0.0), point(1.0 + rho, 0.0)])?;
    Ok(Seed { problem, positions })
}

fn equal_mass<T: Real>(masses: &[T], n: usize, name: &str) -> Result<T> {
    check_count(masses, n, name)?;
    if masses.iter().any(|m| *m != masses[0]) {
        return Err(Error::InvalidInput(format!("{name} seed needs equal masses")));
    }
    Ok(masses[0])
}

/// Rotation about the last axis at angular speed `omega`.
fn axial_problem<T: Real>(space: SpaceForm, masses: &[T], omega: T) -> Result<REProblem<T>> {
    let gen = validate_generator(planar_generator(space.ambient_dim(), omega), space)?;
    REProblem::new(masses.to_vec(), None, gen)
}

/// Angular speed making body 1 balanced, found by a scalar root search on
/// the tangential component of its residual along the direction towards
/// the last axis.
fn balancing_omega<T: Real>(space: SpaceForm, masses: &[T], positions: &[DVector<T>]) -> Result<T> {
    let sigma = space.sigma_real::<T>();
    let d = space.ambient_dim();
    let q1 = &positions[0];
    let mut e = DVector::zeros(d);
    e[d - 1] = T::one();
    let w = &e - q1 * (sigma * inner_unchecked(q1, &e, space));
    let h = |omega2: T| -> Result<T> {
        let problem = axial_problem(space, masses, omega2.max(T::zero()).sqrt())?;
        let r = residual_raw(positions, &problem)?;
        Ok(inner_unchecked(&r.rows(0, d).into_owned(), &w, space))
    };
    let h0 = h(T::zero())?;
    if h0 == T::zero() {
        return Err(Error::InvalidInput(
            "configuration is balanced for every angular speed; no rotation is singled out".into(),
        ));
    }
    let mut hi = T::one();
    let mut hh = h(hi)?;
    let mut tries = 0;
    while (hh < T::zero()) == (h0 < T::zero()) {
        hi *= T::lit(4.0);
        hh = h(hi)?;
        tries += 1;
        if tries > 100 {
            return Err(Error::InvalidInput("no angular speed balances the configuration".into()));
        }
    }
    Ok(bisect(h, T::zero(), hi, h0)?.sqrt())
}

/// Three equal masses on the sphere `S^2` at height `z0`, equally spaced in
/// longitude, rotating about the polar axis.
pub fn sphere_lagrange<T: Real>(masses: &[T], z0: T) -> Result<Seed<T>> {
    let m = equal_mass(masses, 3, "sphere_lagrange")?;
    if !(z0.abs() > T::lit(1e-6)) || !(z0.abs() < T::one()) {
        return Err(Error::InvalidInput(format!(
            "latitude height must satisfy 0 < |z0| < 1 (the equator balances at every speed), got {z0}"
        )));
    }
    let space = SpaceForm::sphere(2)?;
    let r = (T::one() - z0 * z0).sqrt();
    let positions: Vec<DVector<T>> = (0..3)
        .map(|k| {
            let th = T::two_pi() * T::lit(k as f64) / T::lit(3.0);
            DVector::from_vec(vec![r * th.cos(), r * th.sin(), z0])
        })
        .collect();
    let omega = balancing_omega(space, &[m, m, m], &positions)?;
    Ok(Seed {
        problem: axial_problem(space, masses, omega)?,
        positions,
    })
}

/// Two equal masses on the hyperboloid `H^2` at `(±sinh a, 0, cosh a)`,
/// rotating elliptically about the vertex axis.
pub fn hyperbolic_pair<T: Real>(masses: &[T], half_distance: T) -> Result<Seed<T>> {
    let m = equal_mass(masses, 2, "hyperbolic_pair")?;
    if !(half_distance > T::zero()) {
        return Err(Error::InvalidInput(format!("half distance must be positive, got {half_distance}")));
    }
    let space = SpaceForm::hyperboloid(2)?;
    let (s, c) = (half_distance.sinh(), half_distance.cosh());
    let positions = vec![
        DVector::from_vec(vec![s, T::zero(), c]),
        DVector::from_vec(vec![-s, T::zero(), c]),
    ];
    let omega = balancing_omega(space, &[m, m], &positions)?;
    Ok(Seed {
        problem: axial_problem(space, masses, omega)?,
        positions,
    })
}
