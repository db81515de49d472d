//! Numerical certificates for the separation and compactness statements
//! and probes of the collision mechanisms behind them.
//!
//! Certificates report empirical extrema over sampled families; they never
//! claim the universal constants. Probes evaluate synthetic shrink paths
//! (not relative equilibria) and show that the reduced equations would
//! demand unbounded rotation as a cluster collapses.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::dynamics::flat_accelerations;
use crate::equilibria::{verify, ContinuationFamily};
use crate::error::{Error, Result};
use crate::forcelaw::{ConditionOutcome, ForceLaw};
use crate::geometry::{inner_unchecked, manifold_defect, RotationGenerator, SpaceForm};
use crate::scalar::Real;

/// Roundoff allowance on the triangle-ratio bound.
pub const TRIANGLE_SLACK: f64 = 1e-12;
/// Allowed growth of a bounded series over its value at the largest `s`.
pub const BAND_FACTOR: f64 = 10.0;
/// Tolerance on the double-sum identity.
pub const IDENTITY_TOL: f64 = 1e-12;

// ---------------------------------------------------------------- certificates

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeparationCertificate {
    pub parameter: String,
    pub members: usize,
    /// Smallest pairwise separation over all members.
    pub c_hat: f64,
    pub argmin_member: usize,
    pub argmin_pair: (usize, usize),
    pub argmin_param_value: f64,
    /// Same statistic on the 2x refined grid.
    pub c_hat_refined: f64,
    /// `c_hat_refined / c_hat`.
    pub stability_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundednessCertificate {
    pub parameter: String,
    pub members: usize,
    pub law: String,
    pub compactness_flag: bool,
    /// Largest `|Q_i|` over all members and bodies.
    pub big_c_hat: f64,
    pub argmax_member: usize,
    pub argmax_body: usize,
    pub argmax_param_value: f64,
}

fn verify_members<T: Real>(family: &ContinuationFamily<T>) -> Result<()> {
    if family.is_empty() {
        return Err(Error::UnverifiedMember { index: 0 });
    }
    let tol = family.options().solver.tol;
    for (k, m) in family.members().iter().enumerate() {
        let problem = family.problem_at(k)?;
        if !verify(&m.positions, &problem, tol).is_re {
            return Err(Error::UnverifiedMember { index: k });
        }
    }
    Ok(())
}

fn min_separation<T: Real>(family: &ContinuationFamily<T>) -> (f64, usize, (usize, usize)) {
    let mut best = (f64::INFINITY, 0, (0, 0));
    for (k, m) in family.members().iter().enumerate() {
        let q = &m.positions;
        for i in 0..q.len() {
            for j in i + 1..q.len() {
                let d = (&q[i] - &q[j]).norm().as_f64();
                if d < best.0 {
                    best = (d, k, (i, j));
                }
            }
        }
    }
    best
}

/// Empirical separation constant of a verified family, with a 2x grid
/// refinement for stability.
pub fn separation_scan<T: Real>(family: &ContinuationFamily<T>) -> Result<SeparationCertificate> {
    verify_members(family)?;
    let (c_hat, member, pair) = min_separation(family);
    let fine = family.refined(2).map_err(|e| e.error)?;
    verify_members(&fine)?;
    let (c_fine, _, _) = min_separation(&fine);
    Ok(SeparationCertificate {
        parameter: family.parameter().name(),
        members: family.len(),
        c_hat,
        argmin_member: member,
        argmin_pair: pair,
        argmin_param_value: family.grid()[member],
        c_hat_refined: c_fine,
        stability_ratio: c_fine / c_hat,
    })
}

/// Empirical bound on `|Q_i|` over a verified family; refused unless the
/// law satisfies the compactness hypothesis.
pub fn boundedness_scan<T: Real>(family: &ContinuationFamily<T>, law: &ForceLaw<T>) -> Result<BoundednessCertificate> {
    if !law.compactness_flag() {
        return Err(Error::HypothesisNotMet(format!(
            "law {} does not have x f(x) -> ±inf with x f(x) bounded away from 0",
            law.name()
        )));
    }
    verify_members(family)?;
    let mut best = (0.0f64, 0usize, 0usize);
    for (k, m) in family.members().iter().enumerate() {
        for (b, q) in m.positions.iter().enumerate() {
            let r = q.norm().as_f64();
            if r > best.0 {
                best = (r, k, b);
            }
        }
    }
    Ok(BoundednessCertificate {
        parameter: family.parameter().name(),
        members: family.len(),
        law: law.name(),
        compactness_flag: true,
        big_c_hat: best.0,
        argmax_member: best.1,
        argmax_body: best.2,
        argmax_param_value: family.grid()[best.1],
    })
}

// ---------------------------------------------------------------- paths

/// A one-parameter family of configurations indexed by cluster size `s`.
pub trait ProbePath<T: Real>: Sync {
    fn positions(&self, s: T) -> Vec<DVector<T>>;
}

impl<T: Real, F: Fn(T) -> Vec<DVector<T>> + Sync> ProbePath<T> for F {
    fn positions(&self, s: T) -> Vec<DVector<T>> {
        self(s)
    }
}

/// Flat path: bodies 1 and 2 at `center ± (s/2) direction`, the rest fixed.
#[derive(Debug, Clone)]
pub struct ShrinkPath<T: Real> {
    pub center: DVector<T>,
    pub direction: DVector<T>,
    pub far: Vec<DVector<T>>,
}

impl<T: Real> ShrinkPath<T> {
    /// Default path in `R^k`: the pair at the origin along the first axis,
    /// far bodies at unit distance spread over angles, placed off the
    /// pair's bisector so that the secant terms are exercised.
    pub fn default_for(k: usize, n: usize) -> Result<Self> {
        if k < 2 || n < 3 {
            return Err(Error::InvalidInput("default shrink path needs k >= 2 and n >= 3".into()));
        }
        let mut direction = DVector::zeros(k);
        direction[0] = T::one();
        let far = (0..n - 2)
            .map(|j| {
                let th = 1.3 + 1.1 * j as f64;
                let mut q = DVector::zeros(k);
                q[0] = T::lit(th.cos());
                q[1] = T::lit(th.sin());
                q
            })
            .collect();
        Ok(Self {
            center: DVector::zeros(k),
            direction,
            far,
        })
    }
}

impl<T: Real> ProbePath<T> for ShrinkPath<T> {
    fn positions(&self, s: T) -> Vec<DVector<T>> {
        let half = &self.direction * (s / T::lit(2.0));
        let mut q = vec![&self.center + &half, &self.center - &half];
        q.extend(self.far.iter().cloned());
        q
    }
}

/// Curved path: the cluster pair straddles `anchor` along the unit tangent
/// `direction` with chord `s`, `Q_{1,2} = sqrt(1 - sigma s^2/4) p ± (s/2) u`;
/// far bodies are fixed.
#[derive(Debug, Clone)]
pub struct ClusterPath<T: Real> {
    pub space: SpaceForm,
    pub anchor: DVector<T>,
    pub direction: DVector<T>,
    pub far: Vec<DVector<T>>,
}

impl<T: Real> ClusterPath<T> {
    /// Default paths on `S^2` and `H^2` with `n - 2` far bodies.
    pub fn default_for(space: SpaceForm, n: usize) -> Result<Self> {
        if space.is_flat() || space.k() != 2 || n < 3 {
            return Err(Error::InvalidInput(
                "default cluster path needs S^2 or H^2 and at least 3 bodies".into(),
            ));
        }
        let v = |x: f64, y: f64, z: f64| DVector::from_vec(vec![T::lit(x), T::lit(y), T::lit(z)]);
        let sphere = space.sigma() == Some(1);
        let a0 = 0.6f64;
        let anchor = if sphere { v(a0.sin(), 0.0, a0.cos()) } else { v(a0.sinh(), 0.0, a0.cosh()) };
        let far = (0..n - 2)
            .map(|j| {
                let (r, phi) = (0.9 + 0.2 * j as f64, 2.2f64 + 1.3 * j as f64);
                if sphere {
                    v(r.sin() * phi.cos(), r.sin() * phi.sin(), r.cos())
                } else {
                    v(r.sinh() * phi.cos(), r.sinh() * phi.sin(), r.cosh())
                }
            })
            .collect();
        Ok(Self {
            space,
            anchor,
            direction: v(0.0, 1.0, 0.0),
            far,
        })
    }
}

impl<T: Real> ProbePath<T> for ClusterPath<T> {
    fn positions(&self, s: T) -> Vec<DVector<T>> {
        let sigma = self.space.sigma_real::<T>();
        let half = s / T::lit(2.0);
        let c = (T::one() - sigma * half * half).sqrt();
        let mid = &self.anchor * c;
        let off = &self.direction * half;
        let mut q = vec![&mid + &off, &mid - &off];
        q.extend(self.far.iter().cloned());
        q
    }
}

fn check_grid(s_grid: &[f64], floor: f64) -> Result<()> {
    if s_grid.len() < 2 {
        return Err(Error::InvalidInput("s-grid needs at least two points".into()));
    }
    if s_grid.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::InvalidInput("s-grid must be strictly decreasing".into()));
    }
    let last = *s_grid.last().unwrap();
    if !(last >= floor) {
        return Err(Error::InvalidInput(format!("smallest s {last:e} is below {floor:e}")));
    }
    Ok(())
}

/// Decreasing logarithmic grid from `hi` down to `lo`, `per_decade` points
/// per decade.
pub fn shrink_grid(hi: f64, lo: f64, per_decade: usize) -> Vec<f64> {
    let decades = (hi / lo).log10();
    let n = (decades * per_decade as f64).round().max(1.0) as usize;
    (0..=n).map(|k| hi * (lo / hi).powf(k as f64 / n as f64)).collect()
}

/// Least-squares slope of `log y` against `log s` over the smallest decade
/// of `s`.
pub fn fit_last_decade(s: &[f64], y: &[f64]) -> Result<f64> {
    let smin = s.iter().cloned().fold(f64::INFINITY, f64::min);
    let pts: Vec<(f64, f64)> = s
        .iter()
        .zip(y)
        .filter(|(si, _)| **si <= smin * 10.0 * (1.0 + 1e-12))
        .map(|(si, yi)| (si.ln(), yi.abs().ln()))
        .collect();
    if pts.len() < 2 || pts.iter().any(|(_, l)| !l.is_finite()) {
        return Err(Error::InvalidInput("need at least two finite points in the last decade to fit a slope".into()));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Ok(sxy / sxx)
}

// ---------------------------------------------------------------- flat probe

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DivergenceRow {
    pub s: f64,
    pub required_bound: f64,
    pub remainder: f64,
    pub triangle_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DivergenceProbeResult {
    pub law: String,
    pub rows: Vec<DivergenceRow>,
    /// Log-log slope of `required_bound` on the last decade.
    pub slope: f64,
    /// `-alpha` for the dominant exponent, when the law has one.
    pub expected_slope: Option<f64>,
    pub triangle_ratio_max: f64,
    /// `max |remainder| / |remainder(s_max)|`.
    pub remainder_band_ratio: f64,
    /// Largest relative gap between `required_bound` and the direct
    /// projection `<F_2 - F_1, Q_1 - Q_2> / s^2` of the interaction sums.
    pub cross_check_max: f64,
    /// Largest singular value of `A`: an RE needs `required_bound <= c2`.
    pub c2: f64,
    /// Largest `s` at which `required_bound` exceeds `c2`.
    pub first_s_exceeding_c2: Option<f64>,
}

impl DivergenceProbeResult {
    /// Asserted properties; `slope_window` is the allowed distance from
    /// the expected slope.
    pub fn invariants(&self, slope_window: f64) -> Vec<ConditionOutcome> {
        let mut out = vec![
            ConditionOutcome {
                name: "triangle_ratio".into(),
                passed: self.triangle_ratio_max <= 1.0 + TRIANGLE_SLACK,
                detail: format!("max ratio {:.6e} (bound 1 + {TRIANGLE_SLACK:e})", self.triangle_ratio_max),
            },
            ConditionOutcome {
                name: "remainder_band".into(),
                passed: self.remainder_band_ratio <= BAND_FACTOR,
                detail: format!("max |remainder| is {:.4}x its value at the largest s", self.remainder_band_ratio),
            },
            ConditionOutcome {
                name: "projection_consistency".into(),
                passed: self.cross_check_max <= 1e-8,
                detail: format!("max relative gap {:.3e}", self.cross_check_max),
            },
        ];
        if let Some(e) = self.expected_slope {
            out.push(ConditionOutcome {
                name: "slope".into(),
                passed: (self.slope - e).abs() <= slope_window,
                detail: format!("fitted {:.5}, expected {e} ± {slope_window}", self.slope),
            });
        }
        out
    }
}

fn far_distance<T: Real>(q: &[DVector<T>], cluster: usize) -> f64 {
    let mut d = f64::INFINITY;
    for i in 0..cluster {
        for x in &q[cluster..] {
            d = d.min((&q[i] - x).norm().as_f64());
        }
    }
    d
}

/// Project the pairwise-difference equation of a collapsing pair onto
/// `(Q_1 - Q_2)/s^2` along `path`.
///
/// At each `s`, `required_bound = (m1 + m2) f(s) + remainder`, where
/// `remainder = sum_{j>=3} m_j [ f(r_1j) + <Q_j - Q_2, u> B_j (r_2j - r_1j)/s ]`,
/// `u = (Q_1 - Q_2)/s` and `B_j` is the secant quotient of `f` between
/// `r_1j` and `r_2j`. A relative equilibrium would need
/// `required_bound <= c2`.
pub fn collision_divergence_probe<T: Real>(
    masses: &[T],
    gen: &RotationGenerator<T>,
    law: &ForceLaw<T>,
    path: &dyn ProbePath<T>,
    s_grid: &[f64],
) -> Result<DivergenceProbeResult> {
    if !gen.space().is_flat() {
        return Err(Error::InvalidInput("the collision probe is for flat problems".into()));
    }
    if masses.len() < 3 {
        return Err(Error::InvalidInput("the collision probe needs at least 3 bodies".into()));
    }
    check_grid(s_grid, 1e-8)?;
    let reference = path.positions(T::lit(s_grid[0]));
    let far0 = far_distance(&reference, 2);

    let rows: Vec<(DivergenceRow, f64)> = s_grid
        .par_iter()
        .map(|&s64| -> Result<(DivergenceRow, f64)> {
            let s = T::lit(s64);
            let q = path.positions(s);
            if q.len() != masses.len() {
                return Err(Error::DimensionMismatch {
                    expected: masses.len(),
                    got: q.len(),
                });
            }
            for x in &q {
                gen.space().check_dim(x)?;
            }
            let diff = &q[0] - &q[1];
            let gap = diff.norm();
            if ((gap - s).abs() / s).as_f64() > 1e-9 {
                return Err(Error::PathViolation(format!("|Q1 - Q2| = {:e} at s = {s64:e}", gap.as_f64())));
            }
            let far = far_distance(&q, 2);
            if far < (2.0 * s64).max(0.5 * far0) {
                return Err(Error::PathViolation(format!(
                    "a far body comes within {far:e} of the cluster at s = {s64:e}"
                )));
            }
            let u = &diff / s;
            let mut remainder = T::zero();
            let mut tri = 0.0f64;
            for j in 2..q.len() {
                let r1 = (&q[0] - &q[j]).norm();
                let r2 = (&q[1] - &q[j]).norm();
                let dr = r2 - r1;
                let secant = if dr.abs() > T::lit(1e-8) * s {
                    (law.f(r2) - law.f(r1)) / dr
                } else {
                    law.derivative(r1)
                };
                let ratio = dr / s;
                tri = tri.max(ratio.abs().as_f64());
                remainder += masses[j] * (law.f(r1) + (&q[j] - &q[1]).dot(&u) * secant * ratio);
            }
            let required = (masses[0] + masses[1]) * law.f(s) + remainder;
            let acc = flat_accelerations(masses, &q, law)?;
            let direct = (&acc[1] - &acc[0]).dot(&diff) / (s * s);
            let gap_rel = ((required - direct).abs() / required.abs()).as_f64();
            Ok((
                DivergenceRow {
                    s: s64,
                    required_bound: required.as_f64(),
                    remainder: remainder.as_f64(),
                    triangle_ratio: tri,
                },
                gap_rel,
            ))
        })
        .collect::<Result<_>>()?;

    let (rows, gaps): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
    let s: Vec<f64> = rows.iter().map(|r| r.s).collect();
    let req: Vec<f64> = rows.iter().map(|r| r.required_bound).collect();
    let slope = fit_last_decade(&s, &req)?;
    let rem0 = rows[0].remainder.abs();
    let rem_max = rows.iter().map(|r| r.remainder.abs()).fold(0.0, f64::max);
    let c2 = gen.c2().as_f64();
    Ok(DivergenceProbeResult {
        law: law.name(),
        slope,
        expected_slope: law.dominant_exponent().map(|a| -a.as_f64()),
        triangle_ratio_max: rows.iter().map(|r| r.triangle_ratio).fold(0.0, f64::max),
        remainder_band_ratio: if rem0 > 0.0 { rem_max / rem0 } else if rem_max == 0.0 { 1.0 } else { f64::INFINITY },
        cross_check_max: gaps.into_iter().fold(0.0, f64::max),
        c2,
        first_s_exceeding_c2: rows.iter().find(|r| r.required_bound > c2).map(|r| r.s),
        rows,
    })
}

// ---------------------------------------------------------------- curved identity

/// How the denominator `sigma (1 + sigma c)` of the double-sum identity is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DenominatorReading {
    /// `sigma (1 + sigma (Q_i ⊙ Q_j))`: exact for both curvatures.
    SigmaCorrected,
    /// `sigma (1 + Q_i ⊙ Q_j)`: agrees with the above only for `sigma = +1`.
    Literal,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterIdentityResult {
    pub cluster: Vec<usize>,
    pub lhs_norm: f64,
    /// `|LHS - RHS| / |LHS|` with the sigma-corrected denominator (0 when both vanish).
    pub relative_residual: f64,
    /// `|LHS - RHS|` over the sum of the magnitudes of the LHS terms: the
    /// natural rounding scale, robust when the pair terms nearly cancel.
    pub scaled_residual: f64,
    /// `|LHS - RHS'| / |LHS|` with the literal denominator.
    pub literal_relative_residual: f64,
}

fn check_cluster(cluster: &[usize], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    for &i in cluster {
        if i >= n || seen[i] {
            return Err(Error::InvalidInput(format!("cluster index {i} is out of range or repeated")));
        }
        seen[i] = true;
    }
    Ok(())
}

fn check_on_manifold<T: Real>(q: &[DVector<T>], space: SpaceForm) -> Result<()> {
    for (i, x) in q.iter().enumerate() {
        space.check_dim(x)?;
        let defect = manifold_defect(x, space).as_f64();
        if defect > 1e-10 {
            return Err(Error::OffManifold { body: i, defect });
        }
    }
    Ok(())
}

/// Pair quantities of the curved interaction, with `sigma - c` and
/// `sigma + c` taken from `|Q_i ∓ Q_j|_⊙^2 / 2` so that they keep full
/// relative precision for nearby or nearly antipodal points.
struct PairScalars<T> {
    c: T,
    gap: T,
    plus: T,
    /// `sigma - sigma c^2 = sigma (sigma - c)(sigma + c)`.
    denominator: T,
}

impl<T: Real> PairScalars<T> {
    fn new(qi: &DVector<T>, qj: &DVector<T>, space: SpaceForm) -> Self {
        let sigma = space.sigma_real::<T>();
        let half = T::lit(0.5);
        let delta = qi - qj;
        let sum = qi + qj;
        let gap = inner_unchecked(&delta, &delta, space) * half;
        let plus = inner_unchecked(&sum, &sum, space) * half;
        Self {
            c: inner_unchecked(qi, qj, space),
            gap,
            plus,
            denominator: sigma * gap * plus,
        }
    }
}

/// Evaluate both sides of
/// `2 sum_{i != j in C} m_i m_j (Q_j - sigma c_ij Q_i) / D_ij^{3/2}
///   = sum_{i != j in C} m_i m_j (Q_i + Q_j) / (D_ij^{1/2} sigma (1 + sigma c_ij))`,
/// `c_ij = Q_i ⊙ Q_j`, `D_ij = sigma - sigma c_ij^2`, independently.
pub fn curved_cluster_identity<T: Real>(
    q: &[DVector<T>],
    masses: &[T],
    space: SpaceForm,
    cluster: &[usize],
) -> Result<ClusterIdentityResult> {
    if space.is_flat() {
        return Err(Error::InvalidInput("the cluster identity is for curved spaces".into()));
    }
    if masses.len() != q.len() {
        return Err(Error::DimensionMismatch {
            expected: q.len(),
            got: masses.len(),
        });
    }
    check_cluster(cluster, q.len())?;
    check_on_manifold(q, space)?;
    let sigma = space.sigma_real::<T>();
    let d = space.ambient_dim();
    let mut lhs = DVector::<T>::zeros(d);
    let mut rhs = DVector::<T>::zeros(d);
    let mut literal = DVector::<T>::zeros(d);
    let mut scale = T::zero();
    let two = T::lit(2.0);
    for &i in cluster {
        for &j in cluster {
            if i == j {
                continue;
            }
            let p = PairScalars::new(&q[i], &q[j], space);
            if !(p.denominator.abs() > T::lit(crate::dynamics::SINGULARITY_GUARD)) {
                return Err(Error::AntipodalOrCoincidentSingularity { i: i.min(j), j: i.max(j) });
            }
            let w = masses[i] * masses[j];
            // Q_j - sigma c Q_i = (Q_j - Q_i) + sigma (sigma - c) Q_i
            let v = &q[j] - &q[i] + &q[i] * (sigma * p.gap);
            let term = v * (two * w / (p.denominator * p.denominator.sqrt()));
            scale += term.norm();
            lhs += term;
            let sum = &q[i] + &q[j];
            let root = p.denominator.sqrt();
            rhs += &sum * (w / (root * sigma * (T::one() + sigma * p.c)));
            literal += &sum * (w / (root * sigma * (T::one() + p.c)));
        }
    }
    let ln = lhs.norm();
    let rel = |other: &DVector<T>| -> f64 {
        let gap = (&lhs - other).norm();
        if gap == T::zero() {
            0.0
        } else {
            (gap / ln).as_f64()
        }
    };
    Ok(ClusterIdentityResult {
        cluster: cluster.to_vec(),
        lhs_norm: ln.as_f64(),
        relative_residual: rel(&rhs),
        scaled_residual: if scale > T::zero() { ((&lhs - &rhs).norm() / scale).as_f64() } else { 0.0 },
        literal_relative_residual: rel(&literal),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentityBatchResult {
    pub space: SpaceForm,
    pub seed: u64,
    pub count: usize,
    pub max_bodies: usize,
    pub max_relative_residual: f64,
    pub max_scaled_residual: f64,
    /// Same statistic under the literal denominator reading.
    pub max_literal_relative_residual: f64,
    /// Reading that makes the identity exact in this space.
    pub resolved_reading: DenominatorReading,
    /// True when both readings pass (they coincide on the sphere).
    pub readings_coincide: bool,
}

/// Random point of `S^k` or the upper sheet of `H^k`.
pub fn random_point<R: Rng>(rng: &mut R, space: SpaceForm) -> DVector<f64> {
    let k = space.k();
    match space.sigma() {
        Some(1) => loop {
            let x = DVector::<f64>::from_fn(k + 1, |_, _| rng.gen_range(-1.0..1.0));
            let n = x.norm();
            if n > 0.1 && n <= 1.0 {
                return x / n;
            }
        },
        _ => {
            let mut x = DVector::<f64>::from_fn(k + 1, |_, _| rng.gen_range(-2.0..2.0));
            let r2: f64 = x.rows(0, k).norm_squared();
            x[k] = (1.0 + r2).sqrt();
            x
        }
    }
}

/// Random configuration with pairwise products kept `1e-3` away from the
/// singular values.
pub fn random_configuration<R: Rng>(rng: &mut R, space: SpaceForm, n: usize) -> (Vec<DVector<f64>>, Vec<f64>) {
    let sigma = space.sigma().unwrap_or(1) as f64;
    loop {
        let q: Vec<_> = (0..n).map(|_| random_point(rng, space)).collect();
        let ok = (0..n).all(|i| {
            (i + 1..n).all(|j| {
                let c = inner_unchecked(&q[i], &q[j], space);
                (sigma - sigma * c * c).abs() > 1e-3
            })
        });
        if ok {
            let m = (0..n).map(|_| rng.gen_range(0.5..2.0)).collect();
            return (q, m);
        }
    }
}

/// Check the identity on `count` random configurations with `2..=max_bodies`
/// bodies and the full cluster. Configuration `i` uses its own generator
/// seeded by `seed + i`, so results do not depend on thread scheduling.
pub fn cluster_identity_batch(space: SpaceForm, count: usize, max_bodies: usize, seed: u64) -> Result<IdentityBatchResult> {
    if space.is_flat() {
        return Err(Error::InvalidInput("the cluster identity is for curved spaces".into()));
    }
    if max_bodies < 2 || count == 0 {
        return Err(Error::InvalidInput("need count >= 1 and max_bodies >= 2".into()));
    }
    let results: Vec<ClusterIdentityResult> = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
            let n = rng.gen_range(2..=max_bodies);
            let (q, m) = random_configuration(&mut rng, space, n);
            let cluster: Vec<usize> = (0..n).collect();
            curved_cluster_identity(&q, &m, space, &cluster)
        })
        .collect::<Result<_>>()?;
    let max = |f: fn(&ClusterIdentityResult) -> f64| results.iter().map(f).fold(0.0, f64::max);
    let rel = max(|r| r.relative_residual);
    let lit = max(|r| r.literal_relative_residual);
    Ok(IdentityBatchResult {
        space,
        seed,
        count,
        max_bodies,
        max_relative_residual: rel,
        max_scaled_residual: max(|r| r.scaled_residual),
        max_literal_relative_residual: lit,
        resolved_reading: if lit <= IDENTITY_TOL { DenominatorReading::Literal } else { DenominatorReading::SigmaCorrected },
        readings_coincide: rel <= IDENTITY_TOL && lit <= IDENTITY_TOL,
    })
}

// ---------------------------------------------------------------- curved divergence

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterRow {
    pub s: f64,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterProbeResult {
    pub space: SpaceForm,
    pub cluster: Vec<usize>,
    pub epsilon: f64,
    pub rows: Vec<ClusterRow>,
    /// Log-log slope of the right side on the last decade.
    pub rhs_slope: f64,
    pub lhs_min: f64,
    pub lhs_max: f64,
    /// `max |lhs| / |lhs(s_max)|`.
    pub lhs_band_ratio: f64,
    /// Largest scaled identity residual over the probed configurations.
    pub identity_residual_max: f64,
    /// Smallest pairwise product met along the path.
    pub min_pair_product: f64,
    pub max_norm: f64,
}

impl ClusterProbeResult {
    /// Asserted properties: divergence threshold below `s_threshold`,
    /// slope within `slope_window` of `-1`, bounded left side, identity.
    pub fn invariants(&self, threshold: f64, s_threshold: f64, slope_window: f64) -> Vec<ConditionOutcome> {
        let small: Vec<&ClusterRow> = self.rows.iter().filter(|r| r.s <= s_threshold).collect();
        let min_small = small.iter().map(|r| r.rhs).fold(f64::INFINITY, f64::min);
        vec![
            ConditionOutcome {
                name: "rhs_divergence".into(),
                passed: !small.is_empty() && min_small > threshold,
                detail: format!(
                    "min right side over {} points with s <= {s_threshold:e}: {min_small:.4e} (threshold {threshold:e})",
                    small.len()
                ),
            },
            ConditionOutcome {
                name: "rhs_slope".into(),
                passed: (self.rhs_slope + 1.0).abs() <= slope_window,
                detail: format!("fitted {:.5}, expected -1 ± {slope_window}", self.rhs_slope),
            },
            ConditionOutcome {
                name: "lhs_band".into(),
                passed: self.lhs_min.is_finite() && self.lhs_max.is_finite() && self.lhs_band_ratio <= BAND_FACTOR,
                detail: format!(
                    "left side in [{:.6e}, {:.6e}], {:.4}x its value at the largest s",
                    self.lhs_min, self.lhs_max, self.lhs_band_ratio
                ),
            },
            ConditionOutcome {
                name: "identity".into(),
                passed: self.identity_residual_max <= IDENTITY_TOL,
                detail: format!("max scaled residual {:.3e}", self.identity_residual_max),
            },
        ]
    }
}

/// Evaluate both sides of the cluster relation along a collapsing path.
///
/// Left: `(sum_{i in C} m_i B_i - B_2) ⊙ Q_1`, with
/// `B_i = G^2 Q_i + sigma (G Q_i ⊙ G Q_i) Q_i` and
/// `B_2 = sum_{i in C, j not in C} m_i m_j (Q_j - sigma c_ij Q_i) / D_ij^{3/2}`.
/// Right: `1/2 sum_{i != j in C} m_i m_j (Q_i + Q_j) ⊙ Q_1 / (D_ij^{1/2} (sigma + c_ij))`,
/// where `sigma (1 + sigma c) = sigma + c` and `D = sigma (sigma - c)(sigma + c)`
/// are evaluated through `sigma - c = (Q_i - Q_j) ⊙ (Q_i - Q_j) / 2` to keep
/// full precision for nearby points.
///
/// On the sphere every pair must satisfy `Q_i ⊙ Q_j > -1 + epsilon`.
pub fn curved_cluster_divergence<T: Real>(
    masses: &[T],
    gen: &RotationGenerator<T>,
    path: &dyn ProbePath<T>,
    cluster: &[usize],
    s_grid: &[f64],
    epsilon: f64,
) -> Result<ClusterProbeResult> {
    let space = gen.space();
    if space.is_flat() {
        return Err(Error::InvalidInput("the cluster probe is for curved spaces".into()));
    }
    if cluster.len() < 2 || !cluster.contains(&0) {
        return Err(Error::InvalidInput("the cluster needs at least two bodies including body 1".into()));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidInput(format!("epsilon must lie in (0, 1), got {epsilon}")));
    }
    check_cluster(cluster, masses.len())?;
    check_grid(s_grid, 1e-8)?;
    let sigma = space.sigma_real::<T>();
    let sphere = space.sigma() == Some(1);
    let outside: Vec<usize> = (0..masses.len()).filter(|i| !cluster.contains(i)).collect();
    let diameter = |q: &[DVector<T>]| -> f64 {
        let mut d = 0.0f64;
        for &i in cluster {
            for &j in cluster {
                d = d.max((&q[i] - &q[j]).norm().as_f64());
            }
        }
        d
    };
    let separation = |q: &[DVector<T>]| -> f64 {
        let mut d = f64::INFINITY;
        for &i in cluster {
            for &j in &outside {
                d = d.min((&q[i] - &q[j]).norm().as_f64());
            }
        }
        d
    };
    let far0 = separation(&path.positions(T::lit(s_grid[0])));
    let g = gen.matrix();

    struct Point {
        row: ClusterRow,
        identity: f64,
        min_product: f64,
        max_norm: f64,
    }

    let points: Vec<Point> = s_grid
        .par_iter()
        .map(|&s64| -> Result<Point> {
            let q = path.positions(T::lit(s64));
            if q.len() != masses.len() {
                return Err(Error::DimensionMismatch {
                    expected: masses.len(),
                    got: q.len(),
                });
            }
            check_on_manifold(&q, space).map_err(|e| Error::PathViolation(e.to_string()))?;
            let diam = diameter(&q);
            if (diam - s64).abs() > 1e-9 * s64 {
                return Err(Error::PathViolation(format!("cluster diameter {diam:e} at s = {s64:e}")));
            }
            if !outside.is_empty() && separation(&q) < (2.0 * s64).max(0.5 * far0) {
                return Err(Error::PathViolation(format!("a far body approaches the cluster at s = {s64:e}")));
            }
            let mut min_product = f64::INFINITY;
            for i in 0..q.len() {
                for j in i + 1..q.len() {
                    let c = inner_unchecked(&q[i], &q[j], space).as_f64();
                    min_product = min_product.min(c);
                    if sphere && c <= -1.0 + epsilon {
                        return Err(Error::AntipodalGuardViolation { i, j, inner: c });
                    }
                }
            }

            let q1 = &q[0];
            let mut left = T::zero();
            for &i in cluster {
                let gq = g * &q[i];
                let b = g * &gq + &q[i] * (sigma * inner_unchecked(&gq, &gq, space));
                left += masses[i] * inner_unchecked(&b, q1, space);
                for &j in &outside {
                    let c = inner_unchecked(&q[i], &q[j], space);
                    let dd = sigma - sigma * c * c;
                    let v = &q[j] - &q[i] * (sigma * c);
                    left -= masses[i] * masses[j] * inner_unchecked(&v, q1, space) / (dd * dd.sqrt());
                }
            }
            let mut right = T::zero();
            for &i in cluster {
                for &j in cluster {
                    if i == j {
                        continue;
                    }
                    let p = PairScalars::new(&q[i], &q[j], space);
                    let sum = &q[i] + &q[j];
                    right += masses[i] * masses[j] * inner_unchecked(&sum, q1, space) / (p.denominator.sqrt() * p.plus);
                }
            }
            right /= T::lit(2.0);
            let identity = curved_cluster_identity(&q, masses, space, cluster)?.scaled_residual;
            Ok(Point {
                row: ClusterRow {
                    s: s64,
                    lhs: left.as_f64(),
                    rhs: right.as_f64(),
                },
                identity,
                min_product,
                max_norm: q.iter().map(|x| x.norm().as_f64()).fold(0.0, f64::max),
            })
        })
        .collect::<Result<_>>()?;

    let s: Vec<f64> = points.iter().map(|p| p.row.s).collect();
    let rhs: Vec<f64> = points.iter().map(|p| p.row.rhs).collect();
    let lhs0 = points[0].row.lhs.abs();
    let lhs_abs_max = points.iter().map(|p| p.row.lhs.abs()).fold(0.0, f64::max);
    Ok(ClusterProbeResult {
        space,
        cluster: cluster.to_vec(),
        epsilon,
        rhs_slope: fit_last_decade(&s, &rhs)?,
        lhs_min: points.iter().map(|p| p.row.lhs).fold(f64::INFINITY, f64::min),
        lhs_max: points.iter().map(|p| p.row.lhs).fold(f64::NEG_INFINITY, f64::max),
        lhs_band_ratio: if lhs0 > 0.0 { lhs_abs_max / lhs0 } else if lhs_abs_max == 0.0 { 1.0 } else { f64::INFINITY },
        identity_residual_max: points.iter().map(|p| p.identity).fold(0.0, f64::max),
        min_pair_product: points.iter().map(|p| p.min_product).fold(f64::INFINITY, f64::min),
        max_norm: points.iter().map(|p| p.max_norm).fold(0.0, f64::max),
        rows: points.into_iter().map(|p| p.row).collect(),
    })
}

#[cfg(test)]
mod tests;
