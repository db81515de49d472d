//! Ambient-space arithmetic for flat space and the constant-curvature models.
//!
//! A curved space of dimension `k` lives in `R^{k+1}` as the level set
//! `x_1^2 + ... + x_k^2 + sigma x_{k+1}^2 = sigma`, with the signed product
//! `x ⊙ y = x_1 y_1 + ... + x_k y_k + sigma x_{k+1} y_{k+1}`. Isometries are
//! realized as one-parameter groups `exp(tG)` of a generator that is skew for
//! the relevant product.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpaceKind {
    Flat,
    Sphere,
    Hyperboloid,
}

/// Ambient space descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawSpace", into = "RawSpace")]
pub struct SpaceForm {
    kind: SpaceKind,
    k: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpace {
    kind: SpaceKind,
    k: usize,
}

impl TryFrom<RawSpace> for SpaceForm {
    type Error = Error;
    fn try_from(raw: RawSpace) -> Result<Self> {
        SpaceForm::new(raw.kind, raw.k)
    }
}

impl From<SpaceForm> for RawSpace {
    fn from(s: SpaceForm) -> Self {
        RawSpace { kind: s.kind, k: s.k }
    }
}

impl SpaceForm {
    pub fn new(kind: SpaceKind, k: usize) -> Result<Self> {
        let min = match kind {
            SpaceKind::Flat => 1,
            SpaceKind::Sphere | SpaceKind::Hyperboloid => 2,
        };
        if k < min {
            return Err(Error::InvalidSpace(format!(
                "{kind:?} requires k >= {min}, got {k}"
            )));
        }
        Ok(Self { kind, k })
    }

    pub fn flat(k: usize) -> Result<Self> {
        Self::new(SpaceKind::Flat, k)
    }

    pub fn sphere(k: usize) -> Result<Self> {
        Self::new(SpaceKind::Sphere, k)
    }

    pub fn hyperboloid(k: usize) -> Result<Self> {
        Self::new(SpaceKind::Hyperboloid, k)
    }

    pub fn kind(&self) -> SpaceKind {
        self.kind
    }

    /// Manifold dimension.
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn is_flat(&self) -> bool {
        self.kind == SpaceKind::Flat
    }

    pub fn ambient_dim(&self) -> usize {
        match self.kind {
            SpaceKind::Flat => self.k,
            _ => self.k + 1,
        }
    }

    /// `+1` on the sphere, `-1` on the hyperboloid, `None` in flat space.
    pub fn sigma(&self) -> Option<i8> {
        match self.kind {
            SpaceKind::Flat => None,
            SpaceKind::Sphere => Some(1),
            SpaceKind::Hyperboloid => Some(-1),
        }
    }

    /// Curvature sign as a scalar; `1` in flat space, whose product is
    /// Euclidean in every slot.
    pub fn sigma_real<T: Real>(&self) -> T {
        match self.kind {
            SpaceKind::Hyperboloid => -T::one(),
            _ => T::one(),
        }
    }

    /// Diagonal of the Gram matrix of the ambient product.
    pub fn metric_diagonal<T: Real>(&self) -> DVector<T> {
        let n = self.ambient_dim();
        let mut d = DVector::from_element(n, T::one());
        if !self.is_flat() {
            d[n - 1] = self.sigma_real();
        }
        d
    }

    pub fn check_dim<T: Real>(&self, x: &DVector<T>) -> Result<()> {
        if x.len() != self.ambient_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.ambient_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }
}

/// Euclidean dot product (flat) or the signed product `⊙` (curved).
pub fn inner<T: Real>(x: &DVector<T>, y: &DVector<T>, space: SpaceForm) -> Result<T> {
    space.check_dim(x)?;
    space.check_dim(y)?;
    Ok(inner_unchecked(x, y, space))
}

#[inline]
pub(crate) fn inner_unchecked<T: Real>(x: &DVector<T>, y: &DVector<T>, space: SpaceForm) -> T {
    let n = x.len();
    let mut acc = T::zero();
    for i in 0..n {
        acc += x[i] * y[i];
    }
    if space.kind == SpaceKind::Hyperboloid {
        // last slot carries sigma = -1: replace +x y by -x y
        acc -= (x[n - 1] * y[n - 1]) * T::lit(2.0);
    }
    acc
}

/// `|x ⊙ x - sigma| <= tol` on curved spaces; always true in flat space.
pub fn on_manifold<T: Real>(x: &DVector<T>, space: SpaceForm, tol: f64) -> Result<bool> {
    space.check_dim(x)?;
    if tol <= 0.0 {
        return Err(Error::InvalidInput(format!("tolerance must be positive, got {tol}")));
    }
    if space.is_flat() {
        return Ok(true);
    }
    Ok(manifold_defect(x, space).as_f64() <= tol)
}

pub(crate) fn manifold_defect<T: Real>(x: &DVector<T>, space: SpaceForm) -> T {
    if space.is_flat() {
        return T::zero();
    }
    (inner_unchecked(x, x, space) - space.sigma_real::<T>()).abs()
}

/// Rescale `x` onto the manifold along its ray.
///
/// On the hyperboloid the result is placed on the upper sheet.
pub fn project_to_manifold<T: Real>(x: &DVector<T>, space: SpaceForm) -> Result<DVector<T>> {
    space.check_dim(x)?;
    if space.is_flat() {
        return Ok(x.clone());
    }
    let q = space.sigma_real::<T>() * inner_unchecked(x, x, space);
    if q <= T::zero() {
        return Err(Error::OffManifold {
            body: 0,
            defect: manifold_defect(x, space).as_f64(),
        });
    }
    let mut y = x / q.sqrt();
    if space.kind == SpaceKind::Hyperboloid && y[y.len() - 1] < T::zero() {
        y = -y;
    }
    Ok(y)
}

/// Remove the component of `v` normal to the manifold at `q` (assumed on it).
pub fn tangent_projection<T: Real>(q: &DVector<T>, v: &DVector<T>, space: SpaceForm) -> DVector<T> {
    if space.is_flat() {
        return v.clone();
    }
    let sigma = space.sigma_real::<T>();
    v - q * (sigma * inner_unchecked(q, v, space))
}

/// Validated infinitesimal generator `G` of `T(t) = exp(tG)`.
///
/// `a = -G^2` is the operator appearing in the reduced equations; `c1` and
/// `c2` are its smallest and largest singular values on the admissible
/// subspace.
#[derive(Debug, Clone, PartialEq)]
pub struct RotationGenerator<T: Real> {
    g: DMatrix<T>,
    space: SpaceForm,
    a: DMatrix<T>,
    c1: T,
    c2: T,
    range_basis: Option<DMatrix<T>>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GeneratorOptions {
    /// Flat only: accept a singular `-G^2` and confine configurations to the
    /// subspace on which it is definite.
    pub allow_kernel: bool,
}

impl<T: Real> RotationGenerator<T> {
    pub fn matrix(&self) -> &DMatrix<T> {
        &self.g
    }

    pub fn space(&self) -> SpaceForm {
        self.space
    }

    /// `A = -G^2`.
    pub fn a_operator(&self) -> &DMatrix<T> {
        &self.a
    }

    pub fn c1(&self) -> T {
        self.c1
    }

    pub fn c2(&self) -> T {
        self.c2
    }

    /// Orthonormal basis (columns) of the invariant subspace when the kernel
    /// override is active; `None` means the whole ambient space.
    pub fn range_basis(&self) -> Option<&DMatrix<T>> {
        self.range_basis.as_ref()
    }

    /// Same generator scaled by `factor`; `c1`, `c2` scale by `factor^2`.
    pub fn scaled(&self, factor: T) -> Self {
        let f2 = factor * factor;
        Self {
            g: &self.g * factor,
            space: self.space,
            a: &self.a * f2,
            c1: self.c1 * f2,
            c2: self.c2 * f2,
            range_basis: self.range_basis.clone(),
        }
    }

    /// Characteristic period `2 pi / sqrt(c2)`.
    pub fn period(&self) -> T {
        T::two_pi() / self.c2.sqrt()
    }
}

/// Planar rotation generator `[[0, -omega], [omega, 0]]` embedded in the
/// upper-left corner of an `n x n` matrix.
pub fn planar_generator<T: Real>(n: usize, omega: T) -> DMatrix<T> {
    let mut g = DMatrix::zeros(n, n);
    g[(0, 1)] = -omega;
    g[(1, 0)] = omega;
    g
}

/// Check skewness for the space's product and derive `A`, `c1`, `c2`.
pub fn validate_generator<T: Real>(g: DMatrix<T>, space: SpaceForm) -> Result<RotationGenerator<T>> {
    validate_generator_with(g, space, GeneratorOptions::default())
}

pub fn validate_generator_with<T: Real>(
    g: DMatrix<T>,
    space: SpaceForm,
    opts: GeneratorOptions,
) -> Result<RotationGenerator<T>> {
    let n = space.ambient_dim();
    if g.nrows() != n || g.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: if g.nrows() != n { g.nrows() } else { g.ncols() },
        });
    }
    if g.iter().any(|v| !v.is_finite_real()) {
        return Err(Error::InvalidInput("generator has non-finite entries".into()));
    }

    // G^T J + J G = 0 where J is the Gram matrix of the product
    let j = DMatrix::from_diagonal(&space.metric_diagonal::<T>());
    let defect_m = g.transpose() * &j + &j * &g;
    let defect = defect_m.amax();
    let scale = T::one().max(g.amax());
    if defect > T::lit(1e-12) * scale {
        return Err(Error::NotSkew { defect: defect.as_f64() });
    }

    let a = -(&g * &g);
    let sv = a.clone().svd(false, false).singular_values;
    let c2 = sv.max();
    let mut c1 = sv.min();
    let mut range_basis = None;

    if space.is_flat() {
        let cutoff = T::lit(1e-12) * T::one().max(c2);
        if c1 <= cutoff {
            if !opts.allow_kernel || c2 <= cutoff {
                return Err(Error::DegenerateRotation { c1: c1.as_f64() });
            }
            // A is symmetric PSD here; keep eigenvectors with nonzero eigenvalue.
            let eig = a.clone().symmetric_eigen();
            let cols: Vec<DVector<T>> = (0..n)
                .filter(|&i| eig.eigenvalues[i] > cutoff)
                .map(|i| eig.eigenvectors.column(i).into_owned())
                .collect();
            c1 = (0..n)
                .map(|i| eig.eigenvalues[i])
                .filter(|&v| v > cutoff)
                .fold(c2, |m, v| m.min(v));
            range_basis = Some(DMatrix::from_columns(&cols));
        }
    }

    Ok(RotationGenerator {
        g,
        space,
        a,
        c1,
        c2,
        range_basis,
    })
}

/// `exp(tG)`.
pub fn group_element<T: Real>(gen: &RotationGenerator<T>, t: T) -> DMatrix<T> {
    expm(&(gen.matrix() * t))
}

fn norm_one<T: Real>(m: &DMatrix<T>) -> T {
    m.column_iter()
        .map(|c| c.iter().fold(T::zero(), |s, v| s + v.abs()))
        .fold(T::zero(), |a, b| a.max(b))
}

/// Matrix exponential by scaling and squaring around a Taylor core.
///
/// The argument is scaled by `2^-s` until its 1-norm is at most 1/2; the
/// Taylor series is then truncated once a term falls below machine epsilon
/// relative to the partial sum.
pub fn expm<T: Real>(m: &DMatrix<T>) -> DMatrix<T> {
    let n = m.nrows();
    let norm = norm_one(m);
    let half = T::lit(0.5);
    let mut squarings = 0u32;
    let mut scale = T::one();
    while norm * scale > half {
        scale *= half;
        squarings += 1;
    }
    let a = m * scale;
    let mut term = DMatrix::<T>::identity(n, n);
    let mut sum = term.clone();
    for k in 1..=40 {
        term = (&term * &a) / T::lit(k as f64);
        sum += &term;
        if norm_one(&term) <= T::eps() * norm_one(&sum) {
            break;
        }
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}
