//! Interaction functions `f` for the flat equations of motion
//! `q_i'' = sum_j m_j (q_j - q_i) f(|q_j - q_i|)`.
//!
//! Builtin laws are the quasi-homogeneous two-power family
//! `f(x) = a x^-alpha + b x^-beta` and two named members of it. Opaque laws
//! plug in through [`CustomLaw`]; their admissibility is established by
//! sampling ([`admissibility_check`]).

use std::fmt::Debug;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Behaviour of `f(x)` as `x` decreases to zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LimitSign {
    PlusInfinity,
    MinusInfinity,
}

impl LimitSign {
    fn factor<T: Real>(self) -> T {
        match self {
            LimitSign::PlusInfinity => T::one(),
            LimitSign::MinusInfinity => -T::one(),
        }
    }
}

/// Extension point for interaction functions given only as values.
///
/// Implementations must be pure: the same `x` always yields the same value.
pub trait CustomLaw<T: Real>: Debug + Send + Sync {
    fn name(&self) -> &str;
    fn f(&self, x: T) -> T;
    /// `f'(x)`.
    fn derivative(&self, x: T) -> T;
}

#[derive(Debug, Clone)]
pub enum LawKind<T: Real> {
    QuasiHomogeneous { a: T, alpha: T, b: T, beta: T },
    /// `f(x) = x^-3`, the inverse-square force.
    Newtonian,
    /// `f(x) = x^-3/2`.
    ThreeHalves,
    Custom(Arc<dyn CustomLaw<T>>),
}

#[derive(Debug, Clone)]
pub struct ForceLaw<T: Real> {
    kind: LawKind<T>,
    limit_sign: LimitSign,
    compactness_flag: bool,
}

impl<T: Real> ForceLaw<T> {
    pub fn newtonian() -> Self {
        Self {
            kind: LawKind::Newtonian,
            limit_sign: LimitSign::PlusInfinity,
            compactness_flag: true,
        }
    }

    pub fn three_halves() -> Self {
        Self {
            kind: LawKind::ThreeHalves,
            limit_sign: LimitSign::PlusInfinity,
            compactness_flag: true,
        }
    }

    pub fn quasi_homogeneous(a: T, alpha: T, b: T, beta: T) -> Result<Self> {
        if !(alpha > T::zero()) || !(beta > T::zero()) {
            return Err(Error::InvalidInput(format!(
                "exponents must be positive (alpha = {alpha}, beta = {beta})"
            )));
        }
        let (coef, gamma) = dominant_term(a, alpha, b, beta);
        if coef == T::zero() {
            return Err(Error::InvalidInput(
                "dominant coefficient vanishes: f does not diverge at 0".into(),
            ));
        }
        let limit_sign = if coef > T::zero() {
            LimitSign::PlusInfinity
        } else {
            LimitSign::MinusInfinity
        };
        // x f(x) must diverge at 0 and stay bounded at infinity, so no live
        // term may have exponent below one.
        let tail_bounded = (a == T::zero() || alpha >= T::one()) && (b == T::zero() || beta >= T::one());
        Ok(Self {
            kind: LawKind::QuasiHomogeneous { a, alpha, b, beta },
            limit_sign,
            compactness_flag: gamma > T::one() && tail_bounded,
        })
    }

    /// Pure power `x^-alpha`.
    pub fn power(alpha: T) -> Result<Self> {
        Self::quasi_homogeneous(T::one(), alpha, T::zero(), T::one())
    }

    /// Wrap an opaque law with declared asymptotics.
    pub fn custom(law: Arc<dyn CustomLaw<T>>, limit_sign: LimitSign, compactness_flag: bool) -> Self {
        Self {
            kind: LawKind::Custom(law),
            limit_sign,
            compactness_flag,
        }
    }

    pub fn kind(&self) -> &LawKind<T> {
        &self.kind
    }

    pub fn limit_sign(&self) -> LimitSign {
        self.limit_sign
    }

    pub fn compactness_flag(&self) -> bool {
        self.compactness_flag
    }

    pub fn name(&self) -> String {
        match &self.kind {
            LawKind::QuasiHomogeneous { .. } => "quasi_homogeneous".into(),
            LawKind::Newtonian => "newtonian".into(),
            LawKind::ThreeHalves => "three_halves".into(),
            LawKind::Custom(c) => c.name().to_string(),
        }
    }

    /// Leading exponent of a power-type law, used for exponent continuation.
    pub fn leading_exponent(&self) -> Option<T> {
        match &self.kind {
            LawKind::QuasiHomogeneous { alpha, .. } => Some(*alpha),
            LawKind::Newtonian => Some(T::lit(3.0)),
            LawKind::ThreeHalves => Some(T::lit(1.5)),
            LawKind::Custom(_) => None,
        }
    }

    /// Exponent of the term dominating as `x -> 0`: `f(x) ~ C x^-e`.
    pub fn dominant_exponent(&self) -> Option<T> {
        match &self.kind {
            LawKind::QuasiHomogeneous { a, alpha, b, beta } => Some(dominant_term(*a, *alpha, *b, *beta).1),
            _ => self.leading_exponent(),
        }
    }

    /// Replace the leading exponent (`alpha`), turning named powers into the
    /// equivalent quasi-homogeneous law first.
    pub fn with_leading_exponent(&self, alpha: T) -> Result<Self> {
        match &self.kind {
            LawKind::QuasiHomogeneous { a, b, beta, .. } => Self::quasi_homogeneous(*a, alpha, *b, *beta),
            LawKind::Newtonian | LawKind::ThreeHalves => Self::power(alpha),
            LawKind::Custom(_) => Err(Error::InvalidInput(
                "custom laws have no exponent parameter".into(),
            )),
        }
    }

    /// `f(x)` for `x > 0`.
    pub fn eval(&self, x: T) -> Result<T> {
        check_positive(x)?;
        Ok(self.f(x))
    }

    /// `x f'(x)` for `x > 0`.
    pub fn eval_xfprime(&self, x: T) -> Result<T> {
        check_positive(x)?;
        Ok(self.xfprime(x))
    }

    #[inline]
    pub(crate) fn f(&self, x: T) -> T {
        match &self.kind {
            LawKind::QuasiHomogeneous { a, alpha, b, beta } => {
                let mut v = *a * x.powf(-*alpha);
                if *b != T::zero() {
                    v += *b * x.powf(-*beta);
                }
                v
            }
            LawKind::Newtonian => {
                let r = x.recip();
                r * r * r
            }
            LawKind::ThreeHalves => (x * x * x).sqrt().recip(),
            LawKind::Custom(c) => c.f(x),
        }
    }

    #[inline]
    pub(crate) fn xfprime(&self, x: T) -> T {
        match &self.kind {
            LawKind::QuasiHomogeneous { a, alpha, b, beta } => {
                let mut v = -(*a * *alpha) * x.powf(-*alpha);
                if *b != T::zero() {
                    v -= *b * *beta * x.powf(-*beta);
                }
                v
            }
            LawKind::Newtonian => {
                let r = x.recip();
                -T::lit(3.0) * r * r * r
            }
            LawKind::ThreeHalves => -T::lit(1.5) / (x * x * x).sqrt(),
            LawKind::Custom(c) => x * c.derivative(x),
        }
    }

    /// `f'(x)`.
    #[inline]
    pub(crate) fn derivative(&self, x: T) -> T {
        match &self.kind {
            LawKind::Custom(c) => c.derivative(x),
            _ => self.xfprime(x) / x,
        }
    }
}

fn check_positive<T: Real>(x: T) -> Result<()> {
    if !(x > T::zero()) {
        return Err(Error::NonPositiveDistance(x.as_f64()));
    }
    Ok(())
}

/// Coefficient and exponent of the term that dominates as `x -> 0`.
fn dominant_term<T: Real>(a: T, alpha: T, b: T, beta: T) -> (T, T) {
    if b == T::zero() {
        (a, alpha)
    } else if a == T::zero() {
        (b, beta)
    } else if alpha > beta {
        (a, alpha)
    } else if beta > alpha {
        (b, beta)
    } else {
        (a + b, alpha)
    }
}

/// Serializable description of a law, as it appears in run configurations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LawSpec {
    QuasiHomogeneous {
        a: f64,
        alpha: f64,
        #[serde(default)]
        b: f64,
        #[serde(default = "one")]
        beta: f64,
    },
    Newtonian {},
    ThreeHalves {},
    /// One of the laws in [`named_custom_law`].
    Custom { name: String },
}

fn one() -> f64 {
    1.0
}

impl LawSpec {
    pub fn build<T: Real>(&self) -> Result<ForceLaw<T>> {
        match self {
            LawSpec::QuasiHomogeneous { a, alpha, b, beta } => {
                ForceLaw::quasi_homogeneous(T::lit(*a), T::lit(*alpha), T::lit(*b), T::lit(*beta))
            }
            LawSpec::Newtonian {} => Ok(ForceLaw::newtonian()),
            LawSpec::ThreeHalves {} => Ok(ForceLaw::three_halves()),
            LawSpec::Custom { name } => named_custom_law(name)
                .ok_or_else(|| Error::InvalidInput(format!("unknown custom law '{name}'"))),
        }
    }
}

#[derive(Debug)]
struct SinInverse;

impl<T: Real> CustomLaw<T> for SinInverse {
    fn name(&self) -> &str {
        "sin_inverse"
    }
    fn f(&self, x: T) -> T {
        x.recip().sin()
    }
    fn derivative(&self, x: T) -> T {
        -x.recip().cos() / (x * x)
    }
}

#[derive(Debug)]
struct InverseCubePlusDecay;

impl<T: Real> CustomLaw<T> for InverseCubePlusDecay {
    fn name(&self) -> &str {
        "inverse_cube_plus_decay"
    }
    fn f(&self, x: T) -> T {
        x.powi(-3) + (-x).exp()
    }
    fn derivative(&self, x: T) -> T {
        -T::lit(3.0) * x.powi(-4) - (-x).exp()
    }
}

/// Named opaque laws reachable from configuration files.
///
/// - `sin_inverse`: `sin(1/x)`, bounded near zero (not admissible).
/// - `inverse_cube_plus_decay`: `x^-3 + e^-x`.
pub fn named_custom_law<T: Real>(name: &str) -> Option<ForceLaw<T>> {
    match name {
        "sin_inverse" => Some(ForceLaw::custom(Arc::new(SinInverse), LimitSign::PlusInfinity, false)),
        "inverse_cube_plus_decay" => Some(ForceLaw::custom(
            Arc::new(InverseCubePlusDecay),
            LimitSign::PlusInfinity,
            true,
        )),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdmissibilityOptions {
    pub delta: f64,
    pub x_max: f64,
    pub grid_size: usize,
    /// Required growth of `|f|` at `divergence_x_min`, relative to `|f(1)|`.
    pub divergence_threshold: f64,
    pub divergence_x_min: f64,
    /// Allowed relative disagreement between `x f'` and its finite difference.
    pub derivative_rel_tol: f64,
}

impl Default for AdmissibilityOptions {
    fn default() -> Self {
        Self {
            delta: 1e-3,
            x_max: 1e3,
            grid_size: 200,
            divergence_threshold: 1e6,
            divergence_x_min: 1e-8,
            derivative_rel_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    pub law: String,
    pub conditions: Vec<ConditionOutcome>,
    pub limit_sign: LimitSign,
    pub observed_limit_sign: Option<LimitSign>,
    /// Sampled: `|x f(x)|` grows strictly toward zero and does not exceed its
    /// value at `delta` on the upper half of the grid.
    pub compactness_flag: bool,
    pub declared_compactness_flag: bool,
}

impl AdmissibilityReport {
    pub fn passed(&self) -> bool {
        self.conditions.iter().all(|c| c.passed)
    }

    pub fn first_failure(&self) -> Option<&ConditionOutcome> {
        self.conditions.iter().find(|c| !c.passed)
    }

    pub fn ensure(self) -> Result<Self> {
        match self.first_failure() {
            Some(c) => Err(Error::AdmissibilityFailure {
                condition: c.name.clone(),
            }),
            None => Ok(self),
        }
    }
}

/// Log-spaced grid of `n` points over `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (l0, l1) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (l0 + (l1 - l0) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

/// Sample every condition and return the full report without failing.
pub fn admissibility_report<T: Real>(law: &ForceLaw<T>, opts: &AdmissibilityOptions) -> Result<AdmissibilityReport> {
    if !(opts.delta > 0.0 && opts.delta < opts.x_max) || opts.grid_size < 2 {
        return Err(Error::InvalidInput(format!(
            "need 0 < delta < x_max and grid_size >= 2 (delta = {}, x_max = {}, grid_size = {})",
            opts.delta, opts.x_max, opts.grid_size
        )));
    }
    let grid = log_grid(opts.delta, opts.x_max, opts.grid_size);
    let mut conditions = Vec::new();

    // bounded and finite away from zero
    let mut worst: Option<(f64, f64, f64)> = None;
    for &x in &grid {
        let xt = T::lit(x);
        let (f, xfp) = (law.f(xt).as_f64(), law.xfprime(xt).as_f64());
        if !(f.is_finite() && xfp.is_finite()) {
            worst = Some((x, f, xfp));
            break;
        }
    }
    conditions.push(ConditionOutcome {
        name: "bounded_on_grid".into(),
        passed: worst.is_none(),
        detail: match worst {
            None => format!("f and x f' finite on {} log-spaced points in [{}, {}]", grid.len(), opts.delta, opts.x_max),
            Some((x, f, xfp)) => format!("non-finite value at x = {x}: f = {f}, x f' = {xfp}"),
        },
    });

    // differentiability: x f' against a central difference
    let mut max_err = 0.0f64;
    let mut at = opts.delta;
    for &x in &grid {
        let h = 1e-6 * x;
        let fd = x * (law.f(T::lit(x + h)).as_f64() - law.f(T::lit(x - h)).as_f64()) / (2.0 * h);
        let an = law.xfprime(T::lit(x)).as_f64();
        let scale = an.abs().max(law.f(T::lit(x)).as_f64().abs()).max(f64::MIN_POSITIVE);
        let err = (fd - an).abs() / scale;
        if err > max_err || !err.is_finite() {
            max_err = if err.is_finite() { err } else { f64::INFINITY };
            at = x;
        }
    }
    let fd_tol = opts.derivative_rel_tol.max(10.0 * T::eps().as_f64().cbrt() * T::eps().as_f64().cbrt());
    conditions.push(ConditionOutcome {
        name: "derivative_consistent".into(),
        passed: max_err <= fd_tol,
        detail: format!("max relative finite-difference disagreement {max_err:.3e} at x = {at:.3e}"),
    });

    // divergence toward zero with the declared sign
    let sign = law.limit_sign().factor::<T>().as_f64();
    let mut seq = Vec::new();
    let mut x = 1.0f64;
    while x >= opts.divergence_x_min * (1.0 - 1e-12) {
        seq.push(x);
        x /= 10.0;
    }
    let fs: Vec<f64> = seq.iter().map(|&x| law.f(T::lit(x)).as_f64()).collect();
    let monotone = fs.windows(2).all(|w| sign * w[1] > sign * w[0]);
    let f1 = fs[0].abs().max(if fs[0] == 0.0 { 1.0 } else { 0.0 });
    let last = *fs.last().unwrap();
    let big_enough = sign * last >= opts.divergence_threshold * f1;
    conditions.push(ConditionOutcome {
        name: "divergence_at_zero".into(),
        passed: monotone && big_enough,
        detail: format!(
            "sign-adjusted f monotone toward 0: {monotone}; f({:.0e}) = {last:.3e}, required {:.3e}",
            seq.last().unwrap(),
            opts.divergence_threshold * f1
        ),
    });

    let observed = if monotone && last.is_finite() && last.abs() > fs[0].abs() {
        Some(if last > 0.0 {
            LimitSign::PlusInfinity
        } else {
            LimitSign::MinusInfinity
        })
    } else {
        None
    };
    conditions.push(ConditionOutcome {
        name: "limit_sign_consistent".into(),
        passed: observed == Some(law.limit_sign()),
        detail: format!("declared {:?}, observed {:?}", law.limit_sign(), observed),
    });

    // compactness: x f(x) grows in magnitude toward zero, bounded far out
    let xf: Vec<f64> = seq.iter().zip(&fs).map(|(x, f)| (x * f).abs()).collect();
    let grows = xf.windows(2).skip(1).all(|w| w[1] > w[0]);
    let at_delta = (opts.delta * law.f(T::lit(opts.delta)).as_f64()).abs();
    let tail_max = grid[grid.len() / 2..]
        .iter()
        .map(|&x| (x * law.f(T::lit(x)).as_f64()).abs())
        .fold(0.0, f64::max);
    let compactness_flag = grows && tail_max <= at_delta;

    Ok(AdmissibilityReport {
        law: law.name(),
        conditions,
        limit_sign: law.limit_sign(),
        observed_limit_sign: observed,
        compactness_flag,
        declared_compactness_flag: law.compactness_flag(),
    })
}

/// Sample the admissibility conditions; fails naming the first violated one.
pub fn admissibility_check<T: Real>(
    law: &ForceLaw<T>,
    delta: f64,
    x_max: f64,
    grid_size: usize,
) -> Result<AdmissibilityReport> {
    let opts = AdmissibilityOptions {
        delta,
        x_max,
        grid_size,
        ..Default::default()
    };
    admissibility_report(law, &opts)?.ensure()
}
