//! Run configuration: a strict JSON schema and the conversion into library
//! objects.

use std::path::{Path, PathBuf};

use equilibra::equilibria::{seeds, ContinuationOptions, Parameter, REProblem, SolverOptions};
use equilibra::forcelaw::{ForceLaw, LawSpec};
use equilibra::geometry::{planar_generator, validate_generator, SpaceForm};
use equilibra::dynamics::IntegratorOptions;
use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub space: Option<SpaceForm>,
    pub law: Option<LawSpec>,
    pub masses: Option<Vec<f64>>,
    /// Angular speed of the default generator, which rotates the first two
    /// ambient coordinates.
    pub omega: Option<f64>,
    /// Explicit generator matrix, row major; excludes `omega`.
    pub generator: Option<Vec<Vec<f64>>>,
    pub seed: Option<SeedSpec>,
    pub positions: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub solver: SolverOptions,
    pub admissibility: Option<AdmissibilityConfig>,
    pub sweep: Option<SweepConfig>,
    pub probe: Option<ProbeConfig>,
    pub simulate: Option<SimulateConfig>,
    #[serde(default)]
    pub outputs: OutputConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedName {
    TwoBody,
    Lagrange,
    EulerCollinear,
    SphereLagrange,
    HyperbolicPair,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedSpec {
    pub name: SeedName,
    /// Height of the latitude circle (`sphere_lagrange`).
    pub z0: Option<f64>,
    /// Half of the hyperbolic separation (`hyperbolic_pair`).
    pub half_distance: Option<f64>,
    /// Uniform factor applied to the seed positions before solving.
    #[serde(default = "one")]
    pub scale: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdmissibilityConfig {
    pub delta: f64,
    pub x_max: f64,
    pub grid_size: usize,
}

impl Default for AdmissibilityConfig {
    fn default() -> Self {
        Self {
            delta: 1e-3,
            x_max: 1e3,
            grid_size: 200,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum GridSpec {
    List(Vec<f64>),
    Range(GridRange),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridRange {
    pub start: f64,
    pub stop: f64,
    pub points: usize,
    #[serde(default)]
    pub log: bool,
}

impl GridSpec {
    pub fn values(&self) -> Result<Vec<f64>, CliError> {
        let v = match self {
            GridSpec::List(v) => v.clone(),
            GridSpec::Range(r) => {
                if r.points == 0 {
                    return Err(CliError::Config("grid needs at least one point".into()));
                }
                if r.log && !(r.start > 0.0 && r.stop > 0.0) {
                    return Err(CliError::Config("log grid needs positive end points".into()));
                }
                (0..r.points)
                    .map(|k| {
                        let t = if r.points == 1 { 0.0 } else { k as f64 / (r.points - 1) as f64 };
                        if r.log {
                            (r.start.ln() + t * (r.stop.ln() - r.start.ln())).exp()
                        } else {
                            r.start + t * (r.stop - r.start)
                        }
                    })
                    .collect()
            }
        };
        if v.is_empty() || v.iter().any(|x| !x.is_finite()) {
            return Err(CliError::Config("grid must be non-empty and finite".into()));
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub parameter: Parameter,
    pub grid: GridSpec,
    /// Also issue a boundedness certificate.
    #[serde(default)]
    pub boundedness: bool,
    pub trust_radius: Option<f64>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShrinkGrid {
    pub s_max: f64,
    pub s_min: f64,
    pub per_decade: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProbeConfig {
    DivergenceFlat {
        grid: Option<ShrinkGrid>,
        #[serde(default = "flat_window")]
        slope_window: f64,
        center: Option<Vec<f64>>,
        direction: Option<Vec<f64>>,
        /// Positions of bodies 3..n.
        far: Option<Vec<Vec<f64>>>,
    },
    ClusterIdentity {
        #[serde(default = "identity_count")]
        count: usize,
        #[serde(default = "identity_bodies")]
        max_bodies: usize,
        #[serde(default)]
        rng_seed: u64,
    },
    ClusterDivergence {
        grid: Option<ShrinkGrid>,
        #[serde(default = "cluster_pair")]
        cluster: Vec<usize>,
        #[serde(default = "guard_epsilon")]
        epsilon: f64,
        #[serde(default = "divergence_threshold")]
        threshold: f64,
        #[serde(default = "threshold_s")]
        s_threshold: f64,
        #[serde(default = "curved_window")]
        slope_window: f64,
        anchor: Option<Vec<f64>>,
        direction: Option<Vec<f64>>,
        far: Option<Vec<Vec<f64>>>,
    },
}

fn flat_window() -> f64 {
    0.05
}
fn identity_count() -> usize {
    100
}
fn identity_bodies() -> usize {
    6
}
fn cluster_pair() -> Vec<usize> {
    vec![0, 1]
}
fn guard_epsilon() -> f64 {
    0.1
}
fn divergence_threshold() -> f64 {
    1e6
}
fn threshold_s() -> f64 {
    1e-5
}
fn curved_window() -> f64 {
    0.1
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    /// Horizon in characteristic periods `2 pi / sqrt(c2)`.
    pub periods: Option<f64>,
    /// Horizon in time units; excludes `periods`.
    pub horizon: Option<f64>,
    #[serde(default = "drift_bound")]
    pub drift_bound: f64,
    /// Curved spaces: bound on the constraint drift `|q ⊙ q - sigma|`.
    #[serde(default = "constraint_bound")]
    pub constraint_bound: f64,
    #[serde(default)]
    pub integrator: IntegratorOptions,
    /// RESolution JSON to start from instead of solving.
    pub solution: Option<PathBuf>,
    /// Masses for the integration, when they differ from those of the RE.
    pub integration_masses: Option<Vec<f64>>,
}

fn drift_bound() -> f64 {
    1e-6
}
fn constraint_bound() -> f64 {
    1e-9
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Output directory; `--out` takes precedence.
    pub dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn space(&self) -> Result<SpaceForm, CliError> {
        self.space.ok_or_else(|| CliError::Config("missing key 'space'".into()))
    }

    pub fn law_spec(&self) -> Result<&LawSpec, CliError> {
        self.law.as_ref().ok_or_else(|| CliError::Config("missing key 'law'".into()))
    }

    pub fn law(&self) -> Result<Option<ForceLaw<f64>>, CliError> {
        match (&self.law, self.space()?.is_flat()) {
            (Some(spec), true) => Ok(Some(spec.build().map_err(CliError::config)?)),
            (None, true) => Err(CliError::Config("flat problems need a 'law'".into())),
            (Some(_), false) => Err(CliError::Config(
                "curved problems use the fixed curved interaction; remove 'law'".into(),
            )),
            (None, false) => Ok(None),
        }
    }

    pub fn masses(&self) -> Result<Vec<f64>, CliError> {
        self.masses.clone().ok_or_else(|| CliError::Config("missing key 'masses'".into()))
    }

    pub fn generator_matrix(&self) -> Result<DMatrix<f64>, CliError> {
        let d = self.space()?.ambient_dim();
        match (&self.generator, self.omega) {
            (Some(_), Some(_)) => Err(CliError::Config("give either 'generator' or 'omega', not both".into())),
            (Some(rows), None) => {
                if rows.len() != d || rows.iter().any(|r| r.len() != d) {
                    return Err(CliError::Config(format!("'generator' must be {d} x {d}")));
                }
                Ok(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
            }
            (None, w) => {
                if d < 2 {
                    return Err(CliError::Config("the default generator needs two ambient dimensions".into()));
                }
                Ok(planar_generator(d, w.unwrap_or(1.0)))
            }
        }
    }

    /// Problem defined by the explicit keys (no seed).
    pub fn problem(&self) -> Result<REProblem<f64>, CliError> {
        let gen = validate_generator(self.generator_matrix()?, self.space()?).map_err(CliError::config)?;
        REProblem::new(self.masses()?, self.law()?, gen).map_err(CliError::config)
    }

    /// Problem and starting positions. With `at`, the seed is built for the
    /// parameter already set to that value where the seed allows it.
    pub fn start(&self, at: Option<(Parameter, f64)>) -> Result<(REProblem<f64>, Vec<DVector<f64>>), CliError> {
        match (&self.seed, &self.positions) {
            (Some(_), Some(_)) => Err(CliError::Config("give either 'seed' or 'positions', not both".into())),
            (None, None) => Err(CliError::Config("need 'seed' or 'positions'".into())),
            (None, Some(rows)) => {
                let problem = self.problem()?;
                let d = self.space()?.ambient_dim();
                if rows.len() != problem.len() || rows.iter().any(|r| r.len() != d) {
                    return Err(CliError::Config(format!(
                        "'positions' must hold {} rows of length {d}",
                        problem.len()
                    )));
                }
                Ok((problem, rows.iter().map(|r| DVector::from_vec(r.clone())).collect()))
            }
            (Some(seed), None) => self.seeded(seed, at),
        }
    }

    fn seeded(
        &self,
        spec: &SeedSpec,
        at: Option<(Parameter, f64)>,
    ) -> Result<(REProblem<f64>, Vec<DVector<f64>>), CliError> {
        if self.generator.is_some() {
            return Err(CliError::Config("named seeds define their own generator; remove 'generator'".into()));
        }
        let mut masses = self.masses()?;
        let mut omega = self.omega.unwrap_or(1.0);
        let mut law = self.law()?;
        match at {
            Some((Parameter::Mass { index }, v)) if index < masses.len() => masses[index] = v,
            Some((Parameter::Omega, v)) => omega = v,
            Some((Parameter::LawExponent, v)) => {
                if let Some(l) = &law {
                    law = Some(l.with_leading_exponent(v).map_err(CliError::config)?);
                }
            }
            _ => {}
        }
        let flat = matches!(spec.name, SeedName::TwoBody | SeedName::Lagrange | SeedName::EulerCollinear);
        let space = self.space()?;
        if flat != space.is_flat() || space.k() != 2 {
            return Err(CliError::Config(format!("seed {:?} does not match the configured space", spec.name)));
        }
        if spec.z0.is_some() && spec.name != SeedName::SphereLagrange
            || spec.half_distance.is_some() && spec.name != SeedName::HyperbolicPair
        {
            return Err(CliError::Config("seed parameter does not apply to this seed".into()));
        }
        if !flat && self.omega.is_some() {
            return Err(CliError::Config("curved seeds determine omega; remove 'omega'".into()));
        }
        if !flat && spec.scale != 1.0 {
            return Err(CliError::Config("'scale' applies to flat seeds only".into()));
        }
        let seed = match spec.name {
            SeedName::TwoBody => seeds::two_body(&masses, law.unwrap(), omega),
            SeedName::Lagrange => seeds::lagrange(&masses, law.unwrap(), omega),
            SeedName::EulerCollinear => seeds::euler_collinear(&masses, law.unwrap(), omega),
            SeedName::SphereLagrange => seeds::sphere_lagrange(
                &masses,
                spec.z0.ok_or_else(|| CliError::Config("sphere_lagrange needs 'z0'".into()))?,
            ),
            SeedName::HyperbolicPair => seeds::hyperbolic_pair(
                &masses,
                spec.half_distance
                    .ok_or_else(|| CliError::Config("hyperbolic_pair needs 'half_distance'".into()))?,
            ),
        }
        .map_err(CliError::config)?;
        let positions = seed.positions.iter().map(|q| q * spec.scale).collect();
        Ok((seed.problem, positions))
    }

    pub fn continuation(&self) -> ContinuationOptions {
        ContinuationOptions {
            solver: self.solver,
            trust_radius: self.sweep.as_ref().and_then(|s| s.trust_radius),
        }
    }
}
