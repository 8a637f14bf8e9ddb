//! Versioned JSON configuration. Everything is validated before any solve.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;
use thiserror::Error;
use turnpike_core::model::{ControlAffineSystem, Objective, OcpProblem};
use turnpike_core::systems::LinearSystem;
use turnpike_core::turnpike::ProfileKind;

use crate::expr::{ExprSystem, SystemExprError};
use crate::registry::{self, UnknownSystem};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("schema: {0}")]
    Schema(#[from] serde_json::Error),
    #[error("unsupported config version {0} (expected {SCHEMA_VERSION})")]
    Version(u32),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    UnknownSystem(#[from] UnknownSystem),
    #[error("system expression: {0}")]
    Expr(#[from] SystemExprError),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Invalid(msg.into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKindCfg {
    Ocp1,
    Ocp2,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub version: u32,
    pub problem: ProblemKindCfg,
    /// Registry name, `{"lqr": {...}}` or `{"expr": {...}}`.
    pub system: serde_json::Value,
    #[serde(default)]
    pub c: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub z: Option<Vec<f64>>,
    #[serde(default)]
    pub xf: Option<Vec<f64>>,
    pub x0: Vec<f64>,
    pub horizons: Vec<f64>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub continuation: Option<ContinuationCfg>,
    #[serde(default)]
    pub sop: Option<SopCfg>,
    #[serde(default)]
    pub certify: Option<CertifyCfg>,
    #[serde(default)]
    pub portrait: Option<PortraitCfg>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
enum SystemSpec {
    Lqr(LqrCfg),
    Expr(ExprCfg),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct LqrCfg {
    a: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExprCfg {
    #[serde(default)]
    name: Option<String>,
    n: usize,
    m: usize,
    f: Vec<String>,
    g: Vec<Vec<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    #[serde(default = "default_rtol")]
    pub rtol: f64,
    #[serde(default = "default_atol")]
    pub atol: f64,
}

fn default_rtol() -> f64 {
    1e-10
}

fn default_atol() -> f64 {
    1e-12
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { rtol: default_rtol(), atol: default_atol() }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContinuationCfg {
    /// Horizon ramp: solve at `start_horizon`, then step by `horizon_step`
    /// through every requested horizon, reusing each solution.
    #[serde(default)]
    pub start_horizon: Option<f64>,
    #[serde(default)]
    pub horizon_step: Option<f64>,
    /// Initial-state ramp from `x̄` in this many steps.
    #[serde(default)]
    pub x0_steps: Option<usize>,
    /// Fixed-endpoint route through the free-endpoint problem.
    #[serde(default)]
    pub released: Option<ReleasedCfg>,
    #[serde(default)]
    pub max_bisections: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReleasedCfg {
    pub x0_steps: usize,
    pub xf_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SopCfg {
    /// Seeds of length `n` (costate zero) or `2n`.
    #[serde(default)]
    pub seeds: Option<Vec<Vec<f64>>>,
    /// Uniform `(x, p)` seed grid, scalar plants only.
    #[serde(default)]
    pub grid: Option<SeedGridCfg>,
    /// Pick the optimum whose `x̄` is closest to this point instead of the
    /// cheapest one.
    #[serde(default)]
    pub select: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedGridCfg {
    pub x: [f64; 2],
    pub p: [f64; 2],
    pub k: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProfileKindCfg {
    State,
    Control,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertifyCfg {
    #[serde(default)]
    pub kind: Option<ProfileKindCfg>,
    #[serde(default)]
    pub grid: Option<usize>,
    #[serde(default)]
    pub control_epsilon: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PortraitCfg {
    pub x: [f64; 2],
    pub p: [f64; 2],
    #[serde(default)]
    pub arc_budget: Option<f64>,
}

/// How the horizons are reached.
#[derive(Debug, Clone, PartialEq)]
pub enum Strategy {
    Direct,
    HorizonRamp { start: f64, step: f64 },
    InitialStateRamp { steps: usize },
    Released { x0_steps: usize, xf_steps: usize },
}

/// A configuration that passed every check.
#[derive(Clone)]
pub struct ProblemConfig {
    pub system_label: String,
    pub problem: OcpProblem<f64>,
    pub tolerances: Tolerances,
    pub strategy: Strategy,
    pub max_bisections: Option<usize>,
    pub seeds: Vec<DVector<f64>>,
    pub select: Option<DVector<f64>>,
    pub profile_kind: ProfileKind,
    pub grid: usize,
    pub control_epsilon: f64,
    pub portrait: Option<PortraitCfg>,
    pub out_dir: Option<PathBuf>,
}

impl std::fmt::Debug for ProblemConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProblemConfig")
            .field("system", &self.system_label)
            .field("kind", &self.problem.kind())
            .field("horizons", &self.problem.horizons)
            .field("strategy", &self.strategy)
            .finish()
    }
}

fn matrix(name: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>, ConfigError> {
    let ncols = rows.first().map(Vec::len).unwrap_or(0);
    if rows.is_empty() || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return invalid(format!("`{name}` must be a non-empty rectangular matrix"));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return invalid(format!("`{name}` has non-finite entries"));
    }
    Ok(DMatrix::from_row_iterator(rows.len(), ncols, rows.iter().flatten().copied()))
}

fn vector(name: &str, v: &[f64], len: usize) -> Result<DVector<f64>, ConfigError> {
    if v.len() != len {
        return invalid(format!("`{name}` has length {}, expected {len}", v.len()));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return invalid(format!("`{name}` has non-finite entries"));
    }
    Ok(DVector::from_column_slice(v))
}

impl RawConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn validate(&self) -> Result<ProblemConfig, ConfigError> {
        if self.version != SCHEMA_VERSION {
            return Err(ConfigError::Version(self.version));
        }
        let (label, system, default_c): (String, Arc<dyn ControlAffineSystem<f64>>, Option<DMatrix<f64>>) = match &self.system {
            serde_json::Value::String(name) => {
                let e = registry::lookup(name)?;
                (e.name.to_string(), e.system, Some(e.default_c))
            }
            other => match serde_json::from_value::<SystemSpec>(other.clone())? {
                SystemSpec::Lqr(l) => {
                    let a = matrix("system.lqr.a", &l.a)?;
                    let b = matrix("system.lqr.b", &l.b)?;
                    if !a.is_square() || b.nrows() != a.nrows() {
                        return invalid("`system.lqr`: A must be square and B must have as many rows");
                    }
                    let n = a.nrows();
                    ("lqr".to_string(), Arc::new(LinearSystem::new(a, b)), Some(DMatrix::identity(n, n)))
                }
                SystemSpec::Expr(e) => {
                    let name = e.name.clone().unwrap_or_else(|| "expr".to_string());
                    let sys = ExprSystem::parse(&name, e.n, e.m, &e.f, &e.g)?;
                    (name, Arc::new(sys), None)
                }
            },
        };
        let n = system.state_dim();
        let c = match (&self.c, default_c) {
            (Some(rows), _) => matrix("c", rows)?,
            (None, Some(c)) => c,
            (None, None) => return invalid("`c` is required for expression systems"),
        };
        if c.ncols() != n {
            return invalid(format!("`c` has {} columns, expected n = {n}", c.ncols()));
        }
        let objective = match self.problem {
            ProblemKindCfg::Ocp1 => {
                if self.xf.is_some() {
                    return invalid("`xf` is only valid for problem \"ocp2\"");
                }
                let Some(z) = &self.z else {
                    return invalid("problem \"ocp1\" needs `z`");
                };
                Objective::Tracking { z: vector("z", z, c.nrows())? }
            }
            ProblemKindCfg::Ocp2 => {
                if self.z.is_some() {
                    return invalid("`z` is only valid for problem \"ocp1\"");
                }
                let Some(xf) = &self.xf else {
                    return invalid("problem \"ocp2\" needs `xf`");
                };
                Objective::FixedEndpoint { xf: vector("xf", xf, n)? }
            }
        };
        let x0 = vector("x0", &self.x0, n)?;
        if self.horizons.is_empty() || self.horizons.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
            return invalid("`horizons` must be a non-empty list of positive numbers");
        }
        let mut sorted = self.horizons.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return invalid("`horizons` contains duplicates");
        }
        let tol = self.tolerances;
        if !(tol.rtol > 0.0 && tol.atol > 0.0 && tol.rtol < 1.0) {
            return invalid("tolerances must be positive with rtol < 1");
        }

        let (strategy, max_bisections) = match &self.continuation {
            None => (Strategy::Direct, None),
            Some(cc) => {
                let ramp = cc.start_horizon.is_some() || cc.horizon_step.is_some();
                let picked = [ramp, cc.x0_steps.is_some(), cc.released.is_some()].iter().filter(|b| **b).count();
                if picked > 1 {
                    return invalid("`continuation`: choose one of the horizon ramp, `x0_steps` or `released`");
                }
                let s = if ramp {
                    let start = cc.start_horizon.unwrap_or(sorted[0].min(2.0));
                    let step = cc.horizon_step.unwrap_or(2.0);
                    if !(start > 0.0 && step > 0.0) {
                        return invalid("`continuation`: horizon ramp needs positive start and step");
                    }
                    Strategy::HorizonRamp { start, step }
                } else if let Some(k) = cc.x0_steps {
                    if k == 0 {
                        return invalid("`continuation.x0_steps` must be positive");
                    }
                    Strategy::InitialStateRamp { steps: k }
                } else if let Some(r) = cc.released {
                    if self.problem != ProblemKindCfg::Ocp2 {
                        return invalid("`continuation.released` applies to problem \"ocp2\" only");
                    }
                    if r.x0_steps == 0 || r.xf_steps == 0 {
                        return invalid("`continuation.released` step counts must be positive");
                    }
                    Strategy::Released { x0_steps: r.x0_steps, xf_steps: r.xf_steps }
                } else {
                    Strategy::Direct
                };
                (s, cc.max_bisections)
            }
        };

        let mut seeds = Vec::new();
        let mut select = None;
        if let Some(sop) = &self.sop {
            for (i, s) in sop.seeds.iter().flatten().enumerate() {
                if s.len() != n && s.len() != 2 * n {
                    return invalid(format!("`sop.seeds[{i}]` must have length {n} or {}", 2 * n));
                }
                seeds.push(DVector::from_column_slice(s));
            }
            if let Some(g) = sop.grid {
                if n != 1 {
                    return invalid("`sop.grid` is only available for scalar plants");
                }
                if g.k < 2 {
                    return invalid("`sop.grid.k` must be at least 2");
                }
                seeds.extend(turnpike_core::model::grid_seeds_2d((g.x[0], g.x[1]), (g.p[0], g.p[1]), g.k));
            }
            if let Some(s) = &sop.select {
                select = Some(vector("sop.select", s, n)?);
            }
        }
        if seeds.is_empty() {
            seeds = default_seeds(&c, &objective, &x0);
        }

        let cert = self.certify.unwrap_or(CertifyCfg { kind: None, grid: None, control_epsilon: None });
        let profile_kind = match cert.kind {
            Some(ProfileKindCfg::Control) => ProfileKind::ControlOnly,
            _ => ProfileKind::StateAndControl,
        };
        let grid = cert.grid.unwrap_or(2000);
        if grid < 10 {
            return invalid("`certify.grid` must be at least 10");
        }
        let control_epsilon = cert.control_epsilon.unwrap_or(0.05);
        if !(control_epsilon > 0.0) {
            return invalid("`certify.control_epsilon` must be positive");
        }
        if let Some(p) = &self.portrait {
            if !(p.x[0] < p.x[1] && p.p[0] < p.p[1]) {
                return invalid("`portrait` ranges must be increasing");
            }
        }

        let problem = OcpProblem::new(system, objective, c, x0, sorted).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(ProblemConfig {
            system_label: label,
            problem,
            tolerances: tol,
            strategy,
            max_bisections,
            seeds,
            select,
            profile_kind,
            grid,
            control_epsilon,
            portrait: self.portrait,
            out_dir: self.out_dir.clone(),
        })
    }
}

/// The origin, the initial state, and the natural target of the objective.
fn default_seeds(c: &DMatrix<f64>, objective: &Objective<f64>, x0: &DVector<f64>) -> Vec<DVector<f64>> {
    let n = x0.len();
    let mut seeds = vec![DVector::zeros(n), x0.clone()];
    match objective {
        Objective::Tracking { z } => {
            if let Ok(pinv) = c.clone().pseudo_inverse(1e-12) {
                seeds.push(pinv * z);
            }
        }
        Objective::FixedEndpoint { xf } => seeds.push(xf.clone()),
    }
    seeds
}

pub fn load(path: &Path) -> Result<ProblemConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
    RawConfig::from_json(&text)?.validate()
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIG2: &str = r#"{
        "version": 1, "problem": "ocp1", "system": "byrnes",
        "z": [1, -2], "x0": [1, 0.2], "horizons": [5, 10, 15, 20]
    }"#;

    #[test]
    fn fig2_config_validates() {
        let cfg = RawConfig::from_json(FIG2).unwrap().validate().unwrap();
        assert_eq!(cfg.problem.horizons, vec![5.0, 10.0, 15.0, 20.0]);
        assert_eq!(cfg.strategy, Strategy::Direct);
        assert_eq!(cfg.problem.c, DMatrix::identity(2, 2));
    }

    #[test]
    fn xf_on_ocp1_is_rejected_before_solving() {
        let text = FIG2.replace("\"x0\"", "\"xf\": [0, 1], \"x0\"");
        let err = RawConfig::from_json(&text).unwrap().validate().unwrap_err();
        assert!(err.to_string().contains("`xf` is only valid"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = FIG2.replace("\"x0\"", "\"colour\": 3, \"x0\"");
        let err = RawConfig::from_json(&text).unwrap_err();
        assert!(err.to_string().contains("unknown field `colour`"), "{err}");
        let nested = FIG2.replace("\"x0\"", "\"tolerances\": {\"rtol\": 1e-8, \"btol\": 1}, \"x0\"");
        assert!(RawConfig::from_json(&nested).is_err());
    }

    #[test]
    fn version_and_system_are_checked() {
        let v2 = FIG2.replace("\"version\": 1", "\"version\": 2");
        assert!(matches!(RawConfig::from_json(&v2).unwrap().validate(), Err(ConfigError::Version(2))));
        let unknown = FIG2.replace("\"byrnes\"", "\"duffing\"");
        assert!(matches!(RawConfig::from_json(&unknown).unwrap().validate(), Err(ConfigError::UnknownSystem(_))));
    }

    #[test]
    fn expression_system_needs_zero_drift_at_origin() {
        let text = r#"{"version": 1, "problem": "ocp2", "system": {"expr": {"n": 1, "m": 1, "f": ["1 - x1"], "g": [["1"]]}},
            "c": [[0]], "xf": [0], "x0": [1], "horizons": [5]}"#;
        let err = RawConfig::from_json(text).unwrap().validate().unwrap_err();
        assert!(matches!(err, ConfigError::Expr(SystemExprError::NonzeroDriftAtOrigin(_))));
    }

    #[test]
    fn continuation_choices_are_exclusive() {
        let text = FIG2.replace("\"x0\"", "\"continuation\": {\"horizon_step\": 2, \"x0_steps\": 4}, \"x0\"");
        assert!(RawConfig::from_json(&text).unwrap().validate().is_err());
        let released = FIG2.replace("\"x0\"", "\"continuation\": {\"released\": {\"x0_steps\": 4, \"xf_steps\": 2}}, \"x0\"");
        assert!(RawConfig::from_json(&released).unwrap().validate().is_err());
    }

    #[test]
    fn dimension_mismatches_are_reported() {
        let text = FIG2.replace("[1, 0.2]", "[1, 0.2, 3]");
        let err = RawConfig::from_json(&text).unwrap().validate().unwrap_err();
        assert!(err.to_string().contains("`x0` has length 3"), "{err}");
    }
}
