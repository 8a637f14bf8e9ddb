//! The verbs behind the `turnpike` binary.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde_json::json;
use thiserror::Error;
use turnpike_core::linham::{self, LinearTriple};
use turnpike_core::manifolds::{grow_manifold_2d, Window};
use turnpike_core::model::{build_hamiltonian_field, check_hypotheses, solve_sop};
use turnpike_core::turnpike::{verdict_label, Verdict};

use crate::config::{self, ConfigError, ProblemConfig};
use crate::output::{self, num, write_artifact};
use crate::pipeline::{self, PipelineError, Stage};

pub const EXIT_CERTIFIED: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_INCONCLUSIVE: i32 = 2;

pub const OUT_ENV: &str = "TURNPIKE_OUT";
const DEFAULT_OUT: &str = "turnpike-out";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("{0}")]
    Input(String),
}

/// Command-line overrides of config values.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out_dir: Option<PathBuf>,
    pub rtol: Option<f64>,
    pub atol: Option<f64>,
    pub grid: Option<usize>,
    pub jobs: Option<usize>,
}

impl Overrides {
    /// `--out-dir`, then `TURNPIKE_OUT`, then the config, then `turnpike-out`.
    pub fn out_dir(&self, cfg: Option<&Path>) -> PathBuf {
        if let Some(d) = &self.out_dir {
            return d.clone();
        }
        if let Some(d) = std::env::var_os(OUT_ENV).filter(|v| !v.is_empty()) {
            return PathBuf::from(d);
        }
        cfg.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
    }

    pub fn jobs(&self) -> usize {
        self.jobs.unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)).max(1)
    }

    pub fn apply(&self, cfg: &mut ProblemConfig) -> Result<(), CliError> {
        if let Some(r) = self.rtol {
            if !(r > 0.0 && r < 1.0) {
                return Err(CliError::Input("--rtol must lie in (0, 1)".into()));
            }
            cfg.tolerances.rtol = r;
        }
        if let Some(a) = self.atol {
            if !(a > 0.0) {
                return Err(CliError::Input("--atol must be positive".into()));
            }
            cfg.tolerances.atol = a;
        }
        if let Some(g) = self.grid {
            if g < 10 {
                return Err(CliError::Input("--grid must be at least 10".into()));
            }
            cfg.grid = g;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub exit_code: i32,
    pub verdict: &'static str,
    pub out_dir: PathBuf,
    pub artifacts: Vec<PathBuf>,
    /// Continuation that stopped short; artifacts describe the last
    /// converged point.
    pub failure: Option<PipelineError>,
}

fn load(path: &Path, o: &Overrides) -> Result<ProblemConfig, CliError> {
    let mut cfg = config::load(path)?;
    o.apply(&mut cfg)?;
    Ok(cfg)
}

/// Full pipeline plus artifacts.
pub fn run_config(cfg: &ProblemConfig, o: &Overrides) -> Result<RunReport, PipelineError> {
    let analysis = pipeline::analyze(cfg, o.jobs())?;
    let dir = o.out_dir(cfg.out_dir.as_deref());
    let artifacts = output::write_run(cfg, &analysis, &dir)?;
    let failure = analysis.first_failure();
    let verdict = analysis.certificate.as_ref().map(|c| c.verdict).unwrap_or(Verdict::Inconclusive);
    let exit_code = match (&failure, verdict) {
        (Some(_), _) => EXIT_ERROR,
        (None, Verdict::Certified) => EXIT_CERTIFIED,
        (None, Verdict::Inconclusive) => EXIT_INCONCLUSIVE,
    };
    Ok(RunReport { exit_code, verdict: verdict_label(verdict), out_dir: dir, artifacts, failure })
}

pub fn run(path: &Path, o: &Overrides) -> Result<RunReport, CliError> {
    let cfg = load(path, o)?;
    Ok(run_config(&cfg, o)?)
}

/// Every steady optimum found from the seeds, with its hypothesis report.
pub fn sop(path: &Path, o: &Overrides) -> Result<(serde_json::Value, PathBuf), CliError> {
    let cfg = load(path, o)?;
    let report = solve_sop(&cfg.problem, &cfg.seeds).map_err(|e| PipelineError::new(Stage::Sop, None, e))?;
    let optima: Vec<_> = report
        .optima
        .iter()
        .map(|opt| {
            let mut v = output::optimum_json(opt);
            v["hypothesis_report"] = output::hypothesis_json(&check_hypotheses(opt, &cfg.problem));
            v
        })
        .collect();
    let doc = json!({
        "system": cfg.system_label,
        "seeds": cfg.seeds.len(),
        "failed_seeds": report.failures.len(),
        "optima": optima,
    });
    let dir = o.out_dir(cfg.out_dir.as_deref());
    std::fs::create_dir_all(&dir).map_err(|e| CliError::Input(format!("{}: {e}", dir.display())))?;
    let mut written = Vec::new();
    write_artifact(&dir, "sop.json", &(serde_json::to_string_pretty(&doc).expect("json") + "\n"), &mut written)?;
    Ok((doc, written.remove(0)))
}

/// Stable and unstable branches of every hyperbolic optimum of a scalar
/// plant, traced in the `(x, p)` plane.
pub fn portrait(path: &Path, o: &Overrides) -> Result<Vec<PathBuf>, CliError> {
    let cfg = load(path, o)?;
    if cfg.problem.state_dim() != 1 {
        return Err(CliError::Input("portrait needs a scalar plant (n = 1)".into()));
    }
    let report = solve_sop(&cfg.problem, &cfg.seeds).map_err(|e| PipelineError::new(Stage::Sop, None, e))?;
    let field = build_hamiltonian_field(&cfg.problem);
    let window = match cfg.portrait {
        Some(p) => Window { x: (p.x[0], p.x[1]), p: (p.p[0], p.p[1]) },
        None => {
            let (mut lo, mut hi) = (DVector::from_element(2, f64::INFINITY), DVector::from_element(2, f64::NEG_INFINITY));
            for opt in &report.optima {
                let w = opt.point();
                lo = lo.inf(&w);
                hi = hi.sup(&w);
            }
            Window { x: (lo[0] - 1.0, hi[0] + 1.0), p: (lo[1] - 1.0, hi[1] + 1.0) }
        }
    };
    let budget = cfg.portrait.and_then(|p| p.arc_budget).unwrap_or(20.0);
    let mut branches = Vec::new();
    for (i, opt) in report.optima.iter().enumerate().filter(|(_, o)| o.hyperbolic && o.stable_dim == 1) {
        let found = grow_manifold_2d(&field, &opt.point(), budget, &window)
            .map_err(|e| CliError::Input(format!("manifolds::grow_manifold_2d at optimum {i}: {e}")))?;
        branches.extend(found.into_iter().map(|b| (i, b)));
    }
    let dir = o.out_dir(cfg.out_dir.as_deref());
    std::fs::create_dir_all(&dir).map_err(|e| CliError::Input(format!("{}: {e}", dir.display())))?;
    let mut written = Vec::new();
    write_artifact(&dir, "portrait.csv", &output::portrait_csv(&branches), &mut written)?;
    let series: Vec<(String, Vec<(f64, f64)>)> = branches
        .iter()
        .map(|(i, b)| {
            let kind = if b.kind == turnpike_core::manifolds::ManifoldKind::Stable { "S" } else { "U" };
            (format!("{kind}{i}{}", if b.sign > 0 { "+" } else { "-" }), b.points.iter().map(|z| (z[0], z[1])).collect())
        })
        .collect();
    write_artifact(&dir, "portrait.svg", &output::line_chart("invariant manifolds", "x", "p", &series), &mut written)?;
    Ok(written)
}

/// `"1 0; 0 1"` or `"1,0;0,1"`.
pub fn parse_matrix(name: &str, text: &str) -> Result<DMatrix<f64>, CliError> {
    let rows: Vec<Vec<f64>> = text
        .split(';')
        .map(|row| {
            row.split(|c: char| c == ',' || c.is_whitespace())
                .filter(|s| !s.is_empty())
                .map(|s| s.parse::<f64>().map_err(|_| CliError::Input(format!("--{name}: `{s}` is not a number"))))
                .collect()
        })
        .collect::<Result<_, _>>()?;
    let ncols = rows.first().map(Vec::len).unwrap_or(0);
    if ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(CliError::Input(format!("--{name} must be a rectangular matrix, rows separated by `;`")));
    }
    Ok(DMatrix::from_row_iterator(rows.len(), ncols, rows.into_iter().flatten()))
}

fn matrix_json(m: &DMatrix<f64>) -> serde_json::Value {
    json!((0..m.nrows()).map(|i| (0..m.ncols()).map(|j| num(m[(i, j)])).collect::<Vec<_>>()).collect::<Vec<_>>())
}

/// Stabilizing CARE solution for `(C, A, B)` with its checks.
pub fn riccati(a: &str, b: &str, c: &str) -> Result<serde_json::Value, CliError> {
    let triple = LinearTriple::new(parse_matrix("A", a)?, parse_matrix("B", b)?, parse_matrix("C", c)?)
        .map_err(|e| CliError::Input(e.to_string()))?;
    let r = triple.input_weight();
    let q = triple.output_weight();
    let sol = linham::solve_care(&triple.a, &r, &q).map_err(|e| CliError::Input(format!("linham::solve_care: {e}")))?;
    let residual = linham::care_residual(&triple.a, &r, &q, &sol.p).norm();
    let check = linham::check_pl_plus_i(&sol.p, &sol.l);
    Ok(json!({
        "stabilizable": triple.is_stabilizable(),
        "detectable": triple.is_detectable(),
        "P": matrix_json(&sol.p),
        "L": matrix_json(&sol.l),
        "closed_loop": matrix_json(&sol.a_c),
        "closed_loop_hurwitz": linham::is_hurwitz(&sol.a_c),
        "riccati_residual": num(residual),
        "symplectic_defect": num(linham::symplectic_defect(&sol.t_sympl)),
        "pl_plus_i_min_singular_value": num(check.min_sv),
        "stable_eigenvalues": sol.stable_eigs.iter().map(|z| json!([num(z.re), num(z.im)])).collect::<Vec<_>>(),
    }))
}

/// Parses and validates without solving.
pub fn validate(path: &Path, o: &Overrides) -> Result<ProblemConfig, CliError> {
    load(path, o)
}
