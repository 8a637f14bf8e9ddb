//! `solve_sop → check_hypotheses → per-horizon solve → verify_p_condition →
//! certify`, with every failure tagged by the stage that raised it.

use std::fmt;

use nalgebra::DVector;
use rayon::prelude::*;
use thiserror::Error;
use turnpike_core::model::{
    build_hamiltonian_field, check_hypotheses, solve_sop, HypothesisReport, Objective, SopReport, SteadyOptimum,
};
use turnpike_core::shooting::{
    solve_bvp_with, solve_fixed_endpoint_released, solve_with_continuation, verify_p_condition, BvpSolution, BvpSpec,
    ContinuationPlan, PConditionReport, ShootingError, ShootingOptions, Terminal,
};
use turnpike_core::turnpike::{
    certify_with, control_residence, CertifyOptions, ControlResidence, TurnpikeCertificate, TurnpikeError,
};

use crate::config::{ProblemConfig, Strategy};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Sop,
    Solve,
    PCondition,
    Certify,
    Output,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Sop => "model::solve_sop",
            Stage::Solve => "shooting::solve",
            Stage::PCondition => "shooting::verify_p_condition",
            Stage::Certify => "turnpike::certify",
            Stage::Output => "output",
        })
    }
}

#[derive(Debug, Clone, Error)]
#[error("stage `{stage}`{} failed: {message}", horizon.map(|t| format!(" (T = {t})")).unwrap_or_default())]
pub struct PipelineError {
    pub stage: Stage,
    pub horizon: Option<f64>,
    pub message: String,
}

impl PipelineError {
    pub fn new(stage: Stage, horizon: Option<f64>, message: impl fmt::Display) -> Self {
        Self { stage, horizon, message: message.to_string() }
    }
}

/// Solved horizon plus how it was reached.
#[derive(Debug, Clone)]
pub struct HorizonRun {
    pub solution: BvpSolution<f64>,
    /// Continuation that stopped early; the solution is the last converged
    /// point of the chain.
    pub failure: Option<ShootingError>,
}

#[derive(Debug, Clone)]
pub struct Analysis {
    pub sop: SopReport<f64>,
    pub optimum: SteadyOptimum<f64>,
    pub hypotheses: HypothesisReport<f64>,
    pub runs: Vec<HorizonRun>,
    pub p_condition: Vec<(f64, PConditionReport<f64>)>,
    pub certificate: Option<TurnpikeCertificate<f64>>,
    pub control: Option<ControlResidence<f64>>,
    /// Why no certificate was produced.
    pub certify_note: Option<String>,
}

impl Analysis {
    pub fn solutions(&self) -> Vec<BvpSolution<f64>> {
        self.runs.iter().map(|r| r.solution.clone()).collect()
    }

    pub fn first_failure(&self) -> Option<PipelineError> {
        self.runs
            .iter()
            .find_map(|r| r.failure.as_ref().map(|e| PipelineError::new(Stage::Solve, Some(r.solution.horizon), e)))
    }
}

pub fn shooting_options(cfg: &ProblemConfig) -> ShootingOptions<f64> {
    let mut o = ShootingOptions::new(cfg.tolerances.rtol, cfg.tolerances.atol);
    if let Some(b) = cfg.max_bisections {
        o.max_bisections = b;
    }
    o
}

/// Runs the steady optimization and picks the optimum to certify against:
/// the cheapest one, or the one nearest `sop.select`.
pub fn select_optimum(cfg: &ProblemConfig) -> Result<(SopReport<f64>, SteadyOptimum<f64>), PipelineError> {
    let report = solve_sop(&cfg.problem, &cfg.seeds).map_err(|e| PipelineError::new(Stage::Sop, None, e))?;
    let chosen = match &cfg.select {
        None => report.optima.first().cloned(),
        Some(target) => report
            .optima
            .iter()
            .min_by(|a, b| {
                let da = (&a.x_bar - target).norm();
                let db = (&b.x_bar - target).norm();
                da.partial_cmp(&db).unwrap_or(std::cmp::Ordering::Equal)
            })
            .cloned(),
    };
    let opt = chosen.ok_or_else(|| {
        PipelineError::new(Stage::Sop, None, format!("no steady optimum found from {} seeds", cfg.seeds.len()))
    })?;
    Ok((report, opt))
}

fn terminal(cfg: &ProblemConfig) -> Terminal<f64> {
    match &cfg.problem.objective {
        Objective::Tracking { .. } => Terminal::CostateZero,
        Objective::FixedEndpoint { xf } => Terminal::StateTarget(xf.clone()),
    }
}

fn solve_one(cfg: &ProblemConfig, opt: &SteadyOptimum<f64>, horizon: f64) -> Result<HorizonRun, PipelineError> {
    let field = build_hamiltonian_field(&cfg.problem);
    let opts = shooting_options(cfg);
    let fail = |e: ShootingError| PipelineError::new(Stage::Solve, Some(horizon), e);
    let x0 = cfg.problem.x0.clone();
    match cfg.strategy {
        Strategy::Released { x0_steps, xf_steps } => {
            let spec = BvpSpec::new(field, horizon, x0, terminal(cfg), opt.p_bar.clone());
            let out = solve_fixed_endpoint_released(&spec, opt, x0_steps, xf_steps, &opts).map_err(fail)?;
            Ok(HorizonRun { solution: out.solution, failure: out.failure })
        }
        Strategy::InitialStateRamp { steps } => {
            let spec = BvpSpec::near_steady(field, horizon, opt.x_bar.clone(), terminal(cfg), opt);
            let plan = ContinuationPlan::x0_ramp(&opt.x_bar, &x0, steps);
            let sol = solve_with_continuation(&spec, &plan, &opts).map_err(fail)?;
            Ok(HorizonRun { solution: sol, failure: None })
        }
        _ => {
            let spec = BvpSpec::near_steady(field, horizon, x0, terminal(cfg), opt);
            Ok(HorizonRun { solution: solve_bvp_with(&spec, &opts).map_err(fail)?, failure: None })
        }
    }
}

/// Solves every requested horizon. A horizon ramp is inherently sequential;
/// the other strategies fan out over `jobs` workers.
pub fn solve_horizons(cfg: &ProblemConfig, opt: &SteadyOptimum<f64>, jobs: usize) -> Result<Vec<HorizonRun>, PipelineError> {
    let horizons = &cfg.problem.horizons;
    if let Strategy::HorizonRamp { start, step } = cfg.strategy {
        let opts = shooting_options(cfg);
        let start = start.min(horizons[0]);
        let field = build_hamiltonian_field(&cfg.problem);
        let mut spec = BvpSpec::near_steady(field, start, cfg.problem.x0.clone(), terminal(cfg), opt);
        let mut reached = start;
        let mut runs = Vec::with_capacity(horizons.len());
        for &t in horizons {
            let mut ramp = Vec::new();
            let mut h = reached + step;
            while h < t - 1e-9 * t {
                ramp.push(h);
                h += step;
            }
            if t > reached {
                ramp.push(t);
            }
            let sol = solve_with_continuation(&spec, &ContinuationPlan::horizon_ramp(&ramp), &opts)
                .map_err(|e| PipelineError::new(Stage::Solve, Some(t), e))?;
            reached = t;
            spec = sol.spec();
            runs.push(HorizonRun { solution: sol, failure: None });
        }
        return Ok(runs);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| PipelineError::new(Stage::Solve, None, e))?;
    pool.install(|| horizons.par_iter().map(|&t| solve_one(cfg, opt, t)).collect())
}

/// Everything short of writing artifacts.
pub fn analyze(cfg: &ProblemConfig, jobs: usize) -> Result<Analysis, PipelineError> {
    let (sop, optimum) = select_optimum(cfg)?;
    let hypotheses = check_hypotheses(&optimum, &cfg.problem);
    let runs = solve_horizons(cfg, &optimum, jobs)?;
    let p_condition = runs
        .iter()
        .map(|r| {
            verify_p_condition(&r.solution, 200)
                .map(|rep| (r.solution.horizon, rep))
                .map_err(|e| PipelineError::new(Stage::PCondition, Some(r.solution.horizon), e))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let sols: Vec<BvpSolution<f64>> = runs.iter().map(|r| r.solution.clone()).collect();
    let opts = CertifyOptions { grid: cfg.grid, kind: cfg.profile_kind, ..Default::default() };
    let (certificate, control, certify_note) = match certify_with(&optimum, &sols, &opts) {
        Ok(c) => {
            let ctrl = control_residence(&optimum, &sols, cfg.control_epsilon, &opts)
                .map_err(|e| PipelineError::new(Stage::Certify, None, e))?;
            (Some(c), Some(ctrl), None)
        }
        Err(e @ TurnpikeError::InsufficientHorizons { .. }) => (None, None, Some(e.to_string())),
        Err(e) => return Err(PipelineError::new(Stage::Certify, None, e)),
    };
    Ok(Analysis { sop, optimum, hypotheses, runs, p_condition, certificate, control, certify_note })
}

/// Measure of `{t : |u(t) − ū| > ε}` on a uniform grid of the solution.
pub fn control_measure(sol: &BvpSolution<f64>, u_bar: &DVector<f64>, eps: f64, grid: usize) -> f64 {
    let d = turnpike_core::turnpike::DistanceProfile::from_fn(sol.horizon, grid, |t| (sol.control(t) - u_bar).norm());
    turnpike_core::turnpike::residence_measure(&d, &[eps])[0].1
}
