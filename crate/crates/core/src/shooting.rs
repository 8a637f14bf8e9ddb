//! Two-point boundary-value problems of the characteristic system, solved by
//! Newton shooting on the unknown initial costate.
//!
//! Long horizons make the flow map grow like `e^{λT}`, so the unknowns are the
//! initial costate together with the full state at interior mesh nodes
//! (multiple shooting). With a single segment this is plain shooting on `p0`.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::linham::{self, LinalgError};
use crate::model::{HamiltonianField, SteadyOptimum};
use crate::odeflow::{self, OdeError, OdeOptions, Trajectory, VariationalTrajectory, VectorField};
use crate::scalar::{lit, to_f64, Real};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ShootingError {
    #[error("invalid boundary-value problem: {0}")]
    InvalidSpec(String),
    #[error("Newton diverged after {iterations} iterations (best residual {residual:e})")]
    NewtonDivergence { iterations: usize, residual: f64, best_p0: Vec<f64> },
    #[error("integration blew up ({0}); try continuation")]
    IntegrationBlowup(OdeError),
    #[error("shooting Jacobian is singular (condition estimate {cond:e})")]
    SingularShootingJacobian { cond: f64 },
    #[error("continuation stalled at step {step}: {reason}")]
    ContinuationStalled { step: usize, reason: String },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Condition at `t = T`.
#[derive(Debug, Clone, PartialEq)]
pub enum Terminal<T: Real> {
    /// Free endpoint: `p(T) = 0`.
    CostateZero,
    /// Fixed endpoint: `x(T) = x_f`.
    StateTarget(DVector<T>),
}

#[derive(Debug, Clone)]
pub struct BvpSpec<T: Real> {
    pub field: HamiltonianField<T>,
    pub horizon: T,
    pub x0: DVector<T>,
    pub terminal: Terminal<T>,
    pub p0_guess: DVector<T>,
    /// Optional guess for the whole `(x, p)` path on `[0, T]`; it fixes the
    /// shooting mesh and the interior unknowns.
    pub path_guess: Option<Trajectory<T>>,
}

impl<T: Real> BvpSpec<T> {
    pub fn new(field: HamiltonianField<T>, horizon: T, x0: DVector<T>, terminal: Terminal<T>, p0_guess: DVector<T>) -> Self {
        Self { field, horizon, x0, terminal, p0_guess, path_guess: None }
    }

    /// Spec whose guess superposes the linearized stable and unstable
    /// solutions at a steady optimum: the state decays along `{p = Px}` from
    /// `x0` and leaves along `{(Lu, (PL + I)u)}` to meet the terminal condition.
    pub fn near_steady(
        field: HamiltonianField<T>,
        horizon: T,
        x0: DVector<T>,
        terminal: Terminal<T>,
        opt: &SteadyOptimum<T>,
    ) -> Self {
        let fallback = opt.p_bar.clone();
        let r = &opt.b_z * opt.b_z.transpose();
        let sol = match linham::solve_care(&opt.a_z, &r, &opt.q_lin) {
            Ok(s) => s,
            Err(_) => return Self::new(field, horizon, x0, terminal, fallback),
        };
        let n = x0.len();
        let dx0 = &x0 - &opt.x_bar;
        let exp_t = (&sol.a_c * horizon).exp();
        let xs_end = &exp_t * &dx0;
        let pli = sol.pl_plus_i();
        let rhs = match &terminal {
            Terminal::CostateZero => -(&opt.p_bar + &sol.p * &xs_end),
            Terminal::StateTarget(xf) => xf - &opt.x_bar - &xs_end,
        };
        let lhs = match &terminal {
            Terminal::CostateZero => pli.clone(),
            Terminal::StateTarget(_) => sol.l.clone(),
        };
        let u_end = lhs.svd(true, true).solve(&rhs, lit(1e-12)).unwrap_or_else(|_| DVector::zeros(n));
        let samples = 400usize;
        let mut times = Vec::with_capacity(samples + 1);
        let mut states = Vec::with_capacity(samples + 1);
        let mut derivs = Vec::with_capacity(samples + 1);
        for k in 0..=samples {
            let t = horizon * lit::<T>(k as f64) / lit::<T>(samples as f64);
            let xs = (&sol.a_c * t).exp() * &dx0;
            let u = (sol.a_c.transpose() * (horizon - t)).exp() * &u_end;
            let x = &opt.x_bar + &xs + &sol.l * &u;
            let p = &opt.p_bar + &sol.p * &xs + &pli * &u;
            let w = HamiltonianField::join(&x, &p);
            derivs.push(field.eval(&w));
            states.push(w);
            times.push(t);
        }
        let p0_guess = states[0].rows(n, n).into_owned();
        let path = Trajectory::from_nodes(times, states, derivs);
        Self { field, horizon, x0, terminal, p0_guess, path_guess: Some(path) }
    }

    pub fn state_dim(&self) -> usize {
        self.x0.len()
    }

    /// `1 + |x0| + |x_f|`, the scale of the boundary residual tolerance.
    pub fn data_scale(&self) -> T {
        let xf = match &self.terminal {
            Terminal::StateTarget(xf) => xf.norm(),
            Terminal::CostateZero => T::zero(),
        };
        T::one() + self.x0.norm() + xf
    }

    fn validate(&self) -> Result<(), ShootingError> {
        let n = self.field.state_dim();
        let bad = |s: String| Err(ShootingError::InvalidSpec(s));
        if !(self.horizon > T::zero()) {
            return bad("horizon must be positive".into());
        }
        if self.x0.len() != n || self.p0_guess.len() != n {
            return bad(format!("x0 and p0_guess must have length {n}"));
        }
        if let Terminal::StateTarget(xf) = &self.terminal {
            if xf.len() != n {
                return bad(format!("xf must have length {n}"));
            }
        }
        if let Some(path) = &self.path_guess {
            if path.dim() != 2 * n {
                return bad("path guess has the wrong dimension".into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShootingOptions<T> {
    pub rtol: T,
    pub atol: T,
    pub max_iters: usize,
    /// Target for `∫‖Df‖ dt` over one segment (log of the tolerated growth).
    pub segment_growth: T,
    pub max_segments: usize,
    pub max_bisections: usize,
    /// Accepted residual relative to `1 + |x0| + |x_f|`.
    pub tol: T,
}

impl<T: Real> ShootingOptions<T> {
    pub fn new(rtol: T, atol: T) -> Self {
        Self { rtol, atol, max_iters: 50, segment_growth: lit(2.0), max_segments: 400, max_bisections: 10, tol: lit(1e-8) }
    }
}

/// One solved problem along a continuation chain.
#[derive(Debug, Clone)]
pub struct ContinuationRecord<T: Real> {
    pub horizon: T,
    pub x0: DVector<T>,
    pub terminal: Terminal<T>,
    pub target: DVector<T>,
    pub p0: DVector<T>,
    pub residual: T,
}

#[derive(Debug, Clone)]
pub struct BvpSolution<T: Real> {
    /// `(x, p)` on `[0, T]`.
    pub trajectory: Trajectory<T>,
    pub p0: DVector<T>,
    /// Largest of the boundary mismatch and the junction defects, the latter
    /// taken relative to the node they meet and expressed at data scale.
    pub residual: T,
    pub newton_iters: usize,
    pub continuation_path: Vec<ContinuationRecord<T>>,
    pub field: HamiltonianField<T>,
    pub horizon: T,
    pub x0: DVector<T>,
    pub terminal: Terminal<T>,
    /// Shooting mesh `0 = τ₀ < … < τ_M = T` and the converged node states.
    pub mesh: Vec<T>,
    pub node_states: Vec<DVector<T>>,
    options: ShootingOptions<T>,
}

impl<T: Real> BvpSolution<T> {
    pub fn state_dim(&self) -> usize {
        self.x0.len()
    }

    pub fn point(&self, t: T) -> DVector<T> {
        self.trajectory.eval(t)
    }

    pub fn state(&self, t: T) -> DVector<T> {
        self.point(t).rows(0, self.state_dim()).into_owned()
    }

    pub fn costate(&self, t: T) -> DVector<T> {
        let n = self.state_dim();
        self.point(t).rows(n, n).into_owned()
    }

    /// `u(t) = −g(x(t))ᵀp(t)`.
    pub fn control(&self, t: T) -> DVector<T> {
        self.field.control_at(&self.point(t))
    }

    pub fn hamiltonian(&self, t: T) -> T {
        self.field.hamiltonian_at(&self.point(t))
    }

    /// Boundary mismatch of the stitched trajectory alone.
    pub fn boundary_residual(&self) -> T {
        let n = self.state_dim();
        let start = self.trajectory.initial_state();
        let end = self.trajectory.final_state();
        let r0 = (start.rows(0, n) - &self.x0).amax();
        let r1 = match &self.terminal {
            Terminal::CostateZero => end.rows(n, n).amax(),
            Terminal::StateTarget(xf) => (end.rows(0, n) - xf).amax(),
        };
        r0.max(r1)
    }

    pub fn spec(&self) -> BvpSpec<T> {
        BvpSpec {
            field: self.field.clone(),
            horizon: self.horizon,
            x0: self.x0.clone(),
            terminal: self.terminal.clone(),
            p0_guess: self.p0.clone(),
            path_guess: Some(self.trajectory.clone()),
        }
    }
}

struct Mesh<T> {
    nodes: Vec<T>,
}

impl<T: Real> Mesh<T> {
    fn segments(&self) -> usize {
        self.nodes.len() - 1
    }
}

/// Places mesh nodes where `∫‖Df(z_guess)‖ dt` crosses multiples of the
/// growth budget.
fn build_mesh<T: Real>(field: &HamiltonianField<T>, path: &Trajectory<T>, horizon: T, opts: &ShootingOptions<T>) -> Mesh<T> {
    let fine = 2000usize;
    let dt = horizon / lit::<T>(fine as f64);
    let weight = |t: T| -> T {
        let w = path.eval(t);
        let j = field.jacobian(&w).unwrap_or_else(|| odeflow::fd_jacobian(field, &w));
        let v = j.norm();
        if v.is_finite() {
            v
        } else {
            lit(1e6)
        }
    };
    let mut nodes = vec![T::zero()];
    let mut acc = T::zero();
    let mut prev = weight(T::zero());
    for k in 1..=fine {
        let t = dt * lit::<T>(k as f64);
        let cur = weight(t);
        acc += (prev + cur) * lit::<T>(0.5) * dt;
        prev = cur;
        if acc >= opts.segment_growth && k < fine {
            nodes.push(t);
            acc = T::zero();
        }
    }
    nodes.push(horizon);
    let max_seg = opts.max_segments.max(1);
    if nodes.len() - 1 > max_seg {
        let m = max_seg;
        nodes = (0..=m).map(|k| horizon * lit::<T>(k as f64) / lit::<T>(m as f64)).collect();
    }
    Mesh { nodes }
}

fn guess_path<T: Real>(spec: &BvpSpec<T>, opts: &ShootingOptions<T>) -> Trajectory<T> {
    if let Some(p) = &spec.path_guess {
        return p.clone();
    }
    let z0 = HamiltonianField::join(&spec.x0, &spec.p0_guess);
    let ode = OdeOptions::new(opts.rtol.max(lit(1e-8)), opts.atol.max(lit(1e-10)));
    let mut t_end = spec.horizon;
    // Shrink the span until the free flow survives; hold the last state after.
    for _ in 0..30 {
        if let Ok(tr) = odeflow::integrate_with(&spec.field, &z0, T::zero(), t_end, &ode) {
            if t_end == spec.horizon {
                return tr;
            }
            let last = tr.final_state().clone();
            let d = spec.field.eval(&last) * T::zero();
            let hold = Trajectory::from_nodes(vec![t_end, spec.horizon], vec![last.clone(), last], vec![d.clone(), d]);
            return Trajectory::concat(vec![tr, hold]);
        }
        t_end *= lit(0.5);
    }
    let d = DVector::zeros(z0.len());
    Trajectory::from_nodes(vec![T::zero(), spec.horizon], vec![z0.clone(), z0], vec![d.clone(), d])
}

/// Boundary-and-matching residual with the segment trajectories behind it.
type SegmentedResidual<T> = (DVector<T>, Vec<Trajectory<T>>);

struct Problem<'a, T: Real> {
    spec: &'a BvpSpec<T>,
    mesh: Mesh<T>,
    ode: OdeOptions<T>,
    n: usize,
}

impl<'a, T: Real> Problem<'a, T> {
    fn unknowns(&self) -> usize {
        self.n + 2 * self.n * (self.mesh.segments() - 1)
    }

    fn start(&self, s: &DVector<T>, j: usize) -> DVector<T> {
        let n = self.n;
        if j == 0 {
            HamiltonianField::join(&self.spec.x0, &s.rows(0, n).into_owned())
        } else {
            s.rows(n + 2 * n * (j - 1), 2 * n).into_owned()
        }
    }

    fn terminal_rows(&self, z: &DVector<T>) -> DVector<T> {
        let n = self.n;
        match &self.spec.terminal {
            Terminal::CostateZero => z.rows(n, n).into_owned(),
            Terminal::StateTarget(xf) => z.rows(0, n) - xf,
        }
    }

    fn selector_offset(&self) -> usize {
        match self.spec.terminal {
            Terminal::CostateZero => self.n,
            Terminal::StateTarget(_) => 0,
        }
    }

    fn segment_opts(&self) -> OdeOptions<T> {
        self.ode
    }

    fn residual(&self, s: &DVector<T>) -> Result<(DVector<T>, Vec<Trajectory<T>>), OdeError> {
        self.residual_at(s).map_err(|(_, e)| e)
    }

    /// Residual and per-segment trajectories; errors carry the failing segment.
    fn residual_at(&self, s: &DVector<T>) -> Result<SegmentedResidual<T>, (usize, OdeError)> {
        let n = self.n;
        let m = self.mesh.segments();
        let mut r = DVector::zeros(self.unknowns());
        let mut pieces = Vec::with_capacity(m);
        for j in 0..m {
            let z = self.start(s, j);
            let tr = odeflow::integrate_with(&self.spec.field, &z, self.mesh.nodes[j], self.mesh.nodes[j + 1], &self.segment_opts())
                .map_err(|e| (j, e))?;
            let end = tr.final_state().clone();
            if j + 1 < m {
                let d = end - self.start(s, j + 1);
                r.rows_mut(2 * n * j, 2 * n).copy_from(&d);
            } else {
                r.rows_mut(2 * n * j, n).copy_from(&self.terminal_rows(&end));
            }
            pieces.push(tr);
        }
        Ok((r, pieces))
    }

    fn flows(&self, s: &DVector<T>) -> Result<Vec<VariationalTrajectory<T>>, OdeError> {
        (0..self.mesh.segments())
            .map(|j| {
                odeflow::integrate_variational_with(
                    &self.spec.field,
                    &self.start(s, j),
                    self.mesh.nodes[j],
                    self.mesh.nodes[j + 1],
                    &self.segment_opts(),
                )
            })
            .collect()
    }

    /// Residual measured in units of the data scale: boundary rows as they
    /// are, junction defects relative to the size of the node they meet.
    fn scaled_norm(&self, r: &DVector<T>, s: &DVector<T>) -> T {
        let n = self.n;
        let m = self.mesh.segments();
        let scale = self.spec.data_scale();
        let mut worst = r.rows(2 * n * (m - 1), n).amax();
        for j in 0..m - 1 {
            let node = self.start(s, j + 1).amax();
            let defect = r.rows(2 * n * j, 2 * n).amax();
            worst = worst.max(defect * scale / (T::one() + node));
        }
        worst
    }

    fn jacobian(&self, flows: &[VariationalTrajectory<T>]) -> DMatrix<T> {
        let n = self.n;
        let m = self.mesh.segments();
        let size = self.unknowns();
        let mut jac = DMatrix::zeros(size, size);
        let sel = self.selector_offset();
        for (j, flow) in flows.iter().enumerate() {
            let phi = flow.final_sensitivity();
            let last = j + 1 == m;
            let row = 2 * n * j;
            let (rows_from, rows_len) = if last { (sel, n) } else { (0, 2 * n) };
            let block = phi.view((rows_from, 0), (rows_len, 2 * n));
            if j == 0 {
                jac.view_mut((row, 0), (rows_len, n)).copy_from(&block.columns(n, n));
            } else {
                jac.view_mut((row, n + 2 * n * (j - 1)), (rows_len, 2 * n)).copy_from(&block);
            }
            if !last {
                let col = n + 2 * n * j;
                for i in 0..2 * n {
                    jac[(row + i, col + i)] = -T::one();
                }
            }
        }
        jac
    }

    /// `∂F/∂x0`: only the first segment sees the initial state.
    fn d_residual_d_x0(&self, flows: &[VariationalTrajectory<T>]) -> DMatrix<T> {
        let n = self.n;
        let m = self.mesh.segments();
        let phi = flows[0].final_sensitivity();
        let mut d = DMatrix::zeros(self.unknowns(), n);
        if m == 1 {
            d.view_mut((0, 0), (n, n)).copy_from(&phi.view((self.selector_offset(), 0), (n, n)));
        } else {
            d.view_mut((0, 0), (2 * n, n)).copy_from(&phi.view((0, 0), (2 * n, n)));
        }
        d
    }

    fn initial_unknowns(&self, path: &Trajectory<T>) -> DVector<T> {
        let n = self.n;
        let mut s = DVector::zeros(self.unknowns());
        s.rows_mut(0, n).copy_from(&self.spec.p0_guess);
        for j in 1..self.mesh.segments() {
            s.rows_mut(n + 2 * n * (j - 1), 2 * n).copy_from(&path.eval(self.mesh.nodes[j]));
        }
        s
    }
}

/// LU solve after row and column equilibration; node values of very
/// different magnitude otherwise cost most of the available precision.
fn lu_step<T: Real>(jac: &DMatrix<T>, rhs: &DVector<T>) -> Option<DVector<T>> {
    let (rows, cols) = jac.shape();
    let mut a = jac.clone();
    let mut b = rhs.clone();
    for i in 0..rows {
        let m = a.row(i).amax();
        if m > T::zero() {
            let sc = T::one() / m;
            a.row_mut(i).scale_mut(sc);
            b[i] *= sc;
        }
    }
    let mut col_scale = DVector::from_element(cols, T::one());
    for j in 0..cols {
        let m = a.column(j).amax();
        if m > T::zero() {
            col_scale[j] = T::one() / m;
            a.column_mut(j).scale_mut(col_scale[j]);
        }
    }
    let y = a.lu().solve(&b)?;
    let x = y.component_mul(&col_scale);
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Minimum-norm least-squares step. Singular systems occur on invariant
/// subspaces (an uncontrollable but already satisfied boundary row), where
/// LU returns a rounding-level pivot and an absurd step.
fn svd_step<T: Real>(jac: &DMatrix<T>, rhs: &DVector<T>) -> Result<DVector<T>, ShootingError> {
    let svd = jac.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if let Ok(x) = svd.solve(rhs, smax * lit(1e-13)) {
        if x.iter().all(|v| v.is_finite()) {
            return Ok(x);
        }
    }
    let cond = if smin > T::zero() { to_f64(smax / smin) } else { f64::INFINITY };
    Err(ShootingError::SingularShootingJacobian { cond })
}

/// Solves the boundary-value problem with default options at the given tolerances.
pub fn solve_bvp<T: Real>(spec: &BvpSpec<T>, rtol: T, atol: T) -> Result<BvpSolution<T>, ShootingError> {
    solve_bvp_with(spec, &ShootingOptions::new(rtol, atol))
}

pub fn solve_bvp_with<T: Real>(spec: &BvpSpec<T>, opts: &ShootingOptions<T>) -> Result<BvpSolution<T>, ShootingError> {
    spec.validate()?;
    let path = guess_path(spec, opts);
    let mut problem = Problem {
        spec,
        mesh: build_mesh(&spec.field, &path, spec.horizon, opts),
        ode: OdeOptions::new(opts.rtol, opts.atol),
        n: spec.state_dim(),
    };
    let tol = opts.tol * spec.data_scale();
    let target = lit::<T>(1e-11) * spec.data_scale();

    // Split segments whose free flow from the guess escapes.
    let mut s = problem.initial_unknowns(&path);
    let mut refinements = 0usize;
    let (mut r, mut pieces) = loop {
        match problem.residual_at(&s) {
            Ok(v) => break v,
            Err((j, e)) => {
                refinements += 1;
                if refinements > 40 || problem.mesh.segments() >= 4 * opts.max_segments {
                    return Err(ShootingError::IntegrationBlowup(e));
                }
                let mid = (problem.mesh.nodes[j] + problem.mesh.nodes[j + 1]) * lit(0.5);
                problem.mesh.nodes.insert(j + 1, mid);
                s = problem.initial_unknowns(&path);
            }
        }
    };
    let mut rnorm = problem.scaled_norm(&r, &s);
    let mut iters = 0usize;
    let mut stalled = 0usize;
    while rnorm > target && iters < opts.max_iters {
        iters += 1;
        let flows = match problem.flows(&s) {
            Ok(f) => f,
            Err(e) => return Err(ShootingError::IntegrationBlowup(e)),
        };
        let jac = problem.jacobian(&flows);
        let merit = r.norm();
        let mut lambda = T::one();
        let mut accepted = false;
        let mut tried_svd = false;
        let mut step = match lu_step(&jac, &r) {
            Some(st) => st,
            None => {
                tried_svd = true;
                svd_step(&jac, &r)?
            }
        };
        loop {
            for _ in 0..30 {
                let trial = &s - &step * lambda;
                if let Ok((rt, pt)) = problem.residual(&trial) {
                    if rt.iter().all(|v| v.is_finite()) && rt.norm() <= merit * (T::one() - lit::<T>(1e-4) * lambda) {
                        s = trial;
                        r = rt;
                        pieces = pt;
                        accepted = true;
                        break;
                    }
                }
                lambda *= lit(0.5);
            }
            if accepted || tried_svd {
                break;
            }
            tried_svd = true;
            step = svd_step(&jac, &r)?;
            lambda = T::one();
        }
        let new_norm = problem.scaled_norm(&r, &s);
        if !accepted {
            break;
        }
        // Crawling along with tiny steps: give up early.
        stalled = if new_norm > rnorm * lit(0.99) { stalled + 1 } else { 0 };
        if stalled >= 8 {
            rnorm = new_norm;
            break;
        }
        // Rounding floor: a full step that barely helps means we are done.
        if lambda == T::one() && new_norm > rnorm * lit(0.5) && new_norm <= tol {
            rnorm = new_norm;
            break;
        }
        rnorm = new_norm;
    }
    if !(rnorm <= tol) {
        return Err(ShootingError::NewtonDivergence {
            iterations: iters,
            residual: to_f64(rnorm),
            best_p0: s.rows(0, problem.n).iter().map(|v| to_f64(*v)).collect(),
        });
    }
    let n = problem.n;
    let node_states = (0..=problem.mesh.segments())
        .map(|j| if j < problem.mesh.segments() { problem.start(&s, j) } else { pieces.last().unwrap().final_state().clone() })
        .collect();
    Ok(BvpSolution {
        trajectory: Trajectory::concat(pieces),
        p0: s.rows(0, n).into_owned(),
        residual: rnorm,
        newton_iters: iters,
        continuation_path: Vec::new(),
        field: spec.field.clone(),
        horizon: spec.horizon,
        x0: spec.x0.clone(),
        terminal: spec.terminal.clone(),
        mesh: problem.mesh.nodes,
        node_states,
        options: *opts,
    })
}

/// One homotopy step; `None` fields keep their current value.
#[derive(Debug, Clone)]
pub struct ContinuationStep<T: Real> {
    pub horizon: Option<T>,
    pub x0: Option<DVector<T>>,
    pub xf: Option<DVector<T>>,
    pub z: Option<DVector<T>>,
}

#[derive(Debug, Clone)]
pub struct ContinuationPlan<T: Real> {
    pub steps: Vec<ContinuationStep<T>>,
}

impl<T: Real> Default for ContinuationStep<T> {
    fn default() -> Self {
        Self { horizon: None, x0: None, xf: None, z: None }
    }
}

impl<T: Real> Default for ContinuationPlan<T> {
    fn default() -> Self {
        Self { steps: Vec::new() }
    }
}

impl<T: Real> ContinuationPlan<T> {
    pub fn horizon_ramp(horizons: &[T]) -> Self {
        Self { steps: horizons.iter().map(|&t| ContinuationStep { horizon: Some(t), ..Default::default() }).collect() }
    }

    /// `k` equal steps from `from` to `to` in the initial state.
    pub fn x0_ramp(from: &DVector<T>, to: &DVector<T>, k: usize) -> Self {
        let k = k.max(1);
        let steps = (1..=k)
            .map(|i| {
                let s = lit::<T>(i as f64) / lit::<T>(k as f64);
                ContinuationStep { x0: Some(from + (to - from) * s), ..Default::default() }
            })
            .collect();
        Self { steps }
    }

    pub fn then(mut self, other: Self) -> Self {
        self.steps.extend(other.steps);
        self
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

#[derive(Debug, Clone)]
struct Params<T: Real> {
    horizon: T,
    x0: DVector<T>,
    xf: Option<DVector<T>>,
    z: DVector<T>,
}

impl<T: Real> Params<T> {
    fn of(spec: &BvpSpec<T>) -> Self {
        let xf = match &spec.terminal {
            Terminal::StateTarget(xf) => Some(xf.clone()),
            Terminal::CostateZero => None,
        };
        Self { horizon: spec.horizon, x0: spec.x0.clone(), xf, z: spec.field.target().clone() }
    }

    fn apply(&self, step: &ContinuationStep<T>) -> Self {
        Self {
            horizon: step.horizon.unwrap_or(self.horizon),
            x0: step.x0.clone().unwrap_or_else(|| self.x0.clone()),
            xf: match (&self.xf, &step.xf) {
                (Some(_), Some(new)) => Some(new.clone()),
                (cur, _) => cur.clone(),
            },
            z: step.z.clone().unwrap_or_else(|| self.z.clone()),
        }
    }

    fn lerp(&self, other: &Self, s: T) -> Self {
        let mix = |a: &DVector<T>, b: &DVector<T>| a + (b - a) * s;
        Self {
            horizon: self.horizon + (other.horizon - self.horizon) * s,
            x0: mix(&self.x0, &other.x0),
            xf: match (&self.xf, &other.xf) {
                (Some(a), Some(b)) => Some(mix(a, b)),
                _ => None,
            },
            z: mix(&self.z, &other.z),
        }
    }
}

/// Maps a path on `[0, T_old]` onto `[0, T_new]`: the first half keeps
/// absolute times, the second half keeps times-to-go, and the gap (if any) is
/// filled with the midpoint state.
pub fn remap_path<T: Real>(path: &Trajectory<T>, field: &HamiltonianField<T>, new_horizon: T) -> Trajectory<T> {
    let old = path.t1();
    let half_old = old * lit(0.5);
    let half_new = new_horizon * lit(0.5);
    let samples = 800usize;
    let mut times = Vec::with_capacity(samples + 1);
    let mut states = Vec::with_capacity(samples + 1);
    let mut derivs = Vec::with_capacity(samples + 1);
    for k in 0..=samples {
        let t = new_horizon * lit::<T>(k as f64) / lit::<T>(samples as f64);
        let src = if t <= half_new { t.min(half_old) } else { (old - (new_horizon - t)).max(half_old) };
        let w = path.eval(src);
        derivs.push(field.eval(&w));
        states.push(w);
        times.push(t);
    }
    Trajectory::from_nodes(times, states, derivs)
}

fn spec_for<T: Real>(base: &BvpSpec<T>, p: &Params<T>, warm: &BvpSolution<T>) -> BvpSpec<T> {
    let field = base.field.with_target(p.z.clone());
    let terminal = match &p.xf {
        Some(xf) => Terminal::StateTarget(xf.clone()),
        None => Terminal::CostateZero,
    };
    let path = remap_path(&warm.trajectory, &field, p.horizon);
    BvpSpec { field, horizon: p.horizon, x0: p.x0.clone(), terminal, p0_guess: warm.p0.clone(), path_guess: Some(path) }
}

fn record<T: Real>(sol: &BvpSolution<T>) -> ContinuationRecord<T> {
    ContinuationRecord {
        horizon: sol.horizon,
        x0: sol.x0.clone(),
        terminal: sol.terminal.clone(),
        target: sol.field.target().clone(),
        p0: sol.p0.clone(),
        residual: sol.residual,
    }
}

/// Result of a continuation that may stop short of its goal.
#[derive(Debug, Clone)]
pub struct ContinuationOutcome<T: Real> {
    /// Last converged solution along the chain.
    pub solution: BvpSolution<T>,
    /// Why the chain stopped early, if it did.
    pub failure: Option<ShootingError>,
}

impl<T: Real> ContinuationOutcome<T> {
    pub fn completed(&self) -> bool {
        self.failure.is_none()
    }

    pub fn into_result(self) -> Result<BvpSolution<T>, ShootingError> {
        match self.failure {
            None => Ok(self.solution),
            Some(e) => Err(e),
        }
    }
}

/// Solves `spec`, then walks the plan, warm-starting each problem from the
/// previous solution. A failing step is bisected (at most
/// `max_bisections` times per step).
pub fn solve_with_continuation<T: Real>(
    spec: &BvpSpec<T>,
    plan: &ContinuationPlan<T>,
    opts: &ShootingOptions<T>,
) -> Result<BvpSolution<T>, ShootingError> {
    continue_as_far_as_possible(spec, plan, opts)?.into_result()
}

/// Like [`solve_with_continuation`], but a stalled step returns the last
/// converged solution together with the failure. Only a failure of the
/// initial problem is an error.
pub fn continue_as_far_as_possible<T: Real>(
    spec: &BvpSpec<T>,
    plan: &ContinuationPlan<T>,
    opts: &ShootingOptions<T>,
) -> Result<ContinuationOutcome<T>, ShootingError> {
    let sol = solve_bvp_with(spec, opts).map_err(|e| ShootingError::ContinuationStalled {
        step: 0,
        reason: format!("initial problem: {e}"),
    })?;
    Ok(walk(spec, sol, plan, opts))
}

fn walk<T: Real>(spec: &BvpSpec<T>, mut sol: BvpSolution<T>, plan: &ContinuationPlan<T>, opts: &ShootingOptions<T>) -> ContinuationOutcome<T> {
    let mut path = std::mem::take(&mut sol.continuation_path);
    if path.is_empty() {
        path.push(record(&sol));
    }
    let mut current = Params::of(&sol.spec());
    let mut failure = None;
    'steps: for (idx, step) in plan.steps.iter().enumerate() {
        let goal = current.apply(step);
        let mut done = T::zero();
        let mut frac = T::one();
        let mut bisections = 0usize;
        let start = current.clone();
        while done < T::one() {
            let next = (done + frac).min(T::one());
            let params = start.lerp(&goal, next);
            match solve_bvp_with(&spec_for(spec, &params, &sol), opts) {
                Ok(s) => {
                    sol = s;
                    path.push(record(&sol));
                    done = next;
                }
                Err(e) => {
                    bisections += 1;
                    if bisections > opts.max_bisections {
                        failure = Some(ShootingError::ContinuationStalled {
                            step: idx + 1,
                            reason: format!("reached fraction {:.4} of the step: {e}", to_f64(done)),
                        });
                        break 'steps;
                    }
                    frac *= lit(0.5);
                }
            }
        }
        current = goal;
    }
    sol.continuation_path = path;
    ContinuationOutcome { solution: sol, failure }
}

/// Fixed-endpoint problems with large `x0` via a released endpoint.
///
/// The free-endpoint problem is solved first while `x0` is ramped in
/// `x0_steps` steps from the steady optimum. Its natural `x(T)` then becomes
/// the target, which is walked to `x_f` in two phases: first the components
/// that must move by more than `1e−3·(1 + |x_f|)`, in `xf_steps` steps, then
/// the remaining small adjustments in one step. Each phase keeps the best
/// solution reached, so a target that cannot be met exactly (an invariant
/// subspace, say) still yields the closest converged trajectory.
pub fn solve_fixed_endpoint_released<T: Real>(
    spec: &BvpSpec<T>,
    opt: &SteadyOptimum<T>,
    x0_steps: usize,
    xf_steps: usize,
    opts: &ShootingOptions<T>,
) -> Result<ContinuationOutcome<T>, ShootingError> {
    let Terminal::StateTarget(xf) = &spec.terminal else {
        return Err(ShootingError::InvalidSpec("released endpoint needs a state target".into()));
    };
    spec.validate()?;
    let start = opt.x_bar.clone();
    let free = BvpSpec::near_steady(spec.field.clone(), spec.horizon, start.clone(), Terminal::CostateZero, opt);
    let plan = ContinuationPlan::x0_ramp(&start, &spec.x0, x0_steps.max(1));
    let released = continue_as_far_as_possible(&free, &plan, opts)?;
    if released.failure.is_some() {
        return Ok(released);
    }
    let natural = released.solution.state(spec.horizon);
    let mut fixed = released.solution.spec();
    fixed.terminal = Terminal::StateTarget(natural.clone());
    let sol = solve_bvp_with(&fixed, opts)?;

    let big = lit::<T>(1e-3) * (T::one() + xf.norm());
    let coarse = DVector::from_fn(xf.len(), |i, _| if (xf[i] - natural[i]).abs() > big { xf[i] } else { natural[i] });
    let k = xf_steps.max(1);
    let steps: Vec<ContinuationStep<T>> = (1..=k)
        .map(|i| {
            let s = lit::<T>(i as f64) / lit::<T>(k as f64);
            ContinuationStep { xf: Some(&natural + (&coarse - &natural) * s), ..Default::default() }
        })
        .collect();
    let mut outcome = walk(&fixed, sol, &ContinuationPlan { steps }, opts);
    if outcome.failure.is_none() && coarse != *xf {
        let fine = ShootingOptions { max_bisections: opts.max_bisections.min(2), ..*opts };
        let last = ContinuationPlan { steps: vec![ContinuationStep { xf: Some(xf.clone()), ..Default::default() }] };
        let base = outcome.solution.spec();
        outcome = walk(&base, outcome.solution, &last, &fine);
    }
    let mut path = released.solution.continuation_path;
    path.append(&mut outcome.solution.continuation_path);
    outcome.solution.continuation_path = path;
    Ok(outcome)
}

/// Outcome of the determinant test on `D_{x0} x_T(t, x0)`.
#[derive(Debug, Clone)]
pub struct PConditionReport<T: Real> {
    pub ok: bool,
    pub min_abs_det: T,
    /// `(t, det D_{x0}x(t))` at the sample times.
    pub dets: Vec<(T, T)>,
    /// `det / Π‖column‖`, in `[−1, 1]`; the scale-free quantity the verdict uses.
    pub normalized: Vec<T>,
}

/// Samples `det D_{x0} x_T(t, x0)` along a solved trajectory.
///
/// The sensitivity of the node unknowns to `x0` comes from the converged
/// Newton system. For the fixed-endpoint problem `x(T)` does not depend on
/// `x0`, so the samples stop short of `T`.
pub fn verify_p_condition<T: Real>(sol: &BvpSolution<T>, samples: usize) -> Result<PConditionReport<T>, ShootingError> {
    let spec = sol.spec();
    let n = sol.state_dim();
    let problem = Problem { spec: &spec, mesh: Mesh { nodes: sol.mesh.clone() }, ode: OdeOptions::new(sol.options.rtol, sol.options.atol), n };
    let mut s = DVector::zeros(problem.unknowns());
    s.rows_mut(0, n).copy_from(&sol.p0);
    for j in 1..problem.mesh.segments() {
        s.rows_mut(n + 2 * n * (j - 1), 2 * n).copy_from(&sol.node_states[j]);
    }
    let flows = problem.flows(&s).map_err(ShootingError::IntegrationBlowup)?;
    let jac = problem.jacobian(&flows);
    let dfdx0 = problem.d_residual_d_x0(&flows);
    let lu = jac.clone().lu();
    let ds = lu.solve(&(-dfdx0)).filter(|m| m.iter().all(|v| v.is_finite()));
    let ds = match ds {
        Some(d) => d,
        None => {
            let _ = svd_step(&jac, &DVector::zeros(jac.nrows()))?;
            return Err(ShootingError::SingularShootingJacobian { cond: f64::INFINITY });
        }
    };
    // Sensitivity of each node state to x0.
    let node_sens = |j: usize| -> DMatrix<T> {
        if j == 0 {
            let mut d = DMatrix::zeros(2 * n, n);
            d.view_mut((0, 0), (n, n)).fill_with_identity();
            d.view_mut((n, 0), (n, n)).copy_from(&ds.view((0, 0), (n, n)));
            d
        } else {
            ds.view((n + 2 * n * (j - 1), 0), (2 * n, n)).into_owned()
        }
    };
    let samples = samples.max(2);
    let fixed_end = matches!(sol.terminal, Terminal::StateTarget(_));
    let times: Vec<T> = (0..samples)
        .map(|k| {
            let denom = if fixed_end { samples } else { samples - 1 };
            sol.horizon * lit::<T>(k as f64) / lit::<T>(denom as f64)
        })
        .collect();
    let mut dets = Vec::with_capacity(samples);
    let mut normalized = Vec::with_capacity(samples);
    let segs = problem.mesh.segments();
    for &t in &times {
        let j = (0..segs).find(|&j| t < problem.mesh.nodes[j + 1]).unwrap_or(segs - 1);
        let phi = flows[j].sensitivity(t);
        let dz = phi * node_sens(j);
        let dx = dz.rows(0, n).into_owned();
        let det = dx.determinant();
        let cols = (0..n).fold(T::one(), |acc, k| acc * dx.column(k).norm());
        normalized.push(if cols > T::zero() { det / cols } else { T::zero() });
        dets.push((t, det));
    }
    let min_abs_det = dets.iter().fold(T::max_value().unwrap_or(lit(f64::MAX)), |acc, (_, d)| acc.min(d.abs()));
    let magnitude_ok = normalized.iter().all(|v| v.abs() > lit(1e-10));
    let sign_ok = dets.windows(2).all(|w| w[0].1 * w[1].1 > T::zero());
    Ok(PConditionReport { ok: magnitude_ok && sign_ok, min_abs_det, dets, normalized })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_hamiltonian_field, solve_sop, Objective, OcpProblem};
    use crate::systems::{LinearSystem, ScalarCubic};
    use nalgebra::{dmatrix, dvector};
    use std::sync::Arc;

    fn scalar_ocp2(x0: f64, xf: f64) -> OcpProblem<f64> {
        OcpProblem::new(
            Arc::new(ScalarCubic),
            Objective::FixedEndpoint { xf: dvector![xf] },
            DMatrix::zeros(1, 1),
            dvector![x0],
            vec![20.0],
        )
        .unwrap()
    }

    #[test]
    fn zero_data_gives_zero_solution() {
        let prob = scalar_ocp2(0.0, 0.0);
        let field = build_hamiltonian_field(&prob);
        let spec = BvpSpec::new(field, 5.0, dvector![0.0], Terminal::StateTarget(dvector![0.0]), dvector![0.0]);
        let sol = solve_bvp(&spec, 1e-10, 1e-12).unwrap();
        assert_eq!(sol.p0[0], 0.0);
        for (_, z) in sol.trajectory.sample_uniform(50) {
            assert_eq!(z.amax(), 0.0);
        }
    }

    #[test]
    fn scalar_lqr_free_end_matches_closed_form() {
        // ẋ = u, cost ½∫x² + u²; with p(T) = 0 the costate is p = tanh(T − t)·x.
        let sys = Arc::new(LinearSystem::new(dmatrix![0.0], dmatrix![1.0]));
        let prob = OcpProblem::new(sys, Objective::Tracking { z: dvector![0.0] }, dmatrix![1.0], dvector![1.0], vec![3.0]).unwrap();
        let field = build_hamiltonian_field(&prob);
        let opt = &solve_sop(&prob, &[dvector![0.0]]).unwrap().optima[0];
        let spec = BvpSpec::near_steady(field, 3.0, dvector![1.0], Terminal::CostateZero, opt);
        let sol = solve_bvp(&spec, 1e-11, 1e-13).unwrap();
        assert!((sol.p0[0] - 3f64.tanh()).abs() < 1e-8, "{}", sol.p0[0]);
        assert!(sol.boundary_residual() < 1e-8);
    }

    #[test]
    fn continuation_with_empty_plan_matches_direct() {
        let prob = scalar_ocp2(0.5, 0.0);
        let field = build_hamiltonian_field(&prob);
        let opt = &solve_sop(&prob, &[dvector![0.0]]).unwrap().optima[0];
        let spec = BvpSpec::near_steady(field, 6.0, dvector![0.5], Terminal::StateTarget(dvector![0.0]), opt);
        let opts = ShootingOptions::new(1e-10, 1e-12);
        let a = solve_bvp_with(&spec, &opts).unwrap();
        let b = solve_with_continuation(&spec, &ContinuationPlan::default(), &opts).unwrap();
        assert_eq!(a.p0, b.p0);
    }

    #[test]
    fn shooting_jacobian_matches_finite_differences() {
        let prob = scalar_ocp2(0.3, -0.2);
        let field = build_hamiltonian_field(&prob);
        let spec = BvpSpec::new(field.clone(), 1.0, dvector![0.3], Terminal::StateTarget(dvector![-0.2]), dvector![0.1]);
        let problem = Problem { spec: &spec, mesh: Mesh { nodes: vec![0.0, 1.0] }, ode: OdeOptions::new(1e-12, 1e-14), n: 1 };
        let s = dvector![0.1];
        let jac = problem.jacobian(&problem.flows(&s).unwrap());
        let h = 1e-6;
        let rp = problem.residual(&dvector![0.1 + h]).unwrap().0;
        let rm = problem.residual(&dvector![0.1 - h]).unwrap().0;
        let fd = (rp[0] - rm[0]) / (2.0 * h);
        assert!((jac[(0, 0)] - fd).abs() < 1e-4 * fd.abs());
    }

    #[test]
    fn p_condition_on_scalar_lqr() {
        let sys = Arc::new(LinearSystem::new(dmatrix![0.0], dmatrix![1.0]));
        let prob = OcpProblem::new(sys, Objective::Tracking { z: dvector![0.0] }, dmatrix![1.0], dvector![1.0], vec![3.0]).unwrap();
        let field = build_hamiltonian_field(&prob);
        let opt = &solve_sop(&prob, &[dvector![0.0]]).unwrap().optima[0];
        let spec = BvpSpec::near_steady(field, 3.0, dvector![1.0], Terminal::CostateZero, opt);
        let sol = solve_bvp(&spec, 1e-11, 1e-13).unwrap();
        let rep = verify_p_condition(&sol, 50).unwrap();
        assert!(rep.ok);
        // D_{x0}x(t) = cosh(T − t)/cosh(T).
        for &(t, d) in &rep.dets {
            let t: f64 = t;
            let exact = (3.0 - t).cosh() / 3f64.cosh();
            assert!((d - exact).abs() < 1e-7, "t={t} det={d} exact={exact}");
        }
    }
}
