//! Control-affine plants `ẋ = f(x) + g(x)u`, the two quadratic cost shapes,
//! the Hamiltonian characteristic system, and its equilibria (steady optima).
//!
//! With `H(x, p) = pᵀf(x) − ½ pᵀg(x)g(x)ᵀp + ½|Cx − z|²` the characteristic
//! system is `ẋ = ∂H/∂p`, `ṗ = −∂H/∂x`; the fixed-endpoint problem uses the
//! same Hamiltonian with `z = 0`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::linham::{self, LinalgError, PlPlusICheck, IMAG_AXIS_TOL};
use crate::odeflow::VectorField;
use crate::scalar::{lit, to_f64, Real};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("system `{name}` failed validation: {reason}")]
    SystemValidation { name: String, reason: String },
    #[error("Newton did not converge from seed {seed} (residual {residual:e})")]
    NoConvergence { seed: usize, residual: f64 },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Plant `ẋ = f(x) + g(x)u` with first derivatives.
pub trait ControlAffineSystem<T: Real>: Send + Sync {
    fn name(&self) -> &str;
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn drift(&self, x: &DVector<T>) -> DVector<T>;
    /// `g(x)`, an `n × m` matrix.
    fn input_matrix(&self, x: &DVector<T>) -> DMatrix<T>;
    fn drift_jacobian(&self, x: &DVector<T>) -> DMatrix<T>;
    /// Jacobian of each column of `g`, in column order.
    fn input_jacobians(&self, x: &DVector<T>) -> Vec<DMatrix<T>>;

    /// Hessian in `x` of `pᵀf(x) − ½|g(x)ᵀp|²`. `None` falls back to central
    /// differences of the analytic gradient.
    fn coupling_hessian(&self, _x: &DVector<T>, _p: &DVector<T>) -> Option<DMatrix<T>> {
        None
    }

    /// `Some(n1)` when the plant has the block-triangular shape
    /// `ẋ₁ = A₁x₁ + A₂(x₁, x₂)x₁`, `ẋ₂ = A₃x₂ + B₂u` with `dim x₁ = n1`,
    /// whose unstable manifold is known to be affine.
    fn triangular_split(&self) -> Option<usize> {
        None
    }
}

/// Checks `f(0) = 0` and the supplied derivatives against central differences
/// at ten seeded points of the unit ball.
pub fn validate_system<T: Real>(sys: &dyn ControlAffineSystem<T>) -> Result<(), ModelError> {
    let n = sys.state_dim();
    let m = sys.input_dim();
    let fail = |reason: String| ModelError::SystemValidation { name: sys.name().to_string(), reason };
    if n == 0 || m == 0 {
        return Err(fail("state and input dimensions must be positive".into()));
    }
    let f0 = sys.drift(&DVector::zeros(n));
    if f0.len() != n {
        return Err(fail(format!("f returns length {}, expected {n}", f0.len())));
    }
    if f0.iter().any(|v| v.abs() > lit(1e-12)) {
        return Err(fail(format!("f(0) = {:?} is not zero", f0.iter().map(|v| to_f64(*v)).collect::<Vec<_>>())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let h: T = lit(1e-6);
    for _ in 0..10 {
        let mut x = DVector::<T>::from_fn(n, |_, _| lit(rng.random_range(-1.0..1.0)));
        let nx = x.norm();
        if nx > T::one() {
            x /= nx;
        }
        let g = sys.input_matrix(&x);
        if g.nrows() != n || g.ncols() != m {
            return Err(fail(format!("g is {}x{}, expected {n}x{m}", g.nrows(), g.ncols())));
        }
        let df = sys.drift_jacobian(&x);
        let dg = sys.input_jacobians(&x);
        if dg.len() != m {
            return Err(fail(format!("{} input Jacobians, expected {m}", dg.len())));
        }
        for j in 0..n {
            let mut xp = x.clone();
            xp[j] += h;
            let mut xm = x.clone();
            xm[j] -= h;
            let fd_f = (sys.drift(&xp) - sys.drift(&xm)) / (h + h);
            let fd_g = (sys.input_matrix(&xp) - sys.input_matrix(&xm)) / (h + h);
            for i in 0..n {
                if (df[(i, j)] - fd_f[i]).abs() > lit(1e-5) {
                    return Err(fail(format!("df[{i},{j}] disagrees with finite differences")));
                }
                for k in 0..m {
                    if (dg[k][(i, j)] - fd_g[(i, k)]).abs() > lit(1e-5) {
                        return Err(fail(format!("dg[{k}][{i},{j}] disagrees with finite differences")));
                    }
                }
            }
        }
    }
    Ok(())
}

/// Which finite-horizon problem is posed.
#[derive(Debug, Clone, PartialEq)]
pub enum Objective<T: Real> {
    /// `J₁ = ½∫|Cx − z|² + |u|²`, terminal state free.
    Tracking { z: DVector<T> },
    /// `J₂ = ½∫xᵀCᵀCx + |u|²` with `x(T) = x_f`.
    FixedEndpoint { xf: DVector<T> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemKind {
    Ocp1,
    Ocp2,
}

#[derive(Clone)]
pub struct OcpProblem<T: Real> {
    pub system: Arc<dyn ControlAffineSystem<T>>,
    pub objective: Objective<T>,
    pub c: DMatrix<T>,
    pub x0: DVector<T>,
    pub horizons: Vec<T>,
}

impl<T: Real> std::fmt::Debug for OcpProblem<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OcpProblem")
            .field("system", &self.system.name())
            .field("objective", &self.objective)
            .field("c", &self.c)
            .field("x0", &self.x0)
            .field("horizons", &self.horizons)
            .finish()
    }
}

impl<T: Real> OcpProblem<T> {
    pub fn new(
        system: Arc<dyn ControlAffineSystem<T>>,
        objective: Objective<T>,
        c: DMatrix<T>,
        x0: DVector<T>,
        horizons: Vec<T>,
    ) -> Result<Self, ModelError> {
        validate_system(system.as_ref())?;
        let n = system.state_dim();
        let bad = |s: String| Err(ModelError::InvalidProblem(s));
        if c.ncols() != n {
            return bad(format!("C has {} columns, state dimension is {n}", c.ncols()));
        }
        if x0.len() != n {
            return bad(format!("x0 has length {}, expected {n}", x0.len()));
        }
        match &objective {
            Objective::Tracking { z } if z.len() != c.nrows() => {
                return bad(format!("z has length {}, C has {} rows", z.len(), c.nrows()))
            }
            Objective::FixedEndpoint { xf } if xf.len() != n => {
                return bad(format!("xf has length {}, expected {n}", xf.len()))
            }
            _ => {}
        }
        if horizons.iter().any(|t| !(*t > T::zero())) {
            return bad("horizons must be positive".into());
        }
        if horizons.windows(2).any(|w| w[1] <= w[0]) {
            return bad("horizons must be strictly increasing".into());
        }
        Ok(Self { system, objective, c, x0, horizons })
    }

    pub fn kind(&self) -> ProblemKind {
        match self.objective {
            Objective::Tracking { .. } => ProblemKind::Ocp1,
            Objective::FixedEndpoint { .. } => ProblemKind::Ocp2,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.system.state_dim()
    }

    /// Target entering the running cost (zero for the fixed-endpoint problem).
    pub fn target(&self) -> DVector<T> {
        match &self.objective {
            Objective::Tracking { z } => z.clone(),
            Objective::FixedEndpoint { .. } => DVector::zeros(self.c.nrows()),
        }
    }

    pub fn terminal_state(&self) -> Option<&DVector<T>> {
        match &self.objective {
            Objective::FixedEndpoint { xf } => Some(xf),
            Objective::Tracking { .. } => None,
        }
    }

    /// Copy with different boundary data (used by continuation).
    pub fn with_data(&self, x0: DVector<T>, objective: Objective<T>) -> Self {
        Self { x0, objective, ..self.clone() }
    }
}

/// The Hamiltonian characteristic system on `R^{2n}` with state `(x, p)`.
#[derive(Clone)]
pub struct HamiltonianField<T: Real> {
    system: Arc<dyn ControlAffineSystem<T>>,
    c: DMatrix<T>,
    ctc: DMatrix<T>,
    z: DVector<T>,
    n: usize,
}

impl<T: Real> std::fmt::Debug for HamiltonianField<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HamiltonianField")
            .field("system", &self.system.name())
            .field("n", &self.n)
            .field("z", &self.z)
            .finish()
    }
}

pub fn build_hamiltonian_field<T: Real>(problem: &OcpProblem<T>) -> HamiltonianField<T> {
    HamiltonianField::new(problem.system.clone(), problem.c.clone(), problem.target())
}

impl<T: Real> HamiltonianField<T> {
    pub fn new(system: Arc<dyn ControlAffineSystem<T>>, c: DMatrix<T>, z: DVector<T>) -> Self {
        let n = system.state_dim();
        let ctc = c.transpose() * &c;
        Self { system, c, ctc, z, n }
    }

    /// Same plant and weights with a different target.
    pub fn with_target(&self, z: DVector<T>) -> Self {
        Self { z, ..self.clone() }
    }

    pub fn system(&self) -> &Arc<dyn ControlAffineSystem<T>> {
        &self.system
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn output_matrix(&self) -> &DMatrix<T> {
        &self.c
    }

    pub fn target(&self) -> &DVector<T> {
        &self.z
    }

    pub fn split(&self, w: &DVector<T>) -> (DVector<T>, DVector<T>) {
        (w.rows(0, self.n).into_owned(), w.rows(self.n, self.n).into_owned())
    }

    pub fn join(x: &DVector<T>, p: &DVector<T>) -> DVector<T> {
        let n = x.len();
        let mut w = DVector::zeros(2 * n);
        w.rows_mut(0, n).copy_from(x);
        w.rows_mut(n, n).copy_from(p);
        w
    }

    pub fn hamiltonian(&self, x: &DVector<T>, p: &DVector<T>) -> T {
        let g = self.system.input_matrix(x);
        let gtp = g.transpose() * p;
        let e = &self.c * x - &self.z;
        p.dot(&self.system.drift(x)) - gtp.norm_squared() * lit(0.5) + e.norm_squared() * lit(0.5)
    }

    pub fn hamiltonian_at(&self, w: &DVector<T>) -> T {
        let (x, p) = self.split(w);
        self.hamiltonian(&x, &p)
    }

    /// Optimal control readback `u = −g(x)ᵀp`.
    pub fn control(&self, x: &DVector<T>, p: &DVector<T>) -> DVector<T> {
        -(self.system.input_matrix(x).transpose() * p)
    }

    pub fn control_at(&self, w: &DVector<T>) -> DVector<T> {
        let (x, p) = self.split(w);
        self.control(&x, &p)
    }

    /// `Dfᵀp − Σₖ (gₖᵀp) Dgₖᵀp`, the x-gradient of the control-and-drift part.
    fn coupling_gradient(&self, x: &DVector<T>, p: &DVector<T>) -> DVector<T> {
        let g = self.system.input_matrix(x);
        let gtp = g.transpose() * p;
        let mut grad = self.system.drift_jacobian(x).transpose() * p;
        for (k, dgk) in self.system.input_jacobians(x).iter().enumerate() {
            grad -= dgk.transpose() * p * gtp[k];
        }
        grad
    }

    fn coupling_hessian(&self, x: &DVector<T>, p: &DVector<T>) -> DMatrix<T> {
        if let Some(h) = self.system.coupling_hessian(x, p) {
            return h;
        }
        let n = self.n;
        let h = lit::<T>(1e-6) * (T::one() + x.norm());
        let mut hess = DMatrix::<T>::zeros(n, n);
        for j in 0..n {
            let mut xp = x.clone();
            xp[j] += h;
            let mut xm = x.clone();
            xm[j] -= h;
            let col = (self.coupling_gradient(&xp, p) - self.coupling_gradient(&xm, p)) / (h + h);
            hess.set_column(j, &col);
        }
        linham::symmetrize(&hess)
    }

    /// Blocks `(∂ẋ/∂x, ∂ẋ/∂p = −ggᵀ, ∂ṗ/∂x)` of the field Jacobian;
    /// `∂ṗ/∂p = −(∂ẋ/∂x)ᵀ`.
    pub fn jacobian_blocks(&self, x: &DVector<T>, p: &DVector<T>) -> (DMatrix<T>, DMatrix<T>, DMatrix<T>) {
        let g = self.system.input_matrix(x);
        let gtp = g.transpose() * p;
        let mut jxx = self.system.drift_jacobian(x);
        for (k, dgk) in self.system.input_jacobians(x).iter().enumerate() {
            let gk = g.column(k);
            jxx -= dgk * gtp[k];
            jxx -= gk * (dgk.transpose() * p).transpose();
        }
        let jxp = -(&g * g.transpose());
        let jpx = -(self.coupling_hessian(x, p) + &self.ctc);
        (jxx, jxp, jpx)
    }

    /// `(A_z, R, Q)` of the linearization `[[A_z, −R], [−Q, −A_zᵀ]]` at `(x, p)`.
    /// `Q = CᵀC` plus the second-order coupling term, which vanishes at `p = 0`.
    pub fn linearization(&self, x: &DVector<T>, p: &DVector<T>) -> (DMatrix<T>, DMatrix<T>, DMatrix<T>) {
        let (jxx, jxp, jpx) = self.jacobian_blocks(x, p);
        (jxx, -jxp, -jpx)
    }
}

impl<T: Real> VectorField<T> for HamiltonianField<T> {
    fn dim(&self) -> usize {
        2 * self.n
    }

    fn eval(&self, w: &DVector<T>) -> DVector<T> {
        let (x, p) = self.split(w);
        let g = self.system.input_matrix(&x);
        let xdot = self.system.drift(&x) - &g * (g.transpose() * &p);
        let pdot = -self.coupling_gradient(&x, &p) - self.c.transpose() * (&self.c * &x - &self.z);
        Self::join(&xdot, &pdot)
    }

    fn jacobian(&self, w: &DVector<T>) -> Option<DMatrix<T>> {
        let n = self.n;
        let (x, p) = self.split(w);
        let (jxx, jxp, jpx) = self.jacobian_blocks(&x, &p);
        let mut jac = DMatrix::<T>::zeros(2 * n, 2 * n);
        jac.view_mut((0, 0), (n, n)).copy_from(&jxx);
        jac.view_mut((0, n), (n, n)).copy_from(&jxp);
        jac.view_mut((n, 0), (n, n)).copy_from(&jpx);
        jac.view_mut((n, n), (n, n)).copy_from(&(-jxx.transpose()));
        Some(jac)
    }
}

/// A steady optimum `(x̄, ū)` with costate `p̄`: an equilibrium of the
/// Hamiltonian field.
#[derive(Debug, Clone)]
pub struct SteadyOptimum<T: Real> {
    pub x_bar: DVector<T>,
    pub u_bar: DVector<T>,
    pub p_bar: DVector<T>,
    /// `D_x D_p H(x̄, p̄)`.
    pub a_z: DMatrix<T>,
    /// `g(x̄)`.
    pub b_z: DMatrix<T>,
    /// Full second-order weight `Q` of the linearization.
    pub q_lin: DMatrix<T>,
    /// Steady cost `½(|Cx̄ − z|² + |ū|²)`.
    pub j_s: T,
    pub hyperbolic: bool,
    pub stable_dim: usize,
    pub eigenvalues: Vec<Complex<T>>,
}

impl<T: Real> SteadyOptimum<T> {
    pub fn point(&self) -> DVector<T> {
        HamiltonianField::join(&self.x_bar, &self.p_bar)
    }

    /// Linearized Hamiltonian matrix at the equilibrium.
    pub fn hamiltonian_matrix(&self) -> DMatrix<T> {
        linham::hamiltonian_matrix(&self.a_z, &(&self.b_z * self.b_z.transpose()), &self.q_lin)
    }
}

/// Converged and failed seeds of an SOP solve.
#[derive(Debug, Clone)]
pub struct SopReport<T: Real> {
    pub optima: Vec<SteadyOptimum<T>>,
    pub failures: Vec<ModelError>,
}

const SOP_MAX_ITERS: usize = 200;
const SOP_MAX_HALVINGS: usize = 40;
const SOP_TOL: f64 = 1e-11;
const DEDUP_RADIUS: f64 = 1e-6;

fn newton_equilibrium<T: Real>(field: &HamiltonianField<T>, seed: usize, w0: DVector<T>) -> Result<DVector<T>, ModelError> {
    let mut w = w0;
    let mut f = field.eval(&w);
    let tol = |w: &DVector<T>| lit::<T>(SOP_TOL) * (T::one() + w.norm());
    for _ in 0..SOP_MAX_ITERS {
        let fnorm = f.norm();
        if !fnorm.is_finite() {
            break;
        }
        if fnorm <= tol(&w) {
            // One extra full step polishes the root to rounding level.
            if let Some(step) = newton_step(field, &w, &f) {
                let w2 = &w - step;
                let f2 = field.eval(&w2);
                if f2.norm() <= fnorm {
                    return Ok(w2);
                }
            }
            return Ok(w);
        }
        let step = match newton_step(field, &w, &f) {
            Some(s) => s,
            None => break,
        };
        let mut lambda = T::one();
        let mut accepted = false;
        for _ in 0..=SOP_MAX_HALVINGS {
            let trial = &w - &step * lambda;
            let ft = field.eval(&trial);
            if ft.norm() < fnorm * (T::one() - lit::<T>(1e-4) * lambda) {
                w = trial;
                f = ft;
                accepted = true;
                break;
            }
            lambda *= lit(0.5);
        }
        if !accepted {
            break;
        }
    }
    Err(ModelError::NoConvergence { seed, residual: to_f64(f.norm()) })
}

fn newton_step<T: Real>(field: &HamiltonianField<T>, w: &DVector<T>, f: &DVector<T>) -> Option<DVector<T>> {
    let jac = field.jacobian(w)?;
    if let Some(s) = jac.clone().lu().solve(f) {
        if s.iter().all(|v| v.is_finite()) {
            return Some(s);
        }
    }
    jac.svd(true, true).solve(f, lit(1e-12)).ok()
}

/// Packages an equilibrium of the Hamiltonian field as a steady optimum.
pub fn steady_optimum_at<T: Real>(field: &HamiltonianField<T>, w: &DVector<T>) -> SteadyOptimum<T> {
    let (x, p) = field.split(w);
    let u = field.control(&x, &p);
    let (a_z, _, q_lin) = field.linearization(&x, &p);
    let b_z = field.system().input_matrix(&x);
    let e = field.output_matrix() * &x - field.target();
    let j_s = (e.norm_squared() + u.norm_squared()) * lit(0.5);
    let jac = field.jacobian(w).expect("Hamiltonian field has an analytic Jacobian");
    let eigenvalues = linham::eigenvalues(&jac);
    let scale = T::one().max(crate::scalar::max_abs(&jac));
    let axis: T = lit::<T>(IMAG_AXIS_TOL) * scale;
    let hyperbolic = eigenvalues.iter().all(|z| z.re.abs() > axis);
    let stable_dim = eigenvalues.iter().filter(|z| z.re < -axis).count();
    SteadyOptimum { x_bar: x, u_bar: u, p_bar: p, a_z, b_z, q_lin, j_s, hyperbolic, stable_dim, eigenvalues }
}

/// Solves the steady optimization problem through its first-order
/// characterization: Newton on `X_H(x, p) = 0` from every seed.
///
/// Seeds may be `n`-vectors (costate seeded at zero) or full `2n`-vectors.
/// Roots closer than `1e−6` are merged; the result is ordered by steady cost,
/// ties broken lexicographically in `(x̄, p̄)`.
pub fn solve_sop<T: Real>(problem: &OcpProblem<T>, seeds: &[DVector<T>]) -> Result<SopReport<T>, ModelError> {
    let field = build_hamiltonian_field(problem);
    solve_sop_field(&field, seeds)
}

pub fn solve_sop_field<T: Real>(field: &HamiltonianField<T>, seeds: &[DVector<T>]) -> Result<SopReport<T>, ModelError> {
    let n = field.state_dim();
    if seeds.is_empty() {
        return Err(ModelError::InvalidProblem("at least one seed is required".into()));
    }
    let mut roots = Vec::new();
    let mut failures = Vec::new();
    for (i, seed) in seeds.iter().enumerate() {
        let w0 = if seed.len() == n {
            HamiltonianField::join(seed, &DVector::zeros(n))
        } else if seed.len() == 2 * n {
            seed.clone()
        } else {
            return Err(ModelError::InvalidProblem(format!("seed {i} has length {}", seed.len())));
        };
        match newton_equilibrium(field, i, w0) {
            Ok(w) => roots.push(w),
            Err(e) => failures.push(e),
        }
    }
    roots.sort_by(|a, b| lex_cmp(a, b));
    let mut unique: Vec<DVector<T>> = Vec::new();
    for r in roots {
        if !unique.iter().any(|u| (u - &r).norm() <= lit(DEDUP_RADIUS)) {
            unique.push(r);
        }
    }
    let mut optima: Vec<SteadyOptimum<T>> = unique.iter().map(|w| steady_optimum_at(field, w)).collect();
    optima.sort_by(|a, b| {
        a.j_s
            .partial_cmp(&b.j_s)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| lex_cmp(&a.point(), &b.point()))
    });
    Ok(SopReport { optima, failures })
}

fn lex_cmp<T: Real>(a: &DVector<T>, b: &DVector<T>) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b.iter()) {
        match x.partial_cmp(y) {
            Some(std::cmp::Ordering::Equal) | None => continue,
            Some(o) => return o,
        }
    }
    std::cmp::Ordering::Equal
}

/// Verdicts on the geometric hypotheses at a steady optimum.
#[derive(Debug, Clone)]
pub struct HypothesisReport<T: Real> {
    pub stabilizable: bool,
    pub detectable: bool,
    pub hyperbolic: bool,
    /// Nonsingularity of `PL + I`: the unstable tangent space meets `{p = 0}`
    /// transversally. `None` when the Riccati solve failed.
    pub transversality: Option<PlPlusICheck<T>>,
    pub riccati_error: Option<LinalgError>,
}

impl<T: Real> HypothesisReport<T> {
    pub fn all_pass(&self) -> bool {
        self.stabilizable
            && self.detectable
            && self.hyperbolic
            && self.transversality.map(|c| c.nonsingular).unwrap_or(false)
    }
}

pub fn check_hypotheses<T: Real>(opt: &SteadyOptimum<T>, problem: &OcpProblem<T>) -> HypothesisReport<T> {
    check_linear_hypotheses(opt, &problem.c)
}

pub fn check_linear_hypotheses<T: Real>(opt: &SteadyOptimum<T>, c: &DMatrix<T>) -> HypothesisReport<T> {
    let stabilizable = linham::pbh_stabilizable(&opt.a_z, &opt.b_z);
    let detectable = linham::pbh_detectable(c, &opt.a_z);
    let r = &opt.b_z * opt.b_z.transpose();
    let (transversality, riccati_error) = match linham::solve_care(&opt.a_z, &r, &opt.q_lin) {
        Ok(sol) => (Some(linham::check_pl_plus_i(&sol.p, &sol.l)), None),
        Err(e) => (None, Some(e)),
    };
    HypothesisReport { stabilizable, detectable, hyperbolic: opt.hyperbolic, transversality, riccati_error }
}

/// Uniform `k × k` grid of `(x, p)` seeds over a rectangle (phase-plane use).
pub fn grid_seeds_2d<T: Real>(x_range: (T, T), p_range: (T, T), k: usize) -> Vec<DVector<T>> {
    let k = k.max(2);
    let step = |lo: T, hi: T, i: usize| lo + (hi - lo) * lit::<T>(i as f64) / lit::<T>((k - 1) as f64);
    let mut seeds = Vec::with_capacity(k * k);
    for i in 0..k {
        for j in 0..k {
            seeds.push(DVector::from_vec(vec![step(x_range.0, x_range.1, i), step(p_range.0, p_range.1, j)]));
        }
    }
    seeds
}
