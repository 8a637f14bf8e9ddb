//! Stable and unstable manifolds of Hamiltonian equilibria: tangent spaces,
//! sampled charts, one-dimensional branches in the phase plane, exactly
//! affine unstable manifolds, and the radius of the bounded-decay tube.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use thiserror::Error;

use crate::linham::{self, Half, LinalgError};
use crate::model::{build_hamiltonian_field, HamiltonianField, OcpProblem, SteadyOptimum};
use crate::odeflow::{self, OdeError, OdeOptions, VectorField};
use crate::scalar::{lit, norm2, to_f64, Real};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ManifoldError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Ode(#[from] OdeError),
    #[error("equilibrium is not hyperbolic")]
    NotHyperbolic,
    #[error("system `{0}` has no block-triangular split")]
    NotInClass(String),
    #[error("Riccati and eigenvector tangent spaces disagree (sin of largest principal angle {0:e})")]
    TangentMismatch(f64),
    #[error("phase-plane growth needs a two-dimensional field, got {0}")]
    NotPlanar(usize),
    #[error("the baseline point violates its own bound at t = {t:e}")]
    InvalidBaseline { t: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ManifoldKind {
    Stable,
    Unstable,
}

/// `{base + span·c}` with orthonormal `span`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineSet<T: Real> {
    pub base: DVector<T>,
    pub span: DMatrix<T>,
}

impl<T: Real> AffineSet<T> {
    /// The set `{z : G(z − base) = 0}`.
    pub fn from_constraints(base: DVector<T>, g: &DMatrix<T>) -> Self {
        Self { base, span: null_space(g) }
    }

    pub fn dim(&self) -> usize {
        self.span.ncols()
    }

    pub fn distance(&self, z: &DVector<T>) -> T {
        let d = z - &self.base;
        let along = &self.span * (self.span.transpose() * &d);
        (d - along).norm()
    }

    pub fn point(&self, coords: &DVector<T>) -> DVector<T> {
        &self.base + &self.span * coords
    }
}

#[derive(Debug, Clone)]
pub struct InvariantManifoldChart<T: Real> {
    pub equilibrium: DVector<T>,
    pub kind: ManifoldKind,
    /// Orthonormal `2n × n`.
    pub tangent_basis: DMatrix<T>,
    pub samples: Vec<DVector<T>>,
    pub affine: Option<AffineSet<T>>,
    /// Sine of the largest principal angle between the Riccati and the
    /// eigenvector tangent spaces.
    pub principal_angle: T,
    /// Smallest `|Re λ|` of the linearization.
    pub mu_lin: T,
}

impl<T: Real> InvariantManifoldChart<T> {
    /// Bare chart at `equilibrium`, for fields without a Riccati structure.
    pub fn at_point(equilibrium: DVector<T>, kind: ManifoldKind, tangent_basis: DMatrix<T>, mu_lin: T) -> Self {
        Self { equilibrium, kind, tangent_basis, samples: Vec::new(), affine: None, principal_angle: T::zero(), mu_lin }
    }

    /// Time over which the linearization contracts by `e^{5}`.
    pub fn decay_time(&self) -> T {
        lit::<T>(5.0) / self.mu_lin
    }
}

fn orthonormalize<T: Real>(m: &DMatrix<T>) -> DMatrix<T> {
    m.clone().qr().q()
}

fn null_space<T: Real>(g: &DMatrix<T>) -> DMatrix<T> {
    let dim = g.ncols();
    // Pad to square so the SVD returns a full right basis.
    let mut sq = DMatrix::zeros(dim.max(g.nrows()), dim);
    sq.view_mut((0, 0), (g.nrows(), dim)).copy_from(g);
    let svd = sq.svd(false, true);
    let vt = svd.v_t.expect("requested V");
    let smax = svd.singular_values.iter().fold(T::zero(), |a, s| a.max(*s));
    let cut = lit::<T>(1e-10) * (T::one() + smax);
    let cols: Vec<DVector<T>> = (0..dim)
        .filter(|&k| svd.singular_values[k] <= cut)
        .map(|k| vt.row(k).transpose())
        .collect();
    if cols.is_empty() {
        DMatrix::zeros(dim, 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

/// Sine of the largest principal angle between the column spans of two
/// orthonormal bases of equal dimension.
pub fn principal_angle_sine<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>) -> T {
    let proj = a * (a.transpose() * b);
    norm2(&(b - proj))
}

/// Tangent spaces `T S = {(u, Pu)}` and `T U = {(Lu, (PL + I)u)}` at a
/// hyperbolic steady optimum. The weight is the full second-order one,
/// which reduces to `CᵀC` when `p̄ = 0`.
pub fn tangent_spaces<T: Real>(
    opt: &SteadyOptimum<T>,
    c: &DMatrix<T>,
) -> Result<(InvariantManifoldChart<T>, InvariantManifoldChart<T>), ManifoldError> {
    let n = opt.x_bar.len();
    if c.ncols() != n {
        return Err(LinalgError::DimensionMismatch(format!("C has {} columns, expected {n}", c.ncols())).into());
    }
    if !opt.hyperbolic {
        return Err(ManifoldError::NotHyperbolic);
    }
    let r = &opt.b_z * opt.b_z.transpose();
    let sol = linham::solve_care(&opt.a_z, &r, &opt.q_lin)?;
    let mut stable = DMatrix::zeros(2 * n, n);
    stable.view_mut((0, 0), (n, n)).fill_with_identity();
    stable.view_mut((n, 0), (n, n)).copy_from(&sol.p);
    let mut unstable = DMatrix::zeros(2 * n, n);
    unstable.view_mut((0, 0), (n, n)).copy_from(&sol.l);
    unstable.view_mut((n, 0), (n, n)).copy_from(&sol.pl_plus_i());
    let stable = orthonormalize(&stable);
    let unstable = orthonormalize(&unstable);

    let h = opt.hamiltonian_matrix();
    let angle_s = principal_angle_sine(&linham::invariant_subspace(&h, Half::Stable)?, &stable);
    let angle_u = principal_angle_sine(&linham::invariant_subspace(&h, Half::Unstable)?, &unstable);
    let worst = angle_s.max(angle_u);
    if !(worst < lit(1e-8)) {
        return Err(ManifoldError::TangentMismatch(to_f64(worst)));
    }
    let mu_lin = opt.eigenvalues.iter().fold(lit::<T>(f64::INFINITY), |a, l| a.min(l.re.abs()));
    let eq = opt.point();
    let chart = |kind, basis: DMatrix<T>, angle| InvariantManifoldChart {
        equilibrium: eq.clone(),
        kind,
        tangent_basis: basis,
        samples: Vec::new(),
        affine: None,
        principal_angle: angle,
        mu_lin,
    };
    Ok((chart(ManifoldKind::Stable, stable, angle_s), chart(ManifoldKind::Unstable, unstable, angle_u)))
}

fn ode<T: Real>() -> OdeOptions<T> {
    OdeOptions::new(lit(1e-11), lit(1e-13))
}

/// Fills `chart.samples` with `count` points at distance `radius` from the
/// equilibrium.
///
/// Each sample starts on the tangent space very close to the equilibrium and
/// is carried outwards by the reversed flow (for the stable manifold) or the
/// flow (for the unstable one), which attracts towards the manifold, so the
/// linearization error is contracted away rather than amplified.
pub fn sample_chart<T: Real, F: VectorField<T>>(
    field: &F,
    chart: &mut InvariantManifoldChart<T>,
    count: usize,
    radius: T,
    seed: u64,
) -> Result<(), ManifoldError> {
    let k = chart.tangent_basis.ncols();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seed_dist = radius * lit(1e-7);
    let dir: T = match chart.kind {
        ManifoldKind::Stable => -T::one(),
        ManifoldKind::Unstable => T::one(),
    };
    let t_cap = lit::<T>(40.0) / chart.mu_lin;
    chart.samples.clear();
    for _ in 0..count {
        let v = DVector::from_fn(k, |_, _| lit::<T>(StandardNormal.sample(&mut rng)));
        let v = &chart.tangent_basis * (&v / v.norm());
        let start = &chart.equilibrium + v * seed_dist;
        let s = flow_to_distance(field, &start, &chart.equilibrium, radius, dir, t_cap)?;
        chart.samples.push(s);
    }
    Ok(())
}

/// Integrates in direction `dir` until the distance to `center` first reaches
/// `radius` (or `t_cap` elapses) and returns that point.
fn flow_to_distance<T: Real, F: VectorField<T>>(
    field: &F,
    start: &DVector<T>,
    center: &DVector<T>,
    radius: T,
    dir: T,
    t_cap: T,
) -> Result<DVector<T>, ManifoldError> {
    let opts = ode();
    let chunk = t_cap / lit(200.0);
    let mut z = start.clone();
    let mut elapsed = T::zero();
    while elapsed < t_cap {
        let traj = odeflow::integrate_with(field, &z, T::zero(), dir * chunk, &opts)?;
        let end = traj.final_state().clone();
        if (&end - center).norm() >= radius {
            // Bisect the crossing on the dense output.
            let (mut a, mut b) = (T::zero(), chunk);
            for _ in 0..60 {
                let m = (a + b) * lit(0.5);
                if (traj.eval(dir * m) - center).norm() >= radius {
                    b = m;
                } else {
                    a = m;
                }
            }
            return Ok(traj.eval(dir * b));
        }
        z = end;
        elapsed += chunk;
    }
    Ok(z)
}

/// Largest ratio `|φ(τ, s) − eq| / |s − eq|` over the samples, with
/// `τ = 5/μ_lin` forward (stable) or backward (unstable). Values ≤ 0.1 mean
/// every sample contracts by at least ten.
pub fn decay_ratio<T: Real, F: VectorField<T>>(field: &F, chart: &InvariantManifoldChart<T>) -> Result<T, ManifoldError> {
    let tau = match chart.kind {
        ManifoldKind::Stable => chart.decay_time(),
        ManifoldKind::Unstable => -chart.decay_time(),
    };
    let mut worst = T::zero();
    for s in &chart.samples {
        let end = odeflow::integrate_with(field, s, T::zero(), tau, &ode())?.final_state().clone();
        worst = worst.max((end - &chart.equilibrium).norm() / (s - &chart.equilibrium).norm());
    }
    Ok(worst)
}

#[derive(Debug, Clone)]
pub struct AffineCheck<T: Real> {
    pub is_affine: bool,
    pub max_drift: T,
    pub description: String,
    pub set: AffineSet<T>,
    pub threshold: T,
}

/// Flows `count` random points of `set` within `radius` of `set.base` for
/// time `horizon` and measures how far they leave the set.
pub fn verify_invariant_affine<T: Real, F: VectorField<T>>(
    field: &F,
    set: &AffineSet<T>,
    radius: T,
    count: usize,
    horizon: T,
    seed: u64,
) -> Result<(bool, T), ManifoldError> {
    let k = set.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Uniform::new(0.0f64, 1.0).expect("valid range");
    let mut drift = T::zero();
    for _ in 0..count {
        let v = DVector::from_fn(k, |_, _| lit::<T>(StandardNormal.sample(&mut rng)));
        let r = radius * lit::<T>(unit.sample(&mut rng).powf(1.0 / k.max(1) as f64));
        let z = set.point(&(&v / v.norm() * r));
        let end = odeflow::integrate_with(field, &z, T::zero(), horizon, &OdeOptions::new(lit(1e-12), lit(1e-14)))?;
        drift = drift.max(set.distance(end.final_state()));
    }
    let threshold = lit::<T>(1e-6) * (T::one() + radius);
    Ok((drift <= threshold, drift))
}

/// Checks the affine unstable manifold of the block-triangular class
/// `ẋ₁ = f₁(x₁, x₂)` with `f₁(0, ·) = 0`, `ẋ₂ = f₂(x₂) + g₂u`:
/// `U = {x₁ = x̄₁, (I + S₃P₃)(x₂ − x̄₂) − S₃(p₂ − p̄₂) = 0}`, where `P₃`, `S₃`
/// are the Riccati and Lyapunov solutions of the `x₂` block.
pub fn verify_affine_unstable<T: Real>(problem: &OcpProblem<T>, opt: &SteadyOptimum<T>) -> Result<AffineCheck<T>, ManifoldError> {
    let sys = problem.system.clone();
    let n1 = sys.triangular_split().ok_or_else(|| ManifoldError::NotInClass(sys.name().to_string()))?;
    let n = problem.state_dim();
    let n2 = n - n1;
    let a3 = opt.a_z.view((n1, n1), (n2, n2)).into_owned();
    let b2 = opt.b_z.rows(n1, n2).into_owned();
    let q3 = opt.q_lin.view((n1, n1), (n2, n2)).into_owned();
    let sol = linham::solve_care(&a3, &(&b2 * b2.transpose()), &q3)?;
    let p3 = sol.p.clone();
    let s3 = sol.l.clone();

    let mut g = DMatrix::zeros(n, 2 * n);
    g.view_mut((0, 0), (n1, n1)).fill_with_identity();
    let ip = DMatrix::identity(n2, n2) + &s3 * &p3;
    g.view_mut((n1, n1), (n2, n2)).copy_from(&ip);
    g.view_mut((n1, n + n1), (n2, n2)).copy_from(&(-&s3));
    let set = AffineSet::from_constraints(opt.point(), &g);

    let field = build_hamiltonian_field(problem);
    let radius: T = lit(2.0);
    let (is_affine, max_drift) = verify_invariant_affine(&field, &set, radius, 50, T::one(), 0x5eed)?;
    let description = if n2 == 1 {
        let (a, b) = (to_f64(ip[(0, 0)]), to_f64(s3[(0, 0)]));
        format!(
            "U = {{x1 = {}, {a:.6}(x2 - {}) - ({b:.6})(p2 - {}) = 0}}",
            fmt_vec(&opt.x_bar.rows(0, n1).into_owned()),
            to_f64(opt.x_bar[n1]),
            to_f64(opt.p_bar[n1]),
        )
    } else {
        format!("U = {{x1 = x̄1, (I + S3 P3)(x2 - x̄2) - S3 (p2 - p̄2) = 0}}, dim {}", set.dim())
    };
    Ok(AffineCheck { is_affine, max_drift, description, set, threshold: lit::<T>(1e-6) * (T::one() + radius) })
}

fn fmt_vec<T: Real>(v: &DVector<T>) -> String {
    if v.len() == 1 {
        format!("{}", to_f64(v[0]))
    } else {
        format!("{:?}", v.iter().map(|x| to_f64(*x)).collect::<Vec<_>>())
    }
}

/// Plot window for phase-plane growth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window<T> {
    pub x: (T, T),
    pub p: (T, T),
}

impl<T: Real> Window<T> {
    pub fn size(&self) -> T {
        (self.x.1 - self.x.0).max(self.p.1 - self.p.0)
    }

    pub fn contains(&self, z: &DVector<T>) -> bool {
        z[0] >= self.x.0 && z[0] <= self.x.1 && z[1] >= self.p.0 && z[1] <= self.p.1
    }

    /// Square window of half-width `h` around `center`.
    pub fn around(center: &DVector<T>, h: T) -> Self {
        Self { x: (center[0] - h, center[0] + h), p: (center[1] - h, center[1] + h) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BranchStop {
    ArcBudget,
    LeftWindow,
    /// The branch came to rest, typically at another equilibrium.
    Stalled,
    TimeLimit,
    IntegrationFailed,
}

#[derive(Debug, Clone)]
pub struct ManifoldBranch<T: Real> {
    pub kind: ManifoldKind,
    /// `+1` or `−1` along the eigenvector.
    pub sign: i8,
    pub points: Vec<DVector<T>>,
    pub arc_length: T,
    pub stop: BranchStop,
}

impl<T: Real> ManifoldBranch<T> {
    /// Distance from `z` to the polyline.
    pub fn distance_to(&self, z: &DVector<T>) -> T {
        let mut best = lit::<T>(f64::INFINITY);
        for w in self.points.windows(2) {
            let d = &w[1] - &w[0];
            let len2 = d.norm_squared();
            let s = if len2 > T::zero() { ((z - &w[0]).dot(&d) / len2).max(T::zero()).min(T::one()) } else { T::zero() };
            best = best.min((z - (&w[0] + d * s)).norm());
        }
        if self.points.len() == 1 {
            best = (z - &self.points[0]).norm();
        }
        best
    }
}

/// Grows the four one-dimensional branches of a saddle of a planar field.
///
/// Each branch starts at `eq ± ε·v` with `ε = 1e−6·window size` and the unit
/// eigenvector `v`, and follows the flow (unstable) or reversed flow (stable)
/// until its arc length reaches `arc_budget` or it leaves `window`. Points are
/// spaced at most `0.01·window size` apart. Branches grow on separate threads.
pub fn grow_manifold_2d<T: Real, F: VectorField<T>>(
    field: &F,
    eq: &DVector<T>,
    arc_budget: T,
    window: &Window<T>,
) -> Result<Vec<ManifoldBranch<T>>, ManifoldError> {
    if field.dim() != 2 {
        return Err(ManifoldError::NotPlanar(field.dim()));
    }
    let j = odeflow::jacobian_of(field, eq);
    let tr = j[(0, 0)] + j[(1, 1)];
    let det = j.determinant();
    let disc = tr * tr - det * lit(4.0);
    if !(disc > T::zero()) || !(det < T::zero()) {
        return Err(ManifoldError::NotHyperbolic);
    }
    let root = disc.sqrt();
    let lam_u = (tr + root) * lit(0.5);
    let lam_s = (tr - root) * lit(0.5);
    let eigvec = |lam: T| {
        let a = DVector::from_vec(vec![j[(0, 1)], lam - j[(0, 0)]]);
        let b = DVector::from_vec(vec![lam - j[(1, 1)], j[(1, 0)]]);
        let v = if a.norm() >= b.norm() { a } else { b };
        &v / v.norm()
    };
    let specs = [
        (ManifoldKind::Unstable, 1i8, eigvec(lam_u), lam_u),
        (ManifoldKind::Unstable, -1, eigvec(lam_u), lam_u),
        (ManifoldKind::Stable, 1, eigvec(lam_s), lam_s),
        (ManifoldKind::Stable, -1, eigvec(lam_s), lam_s),
    ];
    let branches: Vec<ManifoldBranch<T>> = std::thread::scope(|scope| {
        let handles: Vec<_> = specs
            .iter()
            .map(|(kind, sign, v, lam)| {
                let (kind, sign, v, lam) = (*kind, *sign, v.clone(), *lam);
                scope.spawn(move || grow_branch(field, eq, kind, sign, &v, lam, arc_budget, window))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("branch thread panicked")).collect()
    });
    Ok(branches)
}

#[allow(clippy::too_many_arguments)]
fn grow_branch<T: Real, F: VectorField<T>>(
    field: &F,
    eq: &DVector<T>,
    kind: ManifoldKind,
    sign: i8,
    v: &DVector<T>,
    lam: T,
    arc_budget: T,
    window: &Window<T>,
) -> ManifoldBranch<T> {
    let scale = window.size();
    let spacing = scale * lit(0.01);
    let eps = scale * lit(1e-6);
    let dir = match kind {
        ManifoldKind::Unstable => T::one(),
        ManifoldKind::Stable => -T::one(),
    };
    let sgn: T = if sign > 0 { T::one() } else { -T::one() };
    let mut z = eq + v * (eps * sgn);
    let mut points = vec![eq.clone(), z.clone()];
    let mut arc = eps;
    let chunk = lit::<T>(0.25) / lam.abs().max(lit(1e-3));
    let t_limit = lit::<T>(400.0) / lam.abs().max(lit(1e-3));
    let mut elapsed = T::zero();
    let mut quiet = 0usize;
    let opts = ode();
    let stop = loop {
        if elapsed >= t_limit {
            break BranchStop::TimeLimit;
        }
        let traj = match odeflow::integrate_with(field, &z, T::zero(), dir * chunk, &opts) {
            Ok(t) => t,
            Err(_) => break BranchStop::IntegrationFailed,
        };
        elapsed += chunk;
        let mut m = 16usize;
        let samples = loop {
            let pts: Vec<DVector<T>> = (1..=m).map(|i| traj.eval(dir * chunk * lit::<T>(i as f64) / lit::<T>(m as f64))).collect();
            let mut prev = z.clone();
            let mut ok = true;
            for p in &pts {
                if (p - &prev).norm() > spacing {
                    ok = false;
                    break;
                }
                prev = p.clone();
            }
            if ok || m >= 1 << 14 {
                break pts;
            }
            m *= 4;
        };
        let mut chunk_arc = T::zero();
        let mut exit = None;
        for p in samples {
            let step = (&p - points.last().unwrap()).norm();
            chunk_arc += step;
            arc += step;
            let inside = window.contains(&p);
            // Thin out points that barely move.
            if step > spacing * lit(1e-3) || !inside {
                points.push(p.clone());
            }
            if !inside {
                exit = Some(BranchStop::LeftWindow);
                break;
            }
            if arc >= arc_budget {
                exit = Some(BranchStop::ArcBudget);
                break;
            }
        }
        if let Some(s) = exit {
            break s;
        }
        z = traj.final_state().clone();
        quiet = if chunk_arc < scale * lit(1e-9) { quiet + 1 } else { 0 };
        if quiet >= 8 {
            break BranchStop::Stalled;
        }
    };
    let last = points.last().unwrap().clone();
    if (&last - &z).norm() > T::zero() && !matches!(stop, BranchStop::LeftWindow | BranchStop::ArcBudget) {
        points.push(z);
    }
    ManifoldBranch { kind, sign, points, arc_length: arc, stop }
}

/// A periodic orbit found by first return to the section through the start.
#[derive(Debug, Clone)]
pub struct ClosedOrbit<T: Real> {
    pub period: T,
    pub points: Vec<DVector<T>>,
    /// `|φ(period, z0) − z0|`.
    pub closure_error: T,
    /// Largest `|H(φ(t, z0)) − H(z0)|` over the orbit.
    pub level_drift: T,
}

/// Integrates from `start` until the orbit first returns to the line through
/// `start` normal to the initial velocity, crossing it in the same sense.
/// `None` when no return happens within `max_time`.
pub fn trace_closed_orbit<T: Real>(
    field: &HamiltonianField<T>,
    start: &DVector<T>,
    max_time: T,
) -> Result<Option<ClosedOrbit<T>>, ManifoldError> {
    let v0 = field.eval(start);
    let speed = v0.norm();
    if !(speed > T::zero()) {
        return Ok(None);
    }
    let side = |z: &DVector<T>| (z - start).dot(&v0);
    let h0 = field.hamiltonian_at(start);
    let opts = ode();
    let chunk = lit::<T>(0.05);
    let mut z = start.clone();
    let mut t0 = T::zero();
    let mut points = vec![start.clone()];
    let mut drift = T::zero();
    let mut away = false;
    while t0 < max_time {
        let traj = odeflow::integrate_with(field, &z, T::zero(), chunk, &opts)?;
        let m = 20usize;
        let mut prev_t = T::zero();
        let mut prev = z.clone();
        for i in 1..=m {
            let t = chunk * lit::<T>(i as f64) / lit::<T>(m as f64);
            let p = traj.eval(t);
            drift = drift.max((field.hamiltonian_at(&p) - h0).abs());
            if (&p - start).norm() > speed * chunk {
                away = true;
            }
            if away && side(&prev) < T::zero() && side(&p) >= T::zero() {
                let (mut a, mut b) = (prev_t, t);
                for _ in 0..80 {
                    let mid = (a + b) * lit(0.5);
                    if side(&traj.eval(mid)) < T::zero() {
                        a = mid;
                    } else {
                        b = mid;
                    }
                }
                let end = traj.eval(b);
                points.push(end.clone());
                return Ok(Some(ClosedOrbit {
                    period: t0 + b,
                    closure_error: (&end - start).norm(),
                    points,
                    level_drift: drift,
                }));
            }
            points.push(p.clone());
            prev = p;
            prev_t = t;
        }
        z = traj.final_state().clone();
        t0 += chunk;
    }
    Ok(None)
}

/// Options for [`estimate_rho`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RhoOptions<T> {
    pub directions: usize,
    pub grid: usize,
    pub seed: u64,
    /// Bisection stops when the bracket is this narrow (relative).
    pub rel_tol: T,
    pub max_radius: T,
}

impl<T: Real> Default for RhoOptions<T> {
    fn default() -> Self {
        Self { directions: 32, grid: 100, seed: 0x7e5, rel_tol: lit(1e-6), max_radius: lit(1e3) }
    }
}

fn within_bound<T: Real, F: VectorField<T>>(field: &F, eq: &DVector<T>, y: &DVector<T>, horizon: T, k: T, mu: T, grid: usize) -> Option<T> {
    let traj = odeflow::integrate_with(field, y, T::zero(), horizon, &ode()).ok()?;
    for i in 0..grid {
        let t = horizon * lit::<T>(i as f64) / lit::<T>((grid - 1).max(1) as f64);
        let bound = k * (-mu * t).exp();
        if (traj.eval(t) - eq).norm() > bound * (T::one() + lit(1e-9)) {
            return Some(t);
        }
    }
    None
}

/// Largest `ρ` such that every sampled point of the sphere `|y − z0| = ρ`
/// satisfies `|φ(t, y) − eq| ≤ K e^{−μt}` on a uniform grid of `[0, T]`.
pub fn estimate_rho<T: Real, F: VectorField<T>>(
    field: &F,
    chart: &InvariantManifoldChart<T>,
    z0: &DVector<T>,
    horizon: T,
    k: T,
    mu: T,
    opts: &RhoOptions<T>,
) -> Result<T, ManifoldError> {
    let eq = &chart.equilibrium;
    if let Some(t) = within_bound(field, eq, z0, horizon, k, mu, opts.grid) {
        return Err(ManifoldError::InvalidBaseline { t: to_f64(t) });
    }
    let dim = z0.len();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let dirs: Vec<DVector<T>> = (0..opts.directions)
        .map(|i| {
            if dim == 1 {
                // The 1-sphere is two points.
                DVector::from_element(1, if i % 2 == 0 { T::one() } else { -T::one() })
            } else {
                let v = DVector::from_fn(dim, |_, _| lit::<T>(StandardNormal.sample(&mut rng)));
                &v / v.norm()
            }
        })
        .collect();
    let ok = |rho: T| dirs.iter().all(|d| within_bound(field, eq, &(z0 + d * rho), horizon, k, mu, opts.grid).is_none());
    let mut lo = T::zero();
    let mut hi = (k - (z0 - eq).norm()).abs().max(lit(1e-6));
    while ok(hi) {
        lo = hi;
        hi *= lit(2.0);
        if hi > opts.max_radius {
            return Ok(opts.max_radius);
        }
    }
    while hi - lo > opts.rel_tol * hi {
        let mid = (lo + hi) * lit(0.5);
        if ok(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// `ρ(T)` over a horizon grid, with whether it is non-increasing (up to a
/// relative slack of `1e−3`, the bisection resolution).
pub fn rho_sweep<T: Real, F: VectorField<T>>(
    field: &F,
    chart: &InvariantManifoldChart<T>,
    z0: &DVector<T>,
    horizons: &[T],
    k: T,
    mu: T,
    opts: &RhoOptions<T>,
) -> Result<(Vec<(T, T)>, bool), ManifoldError> {
    let values = horizons
        .iter()
        .map(|&h| estimate_rho(field, chart, z0, h, k, mu, opts).map(|r| (h, r)))
        .collect::<Result<Vec<_>, _>>()?;
    let monotone = values.windows(2).all(|w| w[1].1 <= w[0].1 * (T::one() + lit(1e-3)));
    Ok((values, monotone))
}
