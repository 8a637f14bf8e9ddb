//! Adaptive Dormand–Prince 5(4) integration with cubic-Hermite dense output,
//! and co-integration of the variational equation `Φ̇ = Df(z)Φ`.

use std::marker::PhantomData;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::scalar::{lit, to_f64, vmax_abs, Real};

/// Autonomous vector field `ż = f(z)`.
pub trait VectorField<T: Real>: Sync {
    fn dim(&self) -> usize;

    fn eval(&self, z: &DVector<T>) -> DVector<T>;

    /// Analytic Jacobian, when available. `None` selects central differences.
    fn jacobian(&self, _z: &DVector<T>) -> Option<DMatrix<T>> {
        None
    }
}

impl<T: Real, F: VectorField<T> + ?Sized> VectorField<T> for &F {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn eval(&self, z: &DVector<T>) -> DVector<T> {
        (**self).eval(z)
    }
    fn jacobian(&self, z: &DVector<T>) -> Option<DMatrix<T>> {
        (**self).jacobian(z)
    }
}

/// A vector field given by closures.
pub struct FnField<T, F, J> {
    pub dim: usize,
    pub f: F,
    pub jac: Option<J>,
    _scalar: PhantomData<fn() -> T>,
}

/// Placeholder Jacobian type for fields built without one.
pub type NoJacobian<T> = fn(&DVector<T>) -> DMatrix<T>;

impl<T, F> FnField<T, F, NoJacobian<T>>
where
    T: Real,
    F: Fn(&DVector<T>) -> DVector<T> + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f, jac: None, _scalar: PhantomData }
    }
}

impl<T, F, J> FnField<T, F, J>
where
    T: Real,
    F: Fn(&DVector<T>) -> DVector<T> + Sync,
    J: Fn(&DVector<T>) -> DMatrix<T> + Sync,
{
    pub fn with_jacobian(dim: usize, f: F, jac: J) -> Self {
        Self { dim, f, jac: Some(jac), _scalar: PhantomData }
    }
}

impl<T, F, J> VectorField<T> for FnField<T, F, J>
where
    T: Real,
    F: Fn(&DVector<T>) -> DVector<T> + Sync,
    J: Fn(&DVector<T>) -> DMatrix<T> + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, z: &DVector<T>) -> DVector<T> {
        (self.f)(z)
    }
    fn jacobian(&self, z: &DVector<T>) -> Option<DMatrix<T>> {
        self.jac.as_ref().map(|j| j(z))
    }
}

/// Central-difference Jacobian with step `1e−6·(1 + |z|)`.
pub fn fd_jacobian<T: Real, F: VectorField<T> + ?Sized>(field: &F, z: &DVector<T>) -> DMatrix<T> {
    let n = field.dim();
    let h = lit::<T>(1e-6) * (T::one() + z.norm());
    let two_h = h + h;
    let mut jac = DMatrix::<T>::zeros(n, n);
    let mut zp = z.clone();
    for j in 0..n {
        let orig = zp[j];
        zp[j] = orig + h;
        let fp = field.eval(&zp);
        zp[j] = orig - h;
        let fm = field.eval(&zp);
        zp[j] = orig;
        jac.set_column(j, &((fp - fm) / two_h));
    }
    jac
}

/// Analytic Jacobian if the field has one, finite differences otherwise.
pub fn jacobian_of<T: Real, F: VectorField<T> + ?Sized>(field: &F, z: &DVector<T>) -> DMatrix<T> {
    field.jacobian(z).unwrap_or_else(|| fd_jacobian(field, z))
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OdeError {
    #[error("step size underflow at t = {t:e} (h = {h:e})")]
    StepSizeUnderflow { t: f64, h: f64 },
    #[error("state blow-up at t = {t:e} (|z| = {norm:e})")]
    BlowUp { t: f64, norm: f64 },
    #[error("non-finite derivative at t = {t:e}")]
    NonFiniteDerivative { t: f64 },
    #[error("step budget of {0} exhausted")]
    TooManySteps(usize),
    #[error("invalid integration request: {0}")]
    InvalidInput(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeOptions<T> {
    pub rtol: T,
    pub atol: T,
    /// Defaults to a tenth of the span.
    pub max_step: Option<T>,
    pub max_steps: usize,
    /// Abort when the guarded components exceed this magnitude.
    pub blowup: T,
}

impl<T: Real> OdeOptions<T> {
    pub fn new(rtol: T, atol: T) -> Self {
        Self {
            rtol,
            atol,
            max_step: None,
            max_steps: 2_000_000,
            blowup: lit(1e8),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IntegrationStats {
    pub steps: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
}

impl std::ops::AddAssign for IntegrationStats {
    fn add_assign(&mut self, o: Self) {
        self.steps += o.steps;
        self.rejected += o.rejected;
        self.rhs_evals += o.rhs_evals;
    }
}

/// Accepted nodes of an integration, with derivatives for Hermite dense output.
///
/// Nodes are stored in integration order, so times decrease for backward runs.
#[derive(Debug, Clone)]
pub struct Trajectory<T: Real> {
    times: Vec<T>,
    states: Vec<DVector<T>>,
    derivs: Vec<DVector<T>>,
    pub stats: IntegrationStats,
}

impl<T: Real> Trajectory<T> {
    /// Builds a trajectory from raw nodes; `times` must be strictly monotone.
    pub fn from_nodes(times: Vec<T>, states: Vec<DVector<T>>, derivs: Vec<DVector<T>>) -> Self {
        assert!(!times.is_empty() && times.len() == states.len() && states.len() == derivs.len());
        Self { times, states, derivs, stats: IntegrationStats::default() }
    }

    pub fn t0(&self) -> T {
        self.times[0]
    }

    pub fn t1(&self) -> T {
        *self.times.last().unwrap()
    }

    pub fn dim(&self) -> usize {
        self.states[0].len()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[T] {
        &self.times
    }

    pub fn states(&self) -> &[DVector<T>] {
        &self.states
    }

    pub fn initial_state(&self) -> &DVector<T> {
        &self.states[0]
    }

    pub fn final_state(&self) -> &DVector<T> {
        self.states.last().unwrap()
    }

    fn forward(&self) -> bool {
        self.times.len() < 2 || self.times[1] > self.times[0]
    }

    /// Dense-output evaluation; times outside the span are clamped.
    pub fn eval(&self, t: T) -> DVector<T> {
        let n = self.times.len();
        if n == 1 {
            return self.states[0].clone();
        }
        let fwd = self.forward();
        // Index i of the interval [times[i], times[i+1]] containing t.
        let k = if fwd {
            self.times.partition_point(|&s| s <= t)
        } else {
            self.times.partition_point(|&s| s >= t)
        };
        if k == 0 {
            return self.states[0].clone();
        }
        if k >= n {
            return self.states[n - 1].clone();
        }
        let i = k - 1;
        let (ta, tb) = (self.times[i], self.times[i + 1]);
        let h = tb - ta;
        let s = (t - ta) / h;
        if s == T::zero() {
            return self.states[i].clone();
        }
        let one = T::one();
        let two: T = lit(2.0);
        let three: T = lit(3.0);
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = two * s3 - three * s2 + one;
        let h10 = s3 - two * s2 + s;
        let h01 = -two * s3 + three * s2;
        let h11 = s3 - s2;
        &self.states[i] * h00
            + &self.derivs[i] * (h10 * h)
            + &self.states[i + 1] * h01
            + &self.derivs[i + 1] * (h11 * h)
    }

    /// Values at `count ≥ 2` uniformly spaced times from `t0` to `t1`.
    pub fn sample_uniform(&self, count: usize) -> Vec<(T, DVector<T>)> {
        let (a, b) = (self.t0(), self.t1());
        let denom: T = lit((count.max(2) - 1) as f64);
        (0..count.max(2))
            .map(|k| {
                let t = if k + 1 == count.max(2) { b } else { a + (b - a) * lit::<T>(k as f64) / denom };
                (t, self.eval(t))
            })
            .collect()
    }

    /// Concatenates trajectories that follow each other in time. The first
    /// node of each later piece replaces the last node of the previous one.
    pub fn concat(pieces: Vec<Trajectory<T>>) -> Self {
        let mut iter = pieces.into_iter();
        let mut out = iter.next().expect("at least one piece");
        for piece in iter {
            out.times.pop();
            out.states.pop();
            out.derivs.pop();
            out.times.extend(piece.times);
            out.states.extend(piece.states);
            out.derivs.extend(piece.derivs);
            out.stats += piece.stats;
        }
        out
    }

    /// Projects every node onto the leading `k` components.
    pub fn truncated(&self, k: usize) -> Self {
        Self {
            times: self.times.clone(),
            states: self.states.iter().map(|s| s.rows(0, k).into_owned()).collect(),
            derivs: self.derivs.iter().map(|s| s.rows(0, k).into_owned()).collect(),
            stats: self.stats,
        }
    }
}

// Dormand–Prince 5(4) tableau; fields are autonomous so the nodes c_i are unused.
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

fn check_finite<T: Real>(v: &DVector<T>, t: T) -> Result<(), OdeError> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(OdeError::NonFiniteDerivative { t: to_f64(t) })
    }
}

fn guarded_norm<T: Real>(z: &DVector<T>, guard: usize) -> T {
    z.rows(0, guard.min(z.len())).iter().fold(T::zero(), |acc, x| acc.max(x.abs()))
}

fn err_norm<T: Real>(err: &DVector<T>, y: &DVector<T>, y_new: &DVector<T>, rtol: T, atol: T) -> T {
    let n = err.len();
    let mut acc = T::zero();
    for i in 0..n {
        let sc = atol + rtol * y[i].abs().max(y_new[i].abs());
        let r = err[i] / sc;
        acc += r * r;
    }
    (acc / lit(n as f64)).sqrt()
}

/// Integrates `field` from `x0` at `t0` to `t1` (either direction).
pub fn integrate<T: Real, F: VectorField<T> + ?Sized>(
    field: &F,
    x0: &DVector<T>,
    t0: T,
    t1: T,
    rtol: T,
    atol: T,
) -> Result<Trajectory<T>, OdeError> {
    integrate_with(field, x0, t0, t1, &OdeOptions::new(rtol, atol))
}

pub fn integrate_with<T: Real, F: VectorField<T> + ?Sized>(
    field: &F,
    x0: &DVector<T>,
    t0: T,
    t1: T,
    opts: &OdeOptions<T>,
) -> Result<Trajectory<T>, OdeError> {
    let guard = field.dim();
    dopri5(&|z: &DVector<T>| field.eval(z), field.dim(), guard, x0, t0, t1, opts)
}

fn dopri5<T: Real>(
    f: &dyn Fn(&DVector<T>) -> DVector<T>,
    dim: usize,
    guard: usize,
    x0: &DVector<T>,
    t0: T,
    t1: T,
    opts: &OdeOptions<T>,
) -> Result<Trajectory<T>, OdeError> {
    if x0.len() != dim {
        return Err(OdeError::InvalidInput(format!("state has length {}, field dimension {dim}", x0.len())));
    }
    if t1 == t0 {
        return Err(OdeError::InvalidInput("empty time span".into()));
    }
    if !(opts.rtol > T::zero() && opts.atol > T::zero()) {
        return Err(OdeError::InvalidInput("tolerances must be positive".into()));
    }
    if !x0.iter().all(|v| v.is_finite()) {
        return Err(OdeError::InvalidInput("non-finite initial state".into()));
    }
    let (rtol, atol) = (opts.rtol, opts.atol);
    let span = t1 - t0;
    let dir = if span > T::zero() { T::one() } else { -T::one() };
    let hmax = opts.max_step.unwrap_or(span.abs() / lit(10.0)).min(span.abs());
    let mut stats = IntegrationStats::default();

    let mut t = t0;
    let mut y = x0.clone();
    let mut k1 = f(&y);
    stats.rhs_evals += 1;
    check_finite(&k1, t)?;

    // Starting step (Hairer, Nørsett & Wanner, II.4).
    let mut h = {
        let d0 = err_norm(&y, &y, &y, rtol, atol);
        let d1 = err_norm(&k1, &y, &y, rtol, atol);
        let h0 = if d0 < lit(1e-5) || d1 < lit(1e-5) { lit(1e-6) } else { lit::<T>(0.01) * d0 / d1 };
        let h0 = h0.min(hmax);
        let y1 = &y + &k1 * (h0 * dir);
        let f1 = f(&y1);
        stats.rhs_evals += 1;
        let d2 = err_norm(&(&f1 - &k1), &y, &y, rtol, atol) / h0;
        let dmax = d1.max(d2);
        let h1 = if dmax <= lit(1e-15) {
            lit::<T>(1e-6).max(h0 * lit(1e-3))
        } else {
            (lit::<T>(0.01) / dmax).powf(lit(0.2))
        };
        (h0 * lit(100.0)).min(h1).min(hmax)
    };

    let mut times = vec![t];
    let mut states = vec![y.clone()];
    let mut derivs = vec![k1.clone()];
    let mut ks: Vec<DVector<T>> = Vec::with_capacity(7);
    let safety: T = lit(0.9);

    loop {
        if stats.steps + stats.rejected >= opts.max_steps {
            return Err(OdeError::TooManySteps(opts.max_steps));
        }
        let remaining = (t1 - t).abs();
        let mut last = false;
        if h >= remaining * lit(0.999_999_999) {
            h = remaining;
            last = true;
        }
        let tiny = lit::<T>(1e-14) * t.abs().max(span.abs()).max(T::one());
        if h < tiny {
            return Err(OdeError::StepSizeUnderflow { t: to_f64(t), h: to_f64(h) });
        }
        let hs = h * dir;
        ks.clear();
        ks.push(k1.clone());
        #[allow(clippy::needless_range_loop)]
        for stage in 1..7 {
            let mut yi = y.clone();
            for (j, kj) in ks.iter().enumerate() {
                let a = A[stage][j];
                if a != 0.0 {
                    yi.axpy(hs * lit(a), kj, T::one());
                }
            }
            let ki = f(&yi);
            stats.rhs_evals += 1;
            ks.push(ki);
        }
        // Stage 7 was evaluated at the 5th-order solution (FSAL).
        let mut y_new = y.clone();
        for (j, kj) in ks.iter().take(6).enumerate() {
            let b = A[6][j];
            if b != 0.0 {
                y_new.axpy(hs * lit(b), kj, T::one());
            }
        }
        let k7 = &ks[6];
        let finite = y_new.iter().all(|v| v.is_finite()) && k7.iter().all(|v| v.is_finite());
        let mut err = DVector::<T>::zeros(dim);
        for (j, kj) in ks.iter().enumerate() {
            if E[j] != 0.0 {
                err.axpy(hs * lit(E[j]), kj, T::one());
            }
        }
        let en = if finite { err_norm(&err, &y, &y_new, rtol, atol) } else { T::max_value().unwrap() };
        if en <= T::one() && finite {
            stats.steps += 1;
            t = if last { t1 } else { t + hs };
            y = y_new;
            k1 = k7.clone();
            times.push(t);
            states.push(y.clone());
            derivs.push(k1.clone());
            let gn = guarded_norm(&y, guard);
            if gn > opts.blowup {
                return Err(OdeError::BlowUp { t: to_f64(t), norm: to_f64(gn) });
            }
            if last {
                break;
            }
            let fac = if en == T::zero() {
                lit(5.0)
            } else {
                (safety * en.powf(lit(-0.2))).min(lit(5.0)).max(lit(0.2))
            };
            h = (h * fac).min(hmax);
        } else {
            stats.rejected += 1;
            if !finite {
                let gn = guarded_norm(&y, guard);
                if gn > opts.blowup * lit(1e-2) {
                    return Err(OdeError::BlowUp { t: to_f64(t), norm: to_f64(gn) });
                }
                h *= lit(0.1);
            } else {
                let fac = (safety * en.powf(lit(-0.2))).max(lit(0.1)).min(T::one());
                h *= fac;
            }
        }
    }
    Ok(Trajectory { times, states, derivs, stats })
}

/// Trajectory of a state together with its sensitivity matrix
/// `Φ(t) = ∂z(t)/∂z(t0)`.
#[derive(Debug, Clone)]
pub struct VariationalTrajectory<T: Real> {
    dim: usize,
    augmented: Trajectory<T>,
}

impl<T: Real> VariationalTrajectory<T> {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn state(&self, t: T) -> DVector<T> {
        self.augmented.eval(t).rows(0, self.dim).into_owned()
    }

    pub fn sensitivity(&self, t: T) -> DMatrix<T> {
        let v = self.augmented.eval(t);
        unpack_matrix(&v, self.dim)
    }

    pub fn final_state(&self) -> DVector<T> {
        self.augmented.final_state().rows(0, self.dim).into_owned()
    }

    pub fn final_sensitivity(&self) -> DMatrix<T> {
        unpack_matrix(self.augmented.final_state(), self.dim)
    }

    /// The state trajectory alone.
    pub fn trajectory(&self) -> Trajectory<T> {
        self.augmented.truncated(self.dim)
    }

    pub fn stats(&self) -> IntegrationStats {
        self.augmented.stats
    }
}

fn unpack_matrix<T: Real>(v: &DVector<T>, n: usize) -> DMatrix<T> {
    DMatrix::from_column_slice(n, n, &v.as_slice()[n..n + n * n])
}

/// Co-integrates `ż = f(z)` and `Φ̇ = Df(z)Φ`, `Φ(t0) = I`.
pub fn integrate_with_variational<T: Real, F: VectorField<T> + ?Sized>(
    field: &F,
    x0: &DVector<T>,
    t0: T,
    t1: T,
    rtol: T,
    atol: T,
) -> Result<VariationalTrajectory<T>, OdeError> {
    integrate_variational_with(field, x0, t0, t1, &OdeOptions::new(rtol, atol))
}

pub fn integrate_variational_with<T: Real, F: VectorField<T> + ?Sized>(
    field: &F,
    x0: &DVector<T>,
    t0: T,
    t1: T,
    opts: &OdeOptions<T>,
) -> Result<VariationalTrajectory<T>, OdeError> {
    let n = field.dim();
    if x0.len() != n {
        return Err(OdeError::InvalidInput(format!("state has length {}, field dimension {n}", x0.len())));
    }
    let mut z0 = DVector::<T>::zeros(n + n * n);
    z0.rows_mut(0, n).copy_from(x0);
    for i in 0..n {
        z0[n + i * n + i] = T::one();
    }
    let rhs = |w: &DVector<T>| -> DVector<T> {
        let z = w.rows(0, n).into_owned();
        let jac = jacobian_of(field, &z);
        let phi = DMatrix::from_column_slice(n, n, &w.as_slice()[n..]);
        let dphi = jac * phi;
        let mut out = DVector::<T>::zeros(n + n * n);
        out.rows_mut(0, n).copy_from(&field.eval(&z));
        out.rows_mut(n, n * n).copy_from_slice(dphi.as_slice());
        out
    };
    let augmented = dopri5(&rhs, n + n * n, n, &z0, t0, t1, opts)?;
    Ok(VariationalTrajectory { dim: n, augmented })
}

/// `|z|∞`, exposed for callers that apply their own guards.
pub fn sup_norm<T: Real>(z: &DVector<T>) -> T {
    vmax_abs(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};

    #[test]
    fn exponential_decay() {
        let field = FnField::new(1, |z: &DVector<f64>| -z);
        let tr = integrate(&field, &dvector![1.0], 0.0, 1.0, 1e-10, 1e-12).unwrap();
        assert!((tr.final_state()[0] - (-1f64).exp()).abs() < 1e-8);
        assert_eq!(tr.t1(), 1.0);
    }

    #[test]
    fn zero_field_is_constant() {
        let field = FnField::new(2, |z: &DVector<f64>| DVector::zeros(z.len()));
        let tr = integrate(&field, &dvector![0.3, -2.0], 0.0, 5.0, 1e-8, 1e-10).unwrap();
        for (_, s) in tr.sample_uniform(20) {
            assert!((s - dvector![0.3, -2.0]).amax() < 1e-15);
        }
    }

    #[test]
    fn backward_integration() {
        let field = FnField::new(1, |z: &DVector<f64>| -z);
        let tr = integrate(&field, &dvector![1.0], 1.0, 0.0, 1e-10, 1e-12).unwrap();
        assert!((tr.final_state()[0] - 1f64.exp()).abs() < 1e-8);
        let mid = tr.eval(0.5);
        assert!((mid[0] - 0.5f64.exp()).abs() < 1e-6);
    }

    #[test]
    fn dense_output_reproduces_nodes_and_interpolates() {
        let field = FnField::new(2, |z: &DVector<f64>| dvector![z[1], -z[0]]);
        let tr = integrate(&field, &dvector![1.0, 0.0], 0.0, 6.0, 1e-10, 1e-12).unwrap();
        for (t, s) in tr.times().iter().zip(tr.states()) {
            assert_eq!(&tr.eval(*t), s);
        }
        for k in 0..100 {
            let t = 0.06 * k as f64 + 0.013;
            let z = tr.eval(t);
            assert!((z[0] - t.cos()).abs() < 1e-7, "t={t}");
        }
    }

    #[test]
    fn blow_up_is_reported() {
        let field = FnField::new(1, |z: &DVector<f64>| dvector![z[0] * z[0]]);
        let err = integrate(&field, &dvector![1.0], 0.0, 2.0, 1e-8, 1e-10).unwrap_err();
        assert!(matches!(err, OdeError::BlowUp { .. } | OdeError::StepSizeUnderflow { .. }));
    }

    #[test]
    fn non_finite_derivative_is_reported() {
        let field = FnField::new(1, |_: &DVector<f64>| dvector![f64::NAN]);
        let err = integrate(&field, &dvector![1.0], 0.0, 1.0, 1e-8, 1e-10).unwrap_err();
        assert!(matches!(err, OdeError::NonFiniteDerivative { .. }));
    }

    #[test]
    fn variational_of_linear_field_is_matrix_exponential() {
        let a = dmatrix![-0.5, 1.0; -1.0, -0.2];
        let a2 = a.clone();
        let field = FnField::with_jacobian(2, move |z: &DVector<f64>| &a * z, move |_: &DVector<f64>| a2.clone());
        let vt = integrate_with_variational(&field, &dvector![1.0, 2.0], 0.0, 2.0, 1e-11, 1e-13).unwrap();
        let expected = (dmatrix![-0.5, 1.0; -1.0, -0.2] * 2.0).exp();
        let got = vt.final_sensitivity();
        assert!((&got - &expected).norm() <= 1e-6 * expected.norm());
        assert_eq!(vt.sensitivity(0.0), DMatrix::identity(2, 2));
    }

    #[test]
    fn variational_matches_finite_difference_of_flow() {
        // ż = −z + z², no analytic Jacobian supplied.
        let field = FnField::new(1, |z: &DVector<f64>| dvector![-z[0] + z[0] * z[0]]);
        let vt = integrate_with_variational(&field, &dvector![0.5], 0.0, 1.0, 1e-12, 1e-14).unwrap();
        let h = 1e-6;
        let flow = |z0: f64| integrate(&field, &dvector![z0], 0.0, 1.0, 1e-12, 1e-14).unwrap().final_state()[0];
        let fd = (flow(0.5 + h) - flow(0.5 - h)) / (2.0 * h);
        assert!((vt.final_sensitivity()[(0, 0)] - fd).abs() < 1e-5);
        // Closed form: z(t) = 1 / (1 + e^t), Φ = e^t / (1 + e^t)² · 4.
        let e = 1f64.exp();
        assert!((vt.final_sensitivity()[(0, 0)] - 4.0 * e / (1.0 + e).powi(2)).abs() < 1e-8);
    }

    #[test]
    fn single_precision_integration() {
        let field = FnField::new(1, |z: &DVector<f32>| -z);
        let tr = integrate(&field, &dvector![1.0f32], 0.0, 1.0, 1e-5, 1e-6).unwrap();
        assert!((tr.final_state()[0] - (-1f32).exp()).abs() < 1e-4);
    }
}
