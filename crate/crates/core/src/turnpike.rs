//! Quantitative turnpike certification: distance profiles, residence
//! measures, exponential envelope fits and horizon sweeps.

use nalgebra::DVector;
use thiserror::Error;

use crate::model::{OcpProblem, SteadyOptimum};
use crate::scalar::{lit, Real};
use crate::shooting::BvpSolution;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TurnpikeError {
    #[error("certification needs at least {needed} solved horizons, got {got}")]
    InsufficientHorizons { needed: usize, got: usize },
    #[error("profile is empty or does not match the horizon")]
    BadProfile,
}

/// Which distance the profile measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProfileKind {
    /// `|u(t) − ū| + |x(t) − x̄|`.
    StateAndControl,
    /// `|u(t) − ū|` only; used when the state legitimately wanders between
    /// several equilibria.
    ControlOnly,
}

/// Samples `(t, d(t))` on a uniform grid over `[0, T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceProfile<T: Real> {
    pub times: Vec<T>,
    pub values: Vec<T>,
}

impl<T: Real> DistanceProfile<T> {
    pub fn new(times: Vec<T>, values: Vec<T>) -> Self {
        assert_eq!(times.len(), values.len());
        Self { times, values }
    }

    /// Tabulates `d` on `grid + 1` uniform points of `[0, T]`.
    pub fn from_fn(horizon: T, grid: usize, d: impl Fn(T) -> T) -> Self {
        let grid = grid.max(1);
        let times: Vec<T> = (0..=grid).map(|k| horizon * lit::<T>(k as f64) / lit::<T>(grid as f64)).collect();
        let values = times.iter().map(|&t| d(t)).collect();
        Self { times, values }
    }

    pub fn horizon(&self) -> T {
        *self.times.last().unwrap_or(&T::zero())
    }

    pub fn max(&self) -> T {
        self.values.iter().fold(T::zero(), |a, v| a.max(*v))
    }

    /// Length of the longest interval on which `d ≤ ε`, with crossings
    /// interpolated linearly.
    pub fn longest_stay_below(&self, eps: T) -> T {
        let mut best = T::zero();
        let mut start: Option<T> = None;
        for k in 0..self.times.len() {
            let (t, d) = (self.times[k], self.values[k]);
            let inside = d <= eps;
            match (inside, start) {
                (true, None) => {
                    start = Some(if k == 0 { t } else { self.crossing(k - 1, eps) });
                }
                (false, Some(s)) => {
                    best = best.max(self.crossing(k - 1, eps) - s);
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            best = best.max(self.horizon() - s);
        }
        best
    }

    fn crossing(&self, k: usize, eps: T) -> T {
        let (t0, t1) = (self.times[k], self.times[k + 1]);
        let (a, b) = (self.values[k] - eps, self.values[k + 1] - eps);
        if a == b {
            t0
        } else {
            t0 + (t1 - t0) * a / (a - b)
        }
    }

    pub fn scaled(&self, c: T) -> Self {
        Self { times: self.times.clone(), values: self.values.iter().map(|v| *v * c).collect() }
    }
}

pub fn distance_profile<T: Real>(sol: &BvpSolution<T>, opt: &SteadyOptimum<T>, grid: usize) -> DistanceProfile<T> {
    profile_of_kind(sol, opt, grid, ProfileKind::StateAndControl)
}

pub fn profile_of_kind<T: Real>(sol: &BvpSolution<T>, opt: &SteadyOptimum<T>, grid: usize, kind: ProfileKind) -> DistanceProfile<T> {
    let n = sol.state_dim();
    DistanceProfile::from_fn(sol.horizon, grid, |t| {
        let z = sol.point(t);
        let du = (sol.field.control_at(&z) - &opt.u_bar).norm();
        match kind {
            ProfileKind::ControlOnly => du,
            ProfileKind::StateAndControl => du + (z.rows(0, n) - &opt.x_bar).norm(),
        }
    })
}

/// Measure of `{t : d(t) > ε}` for each `ε`, by cell counting with linear
/// interpolation at the crossings.
pub fn residence_measure<T: Real>(profile: &DistanceProfile<T>, epsilons: &[T]) -> Vec<(T, T)> {
    epsilons.iter().map(|&eps| (eps, measure_above(profile, eps))).collect()
}

fn measure_above<T: Real>(profile: &DistanceProfile<T>, eps: T) -> T {
    let mut total = T::zero();
    for k in 0..profile.times.len().saturating_sub(1) {
        let (t0, t1) = (profile.times[k], profile.times[k + 1]);
        let (a, b) = (profile.values[k] - eps, profile.values[k + 1] - eps);
        let h = t1 - t0;
        total += if a > T::zero() && b > T::zero() {
            h
        } else if a <= T::zero() && b <= T::zero() {
            T::zero()
        } else if a > T::zero() {
            h * a / (a - b)
        } else {
            h * b / (b - a)
        };
    }
    total
}

/// `e^{−μt} + e^{−μ(T−t)}`.
pub fn envelope<T: Real>(mu: T, horizon: T, t: T) -> T {
    (-mu * t).exp() + (-mu * (horizon - t)).exp()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvelopeFit<T> {
    pub k: T,
    pub mu: T,
    /// Largest `log d − log(K·env)` over the grid (≤ 0 up to rounding).
    pub fit_residual: T,
    /// Mean log gap between envelope and the profile's upper hull, the
    /// fitted objective.
    pub mean_log_gap: T,
    /// `d ≡ 0`: `K = 0`, `μ = +∞`, trivially certified.
    pub degenerate: bool,
}

const LOG_FLOOR: f64 = 1e-13;

fn k_for<T: Real>(profile: &DistanceProfile<T>, horizon: T, mu: T) -> T {
    profile
        .times
        .iter()
        .zip(&profile.values)
        .fold(T::zero(), |acc, (&t, &d)| acc.max(d / envelope(mu, horizon, t)))
}

/// Running maximum of `d` taken from each end towards `T/2`. The envelope is
/// monotone on either half, so `sup d/env` is unchanged while oscillation
/// dips no longer pull the fitted rate around.
fn upper_hull<T: Real>(profile: &DistanceProfile<T>) -> Vec<T> {
    let n = profile.values.len();
    let half = profile.horizon() * lit(0.5);
    let mut hull = profile.values.clone();
    let split = profile.times.iter().position(|&t| t > half).unwrap_or(n);
    for k in (0..split.saturating_sub(1)).rev() {
        hull[k] = hull[k].max(hull[k + 1]);
    }
    for k in split.max(1)..n {
        hull[k] = hull[k].max(hull[k - 1]);
    }
    hull
}

/// Relative level below which hull points leave the fit. Keeps the fitted
/// window the width of the boundary layers rather than of the horizon, so a
/// profile mixing several rates gives nearly the same `μ` for every `T`.
const FIT_WINDOW: f64 = 1e-2;

fn mean_gap<T: Real>(profile: &DistanceProfile<T>, hull: &[T], horizon: T, mu: T) -> T {
    let k = k_for(profile, horizon, mu);
    let floor = lit::<T>(LOG_FLOOR).max(profile.max() * lit(FIT_WINDOW));
    let mut sum = T::zero();
    let mut count = 0usize;
    for (&t, &d) in profile.times.iter().zip(hull) {
        if d >= floor {
            sum += (k * envelope(mu, horizon, t)).ln() - d.ln();
            count += 1;
        }
    }
    if count == 0 {
        T::zero()
    } else {
        sum / lit::<T>(count as f64)
    }
}

/// Fits `d(t) ≤ K(e^{−μt} + e^{−μ(T−t)})`.
///
/// For each `μ` the smallest valid `K` is `sup d/env`; `μ` then minimizes the
/// mean log gap between envelope and upper hull (a scan over a log grid refined
/// by golden section). Points below `1e−2·max d` only enter through `K`.
pub fn fit_envelope<T: Real>(profile: &DistanceProfile<T>, horizon: T) -> Result<EnvelopeFit<T>, TurnpikeError> {
    if profile.times.len() < 2 || (profile.horizon() - horizon).abs() > lit::<T>(1e-9) * (T::one() + horizon) {
        return Err(TurnpikeError::BadProfile);
    }
    if profile.max() < lit(LOG_FLOOR) {
        return Ok(EnvelopeFit {
            k: T::zero(),
            mu: lit(f64::INFINITY),
            fit_residual: T::zero(),
            mean_log_gap: T::zero(),
            degenerate: true,
        });
    }
    let mu_lo: T = lit(1e-4);
    // Beyond this the envelope underflows at the midpoint.
    let mu_hi: T = lit::<T>(600.0) / horizon;
    let scan = 120usize;
    let ratio = (mu_hi / mu_lo).ln();
    let mu_at = |k: usize| mu_lo * (ratio * lit::<T>(k as f64) / lit::<T>(scan as f64)).exp();
    let mut best = 0usize;
    let hull = upper_hull(profile);
    let mut best_val = mean_gap(profile, &hull, horizon, mu_at(0));
    for k in 1..=scan {
        let v = mean_gap(profile, &hull, horizon, mu_at(k));
        if v < best_val {
            best_val = v;
            best = k;
        }
    }
    let mut a = mu_at(best.saturating_sub(1)).ln();
    let mut b = mu_at((best + 1).min(scan)).ln();
    let g: T = lit(0.618_033_988_749_894_9);
    let f = |x: T| mean_gap(profile, &hull, horizon, x.exp());
    let mut c = b - (b - a) * g;
    let mut d = a + (b - a) * g;
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if (b - a).abs() < lit(1e-12) {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - (b - a) * g;
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + (b - a) * g;
            fd = f(d);
        }
    }
    let mut mu = ((a + b) * lit(0.5)).exp();
    if f(mu.ln()) > best_val {
        mu = mu_at(best);
    }
    let k = k_for(profile, horizon, mu);
    let fit_residual = profile
        .times
        .iter()
        .zip(&profile.values)
        .filter(|(_, &d)| d >= lit(LOG_FLOOR))
        .fold(lit::<T>(f64::NEG_INFINITY), |acc, (&t, &d)| acc.max(d.ln() - (k * envelope(mu, horizon, t)).ln()));
    Ok(EnvelopeFit { k, mu, fit_residual, mean_log_gap: mean_gap(profile, &hull, horizon, mu), degenerate: false })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Certified,
    Inconclusive,
}

/// Thresholds that operationalize "constants independent of `T`".
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CertifyOptions<T> {
    pub grid: usize,
    pub mu_floor: T,
    pub max_mu_spread: T,
    pub max_residence_variation: T,
    pub fit_tolerance: T,
    pub kind: ProfileKind,
}

impl<T: Real> Default for CertifyOptions<T> {
    fn default() -> Self {
        Self {
            grid: 2000,
            mu_floor: lit(1e-3),
            max_mu_spread: lit(0.25),
            max_residence_variation: lit(0.1),
            fit_tolerance: lit(1e-9),
            kind: ProfileKind::StateAndControl,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HorizonConstants<T> {
    pub horizon: T,
    pub k: T,
    pub mu: T,
    pub fit_residual: T,
    pub max_distance: T,
    /// Residence at the reference level `ε_ref`.
    pub residence_ref: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TurnpikeCertificate<T> {
    pub k: T,
    pub mu: T,
    pub fit_residual: T,
    /// `(ε, measure)` on the largest horizon, ascending in `ε`.
    pub residence: Vec<(T, T)>,
    pub horizons_used: Vec<T>,
    pub per_horizon: Vec<HorizonConstants<T>>,
    pub verdict: Verdict,
    pub kind: ProfileKind,
    /// `(max μ_T − min μ_T) / max μ_T`.
    pub mu_spread: T,
    /// `ε_ref = 0.1·max d` and the relative variation of its residence
    /// across the upper half of the horizons.
    pub epsilon_ref: T,
    pub residence_variation: T,
    /// Whether `(K, μ)` bounds every profile on its grid.
    pub envelope_valid: bool,
    pub options: CertifyOptions<T>,
}

/// Certifies the turnpike property from a horizon sweep.
pub fn certify<T: Real>(
    _problem: &OcpProblem<T>,
    opt: &SteadyOptimum<T>,
    sweep: &[BvpSolution<T>],
) -> Result<TurnpikeCertificate<T>, TurnpikeError> {
    certify_with(opt, sweep, &CertifyOptions::default())
}

pub fn certify_with<T: Real>(
    opt: &SteadyOptimum<T>,
    sweep: &[BvpSolution<T>],
    opts: &CertifyOptions<T>,
) -> Result<TurnpikeCertificate<T>, TurnpikeError> {
    let mut sols: Vec<&BvpSolution<T>> = sweep.iter().collect();
    sols.sort_by(|a, b| a.horizon.partial_cmp(&b.horizon).unwrap_or(std::cmp::Ordering::Equal));
    let profiles: Vec<DistanceProfile<T>> = sols.iter().map(|s| profile_of_kind(s, opt, opts.grid, opts.kind)).collect();
    certify_profiles(&profiles, opts)
}

/// Certification from precomputed profiles, sorted by horizon.
pub fn certify_profiles<T: Real>(profiles: &[DistanceProfile<T>], opts: &CertifyOptions<T>) -> Result<TurnpikeCertificate<T>, TurnpikeError> {
    if profiles.len() < 3 {
        return Err(TurnpikeError::InsufficientHorizons { needed: 3, got: profiles.len() });
    }
    let fits = std::thread::scope(|scope| {
        let handles: Vec<_> = profiles.iter().map(|p| scope.spawn(move || fit_envelope(p, p.horizon()))).collect();
        handles.into_iter().map(|h| h.join().expect("envelope fit panicked")).collect::<Result<Vec<_>, _>>()
    })?;
    let max_d = profiles.iter().fold(T::zero(), |a, p| a.max(p.max()));
    let epsilon_ref = max_d * lit(0.1);
    let per_horizon: Vec<HorizonConstants<T>> = profiles
        .iter()
        .zip(&fits)
        .map(|(p, f)| HorizonConstants {
            horizon: p.horizon(),
            k: f.k,
            mu: f.mu,
            fit_residual: f.fit_residual,
            max_distance: p.max(),
            residence_ref: measure_above(p, epsilon_ref),
        })
        .collect();

    let all_degenerate = fits.iter().all(|f| f.degenerate);
    let k = fits.iter().fold(T::zero(), |a, f| a.max(f.k));
    let finite_mus: Vec<T> = fits.iter().filter(|f| !f.degenerate).map(|f| f.mu).collect();
    let (mu, mu_spread) = if finite_mus.is_empty() {
        (lit(f64::INFINITY), T::zero())
    } else {
        let lo = finite_mus.iter().fold(finite_mus[0], |a, m| a.min(*m));
        let hi = finite_mus.iter().fold(finite_mus[0], |a, m| a.max(*m));
        (lo, (hi - lo) / hi)
    };

    let log_tol = opts.fit_tolerance;
    let mut envelope_valid = true;
    let mut fit_residual = lit::<T>(f64::NEG_INFINITY);
    if !all_degenerate {
        for p in profiles {
            for (&t, &d) in p.times.iter().zip(&p.values) {
                let bound = k * envelope(mu, p.horizon(), t);
                if d > bound * (T::one() + log_tol) + lit::<T>(1e-15) {
                    envelope_valid = false;
                }
                if d >= lit(LOG_FLOOR) {
                    fit_residual = fit_residual.max(d.ln() - bound.ln());
                }
            }
        }
    } else {
        fit_residual = T::zero();
    }

    let top = &per_horizon[per_horizon.len() / 2..];
    let r_hi = top.iter().fold(T::zero(), |a, h| a.max(h.residence_ref));
    let r_lo = top.iter().fold(r_hi, |a, h| a.min(h.residence_ref));
    let residence_variation = if r_hi > T::zero() { (r_hi - r_lo) / r_hi } else { T::zero() };

    let largest = profiles.last().unwrap();
    let mut eps_list: Vec<T> = vec![lit(0.01), lit(0.05), lit(0.1)];
    if epsilon_ref > T::zero() {
        eps_list.push(epsilon_ref);
    }
    eps_list.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    eps_list.dedup();
    let residence = residence_measure(largest, &eps_list);

    let certified = all_degenerate
        || (mu > opts.mu_floor
            && mu_spread <= opts.max_mu_spread
            && residence_variation <= opts.max_residence_variation
            && envelope_valid);
    Ok(TurnpikeCertificate {
        k,
        mu,
        fit_residual,
        residence,
        horizons_used: profiles.iter().map(|p| p.horizon()).collect(),
        per_horizon,
        verdict: if certified { Verdict::Certified } else { Verdict::Inconclusive },
        kind: opts.kind,
        mu_spread,
        epsilon_ref,
        residence_variation,
        envelope_valid,
        options: *opts,
    })
}

/// Secondary certificate for problems whose state wanders between several
/// equilibria: the time spent with `|u − ū| > ε` should not grow with `T`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlResidence<T> {
    pub epsilon: T,
    /// `(T, measure)`, ascending in `T`.
    pub per_horizon: Vec<(T, T)>,
    /// Relative variation of the measure across the upper half of horizons.
    pub variation: T,
    /// Measure over horizon on the largest run.
    pub fraction: T,
    pub bounded: bool,
}

pub fn control_residence<T: Real>(
    opt: &SteadyOptimum<T>,
    sweep: &[BvpSolution<T>],
    epsilon: T,
    opts: &CertifyOptions<T>,
) -> Result<ControlResidence<T>, TurnpikeError> {
    if sweep.len() < 3 {
        return Err(TurnpikeError::InsufficientHorizons { needed: 3, got: sweep.len() });
    }
    let mut per_horizon: Vec<(T, T)> = sweep
        .iter()
        .map(|s| (s.horizon, measure_above(&profile_of_kind(s, opt, opts.grid, ProfileKind::ControlOnly), epsilon)))
        .collect();
    per_horizon.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
    let top = &per_horizon[per_horizon.len() / 2..];
    let hi = top.iter().fold(T::zero(), |a, (_, m)| a.max(*m));
    let lo = top.iter().fold(hi, |a, (_, m)| a.min(*m));
    let variation = if hi > T::zero() { (hi - lo) / hi } else { T::zero() };
    let (t_max, m_max) = *per_horizon.last().unwrap();
    Ok(ControlResidence {
        epsilon,
        per_horizon,
        variation,
        fraction: m_max / t_max,
        bounded: variation <= opts.max_residence_variation,
    })
}

/// Largest horizon-to-horizon change of `|p0(T) − p0(T_max)|`; the sequence
/// should shrink as `T` grows.
pub fn p0_convergence<T: Real>(sweep: &[BvpSolution<T>]) -> Vec<(T, T)> {
    let Some(last) = sweep.iter().max_by(|a, b| a.horizon.partial_cmp(&b.horizon).unwrap()) else {
        return Vec::new();
    };
    let reference: &DVector<T> = &last.p0;
    sweep.iter().map(|s| (s.horizon, (&s.p0 - reference).norm())).collect()
}

pub fn verdict_label(v: Verdict) -> &'static str {
    match v {
        Verdict::Certified => "Certified",
        Verdict::Inconclusive => "Inconclusive",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(k: f64, mu: f64, horizon: f64) -> DistanceProfile<f64> {
        DistanceProfile::from_fn(horizon, 2000, |t| k * envelope(mu, horizon, t))
    }

    #[test]
    fn longest_stay_interpolates_crossings() {
        let p = DistanceProfile::from_fn(10.0, 10, |t: f64| (t - 5.0).abs());
        assert!((p.longest_stay_below(2.5) - 5.0_f64).abs() < 1e-12);
        assert_eq!(p.longest_stay_below(10.0), 10.0);
        assert_eq!(p.longest_stay_below(-1.0), 0.0);
    }

    #[test]
    fn zero_profile_has_no_residence() {
        let p = DistanceProfile::from_fn(10.0, 100, |_| 0.0);
        for (_, m) in residence_measure(&p, &[1e-6, 0.1, 1.0]) {
            assert_eq!(m, 0.0);
        }
        let fit = fit_envelope(&p, 10.0).unwrap();
        assert!(fit.degenerate && fit.k == 0.0);
    }

    #[test]
    fn residence_of_two_boundary_layers() {
        let horizon = 20.0;
        let p = DistanceProfile::from_fn(horizon, 4000, |t| envelope(1.0, horizon, t));
        let eps = (-2.0f64).exp();
        // Crossing of e^{−t} + e^{−(T−t)} = ε near t = 2, by Newton.
        let mut t = 2.0;
        for _ in 0..50 {
            let f = envelope(1.0, horizon, t) - eps;
            let df = -(-t).exp() + (-(horizon - t)).exp();
            t -= f / df;
        }
        let m = residence_measure(&p, &[eps])[0].1;
        assert!((m - 2.0 * t).abs() < 1e-4, "{m} vs {}", 2.0 * t);
        assert_eq!(residence_measure(&p, &[10.0])[0].1, 0.0);
    }

    #[test]
    fn recovers_model_constants() {
        let fit = fit_envelope(&model(2.0, 1.5, 10.0), 10.0).unwrap();
        assert!((fit.k - 2.0).abs() < 0.02 && (fit.mu - 1.5).abs() < 0.015, "{fit:?}");
    }

    #[test]
    fn constant_profile_has_no_decay() {
        let p = DistanceProfile::from_fn(10.0, 200, |_| 0.7);
        let fit = fit_envelope(&p, 10.0).unwrap();
        assert!(fit.mu < 1e-3, "{fit:?}");
    }

    #[test]
    fn scale_equivariance() {
        let p = DistanceProfile::from_fn(8.0, 500, |t: f64| (1.0 + t).recip() + 0.3 * (-(8.0 - t)).exp());
        let a = fit_envelope(&p, 8.0).unwrap();
        let b = fit_envelope(&p.scaled(7.0), 8.0).unwrap();
        assert!((b.k / a.k - 7.0_f64).abs() < 1e-9 && (a.mu - b.mu).abs() < 1e-9 * a.mu);
    }

    #[test]
    fn sweep_of_model_profiles_certifies() {
        let profiles: Vec<_> = [5.0, 10.0, 15.0, 20.0].iter().map(|&t| model(1.0, 1.0, t)).collect();
        let c = certify_profiles(&profiles, &CertifyOptions::default()).unwrap();
        assert_eq!(c.verdict, Verdict::Certified);
        assert!(c.envelope_valid);
        let too_few = certify_profiles(&profiles[..2], &CertifyOptions::default());
        assert!(matches!(too_few, Err(TurnpikeError::InsufficientHorizons { .. })));
    }
}
