//! Dense linear algebra around the continuous-time algebraic Riccati equation
//! `PA + AᵀP − PRP + Q = 0` and its Hamiltonian matrix
//! `Ham = [[A, −R], [−Q, −Aᵀ]]`.
//!
//! The stabilizing solution `P` is recovered from the stable invariant
//! subspace of `Ham`; the companion Lyapunov solution `L` of
//! `L A_cᵀ + A_c L = R` completes the symplectic change of basis
//! `T = [[I, L], [P, PL + I]]` that block-diagonalizes `Ham` into
//! `diag(A_c, −A_cᵀ)`.

use nalgebra::DMatrix;
use num_complex::Complex;
use thiserror::Error;

use crate::scalar::{lit, max_abs, to_f64, Real};

/// Eigenvalues closer than this (relative to the matrix scale) to the
/// imaginary axis make a Hamiltonian matrix non-hyperbolic.
pub const IMAG_AXIS_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite matrix entry")]
    NonFinite,
    #[error("pair (A, R) is not stabilizable")]
    NotStabilizable,
    #[error("pair (Q, A) is not detectable")]
    NotDetectable,
    #[error("matrix is not Hurwitz (spectral abscissa {abscissa:e})")]
    NotHurwitz { abscissa: f64 },
    #[error("eigenvalue within {tol:e} of the imaginary axis")]
    NotHyperbolic { tol: f64 },
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
}

pub type Result<T> = std::result::Result<T, LinalgError>;

/// A linear plant `(C, A, B)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearTriple<T: Real> {
    pub a: DMatrix<T>,
    pub b: DMatrix<T>,
    pub c: DMatrix<T>,
}

impl<T: Real> LinearTriple<T> {
    pub fn new(a: DMatrix<T>, b: DMatrix<T>, c: DMatrix<T>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n || b.nrows() != n || c.ncols() != n {
            return Err(LinalgError::DimensionMismatch(format!(
                "A {}x{}, B {}x{}, C {}x{}",
                a.nrows(),
                a.ncols(),
                b.nrows(),
                b.ncols(),
                c.nrows(),
                c.ncols()
            )));
        }
        if a.iter().chain(b.iter()).chain(c.iter()).any(|v| !v.is_finite()) {
            return Err(LinalgError::NonFinite);
        }
        Ok(Self { a, b, c })
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    /// `R = BBᵀ`.
    pub fn input_weight(&self) -> DMatrix<T> {
        &self.b * self.b.transpose()
    }

    /// `Q = CᵀC`.
    pub fn output_weight(&self) -> DMatrix<T> {
        self.c.transpose() * &self.c
    }

    pub fn is_stabilizable(&self) -> bool {
        pbh_stabilizable(&self.a, &self.b)
    }

    pub fn is_detectable(&self) -> bool {
        pbh_detectable(&self.c, &self.a)
    }
}

/// Stabilizing Riccati solution together with the block-diagonalizing basis.
#[derive(Debug, Clone)]
pub struct RiccatiSolution<T: Real> {
    pub p: DMatrix<T>,
    pub l: DMatrix<T>,
    /// Closed-loop matrix `A − RP`.
    pub a_c: DMatrix<T>,
    /// `[[I, L], [P, PL + I]]`.
    pub t_sympl: DMatrix<T>,
    pub stable_eigs: Vec<Complex<T>>,
    pub unstable_eigs: Vec<Complex<T>>,
}

impl<T: Real> RiccatiSolution<T> {
    pub fn dim(&self) -> usize {
        self.p.nrows()
    }

    /// Closed-form inverse `[[LP + I, −L], [−P, I]]`.
    pub fn t_inverse(&self) -> DMatrix<T> {
        let n = self.dim();
        let id = DMatrix::<T>::identity(n, n);
        let mut inv = DMatrix::<T>::zeros(2 * n, 2 * n);
        inv.view_mut((0, 0), (n, n))
            .copy_from(&(&self.l * &self.p + &id));
        inv.view_mut((0, n), (n, n)).copy_from(&(-&self.l));
        inv.view_mut((n, 0), (n, n)).copy_from(&(-&self.p));
        inv.view_mut((n, n), (n, n)).copy_from(&id);
        inv
    }

    /// `PL + I`, the unstable tangent block.
    pub fn pl_plus_i(&self) -> DMatrix<T> {
        let n = self.dim();
        &self.p * &self.l + DMatrix::<T>::identity(n, n)
    }
}

/// `[[A, −R], [−Q, −Aᵀ]]`.
pub fn hamiltonian_matrix<T: Real>(a: &DMatrix<T>, r: &DMatrix<T>, q: &DMatrix<T>) -> DMatrix<T> {
    let n = a.nrows();
    let mut h = DMatrix::<T>::zeros(2 * n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(a);
    h.view_mut((0, n), (n, n)).copy_from(&(-r));
    h.view_mut((n, 0), (n, n)).copy_from(&(-q));
    h.view_mut((n, n), (n, n)).copy_from(&(-a.transpose()));
    h
}

/// `J = [[0, I], [−I, 0]]`.
pub fn symplectic_unit<T: Real>(n: usize) -> DMatrix<T> {
    let mut j = DMatrix::<T>::zeros(2 * n, 2 * n);
    for i in 0..n {
        j[(i, n + i)] = T::one();
        j[(n + i, i)] = -T::one();
    }
    j
}

/// Frobenius norm of `TᵀJT − J`.
pub fn symplectic_defect<T: Real>(t: &DMatrix<T>) -> T {
    let j = symplectic_unit::<T>(t.nrows() / 2);
    (t.transpose() * &j * t - j).norm()
}

/// Riccati residual `PA + AᵀP − PRP + Q`.
pub fn care_residual<T: Real>(
    a: &DMatrix<T>,
    r: &DMatrix<T>,
    q: &DMatrix<T>,
    p: &DMatrix<T>,
) -> DMatrix<T> {
    p * a + a.transpose() * p - p * r * p + q
}

pub fn eigenvalues<T: Real>(m: &DMatrix<T>) -> Vec<Complex<T>> {
    if m.is_empty() {
        return Vec::new();
    }
    m.clone().complex_eigenvalues().iter().copied().collect()
}

/// Largest real part among the eigenvalues.
pub fn spectral_abscissa<T: Real>(m: &DMatrix<T>) -> T {
    eigenvalues(m)
        .iter()
        .fold(T::min_value().unwrap_or(-T::max_value().unwrap()), |acc, z| acc.max(z.re))
}

pub fn is_hurwitz<T: Real>(m: &DMatrix<T>) -> bool {
    spectral_abscissa(m) < T::zero()
}

/// Which half of a hyperbolic spectrum to extract.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Half {
    Stable,
    Unstable,
}

/// Orthonormal real basis of the invariant subspace of `h` belonging to the
/// eigenvalues with negative (`Stable`) or positive (`Unstable`) real part.
///
/// Eigenvalues are grouped into clusters; each cluster of multiplicity `k`
/// contributes the null space of `(h − λI)^k`, computed by complex SVD. The
/// complex basis is then realified.
pub fn invariant_subspace<T: Real>(h: &DMatrix<T>, half: Half) -> Result<DMatrix<T>> {
    let dim = h.nrows();
    if h.ncols() != dim {
        return Err(LinalgError::DimensionMismatch("square matrix required".into()));
    }
    if h.iter().any(|v| !v.is_finite()) {
        return Err(LinalgError::NonFinite);
    }
    let scale = T::one().max(max_abs(h));
    let axis_tol = lit::<T>(IMAG_AXIS_TOL) * scale;
    let eigs = eigenvalues(h);
    if eigs.iter().any(|z| z.re.abs() <= axis_tol) {
        return Err(LinalgError::NotHyperbolic { tol: to_f64(axis_tol) });
    }
    let wanted: Vec<Complex<T>> = eigs
        .into_iter()
        .filter(|z| match half {
            Half::Stable => z.re < T::zero(),
            Half::Unstable => z.re > T::zero(),
        })
        .collect();
    if wanted.is_empty() {
        return Ok(DMatrix::zeros(dim, 0));
    }

    let cluster_tol = lit::<T>(1e-6) * scale;
    let mut clusters: Vec<(Complex<T>, usize)> = Vec::new();
    for z in &wanted {
        match clusters.iter_mut().find(|(c, _)| (c.re - z.re).hypot(c.im - z.im) <= cluster_tol) {
            Some((c, k)) => {
                let kk: T = lit(*k as f64);
                *c = (*c * kk + z) / (kk + T::one());
                *k += 1;
            }
            None => clusters.push((*z, 1)),
        }
    }

    let hc: DMatrix<Complex<T>> = h.map(|v| Complex::new(v, T::zero()));
    let mut columns: Vec<nalgebra::DVector<Complex<T>>> = Vec::new();
    for (lambda, k) in &clusters {
        let mut shifted = hc.clone();
        for i in 0..dim {
            shifted[(i, i)] -= *lambda;
        }
        let mut power = shifted.clone();
        for _ in 1..*k {
            power = &power * &shifted;
        }
        let svd = power.svd(false, true);
        let v_t = svd
            .v_t
            .ok_or_else(|| LinalgError::NumericalFailure("SVD failed".into()))?;
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&i, &j| {
            svd.singular_values[i]
                .partial_cmp(&svd.singular_values[j])
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        for &idx in order.iter().take(*k) {
            columns.push(v_t.row(idx).adjoint());
        }
    }

    let want = wanted.len();
    let mut realified = DMatrix::<T>::zeros(dim, 2 * columns.len());
    for (j, col) in columns.iter().enumerate() {
        for i in 0..dim {
            realified[(i, 2 * j)] = col[i].re;
            realified[(i, 2 * j + 1)] = col[i].im;
        }
    }
    let svd = realified.svd(true, false);
    let u = svd
        .u
        .ok_or_else(|| LinalgError::NumericalFailure("SVD failed".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| {
        svd.singular_values[j]
            .partial_cmp(&svd.singular_values[i])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    if order.len() < want {
        return Err(LinalgError::NumericalFailure("invariant subspace rank deficient".into()));
    }
    let mut basis = DMatrix::<T>::zeros(dim, want);
    for (j, &idx) in order.iter().take(want).enumerate() {
        basis.set_column(j, &u.column(idx));
    }
    Ok(basis)
}

fn diagnose<T: Real>(a: &DMatrix<T>, r: &DMatrix<T>, q: &DMatrix<T>, why: &str) -> LinalgError {
    if !pbh_stabilizable(a, r) {
        LinalgError::NotStabilizable
    } else if !pbh_detectable(q, a) {
        LinalgError::NotDetectable
    } else {
        LinalgError::NumericalFailure(why.to_string())
    }
}

/// Stabilizing solution of `PA + AᵀP − PRP + Q = 0` by the invariant-subspace
/// method followed by one Newton (Kleinman) refinement step.
///
/// `Q` may be indefinite when it comes from a second-order linearization;
/// `P` is then symmetric but not necessarily semidefinite.
pub fn solve_care<T: Real>(
    a: &DMatrix<T>,
    r: &DMatrix<T>,
    q: &DMatrix<T>,
) -> Result<RiccatiSolution<T>> {
    let n = a.nrows();
    for (name, m) in [("A", a), ("R", r), ("Q", q)] {
        if m.nrows() != n || m.ncols() != n {
            return Err(LinalgError::DimensionMismatch(format!(
                "{name} is {}x{}, expected {n}x{n}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(LinalgError::NonFinite);
        }
    }
    let ham = hamiltonian_matrix(a, r, q);
    let basis = match invariant_subspace(&ham, Half::Stable) {
        Ok(b) => b,
        Err(LinalgError::NotHyperbolic { .. }) => {
            return Err(diagnose(a, r, q, "imaginary-axis eigenvalue"))
        }
        Err(e) => return Err(e),
    };
    if basis.ncols() != n {
        return Err(diagnose(a, r, q, "stable subspace has wrong dimension"));
    }
    let x1 = basis.rows(0, n).into_owned();
    let x2 = basis.rows(n, n).into_owned();
    let x1_svs = x1.clone().singular_values();
    let x1_min = x1_svs.iter().fold(T::max_value().unwrap(), |acc, v| acc.min(*v));
    if x1_min <= lit(1e-10) {
        return Err(diagnose(a, r, q, "stable subspace is not a graph over x"));
    }
    let x1_inv = x1
        .clone()
        .try_inverse()
        .ok_or_else(|| diagnose(a, r, q, "singular basis block"))?;
    let mut p = symmetrize(&(x2 * x1_inv));

    let res_norm = |p: &DMatrix<T>| care_residual(a, r, q, p).norm();
    let mut res = res_norm(&p);
    let a_c = a - r * &p;
    if is_hurwitz(&a_c) {
        let rhs = -(q + &p * r * &p);
        if let Ok(next) = solve_lyapunov(&a_c.transpose(), &rhs) {
            let next = symmetrize(&next);
            let next_res = res_norm(&next);
            if next_res < res && is_hurwitz(&(a - r * &next)) {
                p = next;
                res = next_res;
            }
        }
    }
    let a_c = a - r * &p;
    let abscissa = spectral_abscissa(&a_c);
    if abscissa >= T::zero() {
        return Err(diagnose(a, r, q, "closed loop not Hurwitz"));
    }
    let p_norm = p.norm();
    if res > lit::<T>(1e-9) * (T::one() + p_norm * p_norm) * scale_of(a, r, q) {
        return Err(LinalgError::NumericalFailure(format!(
            "Riccati residual {:e} above tolerance",
            to_f64(res)
        )));
    }
    let l = symmetrize(&solve_lyapunov(&a_c, r)?);
    let id = DMatrix::<T>::identity(n, n);
    let mut t_sympl = DMatrix::<T>::zeros(2 * n, 2 * n);
    t_sympl.view_mut((0, 0), (n, n)).copy_from(&id);
    t_sympl.view_mut((0, n), (n, n)).copy_from(&l);
    t_sympl.view_mut((n, 0), (n, n)).copy_from(&p);
    t_sympl.view_mut((n, n), (n, n)).copy_from(&(&p * &l + &id));
    let stable_eigs = eigenvalues(&a_c);
    let unstable_eigs = stable_eigs.iter().map(|z| -z.conj()).collect();
    Ok(RiccatiSolution { p, l, a_c, t_sympl, stable_eigs, unstable_eigs })
}

// Residual tolerances are stated for unit-scale data; larger entries in
// (A, R, Q) scale the attainable residual proportionally.
fn scale_of<T: Real>(a: &DMatrix<T>, r: &DMatrix<T>, q: &DMatrix<T>) -> T {
    T::one().max(max_abs(a)).max(max_abs(r)).max(max_abs(q))
}

pub fn symmetrize<T: Real>(m: &DMatrix<T>) -> DMatrix<T> {
    (m + m.transpose()) * lit::<T>(0.5)
}

/// Solves `X Mᵀ + M X = W` for Hurwitz `M` through the Kronecker form
/// `(I ⊗ M + M ⊗ I) vec X = vec W`, with one step of iterative refinement.
pub fn solve_lyapunov<T: Real>(m: &DMatrix<T>, w: &DMatrix<T>) -> Result<DMatrix<T>> {
    let n = m.nrows();
    if m.ncols() != n || w.nrows() != n || w.ncols() != n {
        return Err(LinalgError::DimensionMismatch("Lyapunov operands must be n×n".into()));
    }
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let abscissa = spectral_abscissa(m);
    if abscissa >= lit(-1e-10) {
        return Err(LinalgError::NotHurwitz { abscissa: to_f64(abscissa) });
    }
    let id = DMatrix::<T>::identity(n, n);
    let kron = id.kronecker(m) + m.kronecker(&id);
    let lu = kron.lu();
    let solve = |rhs: &DMatrix<T>| -> Result<DMatrix<T>> {
        let v = nalgebra::DVector::from_column_slice(rhs.as_slice());
        let x = lu
            .solve(&v)
            .ok_or_else(|| LinalgError::NumericalFailure("singular Lyapunov operator".into()))?;
        Ok(DMatrix::from_column_slice(n, n, x.as_slice()))
    };
    let mut x = solve(w)?;
    let resid = w - (&x * m.transpose() + m * &x);
    x += solve(&resid)?;
    Ok(x)
}

/// Symplectic basis `T` and closed-loop matrix `A_c` with
/// `Ham·T = T·diag(A_c, −A_cᵀ)`.
pub fn block_diagonalize<T: Real>(
    a: &DMatrix<T>,
    r: &DMatrix<T>,
    q: &DMatrix<T>,
) -> Result<(DMatrix<T>, DMatrix<T>)> {
    let sol = solve_care(a, r, q)?;
    Ok((sol.t_sympl, sol.a_c))
}

/// Numerical rank with an absolute singular-value threshold.
fn complex_rank<T: Real>(m: DMatrix<Complex<T>>, tol: T) -> usize {
    m.singular_values().iter().filter(|s| **s > tol).count()
}

/// PBH test: `rank [A − λI, B] = n` for every eigenvalue with `Re λ ≥ −1e−9`.
pub fn pbh_stabilizable<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>) -> bool {
    let n = a.nrows();
    if n == 0 {
        return true;
    }
    let tol = lit::<T>(1e-9) * a.norm().max(lit(1e-12));
    let m = b.ncols();
    for lambda in eigenvalues(a) {
        if lambda.re < lit(-1e-9) {
            continue;
        }
        let mut block = DMatrix::<Complex<T>>::zeros(n, n + m);
        for i in 0..n {
            for j in 0..n {
                block[(i, j)] = Complex::new(a[(i, j)], T::zero());
            }
            block[(i, i)] -= lambda;
            for j in 0..m {
                block[(i, n + j)] = Complex::new(b[(i, j)], T::zero());
            }
        }
        if complex_rank(block, tol) < n {
            return false;
        }
    }
    true
}

/// Detectability of `(C, A)` by duality with stabilizability of `(Aᵀ, Cᵀ)`.
pub fn pbh_detectable<T: Real>(c: &DMatrix<T>, a: &DMatrix<T>) -> bool {
    pbh_stabilizable(&a.transpose(), &c.transpose())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlPlusICheck<T> {
    pub nonsingular: bool,
    pub min_sv: T,
}

pub fn check_pl_plus_i<T: Real>(p: &DMatrix<T>, l: &DMatrix<T>) -> PlPlusICheck<T> {
    let n = p.nrows();
    let pl = p * l;
    let v = &pl + DMatrix::<T>::identity(n, n);
    let min_sv = v
        .singular_values()
        .iter()
        .fold(T::max_value().unwrap(), |acc, s| acc.min(*s));
    PlPlusICheck {
        nonsingular: min_sv > lit::<T>(1e-10) * (T::one() + pl.norm()),
        min_sv,
    }
}

/// `Φ₁₁(t)`, the upper-left block of `exp(t·Ham)`, via the factorization
/// `Φ₁₁(t) = exp(tA_c)·(I + L̃(t)P)` with `L̃(t) = L − exp(−tA_c) L exp(−tA_cᵀ)`.
///
/// Expanded as `exp(tA_c)(I + LP) − L exp(−tA_cᵀ) P`, so only one growing
/// exponential appears and the factors never cancel in floating point.
pub fn phi11<T: Real>(sol: &RiccatiSolution<T>, t: T) -> DMatrix<T> {
    let n = sol.dim();
    let e = (&sol.a_c * t).exp();
    let e_back = (sol.a_c.transpose() * (-t)).exp();
    e * (DMatrix::<T>::identity(n, n) + &sol.l * &sol.p) - &sol.l * e_back * &sol.p
}

/// `exp(h·Ham) = T·diag(exp(hA_c), exp(−hA_cᵀ))·T⁻¹`.
fn flow_block_diagonal<T: Real>(sol: &RiccatiSolution<T>, h: T) -> DMatrix<T> {
    let n = sol.dim();
    let mut d = DMatrix::<T>::zeros(2 * n, 2 * n);
    d.view_mut((0, 0), (n, n)).copy_from(&(&sol.a_c * h).exp());
    d.view_mut((n, n), (n, n)).copy_from(&(sol.a_c.transpose() * (-h)).exp());
    &sol.t_sympl * d * sol.t_inverse()
}

/// `det Φ₁₁(t)`, accumulated over short steps.
///
/// For large `t` the columns of `Φ₁₁` align with the fastest mode and a
/// single determinant loses everything to cancellation. Instead
/// `[X; Y] = exp(h·Ham)·[I; K]` is propagated with `K ← YX⁻¹` after each
/// step, so that `det Φ₁₁(t) = Π det X` with every factor well conditioned.
fn phi11_det<T: Real>(sol: &RiccatiSolution<T>, t: T) -> T {
    let n = sol.dim();
    if t == T::zero() {
        return T::one();
    }
    let rate = sol.stable_eigs.iter().fold(T::zero(), |acc, z| acc.max((z.re * z.re + z.im * z.im).sqrt()));
    let steps = to_f64(t * rate / lit(0.5)).ceil().clamp(1.0, 1e6) as usize;
    let h = t / lit(steps as f64);
    let f = flow_block_diagonal(sol, h);
    let (f11, f12) = (f.view((0, 0), (n, n)), f.view((0, n), (n, n)));
    let (f21, f22) = (f.view((n, 0), (n, n)), f.view((n, n), (n, n)));
    let mut k = DMatrix::<T>::zeros(n, n);
    let (mut log_abs, mut negative) = (T::zero(), false);
    for _ in 0..steps {
        let x = f11 + f12 * &k;
        let y = f21 + f22 * &k;
        let lu = x.clone().lu();
        let d = lu.determinant();
        if d == T::zero() || !d.is_finite() {
            return d;
        }
        negative ^= d < T::zero();
        log_abs += d.abs().ln();
        // K = Y X⁻¹, solved as Xᵀ Kᵀ = Yᵀ.
        match x.transpose().lu().solve(&y.transpose()) {
            Some(kt) => k = kt.transpose(),
            None => return T::zero(),
        }
    }
    let mag = log_abs.exp();
    if negative {
        -mag
    } else {
        mag
    }
}

/// `det Φ₁₁(t)` for each time in `t_grid`.
pub fn phi11_nonsingular<T: Real>(
    a: &DMatrix<T>,
    r: &DMatrix<T>,
    q: &DMatrix<T>,
    t_grid: &[T],
) -> Result<Vec<T>> {
    let sol = solve_care(a, r, q)?;
    Ok(t_grid.iter().map(|&t| phi11_det(&sol, t)).collect())
}
