//! Built-in plants with analytic derivatives.

use nalgebra::{DMatrix, DVector};

use crate::model::ControlAffineSystem;
use crate::scalar::{lit, Real};

/// `ẋ₁ = −x₁ + x₁²x₂`, `ẋ₂ = u`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Byrnes;

impl<T: Real> ControlAffineSystem<T> for Byrnes {
    fn name(&self) -> &str {
        "byrnes"
    }
    fn state_dim(&self) -> usize {
        2
    }
    fn input_dim(&self) -> usize {
        1
    }
    fn drift(&self, x: &DVector<T>) -> DVector<T> {
        DVector::from_vec(vec![-x[0] + x[0] * x[0] * x[1], T::zero()])
    }
    fn input_matrix(&self, _x: &DVector<T>) -> DMatrix<T> {
        DMatrix::from_row_slice(2, 1, &[T::zero(), T::one()])
    }
    fn drift_jacobian(&self, x: &DVector<T>) -> DMatrix<T> {
        let two: T = lit(2.0);
        DMatrix::from_row_slice(2, 2, &[-T::one() + two * x[0] * x[1], x[0] * x[0], T::zero(), T::zero()])
    }
    fn input_jacobians(&self, _x: &DVector<T>) -> Vec<DMatrix<T>> {
        vec![DMatrix::zeros(2, 2)]
    }
    fn coupling_hessian(&self, x: &DVector<T>, p: &DVector<T>) -> Option<DMatrix<T>> {
        let two_p1: T = lit::<T>(2.0) * p[0];
        Some(DMatrix::from_row_slice(2, 2, &[two_p1 * x[1], two_p1 * x[0], two_p1 * x[0], T::zero()]))
    }
    fn triangular_split(&self) -> Option<usize> {
        Some(1)
    }
}

/// `ẋ = −x + x² + u`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ScalarCubic;

impl<T: Real> ControlAffineSystem<T> for ScalarCubic {
    fn name(&self) -> &str {
        "scalar_cubic"
    }
    fn state_dim(&self) -> usize {
        1
    }
    fn input_dim(&self) -> usize {
        1
    }
    fn drift(&self, x: &DVector<T>) -> DVector<T> {
        DVector::from_element(1, -x[0] + x[0] * x[0])
    }
    fn input_matrix(&self, _x: &DVector<T>) -> DMatrix<T> {
        DMatrix::from_element(1, 1, T::one())
    }
    fn drift_jacobian(&self, x: &DVector<T>) -> DMatrix<T> {
        DMatrix::from_element(1, 1, -T::one() + lit::<T>(2.0) * x[0])
    }
    fn input_jacobians(&self, _x: &DVector<T>) -> Vec<DMatrix<T>> {
        vec![DMatrix::zeros(1, 1)]
    }
    fn coupling_hessian(&self, _x: &DVector<T>, p: &DVector<T>) -> Option<DMatrix<T>> {
        Some(DMatrix::from_element(1, 1, lit::<T>(2.0) * p[0]))
    }
}

/// `ẋ = Ax + Bu`.
#[derive(Debug, Clone)]
pub struct LinearSystem<T: Real> {
    pub a: DMatrix<T>,
    pub b: DMatrix<T>,
}

impl<T: Real> LinearSystem<T> {
    pub fn new(a: DMatrix<T>, b: DMatrix<T>) -> Self {
        assert!(a.is_square() && b.nrows() == a.nrows(), "A must be square and B must match its rows");
        Self { a, b }
    }
}

impl<T: Real> ControlAffineSystem<T> for LinearSystem<T> {
    fn name(&self) -> &str {
        "linear"
    }
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }
    fn input_dim(&self) -> usize {
        self.b.ncols()
    }
    fn drift(&self, x: &DVector<T>) -> DVector<T> {
        &self.a * x
    }
    fn input_matrix(&self, _x: &DVector<T>) -> DMatrix<T> {
        self.b.clone()
    }
    fn drift_jacobian(&self, _x: &DVector<T>) -> DMatrix<T> {
        self.a.clone()
    }
    fn input_jacobians(&self, _x: &DVector<T>) -> Vec<DMatrix<T>> {
        let n = self.a.nrows();
        vec![DMatrix::zeros(n, n); self.b.ncols()]
    }
    fn coupling_hessian(&self, _x: &DVector<T>, _p: &DVector<T>) -> Option<DMatrix<T>> {
        let n = self.a.nrows();
        Some(DMatrix::zeros(n, n))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_system;
    use nalgebra::dmatrix;

    #[test]
    fn builtins_validate() {
        validate_system::<f64>(&Byrnes).unwrap();
        validate_system::<f64>(&ScalarCubic).unwrap();
        validate_system(&LinearSystem::new(dmatrix![0.0, 1.0; 0.0, 0.0], dmatrix![0.0; 1.0])).unwrap();
    }
}
