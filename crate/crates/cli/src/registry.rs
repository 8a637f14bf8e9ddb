//! Built-in plants and their default output maps.

use std::sync::Arc;

use nalgebra::{dmatrix, DMatrix};
use thiserror::Error;
use turnpike_core::model::ControlAffineSystem;
use turnpike_core::systems::{Byrnes, LinearSystem, ScalarCubic};

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("unknown system `{name}`; available: {}", available.join(", "))]
pub struct UnknownSystem {
    pub name: String,
    pub available: Vec<String>,
}

#[derive(Clone)]
pub struct RegistryEntry {
    pub name: &'static str,
    pub summary: &'static str,
    pub system: Arc<dyn ControlAffineSystem<f64>>,
    /// Output map used when the config gives none.
    pub default_c: DMatrix<f64>,
    /// `f` and `g` as DSL text, when the plant is not parameterized.
    pub formulas: Option<(Vec<&'static str>, Vec<Vec<&'static str>>)>,
}

impl std::fmt::Debug for RegistryEntry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RegistryEntry").field("name", &self.name).field("summary", &self.summary).finish()
    }
}

/// Default linear plant: one unstable and one stable mode, both reached
/// through a single input, so the Hamiltonian spectrum is real.
pub fn default_lqr() -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    (dmatrix![1.0, 1.0; 0.0, -1.0], dmatrix![0.0; 1.0], DMatrix::identity(2, 2))
}

pub fn registry() -> Vec<RegistryEntry> {
    let (a, b, c) = default_lqr();
    vec![
        RegistryEntry {
            name: "byrnes",
            summary: "x1' = -x1 + x1^2 x2, x2' = u",
            system: Arc::new(Byrnes),
            default_c: DMatrix::identity(2, 2),
            formulas: Some((vec!["-x1 + x1^2*x2", "0"], vec![vec!["0"], vec!["1"]])),
        },
        RegistryEntry {
            name: "scalar_cubic",
            summary: "x' = -x + x^2 + u",
            system: Arc::new(ScalarCubic),
            default_c: DMatrix::zeros(1, 1),
            formulas: Some((vec!["-x1 + x1^2"], vec![vec!["1"]])),
        },
        RegistryEntry {
            name: "lqr",
            summary: "x' = Ax + Bu (A, B, C configurable)",
            system: Arc::new(LinearSystem::new(a, b)),
            default_c: c,
            formulas: None,
        },
    ]
}

pub fn lookup(name: &str) -> Result<RegistryEntry, UnknownSystem> {
    let all = registry();
    let available = all.iter().map(|e| e.name.to_string()).collect();
    all.into_iter().find(|e| e.name == name).ok_or(UnknownSystem { name: name.to_string(), available })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    #[test]
    fn byrnes_entry() {
        let e = lookup("byrnes").unwrap();
        assert_eq!((e.system.state_dim(), e.system.input_dim()), (2, 1));
        let x = dvector![1.5, -0.5];
        assert_eq!(e.system.drift(&x), dvector![-1.5 + 2.25 * -0.5, 0.0]);
        assert_eq!(e.system.input_matrix(&x), dmatrix![0.0; 1.0]);
    }

    #[test]
    fn scalar_cubic_entry() {
        let e = lookup("scalar_cubic").unwrap();
        assert_eq!(e.system.state_dim(), 1);
        assert_eq!(e.system.drift(&dvector![3.0]), dvector![6.0]);
        assert_eq!(e.system.input_matrix(&dvector![3.0]), dmatrix![1.0]);
        assert_eq!(e.default_c, DMatrix::zeros(1, 1));
    }

    #[test]
    fn unknown_name_lists_choices() {
        let err = lookup("vanderpol").unwrap_err();
        assert_eq!(err.available, vec!["byrnes", "scalar_cubic", "lqr"]);
        assert!(err.to_string().contains("byrnes, scalar_cubic, lqr"));
    }

    #[test]
    fn default_lqr_meets_the_linear_hypotheses() {
        let (a, b, c) = default_lqr();
        let t = turnpike_core::linham::LinearTriple::new(a, b, c).unwrap();
        assert!(t.is_stabilizable() && t.is_detectable());
    }
}
