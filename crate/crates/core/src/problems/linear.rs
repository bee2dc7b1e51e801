//! Two-parameter linear problems with noise `N(0, 0.1² I)` and prior `N(0, I)`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::problem::{InverseProblem, LinearModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LinearVariant {
    /// Three observations of two parameters.
    Over,
    /// One observation; the data only constrain `θ₁ + 2θ₂`.
    Under,
}

pub const NOISE_VARIANCE: f64 = 0.01;

pub fn linear_operator(variant: LinearVariant) -> (DMatrix<f64>, DVector<f64>) {
    match variant {
        LinearVariant::Over => (
            DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]),
            DVector::from_vec(vec![3.0, 7.0, 10.0]),
        ),
        LinearVariant::Under => (DMatrix::from_row_slice(1, 2, &[1.0, 2.0]), DVector::from_vec(vec![3.0])),
    }
}

pub fn linear_problem(variant: LinearVariant) -> InverseProblem {
    let (g, y) = linear_operator(variant);
    let ny = y.len();
    InverseProblem::new(
        Arc::new(LinearModel::new(g)),
        y,
        DMatrix::identity(ny, ny) * NOISE_VARIANCE,
        DVector::zeros(2),
        DMatrix::identity(2, 2),
    )
    .expect("fixed problem data are valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_values() {
        let one = DVector::from_vec(vec![1.0, 1.0]);
        let p = linear_problem(LinearVariant::Over);
        assert_eq!(p.evaluate(&one).unwrap(), DVector::from_vec(vec![3.0, 7.0, 11.0]));
        assert_eq!(p.noise_cov(), &(DMatrix::identity(3, 3) * 0.01));
        let p = linear_problem(LinearVariant::Under);
        assert_eq!(p.evaluate(&one).unwrap(), p.y().clone());
    }
}
