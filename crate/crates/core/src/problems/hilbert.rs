//! Hilbert-matrix linear problem `G_ij = 1/(i + j − 1)` with the noise-free
//! datum `y = G·1`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::problem::{InverseProblem, LinearModel};

pub fn hilbert_matrix(n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| 1.0 / (i + j + 1) as f64)
}

/// The datum carries no realized noise; the assumed noise model is still
/// `0.1² I` and the prior `N(0, I)`.
pub fn hilbert_problem(n: usize) -> Result<InverseProblem> {
    if n == 0 {
        return Err(Error::InvalidConfig("Hilbert problem needs n ≥ 1".into()));
    }
    let g = hilbert_matrix(n);
    let y = &g * DVector::from_element(n, 1.0);
    InverseProblem::new(
        Arc::new(LinearModel::new(g)),
        y,
        DMatrix::identity(n, n) * 0.01,
        DVector::zeros(n),
        DMatrix::identity(n, n),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entries_and_datum() {
        let g = hilbert_matrix(3);
        assert_eq!(g[(0, 0)], 1.0);
        assert_eq!(g[(1, 2)], 0.25);
        let p = hilbert_problem(2).unwrap();
        assert!((p.y()[0] - 1.5).abs() < 1e-15);
        assert!((p.y()[1] - 5.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn ill_conditioned() {
        let s = hilbert_matrix(5).singular_values();
        assert!(s.max() / s.min() > 1e5);
    }
}
