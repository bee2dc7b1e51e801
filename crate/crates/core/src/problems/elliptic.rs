//! One-dimensional elliptic problem `−(e^{θ₁} p′)′ = 1` on `[0, 1]` with
//! `p(0) = 0`, `p(1) = θ₂`, observed through its closed-form solution
//! `p(x) = θ₂x + e^{−θ₁}(x − x²)/2`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::problem::{ForwardModel, InverseProblem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EllipticVariant {
    /// Observe at `x = 0.25` and `x = 0.75`.
    Well,
    /// Observe at `x = 0.25` only.
    Under,
}

pub fn pressure(theta: &DVector<f64>, x: f64) -> f64 {
    theta[1] * x + (-theta[0]).exp() * (x - x * x) / 2.0
}

#[derive(Debug, Clone)]
pub struct EllipticModel {
    points: Vec<f64>,
}

impl EllipticModel {
    pub fn new(points: Vec<f64>) -> Self {
        EllipticModel { points }
    }
}

impl ForwardModel for EllipticModel {
    fn input_dim(&self) -> usize {
        2
    }

    fn output_dim(&self) -> usize {
        self.points.len()
    }

    fn evaluate(&self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(DVector::from_iterator(self.points.len(), self.points.iter().map(|&x| pressure(theta, x))))
    }
}

pub fn elliptic_problem(variant: EllipticVariant) -> InverseProblem {
    let (points, y) = match variant {
        EllipticVariant::Well => (vec![0.25, 0.75], vec![27.5, 79.7]),
        EllipticVariant::Under => (vec![0.25], vec![27.5]),
    };
    let ny = y.len();
    InverseProblem::new(
        Arc::new(EllipticModel::new(points)),
        DVector::from_vec(y),
        DMatrix::identity(ny, ny) * 0.01,
        DVector::from_vec(vec![0.0, 100.0]),
        DMatrix::identity(2, 2),
    )
    .expect("fixed problem data are valid")
}
