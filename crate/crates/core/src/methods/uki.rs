//! Unscented Kalman inversion.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::gaussian::GaussianBelief;
use crate::kalman::{self, Observation};
use crate::linalg;
use crate::meanfield::{self, AugmentedSystem};
use crate::problem::Fidelity;

use super::sigma::{sigma_points, UkiVariant};

/// Result of one quadrature analysis.
#[derive(Debug, Clone)]
pub struct UkiAnalysis {
    pub belief: GaussianBelief,
    /// Observation predicted at the centre point, `F(θ̂⁰)`.
    pub predicted: DVector<f64>,
    pub evaluations: usize,
}

/// Condition the Gaussian `prior` on the datum of `obs` using sigma-point
/// quadrature. No inflation is applied here.
///
/// The centre point is evaluated at high fidelity and every other point at
/// low fidelity, which only matters for bi-fidelity problems.
pub fn analyze<O: Observation + ?Sized>(
    prior: &GaussianBelief,
    obs: &O,
    variant: UkiVariant,
) -> Result<UkiAnalysis> {
    let sp = sigma_points(&prior.mean, &prior.covariance, variant)?;
    let outputs = kalman::observe_columns(obs, &sp.points, |j| {
        if j == 0 {
            Fidelity::High
        } else {
            Fidelity::Low
        }
    })?;
    let a = sp.weight;
    let y_hat = outputs.column(0).into_owned();
    let m_hat = sp.points.column(0).into_owned();

    let n = prior.dim();
    let ny = obs.output_dim();
    let mut c_tx = DMatrix::zeros(n, ny);
    let mut c_xx = obs.noise_cov().clone();
    for j in 1..sp.len() {
        let dt = sp.points.column(j) - &m_hat;
        let dy = outputs.column(j) - &y_hat;
        c_tx += &dt * dy.transpose() * a;
        c_xx += &dy * dy.transpose() * a;
    }
    let gain = kalman::kalman_gain(&c_tx, &c_xx)?;
    let mean = &prior.mean + &gain * (obs.datum() - &y_hat);
    let covariance = linalg::symmetrize(&(&prior.covariance - &gain * c_tx.transpose()));
    kalman::ensure_finite(&mean, "UKI mean update")?;
    Ok(UkiAnalysis {
        belief: GaussianBelief { mean, covariance },
        predicted: y_hat,
        evaluations: sp.len(),
    })
}

/// One UKI iteration on the mean-field system: inflate by `γ + 1`, then
/// analyse against `[y; r₀]`.
pub fn uki_step(belief: &GaussianBelief, system: &AugmentedSystem, variant: UkiVariant) -> Result<UkiAnalysis> {
    analyze(&meanfield::inflate(belief, system.gamma()), system, variant)
}
