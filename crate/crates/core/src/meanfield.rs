//! The augmented mean-field filtering system.
//!
//! The parameter evolves as `θ_{n+1} = θ_n + ω_{n+1}` with `ω ~ N(0, γ C_n)`
//! and is observed through `x = F(θ) + ν` with `F(θ) = [G(θ); θ]`,
//! `x = [y; r₀]` and `ν ~ N(0, ((γ+1)/γ) · blockdiag(Σ_η, Σ₀))`. Filtering this
//! system drives the belief towards the posterior.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gaussian::{Ensemble, GaussianBelief};
use crate::kalman::Observation;
use crate::linalg;
use crate::problem::{Fidelity, InverseProblem};

/// Default step parameter.
pub const DEFAULT_GAMMA: f64 = 1.0;

#[derive(Debug, Clone)]
pub struct AugmentedSystem {
    problem: InverseProblem,
    gamma: f64,
    datum: DVector<f64>,
    sigma_nu: DMatrix<f64>,
    sigma_nu_chol: DMatrix<f64>,
}

/// Build the augmented system for step parameter `gamma`.
pub fn build_augmented(problem: &InverseProblem, gamma: f64) -> Result<AugmentedSystem> {
    if !gamma.is_finite() || gamma <= 0.0 {
        return Err(Error::InvalidGamma(gamma));
    }
    let ny = problem.n_obs();
    let n = problem.n_params();
    let mut datum = DVector::zeros(ny + n);
    datum.rows_mut(0, ny).copy_from(problem.y());
    datum.rows_mut(ny, n).copy_from(problem.prior_mean());

    let scale = (gamma + 1.0) / gamma;
    let sigma_nu = linalg::block_diag(problem.noise_cov(), problem.prior_cov()) * scale;
    let sigma_nu_chol = linalg::block_diag(problem.noise_chol(), problem.prior_chol()) * scale.sqrt();
    Ok(AugmentedSystem {
        problem: problem.clone(),
        gamma,
        datum,
        sigma_nu,
        sigma_nu_chol,
    })
}

impl AugmentedSystem {
    pub fn problem(&self) -> &InverseProblem {
        &self.problem
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Augmented datum `[y; r₀]`.
    pub fn x(&self) -> &DVector<f64> {
        &self.datum
    }

    pub fn sigma_nu(&self) -> &DMatrix<f64> {
        &self.sigma_nu
    }

    /// `[G(θ); θ]`.
    pub fn augmented_map(&self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        self.augmented_map_with(theta, Fidelity::High)
    }

    pub fn augmented_map_with(&self, theta: &DVector<f64>, fidelity: Fidelity) -> Result<DVector<f64>> {
        let g = self.problem.evaluate_with(theta, fidelity)?;
        let ny = g.len();
        let mut out = DVector::zeros(ny + theta.len());
        out.rows_mut(0, ny).copy_from(&g);
        out.rows_mut(ny, theta.len()).copy_from(theta);
        Ok(out)
    }
}

impl Observation for AugmentedSystem {
    fn n_params(&self) -> usize {
        self.problem.n_params()
    }

    fn output_dim(&self) -> usize {
        self.datum.len()
    }

    fn datum(&self) -> &DVector<f64> {
        &self.datum
    }

    fn noise_cov(&self) -> &DMatrix<f64> {
        &self.sigma_nu
    }

    fn noise_chol(&self) -> &DMatrix<f64> {
        &self.sigma_nu_chol
    }

    fn observe(&self, theta: &DVector<f64>, fidelity: Fidelity) -> Result<DVector<f64>> {
        self.augmented_map_with(theta, fidelity)
    }

    fn data_dim(&self) -> usize {
        self.problem.n_obs()
    }

    fn is_multi_fidelity(&self) -> bool {
        self.problem.forward().is_multi_fidelity()
    }
}

/// Prediction step on a Gaussian belief: mean kept, covariance scaled by
/// `γ + 1`. In density terms the predicted Gaussian is proportional to
/// `ρ^{1/(γ+1)}`.
pub fn inflate(belief: &GaussianBelief, gamma: f64) -> GaussianBelief {
    GaussianBelief {
        mean: belief.mean.clone(),
        covariance: &belief.covariance * (gamma + 1.0),
    }
}

/// Deterministic ensemble prediction `θ̂ʲ = m + √(γ+1)(θʲ − m)`: the empirical
/// mean is kept and the empirical covariance is scaled by exactly `γ + 1`.
pub fn inflate_ensemble(ensemble: &Ensemble, gamma: f64) -> Ensemble {
    let m = ensemble.mean();
    let s = (gamma + 1.0).sqrt();
    let mut p = ensemble.particles().clone();
    for mut col in p.column_iter_mut() {
        let spread = &col - &m;
        col.copy_from(&(&m + spread * s));
    }
    Ensemble::new(p).expect("inflation preserves the particle count")
}
