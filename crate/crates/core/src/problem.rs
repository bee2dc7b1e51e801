//! Inverse problem definition: a black-box forward map, data, noise model and
//! Gaussian prior.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

/// Which model a forward evaluation should use when a problem carries more
/// than one fidelity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Fidelity {
    High,
    Low,
}

/// Parameter-to-observable map `θ ↦ G(θ)`.
///
/// Implementations must be pure and safe to call from several threads at
/// once: the inversion methods evaluate particles in parallel.
pub trait ForwardModel: Send + Sync {
    fn input_dim(&self) -> usize;

    fn output_dim(&self) -> usize;

    fn evaluate(&self, theta: &DVector<f64>) -> Result<DVector<f64>>;

    /// Evaluate with a fidelity hint. Single-fidelity models ignore it.
    fn evaluate_with(&self, theta: &DVector<f64>, _fidelity: Fidelity) -> Result<DVector<f64>> {
        self.evaluate(theta)
    }

    fn is_multi_fidelity(&self) -> bool {
        false
    }

    /// `(G, b)` when the map is affine, `G(θ) = Gθ + b`.
    fn affine_form(&self) -> Option<(DMatrix<f64>, DVector<f64>)> {
        None
    }
}

/// `G(θ) = Gθ`.
#[derive(Debug, Clone)]
pub struct LinearModel {
    matrix: DMatrix<f64>,
}

impl LinearModel {
    pub fn new(matrix: DMatrix<f64>) -> Self {
        LinearModel { matrix }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }
}

impl ForwardModel for LinearModel {
    fn input_dim(&self) -> usize {
        self.matrix.ncols()
    }

    fn output_dim(&self) -> usize {
        self.matrix.nrows()
    }

    fn evaluate(&self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(&self.matrix * theta)
    }

    fn affine_form(&self) -> Option<(DMatrix<f64>, DVector<f64>)> {
        Some((self.matrix.clone(), DVector::zeros(self.matrix.nrows())))
    }
}

/// Forward model backed by a closure.
pub struct FnModel<F> {
    input_dim: usize,
    output_dim: usize,
    f: F,
}

impl<F> FnModel<F>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>> + Send + Sync,
{
    pub fn new(input_dim: usize, output_dim: usize, f: F) -> Self {
        FnModel { input_dim, output_dim, f }
    }
}

impl<F> ForwardModel for FnModel<F>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>> + Send + Sync,
{
    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn output_dim(&self) -> usize {
        self.output_dim
    }

    fn evaluate(&self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        (self.f)(theta)
    }
}

/// `y = G(θ) + η`, `η ~ N(0, Σ_η)`, `θ ~ N(r₀, Σ₀)`.
///
/// Cheap to clone: the forward model is shared behind an `Arc`.
#[derive(Clone)]
pub struct InverseProblem {
    forward: Arc<dyn ForwardModel>,
    y: DVector<f64>,
    noise_cov: DMatrix<f64>,
    noise_chol: DMatrix<f64>,
    prior_mean: DVector<f64>,
    prior_cov: DMatrix<f64>,
    prior_chol: DMatrix<f64>,
}

impl fmt::Debug for InverseProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("InverseProblem")
            .field("n_params", &self.n_params())
            .field("n_obs", &self.n_obs())
            .field("y", &self.y)
            .field("prior_mean", &self.prior_mean)
            .finish_non_exhaustive()
    }
}

impl InverseProblem {
    pub fn new(
        forward: Arc<dyn ForwardModel>,
        y: DVector<f64>,
        noise_cov: DMatrix<f64>,
        prior_mean: DVector<f64>,
        prior_cov: DMatrix<f64>,
    ) -> Result<Self> {
        let n_obs = y.len();
        let n_params = prior_mean.len();
        if forward.output_dim() != n_obs {
            return Err(Error::ShapeMismatch(format!(
                "forward map produces {} outputs but y has length {n_obs}",
                forward.output_dim()
            )));
        }
        if forward.input_dim() != n_params {
            return Err(Error::ShapeMismatch(format!(
                "forward map takes {} parameters but the prior mean has length {n_params}",
                forward.input_dim()
            )));
        }
        if noise_cov.shape() != (n_obs, n_obs) {
            return Err(Error::ShapeMismatch("noise covariance must be N_y x N_y".into()));
        }
        if prior_cov.shape() != (n_params, n_params) {
            return Err(Error::ShapeMismatch("prior covariance must be N_θ x N_θ".into()));
        }
        let noise_chol = linalg::spd_sqrt(&noise_cov)
            .map_err(|e| Error::NotSpd(format!("noise covariance: {e}")))?;
        let prior_chol = linalg::spd_sqrt(&prior_cov)
            .map_err(|e| Error::NotSpd(format!("prior covariance: {e}")))?;
        Ok(InverseProblem {
            forward,
            y,
            noise_cov,
            noise_chol,
            prior_mean,
            prior_cov,
            prior_chol,
        })
    }

    /// Same forward map and noise model with a different Gaussian prior.
    pub fn with_prior(&self, prior_mean: DVector<f64>, prior_cov: DMatrix<f64>) -> Result<Self> {
        InverseProblem::new(self.forward.clone(), self.y.clone(), self.noise_cov.clone(), prior_mean, prior_cov)
    }

    /// Same problem with a different datum.
    pub fn with_data(&self, y: DVector<f64>) -> Result<Self> {
        InverseProblem::new(
            self.forward.clone(),
            y,
            self.noise_cov.clone(),
            self.prior_mean.clone(),
            self.prior_cov.clone(),
        )
    }

    pub fn forward(&self) -> &Arc<dyn ForwardModel> {
        &self.forward
    }

    pub fn n_params(&self) -> usize {
        self.prior_mean.len()
    }

    pub fn n_obs(&self) -> usize {
        self.y.len()
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn noise_cov(&self) -> &DMatrix<f64> {
        &self.noise_cov
    }

    /// Lower Cholesky factor of `Σ_η`.
    pub fn noise_chol(&self) -> &DMatrix<f64> {
        &self.noise_chol
    }

    pub fn prior_mean(&self) -> &DVector<f64> {
        &self.prior_mean
    }

    pub fn prior_cov(&self) -> &DMatrix<f64> {
        &self.prior_cov
    }

    /// Lower Cholesky factor of `Σ₀`.
    pub fn prior_chol(&self) -> &DMatrix<f64> {
        &self.prior_chol
    }

    /// Evaluate `G(θ)` and check the output length.
    pub fn evaluate(&self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        self.evaluate_with(theta, Fidelity::High)
    }

    pub fn evaluate_with(&self, theta: &DVector<f64>, fidelity: Fidelity) -> Result<DVector<f64>> {
        if theta.len() != self.n_params() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} parameters, got {}",
                self.n_params(),
                theta.len()
            )));
        }
        let out = self.forward.evaluate_with(theta, fidelity)?;
        if out.len() != self.n_obs() {
            return Err(Error::ShapeMismatch(format!(
                "forward map returned {} values, expected {}",
                out.len(),
                self.n_obs()
            )));
        }
        Ok(out)
    }

    /// `½‖Σ_η^{-1/2}(y − g)‖²` for a model output `g`.
    pub fn data_misfit_of(&self, g: &DVector<f64>) -> f64 {
        0.5 * linalg::whiten(&self.noise_chol, &(&self.y - g)).norm_squared()
    }

    /// `½‖Σ₀^{-1/2}(θ − r₀)‖²`.
    pub fn prior_misfit(&self, theta: &DVector<f64>) -> f64 {
        0.5 * linalg::whiten(&self.prior_chol, &(theta - &self.prior_mean)).norm_squared()
    }

    /// Data misfit `Φ(θ; y)`.
    pub fn data_misfit(&self, theta: &DVector<f64>) -> Result<f64> {
        Ok(self.data_misfit_of(&self.evaluate(theta)?))
    }

    /// Regularized misfit `Φ_R(θ) = Φ(θ; y) + ½‖Σ₀^{-1/2}(θ − r₀)‖²`, the
    /// negative log posterior density up to a constant.
    pub fn regularized_misfit(&self, theta: &DVector<f64>) -> Result<f64> {
        Ok(self.data_misfit(theta)? + self.prior_misfit(theta))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> InverseProblem {
        InverseProblem::new(
            Arc::new(LinearModel::new(DMatrix::from_row_slice(1, 2, &[1.0, 2.0]))),
            DVector::from_vec(vec![3.0]),
            DMatrix::identity(1, 1) * 0.25,
            DVector::zeros(2),
            DMatrix::identity(2, 2),
        )
        .unwrap()
    }

    #[test]
    fn misfits() {
        let p = toy();
        let theta = DVector::from_vec(vec![1.0, 0.0]);
        // residual 2, noise std 0.5 -> whitened 4 -> ½·16
        assert!((p.data_misfit(&theta).unwrap() - 8.0).abs() < 1e-14);
        assert!((p.prior_misfit(&theta) - 0.5).abs() < 1e-14);
        assert!((p.regularized_misfit(&theta).unwrap() - 8.5).abs() < 1e-14);
    }

    #[test]
    fn rejects_bad_shapes_and_covariances() {
        let g = Arc::new(LinearModel::new(DMatrix::identity(2, 2)));
        let bad_noise = InverseProblem::new(
            g.clone(),
            DVector::zeros(2),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]),
            DVector::zeros(2),
            DMatrix::identity(2, 2),
        );
        assert!(matches!(bad_noise, Err(Error::NotSpd(_))));
        let bad_y = InverseProblem::new(
            g,
            DVector::zeros(3),
            DMatrix::identity(3, 3),
            DVector::zeros(2),
            DMatrix::identity(2, 2),
        );
        assert!(matches!(bad_y, Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn evaluate_checks_output_length() {
        let lying = FnModel::new(2, 1, |_t: &DVector<f64>| Ok(DVector::zeros(3)));
        let p = InverseProblem::new(
            Arc::new(lying),
            DVector::zeros(1),
            DMatrix::identity(1, 1),
            DVector::zeros(2),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        assert!(matches!(p.evaluate(&DVector::zeros(2)), Err(Error::ShapeMismatch(_))));
    }
}
