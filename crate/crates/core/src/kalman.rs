//! Machinery shared by every Kalman-type analysis step: the observation
//! interface, parallel forward evaluation and the gain computation.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg;
use crate::problem::Fidelity;

/// What an analysis step conditions on: an observation operator, the datum
/// and the Gaussian noise attached to it.
///
/// The mean-field methods observe the augmented map `[G(θ); θ]` against
/// `[y; r₀]`; the transport filters observe `G(θ)` against `y` with inflated
/// noise.
pub trait Observation: Sync {
    fn n_params(&self) -> usize;

    fn output_dim(&self) -> usize;

    fn datum(&self) -> &DVector<f64>;

    fn noise_cov(&self) -> &DMatrix<f64>;

    /// Lower Cholesky factor of [`Observation::noise_cov`].
    fn noise_chol(&self) -> &DMatrix<f64>;

    fn observe(&self, theta: &DVector<f64>, fidelity: Fidelity) -> Result<DVector<f64>>;

    /// Number of leading output entries that correspond to `G(θ)` proper.
    fn data_dim(&self) -> usize;

    fn is_multi_fidelity(&self) -> bool {
        false
    }
}

/// Evaluate the observation operator at every column of `points`, in
/// parallel, returning outputs in column order.
pub fn observe_columns<O, F>(obs: &O, points: &DMatrix<f64>, fidelity_of: F) -> Result<DMatrix<f64>>
where
    O: Observation + ?Sized,
    F: Fn(usize) -> Fidelity + Sync,
{
    let outputs: Vec<DVector<f64>> = (0..points.ncols())
        .into_par_iter()
        .map(|j| {
            let theta = points.column(j).into_owned();
            let out = obs.observe(&theta, fidelity_of(j))?;
            if out.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("forward evaluation at particle {j}")));
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    if outputs.iter().any(|o| o.len() != obs.output_dim()) {
        return Err(Error::ShapeMismatch("observation operator returned the wrong length".into()));
    }
    Ok(DMatrix::from_columns(&outputs))
}

/// Kalman gain `K = C^{θx} (C^{xx})⁻¹` for SPD `C^{xx}`.
pub fn kalman_gain(c_theta_x: &DMatrix<f64>, c_xx: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let l = linalg::spd_sqrt(c_xx).map_err(|_| Error::SingularInnovation)?;
    // K Cxx = Cθx  <=>  Cxx Kᵀ = Cθxᵀ
    Ok(linalg::solve_with_factor(&l, &c_theta_x.transpose()).transpose())
}

/// `Ŷᵀ Σ⁻¹ Ŷ` computed through the lower factor of `Σ`.
pub fn whitened_gram(noise_chol: &DMatrix<f64>, y_dev: &DMatrix<f64>) -> DMatrix<f64> {
    let w = noise_chol
        .solve_lower_triangular(y_dev)
        .expect("positive diagonal");
    linalg::symmetrize(&(w.transpose() * w))
}

/// Check a vector is finite, tagging the error with `what`.
pub fn ensure_finite(v: &DVector<f64>, what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}
