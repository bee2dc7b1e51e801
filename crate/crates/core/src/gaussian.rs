//! Gaussian beliefs, particle ensembles and the closed-form linear-Gaussian
//! posterior.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg;
use crate::problem::InverseProblem;

/// Tolerance on `‖C − Cᵀ‖_F / ‖C‖_F` for a belief covariance.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Condition number above which the posterior precision is declared singular.
pub const MAX_PRECISION_CONDITION: f64 = 1e14;

/// Mean and covariance of a Gaussian distribution over parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl GaussianBelief {
    /// Checks shapes and symmetry; positive semidefiniteness is left to the
    /// factorization routines that need it.
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        if covariance.shape() != (n, n) {
            return Err(Error::ShapeMismatch(format!(
                "covariance is {}x{} but the mean has length {n}",
                covariance.nrows(),
                covariance.ncols()
            )));
        }
        let asym = linalg::asymmetry(&covariance);
        if asym > SYMMETRY_TOL {
            return Err(Error::NotSpd(format!("covariance asymmetry {asym:e} exceeds tolerance")));
        }
        Ok(GaussianBelief { mean, covariance })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Per-coordinate standard deviations.
    pub fn std_devs(&self) -> DVector<f64> {
        self.covariance.diagonal().map(|v| v.max(0.0).sqrt())
    }

    /// Draw `j` i.i.d. samples as the columns of an ensemble.
    pub fn sample<R: Rng + ?Sized>(&self, j: usize, rng: &mut R) -> Result<Ensemble> {
        let l = linalg::spd_sqrt(&self.covariance)?;
        let n = self.dim();
        let xi = DMatrix::from_fn(n, j, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mut particles = l * xi;
        for mut col in particles.column_iter_mut() {
            col += &self.mean;
        }
        Ensemble::new(particles)
    }
}

/// `J` particles stored as the columns of an `N_θ × J` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    particles: DMatrix<f64>,
}

impl Ensemble {
    pub fn new(particles: DMatrix<f64>) -> Result<Self> {
        if particles.ncols() < 2 {
            return Err(Error::DegenerateEnsemble(particles.ncols()));
        }
        Ok(Ensemble { particles })
    }

    pub fn particles(&self) -> &DMatrix<f64> {
        &self.particles
    }

    pub fn into_particles(self) -> DMatrix<f64> {
        self.particles
    }

    pub fn dim(&self) -> usize {
        self.particles.nrows()
    }

    pub fn size(&self) -> usize {
        self.particles.ncols()
    }

    pub fn mean(&self) -> DVector<f64> {
        self.particles.column_mean()
    }

    /// Deviations from the mean, one column per particle.
    pub fn deviations(&self) -> DMatrix<f64> {
        let m = self.mean();
        let mut dev = self.particles.clone();
        for mut col in dev.column_iter_mut() {
            col -= &m;
        }
        dev
    }

    /// Square-root factor `Z` with columns `(θʲ − m)/√(J−1)`, so that `Z Zᵀ`
    /// is the empirical covariance.
    pub fn sqrt_factor(&self) -> DMatrix<f64> {
        self.deviations() / ((self.size() - 1) as f64).sqrt()
    }

    pub fn moments(&self) -> GaussianBelief {
        let d = self.deviations();
        let covariance = &d * d.transpose() / (self.size() - 1) as f64;
        GaussianBelief {
            mean: self.mean(),
            covariance: linalg::symmetrize(&covariance),
        }
    }
}

/// Empirical mean and `1/(J−1)`-normalized covariance of an ensemble.
pub fn ensemble_moments(ensemble: &Ensemble) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if ensemble.size() < 2 {
        return Err(Error::DegenerateEnsemble(ensemble.size()));
    }
    let GaussianBelief { mean, covariance } = ensemble.moments();
    Ok((mean, covariance))
}

/// Exact posterior of a linear-Gaussian problem `y = Gθ + η`:
/// precision `GᵀΣ_η⁻¹G + Σ₀⁻¹` and mean `r₀ + C GᵀΣ_η⁻¹(y − G r₀)`.
pub fn gaussian_posterior_linear(g: &DMatrix<f64>, problem: &InverseProblem) -> Result<GaussianBelief> {
    gaussian_posterior_affine(g, &DVector::zeros(g.nrows()), problem)
}

/// Posterior for the affine map `G(θ) = Gθ + b`.
pub fn gaussian_posterior_affine(
    g: &DMatrix<f64>,
    offset: &DVector<f64>,
    problem: &InverseProblem,
) -> Result<GaussianBelief> {
    if g.shape() != (problem.n_obs(), problem.n_params()) || offset.len() != problem.n_obs() {
        return Err(Error::ShapeMismatch(format!(
            "linear operator is {}x{}, problem is {}x{}",
            g.nrows(),
            g.ncols(),
            problem.n_obs(),
            problem.n_params()
        )));
    }
    // Σ_η^{-1/2} G via the noise factor
    let wg = problem
        .noise_chol()
        .solve_lower_triangular(g)
        .expect("positive diagonal");
    let prior_precision = linalg::spd_inverse(problem.prior_cov())?;
    let precision = linalg::symmetrize(&(wg.transpose() * &wg + prior_precision));
    let cond = linalg::sym_condition_number(&precision);
    if !cond.is_finite() || cond > MAX_PRECISION_CONDITION {
        return Err(Error::SingularPrecision(cond));
    }
    let covariance = linalg::spd_inverse(&precision).map_err(|_| Error::SingularPrecision(cond))?;
    let residual = problem.y() - offset - g * problem.prior_mean();
    let wr = linalg::whiten(problem.noise_chol(), &residual);
    let mean = problem.prior_mean() + &covariance * (wg.transpose() * wr);
    Ok(GaussianBelief { mean, covariance })
}
