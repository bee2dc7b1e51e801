//! Reference samplers: random-walk Metropolis and preconditioned
//! Crank–Nicolson.
//!
//! Both chains start at the prior mean and accumulate post-burn-in moments
//! online, so multi-million-sample chains need no storage. A proposal whose
//! forward evaluation fails or is non-finite is simply rejected.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::GaussianBelief;
use crate::linalg;
use crate::problem::InverseProblem;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    /// Total chain length, burn-in included.
    pub n_samples: usize,
    pub burn_in: usize,
    /// RWM step or pCN `β`.
    pub step_size: f64,
    pub seed: u64,
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 || self.burn_in >= self.n_samples {
            return Err(Error::InvalidConfig(format!(
                "burn-in {} must be smaller than the sample count {}",
                self.burn_in, self.n_samples
            )));
        }
        if !(self.step_size.is_finite() && self.step_size > 0.0) {
            return Err(Error::InvalidStep(self.step_size));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainSummary {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    /// Accepted proposals over all proposals, burn-in included.
    pub acceptance_rate: f64,
    /// Number of post-burn-in states the moments were computed from.
    pub n_kept: usize,
    /// Monte Carlo standard error of `mean` from [`BATCHES`] batch means;
    /// NaN when fewer than two full batches were kept.
    pub mc_std_err: DVector<f64>,
}

impl ChainSummary {
    pub fn belief(&self) -> GaussianBelief {
        GaussianBelief {
            mean: self.mean.clone(),
            covariance: self.covariance.clone(),
        }
    }

    pub fn std_devs(&self) -> DVector<f64> {
        self.covariance.diagonal().map(|v| v.max(0.0).sqrt())
    }
}

/// Number of batches behind [`ChainSummary::mc_std_err`].
pub const BATCHES: usize = 50;

/// Welford accumulator for vector-valued samples.
#[derive(Debug, Clone)]
pub struct StreamingMoments {
    count: usize,
    mean: DVector<f64>,
    m2: DMatrix<f64>,
}

impl StreamingMoments {
    pub fn new(dim: usize) -> Self {
        StreamingMoments {
            count: 0,
            mean: DVector::zeros(dim),
            m2: DMatrix::zeros(dim, dim),
        }
    }

    pub fn push(&mut self, x: &DVector<f64>) {
        self.count += 1;
        let delta = x - &self.mean;
        self.mean += &delta / self.count as f64;
        let delta2 = x - &self.mean;
        self.m2.ger(1.0, &delta, &delta2, 1.0);
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    /// Unbiased covariance; zero with fewer than two samples.
    pub fn covariance(&self) -> DMatrix<f64> {
        if self.count < 2 {
            return DMatrix::zeros(self.mean.len(), self.mean.len());
        }
        linalg::symmetrize(&(&self.m2 / (self.count - 1) as f64))
    }
}

fn finite_or_inf(v: Result<f64>) -> f64 {
    match v {
        Ok(x) if x.is_finite() => x,
        _ => f64::INFINITY,
    }
}

/// Generic Metropolis–Hastings loop with a symmetric (w.r.t. the target's
/// reference measure) proposal; `potential` is the negative log acceptance
/// density.
fn metropolis<P, Q>(n: usize, config: &ChainConfig, x0: DVector<f64>, potential: P, mut propose: Q) -> Result<ChainSummary>
where
    P: Fn(&DVector<f64>) -> f64,
    Q: FnMut(&DVector<f64>, &mut ChaCha8Rng) -> DVector<f64>,
{
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut x = x0;
    let mut phi = potential(&x);
    if !phi.is_finite() {
        return Err(Error::NonFinite("potential at the chain's starting point".into()));
    }
    let mut stats = StreamingMoments::new(n);
    let batch_len = (config.n_samples - config.burn_in) / BATCHES;
    let mut batches = StreamingMoments::new(n);
    let mut batch_sum = DVector::zeros(n);
    let mut accepted = 0usize;
    for i in 0..config.n_samples {
        let candidate = propose(&x, &mut rng);
        let phi_new = potential(&candidate);
        let u: f64 = rng.random();
        if phi_new.is_finite() && u.ln() < phi - phi_new {
            x = candidate;
            phi = phi_new;
            accepted += 1;
        }
        if i >= config.burn_in {
            stats.push(&x);
            if batch_len > 0 && batches.count() < BATCHES {
                batch_sum += &x;
                if stats.count().is_multiple_of(batch_len) {
                    batches.push(&(&batch_sum / batch_len as f64));
                    batch_sum.fill(0.0);
                }
            }
        }
    }
    let mc_std_err = if batches.count() >= 2 {
        batches.covariance().diagonal().map(|v| (v.max(0.0) / batches.count() as f64).sqrt())
    } else {
        DVector::from_element(n, f64::NAN)
    };
    Ok(ChainSummary {
        mean: stats.mean().clone(),
        covariance: stats.covariance(),
        acceptance_rate: accepted as f64 / config.n_samples as f64,
        n_kept: stats.count(),
        mc_std_err,
    })
}

fn standard_normal(n: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Random-walk Metropolis on the posterior `exp(−Φ_R)` with proposal
/// `θ' = θ + step·ξ`, `ξ ~ N(0, I)`.
pub fn rwm_sample(problem: &InverseProblem, config: &ChainConfig) -> Result<ChainSummary> {
    let n = problem.n_params();
    let step = config.step_size;
    metropolis(
        n,
        config,
        problem.prior_mean().clone(),
        |theta| finite_or_inf(problem.regularized_misfit(theta)),
        |theta, rng| theta + standard_normal(n, rng) * step,
    )
}

/// Preconditioned Crank–Nicolson with proposal
/// `θ' = r₀ + √(1−β²)(θ − r₀) + β ξ`, `ξ ~ N(0, Σ₀)`. The proposal is
/// prior-reversible, so only the data misfit enters the acceptance ratio.
pub fn pcn_sample(problem: &InverseProblem, config: &ChainConfig) -> Result<ChainSummary> {
    let beta = config.step_size;
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::InvalidStep(beta));
    }
    let n = problem.n_params();
    let r0 = problem.prior_mean().clone();
    let chol = problem.prior_chol().clone();
    let contraction = (1.0 - beta * beta).sqrt();
    metropolis(
        n,
        config,
        r0.clone(),
        |theta| finite_or_inf(problem.data_misfit(theta)),
        |theta, rng| &r0 + (theta - &r0) * contraction + &chol * standard_normal(n, rng) * beta,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::LinearModel;
    use std::sync::Arc;

    fn scalar(g: f64, y: f64, noise: f64) -> InverseProblem {
        InverseProblem::new(
            Arc::new(LinearModel::new(DMatrix::from_element(1, 1, g))),
            DVector::from_element(1, y),
            DMatrix::from_element(1, 1, noise),
            DVector::zeros(1),
            DMatrix::identity(1, 1),
        )
        .unwrap()
    }

    fn cfg(n: usize, step: f64, seed: u64) -> ChainConfig {
        ChainConfig {
            n_samples: n,
            burn_in: n / 10,
            step_size: step,
            seed,
        }
    }

    #[test]
    fn welford_matches_two_pass() {
        let xs = [[1.0, 2.0], [3.0, -1.0], [0.5, 0.5], [2.0, 4.0]];
        let mut s = StreamingMoments::new(2);
        for x in &xs {
            s.push(&DVector::from_row_slice(x));
        }
        let m = DVector::from_vec(vec![1.625, 1.375]);
        assert!((s.mean() - &m).norm() < 1e-14);
        let mut c = DMatrix::zeros(2, 2);
        for x in &xs {
            let d = DVector::from_row_slice(x) - &m;
            c += &d * d.transpose();
        }
        c /= 3.0;
        assert!((s.covariance() - c).norm() < 1e-13);
    }

    #[test]
    fn config_validation() {
        let p = scalar(1.0, 0.0, 1.0);
        let mut c = cfg(100, 0.5, 0);
        c.burn_in = 100;
        assert!(matches!(rwm_sample(&p, &c), Err(Error::InvalidConfig(_))));
        assert_eq!(pcn_sample(&p, &cfg(100, 1.0, 0)).unwrap_err(), Error::InvalidStep(1.0));
        assert_eq!(pcn_sample(&p, &cfg(100, 0.0, 0)).unwrap_err(), Error::InvalidStep(0.0));
        assert!(matches!(rwm_sample(&p, &cfg(100, -1.0, 0)), Err(Error::InvalidStep(_))));
    }

    #[test]
    fn chains_are_reproducible() {
        let p = scalar(2.0, 1.0, 0.5);
        let a = rwm_sample(&p, &cfg(2000, 0.8, 7)).unwrap();
        let b = rwm_sample(&p, &cfg(2000, 0.8, 7)).unwrap();
        assert_eq!(a, b);
        let a = pcn_sample(&p, &cfg(2000, 0.3, 7)).unwrap();
        let b = pcn_sample(&p, &cfg(2000, 0.3, 7)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn one_dimensional_gaussian_target() {
        // posterior precision 1 + 4/0.5 = 9, mean (2/0.5)/9
        let p = scalar(2.0, 1.0, 0.5);
        let (m, v) = (4.0 / 9.0, 1.0 / 9.0);
        for s in [rwm_sample(&p, &cfg(200_000, 0.6, 1)).unwrap(), pcn_sample(&p, &cfg(200_000, 0.5, 1)).unwrap()] {
            // generous autocorrelation allowance on the standard error
            let se = (v / s.n_kept as f64).sqrt() * 10.0;
            assert!((s.mean[0] - m).abs() < 3.0 * se, "{} vs {m}", s.mean[0]);
            assert!((s.covariance[(0, 0)] - v).abs() / v < 0.05);
            assert!(s.acceptance_rate > 0.0 && s.acceptance_rate < 1.0);
        }
    }

    #[test]
    fn tiny_steps_are_almost_always_accepted() {
        let p = scalar(1.0, 0.3, 1.0);
        let s = rwm_sample(&p, &cfg(5000, 1e-6, 3)).unwrap();
        assert!(s.acceptance_rate > 0.999);
    }

    #[test]
    fn uninformative_likelihood_recovers_prior() {
        let p = scalar(0.0, 0.0, 1e12);
        let s = pcn_sample(&p, &cfg(100_000, 0.9, 5)).unwrap();
        assert!(s.mean[0].abs() < 0.05);
        assert!((s.covariance[(0, 0)] - 1.0).abs() < 0.05);
    }

    #[test]
    fn failing_forward_model_is_rejected_not_fatal() {
        use crate::problem::FnModel;
        let model = FnModel::new(1, 1, |t: &DVector<f64>| {
            if t[0] > 0.5 {
                Err(Error::SolverFailure("out of domain".into()))
            } else {
                Ok(t.clone())
            }
        });
        let p = InverseProblem::new(
            Arc::new(model),
            DVector::zeros(1),
            DMatrix::identity(1, 1),
            DVector::zeros(1),
            DMatrix::identity(1, 1),
        )
        .unwrap();
        let s = rwm_sample(&p, &cfg(5000, 0.5, 2)).unwrap();
        assert!(s.mean[0] < 0.5);
    }

    #[test]
    fn batch_means_track_autocorrelation() {
        // with a flat likelihood pCN is AR(1) with ρ = √(1−β²), so the
        // standard error is √(τ/N) with τ = (1+ρ)/(1−ρ)
        let p = scalar(0.0, 0.0, 1e12);
        let s = pcn_sample(&p, &cfg(200_000, 0.9, 8)).unwrap();
        let rho = (1.0_f64 - 0.81).sqrt();
        let expected = ((1.0 + rho) / (1.0 - rho) / s.n_kept as f64).sqrt();
        assert!((s.mc_std_err[0] / expected - 1.0).abs() < 0.3, "{} vs {expected}", s.mc_std_err[0]);
        assert!(pcn_sample(&p, &cfg(40, 0.9, 8)).unwrap().mc_std_err[0].is_nan());
    }

    #[test]
    fn acceptance_falls_with_step_size() {
        let p = crate::problems::linear_problem(crate::problems::LinearVariant::Over);
        for sampler in [rwm_sample, pcn_sample] {
            let rates: Vec<f64> = [0.02, 0.1, 0.5]
                .iter()
                .map(|&step| sampler(&p, &cfg(20_000, step, 4)).unwrap().acceptance_rate)
                .collect();
            assert!(rates.iter().all(|&r| r > 0.0 && r < 1.0), "{rates:?}");
            assert!(rates.windows(2).all(|w| w[1] <= w[0]), "{rates:?}");
        }
    }
}
