//! Ensemble Kalman analyses: perturbed-observation (EKI), adjustment (EAKI)
//! and transform (ETKI).
//!
//! All three share the empirical quantities
//!
//! * `Ẑ = [θ̂ʲ − m̂]/√(J−1)`, the square root of the predicted covariance;
//! * `Ŷ = [F(θ̂ʲ) − ŷ]/√(J−1)`, with `ŷ` the ensemble mean of the outputs;
//! * `C^{θx} = Ẑ Ŷᵀ` and `C^{xx} = Ŷ Ŷᵀ + Σ`.
//!
//! The two square-root variants update the mean with the Kalman gain and
//! reshape the spread deterministically so that the new empirical covariance
//! equals `Ĉ − C^{θx}(C^{xx})⁻¹C^{θx}ᵀ` exactly.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::gaussian::Ensemble;
use crate::kalman::{self, Observation};
use crate::linalg::{self, SortedSvd};
use crate::meanfield::{self, AugmentedSystem};
use crate::problem::Fidelity;

/// Singular values below this fraction of the largest are treated as zero
/// when deciding the rank of `Ẑ`.
pub const RANK_CUTOFF: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct EnsembleAnalysis {
    pub ensemble: Ensemble,
    /// Ensemble mean of the predicted observations.
    pub predicted: DVector<f64>,
    pub evaluations: usize,
}

struct Predicted {
    m_hat: DVector<f64>,
    z_hat: DMatrix<f64>,
    outputs: DMatrix<f64>,
    y_mean: DVector<f64>,
    y_dev: DMatrix<f64>,
}

fn predict<O: Observation + ?Sized>(ens: &Ensemble, obs: &O) -> Result<Predicted> {
    if obs.is_multi_fidelity() {
        return Err(Error::Unsupported(
            "bi-fidelity evaluation is only defined for the unscented methods".into(),
        ));
    }
    let j = ens.size();
    let outputs = kalman::observe_columns(obs, ens.particles(), |_| Fidelity::High)?;
    let y_mean = outputs.column_mean();
    let mut y_dev = outputs.clone();
    for mut col in y_dev.column_iter_mut() {
        col -= &y_mean;
    }
    y_dev /= ((j - 1) as f64).sqrt();
    Ok(Predicted {
        m_hat: ens.mean(),
        z_hat: ens.sqrt_factor(),
        outputs,
        y_mean,
        y_dev,
    })
}

fn gain<O: Observation + ?Sized>(p: &Predicted, obs: &O) -> Result<DMatrix<f64>> {
    let c_tx = &p.z_hat * p.y_dev.transpose();
    let c_xx = &p.y_dev * p.y_dev.transpose() + obs.noise_cov();
    kalman::kalman_gain(&c_tx, &c_xx)
}

/// Perturbed-observation update
/// `θʲ ← θ̂ʲ + K(x − F(θ̂ʲ) − νʲ)`, `νʲ ~ N(0, Σ)` drawn per particle.
pub fn eki_analyze<O, R>(ens_hat: &Ensemble, obs: &O, rng: &mut R) -> Result<EnsembleAnalysis>
where
    O: Observation + ?Sized,
    R: Rng + ?Sized,
{
    let p = predict(ens_hat, obs)?;
    let k = gain(&p, obs)?;
    let ny = obs.output_dim();
    let j = ens_hat.size();
    let xi = DMatrix::from_fn(ny, j, |_, _| rng.sample::<f64, _>(StandardNormal));
    let noise = obs.noise_chol() * xi;
    let mut innovations = -&p.outputs - noise;
    for mut col in innovations.column_iter_mut() {
        col += obs.datum();
    }
    let particles = ens_hat.particles() + k * innovations;
    Ok(EnsembleAnalysis {
        ensemble: Ensemble::new(particles)?,
        predicted: p.y_mean,
        evaluations: j,
    })
}

/// Adjustment update `θʲ = m + A(θ̂ʲ − m̂)` with the pre-multiplier
/// `A = P D̂^{1/2} U D^{1/2} D̂^{−1/2} Pᵀ`, where `Ẑ = P D̂^{1/2} Vᵀ` is the
/// compact SVD and `Vᵀ(𝕀 + ŶᵀΣ⁻¹Ŷ)⁻¹V = U D Uᵀ`.
pub fn eaki_analyze<O: Observation + ?Sized>(ens_hat: &Ensemble, obs: &O) -> Result<EnsembleAnalysis> {
    let p = predict(ens_hat, obs)?;
    let j = ens_hat.size();

    let svd = SortedSvd::new(&p.z_hat);
    let r = svd.rank(RANK_CUTOFF);
    if r == 0 {
        return Err(Error::RankDeficient { rank: 0, required: 1 });
    }
    let pmat = svd.u.columns(0, r).into_owned();
    let sqrt_dhat = svd.singular_values.rows(0, r).into_owned();
    let v = svd.v_t.rows(0, r).transpose();

    let gram = kalman::whitened_gram(obs.noise_chol(), &p.y_dev);
    let inner = linalg::spd_inverse(&(DMatrix::identity(j, j) + gram))?;
    let reduced = linalg::symmetrize(&(v.transpose() * inner * &v));
    let (d, u) = linalg::sym_eigen_desc(&reduced);
    let sqrt_d = d.map(|x| x.max(0.0).sqrt());

    let left = &pmat * DMatrix::from_diagonal(&sqrt_dhat) * &u * DMatrix::from_diagonal(&sqrt_d);
    let right = DMatrix::from_diagonal(&sqrt_dhat.map(|s| 1.0 / s)) * pmat.transpose();
    let adjust = left * right;

    let k = gain(&p, obs)?;
    let mean = &p.m_hat + k * (obs.datum() - &p.y_mean);
    kalman::ensure_finite(&mean, "EAKI mean update")?;

    let dev = &adjust * ens_hat.deviations();
    let mut particles = dev;
    for mut col in particles.column_iter_mut() {
        col += &mean;
    }
    Ok(EnsembleAnalysis {
        ensemble: Ensemble::new(particles)?,
        predicted: p.y_mean,
        evaluations: j,
    })
}

/// Transform update `Z = Ẑ T` with the post-multiplier
/// `T = P(Γ + 𝕀)^{−1/2}Pᵀ` from the `J × J` eigendecomposition
/// `ŶᵀΣ⁻¹Ŷ = PΓPᵀ`; particles are rebuilt about the updated mean as
/// `θʲ = m + √(J−1) Z[:, j]`.
pub fn etki_analyze<O: Observation + ?Sized>(ens_hat: &Ensemble, obs: &O) -> Result<EnsembleAnalysis> {
    let p = predict(ens_hat, obs)?;
    let j = ens_hat.size();
    if p.z_hat.iter().all(|&v| v == 0.0) {
        return Err(Error::RankDeficient { rank: 0, required: 1 });
    }

    let gram = kalman::whitened_gram(obs.noise_chol(), &p.y_dev);
    let (gamma, pm) = linalg::sym_eigen_desc(&gram);
    let scale = gamma.map(|g| 1.0 / (g.max(0.0) + 1.0).sqrt());
    let transform = &pm * DMatrix::from_diagonal(&scale) * pm.transpose();
    let mut z = &p.z_hat * transform;
    // T fixes the all-ones vector exactly only in exact arithmetic
    let drift = z.column_mean();
    for mut col in z.column_iter_mut() {
        col -= &drift;
    }

    let k = gain(&p, obs)?;
    let mean = &p.m_hat + k * (obs.datum() - &p.y_mean);
    kalman::ensure_finite(&mean, "ETKI mean update")?;

    let mut particles = z * ((j - 1) as f64).sqrt();
    for mut col in particles.column_iter_mut() {
        col += &mean;
    }
    Ok(EnsembleAnalysis {
        ensemble: Ensemble::new(particles)?,
        predicted: p.y_mean,
        evaluations: j,
    })
}

/// One EKI iteration on the mean-field system.
pub fn eki_step<R: Rng + ?Sized>(ens: &Ensemble, system: &AugmentedSystem, rng: &mut R) -> Result<EnsembleAnalysis> {
    eki_analyze(&meanfield::inflate_ensemble(ens, system.gamma()), system, rng)
}

/// One EAKI iteration on the mean-field system.
pub fn eaki_step(ens: &Ensemble, system: &AugmentedSystem) -> Result<EnsembleAnalysis> {
    eaki_analyze(&meanfield::inflate_ensemble(ens, system.gamma()), system)
}

/// One ETKI iteration on the mean-field system.
pub fn etki_step(ens: &Ensemble, system: &AugmentedSystem) -> Result<EnsembleAnalysis> {
    etki_analyze(&meanfield::inflate_ensemble(ens, system.gamma()), system)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::GaussianBelief;
    use crate::meanfield::build_augmented;
    use crate::problem::{FnModel, InverseProblem, LinearModel};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn linear_problem() -> InverseProblem {
        InverseProblem::new(
            Arc::new(LinearModel::new(DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]))),
            DVector::from_vec(vec![3.0, 7.0, 10.0]),
            DMatrix::identity(3, 3) * 0.01,
            DVector::zeros(2),
            DMatrix::identity(2, 2),
        )
        .unwrap()
    }

    fn prior_ensemble(p: &InverseProblem, j: usize, seed: u64) -> Ensemble {
        GaussianBelief::new(p.prior_mean().clone(), p.prior_cov().clone())
            .unwrap()
            .sample(j, &mut ChaCha8Rng::seed_from_u64(seed))
            .unwrap()
    }

    /// Kalman covariance computed from the predicted ensemble by the
    /// textbook formula, independent of the square-root algebra.
    fn kalman_cov(ens_hat: &Ensemble, sys: &AugmentedSystem) -> DMatrix<f64> {
        let j = ens_hat.size() as f64;
        let m = ens_hat.mean();
        let outs: Vec<DVector<f64>> = ens_hat
            .particles()
            .column_iter()
            .map(|c| sys.augmented_map(&c.into_owned()).unwrap())
            .collect();
        let ybar = outs.iter().fold(DVector::zeros(outs[0].len()), |acc, o| acc + o) / j;
        let mut ctt = DMatrix::zeros(m.len(), m.len());
        let mut ctx = DMatrix::zeros(m.len(), ybar.len());
        let mut cxx = sys.sigma_nu().clone();
        for (c, o) in ens_hat.particles().column_iter().zip(&outs) {
            let dt = c - &m;
            let dy = o - &ybar;
            ctt += &dt * dt.transpose() / (j - 1.0);
            ctx += &dt * dy.transpose() / (j - 1.0);
            cxx += &dy * dy.transpose() / (j - 1.0);
        }
        let inv = cxx.try_inverse().unwrap();
        &ctt - &ctx * inv * ctx.transpose()
    }

    #[test]
    fn square_root_updates_match_kalman_covariance() {
        let p = linear_problem();
        let sys = build_augmented(&p, 1.0).unwrap();
        let ens = prior_ensemble(&p, 10, 1);
        let hat = meanfield::inflate_ensemble(&ens, 1.0);
        let expected = kalman_cov(&hat, &sys);
        for out in [eaki_analyze(&hat, &sys).unwrap(), etki_analyze(&hat, &sys).unwrap()] {
            let got = out.ensemble.moments().covariance;
            assert!(linalg::rel_error(&got, &expected) < 1e-10, "{got} vs {expected}");
        }
    }

    #[test]
    fn identical_particles_are_rank_deficient() {
        let p = linear_problem();
        let sys = build_augmented(&p, 1.0).unwrap();
        let ens = Ensemble::new(DMatrix::from_element(2, 4, 0.5)).unwrap();
        assert!(matches!(eaki_step(&ens, &sys), Err(Error::RankDeficient { .. })));
        assert!(matches!(etki_step(&ens, &sys), Err(Error::RankDeficient { .. })));
    }

    #[test]
    fn eki_without_innovation_leaves_particles_alone() {
        // y = G(θ*) and r₀ = θ*: every identical particle already predicts x
        let theta = DVector::from_vec(vec![0.3, -0.2]);
        let g = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, -0.5, 2.0]);
        let p = InverseProblem::new(
            Arc::new(LinearModel::new(g.clone())),
            &g * &theta,
            DMatrix::identity(2, 2),
            theta.clone(),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        let sys = build_augmented(&p, 1.0).unwrap();
        let ens = Ensemble::new(DMatrix::from_columns(&[theta.clone(), theta.clone(), theta.clone()])).unwrap();
        // zero-spread ensemble: the gain vanishes, so even the drawn noise has no effect
        let out = eki_step(&ens, &sys, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(out.ensemble, ens);
    }

    #[test]
    fn eki_is_reproducible_under_seed() {
        let p = linear_problem();
        let sys = build_augmented(&p, 1.0).unwrap();
        let ens = prior_ensemble(&p, 10, 2);
        let a = eki_step(&ens, &sys, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = eki_step(&ens, &sys, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a.ensemble, b.ensemble);
    }

    #[test]
    fn non_finite_forward_output_is_reported() {
        let model = FnModel::new(1, 1, |t: &DVector<f64>| Ok(DVector::from_element(1, 1.0 / (t[0] - t[0]))));
        let p = InverseProblem::new(
            Arc::new(model),
            DVector::zeros(1),
            DMatrix::identity(1, 1),
            DVector::zeros(1),
            DMatrix::identity(1, 1),
        )
        .unwrap();
        let sys = build_augmented(&p, 1.0).unwrap();
        let ens = prior_ensemble(&p, 4, 0);
        assert!(matches!(eaki_step(&ens, &sys), Err(Error::NonFinite(_))));
    }

    #[test]
    fn small_ensembles_stay_in_their_span() {
        // J = 3 in 5 dimensions: particles can never leave m₀ + span(Z₀)
        let g = DMatrix::from_fn(4, 5, |i, j| 1.0 / (i + j + 1) as f64);
        let p = InverseProblem::new(
            Arc::new(LinearModel::new(g)),
            DVector::from_element(4, 1.0),
            DMatrix::identity(4, 4) * 0.01,
            DVector::zeros(5),
            DMatrix::identity(5, 5),
        )
        .unwrap();
        let sys = build_augmented(&p, 1.0).unwrap();
        let e0 = prior_ensemble(&p, 3, 5);
        let mut basis = e0.sqrt_factor();
        basis = basis.insert_column(0, 0.0);
        basis.set_column(0, &e0.mean());
        let q = basis.clone().qr().q();
        for step in [eaki_step, etki_step] {
            let mut e = e0.clone();
            for _ in 0..10 {
                e = step(&e, &sys).unwrap().ensemble;
                for c in e.particles().column_iter() {
                    let c = c.into_owned();
                    let resid = &c - &q * (q.transpose() * &c);
                    assert!(resid.norm() <= 1e-8 * c.norm().max(1.0));
                }
            }
        }
    }
}
