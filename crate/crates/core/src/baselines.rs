//! Iterative (transport) Kalman filters that deform the prior into the
//! posterior over `N = 1/Δt` steps, each conditioning on `y` with noise
//! `Δt⁻¹Σ_η` and no covariance inflation.
//!
//! For a linear forward map started exactly at the prior, the moments after
//! `N` steps equal the posterior moments. The ensemble variants need an
//! initial ensemble with exact prior moments for that to carry over, which is
//! what [`gaussian_init_correction`] provides.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{Ensemble, GaussianBelief};
use crate::kalman::Observation;
use crate::linalg::{self, SortedSvd};
use crate::methods::ensemble::{eaki_analyze, eki_analyze, etki_analyze, RANK_CUTOFF};
use crate::methods::run::{initial_representation, Driver, Representation, RunOutcome, StepOutput, Stepper};
use crate::methods::sigma::UkiVariant;
use crate::methods::uki;
use crate::problem::{Fidelity, InverseProblem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TransportVariant {
    Iukf1,
    Iukf2,
    Ienkf,
    Ieakf,
    Ietkf,
}

impl TransportVariant {
    pub fn is_ensemble(self) -> bool {
        !matches!(self, TransportVariant::Iukf1 | TransportVariant::Iukf2)
    }
}

#[derive(Debug, Clone)]
pub struct TransportConfig {
    /// Number of steps `N`; the step size is `Δt = 1/N`.
    pub steps: usize,
    pub variant: TransportVariant,
    pub ensemble_size: usize,
    pub exact_init: bool,
}

impl TransportConfig {
    pub fn new(steps: usize, variant: TransportVariant) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidConfig("transport needs at least one step".into()));
        }
        Ok(TransportConfig {
            steps,
            variant,
            ensemble_size: 10,
            exact_init: true,
        })
    }

    /// From a step size; `1/dt` must be an integer to within `1e-4` relative.
    pub fn from_dt(dt: f64, variant: TransportVariant) -> Result<Self> {
        if !(dt > 0.0 && dt <= 1.0) {
            return Err(Error::InvalidConfig(format!("dt must lie in (0, 1], got {dt}")));
        }
        let n = (1.0 / dt).round();
        if (n * dt - 1.0).abs() > 1e-4 {
            return Err(Error::InvalidConfig(format!("1/dt = {} is not an integer", 1.0 / dt)));
        }
        TransportConfig::new(n as usize, variant)
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.steps as f64
    }
}

/// Observation of `G(θ)` against `y` with noise `Δt⁻¹Σ_η`.
#[derive(Debug, Clone)]
pub struct TransportSystem {
    problem: InverseProblem,
    dt: f64,
    noise_cov: DMatrix<f64>,
    noise_chol: DMatrix<f64>,
}

impl TransportSystem {
    pub fn new(problem: &InverseProblem, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt <= 1.0) {
            return Err(Error::InvalidConfig(format!("dt must lie in (0, 1], got {dt}")));
        }
        Ok(TransportSystem {
            problem: problem.clone(),
            dt,
            noise_cov: problem.noise_cov() / dt,
            noise_chol: problem.noise_chol() / dt.sqrt(),
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn problem(&self) -> &InverseProblem {
        &self.problem
    }
}

impl Observation for TransportSystem {
    fn n_params(&self) -> usize {
        self.problem.n_params()
    }

    fn output_dim(&self) -> usize {
        self.problem.n_obs()
    }

    fn datum(&self) -> &DVector<f64> {
        self.problem.y()
    }

    fn noise_cov(&self) -> &DMatrix<f64> {
        &self.noise_cov
    }

    fn noise_chol(&self) -> &DMatrix<f64> {
        &self.noise_chol
    }

    fn observe(&self, theta: &DVector<f64>, fidelity: Fidelity) -> Result<DVector<f64>> {
        self.problem.evaluate_with(theta, fidelity)
    }

    fn data_dim(&self) -> usize {
        self.problem.n_obs()
    }

    fn is_multi_fidelity(&self) -> bool {
        self.problem.forward().is_multi_fidelity()
    }
}

/// One transport step: the analysis machinery of the mean-field methods
/// applied to `(y, Δt⁻¹Σ_η)` without prediction inflation.
pub fn transport_step(
    current: &Representation,
    system: &TransportSystem,
    variant: TransportVariant,
    rng: &mut ChaCha8Rng,
) -> Result<StepOutput> {
    match (variant, current) {
        (TransportVariant::Iukf1 | TransportVariant::Iukf2, Representation::Gaussian(b)) => {
            let v = if variant == TransportVariant::Iukf1 {
                UkiVariant::Uki1
            } else {
                UkiVariant::Uki2
            };
            let out = uki::analyze(b, system, v)?;
            Ok(StepOutput {
                repr: Representation::Gaussian(out.belief),
                predicted_data: out.predicted,
                evaluations: out.evaluations,
            })
        }
        (_, Representation::Ensemble(e)) if variant.is_ensemble() => {
            let out = match variant {
                TransportVariant::Ienkf => eki_analyze(e, system, rng)?,
                TransportVariant::Ieakf => eaki_analyze(e, system)?,
                _ => etki_analyze(e, system)?,
            };
            Ok(StepOutput {
                repr: Representation::Ensemble(out.ensemble),
                predicted_data: out.predicted,
                evaluations: out.evaluations,
            })
        }
        _ => Err(Error::InvalidConfig(format!("{variant:?} cannot step this state representation"))),
    }
}

pub struct TransportStepper {
    variant: TransportVariant,
    system: TransportSystem,
    rng: ChaCha8Rng,
}

impl Stepper for TransportStepper {
    fn problem(&self) -> &InverseProblem {
        self.system.problem()
    }

    fn step(&mut self, current: &Representation) -> Result<StepOutput> {
        transport_step(current, &self.system, self.variant, &mut self.rng)
    }
}

/// Driver positioned at the prior (or at `initial` when given).
pub fn transport_driver(
    problem: &InverseProblem,
    config: &TransportConfig,
    seed: u64,
    initial: Option<Representation>,
    reference: Option<GaussianBelief>,
) -> Result<Driver<TransportStepper>> {
    if config.variant.is_ensemble() && problem.forward().is_multi_fidelity() {
        return Err(Error::Unsupported(
            "bi-fidelity evaluation is only defined for the unscented methods".into(),
        ));
    }
    let system = TransportSystem::new(problem, config.dt())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = match initial {
        Some(i) => i,
        None => initial_representation(
            problem,
            config
                .variant
                .is_ensemble()
                .then_some((config.ensemble_size, config.exact_init)),
            &mut rng,
        )?,
    };
    let stepper = TransportStepper {
        variant: config.variant,
        system,
        rng,
    };
    Ok(Driver::new(stepper, init, reference))
}

/// Run exactly `N` transport steps from the prior.
pub fn run_transport(
    problem: &InverseProblem,
    config: &TransportConfig,
    seed: u64,
    reference: Option<GaussianBelief>,
) -> Result<RunOutcome> {
    let mut driver = transport_driver(problem, config, seed, None, reference)?;
    driver.run(config.steps)?;
    Ok(driver.into_outcome())
}

/// Reshape prior draws so their empirical mean and covariance equal the
/// target exactly.
///
/// With `Θ'` the `J × N_θ` matrix of centred draws (`Θ' = U₁S₁V₁ᵀ`) and
/// `(J−1)C = U₂S₂U₂ᵀ`, the corrected rows are `Θ'X + m` with
/// `X = V₁S₁⁻¹S₂^{1/2}U₂ᵀ`, giving `(Θ'X)ᵀ(Θ'X) = (J−1)C` and zero column sums.
pub fn gaussian_init_correction(samples: &Ensemble, target: &GaussianBelief) -> Result<Ensemble> {
    let n = samples.dim();
    if target.dim() != n {
        return Err(Error::ShapeMismatch("target dimension differs from the ensemble".into()));
    }
    let j = samples.size();
    if j < n + 1 {
        return Err(Error::RankDeficient { rank: j.saturating_sub(1), required: n });
    }
    let centred = samples.deviations().transpose();
    let svd1 = SortedSvd::new(&centred);
    let rank = svd1.rank(RANK_CUTOFF);
    if rank < n {
        return Err(Error::RankDeficient { rank, required: n });
    }
    let v1 = svd1.v_t.rows(0, n).transpose();
    let s1_inv = DMatrix::from_diagonal(&svd1.singular_values.rows(0, n).map(|s| 1.0 / s));
    let (s2, u2) = linalg::sym_eigen_desc(&(&target.covariance * (j - 1) as f64));
    let s2_sqrt = DMatrix::from_diagonal(&s2.map(|v| v.max(0.0).sqrt()));
    let x = v1 * s1_inv * s2_sqrt * u2.transpose();
    let mut particles = (centred * x).transpose();
    for mut col in particles.column_iter_mut() {
        col += &target.mean;
    }
    Ensemble::new(particles)
}
