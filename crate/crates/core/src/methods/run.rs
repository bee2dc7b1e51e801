//! Iteration driver: initialization at the prior, stepping, per-iteration
//! diagnostics and divergence detection.

use std::time::Instant;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::gaussian_init_correction;
use crate::error::{Error, Result};
use crate::gaussian::{Ensemble, GaussianBelief};
use crate::linalg;
use crate::meanfield::{build_augmented, AugmentedSystem, DEFAULT_GAMMA};
use crate::problem::InverseProblem;

use super::ensemble::{eaki_step, eki_step, etki_step};
use super::sigma::UkiVariant;
use super::uki::uki_step;

/// A run halts once `‖m_n‖` exceeds this multiple of `max(‖m₀‖, 1)`.
pub const DIVERGENCE_FACTOR: f64 = 1e8;

/// The mean-field posterior approximators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    Uki1,
    Uki2,
    Eki,
    Eaki,
    Etki,
}

impl Method {
    pub fn uki_variant(self) -> Option<UkiVariant> {
        match self {
            Method::Uki1 => Some(UkiVariant::Uki1),
            Method::Uki2 => Some(UkiVariant::Uki2),
            _ => None,
        }
    }

    pub fn is_ensemble(self) -> bool {
        self.uki_variant().is_none()
    }

    /// Forward evaluations per iteration.
    pub fn evaluations_per_step(self, n_params: usize, ensemble_size: usize) -> usize {
        match self.uki_variant() {
            Some(v) => v.n_points(n_params),
            None => ensemble_size,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub gamma: f64,
    pub iterations: usize,
    /// Particle count for the ensemble methods; ignored by UKI.
    pub ensemble_size: usize,
    pub seed: u64,
    /// Shift and reshape the initial prior draws so their empirical moments
    /// equal the prior exactly.
    pub exact_init: bool,
    /// When present, every record carries errors against this belief.
    pub reference: Option<GaussianBelief>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            gamma: DEFAULT_GAMMA,
            iterations: 30,
            ensemble_size: 10,
            seed: 0,
            exact_init: false,
            reference: None,
        }
    }
}

/// Diagnostics for one completed iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    /// `‖m_n − m_ref‖ / ‖m_ref‖`.
    pub mean_rel_err: Option<f64>,
    /// `‖C_n − C_ref‖_F / ‖C_ref‖_F`.
    pub cov_rel_err: Option<f64>,
    /// `½‖Σ_η^{-1/2}(y − ŷ_n)‖² + ½‖Σ₀^{-1/2}(m_n − r₀)‖²`.
    pub opt_err: f64,
    /// Cumulative forward evaluations.
    pub fwd_evals: usize,
    pub wall_ms: f64,
}

/// How the current distribution is represented.
#[derive(Debug, Clone, PartialEq)]
pub enum Representation {
    Gaussian(GaussianBelief),
    Ensemble(Ensemble),
}

impl Representation {
    pub fn moments(&self) -> GaussianBelief {
        match self {
            Representation::Gaussian(b) => b.clone(),
            Representation::Ensemble(e) => e.moments(),
        }
    }

    pub fn ensemble(&self) -> Option<&Ensemble> {
        match self {
            Representation::Ensemble(e) => Some(e),
            Representation::Gaussian(_) => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MethodState {
    pub repr: Representation,
    pub iteration: usize,
    pub history: Vec<IterationRecord>,
    pub fwd_evals: usize,
}

impl MethodState {
    pub fn new(repr: Representation) -> Self {
        MethodState {
            repr,
            iteration: 0,
            history: Vec::new(),
            fwd_evals: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    pub iteration: usize,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub state: MethodState,
    pub divergence: Option<Divergence>,
}

impl RunOutcome {
    pub fn history(&self) -> &[IterationRecord] {
        &self.state.history
    }

    pub fn final_moments(&self) -> GaussianBelief {
        self.state.repr.moments()
    }
}

/// Output of one step of any iterative method.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub repr: Representation,
    /// Predicted observation of `G` proper (augmentation stripped).
    pub predicted_data: DVector<f64>,
    pub evaluations: usize,
}

/// One iteration of an inversion method.
pub trait Stepper {
    fn problem(&self) -> &InverseProblem;

    fn step(&mut self, current: &Representation) -> Result<StepOutput>;
}

/// Steps a [`Stepper`] while keeping the method state and its history.
pub struct Driver<S> {
    stepper: S,
    state: MethodState,
    reference: Option<GaussianBelief>,
    initial_norm: f64,
    divergence: Option<Divergence>,
}

impl<S: Stepper> Driver<S> {
    pub fn new(stepper: S, initial: Representation, reference: Option<GaussianBelief>) -> Self {
        let initial_norm = initial.moments().mean.norm();
        Driver {
            stepper,
            state: MethodState::new(initial),
            reference,
            initial_norm,
            divergence: None,
        }
    }

    pub fn state(&self) -> &MethodState {
        &self.state
    }

    pub fn stepper(&self) -> &S {
        &self.stepper
    }

    pub fn divergence(&self) -> Option<&Divergence> {
        self.divergence.as_ref()
    }

    /// Advance one iteration. Returns `Ok(false)` once divergence has been
    /// detected; the state then holds the last finite iterate.
    pub fn step(&mut self) -> Result<bool> {
        if self.divergence.is_some() {
            return Ok(false);
        }
        let start = Instant::now();
        let next = match self.stepper.step(&self.state.repr) {
            Ok(out) => out,
            Err(Error::NonFinite(what)) => {
                self.divergence = Some(Divergence {
                    iteration: self.state.iteration + 1,
                    reason: format!("non-finite values in {what}"),
                });
                return Ok(false);
            }
            Err(e) => return Err(e),
        };
        let moments = next.repr.moments();
        let finite = moments.mean.iter().chain(moments.covariance.iter()).all(|v| v.is_finite());
        let bound = DIVERGENCE_FACTOR * self.initial_norm.max(1.0);
        if !finite || moments.mean.norm() > bound {
            self.divergence = Some(Divergence {
                iteration: self.state.iteration + 1,
                reason: if finite {
                    format!("mean norm {:e} exceeds {bound:e}", moments.mean.norm())
                } else {
                    "non-finite state".to_string()
                },
            });
            return Ok(false);
        }
        let wall_ms = start.elapsed().as_secs_f64() * 1e3;

        let problem = self.stepper.problem();
        let opt_err = problem.data_misfit_of(&next.predicted_data) + problem.prior_misfit(&moments.mean);
        let (mean_rel_err, cov_rel_err) = match &self.reference {
            Some(r) => (
                Some(linalg::rel_error(&moments.mean, &r.mean)),
                Some(linalg::rel_error(&moments.covariance, &r.covariance)),
            ),
            None => (None, None),
        };
        self.state.iteration += 1;
        self.state.fwd_evals += next.evaluations;
        self.state.history.push(IterationRecord {
            iter: self.state.iteration,
            mean_rel_err,
            cov_rel_err,
            opt_err,
            fwd_evals: self.state.fwd_evals,
            wall_ms,
        });
        self.state.repr = next.repr;
        Ok(true)
    }

    pub fn run(&mut self, iterations: usize) -> Result<()> {
        for _ in 0..iterations {
            if !self.step()? {
                break;
            }
        }
        Ok(())
    }

    pub fn into_outcome(self) -> RunOutcome {
        RunOutcome {
            state: self.state,
            divergence: self.divergence,
        }
    }
}

/// Mean-field stepper for one of the four method families.
pub struct MeanFieldStepper {
    method: Method,
    system: AugmentedSystem,
    rng: ChaCha8Rng,
}

impl MeanFieldStepper {
    pub fn new(method: Method, system: AugmentedSystem, rng: ChaCha8Rng) -> Self {
        MeanFieldStepper { method, system, rng }
    }

    pub fn system(&self) -> &AugmentedSystem {
        &self.system
    }
}

fn strip_augmentation(predicted: &DVector<f64>, n_obs: usize) -> DVector<f64> {
    predicted.rows(0, n_obs).into_owned()
}

impl Stepper for MeanFieldStepper {
    fn problem(&self) -> &InverseProblem {
        self.system.problem()
    }

    fn step(&mut self, current: &Representation) -> Result<StepOutput> {
        let n_obs = self.system.problem().n_obs();
        match (self.method, current) {
            (Method::Uki1 | Method::Uki2, Representation::Gaussian(b)) => {
                let variant = self.method.uki_variant().expect("UKI method");
                let out = uki_step(b, &self.system, variant)?;
                Ok(StepOutput {
                    repr: Representation::Gaussian(out.belief),
                    predicted_data: strip_augmentation(&out.predicted, n_obs),
                    evaluations: out.evaluations,
                })
            }
            (Method::Eki | Method::Eaki | Method::Etki, Representation::Ensemble(e)) => {
                let out = match self.method {
                    Method::Eki => eki_step(e, &self.system, &mut self.rng)?,
                    Method::Eaki => eaki_step(e, &self.system)?,
                    _ => etki_step(e, &self.system)?,
                };
                Ok(StepOutput {
                    repr: Representation::Ensemble(out.ensemble),
                    predicted_data: strip_augmentation(&out.predicted, n_obs),
                    evaluations: out.evaluations,
                })
            }
            _ => Err(Error::InvalidConfig(format!(
                "{:?} cannot step this state representation",
                self.method
            ))),
        }
    }
}

/// Starting point at the prior: the prior Gaussian for UKI, `J` i.i.d. prior
/// draws (optionally moment-corrected) for the ensemble methods.
pub fn initial_representation<R: rand::Rng + ?Sized>(
    problem: &InverseProblem,
    ensemble: Option<(usize, bool)>,
    rng: &mut R,
) -> Result<Representation> {
    let prior = GaussianBelief::new(problem.prior_mean().clone(), problem.prior_cov().clone())?;
    match ensemble {
        None => Ok(Representation::Gaussian(prior)),
        Some((j, exact)) => {
            if j < 2 {
                return Err(Error::DegenerateEnsemble(j));
            }
            let draws = prior.sample(j, rng)?;
            if exact {
                Ok(Representation::Ensemble(gaussian_init_correction(&draws, &prior)?))
            } else {
                Ok(Representation::Ensemble(draws))
            }
        }
    }
}

fn validate(method: Method, problem: &InverseProblem, config: &RunConfig) -> Result<()> {
    if method.is_ensemble() && config.ensemble_size < 2 {
        return Err(Error::DegenerateEnsemble(config.ensemble_size));
    }
    if method.is_ensemble() && problem.forward().is_multi_fidelity() {
        return Err(Error::Unsupported(
            "bi-fidelity evaluation is only defined for the unscented methods".into(),
        ));
    }
    if let Some(r) = &config.reference {
        if r.dim() != problem.n_params() {
            return Err(Error::ShapeMismatch("reference dimension differs from the problem".into()));
        }
    }
    Ok(())
}

/// Build a driver positioned at the prior without taking any step.
pub fn mean_field_driver(method: Method, problem: &InverseProblem, config: &RunConfig) -> Result<Driver<MeanFieldStepper>> {
    validate(method, problem, config)?;
    let system = build_augmented(problem, config.gamma)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let init = initial_representation(
        problem,
        method.is_ensemble().then_some((config.ensemble_size, config.exact_init)),
        &mut rng,
    )?;
    Ok(Driver::new(MeanFieldStepper::new(method, system, rng), init, config.reference.clone()))
}

/// Run a mean-field method for `config.iterations` steps.
pub fn run(method: Method, problem: &InverseProblem, config: &RunConfig) -> Result<RunOutcome> {
    let mut driver = mean_field_driver(method, problem, config)?;
    driver.run(config.iterations)?;
    Ok(driver.into_outcome())
}
