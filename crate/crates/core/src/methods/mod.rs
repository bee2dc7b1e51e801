//! The mean-field posterior approximators: UKI-1/UKI-2 (sigma-point
//! quadrature), EKI (perturbed observations), EAKI (adjustment square root)
//! and ETKI (transform square root).

pub mod ensemble;
pub mod run;
pub mod sigma;
pub mod uki;

pub use ensemble::{eaki_step, eki_step, etki_step, EnsembleAnalysis};
pub use run::{
    mean_field_driver, run, Divergence, Driver, IterationRecord, MeanFieldStepper, Method, MethodState,
    Representation, RunConfig, RunOutcome, StepOutput, Stepper,
};
pub use sigma::{sigma_points, sigma_points_uki1, sigma_points_uki2, SigmaPoints, UkiVariant};
pub use uki::{uki_step, UkiAnalysis};
