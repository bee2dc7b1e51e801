//! Run specifications: what to run, on which problem, against which
//! reference. A spec is embedded verbatim in every summary so that runs can
//! be repeated exactly.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::baselines::TransportVariant;
use crate::error::{Error, Result};
use crate::gaussian::GaussianBelief;
use crate::methods::Method;
use crate::problem::InverseProblem;
use crate::problems::{analytic_posterior, build_problem, darcy, ProblemKind, ProblemOptions};
use crate::strategies::{bifidelity_wrap, box_wrap, lowrank_wrap, Bound, BoxTransform, FidelityCounts};

use super::artifacts::Summary;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum MethodName {
    Uki1,
    Uki2,
    Eki,
    Eaki,
    Etki,
    Iukf1,
    Iukf2,
    Ienkf,
    Ieakf,
    Ietkf,
    Rwm,
    Pcn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampler {
    Rwm,
    Pcn,
}

/// Which engine a method name dispatches to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    MeanField(Method),
    Transport(TransportVariant),
    Chain(Sampler),
}

impl MethodName {
    pub fn family(self) -> Family {
        use MethodName::*;
        match self {
            Uki1 => Family::MeanField(Method::Uki1),
            Uki2 => Family::MeanField(Method::Uki2),
            Eki => Family::MeanField(Method::Eki),
            Eaki => Family::MeanField(Method::Eaki),
            Etki => Family::MeanField(Method::Etki),
            Iukf1 => Family::Transport(TransportVariant::Iukf1),
            Iukf2 => Family::Transport(TransportVariant::Iukf2),
            Ienkf => Family::Transport(TransportVariant::Ienkf),
            Ieakf => Family::Transport(TransportVariant::Ieakf),
            Ietkf => Family::Transport(TransportVariant::Ietkf),
            Rwm => Family::Chain(Sampler::Rwm),
            Pcn => Family::Chain(Sampler::Pcn),
        }
    }

    pub fn name(self) -> &'static str {
        use MethodName::*;
        match self {
            Uki1 => "uki1",
            Uki2 => "uki2",
            Eki => "eki",
            Eaki => "eaki",
            Etki => "etki",
            Iukf1 => "iukf1",
            Iukf2 => "iukf2",
            Ienkf => "ienkf",
            Ieakf => "ieakf",
            Ietkf => "ietkf",
            Rwm => "rwm",
            Pcn => "pcn",
        }
    }

    fn is_unscented(self) -> bool {
        matches!(self, MethodName::Uki1 | MethodName::Uki2)
    }
}

impl fmt::Display for MethodName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "path", rename_all = "lowercase")]
pub enum ReferenceSpec {
    None,
    Analytic,
    /// Summary of an earlier run (typically MCMC) whose final moments serve
    /// as the reference.
    Fixture(PathBuf),
}

impl FromStr for ReferenceSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "none" => ReferenceSpec::None,
            "analytic" => ReferenceSpec::Analytic,
            "" => return Err(Error::InvalidConfig("empty reference".into())),
            path => ReferenceSpec::Fixture(PathBuf::from(path)),
        })
    }
}

/// Uniform box constraint applied to every coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BoxSpec {
    Positive,
    Interval { min: f64, max: f64 },
}

impl FromStr for BoxSpec {
    type Err = Error;

    /// `positive` or `MIN:MAX`.
    fn from_str(s: &str) -> Result<Self> {
        if s == "positive" {
            return Ok(BoxSpec::Positive);
        }
        let bad = || Error::InvalidConfig(format!("box must be 'positive' or 'MIN:MAX', got '{s}'"));
        let (lo, hi) = s.split_once(':').ok_or_else(bad)?;
        let min: f64 = lo.trim().parse().map_err(|_| bad())?;
        let max: f64 = hi.trim().parse().map_err(|_| bad())?;
        if !(min.is_finite() && max.is_finite() && min < max) {
            return Err(bad());
        }
        Ok(BoxSpec::Interval { min, max })
    }
}

impl BoxSpec {
    fn bound(self) -> Bound {
        match self {
            BoxSpec::Positive => Bound::Positive,
            BoxSpec::Interval { min, max } => Bound::Interval { min, max },
        }
    }
}

pub const DEFAULT_TRANSPORT_DT: f64 = 1.0 / 30.0;
pub const DEFAULT_RWM_STEP: f64 = 1.0;
pub const DEFAULT_PCN_STEP: f64 = 0.04;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub method: MethodName,
    pub problem: ProblemKind,
    pub gamma: f64,
    pub iterations: usize,
    #[serde(rename = "J")]
    pub ensemble_size: usize,
    pub dt: Option<f64>,
    pub seed: u64,
    pub reference: ReferenceSpec,
    pub lowrank: Option<usize>,
    #[serde(rename = "box")]
    pub box_bounds: Option<BoxSpec>,
    pub bifidelity_grid: Option<usize>,
    pub grid: usize,
    pub modes: Option<usize>,
    pub data_seed: u64,
    pub samples: usize,
    pub burnin: Option<usize>,
    pub step: Option<f64>,
    /// Moment-correct the initial ensemble; `None` uses the method default
    /// (on for transport filters, off for the mean-field methods).
    pub exact_init: Option<bool>,
}

impl RunSpec {
    pub fn new(method: MethodName, problem: ProblemKind) -> Self {
        RunSpec {
            method,
            problem,
            gamma: 1.0,
            iterations: 30,
            ensemble_size: 10,
            dt: None,
            seed: 0,
            reference: ReferenceSpec::None,
            lowrank: None,
            box_bounds: None,
            bifidelity_grid: None,
            grid: crate::problems::DEFAULT_DARCY_GRID,
            modes: None,
            data_seed: 0,
            samples: 100_000,
            burnin: None,
            step: None,
            exact_init: None,
        }
    }

    pub fn family(&self) -> Family {
        self.method.family()
    }

    pub fn burn_in(&self) -> usize {
        self.burnin.unwrap_or(self.samples / 10)
    }

    pub fn step_size(&self) -> f64 {
        match (self.step, self.family()) {
            (Some(s), _) => s,
            (None, Family::Chain(Sampler::Pcn)) => DEFAULT_PCN_STEP,
            _ => DEFAULT_RWM_STEP,
        }
    }

    pub fn transport_dt(&self) -> f64 {
        self.dt.unwrap_or(DEFAULT_TRANSPORT_DT)
    }

    /// Identity of the inverse problem actually solved; artifacts can only
    /// be compared when these agree.
    pub fn problem_key(&self) -> String {
        let darcy = self.problem == ProblemKind::Darcy;
        format!(
            "{}|modes={:?}|grid={}|data_seed={}|lowrank={:?}|box={:?}",
            self.problem,
            self.modes,
            if darcy { self.grid } else { 0 },
            if darcy { self.data_seed } else { 0 },
            self.lowrank,
            self.box_bounds.map(|b| format!("{b:?}")),
        )
    }

    /// Compatibility checks that do not require building the problem.
    pub fn validate(&self) -> Result<()> {
        let invalid = |m: String| Err(Error::InvalidConfig(m));
        match self.family() {
            Family::MeanField(method) => {
                if !(self.gamma.is_finite() && self.gamma > 0.0) {
                    return Err(Error::InvalidGamma(self.gamma));
                }
                if self.iterations == 0 {
                    return invalid("iterations must be at least 1".into());
                }
                if method.is_ensemble() && self.ensemble_size < 2 {
                    return Err(Error::DegenerateEnsemble(self.ensemble_size));
                }
            }
            Family::Transport(variant) => {
                crate::baselines::TransportConfig::from_dt(self.transport_dt(), variant)?;
                if variant.is_ensemble() && self.ensemble_size < 2 {
                    return Err(Error::DegenerateEnsemble(self.ensemble_size));
                }
            }
            Family::Chain(sampler) => {
                if self.samples == 0 || self.burn_in() >= self.samples {
                    return invalid(format!("burn-in {} must be below the sample count {}", self.burn_in(), self.samples));
                }
                let s = self.step_size();
                let ok = match sampler {
                    Sampler::Rwm => s.is_finite() && s > 0.0,
                    Sampler::Pcn => s > 0.0 && s < 1.0,
                };
                if !ok {
                    return Err(Error::InvalidStep(s));
                }
            }
        }
        if self.dt.is_some() && !matches!(self.family(), Family::Transport(_)) {
            return invalid(format!("--dt only applies to transport filters, not {}", self.method));
        }
        if let Some(lo) = self.bifidelity_grid {
            if !self.method.is_unscented() {
                return Err(Error::Unsupported(format!(
                    "bi-fidelity evaluation is only defined for uki1/uki2, not {}",
                    self.method
                )));
            }
            if self.problem != ProblemKind::Darcy {
                return invalid("bi-fidelity grids only apply to the darcy problem".into());
            }
            if lo < darcy::MIN_GRID {
                return invalid(format!("bi-fidelity grid must be at least {}", darcy::MIN_GRID));
            }
        }
        if self.problem == ProblemKind::Darcy && self.grid < darcy::MIN_GRID {
            return invalid(format!("darcy grid must be at least {}", darcy::MIN_GRID));
        }
        if self.lowrank == Some(0) {
            return invalid("--lowrank must be at least 1".into());
        }
        if self.modes == Some(0) {
            return invalid("--modes must be at least 1".into());
        }
        Ok(())
    }

    fn options(&self) -> ProblemOptions {
        ProblemOptions {
            dim: self.modes,
            grid: self.grid,
            data_seed: self.data_seed,
        }
    }

    /// The problem in the coordinates the method works in, after applying
    /// the bi-fidelity, low-rank and box wrappers in that order.
    pub fn build(&self) -> Result<Prepared> {
        self.validate()?;
        let opts = self.options();
        let (mut problem, counts) = match self.bifidelity_grid {
            Some(lo_grid) => {
                let instance = darcy::darcy_instance(self.grid, darcy::TRUTH_MODES, self.data_seed)?;
                let n = self.modes.unwrap_or(crate::problems::DEFAULT_DARCY_MODES);
                let (bi, counts) = bifidelity_wrap(&instance.problem(self.grid, n)?, &instance.problem(lo_grid, n)?)?;
                (bi, Some(counts))
            }
            None => (build_problem(self.problem, &opts)?, None),
        };
        if let Some(r) = self.lowrank {
            problem = lowrank_wrap(&problem, Some(r))?.0;
        }
        if let Some(b) = self.box_bounds {
            problem = box_transformed(&problem, b)?;
        }
        let reference = match &self.reference {
            ReferenceSpec::None => None,
            ReferenceSpec::Analytic => Some(analytic_posterior(&problem)?),
            ReferenceSpec::Fixture(path) => {
                let r = load_fixture(path)?;
                if r.dim() != problem.n_params() {
                    return Err(Error::ShapeMismatch(format!(
                        "reference fixture has dimension {}, problem has {}",
                        r.dim(),
                        problem.n_params()
                    )));
                }
                Some(r)
            }
        };
        Ok(Prepared {
            problem,
            counts,
            reference,
        })
    }
}

/// A built problem plus what the run needs alongside it.
pub struct Prepared {
    pub problem: InverseProblem,
    pub counts: Option<Arc<FidelityCounts>>,
    pub reference: Option<GaussianBelief>,
}

/// Box-wrap with the prior carried over by linearization at the prior mean:
/// `θ̃ ~ N(φ⁻¹(r₀), D Σ₀ D)` with `D = diag(dφ⁻¹/dθ (r₀))`.
fn box_transformed(problem: &InverseProblem, spec: BoxSpec) -> Result<InverseProblem> {
    let n = problem.n_params();
    let bound = spec.bound();
    let transform = BoxTransform::new(vec![bound; n])?;
    let r0 = problem.prior_mean();
    if !transform.contains(r0) {
        return Err(Error::InvalidConfig(format!(
            "prior mean {:?} lies outside the box {spec:?}",
            r0.as_slice()
        )));
    }
    let jac = DVector::from_iterator(
        n,
        r0.iter().map(|&t| match bound {
            Bound::Free => 1.0,
            Bound::Positive => 1.0 / t,
            Bound::Interval { min, max } => (max - min) / ((t - min) * (max - t)),
        }),
    );
    let d = DMatrix::from_diagonal(&jac);
    let prior_cov = crate::linalg::symmetrize(&(&d * problem.prior_cov() * &d));
    let reparam = problem.with_prior(transform.inverse(r0), prior_cov)?;
    box_wrap(&reparam, &transform)
}

/// Final moments of a summary file, or of `summary.json` inside a run
/// directory.
pub fn load_fixture(path: &Path) -> Result<GaussianBelief> {
    Summary::load(path)?.final_belief()
}
