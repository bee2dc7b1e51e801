//! Benchmark inverse problems.

pub mod darcy;
pub mod elliptic;
pub mod hilbert;
pub mod kl;
pub mod linear;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{gaussian_posterior_affine, GaussianBelief};
use crate::problem::InverseProblem;

pub use darcy::{darcy_instance, darcy_solve, DarcyInstance, DarcyModel};
pub use elliptic::{elliptic_problem, EllipticVariant};
pub use hilbert::hilbert_problem;
pub use kl::{kl_field_eval, KLField};
pub use linear::{linear_problem, LinearVariant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemKind {
    LinearOver,
    LinearUnder,
    EllipticWell,
    EllipticUnder,
    Hilbert,
    Darcy,
}

impl ProblemKind {
    pub const ALL: [ProblemKind; 6] = [
        ProblemKind::LinearOver,
        ProblemKind::LinearUnder,
        ProblemKind::EllipticWell,
        ProblemKind::EllipticUnder,
        ProblemKind::Hilbert,
        ProblemKind::Darcy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ProblemKind::LinearOver => "linear-over",
            ProblemKind::LinearUnder => "linear-under",
            ProblemKind::EllipticWell => "elliptic-well",
            ProblemKind::EllipticUnder => "elliptic-under",
            ProblemKind::Hilbert => "hilbert",
            ProblemKind::Darcy => "darcy",
        }
    }

    /// Whether the forward map is affine, so the posterior is known exactly.
    pub fn is_linear(self) -> bool {
        matches!(self, ProblemKind::LinearOver | ProblemKind::LinearUnder | ProblemKind::Hilbert)
    }
}

impl fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ProblemKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ProblemKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown problem '{s}'")))
    }
}

/// Size knobs for the scalable problems.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemOptions {
    /// Hilbert dimension or number of inverted Darcy modes.
    pub dim: Option<usize>,
    /// Darcy mesh resolution.
    pub grid: usize,
    /// Seed for the synthetic Darcy truth and noise.
    pub data_seed: u64,
}

pub const DEFAULT_HILBERT_DIM: usize = 100;
pub const DEFAULT_DARCY_MODES: usize = 32;
pub const DEFAULT_DARCY_GRID: usize = 32;

impl Default for ProblemOptions {
    fn default() -> Self {
        ProblemOptions {
            dim: None,
            grid: DEFAULT_DARCY_GRID,
            data_seed: 0,
        }
    }
}

pub fn build_problem(kind: ProblemKind, opts: &ProblemOptions) -> Result<InverseProblem> {
    Ok(match kind {
        ProblemKind::LinearOver => linear_problem(LinearVariant::Over),
        ProblemKind::LinearUnder => linear_problem(LinearVariant::Under),
        ProblemKind::EllipticWell => elliptic_problem(EllipticVariant::Well),
        ProblemKind::EllipticUnder => elliptic_problem(EllipticVariant::Under),
        ProblemKind::Hilbert => hilbert_problem(opts.dim.unwrap_or(DEFAULT_HILBERT_DIM))?,
        ProblemKind::Darcy => darcy_instance(opts.grid, darcy::TRUTH_MODES, opts.data_seed)?
            .problem(opts.grid, opts.dim.unwrap_or(DEFAULT_DARCY_MODES))?,
    })
}

/// Closed-form posterior when the forward map is affine.
pub fn analytic_posterior(problem: &InverseProblem) -> Result<GaussianBelief> {
    let (g, b) = problem
        .forward()
        .affine_form()
        .ok_or_else(|| Error::Unsupported("analytic posterior requires an affine forward map".into()))?;
    gaussian_posterior_affine(&g, &b, problem)
}
