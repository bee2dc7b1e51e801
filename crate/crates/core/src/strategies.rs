//! Problem wrappers: low-rank prior reparameterization, box constraints and
//! bi-fidelity dispatch. Each returns an ordinary [`InverseProblem`], so any
//! method runs on the wrapped problem unchanged.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::GaussianBelief;
use crate::linalg;
use crate::problem::{Fidelity, ForwardModel, InverseProblem};

/// Modes with prior eigenvalue below this fraction of the largest are
/// discarded when no explicit rank is requested.
pub const LOWRANK_REL_CUTOFF: f64 = 1e-12;

/// `θ = r₀ + U τ` with `U` the dominant eigenvectors of `Σ₀`.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankMap {
    pub basis: DMatrix<f64>,
    pub singular_values: DVector<f64>,
    pub anchor: DVector<f64>,
}

impl LowRankMap {
    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }

    pub fn lift(&self, tau: &DVector<f64>) -> DVector<f64> {
        &self.anchor + &self.basis * tau
    }

    pub fn restrict(&self, theta: &DVector<f64>) -> DVector<f64> {
        self.basis.tr_mul(&(theta - &self.anchor))
    }

    /// Push a Gaussian over `τ` forward to parameter space.
    pub fn lift_belief(&self, belief: &GaussianBelief) -> GaussianBelief {
        GaussianBelief {
            mean: self.lift(&belief.mean),
            covariance: linalg::symmetrize(&(&self.basis * &belief.covariance * self.basis.transpose())),
        }
    }
}

struct LowRankModel {
    inner: Arc<dyn ForwardModel>,
    map: LowRankMap,
}

impl ForwardModel for LowRankModel {
    fn input_dim(&self) -> usize {
        self.map.rank()
    }

    fn output_dim(&self) -> usize {
        self.inner.output_dim()
    }

    fn evaluate(&self, tau: &DVector<f64>) -> Result<DVector<f64>> {
        self.inner.evaluate(&self.map.lift(tau))
    }

    fn evaluate_with(&self, tau: &DVector<f64>, fidelity: Fidelity) -> Result<DVector<f64>> {
        self.inner.evaluate_with(&self.map.lift(tau), fidelity)
    }

    fn is_multi_fidelity(&self) -> bool {
        self.inner.is_multi_fidelity()
    }

    fn affine_form(&self) -> Option<(DMatrix<f64>, DVector<f64>)> {
        let (g, b) = self.inner.affine_form()?;
        Some((&g * &self.map.basis, &g * &self.map.anchor + b))
    }
}

/// Reparameterize over the leading `rank` prior modes (all numerically
/// nonzero modes when `None`). The new prior is `N(0, diag(D₀))`.
pub fn lowrank_wrap(problem: &InverseProblem, rank: Option<usize>) -> Result<(InverseProblem, LowRankMap)> {
    let (values, vectors) = linalg::sym_eigen_desc(problem.prior_cov());
    let top = values[0];
    let available = values.iter().take_while(|&&v| v >= LOWRANK_REL_CUTOFF * top && v > 0.0).count();
    let r = rank.unwrap_or(available);
    if r == 0 {
        return Err(Error::InvalidConfig("low-rank dimension must be at least 1".into()));
    }
    if r > available {
        return Err(Error::RankExceeded {
            requested: r,
            available,
        });
    }
    let map = LowRankMap {
        basis: vectors.columns(0, r).into_owned(),
        singular_values: values.rows(0, r).into_owned(),
        anchor: problem.prior_mean().clone(),
    };
    let wrapped = InverseProblem::new(
        Arc::new(LowRankModel {
            inner: problem.forward().clone(),
            map: map.clone(),
        }),
        problem.y().clone(),
        problem.noise_cov().clone(),
        DVector::zeros(r),
        DMatrix::from_diagonal(&map.singular_values),
    )?;
    Ok((wrapped, map))
}

/// Constraint for one coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Bound {
    Free,
    /// `θ = exp(θ̃)`.
    Positive,
    /// `θ = min + (max − min)/(1 + exp(θ̃))`; note `θ̃ → +∞` gives `min`.
    Interval { min: f64, max: f64 },
}

impl Bound {
    pub fn forward(self, t: f64) -> f64 {
        match self {
            Bound::Free => t,
            Bound::Positive => t.exp().clamp(f64::MIN_POSITIVE, f64::MAX),
            Bound::Interval { min, max } => {
                let v = min + (max - min) / (1.0 + t.exp());
                v.clamp(min.next_up(), max.next_down())
            }
        }
    }

    pub fn inverse(self, theta: f64) -> f64 {
        match self {
            Bound::Free => theta,
            Bound::Positive => theta.ln(),
            Bound::Interval { min, max } => ((max - theta) / (theta - min)).ln(),
        }
    }

    pub fn contains(self, theta: f64) -> bool {
        match self {
            Bound::Free => theta.is_finite(),
            Bound::Positive => theta > 0.0 && theta.is_finite(),
            Bound::Interval { min, max } => theta > min && theta < max,
        }
    }
}

/// Element-wise map `φ` from unconstrained to constrained coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxTransform {
    bounds: Vec<Bound>,
}

impl BoxTransform {
    pub fn new(bounds: Vec<Bound>) -> Result<Self> {
        for b in &bounds {
            if let Bound::Interval { min, max } = *b {
                if !(min.is_finite() && max.is_finite() && min < max) {
                    return Err(Error::InvalidConfig(format!("invalid interval ({min}, {max})")));
                }
            }
        }
        Ok(BoxTransform { bounds })
    }

    pub fn positive(n: usize) -> Self {
        BoxTransform {
            bounds: vec![Bound::Positive; n],
        }
    }

    pub fn interval(min: &[f64], max: &[f64]) -> Result<Self> {
        if min.len() != max.len() {
            return Err(Error::ShapeMismatch("interval bounds differ in length".into()));
        }
        BoxTransform::new(min.iter().zip(max).map(|(&min, &max)| Bound::Interval { min, max }).collect())
    }

    pub fn bounds(&self) -> &[Bound] {
        &self.bounds
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn forward(&self, t: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(t.len(), t.iter().zip(&self.bounds).map(|(&v, b)| b.forward(v)))
    }

    pub fn inverse(&self, theta: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(theta.len(), theta.iter().zip(&self.bounds).map(|(&v, b)| b.inverse(v)))
    }

    pub fn contains(&self, theta: &DVector<f64>) -> bool {
        theta.iter().zip(&self.bounds).all(|(&v, b)| b.contains(v))
    }
}

struct BoxModel {
    inner: Arc<dyn ForwardModel>,
    transform: BoxTransform,
}

impl ForwardModel for BoxModel {
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }

    fn output_dim(&self) -> usize {
        self.inner.output_dim()
    }

    fn evaluate(&self, t: &DVector<f64>) -> Result<DVector<f64>> {
        self.inner.evaluate(&self.transform.forward(t))
    }

    fn evaluate_with(&self, t: &DVector<f64>, fidelity: Fidelity) -> Result<DVector<f64>> {
        self.inner.evaluate_with(&self.transform.forward(t), fidelity)
    }

    fn is_multi_fidelity(&self) -> bool {
        self.inner.is_multi_fidelity()
    }
}

/// Compose the forward map with `φ`. The prior of `problem` is kept and is
/// read as a prior over the unconstrained coordinates; use
/// [`InverseProblem::with_prior`] beforehand to choose one.
pub fn box_wrap(problem: &InverseProblem, transform: &BoxTransform) -> Result<InverseProblem> {
    if transform.dim() != problem.n_params() {
        return Err(Error::ShapeMismatch(format!(
            "box transform has {} coordinates, problem has {}",
            transform.dim(),
            problem.n_params()
        )));
    }
    InverseProblem::new(
        Arc::new(BoxModel {
            inner: problem.forward().clone(),
            transform: transform.clone(),
        }),
        problem.y().clone(),
        problem.noise_cov().clone(),
        problem.prior_mean().clone(),
        problem.prior_cov().clone(),
    )
}

/// Forward evaluations issued to each fidelity.
#[derive(Debug, Default)]
pub struct FidelityCounts {
    high: AtomicUsize,
    low: AtomicUsize,
}

impl FidelityCounts {
    pub fn high(&self) -> usize {
        self.high.load(Ordering::Relaxed)
    }

    pub fn low(&self) -> usize {
        self.low.load(Ordering::Relaxed)
    }
}

struct BiFidelityModel {
    high: Arc<dyn ForwardModel>,
    low: Arc<dyn ForwardModel>,
    counts: Arc<FidelityCounts>,
}

impl ForwardModel for BiFidelityModel {
    fn input_dim(&self) -> usize {
        self.high.input_dim()
    }

    fn output_dim(&self) -> usize {
        self.high.output_dim()
    }

    fn evaluate(&self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        self.evaluate_with(theta, Fidelity::High)
    }

    fn evaluate_with(&self, theta: &DVector<f64>, fidelity: Fidelity) -> Result<DVector<f64>> {
        match fidelity {
            Fidelity::High => {
                self.counts.high.fetch_add(1, Ordering::Relaxed);
                self.high.evaluate(theta)
            }
            Fidelity::Low => {
                self.counts.low.fetch_add(1, Ordering::Relaxed);
                self.low.evaluate(theta)
            }
        }
    }

    fn is_multi_fidelity(&self) -> bool {
        true
    }
}

/// Route high-fidelity requests (the UKI centre point) to `high` and all
/// others to `low`. Data, noise and prior are taken from `high`.
pub fn bifidelity_wrap(high: &InverseProblem, low: &InverseProblem) -> Result<(InverseProblem, Arc<FidelityCounts>)> {
    if high.n_params() != low.n_params() || high.n_obs() != low.n_obs() {
        return Err(Error::ShapeMismatch(format!(
            "fidelities disagree: {}→{} vs {}→{}",
            high.n_params(),
            high.n_obs(),
            low.n_params(),
            low.n_obs()
        )));
    }
    let counts = Arc::new(FidelityCounts::default());
    let problem = InverseProblem::new(
        Arc::new(BiFidelityModel {
            high: high.forward().clone(),
            low: low.forward().clone(),
            counts: counts.clone(),
        }),
        high.y().clone(),
        high.noise_cov().clone(),
        high.prior_mean().clone(),
        high.prior_cov().clone(),
    )?;
    Ok((problem, counts))
}
