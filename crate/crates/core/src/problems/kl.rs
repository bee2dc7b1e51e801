//! Karhunen–Loève representation of a log-normal permeability field on the
//! unit square.
//!
//! Modes are indexed by `l ∈ Z₊² \ {0}` with eigenvalues
//! `λ_l = (π²|l|² + τ²)^(−d)` and the cosine eigenfunctions of the Neumann
//! Laplacian. They are reordered by descending eigenvalue, ties broken
//! lexicographically on `(l₁, l₂)`.

use std::f64::consts::{PI, SQRT_2};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub const DEFAULT_TAU: f64 = 3.0;
pub const DEFAULT_REGULARITY: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KLMode {
    pub l: (usize, usize),
    pub eigenvalue: f64,
}

/// The leading `n_modes` KL modes, sorted by descending eigenvalue.
pub fn kl_modes(n_modes: usize, tau: f64, d: f64) -> Vec<KLMode> {
    let eig = |l1: usize, l2: usize| (PI * PI * (l1 * l1 + l2 * l2) as f64 + tau * tau).powf(-d);
    // Every lattice point with |l| ≤ k lies in the enumerated square, so the
    // selection is exact once the last kept mode has |l| < k.
    let mut k = ((1.3 * (n_modes as f64).sqrt()).ceil() as usize).max(1) + 2;
    loop {
        let mut modes: Vec<KLMode> = (0..=k)
            .flat_map(|l1| (0..=k).map(move |l2| (l1, l2)))
            .filter(|&l| l != (0, 0))
            .map(|l| KLMode {
                l,
                eigenvalue: eig(l.0, l.1),
            })
            .collect();
        modes.sort_by(|a, b| b.eigenvalue.total_cmp(&a.eigenvalue).then(a.l.cmp(&b.l)));
        modes.truncate(n_modes);
        let radius2 = modes.last().map_or(0, |m| m.l.0 * m.l.0 + m.l.1 * m.l.1);
        if radius2 < k * k {
            return modes;
        }
        k *= 2;
    }
}

/// Eigenfunction `ψ_l` at a point of the unit square.
pub fn basis_function(l: (usize, usize), x1: f64, x2: f64) -> f64 {
    match l {
        (0, l2) => SQRT_2 * (PI * l2 as f64 * x2).cos(),
        (l1, 0) => SQRT_2 * (PI * l1 as f64 * x1).cos(),
        (l1, l2) => 2.0 * (PI * l1 as f64 * x1).cos() * (PI * l2 as f64 * x2).cos(),
    }
}

/// Cell-centre coordinate of index `i` on an `n`-cell grid.
pub fn cell_centre(i: usize, n: usize) -> f64 {
    (i as f64 + 0.5) / n as f64
}

/// KL modes tabulated at the cell centres of an `n × n` grid.
///
/// Grid values are stored with the `x₁` index varying fastest:
/// `k = i + n·j` for the cell centred at `(x₁ᵢ, x₂ⱼ)`.
#[derive(Debug, Clone)]
pub struct KLField {
    tau: f64,
    d: f64,
    grid: usize,
    modes: Vec<KLMode>,
    /// `n² × n_modes`, column `k` holds `√λ_k ψ_k` on the grid.
    scaled_basis: DMatrix<f64>,
}

impl KLField {
    pub fn new(grid: usize, n_modes: usize, tau: f64, d: f64) -> Result<Self> {
        if grid < 2 || n_modes == 0 {
            return Err(Error::InvalidConfig(format!(
                "KL field needs grid ≥ 2 and at least one mode (got grid {grid}, {n_modes} modes)"
            )));
        }
        if !(tau > 0.0 && d > 0.0) {
            return Err(Error::InvalidConfig(format!("KL field needs τ > 0 and d > 0 (got {tau}, {d})")));
        }
        let modes = kl_modes(n_modes, tau, d);
        let mut scaled_basis = DMatrix::zeros(grid * grid, n_modes);
        for (k, mode) in modes.iter().enumerate() {
            let s = mode.eigenvalue.sqrt();
            for j in 0..grid {
                let x2 = cell_centre(j, grid);
                for i in 0..grid {
                    scaled_basis[(i + grid * j, k)] = s * basis_function(mode.l, cell_centre(i, grid), x2);
                }
            }
        }
        Ok(KLField {
            tau,
            d,
            grid,
            modes,
            scaled_basis,
        })
    }

    pub fn with_defaults(grid: usize, n_modes: usize) -> Result<Self> {
        KLField::new(grid, n_modes, DEFAULT_TAU, DEFAULT_REGULARITY)
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn regularity(&self) -> f64 {
        self.d
    }

    pub fn grid(&self) -> usize {
        self.grid
    }

    pub fn n_modes(&self) -> usize {
        self.modes.len()
    }

    pub fn modes(&self) -> &[KLMode] {
        &self.modes
    }

    pub fn eigenvalues(&self) -> DVector<f64> {
        DVector::from_iterator(self.modes.len(), self.modes.iter().map(|m| m.eigenvalue))
    }

    /// Log-permeability `Σ θ_k √λ_k ψ_k` on the grid using the first
    /// `θ.len()` modes.
    pub fn eval(&self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        if theta.len() > self.n_modes() {
            return Err(Error::ShapeMismatch(format!(
                "{} coefficients for a field with {} modes",
                theta.len(),
                self.n_modes()
            )));
        }
        Ok(self.scaled_basis.columns(0, theta.len()) * theta)
    }
}

/// Free-function form of [`KLField::eval`].
pub fn kl_field_eval(field: &KLField, theta: &DVector<f64>) -> Result<DVector<f64>> {
    field.eval(theta)
}
