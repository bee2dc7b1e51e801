//! Sigma points of the modified unscented transform.
//!
//! Point 0 sits at the mean; the remaining `J − 1` points are
//! `m + [√C] I[:, j]` for a fixed offset matrix `I` satisfying
//! `Σⱼ a I[:, j] I[:, j]ᵀ = 𝕀`. Expectations use the centre point alone and
//! covariances use the weight `a` on the outer points.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::gaussian::GaussianBelief;
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum UkiVariant {
    /// Simplex rule, `J = N_θ + 2`.
    Uki1,
    /// Symmetric rule, `J = 2N_θ + 1`.
    Uki2,
}

impl UkiVariant {
    pub fn n_points(self, n: usize) -> usize {
        match self {
            UkiVariant::Uki1 => n + 2,
            UkiVariant::Uki2 => 2 * n + 1,
        }
    }

    pub fn weight(self, n: usize) -> f64 {
        let n = n as f64;
        match self {
            UkiVariant::Uki1 => n / (4.0 * (n + 1.0)),
            UkiVariant::Uki2 => f64::max(1.0 / 8.0, 1.0 / (2.0 * n)),
        }
    }

    /// The `N_θ × (J − 1)` offset matrix.
    pub fn offsets(self, n: usize) -> DMatrix<f64> {
        let a = self.weight(n);
        match self {
            UkiVariant::Uki1 => simplex_offsets(n, a),
            UkiVariant::Uki2 => {
                let c = 1.0 / (2.0 * a).sqrt();
                let mut m = DMatrix::zeros(n, 2 * n);
                for i in 0..n {
                    m[(i, i)] = c;
                    m[(i, n + i)] = -c;
                }
                m
            }
        }
    }
}

/// Recursive simplex construction: `I₁ = [−1/√(2a), 1/√(2a)]`, and `I_d` pads
/// `I_{d−1}` with a zero column and appends a row of `1/√(a d(d+1))` entries
/// ending in `−d/√(a d(d+1))`.
fn simplex_offsets(n: usize, a: f64) -> DMatrix<f64> {
    let c = 1.0 / (2.0 * a).sqrt();
    let mut cur = DMatrix::from_row_slice(1, 2, &[-c, c]);
    for d in 2..=n {
        let df = d as f64;
        let s = 1.0 / (a * df * (df + 1.0)).sqrt();
        let mut next = DMatrix::zeros(d, d + 1);
        next.view_mut((0, 0), (d - 1, d)).copy_from(&cur);
        for j in 0..d {
            next[(d - 1, j)] = s;
        }
        next[(d - 1, d)] = -df * s;
        cur = next;
    }
    cur
}

/// Quadrature nodes for one Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaPoints {
    /// `N_θ × J`, column 0 is the mean.
    pub points: DMatrix<f64>,
    pub weight: f64,
    pub variant: UkiVariant,
}

impl SigmaPoints {
    pub fn len(&self) -> usize {
        self.points.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.points.ncols() == 0
    }

    /// Weighted covariance of the outer points about point 0.
    pub fn weighted_covariance(&self) -> DMatrix<f64> {
        let m = self.points.column(0);
        let n = self.points.nrows();
        let mut c = DMatrix::zeros(n, n);
        for j in 1..self.len() {
            let d = self.points.column(j) - m;
            c += &d * d.transpose() * self.weight;
        }
        c
    }
}

pub fn sigma_points(mean: &DVector<f64>, cov: &DMatrix<f64>, variant: UkiVariant) -> Result<SigmaPoints> {
    let n = mean.len();
    let l = linalg::spd_sqrt(cov)?;
    let offsets = l * variant.offsets(n);
    let mut points = DMatrix::zeros(n, offsets.ncols() + 1);
    points.set_column(0, mean);
    for (j, off) in offsets.column_iter().enumerate() {
        points.set_column(j + 1, &(mean + off));
    }
    Ok(SigmaPoints {
        points,
        weight: variant.weight(n),
        variant,
    })
}

pub fn sigma_points_uki1(belief: &GaussianBelief) -> Result<SigmaPoints> {
    sigma_points(&belief.mean, &belief.covariance, UkiVariant::Uki1)
}

pub fn sigma_points_uki2(belief: &GaussianBelief) -> Result<SigmaPoints> {
    sigma_points(&belief.mean, &belief.covariance, UkiVariant::Uki2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn uki1_one_dimensional() {
        let b = GaussianBelief::new(DVector::zeros(1), DMatrix::identity(1, 1)).unwrap();
        let s = sigma_points_uki1(&b).unwrap();
        assert_eq!(s.weight, 1.0 / 8.0);
        assert_eq!(s.points.as_slice(), &[0.0, -2.0, 2.0]);
    }

    #[test]
    fn uki1_two_dimensional_offsets() {
        // a = 2/12; I₂ = [[-√3, √3, 0], [1, 1, -2]] since 1/√(2a) = √3 and 1/√(6a) = 1
        let i2 = UkiVariant::Uki1.offsets(2);
        let r3 = 3f64.sqrt();
        let expected = DMatrix::from_row_slice(2, 3, &[-r3, r3, 0.0, 1.0, 1.0, -2.0]);
        assert!((&i2 - expected).norm() < 1e-14);
        let a = UkiVariant::Uki1.weight(2);
        assert!((a - 1.0 / 6.0).abs() < 1e-16);
        assert!((&i2 * i2.transpose() * a - DMatrix::identity(2, 2)).norm() < 1e-14);
        assert_eq!(UkiVariant::Uki1.n_points(2), 4);
    }

    #[test]
    fn uki2_weights_and_offsets() {
        assert_eq!(UkiVariant::Uki2.weight(1), 0.5);
        assert_eq!(UkiVariant::Uki2.weight(4), 0.125);
        let b = GaussianBelief::new(DVector::from_vec(vec![3.0]), DMatrix::identity(1, 1) * 4.0).unwrap();
        let s = sigma_points_uki2(&b).unwrap();
        assert_eq!(s.points.as_slice(), &[3.0, 5.0, 1.0]);

        let off = UkiVariant::Uki2.offsets(4);
        assert_eq!(off[(2, 2)], 2.0);
        assert_eq!(off[(2, 6)], -2.0);
    }

    #[test]
    fn offsets_are_centred() {
        for variant in [UkiVariant::Uki1, UkiVariant::Uki2] {
            for n in 1..8 {
                let off = variant.offsets(n);
                assert_eq!(off.ncols(), variant.n_points(n) - 1);
                for row in off.row_iter() {
                    assert!(row.sum().abs() < 1e-12);
                }
            }
        }
    }

    fn belief_strategy() -> impl Strategy<Value = GaussianBelief> {
        (1usize..7).prop_flat_map(|n| {
            (
                proptest::collection::vec(-10.0f64..10.0, n),
                proptest::collection::vec(-1.0f64..1.0, n * n),
            )
                .prop_map(move |(m, a)| {
                    let a = DMatrix::from_vec(n, n, a);
                    let c = linalg::symmetrize(&(&a * a.transpose() + DMatrix::identity(n, n) * 0.05));
                    GaussianBelief::new(DVector::from_vec(m), c).unwrap()
                })
        })
    }

    proptest! {
        #[test]
        fn both_rules_reproduce_the_moments(b in belief_strategy()) {
            for variant in [UkiVariant::Uki1, UkiVariant::Uki2] {
                let s = sigma_points(&b.mean, &b.covariance, variant).unwrap();
                prop_assert_eq!(s.len(), variant.n_points(b.dim()));
                prop_assert_eq!(s.points.column(0).into_owned(), b.mean.clone());
                let c = s.weighted_covariance();
                prop_assert!(linalg::rel_error(&c, &b.covariance) < 1e-10);
            }
        }
    }
}
