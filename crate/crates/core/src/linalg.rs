//! Dense linear-algebra helpers for symmetric positive (semi)definite matrices.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative asymmetry tolerated by the factorization routines before the
/// input is rejected outright.
const ASYMMETRY_TOL: f64 = 1e-10;

/// Relative jitter added once to the diagonal when a factorization fails.
pub const JITTER_SCALE: f64 = 1e-12;

pub fn symmetrize(c: &DMatrix<f64>) -> DMatrix<f64> {
    (c + c.transpose()) * 0.5
}

/// `‖C − Cᵀ‖_F / ‖C‖_F`, zero for the zero matrix.
pub fn asymmetry(c: &DMatrix<f64>) -> f64 {
    let norm = c.norm();
    if norm == 0.0 {
        return 0.0;
    }
    (c - c.transpose()).norm() / norm
}

/// Relative Frobenius (or Euclidean, for vectors) distance `‖a − b‖ / ‖b‖`.
///
/// Falls back to the absolute distance when `b` is exactly zero.
pub fn rel_error<R, C, S1, S2>(
    a: &nalgebra::Matrix<f64, R, C, S1>,
    b: &nalgebra::Matrix<f64, R, C, S2>,
) -> f64
where
    R: nalgebra::Dim,
    C: nalgebra::Dim,
    S1: nalgebra::storage::Storage<f64, R, C>,
    S2: nalgebra::storage::Storage<f64, R, C>,
{
    let diff = a
        .iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let scale = b.norm();
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

fn check_square(c: &DMatrix<f64>, what: &str) -> Result<()> {
    if !c.is_square() {
        return Err(Error::ShapeMismatch(format!(
            "{what} must be square, got {}x{}",
            c.nrows(),
            c.ncols()
        )));
    }
    Ok(())
}

/// Lower-triangular Cholesky factor `L` with `L Lᵀ = C`.
///
/// The input is symmetrized first. If the factorization fails (tiny negative
/// eigenvalues from round-off), a jitter of `1e-12 · trace(C) / n` is added to
/// the diagonal once and the factorization retried.
pub fn spd_sqrt(c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_square(c, "covariance")?;
    if c.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotSpd("matrix has non-finite entries".into()));
    }
    let asym = asymmetry(c);
    if asym > ASYMMETRY_TOL {
        return Err(Error::NotSpd(format!("matrix is not symmetric (relative asymmetry {asym:e})")));
    }
    let sym = symmetrize(c);
    if let Some(chol) = sym.clone().cholesky() {
        return Ok(chol.unpack());
    }
    let n = sym.nrows();
    let jitter = JITTER_SCALE * sym.trace() / n as f64;
    if jitter > 0.0 {
        let jittered = &sym + DMatrix::identity(n, n) * jitter;
        if let Some(chol) = jittered.cholesky() {
            return Ok(chol.unpack());
        }
    }
    Err(Error::NotSpd("Cholesky factorization failed after jitter".into()))
}

/// Solve `C X = B` for SPD `C` via its Cholesky factor.
pub fn spd_solve(c: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let l = spd_sqrt(c)?;
    Ok(solve_with_factor(&l, b))
}

/// Solve `L Lᵀ X = B` given the lower factor `L`.
pub fn solve_with_factor(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let z = l
        .solve_lower_triangular(b)
        .expect("Cholesky factor has a positive diagonal");
    l.transpose()
        .solve_upper_triangular(&z)
        .expect("Cholesky factor has a positive diagonal")
}

/// `L⁻¹ v` for a lower-triangular factor: whitens a residual against `L Lᵀ`.
pub fn whiten(l: &DMatrix<f64>, v: &DVector<f64>) -> DVector<f64> {
    l.solve_lower_triangular(v)
        .expect("Cholesky factor has a positive diagonal")
}

/// Inverse of an SPD matrix, symmetrized.
pub fn spd_inverse(c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = c.nrows();
    let inv = spd_solve(c, &DMatrix::identity(n, n))?;
    Ok(symmetrize(&inv))
}

/// Eigen-decomposition of a symmetric matrix with eigenvalues sorted in
/// descending order; column `k` of the returned matrix pairs with value `k`.
pub fn sym_eigen_desc(c: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = symmetrize(c).symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = DVector::from_iterator(order.len(), order.iter().map(|&k| eig.eigenvalues[k]));
    let vectors = DMatrix::from_columns(
        &order
            .iter()
            .map(|&k| eig.eigenvectors.column(k).into_owned())
            .collect::<Vec<_>>(),
    );
    (values, vectors)
}

/// Thin SVD `A = U diag(s) Vᵀ` with singular values sorted descending.
pub struct SortedSvd {
    pub u: DMatrix<f64>,
    pub singular_values: DVector<f64>,
    pub v_t: DMatrix<f64>,
}

impl SortedSvd {
    pub fn new(a: &DMatrix<f64>) -> Self {
        let svd = a.clone().svd(true, true);
        let u = svd.u.expect("requested U");
        let v_t = svd.v_t.expect("requested Vᵀ");
        let s = svd.singular_values;
        let mut order: Vec<usize> = (0..s.len()).collect();
        order.sort_by(|&x, &y| s[y].total_cmp(&s[x]));
        SortedSvd {
            u: DMatrix::from_columns(&order.iter().map(|&k| u.column(k).into_owned()).collect::<Vec<_>>()),
            singular_values: DVector::from_iterator(order.len(), order.iter().map(|&k| s[k])),
            v_t: DMatrix::from_rows(&order.iter().map(|&k| v_t.row(k).into_owned()).collect::<Vec<_>>()),
        }
    }

    /// Number of singular values above `rel_cutoff · σ_max`.
    pub fn rank(&self, rel_cutoff: f64) -> usize {
        let smax = self.singular_values.iter().cloned().fold(0.0, f64::max);
        if smax == 0.0 {
            return 0;
        }
        self.singular_values.iter().filter(|&&s| s > rel_cutoff * smax).count()
    }
}

/// 2-norm condition number of a symmetric matrix.
pub fn sym_condition_number(c: &DMatrix<f64>) -> f64 {
    let (values, _) = sym_eigen_desc(c);
    let max = values.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let min = values.iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Block-diagonal matrix `diag(a, b)`.
pub fn block_diag(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows() + b.nrows();
    let m = a.ncols() + b.ncols();
    let mut out = DMatrix::zeros(n, m);
    out.view_mut((0, 0), (a.nrows(), a.ncols())).copy_from(a);
    out.view_mut((a.nrows(), a.ncols()), (b.nrows(), b.ncols())).copy_from(b);
    out
}
