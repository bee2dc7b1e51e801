//! Two-dimensional Darcy flow `−∇·(a∇p) = f` on the unit square with
//! `p = 0` on the boundary, discretized by a cell-centred five-point scheme
//! with harmonic averaging of the permeability at faces.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{Fidelity, ForwardModel, InverseProblem};

use super::kl::{cell_centre, KLField, DEFAULT_REGULARITY, DEFAULT_TAU};

/// Observations are taken on the `k/8` interior lattice, `k = 1..7`.
pub const LATTICE_DIVISIONS: usize = 8;
pub const N_OBS: usize = (LATTICE_DIVISIONS - 1) * (LATTICE_DIVISIONS - 1);
pub const MIN_GRID: usize = 16;
/// Modes used to synthesize the truth field.
pub const TRUTH_MODES: usize = 128;

/// Piecewise-constant source: 1000 below `x₂ = 4/6`, 2000 up to `5/6`, 3000 above.
pub fn source(x2: f64) -> f64 {
    if x2 <= 4.0 / 6.0 {
        1000.0
    } else if x2 <= 5.0 / 6.0 {
        2000.0
    } else {
        3000.0
    }
}

/// Measurement coordinates, `x₁` varying fastest.
pub fn measurement_points() -> Vec<(f64, f64)> {
    let h = 1.0 / LATTICE_DIVISIONS as f64;
    (1..LATTICE_DIVISIONS)
        .flat_map(|j| (1..LATTICE_DIVISIONS).map(move |i| (i as f64 * h, j as f64 * h)))
        .collect()
}

/// Lower-banded Cholesky factor. Row `k` stores columns `k−bw ..= k` at
/// offsets `0 ..= bw`.
struct BandCholesky {
    n: usize,
    bw: usize,
    rows: Vec<f64>,
}

impl BandCholesky {
    /// Factor a symmetric banded matrix given by `entry(k, j)` for
    /// `k − bw ≤ j ≤ k`.
    fn factor(n: usize, bw: usize, entry: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let w = bw + 1;
        let mut rows = vec![0.0; n * w];
        for k in 0..n {
            let lo_k = k.saturating_sub(bw);
            for j in lo_k..=k {
                let lo = lo_k.max(j.saturating_sub(bw));
                let mut s = entry(k, j);
                let rk = &rows[k * w + (lo + bw - k)..k * w + (j + bw - k)];
                let rj = &rows[j * w + (lo + bw - j)..j * w + bw];
                s -= rk.iter().zip(rj).map(|(a, b)| a * b).sum::<f64>();
                if j == k {
                    if !(s > 0.0 && s.is_finite()) {
                        return Err(Error::SolverFailure(format!("pivot {s:e} at row {k}")));
                    }
                    rows[k * w + bw] = s.sqrt();
                } else {
                    rows[k * w + (j + bw - k)] = s / rows[j * w + bw];
                }
            }
        }
        Ok(BandCholesky { n, bw, rows })
    }

    fn solve(&self, b: &mut [f64]) {
        let (n, bw, w) = (self.n, self.bw, self.bw + 1);
        for k in 0..n {
            let lo = k.saturating_sub(bw);
            let row = &self.rows[k * w..(k + 1) * w];
            let s: f64 = (lo..k).map(|m| row[m + bw - k] * b[m]).sum();
            b[k] = (b[k] - s) / row[bw];
        }
        for k in (0..n).rev() {
            b[k] /= self.rows[k * w + bw];
            let v = b[k];
            let lo = k.saturating_sub(bw);
            for (m, bm) in b.iter_mut().enumerate().take(k).skip(lo) {
                *bm -= self.rows[k * w + (m + bw - k)] * v;
            }
        }
    }
}

/// Pressure on the cell centres of an `n × n` grid, `x₁` index fastest.
#[derive(Debug, Clone)]
pub struct PressureField {
    pub grid: usize,
    pub values: DVector<f64>,
}

impl PressureField {
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i + self.grid * j]
    }

    /// Bilinear interpolation between the surrounding cell centres.
    pub fn interpolate(&self, x1: f64, x2: f64) -> f64 {
        let n = self.grid;
        let locate = |x: f64| {
            let s = x * n as f64 - 0.5;
            let i0 = (s.floor().max(0.0) as usize).min(n - 2);
            (i0, s - i0 as f64)
        };
        let (i, tx) = locate(x1);
        let (j, ty) = locate(x2);
        (1.0 - tx) * (1.0 - ty) * self.at(i, j)
            + tx * (1.0 - ty) * self.at(i + 1, j)
            + (1.0 - tx) * ty * self.at(i, j + 1)
            + tx * ty * self.at(i + 1, j + 1)
    }

    pub fn observe(&self) -> DVector<f64> {
        DVector::from_iterator(N_OBS, measurement_points().into_iter().map(|(x1, x2)| self.interpolate(x1, x2)))
    }
}

/// Solve for the pressure given permeability values at the cell centres.
pub fn solve_with_permeability(grid: usize, permeability: &DVector<f64>) -> Result<PressureField> {
    let n = grid;
    if permeability.len() != n * n {
        return Err(Error::ShapeMismatch(format!(
            "permeability has {} values for a {n}x{n} grid",
            permeability.len()
        )));
    }
    if permeability.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
        return Err(Error::SolverFailure("permeability must be positive and finite".into()));
    }
    let a = |i: usize, j: usize| permeability[i + n * j];
    let inv_h2 = (n * n) as f64;
    let face = |p: f64, q: f64| 2.0 * p * q / (p + q) * inv_h2;
    let boundary = |p: f64| 2.0 * p * inv_h2;
    // off-diagonal couplings to the west and south neighbours
    let west = |i: usize, j: usize| if i > 0 { face(a(i, j), a(i - 1, j)) } else { 0.0 };
    let south = |i: usize, j: usize| if j > 0 { face(a(i, j), a(i, j - 1)) } else { 0.0 };
    let diag = |i: usize, j: usize| {
        let c = a(i, j);
        let x = |ii: Option<usize>| ii.map_or(boundary(c), |ii| face(c, a(ii, j)));
        let y = |jj: Option<usize>| jj.map_or(boundary(c), |jj| face(c, a(i, jj)));
        x(i.checked_sub(1)) + x((i + 1 < n).then_some(i + 1)) + y(j.checked_sub(1)) + y((j + 1 < n).then_some(j + 1))
    };
    let chol = BandCholesky::factor(n * n, n, |k, m| {
        let (i, j) = (k % n, k / n);
        if m == k {
            diag(i, j)
        } else if m + 1 == k && i > 0 {
            -west(i, j)
        } else if m + n == k {
            -south(i, j)
        } else {
            0.0
        }
    })?;
    let mut rhs: Vec<f64> = (0..n * n).map(|k| source(cell_centre(k / n, n))).collect();
    chol.solve(&mut rhs);
    Ok(PressureField {
        grid: n,
        values: DVector::from_vec(rhs),
    })
}

/// Parameter-to-observation map `θ ↦ p(·; θ)` sampled on the lattice.
#[derive(Debug, Clone)]
pub struct DarcyModel {
    field: Arc<KLField>,
    n_theta: usize,
}

impl DarcyModel {
    pub fn new(field: Arc<KLField>, n_theta: usize) -> Result<Self> {
        if n_theta == 0 || n_theta > field.n_modes() {
            return Err(Error::InvalidConfig(format!(
                "{n_theta} parameters requested from a field with {} modes",
                field.n_modes()
            )));
        }
        Ok(DarcyModel { field, n_theta })
    }

    pub fn grid(&self) -> usize {
        self.field.grid()
    }

    pub fn field(&self) -> &KLField {
        &self.field
    }

    pub fn solve(&self, theta: &DVector<f64>) -> Result<PressureField> {
        let log_a = self.field.eval(theta)?;
        solve_with_permeability(self.grid(), &log_a.map(f64::exp))
    }
}

impl ForwardModel for DarcyModel {
    fn input_dim(&self) -> usize {
        self.n_theta
    }

    fn output_dim(&self) -> usize {
        N_OBS
    }

    fn evaluate(&self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.solve(theta)?.observe())
    }
}

/// Pressure field and lattice observations for coefficients `θ`.
pub fn darcy_solve(model: &DarcyModel, theta: &DVector<f64>) -> Result<(PressureField, DVector<f64>)> {
    let p = model.solve(theta)?;
    let obs = p.observe();
    Ok((p, obs))
}

/// A synthetic Darcy inversion: truth coefficients and the noisy data they
/// generate. Serialized as JSON so that samplers and filters can share data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DarcyInstance {
    pub grid_n: usize,
    pub tau: f64,
    pub d: f64,
    pub seed: u64,
    pub theta_ref: Vec<f64>,
    pub y_ref: Vec<f64>,
}

/// Draw `θ_ref ~ N(0, I)` with `n_modes` entries, solve on a `grid_n` grid and
/// add `N(0, I)` observation noise.
pub fn darcy_instance(grid_n: usize, n_modes: usize, seed: u64) -> Result<DarcyInstance> {
    if grid_n < MIN_GRID {
        return Err(Error::InvalidConfig(format!("Darcy grid must be at least {MIN_GRID}, got {grid_n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let theta_ref: Vec<f64> = (0..n_modes).map(|_| StandardNormal.sample(&mut rng)).collect();
    let field = Arc::new(KLField::with_defaults(grid_n, n_modes)?);
    let model = DarcyModel::new(field, n_modes)?;
    let clean = model.evaluate(&DVector::from_column_slice(&theta_ref))?;
    let y_ref = clean
        .iter()
        .map(|v| v + Distribution::<f64>::sample(&StandardNormal, &mut rng))
        .collect::<Vec<f64>>();
    Ok(DarcyInstance {
        grid_n,
        tau: DEFAULT_TAU,
        d: DEFAULT_REGULARITY,
        seed,
        theta_ref,
        y_ref,
    })
}

impl DarcyInstance {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn model(&self, grid: usize, n_theta: usize) -> Result<DarcyModel> {
        if grid < MIN_GRID {
            return Err(Error::InvalidConfig(format!("Darcy grid must be at least {MIN_GRID}, got {grid}")));
        }
        let field = Arc::new(KLField::new(grid, n_theta, self.tau, self.d)?);
        DarcyModel::new(field, n_theta)
    }

    /// Inversion for the leading `n_theta` coefficients on a `grid` mesh with
    /// prior `N(0, I)` and noise `N(0, I)`.
    pub fn problem(&self, grid: usize, n_theta: usize) -> Result<InverseProblem> {
        InverseProblem::new(
            Arc::new(self.model(grid, n_theta)?),
            DVector::from_column_slice(&self.y_ref),
            DMatrix::identity(N_OBS, N_OBS),
            DVector::zeros(n_theta),
            DMatrix::identity(n_theta, n_theta),
        )
    }

    /// Truth coefficients truncated to the inversion dimension.
    pub fn truth(&self, n_theta: usize) -> DVector<f64> {
        DVector::from_iterator(n_theta, self.theta_ref.iter().copied().chain(std::iter::repeat(0.0)).take(n_theta))
    }
}

/// Bi-fidelity pair: the high-fidelity grid answers [`Fidelity::High`]
/// requests, the low-fidelity grid everything else.
#[derive(Debug, Clone)]
pub struct DarcyPair {
    pub high: DarcyModel,
    pub low: DarcyModel,
}

impl ForwardModel for DarcyPair {
    fn input_dim(&self) -> usize {
        self.high.input_dim()
    }

    fn output_dim(&self) -> usize {
        N_OBS
    }

    fn evaluate(&self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        self.high.evaluate(theta)
    }

    fn evaluate_with(&self, theta: &DVector<f64>, fidelity: Fidelity) -> Result<DVector<f64>> {
        match fidelity {
            Fidelity::High => self.high.evaluate(theta),
            Fidelity::Low => self.low.evaluate(theta),
        }
    }

    fn is_multi_fidelity(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_solve(grid: usize, a: &DVector<f64>) -> DVector<f64> {
        // Independent assembly through a dense matrix.
        let n = grid;
        let h2 = (n * n) as f64;
        let idx = |i: usize, j: usize| i + n * j;
        let mut m = DMatrix::zeros(n * n, n * n);
        for j in 0..n {
            for i in 0..n {
                let c = a[idx(i, j)];
                let k = idx(i, j);
                for (di, dj) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
                    let (ii, jj) = (i as i64 + di, j as i64 + dj);
                    if ii < 0 || jj < 0 || ii >= n as i64 || jj >= n as i64 {
                        m[(k, k)] += 2.0 * c * h2;
                    } else {
                        let o = a[idx(ii as usize, jj as usize)];
                        let t = 2.0 * c * o / (c + o) * h2;
                        m[(k, k)] += t;
                        m[(k, idx(ii as usize, jj as usize))] -= t;
                    }
                }
            }
        }
        let f = DVector::from_fn(n * n, |k, _| source(cell_centre(k / n, n)));
        m.lu().solve(&f).unwrap()
    }

    #[test]
    fn source_bands() {
        assert_eq!(source(0.1), 1000.0);
        assert_eq!(source(4.0 / 6.0), 1000.0);
        assert_eq!(source(0.7), 2000.0);
        assert_eq!(source(5.0 / 6.0), 2000.0);
        assert_eq!(source(0.9), 3000.0);
    }

    #[test]
    fn lattice() {
        let pts = measurement_points();
        assert_eq!(pts.len(), 49);
        assert_eq!(pts[0], (0.125, 0.125));
        assert_eq!(pts[1], (0.25, 0.125));
        assert_eq!(pts[48], (0.875, 0.875));
    }

    #[test]
    fn banded_solver_matches_dense() {
        let n = 9;
        let a = DVector::from_fn(n * n, |k, _| 0.5 + ((k * 37) % 11) as f64 / 5.0);
        let p = solve_with_permeability(n, &a).unwrap();
        let dense = dense_solve(n, &a);
        assert!((&p.values - &dense).norm() / dense.norm() < 1e-12);
    }

    #[test]
    fn maximum_principle() {
        let p = solve_with_permeability(20, &DVector::from_element(400, 1.0)).unwrap();
        assert!(p.values.iter().all(|v| *v > 0.0));
    }

    #[test]
    fn scaling_law() {
        let a = DVector::from_fn(16 * 16, |k, _| 1.0 + (k % 7) as f64 * 0.1);
        let p1 = solve_with_permeability(16, &a).unwrap();
        let p2 = solve_with_permeability(16, &(&a * 2.0)).unwrap();
        assert!((&p1.values * 0.5 - &p2.values).norm() / p2.values.norm() < 1e-13);
    }

    #[test]
    fn grid_refinement_changes_observations_little() {
        let theta = DVector::from_vec(vec![0.8, -0.5, 0.3, 1.2, -0.7, 0.2, 0.1, -0.4]);
        let coarse = DarcyModel::new(Arc::new(KLField::with_defaults(40, 8).unwrap()), 8).unwrap();
        let fine = DarcyModel::new(Arc::new(KLField::with_defaults(80, 8).unwrap()), 8).unwrap();
        let (yc, yf) = (coarse.evaluate(&theta).unwrap(), fine.evaluate(&theta).unwrap());
        assert!((&yc - &yf).norm() / yf.norm() < 0.02);
    }

    #[test]
    fn interpolation_reproduces_bilinear_fields() {
        let n = 16;
        let f = |x: f64, y: f64| 1.0 + 2.0 * x - 3.0 * y + 0.5 * x * y;
        let p = PressureField {
            grid: n,
            values: DVector::from_fn(n * n, |k, _| f(cell_centre(k % n, n), cell_centre(k / n, n))),
        };
        for (x, y) in measurement_points() {
            assert!((p.interpolate(x, y) - f(x, y)).abs() < 1e-12);
        }
    }

    #[test]
    fn instances_are_deterministic_and_serializable() {
        let a = darcy_instance(16, 8, 3).unwrap();
        let b = darcy_instance(16, 8, 3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, darcy_instance(16, 8, 4).unwrap());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("inst.json");
        a.save(&path).unwrap();
        assert_eq!(DarcyInstance::load(&path).unwrap(), a);
        assert!(darcy_instance(8, 4, 0).is_err());
    }

    #[test]
    fn desk_scale_forward_solve_is_fast() {
        let inst = darcy_instance(32, 32, 1).unwrap();
        let prob = inst.problem(32, 32).unwrap();
        let t = std::time::Instant::now();
        prob.evaluate(&inst.truth(32)).unwrap();
        assert!(t.elapsed().as_secs_f64() < 0.1);
    }
}
