//! On-disk artifacts: the per-iteration CSV log and the JSON summary.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::GaussianBelief;
use crate::methods::IterationRecord;

use super::spec::RunSpec;

pub const HISTORY_FILE: &str = "history.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CSV_HEADER: &str = "iter,mean_rel_err,cov_rel_err,opt_err,fwd_evals,wall_ms";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Diverged,
    Invalid,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Deltas {
    pub mean_rel_err: f64,
    pub cov_rel_err: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FidelityEvals {
    pub high: usize,
    pub low: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub spec: RunSpec,
    pub seed: u64,
    pub status: Status,
    pub failure: Option<String>,
    pub iterations: usize,
    pub fwd_evals: usize,
    pub final_mean: Vec<f64>,
    /// Rows of the final covariance.
    pub final_covariance: Vec<Vec<f64>>,
    pub reference_deltas: Option<Deltas>,
    pub acceptance_rate: Option<f64>,
    pub fidelity_evals: Option<FidelityEvals>,
    pub wall_ms: f64,
}

impl Summary {
    /// A summary for a run that never produced moments.
    pub fn failed(spec: &RunSpec, status: Status, reason: String) -> Self {
        Summary {
            spec: spec.clone(),
            seed: spec.seed,
            status,
            failure: Some(reason),
            iterations: 0,
            fwd_evals: 0,
            final_mean: Vec::new(),
            final_covariance: Vec::new(),
            reference_deltas: None,
            acceptance_rate: None,
            fidelity_evals: None,
            wall_ms: 0.0,
        }
    }

    pub fn set_moments(&mut self, belief: &GaussianBelief) {
        self.final_mean = belief.mean.iter().copied().collect();
        self.final_covariance = belief
            .covariance
            .row_iter()
            .map(|r| r.iter().copied().collect())
            .collect();
    }

    pub fn final_belief(&self) -> Result<GaussianBelief> {
        let n = self.final_mean.len();
        if n == 0 || self.final_covariance.len() != n || self.final_covariance.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidConfig("summary carries no usable final moments".into()));
        }
        let cov = DMatrix::from_fn(n, n, |i, j| self.final_covariance[i][j]);
        GaussianBelief::new(DVector::from_column_slice(&self.final_mean), crate::linalg::symmetrize(&cov))
    }

    /// Load from a summary file or a run directory.
    pub fn load(path: &Path) -> Result<Self> {
        let file = summary_path(path);
        let text = fs::read_to_string(&file).map_err(|e| Error::Io(format!("{}: {e}", file.display())))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(SUMMARY_FILE), serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

/// `path` itself if it is a file, `path/summary.json` otherwise.
pub fn summary_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(SUMMARY_FILE)
    } else {
        path.to_path_buf()
    }
}

/// The run directory an artifact path refers to.
pub fn run_dir(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.to_path_buf()
    } else {
        path.parent().map(Path::to_path_buf).unwrap_or_default()
    }
}

/// Shortest round-trip decimal, switching to exponent form for very small
/// or very large magnitudes.
pub fn fmt_f64(v: f64) -> String {
    let a = v.abs();
    if a == 0.0 || (1e-4..1e15).contains(&a) || !v.is_finite() {
        v.to_string()
    } else {
        format!("{v:e}")
    }
}

pub fn write_history(path: &Path, records: &[IterationRecord]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    // written explicitly so the header exists even for an empty log
    w.write_record(CSV_HEADER.split(','))?;
    for r in records {
        w.write_record([
            r.iter.to_string(),
            r.mean_rel_err.map(fmt_f64).unwrap_or_default(),
            r.cov_rel_err.map(fmt_f64).unwrap_or_default(),
            fmt_f64(r.opt_err),
            r.fwd_evals.to_string(),
            fmt_f64(r.wall_ms),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_history(path: &Path) -> Result<Vec<IterationRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header.join(",") != CSV_HEADER {
        return Err(Error::InvalidConfig(format!("{} has an unexpected header", path.display())));
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Stores both artifacts of one run in `dir`.
pub fn write_run(dir: &Path, records: &[IterationRecord], summary: &Summary) -> Result<()> {
    write_history(&dir.join(HISTORY_FILE), records)?;
    summary.save(dir)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cli::spec::MethodName;
    use crate::problems::ProblemKind;

    #[test]
    fn history_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.csv");
        let records = vec![
            IterationRecord {
                iter: 1,
                mean_rel_err: Some(0.1 + 0.2),
                cov_rel_err: None,
                opt_err: 1.0 / 3.0,
                fwd_evals: 5,
                wall_ms: 0.25,
            },
            IterationRecord {
                iter: 2,
                mean_rel_err: Some(1e-300),
                cov_rel_err: Some(2.5e-17),
                opt_err: 0.0,
                fwd_evals: 10,
                wall_ms: 0.5,
            },
        ];
        write_history(&path, &records).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(&format!("{CSV_HEADER}\n")));
        assert_eq!(read_history(&path).unwrap(), records);
    }

    #[test]
    fn summary_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = RunSpec::new(MethodName::Uki2, ProblemKind::LinearOver);
        let mut s = Summary::failed(&spec, Status::Ok, String::new());
        s.failure = None;
        s.set_moments(&GaussianBelief {
            mean: DVector::from_vec(vec![0.1, 0.7]),
            covariance: DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 3.0]),
        });
        assert_eq!(s.final_covariance, vec![vec![1.0, 0.2], vec![0.2, 3.0]]);
        s.save(dir.path()).unwrap();
        assert_eq!(Summary::load(dir.path()).unwrap(), s);
        let b = Summary::load(&dir.path().join(SUMMARY_FILE)).unwrap().final_belief().unwrap();
        assert_eq!(b.mean[1], 0.7);
    }
}
