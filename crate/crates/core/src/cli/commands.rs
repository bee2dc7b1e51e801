//! The subcommands, independent of argument parsing.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::baselines::{run_transport, TransportConfig};
use crate::error::{Error, Result};
use crate::gaussian::GaussianBelief;
use crate::linalg;
use crate::mcmc::{pcn_sample, rwm_sample, ChainConfig};
use crate::methods::{run, IterationRecord, RunConfig, RunOutcome};

use super::artifacts::{fmt_f64, read_history, run_dir, write_run, Deltas, FidelityEvals, Status, Summary, HISTORY_FILE};
use super::spec::{Family, ReferenceSpec, RunSpec, Sampler};

/// Whether an error means the request itself was unacceptable (exit 2) as
/// opposed to a failure while running it.
pub fn is_invalid_spec(e: &Error) -> bool {
    matches!(
        e,
        Error::InvalidConfig(_)
            | Error::Unsupported(_)
            | Error::ShapeMismatch(_)
            | Error::RankExceeded { .. }
            | Error::MismatchedProblem(_)
            | Error::InvalidGamma(_)
            | Error::InvalidStep(_)
            | Error::DegenerateEnsemble(_)
    )
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub records: Vec<IterationRecord>,
    pub summary: Summary,
}

fn deltas(belief: &GaussianBelief, reference: &GaussianBelief) -> Deltas {
    Deltas {
        mean_rel_err: linalg::rel_error(&belief.mean, &reference.mean),
        cov_rel_err: linalg::rel_error(&belief.covariance, &reference.covariance),
    }
}

/// Run a spec in memory.
pub fn execute(spec: &RunSpec) -> Result<RunResult> {
    let prepared = spec.build()?;
    let problem = &prepared.problem;
    let reference = prepared.reference.clone();
    let start = Instant::now();
    let mut summary = Summary::failed(spec, Status::Ok, String::new());
    summary.failure = None;

    let from_outcome = |out: RunOutcome, summary: &mut Summary| {
        if let Some(d) = &out.divergence {
            summary.status = Status::Diverged;
            summary.failure = Some(format!("diverged at iteration {}: {}", d.iteration, d.reason));
        }
        summary.iterations = out.state.iteration;
        summary.fwd_evals = out.state.fwd_evals;
        (out.state.history.clone(), out.final_moments())
    };

    let (records, belief) = match spec.family() {
        Family::MeanField(method) => {
            let cfg = RunConfig {
                gamma: spec.gamma,
                iterations: spec.iterations,
                ensemble_size: spec.ensemble_size,
                seed: spec.seed,
                exact_init: spec.exact_init.unwrap_or(false),
                reference: reference.clone(),
            };
            from_outcome(run(method, problem, &cfg)?, &mut summary)
        }
        Family::Transport(variant) => {
            let mut cfg = TransportConfig::from_dt(spec.transport_dt(), variant)?;
            cfg.ensemble_size = spec.ensemble_size;
            cfg.exact_init = spec.exact_init.unwrap_or(true);
            from_outcome(run_transport(problem, &cfg, spec.seed, reference.clone())?, &mut summary)
        }
        Family::Chain(sampler) => {
            let cfg = ChainConfig {
                n_samples: spec.samples,
                burn_in: spec.burn_in(),
                step_size: spec.step_size(),
                seed: spec.seed,
            };
            let chain = match sampler {
                Sampler::Rwm => rwm_sample(problem, &cfg)?,
                Sampler::Pcn => pcn_sample(problem, &cfg)?,
            };
            let belief = chain.belief();
            let opt_err = problem.evaluate(&belief.mean).map_or(f64::NAN, |g| {
                problem.data_misfit_of(&g) + problem.prior_misfit(&belief.mean)
            });
            let d = reference.as_ref().map(|r| deltas(&belief, r));
            summary.iterations = 1;
            summary.fwd_evals = spec.samples + 1;
            summary.acceptance_rate = Some(chain.acceptance_rate);
            let record = IterationRecord {
                iter: 1,
                mean_rel_err: d.map(|d| d.mean_rel_err),
                cov_rel_err: d.map(|d| d.cov_rel_err),
                opt_err,
                fwd_evals: summary.fwd_evals,
                wall_ms: start.elapsed().as_secs_f64() * 1e3,
            };
            (vec![record], belief)
        }
    };
    summary.set_moments(&belief);
    summary.reference_deltas = reference.as_ref().map(|r| deltas(&belief, r));
    summary.fidelity_evals = prepared.counts.as_ref().map(|c| FidelityEvals {
        high: c.high(),
        low: c.low(),
    });
    summary.wall_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(RunResult { records, summary })
}

/// Run a spec and store its artifacts in `out`. Failures are recorded in
/// the summary before being returned.
pub fn cmd_run(spec: &RunSpec, out: &Path) -> Result<RunResult> {
    match execute(spec) {
        Ok(result) => {
            write_run(out, &result.records, &result.summary)?;
            Ok(result)
        }
        Err(e) => {
            let status = if is_invalid_spec(&e) { Status::Invalid } else { Status::Failed };
            // best effort: the original error matters more than a failed write
            let _ = write_run(out, &[], &Summary::failed(spec, status, e.to_string()));
            Err(e)
        }
    }
}

/// Re-execute the spec embedded in an earlier summary.
pub fn cmd_rerun(artifact: &Path, out: &Path) -> Result<RunResult> {
    let summary = Summary::load(artifact)?;
    cmd_run(&summary.spec, out)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// Wide table keyed by iteration with three columns per labelled run.
fn write_wide(path: &Path, runs: &[(String, Vec<IterationRecord>)]) -> Result<()> {
    let mut rows: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    let width = runs.len() * 3;
    for (k, (_, records)) in runs.iter().enumerate() {
        for r in records {
            let row = rows.entry(r.iter).or_insert_with(|| vec![String::new(); width]);
            row[3 * k] = fmt_opt(r.mean_rel_err);
            row[3 * k + 1] = fmt_opt(r.cov_rel_err);
            row[3 * k + 2] = fmt_f64(r.opt_err);
        }
    }
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["iter".to_string()];
    for (label, _) in runs {
        header.extend(["mean_rel_err", "cov_rel_err", "opt_err"].map(|c| format!("{label}_{c}")));
    }
    w.write_record(&header)?;
    for (iter, row) in rows {
        w.write_record(std::iter::once(iter.to_string()).chain(row))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub gamma: f64,
    pub status: Status,
    pub iterations: usize,
    pub final_mean: Vec<f64>,
    pub reference_deltas: Option<Deltas>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub entries: Vec<SweepEntry>,
    /// Largest `‖m_a − m_b‖ / ‖m_b‖` over ordered pairs of final means.
    pub max_pairwise_mean_rel_diff: f64,
}

pub fn gamma_label(g: f64) -> String {
    format!("gamma_{g}")
}

/// Run a mean-field method once per `γ`; each run lands in
/// `out/gamma_<γ>/`, the merged table in `out/sweep.csv`.
pub fn cmd_sweep_gamma(base: &RunSpec, gammas: &[f64], out: &Path) -> Result<SweepReport> {
    if !matches!(base.family(), Family::MeanField(_)) {
        return Err(Error::InvalidConfig(format!("γ sweeps need a mean-field method, not {}", base.method)));
    }
    if gammas.is_empty() {
        return Err(Error::InvalidConfig("no γ values given".into()));
    }
    let mut runs = Vec::new();
    let mut entries = Vec::new();
    for &g in gammas {
        let mut spec = base.clone();
        spec.gamma = g;
        let result = cmd_run(&spec, &out.join(gamma_label(g)))?;
        entries.push(SweepEntry {
            gamma: g,
            status: result.summary.status,
            iterations: result.summary.iterations,
            final_mean: result.summary.final_mean.clone(),
            reference_deltas: result.summary.reference_deltas,
        });
        runs.push((gamma_label(g), result.records));
    }
    write_wide(&out.join("sweep.csv"), &runs)?;
    let mut worst: f64 = 0.0;
    for a in &entries {
        for b in &entries {
            let diff: f64 = a.final_mean.iter().zip(&b.final_mean).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            let scale = b.final_mean.iter().map(|y| y * y).sum::<f64>().sqrt();
            worst = worst.max(if scale > 0.0 { diff / scale } else { diff });
        }
    }
    let report = SweepReport {
        entries,
        max_pairwise_mean_rel_diff: worst,
    };
    fs::write(out.join("sweep.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareEntry {
    pub rank: usize,
    pub label: String,
    pub artifact: PathBuf,
    pub status: Status,
    pub iterations: usize,
    pub fwd_evals: usize,
    pub final_mean_rel_err: Option<f64>,
    pub final_cov_rel_err: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub problem: String,
    pub entries: Vec<CompareEntry>,
}

/// Merge run artifacts that share a problem, ranking them by final mean and
/// then covariance error. With `reference`, final errors are recomputed
/// against it; otherwise the recorded errors are used and must refer to the
/// same reference.
pub fn cmd_compare(artifacts: &[PathBuf], reference: Option<&ReferenceSpec>, out: Option<&Path>) -> Result<CompareReport> {
    if artifacts.is_empty() {
        return Err(Error::InvalidConfig("nothing to compare".into()));
    }
    let summaries = artifacts.iter().map(|p| Summary::load(p)).collect::<Result<Vec<_>>>()?;
    let key = summaries[0].spec.problem_key();
    for (s, p) in summaries.iter().zip(artifacts) {
        if s.spec.problem_key() != key {
            return Err(Error::MismatchedProblem(format!(
                "{} solves {}, expected {}",
                p.display(),
                s.spec.problem_key(),
                key
            )));
        }
    }
    let recomputed = match reference {
        Some(r) => {
            let mut spec = summaries[0].spec.clone();
            spec.reference = r.clone();
            spec.build()?.reference
        }
        None => {
            if summaries.iter().any(|s| s.spec.reference != summaries[0].spec.reference) {
                return Err(Error::MismatchedProblem("artifacts were scored against different references".into()));
            }
            None
        }
    };

    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    let mut runs = Vec::new();
    let mut entries = Vec::new();
    for (s, path) in summaries.iter().zip(artifacts) {
        let base = s.spec.method.name().to_string();
        let n = seen.entry(base.clone()).or_insert(0);
        *n += 1;
        let label = if *n == 1 { base } else { format!("{base}_{n}") };
        let history_path = run_dir(path).join(HISTORY_FILE);
        let records = if history_path.exists() { read_history(&history_path)? } else { Vec::new() };
        let d = match &recomputed {
            Some(r) => s.final_belief().ok().map(|b| deltas(&b, r)),
            None => s.reference_deltas,
        };
        entries.push(CompareEntry {
            rank: 0,
            label: label.clone(),
            artifact: path.clone(),
            status: s.status,
            iterations: s.iterations,
            fwd_evals: s.fwd_evals,
            final_mean_rel_err: d.map(|d| d.mean_rel_err),
            final_cov_rel_err: d.map(|d| d.cov_rel_err),
        });
        runs.push((label, records));
    }
    let missing_last = |v: Option<f64>| v.filter(|x| !x.is_nan()).unwrap_or(f64::INFINITY);
    entries.sort_by(|a, b| {
        missing_last(a.final_mean_rel_err)
            .total_cmp(&missing_last(b.final_mean_rel_err))
            .then(missing_last(a.final_cov_rel_err).total_cmp(&missing_last(b.final_cov_rel_err)))
    });
    for (i, e) in entries.iter_mut().enumerate() {
        e.rank = i + 1;
    }
    let report = CompareReport { problem: key, entries };
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        write_wide(&dir.join("compare.csv"), &runs)?;
        fs::write(dir.join("compare.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    }
    Ok(report)
}

/// Plain-text ranking table.
pub fn render_ranking(report: &CompareReport) -> String {
    let mut s = format!("problem: {}\n", report.problem);
    s += &format!(
        "{:>4}  {:<10} {:>9} {:>8} {:>10} {:>14} {:>14}\n",
        "rank", "label", "status", "iters", "fwd_evals", "mean_rel_err", "cov_rel_err"
    );
    let f = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.3e}"));
    for e in &report.entries {
        s += &format!(
            "{:>4}  {:<10} {:>9} {:>8} {:>10} {:>14} {:>14}\n",
            e.rank,
            e.label,
            format!("{:?}", e.status).to_lowercase(),
            e.iterations,
            e.fwd_evals,
            f(e.final_mean_rel_err),
            f(e.final_cov_rel_err)
        );
    }
    s
}

/// Rewrite a history file with `wall_ms` blanked, for reproducibility diffs.
pub fn history_without_timing(path: &Path) -> Result<Vec<IterationRecord>> {
    Ok(read_history(path)?
        .into_iter()
        .map(|mut r| {
            r.wall_ms = 0.0;
            r
        })
        .collect())
}
