use std::fs;
use std::path::{Path, PathBuf};

use kalman_inversion::cli::artifacts::read_history;
use kalman_inversion::cli::commands::history_without_timing;
use kalman_inversion::cli::{
    main_with_args, CompareReport, Status, Summary, SweepReport, CSV_HEADER, EXIT_DIVERGED, EXIT_INVALID, EXIT_OK,
    HISTORY_FILE,
};
use kalman_inversion::methods::IterationRecord;
use tempfile::TempDir;

fn kinv(args: &[&str]) -> i32 {
    main_with_args(std::iter::once("kinv").chain(args.iter().copied()))
}

fn run_into(dir: &Path, args: &[&str]) -> i32 {
    let out = dir.to_str().unwrap();
    let mut all = vec!["run"];
    all.extend_from_slice(args);
    all.extend_from_slice(&["--out", out]);
    kinv(&all)
}

fn history(dir: &Path) -> Vec<IterationRecord> {
    read_history(&dir.join(HISTORY_FILE)).unwrap()
}

fn summary(dir: &Path) -> Summary {
    Summary::load(dir).unwrap()
}

#[test]
fn uki2_linear_run_writes_geometric_log() {
    let tmp = TempDir::new().unwrap();
    let code = run_into(
        tmp.path(),
        &["--method", "uki2", "--problem", "linear-over", "--gamma", "1", "--iterations", "30", "--reference", "analytic"],
    );
    assert_eq!(code, EXIT_OK);
    let text = fs::read_to_string(tmp.path().join(HISTORY_FILE)).unwrap();
    assert_eq!(text.lines().next(), Some(CSV_HEADER));
    let h = history(tmp.path());
    assert_eq!(h.len(), 30);
    assert_eq!(h.iter().map(|r| r.iter).collect::<Vec<_>>(), (1..=30).collect::<Vec<_>>());
    for w in h[10..].windows(2) {
        let ratio = w[1].cov_rel_err.unwrap() / w[0].cov_rel_err.unwrap();
        assert!((ratio - 0.5).abs() < 0.025, "ratio {ratio}");
    }
    let s = summary(tmp.path());
    assert_eq!(s.status, Status::Ok);
    assert_eq!(s.fwd_evals, 150);
    assert_eq!(s.final_mean.len(), 2);
    assert_eq!(s.final_covariance.len(), 2);
    let d = s.reference_deltas.unwrap();
    assert!(d.mean_rel_err < 1e-6 && d.cov_rel_err < 1e-6);
}

#[test]
fn csv_decimals_are_full_precision() {
    let tmp = TempDir::new().unwrap();
    run_into(tmp.path(), &["--method", "eki", "--problem", "linear-over", "--iterations", "3", "--reference", "analytic"]);
    let text = fs::read_to_string(tmp.path().join(HISTORY_FILE)).unwrap();
    let h = history(tmp.path());
    // parsing the written decimals gives back the exact doubles
    for (line, r) in text.lines().skip(1).zip(&h) {
        let opt: f64 = line.split(',').nth(3).unwrap().parse().unwrap();
        assert_eq!(opt.to_bits(), r.opt_err.to_bits());
    }
    assert!(h[0].mean_rel_err.unwrap().to_string().len() > 10);
}

#[test]
fn ienkf_log_has_thirty_noisy_rows() {
    let tmp = TempDir::new().unwrap();
    let code = run_into(
        tmp.path(),
        &["--method", "ienkf", "--problem", "linear-over", "--dt", "0.033333", "--J", "10", "--reference", "analytic"],
    );
    assert_eq!(code, EXIT_OK);
    let h = history(tmp.path());
    assert_eq!(h.len(), 30);
    let tail: Vec<f64> = h[20..].iter().map(|r| r.mean_rel_err.unwrap()).collect();
    assert!(!tail.windows(2).all(|w| w[1] < w[0]), "{tail:?}");
    assert!(tail.last().unwrap() > &1e-4);
    assert_eq!(summary(tmp.path()).fwd_evals, 300);
}

#[test]
fn forward_evaluation_accounting() {
    let cases: [(&[&str], usize); 5] = [
        (&["--method", "uki1", "--problem", "linear-over", "--iterations", "7"], 4 * 7),
        (&["--method", "uki2", "--problem", "elliptic-well", "--iterations", "7"], 5 * 7),
        (&["--method", "eaki", "--problem", "linear-under", "--iterations", "7", "--J", "6"], 6 * 7),
        (&["--method", "iukf2", "--problem", "linear-over", "--dt", "0.1"], 5 * 10),
        (&["--method", "rwm", "--problem", "linear-over", "--samples", "1000", "--step", "0.2"], 1001),
    ];
    for (args, expected) in cases {
        let tmp = TempDir::new().unwrap();
        assert_eq!(run_into(tmp.path(), args), EXIT_OK, "{args:?}");
        let h = history(tmp.path());
        assert_eq!(h.last().unwrap().fwd_evals, expected, "{args:?}");
        assert_eq!(summary(tmp.path()).fwd_evals, expected, "{args:?}");
    }
}

#[test]
fn samplers_report_acceptance_and_one_row() {
    let tmp = TempDir::new().unwrap();
    let code = run_into(
        tmp.path(),
        &["--method", "pcn", "--problem", "linear-over", "--samples", "4000", "--burnin", "400", "--reference", "analytic"],
    );
    assert_eq!(code, EXIT_OK);
    let s = summary(tmp.path());
    let rate = s.acceptance_rate.unwrap();
    assert!(rate > 0.0 && rate < 1.0);
    assert_eq!(history(tmp.path()).len(), 1);
}

#[test]
fn invalid_specs_exit_2_with_reason() {
    let tmp = TempDir::new().unwrap();
    let cases: [&[&str]; 6] = [
        &["--method", "eki", "--problem", "darcy", "--bifidelity-grid", "16"],
        &["--method", "uki2", "--problem", "linear-over", "--dt", "0.1"],
        &["--method", "uki2", "--problem", "linear-over", "--gamma", "-1"],
        &["--method", "eki", "--problem", "linear-over", "--J", "1"],
        &["--method", "uki2", "--problem", "linear-over", "--bifidelity-grid", "16"],
        &["--method", "iukf1", "--problem", "linear-over", "--dt", "0.3"],
    ];
    for (k, args) in cases.iter().enumerate() {
        let dir = tmp.path().join(k.to_string());
        assert_eq!(run_into(&dir, args), EXIT_INVALID, "{args:?}");
        let s = summary(&dir);
        assert_eq!(s.status, Status::Invalid, "{args:?}");
        assert!(!s.failure.unwrap_or_default().is_empty());
    }
}

#[test]
fn unparseable_arguments_exit_2() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().to_str().unwrap();
    assert_eq!(kinv(&["run", "--method", "nope", "--problem", "linear-over", "--out", out]), EXIT_INVALID);
    assert_eq!(kinv(&["run", "--method", "uki2", "--problem", "linear-over", "--out", out, "--box", "5:1"]), EXIT_INVALID);
    assert_eq!(kinv(&["run", "--method", "uki2", "--problem", "linear-over"]), EXIT_INVALID);
    assert_eq!(kinv(&["--jobs", "0", "run", "--method", "uki2", "--problem", "linear-over", "--out", out]), EXIT_INVALID);
}

#[test]
fn divergence_exits_3() {
    let tmp = TempDir::new().unwrap();
    // a huge γ inflates the spread until exp(−θ₁) overflows
    let code = run_into(tmp.path(), &["--method", "uki2", "--problem", "elliptic-well", "--gamma", "1e6"]);
    assert_eq!(code, EXIT_DIVERGED);
    let s = summary(tmp.path());
    assert_eq!(s.status, Status::Diverged);
    assert!(s.failure.unwrap().contains("diverged"));
}

#[test]
fn rerun_reproduces_artifacts() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(
        run_into(&a, &["--method", "eki", "--problem", "linear-under", "--seed", "42", "--reference", "analytic"]),
        EXIT_OK
    );
    assert_eq!(kinv(&["rerun", a.to_str().unwrap(), "--out", b.to_str().unwrap()]), EXIT_OK);
    assert_eq!(
        history_without_timing(&a.join(HISTORY_FILE)).unwrap(),
        history_without_timing(&b.join(HISTORY_FILE)).unwrap()
    );
    let (mut sa, mut sb) = (summary(&a), summary(&b));
    sa.wall_ms = 0.0;
    sb.wall_ms = 0.0;
    assert_eq!(sa, sb);
    assert_eq!(sa.seed, 42);

    // a different seed gives a different ensemble
    let c = tmp.path().join("c");
    run_into(&c, &["--method", "eki", "--problem", "linear-under", "--seed", "43", "--reference", "analytic"]);
    assert_ne!(summary(&c).final_mean, sa.final_mean);
}

#[test]
fn thread_count_does_not_change_results() {
    let tmp = TempDir::new().unwrap();
    let dirs: Vec<PathBuf> = (0..2).map(|k| tmp.path().join(k.to_string())).collect();
    for (dir, jobs) in dirs.iter().zip(["1", "4"]) {
        let code = kinv(&[
            "--jobs",
            jobs,
            "run",
            "--method",
            "etki",
            "--problem",
            "hilbert",
            "--modes",
            "8",
            "--J",
            "12",
            "--seed",
            "3",
            "--out",
            dir.to_str().unwrap(),
        ]);
        assert_eq!(code, EXIT_OK);
    }
    assert_eq!(summary(&dirs[0]).final_covariance, summary(&dirs[1]).final_covariance);
}

#[test]
fn gamma_sweep_on_elliptic_problem() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().to_str().unwrap();
    let code = kinv(&["sweep-gamma", "--method", "uki2", "--problem", "elliptic-well", "--iterations", "60", "--out", out]);
    assert_eq!(code, EXIT_OK);
    for g in ["0.25", "0.5", "1", "2", "3"] {
        assert_eq!(history(&tmp.path().join(format!("gamma_{g}"))).len(), 60);
    }
    let report: SweepReport = serde_json::from_str(&fs::read_to_string(tmp.path().join("sweep.json")).unwrap()).unwrap();
    assert_eq!(report.entries.len(), 5);
    assert!(report.max_pairwise_mean_rel_diff < 0.01);
    let table = fs::read_to_string(tmp.path().join("sweep.csv")).unwrap();
    let header = table.lines().next().unwrap();
    assert!(header.starts_with("iter,gamma_0.25_mean_rel_err,gamma_0.25_cov_rel_err,gamma_0.25_opt_err"));
    assert_eq!(table.lines().count(), 61);
}

#[test]
fn single_gamma_sweep_equals_run() {
    let tmp = TempDir::new().unwrap();
    let sweep = tmp.path().join("sweep");
    let single = tmp.path().join("single");
    kinv(&[
        "sweep-gamma",
        "--method",
        "eaki",
        "--problem",
        "linear-over",
        "--gammas",
        "2",
        "--out",
        sweep.to_str().unwrap(),
    ]);
    run_into(&single, &["--method", "eaki", "--problem", "linear-over", "--gamma", "2"]);
    let swept = sweep.join("gamma_2");
    assert_eq!(
        history_without_timing(&swept.join(HISTORY_FILE)).unwrap(),
        history_without_timing(&single.join(HISTORY_FILE)).unwrap()
    );
    assert_eq!(summary(&swept).final_covariance, summary(&single).final_covariance);
}

#[test]
fn linear_limit_is_gamma_independent() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().to_str().unwrap();
    let code = kinv(&[
        "sweep-gamma",
        "--method",
        "uki2",
        "--problem",
        "linear-over",
        "--gammas",
        "2,0.5",
        "--iterations",
        "60",
        "--reference",
        "analytic",
        "--out",
        out,
    ]);
    assert_eq!(code, EXIT_OK);
    let report: SweepReport = serde_json::from_str(&fs::read_to_string(tmp.path().join("sweep.json")).unwrap()).unwrap();
    for e in &report.entries {
        let d = e.reference_deltas.unwrap();
        assert!(d.mean_rel_err < 1e-8 && d.cov_rel_err < 1e-8, "γ = {}: {d:?}", e.gamma);
    }
    assert!(report.max_pairwise_mean_rel_diff < 1e-8);
}

#[test]
fn sweep_rejects_non_mean_field_methods() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().to_str().unwrap();
    assert_eq!(kinv(&["sweep-gamma", "--method", "pcn", "--problem", "linear-over", "--out", out]), EXIT_INVALID);
}

fn compare_report(dir: &Path) -> CompareReport {
    serde_json::from_str(&fs::read_to_string(dir.join("compare.json")).unwrap()).unwrap()
}

#[test]
fn compare_ranks_methods_on_linear_problem() {
    let tmp = TempDir::new().unwrap();
    let mut paths = Vec::new();
    for m in ["eki", "etki", "uki2", "eaki"] {
        let dir = tmp.path().join(m);
        assert_eq!(
            run_into(&dir, &["--method", m, "--problem", "linear-over", "--reference", "analytic", "--exact-init", "true"]),
            EXIT_OK
        );
        paths.push(dir.to_str().unwrap().to_string());
    }
    let out = tmp.path().join("cmp");
    let mut args = vec!["compare"];
    args.extend(paths.iter().map(String::as_str));
    args.extend(["--out", out.to_str().unwrap()]);
    assert_eq!(kinv(&args), EXIT_OK);
    let report = compare_report(&out);
    let labels: Vec<&str> = report.entries.iter().map(|e| e.label.as_str()).collect();
    assert_eq!(labels.last(), Some(&"eki"));
    for e in &report.entries {
        let err = e.final_mean_rel_err.unwrap();
        if e.label == "eki" {
            assert!(err > 1e-3, "eki {err}");
        } else {
            assert!(err < 1e-6 && e.final_cov_rel_err.unwrap() < 1e-6, "{} {err}", e.label);
        }
    }
    assert_eq!(report.entries.iter().map(|e| e.rank).collect::<Vec<_>>(), vec![1, 2, 3, 4]);
    let table = fs::read_to_string(out.join("compare.csv")).unwrap();
    assert!(table.starts_with("iter,eki_mean_rel_err,eki_cov_rel_err,eki_opt_err,etki_mean_rel_err"));
    assert_eq!(table.lines().count(), 31);
}

#[test]
fn compare_single_artifact_passes_through() {
    let tmp = TempDir::new().unwrap();
    let run = tmp.path().join("run");
    run_into(&run, &["--method", "uki1", "--problem", "linear-under", "--reference", "analytic"]);
    let out = tmp.path().join("cmp");
    assert_eq!(kinv(&["compare", run.join("summary.json").to_str().unwrap(), "--out", out.to_str().unwrap()]), EXIT_OK);
    let report = compare_report(&out);
    assert_eq!(report.entries.len(), 1);
    let d = summary(&run).reference_deltas.unwrap();
    assert_eq!(report.entries[0].final_mean_rel_err, Some(d.mean_rel_err));
    assert_eq!(report.entries[0].fwd_evals, 120);
}

#[test]
fn compare_across_problems_is_an_error() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run_into(&a, &["--method", "uki2", "--problem", "linear-over"]);
    run_into(&b, &["--method", "uki2", "--problem", "linear-under"]);
    assert_eq!(kinv(&["compare", a.to_str().unwrap(), b.to_str().unwrap()]), EXIT_INVALID);
}

#[test]
fn compare_recomputes_against_a_new_reference() {
    let tmp = TempDir::new().unwrap();
    let run = tmp.path().join("run");
    run_into(&run, &["--method", "uki2", "--problem", "linear-over"]);
    assert!(summary(&run).reference_deltas.is_none());
    let out = tmp.path().join("cmp");
    let code = kinv(&["compare", run.to_str().unwrap(), "--reference", "analytic", "--out", out.to_str().unwrap()]);
    assert_eq!(code, EXIT_OK);
    assert!(compare_report(&out).entries[0].final_mean_rel_err.unwrap() < 1e-6);
}

#[test]
fn mcmc_fixture_serves_as_reference() {
    let tmp = TempDir::new().unwrap();
    let fixture = tmp.path().join("fixture");
    let code = run_into(
        &fixture,
        &["--method", "pcn", "--problem", "darcy", "--grid", "16", "--modes", "4", "--samples", "2000", "--seed", "1"],
    );
    assert_eq!(code, EXIT_OK);
    let reference = fixture.join("summary.json");
    let run = tmp.path().join("uki");
    let code = run_into(
        &run,
        &[
            "--method",
            "uki1",
            "--problem",
            "darcy",
            "--grid",
            "16",
            "--modes",
            "4",
            "--iterations",
            "3",
            "--reference",
            reference.to_str().unwrap(),
        ],
    );
    assert_eq!(code, EXIT_OK);
    let h = history(&run);
    assert!(h.iter().all(|r| r.mean_rel_err.is_some_and(f64::is_finite)));

    // a fixture for another problem instance is rejected
    let other = tmp.path().join("other");
    let code = run_into(
        &other,
        &["--method", "uki1", "--problem", "hilbert", "--modes", "3", "--reference", reference.to_str().unwrap()],
    );
    assert_eq!(code, EXIT_INVALID);
}

#[test]
fn strategy_flags_run_end_to_end() {
    let tmp = TempDir::new().unwrap();
    let cases: [&[&str]; 3] = [
        &["--method", "uki2", "--problem", "hilbert", "--modes", "10", "--lowrank", "4"],
        &["--method", "uki2", "--problem", "elliptic-well", "--box", "-10:200", "--iterations", "10"],
        &["--method", "uki2", "--problem", "darcy", "--grid", "32", "--bifidelity-grid", "16", "--modes", "4", "--iterations", "3"],
    ];
    for (k, args) in cases.iter().enumerate() {
        let dir = tmp.path().join(k.to_string());
        assert_eq!(run_into(&dir, args), EXIT_OK, "{args:?}");
        assert_eq!(summary(&dir).status, Status::Ok);
    }
    // moments are reported in the reparameterized coordinates
    assert_eq!(summary(&tmp.path().join("0")).final_mean.len(), 4);
    let f = summary(&tmp.path().join("2")).fidelity_evals.unwrap();
    assert_eq!((f.high, f.low), (3, 3 * 8));
}
