use kalman_inversion::mcmc::{pcn_sample, ChainConfig};
use kalman_inversion::problems::{build_problem, ProblemKind, ProblemOptions};

#[test]
fn independent_pcn_chains_agree_on_dominant_modes() {
    let p = build_problem(
        ProblemKind::Darcy,
        &ProblemOptions {
            dim: Some(32),
            grid: 32,
            data_seed: 0,
        },
    )
    .unwrap();
    let chain = |seed| {
        pcn_sample(
            &p,
            &ChainConfig {
                n_samples: 100_000,
                burn_in: 10_000,
                step_size: 0.04,
                seed,
            },
        )
        .unwrap()
    };
    let (a, b) = std::thread::scope(|s| {
        let a = s.spawn(|| chain(1));
        let b = s.spawn(|| chain(2));
        (a.join().unwrap(), b.join().unwrap())
    });
    for i in 0..10 {
        let se = a.mc_std_err[i].hypot(b.mc_std_err[i]);
        let d = (a.mean[i] - b.mean[i]).abs();
        assert!(d <= 3.0 * se, "mode {}: |{} − {}| > 3·{se}", i + 1, a.mean[i], b.mean[i]);
    }
}
