use meanfield_core::exact::{enumerate_states, expected_occupancy, generator, transient, DEFAULT_STATE_CAP};
use meanfield_core::model::{builtin_example, load_model};
use meanfield_core::sim::{replication_rng, simulate, simulate_ctmc, simulate_slotted, uniform_grid};
use meanfield_core::{ensemble, CountVector, ModelSpec, SimConfig, SimMode};

fn counts(v: &[u32]) -> CountVector {
    CountVector::new(v.to_vec()).unwrap()
}

/// Count in state 1 at `t` for `reps` independent paths.
fn final_counts(model: &ModelSpec, mode: SimMode, init: &CountVector, t: f64, reps: u64, seed: u64) -> Vec<u32> {
    (0..reps)
        .map(|r| {
            let mut rng = replication_rng(seed, r);
            simulate(model, mode, init, t, &mut rng).unwrap().final_state()[1]
        })
        .collect()
}

fn mean_and_var(xs: &[u32]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().map(|&x| x as f64).sum::<f64>() / n;
    let var = xs.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

#[test]
fn single_agent_ctmc_matches_exact_probability() {
    let model = builtin_example();
    let reps = 100_000;
    let hits = final_counts(&model, SimMode::Ctmc, &counts(&[1, 0]), 1000.0, reps, 2024);
    let p_hat = hits.iter().map(|&x| x as f64).sum::<f64>() / reps as f64;
    let p = 6.5598e-4;
    let se = (p * (1.0 - p) / reps as f64).sqrt();
    assert!((p_hat - p).abs() <= 4.0 * se, "p_hat = {p_hat}, se = {se}");
}

#[test]
fn agents_are_conserved_along_paths() {
    let model = builtin_example();
    let grid = uniform_grid(300.0, 301);
    for (r, mode) in [SimMode::Ctmc, SimMode::Slotted { resolution: 50.0 }]
        .into_iter()
        .enumerate()
    {
        let mut rng = replication_rng(7, r as u64);
        let path = simulate(&model, mode, &counts(&[25, 5]), 300.0, &mut rng).unwrap();
        for state in path.sample(&grid) {
            assert_eq!(state.iter().sum::<u32>(), 30);
        }
        assert!(path.jumps.windows(2).all(|w| w[0].time <= w[1].time));
        assert!(path.jumps.iter().all(|j| j.time <= 300.0));
    }
}

#[test]
fn zero_rates_give_constant_paths() {
    let model = load_model("states = a, b\n").unwrap();
    let mut rng = replication_rng(1, 0);
    assert!(simulate_ctmc(&model, &counts(&[2, 3]), 100.0, &mut rng)
        .unwrap()
        .jumps
        .is_empty());
    assert!(simulate_slotted(&model, &counts(&[2, 3]), 10.0, 100.0, &mut rng)
        .unwrap()
        .jumps
        .is_empty());
}

#[test]
fn paths_are_reproducible() {
    let model = builtin_example();
    for mode in [SimMode::Ctmc, SimMode::Slotted { resolution: 100.0 }] {
        let a = simulate(&model, mode, &counts(&[20, 0]), 500.0, &mut replication_rng(99, 3)).unwrap();
        let b = simulate(&model, mode, &counts(&[20, 0]), 500.0, &mut replication_rng(99, 3)).unwrap();
        let c = simulate(&model, mode, &counts(&[20, 0]), 500.0, &mut replication_rng(99, 4)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}

#[test]
fn single_agent_slot_probability() {
    let model = builtin_example();
    let p = model.slot_probability(1, &[1.0, 0.0], 0, 1, 100.0).unwrap();
    assert!((p - 3.2e-5 / 100.0).abs() < 1e-18);
}

/// Independent agents in a two-state slotted chain: after `k` slots each is
/// in `b` with probability `a / (a + b) (1 - (1 - eps (a + b))^k)`.
fn slotted_linear_case(alpha: f64, beta: f64, d: f64, n: u32, t: f64, reps: u64) {
    let doc = format!("states = a, b\nrate a -> b : {alpha}\nrate b -> a : {beta}\n");
    let model = load_model(&doc).unwrap();
    let eps = 1.0 / d;
    let k = (t * d + 1e-9).floor();
    let p = alpha / (alpha + beta) * (1.0 - (1.0 - eps * (alpha + beta)).powf(k));
    let xs = final_counts(&model, SimMode::Slotted { resolution: d }, &counts(&[n, 0]), t, reps, 5);
    let (mean, var) = mean_and_var(&xs);
    let nf = n as f64;
    let exact_var = nf * p * (1.0 - p);
    let se = (exact_var / reps as f64).sqrt();
    assert!((mean - nf * p).abs() <= 4.0 * se, "mean {mean} vs {}", nf * p);
    // variance of a sample variance ~ 2 sigma^4 / R for near-normal data
    let var_se = exact_var * (2.0 / reps as f64).sqrt() * 1.5;
    assert!((var - exact_var).abs() <= 4.0 * var_se, "var {var} vs {exact_var}");
}

#[test]
fn slotted_chain_matches_discrete_time_law_coarse() {
    slotted_linear_case(9.0, 9.0, 20.0, 5, 0.5, 40_000);
}

#[test]
fn slotted_chain_matches_discrete_time_law_fine() {
    // per-slot probabilities around 1e-6: the skip-ahead does the work
    slotted_linear_case(0.01, 0.02, 1e4, 50, 100.0, 20_000);
}

/// Kolmogorov-Smirnov distance between the empirical law of `xs` and the
/// exact distribution of the count in state 1.
fn ks_to_exact(xs: &[u32], exact_pmf: &[f64]) -> f64 {
    let mut hist = vec![0.0; exact_pmf.len()];
    for &x in xs {
        hist[x as usize] += 1.0 / xs.len() as f64;
    }
    let (mut fe, mut fx, mut d) = (0.0, 0.0, 0.0f64);
    for (h, p) in hist.iter().zip(exact_pmf) {
        fe += h;
        fx += p;
        d = d.max((fe - fx).abs());
    }
    d
}

#[test]
fn slotted_mode_approaches_ctmc_as_resolution_grows() {
    // fast rates make the slot discretization visible at D = 10
    let model = load_model("states = a, b\nrate a -> b : 9\nrate b -> a : 9\n").unwrap();
    let n = 10u32;
    let t = 0.1;
    let space = enumerate_states(2, n as u64, DEFAULT_STATE_CAP).unwrap();
    let gen = generator(&model, &space).unwrap();
    let dist = transient(&gen, &space.point_mass(&[n, 0]).unwrap(), t, 1e-14).unwrap();
    let mut pmf = vec![0.0; n as usize + 1];
    for (state, p) in space.states().iter().zip(&dist.probs) {
        pmf[state[1] as usize] += p;
    }
    let reps = 20_000;
    let ks: Vec<f64> = [10.0, 100.0, 1e4]
        .iter()
        .map(|&d| {
            let xs = final_counts(
                &model,
                SimMode::Slotted { resolution: d },
                &counts(&[n, 0]),
                t,
                reps,
                17,
            );
            ks_to_exact(&xs, &pmf)
        })
        .collect();
    let ctmc = final_counts(&model, SimMode::Ctmc, &counts(&[n, 0]), t, reps, 17);
    let ks_ctmc = ks_to_exact(&ctmc, &pmf);
    assert!(ks[0] > ks[1] && ks[1] > ks[2], "KS by resolution {ks:?}");
    // the finest resolution is within sampling noise of the exact law
    assert!(ks[2] < 1.63 / (reps as f64).sqrt(), "KS {ks:?}, ctmc {ks_ctmc}");
    assert!(ks_ctmc < 1.63 / (reps as f64).sqrt());
}

#[test]
fn ensemble_mean_agrees_with_exact_transient() {
    let model = builtin_example();
    let n = 10;
    let t = 200.0;
    let space = enumerate_states(2, n, DEFAULT_STATE_CAP).unwrap();
    let gen = generator(&model, &space).unwrap();
    let dist = transient(&gen, &space.point_mass(&[10, 0]).unwrap(), t, 1e-12).unwrap();
    let exact = expected_occupancy(&space, &dist);

    let mut config = SimConfig::new(n, SimMode::Ctmc, t, 10_000, 31);
    config.grid = vec![t];
    let stats = ensemble(&model, &config, &counts(&[10, 0]), None).unwrap();
    let (mean, se) = (stats.mean[0][1], stats.stderr[0][1]);
    assert!(
        (mean - exact.as_slice()[1]).abs() <= 4.0 * se,
        "{mean} +- {se} vs {:?}",
        exact
    );
}

#[test]
fn transition_counts_match_integrated_intensity() {
    // constant rates: E[Z_ab(t)] = N * int_0^t m_a(s) * rate ds
    let model = load_model("states = a, b\nrate a -> b : 1\nrate b -> a : 0.5\n").unwrap();
    let n = 20u64;
    let t = 2.0;
    let mut config = SimConfig::new(n, SimMode::Ctmc, t, 5000, 4);
    config.grid = vec![t];
    let stats = ensemble(&model, &config, &counts(&[20, 0]), None).unwrap();
    // m_a(s) = 1/3 + 2/3 e^{-1.5 s}
    let integral = t / 3.0 + 2.0 / 3.0 * (1.0 - (-1.5 * t).exp()) / 1.5;
    let expected = n as f64 * integral;
    let z: Vec<f64> = stats.final_transitions.iter().map(|z| z[1] as f64).collect();
    let mean = z.iter().sum::<f64>() / z.len() as f64;
    let sd = (z.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (z.len() - 1) as f64).sqrt();
    assert!((stats.mean_transitions[0][1] - mean).abs() < 1e-9);
    assert!(
        (mean - expected).abs() <= 4.0 * sd / (z.len() as f64).sqrt(),
        "{mean} vs {expected}"
    );
}
