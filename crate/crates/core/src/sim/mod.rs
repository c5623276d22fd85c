//! Stochastic simulation of the population process and ensemble statistics.

mod diagnostics;
mod path;

use std::fmt;
use std::str::FromStr;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{CountVector, ModelSpec, StateId};
use crate::odesolve::Trajectory;

pub use diagnostics::{
    binomial_marginal_fit, generator_check, ks_statistic, poisson_marginal_fit, poisson_pmf, GeneratorReport,
};
pub use path::{simulate_ctmc, simulate_slotted, Jump, Path};

/// Number of grid points used when no sample grid is given.
pub const DEFAULT_GRID_POINTS: usize = 1000;

/// Replications handled by one parallel work unit.
const CHUNK: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SimMode {
    Ctmc,
    /// Slots of length `1 / resolution`.
    Slotted {
        resolution: f64,
    },
}

impl fmt::Display for SimMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SimMode::Ctmc => f.write_str("ctmc"),
            SimMode::Slotted { resolution } => write!(f, "slotted:{resolution}"),
        }
    }
}

impl FromStr for SimMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "ctmc" {
            return Ok(SimMode::Ctmc);
        }
        let bad = || Error::InvalidArgument(format!("mode must be `ctmc` or `slotted:<D>`, got `{s}`"));
        let d = s.strip_prefix("slotted:").ok_or_else(bad)?;
        let resolution: f64 = d.trim().parse().map_err(|_| bad())?;
        if !(resolution >= 1.0 && resolution.is_finite()) {
            return Err(Error::InvalidArgument(format!("time resolution must be >= 1, got {d}")));
        }
        Ok(SimMode::Slotted { resolution })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub n: u64,
    pub mode: SimMode,
    pub t_end: f64,
    pub reps: usize,
    pub seed: u64,
    /// Sample times, non-decreasing, inside `[0, t_end]`.
    pub grid: Vec<f64>,
    /// `(time, state)` pairs at which to histogram the count `N * M_state`.
    pub histograms: Vec<(f64, StateId)>,
}

impl SimConfig {
    pub fn new(n: u64, mode: SimMode, t_end: f64, reps: usize, seed: u64) -> Self {
        SimConfig {
            n,
            mode,
            t_end,
            reps,
            seed,
            grid: uniform_grid(t_end, DEFAULT_GRID_POINTS),
            histograms: Vec::new(),
        }
    }

    fn check(&self, model: &ModelSpec, init: &CountVector) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::InvalidArgument("replication count must be at least 1".into()));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "end time must be non-negative, got {}",
                self.t_end
            )));
        }
        if init.size() != self.n {
            return Err(Error::InvalidArgument(format!(
                "initial counts sum to {}, population is {}",
                init.size(),
                self.n
            )));
        }
        if init.counts().len() != model.dim() {
            return Err(Error::InvalidArgument(format!(
                "initial counts have {} entries, model has {} states",
                init.counts().len(),
                model.dim()
            )));
        }
        if self.grid.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidArgument("sample grid must be non-decreasing".into()));
        }
        if self.grid.iter().any(|&t| !(0.0..=self.t_end).contains(&t)) {
            return Err(Error::InvalidArgument("sample grid must lie inside [0, t_end]".into()));
        }
        for &(t, s) in &self.histograms {
            if !(0.0..=self.t_end).contains(&t) || s >= model.dim() {
                return Err(Error::InvalidArgument(format!("invalid histogram request ({t}, {s})")));
            }
        }
        if let SimMode::Slotted { resolution } = self.mode {
            if !(resolution >= 1.0 && resolution.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "time resolution must be >= 1, got {resolution}"
                )));
            }
        }
        Ok(())
    }
}

/// `points` equally spaced times from 0 to `t_end` inclusive.
pub fn uniform_grid(t_end: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![t_end],
        _ => (0..points).map(|i| t_end * i as f64 / (points - 1) as f64).collect(),
    }
}

/// Random stream of replication `index`: the master seed keys the
/// generator and the index selects an independent stream.
pub fn replication_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Simulate one path in the configured mode.
pub fn simulate(
    model: &ModelSpec,
    mode: SimMode,
    init: &CountVector,
    t_end: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Path> {
    match mode {
        SimMode::Ctmc => simulate_ctmc(model, init, t_end, rng),
        SimMode::Slotted { resolution } => simulate_slotted(model, init, resolution, t_end, rng),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub time: f64,
    pub state: StateId,
    /// `counts[k]` replications had exactly `k` agents in `state`.
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimStats {
    pub n: u64,
    pub grid: Vec<f64>,
    /// Empirical mean occupancy per grid time.
    pub mean: Vec<Vec<f64>>,
    /// Standard error of `mean`.
    pub stderr: Vec<Vec<f64>>,
    /// Per-replication sup over the grid of the Euclidean distance to the
    /// reference; empty without a reference.
    pub sup_distances: Vec<f64>,
    /// Mean of the squared sup-distances.
    pub mse_sup: Option<f64>,
    /// Mean cumulative `from -> to` jump counts per grid time, flattened
    /// `from * I + to`.
    pub mean_transitions: Vec<Vec<f64>>,
    /// Cumulative jump counts at `t_end` for every completed replication.
    pub final_transitions: Vec<Vec<u64>>,
    pub histograms: Vec<Histogram>,
    pub completed: usize,
    pub failed: usize,
}

struct Outcome {
    occupancy: Vec<Vec<u32>>,
    transitions: Vec<Vec<u64>>,
    final_transitions: Vec<u64>,
    hist_values: Vec<u32>,
    sup: Option<f64>,
}

struct Partial {
    sum: Vec<Vec<f64>>,
    sum_sq: Vec<Vec<f64>>,
    z_sum: Vec<Vec<f64>>,
    hist: Vec<Vec<u64>>,
    sups: Vec<f64>,
    finals: Vec<Vec<u64>>,
    completed: usize,
    failures: Vec<(usize, Error)>,
}

impl Partial {
    fn new(grid: usize, dim: usize, hists: usize, n: u64) -> Self {
        Partial {
            sum: vec![vec![0.0; dim]; grid],
            sum_sq: vec![vec![0.0; dim]; grid],
            z_sum: vec![vec![0.0; dim * dim]; grid],
            hist: vec![vec![0; n as usize + 1]; hists],
            sups: Vec::new(),
            finals: Vec::new(),
            completed: 0,
            failures: Vec::new(),
        }
    }

    fn add(&mut self, n: u64, outcome: Outcome) {
        let size = n as f64;
        for (g, counts) in outcome.occupancy.iter().enumerate() {
            for (i, &c) in counts.iter().enumerate() {
                let x = c as f64 / size;
                self.sum[g][i] += x;
                self.sum_sq[g][i] += x * x;
            }
        }
        for (g, z) in outcome.transitions.iter().enumerate() {
            for (acc, &v) in self.z_sum[g].iter_mut().zip(z) {
                *acc += v as f64;
            }
        }
        for (h, &k) in outcome.hist_values.iter().enumerate() {
            self.hist[h][k as usize] += 1;
        }
        if let Some(s) = outcome.sup {
            self.sups.push(s);
        }
        self.finals.push(outcome.final_transitions);
        self.completed += 1;
    }

    fn merge(&mut self, other: Partial) {
        let add_rows = |a: &mut Vec<Vec<f64>>, b: &[Vec<f64>]| {
            for (ra, rb) in a.iter_mut().zip(b) {
                for (x, y) in ra.iter_mut().zip(rb) {
                    *x += y;
                }
            }
        };
        add_rows(&mut self.sum, &other.sum);
        add_rows(&mut self.sum_sq, &other.sum_sq);
        add_rows(&mut self.z_sum, &other.z_sum);
        for (ha, hb) in self.hist.iter_mut().zip(&other.hist) {
            for (x, y) in ha.iter_mut().zip(hb) {
                *x += y;
            }
        }
        self.sups.extend(other.sups);
        self.finals.extend(other.finals);
        self.completed += other.completed;
        self.failures.extend(other.failures);
    }
}

fn run_replication(
    model: &ModelSpec,
    config: &SimConfig,
    init: &CountVector,
    reference: Option<&[Vec<f64>]>,
    hist_order: &[usize],
    index: u64,
) -> Result<Outcome> {
    let mut rng = replication_rng(config.seed, index);
    let path = simulate(model, config.mode, init, config.t_end, &mut rng)?;
    let occupancy = path.sample(&config.grid);
    let transitions = path.transition_counts(&config.grid);
    let final_transitions = path.transition_counts(&[config.t_end]).pop().unwrap_or_default();

    let hist_times: Vec<f64> = hist_order.iter().map(|&h| config.histograms[h].0).collect();
    let sampled = path.sample(&hist_times);
    let mut hist_values = vec![0u32; config.histograms.len()];
    for (slot, &h) in hist_order.iter().enumerate() {
        hist_values[h] = sampled[slot][config.histograms[h].1];
    }

    let size = config.n as f64;
    let sup = reference.map(|phi| {
        occupancy
            .iter()
            .zip(phi)
            .map(|(counts, p)| {
                counts
                    .iter()
                    .zip(p)
                    .map(|(&c, &pi)| (c as f64 / size - pi).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max)
    });
    Ok(Outcome {
        occupancy,
        transitions,
        final_transitions,
        hist_values,
        sup,
    })
}

/// Run `config.reps` independent replications from `init`.
///
/// Replication `r` draws from [`replication_rng`]`(seed, r)`; work is split
/// into fixed chunks whose partial sums are combined in index order, so the
/// result does not depend on the thread count. Up to 1% of replications may
/// fail; they are skipped and counted.
pub fn ensemble(
    model: &ModelSpec,
    config: &SimConfig,
    init: &CountVector,
    reference: Option<&Trajectory>,
) -> Result<SimStats> {
    config.check(model, init)?;
    let dim = model.dim();
    let reference_points: Option<Vec<Vec<f64>>> = match reference {
        Some(traj) => {
            if traj.points[0].len() != dim {
                return Err(Error::InvalidArgument(
                    "reference dimension does not match the model".into(),
                ));
            }
            let covered = traj.times.last().copied().unwrap_or(0.0);
            if config.grid.last().is_some_and(|&t| t > covered * (1.0 + 1e-12)) {
                return Err(Error::InvalidArgument(format!(
                    "reference ends at {covered}, before the last sample time"
                )));
            }
            Some(config.grid.iter().map(|&t| traj.at(t)).collect())
        }
        None => None,
    };
    let mut hist_order: Vec<usize> = (0..config.histograms.len()).collect();
    hist_order.sort_by(|&a, &b| config.histograms[a].0.total_cmp(&config.histograms[b].0));

    let chunks = config.reps.div_ceil(CHUNK);
    let partials: Vec<Partial> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut part = Partial::new(config.grid.len(), dim, config.histograms.len(), config.n);
            let end = ((c + 1) * CHUNK).min(config.reps);
            for r in c * CHUNK..end {
                match run_replication(model, config, init, reference_points.as_deref(), &hist_order, r as u64) {
                    Ok(outcome) => part.add(config.n, outcome),
                    Err(e) => part.failures.push((r, e)),
                }
            }
            part
        })
        .collect();
    let mut total = Partial::new(config.grid.len(), dim, config.histograms.len(), config.n);
    for part in partials {
        total.merge(part);
    }

    let failed = total.failures.len();
    if failed * 100 > config.reps {
        let (first_index, first) = total.failures.into_iter().next().expect("at least one failure");
        return Err(Error::ReplicationFailures {
            failed,
            total: config.reps,
            first_index,
            first: Box::new(first),
        });
    }
    let r = total.completed as f64;
    let mean: Vec<Vec<f64>> = total
        .sum
        .iter()
        .map(|row| row.iter().map(|s| s / r).collect())
        .collect();
    let stderr = mean
        .iter()
        .zip(&total.sum_sq)
        .map(|(mu, sq)| {
            mu.iter()
                .zip(sq)
                .map(|(&m, &s)| {
                    if total.completed < 2 {
                        0.0
                    } else {
                        ((s - r * m * m).max(0.0) / (r - 1.0) / r).sqrt()
                    }
                })
                .collect()
        })
        .collect();
    let mean_transitions = total
        .z_sum
        .iter()
        .map(|row| row.iter().map(|s| s / r).collect())
        .collect();
    let mse_sup = reference.map(|_| total.sups.iter().map(|s| s * s).sum::<f64>() / r);
    let histograms = config
        .histograms
        .iter()
        .zip(total.hist)
        .map(|(&(time, state), counts)| Histogram { time, state, counts })
        .collect();
    Ok(SimStats {
        n: config.n,
        grid: config.grid.clone(),
        mean,
        stderr,
        sup_distances: total.sups,
        mse_sup,
        mean_transitions,
        final_transitions: total.finals,
        histograms,
        completed: total.completed,
        failed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drift::FieldKind;
    use crate::model::{builtin_example, load_model};

    fn counts(v: &[u32]) -> CountVector {
        CountVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("ctmc".parse::<SimMode>().unwrap(), SimMode::Ctmc);
        assert_eq!(
            "slotted:100".parse::<SimMode>().unwrap(),
            SimMode::Slotted { resolution: 100.0 }
        );
        assert!("slotted:0.5".parse::<SimMode>().is_err());
        assert!("slotted".parse::<SimMode>().is_err());
        assert!("gillespie".parse::<SimMode>().is_err());
    }

    #[test]
    fn grid_shape() {
        let g = uniform_grid(200.0, DEFAULT_GRID_POINTS);
        assert_eq!(g.len(), 1000);
        assert_eq!(g[0], 0.0);
        assert_eq!(*g.last().unwrap(), 200.0);
    }

    #[test]
    fn zero_rate_model_matches_constant_reference() {
        let model = load_model("states = a, b\n").unwrap();
        let init = counts(&[3, 7]);
        let reference = Trajectory {
            times: vec![0.0, 10.0],
            points: vec![vec![0.3, 0.7], vec![0.3, 0.7]],
            kind: FieldKind::Custom,
            n: None,
            step: 1.0,
        };
        for mode in [SimMode::Ctmc, SimMode::Slotted { resolution: 10.0 }] {
            let mut config = SimConfig::new(10, mode, 10.0, 20, 1);
            config.grid = uniform_grid(10.0, 11);
            let stats = ensemble(&model, &config, &init, Some(&reference)).unwrap();
            assert_eq!(stats.mse_sup, Some(0.0));
            assert!(stats
                .mean
                .iter()
                .all(|m| (m[0] - 0.3).abs() < 1e-15 && (m[1] - 0.7).abs() < 1e-15));
            assert!(stats.final_transitions.iter().all(|z| z.iter().all(|&v| v == 0)));
        }
    }

    #[test]
    fn histograms_count_every_replication() {
        let model = builtin_example();
        let mut config = SimConfig::new(10, SimMode::Ctmc, 50.0, 100, 3);
        config.histograms = vec![(50.0, 1), (10.0, 0)];
        let stats = ensemble(&model, &config, &counts(&[10, 0]), None).unwrap();
        assert_eq!(stats.completed, 100);
        for h in &stats.histograms {
            assert_eq!(h.total(), 100);
            assert_eq!(h.counts.len(), 11);
        }
        assert_eq!(stats.histograms[1].state, 0);
        assert!(stats.mse_sup.is_none());
    }

    #[test]
    fn transition_counts_are_monotone() {
        let model = builtin_example();
        let config = SimConfig::new(20, SimMode::Ctmc, 200.0, 50, 5);
        let stats = ensemble(&model, &config, &counts(&[20, 0]), None).unwrap();
        for w in stats.mean_transitions.windows(2) {
            for (a, b) in w[0].iter().zip(&w[1]) {
                assert!(b >= a);
            }
        }
        // net flow: agents in state 2 = jumps in - jumps out
        let last = stats.mean.last().unwrap();
        let z = stats.mean_transitions.last().unwrap();
        assert!((20.0 * last[1] - (z[1] - z[2])).abs() < 1e-9);
    }

    #[test]
    fn independent_of_thread_count() {
        let model = builtin_example();
        let mut config = SimConfig::new(20, SimMode::Ctmc, 100.0, 200, 11);
        config.histograms = vec![(100.0, 1)];
        let init = counts(&[20, 0]);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| ensemble(&model, &config, &init, None).unwrap())
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn rejects_bad_configs() {
        let model = builtin_example();
        let init = counts(&[10, 0]);
        let mut config = SimConfig::new(10, SimMode::Ctmc, 10.0, 0, 1);
        assert!(ensemble(&model, &config, &init, None).is_err());
        config.reps = 5;
        config.grid = vec![0.0, 20.0];
        assert!(ensemble(&model, &config, &init, None).is_err());
        config.grid = vec![0.0, 5.0];
        assert!(ensemble(&model, &config, &counts(&[5, 0]), None).is_err());
        config.histograms = vec![(5.0, 2)];
        assert!(ensemble(&model, &config, &init, None).is_err());
    }

    #[test]
    fn failures_abort_the_ensemble() {
        let model = load_model("states = a, b\nrate a -> b : 1/(m[a] - 0.5)\n").unwrap();
        let config = SimConfig::new(2, SimMode::Ctmc, 10.0, 10, 1);
        let err = ensemble(&model, &config, &counts(&[1, 1]), None).unwrap_err();
        assert!(matches!(
            err,
            Error::ReplicationFailures {
                failed: 10,
                total: 10,
                ..
            }
        ));
    }

    #[test]
    fn slot_overflow_is_reported() {
        let model = load_model("states = a, b\nrate a -> b : 3\n").unwrap();
        let config = SimConfig::new(5, SimMode::Slotted { resolution: 2.0 }, 10.0, 1, 1);
        let err = ensemble(&model, &config, &counts(&[5, 0]), None).unwrap_err();
        match err {
            Error::ReplicationFailures { first, .. } => {
                assert!(matches!(*first, Error::SlotOverflow { .. }));
                assert!(first.to_string().contains("time resolution"));
            }
            other => panic!("unexpected {other}"),
        }
    }
}
