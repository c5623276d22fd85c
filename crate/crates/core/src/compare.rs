//! Side-by-side finite-N comparison of the drift ODE, the mean-drift ODE,
//! the exact lumped chain and (optionally) simulation, for a sweep over N.

use rayon::prelude::*;

use crate::error::Result;
use crate::exact::{enumerate_states, expected_occupancy, generator, state_space_size, transient};
use crate::model::{CountVector, ModelSpec, OccupancyMeasure, StateId};
use crate::odesolve::{solve, Variant};
use crate::sim::{ensemble, SimConfig, SimMode};

#[derive(Debug, Clone, PartialEq)]
pub struct SimColumn {
    pub reps: usize,
    pub seed: u64,
    pub mode: SimMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareOptions {
    /// State whose occupancy is reported.
    pub state: StateId,
    pub meandrift_tolerance: f64,
    pub step: Option<f64>,
    /// Largest lumped state space solved exactly.
    pub state_cap: usize,
    pub exact_tolerance: f64,
    pub sim: Option<SimColumn>,
}

impl Default for CompareOptions {
    fn default() -> Self {
        CompareOptions {
            state: 1,
            meandrift_tolerance: crate::meandrift::DEFAULT_TOLERANCE,
            step: None,
            state_cap: crate::exact::DEFAULT_STATE_CAP,
            exact_tolerance: 1e-10,
            sim: None,
        }
    }
}

/// One N of the sweep. A cell that could not be computed is `None` and
/// the reason is kept in `notes`.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub n: u64,
    pub drift: Option<f64>,
    pub meandrift: Option<f64>,
    pub exact: Option<f64>,
    pub sim_mean: Option<f64>,
    pub sim_stderr: Option<f64>,
    pub notes: Vec<String>,
}

fn cell(notes: &mut Vec<String>, name: &str, value: Result<f64>) -> Option<f64> {
    match value {
        Ok(v) => Some(v),
        Err(e) => {
            notes.push(format!("{name}: {e}"));
            None
        }
    }
}

fn compare_one(model: &ModelSpec, n: u64, t: f64, init: &OccupancyMeasure, options: &CompareOptions) -> CompareRow {
    let s = options.state;
    let mut notes = Vec::new();
    let drift = solve(model, Variant::Drift, n, init, t, &[], options.step).map(|traj| traj.last()[s]);
    let drift = cell(&mut notes, "drift", drift);
    let variant = Variant::MeanDrift {
        tolerance: options.meandrift_tolerance,
    };
    let meandrift = solve(model, variant, n, init, t, &[], options.step).map(|traj| traj.last()[s]);
    let meandrift = cell(&mut notes, "meandrift", meandrift);

    let exact = if state_space_size(model.dim(), n) <= options.state_cap as f64 {
        let value = (|| {
            let space = enumerate_states(model.dim(), n, options.state_cap)?;
            let gen = generator(model, &space)?;
            let start = CountVector::from_occupancy(init, n)?;
            let dist = transient(&gen, &space.point_mass(start.counts())?, t, options.exact_tolerance)?;
            Ok(expected_occupancy(&space, &dist).as_slice()[s])
        })();
        cell(&mut notes, "exact", value)
    } else {
        notes.push(format!(
            "exact: skipped, more than {} lattice states",
            options.state_cap
        ));
        None
    };

    let (sim_mean, sim_stderr) = match &options.sim {
        Some(sim) => {
            let stats = CountVector::from_occupancy(init, n).and_then(|start| {
                let mut config = SimConfig::new(n, sim.mode, t, sim.reps, sim.seed);
                config.grid = vec![t];
                ensemble(model, &config, &start, None)
            });
            match stats {
                Ok(stats) => (Some(stats.mean[0][s]), Some(stats.stderr[0][s])),
                Err(e) => {
                    notes.push(format!("sim: {e}"));
                    (None, None)
                }
            }
        }
        None => (None, None),
    };
    CompareRow {
        n,
        drift,
        meandrift,
        exact,
        sim_mean,
        sim_stderr,
        notes,
    }
}

/// Evaluate every column at time `t` for each population size in `ns`,
/// in parallel; rows come back in the order of `ns`.
pub fn compare(
    model: &ModelSpec,
    ns: &[u64],
    t: f64,
    init: &OccupancyMeasure,
    options: &CompareOptions,
) -> Vec<CompareRow> {
    ns.par_iter()
        .map(|&n| compare_one(model, n, t, init, options))
        .collect()
}
