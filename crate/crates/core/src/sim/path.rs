use rand::Rng;
use rand_distr::{Binomial, Distribution};

use crate::error::{Error, Result};
use crate::model::{CountVector, ModelSpec};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jump {
    pub time: f64,
    pub from: usize,
    pub to: usize,
    pub count: u32,
}

/// A piecewise-constant trajectory of counts: the initial state and every
/// jump up to the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub init: Vec<u32>,
    pub jumps: Vec<Jump>,
}

impl Path {
    /// Counts at each (non-decreasing) time in `times`, right-continuous.
    pub fn sample(&self, times: &[f64]) -> Vec<Vec<u32>> {
        let mut state = self.init.clone();
        let mut next = 0;
        times
            .iter()
            .map(|&t| {
                while next < self.jumps.len() && self.jumps[next].time <= t {
                    let j = self.jumps[next];
                    state[j.from] -= j.count;
                    state[j.to] += j.count;
                    next += 1;
                }
                state.clone()
            })
            .collect()
    }

    /// Cumulative `from -> to` jump counts at each time, flattened `from * I + to`.
    pub fn transition_counts(&self, times: &[f64]) -> Vec<Vec<u64>> {
        let dim = self.init.len();
        let mut z = vec![0u64; dim * dim];
        let mut next = 0;
        times
            .iter()
            .map(|&t| {
                while next < self.jumps.len() && self.jumps[next].time <= t {
                    let j = self.jumps[next];
                    z[j.from * dim + j.to] += j.count as u64;
                    next += 1;
                }
                z.clone()
            })
            .collect()
    }

    pub fn final_state(&self) -> Vec<u32> {
        let mut state = self.init.clone();
        for j in &self.jumps {
            state[j.from] -= j.count;
            state[j.to] += j.count;
        }
        state
    }
}

fn uniform_open<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    // (0, 1]
    1.0 - rng.random::<f64>()
}

/// Direct-method stochastic simulation of the lumped chain up to `t_end`.
pub fn simulate_ctmc<R: Rng + ?Sized>(model: &ModelSpec, init: &CountVector, t_end: f64, rng: &mut R) -> Result<Path> {
    let size = init.size() as f64;
    let mut counts = init.counts().to_vec();
    let mut m = vec![0.0; counts.len()];
    let mut props = vec![0.0; model.transitions().len()];
    let mut jumps = Vec::new();
    let mut t = 0.0;
    loop {
        for (mi, &c) in m.iter_mut().zip(&counts) {
            *mi = c as f64 / size;
        }
        let mut total = 0.0;
        for (p, tr) in props.iter_mut().zip(model.transitions()) {
            *p = if counts[tr.from] == 0 {
                0.0
            } else {
                counts[tr.from] as f64 * model.eval_transition(tr, size, &m)?
            };
            total += *p;
        }
        if total <= 0.0 {
            break;
        }
        t += -uniform_open(rng).ln() / total;
        if t > t_end {
            break;
        }
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut chosen = props.len() - 1;
        for (i, p) in props.iter().enumerate() {
            acc += p;
            if target < acc && *p > 0.0 {
                chosen = i;
                break;
            }
        }
        // guard against rounding at the top end
        while props[chosen] == 0.0 {
            chosen -= 1;
        }
        let tr = &model.transitions()[chosen];
        counts[tr.from] -= 1;
        counts[tr.to] += 1;
        jumps.push(Jump {
            time: t,
            from: tr.from,
            to: tr.to,
            count: 1,
        });
    }
    Ok(Path {
        init: init.counts().to_vec(),
        jumps,
    })
}

fn binomial<R: Rng + ?Sized>(rng: &mut R, n: u64, p: f64) -> u64 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    Binomial::new(n, p).expect("valid binomial parameters").sample(rng)
}

/// Discrete-time simulation on slots of length `1 / d`.
///
/// In each slot every agent in `s` independently moves to `s'` with
/// probability `Q_{s,s'}(m) / d`, `m` taken at the slot start; moves land at
/// the end of the slot. Runs of slots without any move are skipped with a
/// single geometric draw, and the slot that ends a run is sampled conditioned
/// on at least one move, which keeps fine resolutions cheap.
pub fn simulate_slotted<R: Rng + ?Sized>(
    model: &ModelSpec,
    init: &CountVector,
    d: f64,
    t_end: f64,
    rng: &mut R,
) -> Result<Path> {
    if !(d >= 1.0 && d.is_finite()) {
        return Err(Error::InvalidArgument(format!("time resolution must be >= 1, got {d}")));
    }
    let dim = model.dim();
    let size = init.size() as f64;
    let eps = 1.0 / d;
    let total_slots = (t_end * d + 1e-9).floor() as u64;
    let mut counts = init.counts().to_vec();
    let mut m = vec![0.0; dim];
    let mut probs = vec![0.0; model.transitions().len()];
    let mut leave = vec![0.0; dim];
    let mut jumps = Vec::new();
    let mut slot: u64 = 0;

    loop {
        for (mi, &c) in m.iter_mut().zip(&counts) {
            *mi = c as f64 / size;
        }
        leave.iter_mut().for_each(|q| *q = 0.0);
        for (p, tr) in probs.iter_mut().zip(model.transitions()) {
            *p = if counts[tr.from] == 0 {
                0.0
            } else {
                eps * model.eval_transition(tr, size, &m)?
            };
            leave[tr.from] += *p;
        }
        for (s, &total) in leave.iter().enumerate() {
            if total > 1.0 {
                return Err(Error::SlotOverflow {
                    state: model.state_names()[s].clone(),
                    total,
                });
            }
        }
        // log P(no agent moves in a slot), per group and in total
        let group_log: Vec<f64> = (0..dim)
            .map(|s| {
                if counts[s] == 0 || leave[s] == 0.0 {
                    0.0
                } else if leave[s] >= 1.0 {
                    f64::NEG_INFINITY
                } else {
                    counts[s] as f64 * (-leave[s]).ln_1p()
                }
            })
            .collect();
        let stay_log: f64 = group_log.iter().sum();
        if stay_log == 0.0 {
            break;
        }
        // slots until the next one with a move (>= 1)
        let wait = if stay_log == f64::NEG_INFINITY {
            1
        } else {
            1 + (uniform_open(rng).ln() / stay_log).floor() as u64
        };
        let end_slot = slot.saturating_add(wait);
        if end_slot > total_slots {
            break;
        }
        let time = end_slot as f64 * eps;

        let mut movers = vec![0u64; dim];
        let mut satisfied = false;
        let mut rest_log = stay_log;
        for s in 0..dim {
            let n_s = counts[s] as u64;
            let q = leave[s];
            if n_s == 0 || q == 0.0 {
                continue;
            }
            if satisfied {
                movers[s] = binomial(rng, n_s, q);
                continue;
            }
            let group_hit = -group_log[s].exp_m1();
            let any_hit = -rest_log.exp_m1();
            rest_log -= group_log[s];
            if rng.random::<f64>() * any_hit < group_hit {
                // index of the first mover within the group, given one exists
                let first = if q >= 1.0 {
                    0
                } else {
                    let u = rng.random::<f64>();
                    let i = ((1.0 - u * group_hit).ln() / (-q).ln_1p()).floor();
                    (i.max(0.0) as u64).min(n_s - 1)
                };
                movers[s] = 1 + binomial(rng, n_s - 1 - first, q);
                satisfied = true;
            }
        }
        debug_assert!(satisfied);

        let mut applied = vec![0u32; dim];
        for s in 0..dim {
            let mut left = movers[s];
            let mut weight_left = leave[s];
            for (p, tr) in probs.iter().zip(model.transitions()) {
                if tr.from != s || left == 0 || *p == 0.0 {
                    continue;
                }
                let share = (p / weight_left).min(1.0);
                let k = binomial(rng, left, share);
                weight_left -= p;
                left -= k;
                if k > 0 {
                    jumps.push(Jump {
                        time,
                        from: tr.from,
                        to: tr.to,
                        count: k as u32,
                    });
                    applied[tr.from] += k as u32;
                }
            }
            debug_assert_eq!(left, 0);
        }
        let start = jumps.len() - jumps.iter().rev().take_while(|j| j.time == time).count();
        for j in &jumps[start..] {
            counts[j.to] += j.count;
        }
        for s in 0..dim {
            counts[s] -= applied[s];
        }
        slot = end_slot;
    }
    Ok(Path {
        init: init.counts().to_vec(),
        jumps,
    })
}
