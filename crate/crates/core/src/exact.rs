//! Exact transient analysis of the lumped population chain by
//! uniformization.
//!
//! The chain lives on count vectors `n` with `sum n = N`. A move of one agent
//! from `s` to `s'` happens at rate `n_s Q_{s,s'}(n / N)`.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::meandrift::poisson_weights;
use crate::model::{ModelSpec, OccupancyMeasure};

pub const DEFAULT_STATE_CAP: usize = 1_000_000;

/// Largest `Lambda * dt` handled in one uniformization segment.
const SEGMENT_LOAD: f64 = 1e4;
const MAX_STEPS: f64 = 1e9;

/// All count vectors of `dim` states summing to `n`, in lexicographic order.
#[derive(Debug, Clone)]
pub struct LumpedStateSpace {
    n: u64,
    dim: usize,
    states: Vec<Vec<u32>>,
    index: HashMap<Vec<u32>, usize>,
}

fn binomial(n: u64, k: u64) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

pub fn state_space_size(dim: usize, n: u64) -> f64 {
    binomial(n + dim as u64 - 1, dim as u64 - 1).round()
}

pub fn enumerate_states(dim: usize, n: u64, cap: usize) -> Result<LumpedStateSpace> {
    if dim < 1 || n == 0 {
        return Err(Error::InvalidArgument("need at least one state and one agent".into()));
    }
    let size = state_space_size(dim, n);
    if size > cap as f64 {
        return Err(Error::StateSpaceTooLarge { size, cap });
    }
    let mut states = Vec::with_capacity(size as usize);
    let mut current = vec![0u32; dim];
    fill(&mut states, &mut current, 0, n as u32);
    let index = states.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
    Ok(LumpedStateSpace { n, dim, states, index })
}

fn fill(out: &mut Vec<Vec<u32>>, current: &mut Vec<u32>, pos: usize, remaining: u32) {
    if pos + 1 == current.len() {
        current[pos] = remaining;
        out.push(current.clone());
        return;
    }
    for c in 0..=remaining {
        current[pos] = c;
        fill(out, current, pos + 1, remaining - c);
    }
}

impl LumpedStateSpace {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn population(&self) -> u64 {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn states(&self) -> &[Vec<u32>] {
        &self.states
    }

    pub fn index_of(&self, counts: &[u32]) -> Option<usize> {
        self.index.get(counts).copied()
    }

    pub fn point_mass(&self, counts: &[u32]) -> Result<LumpedDistribution> {
        let idx = self
            .index_of(counts)
            .ok_or_else(|| Error::InvalidArgument(format!("{counts:?} is not a state of this space")))?;
        let mut probs = vec![0.0; self.len()];
        probs[idx] = 1.0;
        Ok(LumpedDistribution { probs, time: 0.0 })
    }
}

/// Generator in compressed-row form; the diagonal is kept separately.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseGenerator {
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    diag: Vec<f64>,
}

impl SparseGenerator {
    /// Build from off-diagonal `(row, col, rate)` triplets; repeated entries add up.
    pub fn from_rates(size: usize, mut entries: Vec<(usize, usize, f64)>) -> Result<Self> {
        entries.retain(|&(_, _, r)| r != 0.0);
        entries.sort_by_key(|&(i, j, _)| (i, j));
        let mut row_ptr = vec![0usize; size + 1];
        let mut cols = Vec::with_capacity(entries.len());
        let mut vals: Vec<f64> = Vec::with_capacity(entries.len());
        let mut diag = vec![0.0; size];
        let mut last = None;
        for (i, j, r) in entries {
            if i >= size || j >= size || i == j || !r.is_finite() || r < 0.0 {
                return Err(Error::InvalidArgument(format!("bad generator entry ({i}, {j}, {r})")));
            }
            diag[i] -= r;
            if last == Some((i, j)) {
                *vals.last_mut().expect("previous entry") += r;
            } else {
                cols.push(j);
                vals.push(r);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..size {
            row_ptr[i + 1] += row_ptr[i];
        }
        Ok(SparseGenerator {
            row_ptr,
            cols,
            vals,
            diag,
        })
    }

    pub fn size(&self) -> usize {
        self.diag.len()
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diag
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[range.clone()]
            .iter()
            .copied()
            .zip(self.vals[range].iter().copied())
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.row(i).map(|(_, r)| r).sum::<f64>() + self.diag[i]
    }

    /// `out = v (I + G / lambda)`.
    fn uniformized_step(&self, v: &[f64], lambda: f64, out: &mut [f64]) {
        for (o, (vi, d)) in out.iter_mut().zip(v.iter().zip(&self.diag)) {
            *o = vi * (1.0 + d / lambda);
        }
        for (i, &vi) in v.iter().enumerate() {
            if vi == 0.0 {
                continue;
            }
            for (j, r) in self.row(i) {
                out[j] += vi * r / lambda;
            }
        }
    }
}

/// Generator of the lumped chain of `model` on `space`.
pub fn generator(model: &ModelSpec, space: &LumpedStateSpace) -> Result<SparseGenerator> {
    if model.dim() != space.dim() {
        return Err(Error::InvalidArgument("model and state space dimensions differ".into()));
    }
    let size = space.population() as f64;
    let mut entries = Vec::new();
    let mut m = vec![0.0; space.dim()];
    let mut target = vec![0u32; space.dim()];
    for (i, counts) in space.states().iter().enumerate() {
        for (mi, &c) in m.iter_mut().zip(counts) {
            *mi = c as f64 / size;
        }
        for t in model.transitions() {
            if counts[t.from] == 0 {
                continue;
            }
            let rate = counts[t.from] as f64 * model.eval_transition(t, size, &m)?;
            if rate == 0.0 {
                continue;
            }
            target.copy_from_slice(counts);
            target[t.from] -= 1;
            target[t.to] += 1;
            let j = space.index_of(&target).expect("moves stay in the state space");
            entries.push((i, j, rate));
        }
    }
    SparseGenerator::from_rates(space.len(), entries)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LumpedDistribution {
    pub probs: Vec<f64>,
    pub time: f64,
}

/// Distribution after time `t`, starting from `init`, with neglected
/// Poisson tail mass at most `tol`.
pub fn transient(gen: &SparseGenerator, init: &LumpedDistribution, t: f64, tol: f64) -> Result<LumpedDistribution> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::InvalidArgument(format!("time must be non-negative, got {t}")));
    }
    if !(tol > 0.0 && tol < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "tolerance must lie in (0, 1), got {tol}"
        )));
    }
    if init.probs.len() != gen.size() {
        return Err(Error::InvalidArgument("distribution and generator sizes differ".into()));
    }
    let max_exit = gen.diagonal().iter().fold(0.0f64, |acc, d| acc.max(d.abs()));
    if max_exit == 0.0 || t == 0.0 {
        return Ok(LumpedDistribution {
            probs: init.probs.clone(),
            time: init.time + t,
        });
    }
    let lambda = max_exit + 1e-12;
    let load = lambda * t;
    let segments = (load / SEGMENT_LOAD).ceil().max(1.0);
    let weights = poisson_weights(load / segments, tol / segments);
    let steps = weights.k_max() as f64 * segments;
    if steps > MAX_STEPS {
        return Err(Error::TooManySteps { steps });
    }

    let mut current = init.probs.clone();
    let mut v = vec![0.0; current.len()];
    let mut next = vec![0.0; current.len()];
    for _ in 0..segments as u64 {
        v.copy_from_slice(&current);
        current.iter_mut().for_each(|x| *x = 0.0);
        for k in 0..=weights.k_max() {
            if k >= weights.k_min {
                let w = weights.probs[(k - weights.k_min) as usize];
                for (c, vi) in current.iter_mut().zip(&v) {
                    *c += w * vi;
                }
            }
            if k < weights.k_max() {
                gen.uniformized_step(&v, lambda, &mut next);
                std::mem::swap(&mut v, &mut next);
            }
        }
        let mass: f64 = current.iter().sum();
        current.iter_mut().for_each(|x| *x /= mass);
    }
    Ok(LumpedDistribution {
        probs: current,
        time: init.time + t,
    })
}

/// Mean occupancy `sum_n pi(n) n / N`.
pub fn expected_occupancy(space: &LumpedStateSpace, dist: &LumpedDistribution) -> OccupancyMeasure {
    let size = space.population() as f64;
    let mut mean = vec![0.0; space.dim()];
    for (counts, p) in space.states().iter().zip(&dist.probs) {
        for (m, &c) in mean.iter_mut().zip(counts) {
            *m += p * c as f64 / size;
        }
    }
    let total: f64 = mean.iter().sum();
    mean.iter_mut().for_each(|m| *m /= total);
    OccupancyMeasure::new(mean).expect("mean of a distribution lies on the simplex")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{builtin_example, load_model};
    use proptest::prelude::*;

    const LAMBDA: f64 = 3.2e-5;
    const MU: f64 = 0.04875;

    fn two_state_backoff(t: f64) -> f64 {
        LAMBDA / (LAMBDA + MU) * (1.0 - (-(LAMBDA + MU) * t).exp())
    }

    #[test]
    fn enumeration() {
        let space = enumerate_states(2, 3, DEFAULT_STATE_CAP).unwrap();
        assert_eq!(space.states(), &[vec![0, 3], vec![1, 2], vec![2, 1], vec![3, 0]]);
        assert_eq!(enumerate_states(3, 2, DEFAULT_STATE_CAP).unwrap().len(), 6);
        assert_eq!(enumerate_states(2, 1600, DEFAULT_STATE_CAP).unwrap().len(), 1601);
        let space = enumerate_states(4, 7, DEFAULT_STATE_CAP).unwrap();
        assert_eq!(space.len() as f64, state_space_size(4, 7));
        let mut sorted = space.states().to_vec();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted, space.states());
        assert!(matches!(
            enumerate_states(5, 1000, DEFAULT_STATE_CAP),
            Err(Error::StateSpaceTooLarge { .. })
        ));
    }

    #[test]
    fn single_agent_generator() {
        let model = builtin_example();
        let space = enumerate_states(2, 1, DEFAULT_STATE_CAP).unwrap();
        let gen = generator(&model, &space).unwrap();
        // states: (0,1) backoff, (1,0) idle
        let up: Vec<_> = gen.row(1).collect();
        let down: Vec<_> = gen.row(0).collect();
        assert_eq!(up.len(), 1);
        assert_eq!(up[0].0, 0);
        assert!((up[0].1 - LAMBDA).abs() < 1e-18);
        assert!((down[0].1 - MU).abs() < 1e-17);
        for i in 0..gen.size() {
            assert_eq!(gen.row_sum(i), 0.0);
        }
    }

    #[test]
    fn zero_model_generator_and_transient() {
        let model = load_model("states = a, b, c\n").unwrap();
        let space = enumerate_states(3, 4, DEFAULT_STATE_CAP).unwrap();
        let gen = generator(&model, &space).unwrap();
        assert!(gen.diagonal().iter().all(|&d| d == 0.0));
        let init = space.point_mass(&[1, 2, 1]).unwrap();
        let out = transient(&gen, &init, 100.0, 1e-12).unwrap();
        assert_eq!(out.probs, init.probs);
    }

    #[test]
    fn matches_two_state_closed_form() {
        let model = builtin_example();
        let space = enumerate_states(2, 1, DEFAULT_STATE_CAP).unwrap();
        let gen = generator(&model, &space).unwrap();
        let init = space.point_mass(&[1, 0]).unwrap();
        for t in [1.0, 10.0, 100.0, 1000.0] {
            let out = transient(&gen, &init, t, 1e-12).unwrap();
            let p = out.probs[space.index_of(&[0, 1]).unwrap()];
            assert!((p - two_state_backoff(t)).abs() <= 1e-9, "t = {t}");
        }
        let out = transient(&gen, &init, 1000.0, 1e-12).unwrap();
        let occ = expected_occupancy(&space, &out);
        assert!((occ.as_slice()[1] - 6.5598e-4).abs() < 1e-8);
        assert!((occ.as_slice()[0] - (1.0 - 6.5598e-4)).abs() < 1e-8);
    }

    #[test]
    fn expected_occupancy_examples() {
        let space = enumerate_states(2, 1, DEFAULT_STATE_CAP).unwrap();
        let dist = space.point_mass(&[1, 0]).unwrap();
        assert_eq!(expected_occupancy(&space, &dist).as_slice(), &[1.0, 0.0]);
        let space = enumerate_states(2, 3, DEFAULT_STATE_CAP).unwrap();
        let dist = LumpedDistribution {
            probs: vec![0.5, 0.0, 0.0, 0.5],
            time: 0.0,
        };
        assert_eq!(expected_occupancy(&space, &dist).as_slice(), &[0.5, 0.5]);
    }

    #[test]
    fn tolerance_refinement() {
        let model = builtin_example();
        let space = enumerate_states(2, 30, DEFAULT_STATE_CAP).unwrap();
        let gen = generator(&model, &space).unwrap();
        let init = space.point_mass(&[30, 0]).unwrap();
        let a = transient(&gen, &init, 300.0, 1e-8).unwrap();
        let b = transient(&gen, &init, 300.0, 1e-12).unwrap();
        let diff = a
            .probs
            .iter()
            .zip(&b.probs)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(diff <= 1e-7);
    }

    #[test]
    fn segmented_run_matches_single_segment() {
        // load above one segment triggers splitting
        let model = builtin_example();
        let space = enumerate_states(2, 1, DEFAULT_STATE_CAP).unwrap();
        let gen = generator(&model, &space).unwrap();
        let init = space.point_mass(&[1, 0]).unwrap();
        let t = 3.0e5;
        let out = transient(&gen, &init, t, 1e-12).unwrap();
        let p = out.probs[space.index_of(&[0, 1]).unwrap()];
        assert!((p - two_state_backoff(t)).abs() <= 1e-9);
    }

    proptest! {
        #[test]
        fn random_generators_conserve_mass(
            n in 1u64..=10,
            rates in proptest::collection::vec(0.0f64..5.0, 1..40),
            t in 0.0f64..20.0,
        ) {
            let space = enumerate_states(2, n, DEFAULT_STATE_CAP).unwrap();
            let size = space.len();
            let entries: Vec<_> = rates
                .iter()
                .enumerate()
                .map(|(k, &r)| {
                    let i = k % size;
                    let j = (k * 7 + 1) % size;
                    (i, j, r)
                })
                .filter(|&(i, j, _)| i != j)
                .collect();
            let gen = SparseGenerator::from_rates(size, entries).unwrap();
            let init = LumpedDistribution { probs: vec![1.0 / size as f64; size], time: 0.0 };
            let out = transient(&gen, &init, t, 1e-12).unwrap();
            prop_assert!((out.probs.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(out.probs.iter().all(|&p| p >= 0.0));
        }
    }
}
