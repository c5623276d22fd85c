//! Poisson means of intensities and the mean drift.
//!
//! The Poisson mean of an intensity replaces the occupancy `m` by the
//! lattice point `k / N`, with the counts `k_i` independent Poisson
//! variables of mean `N m_i`, and averages. Each Poisson factor is truncated
//! to a window around its mode holding all but `tau / (2 I)` of its mass, so
//! the neglected joint mass stays below `tau`.

use rayon::prelude::*;

use crate::drift::{FieldKind, VectorField};
use crate::error::{Error, Result};
use crate::expr::Var;
use crate::model::{ModelSpec, StateId};

pub const DEFAULT_TOLERANCE: f64 = 1e-10;

/// Largest rectangular lattice enumerated per evaluation.
pub const LATTICE_CAP: f64 = 1e8;

/// Largest precomputed intensity table, in entries.
const TABLE_CAP: usize = 20_000_000;

/// Truncated Poisson pmf: `probs[i]` is P(K = k_min + i).
#[derive(Debug, Clone, PartialEq)]
pub struct PoissonWeights {
    pub lambda: f64,
    pub k_min: u64,
    pub probs: Vec<f64>,
    pub tail_bound: f64,
}

impl PoissonWeights {
    pub fn k_max(&self) -> u64 {
        self.k_min + self.probs.len() as u64 - 1
    }

    pub fn mass(&self) -> f64 {
        self.probs.iter().sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, f64)> + '_ {
        self.probs
            .iter()
            .enumerate()
            .map(move |(i, &p)| (self.k_min + i as u64, p))
    }
}

/// Poisson(`lambda`) weights covering at least `1 - tau` of the mass.
///
/// Starts at the mode and grows the window one point at a time towards the
/// heavier side, using `p_{k+1} = p_k lambda / (k + 1)` in both directions,
/// so nothing underflows for large `lambda`.
pub fn poisson_weights(lambda: f64, tau: f64) -> PoissonWeights {
    assert!(
        lambda >= 0.0 && lambda.is_finite(),
        "Poisson mean must be finite and >= 0"
    );
    assert!(tau > 0.0 && tau < 1.0, "tail tolerance must lie in (0, 1)");
    if lambda == 0.0 {
        return PoissonWeights {
            lambda,
            k_min: 0,
            probs: vec![1.0],
            tail_bound: tau,
        };
    }
    let mode = lambda.floor();
    let log_p = -lambda + mode * lambda.ln() - libm::lgamma(mode + 1.0);
    let p_mode = log_p.exp();

    let mut left: Vec<f64> = Vec::new();
    let mut right: Vec<f64> = Vec::new();
    let (mut lo, mut hi) = (mode as u64, mode as u64);
    let (mut p_lo, mut p_hi) = (p_mode, p_mode);
    let mut mass = p_mode;
    while mass < 1.0 - tau {
        let next_left = if lo > 0 { p_lo * lo as f64 / lambda } else { 0.0 };
        let next_right = p_hi * lambda / (hi + 1) as f64;
        if next_left == 0.0 && next_right == 0.0 {
            break;
        }
        if next_left >= next_right {
            lo -= 1;
            p_lo = next_left;
            left.push(p_lo);
            mass += p_lo;
        } else {
            hi += 1;
            p_hi = next_right;
            right.push(p_hi);
            mass += p_hi;
        }
    }
    let mut probs: Vec<f64> = left.into_iter().rev().collect();
    probs.push(p_mode);
    probs.extend(right);
    PoissonWeights {
        lambda,
        k_min: lo,
        probs,
        tail_bound: tau,
    }
}

fn coordinate_windows(n: u64, m: &[f64], tau: f64) -> Result<Vec<PoissonWeights>> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "tolerance must lie in (0, 1), got {tau}"
        )));
    }
    let budget = tau / (2.0 * m.len() as f64);
    let windows: Vec<PoissonWeights> = m
        .iter()
        .map(|&mi| poisson_weights((n as f64 * mi).max(0.0), budget))
        .collect();
    let points: f64 = windows.iter().map(|w| w.probs.len() as f64).product();
    if points > LATTICE_CAP {
        return Err(Error::LatticeTooLarge {
            points,
            cap: LATTICE_CAP,
        });
    }
    Ok(windows)
}

/// Visit every lattice point of the rectangle spanned by `windows` in
/// lexicographic order, passing the counts and the joint weight.
fn for_each_lattice_point(windows: &[PoissonWeights], mut visit: impl FnMut(&[u64], f64) -> Result<()>) -> Result<()> {
    let dim = windows.len();
    let mut idx = vec![0usize; dim];
    let mut k: Vec<u64> = windows.iter().map(|w| w.k_min).collect();
    loop {
        let weight: f64 = windows.iter().zip(&idx).map(|(w, &i)| w.probs[i]).product();
        visit(&k, weight)?;
        let mut d = dim;
        loop {
            if d == 0 {
                return Ok(());
            }
            d -= 1;
            idx[d] += 1;
            if idx[d] < windows[d].probs.len() {
                k[d] += 1;
                break;
            }
            idx[d] = 0;
            k[d] = windows[d].k_min;
        }
    }
}

/// Poisson mean of the intensity `from -> to` at `m`.
pub fn poisson_mean_intensity(
    model: &ModelSpec,
    n: u64,
    m: &[f64],
    from: StateId,
    to: StateId,
    tau: f64,
) -> Result<f64> {
    let Some(t) = model.transitions().iter().find(|t| t.from == from && t.to == to) else {
        return Ok(0.0);
    };
    let windows = coordinate_windows(n, m, tau)?;
    let size = n as f64;
    let mut point = vec![0.0; m.len()];
    let mut acc = 0.0;
    for_each_lattice_point(&windows, |k, w| {
        if k[from] == 0 {
            return Ok(());
        }
        for (p, &ki) in point.iter_mut().zip(k) {
            *p = ki as f64 / size;
        }
        acc += w * point[from] * model.eval_transition(t, size, &point)?;
        Ok(())
    })?;
    Ok(acc)
}

/// The mean drift at `m`, evaluated directly (no lattice table).
pub fn mean_drift(model: &ModelSpec, n: u64, m: &[f64], tau: f64) -> Result<Vec<f64>> {
    MeanDriftField::direct(model, n, tau).eval(m)
}

/// Poisson mean for a rate that depends on the occupancy only through
/// coordinate `j`: `m_s * sum_k Q(k/N e_j) Poisson(k; N m_j)`.
pub fn simple_poisson_mean(
    model: &ModelSpec,
    n: u64,
    m: &[f64],
    from: StateId,
    to: StateId,
    j: StateId,
    tau: f64,
) -> Result<f64> {
    if let Some(expr) = model.rate_expr(from, to) {
        let j_name = &model.state_names()[j];
        for var in expr.free_vars() {
            if let Var::Occupancy(s) = &var {
                if s != j_name {
                    return Err(Error::InvalidArgument(format!(
                        "rate {} -> {} depends on {var}, not only on m[{j_name}]",
                        model.state_names()[from],
                        model.state_names()[to]
                    )));
                }
            }
        }
    }
    let Some(t) = model.transitions().iter().find(|t| t.from == from && t.to == to) else {
        return Ok(0.0);
    };
    if m[from] == 0.0 {
        return Ok(0.0);
    }
    let size = n as f64;
    let weights = poisson_weights((size * m[j]).max(0.0), tau);
    let mut point = vec![0.0; m.len()];
    let mut acc = 0.0;
    for (k, w) in weights.iter() {
        point[j] = k as f64 / size;
        acc += w * model.eval_transition(t, size, &point)?;
    }
    Ok(m[from] * acc)
}

/// Intensities precomputed on the box `[0, K_1] x ... x [0, K_I]` of
/// lattice points; `K_i` is the upper end of the Poisson(N) window, which
/// bounds every window with `m_i <= 1`.
#[derive(Debug, Clone)]
struct IntensityTable {
    extents: Vec<u64>,
    strides: Vec<usize>,
    points: usize,
    // transition-major: entry `t * points + flat`; NaN marks a point where
    // the rate failed to evaluate
    values: Vec<f64>,
}

impl IntensityTable {
    fn build(model: &ModelSpec, n: u64, tau: f64) -> Option<Self> {
        let dim = model.dim();
        let transitions = model.transitions();
        let top = poisson_weights(n as f64, tau / (2.0 * dim as f64)).k_max();
        let extents = vec![top + 1; dim];
        let points = extents.iter().try_fold(1usize, |acc, &e| acc.checked_mul(e as usize))?;
        if points.checked_mul(transitions.len().max(1))? > TABLE_CAP {
            return None;
        }
        let mut strides = vec![1usize; dim];
        for d in (0..dim.saturating_sub(1)).rev() {
            strides[d] = strides[d + 1] * extents[d + 1] as usize;
        }
        let size = n as f64;
        let mut values = vec![0.0; points * transitions.len()];
        values.par_iter_mut().enumerate().for_each(|(i, slot)| {
            let t = &transitions[i / points];
            let mut point = vec![0.0; dim];
            let mut rem = i % points;
            for d in 0..dim {
                point[d] = (rem / strides[d]) as f64 / size;
                rem %= strides[d];
            }
            *slot = if point[t.from] == 0.0 {
                0.0
            } else {
                model
                    .eval_transition(t, size, &point)
                    .map(|q| point[t.from] * q)
                    .unwrap_or(f64::NAN)
            };
        });
        Some(IntensityTable {
            extents,
            strides,
            points,
            values,
        })
    }

    /// Values of transition `t` along the run of points that starts at
    /// `k` and extends `len` steps along the last coordinate.
    fn line(&self, k: &[u64], len: usize, t: usize) -> Option<&[f64]> {
        let last = k.len() - 1;
        if k[last] + len as u64 > self.extents[last] {
            return None;
        }
        let mut flat = 0;
        for ((&ki, &e), &s) in k.iter().zip(&self.extents).zip(&self.strides) {
            if ki >= e {
                return None;
            }
            flat += ki as usize * s;
        }
        let start = t * self.points + flat;
        Some(&self.values[start..start + len])
    }
}

/// Dot product with four interleaved partial sums.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut partial = [0.0; 4];
    let (a4, b4) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = a4.remainder().iter().zip(b4.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in a4.zip(b4) {
        for l in 0..4 {
            partial[l] += x[l] * y[l];
        }
    }
    (partial[0] + partial[1]) + (partial[2] + partial[3]) + tail
}

/// Visit every line of the lattice rectangle along the last coordinate:
/// `k` holds the leading counts (last entry at its window start) and the
/// weight is the product of the leading Poisson factors.
fn for_each_line(windows: &[PoissonWeights], mut visit: impl FnMut(&[u64], f64) -> Result<()>) -> Result<()> {
    let lead = windows.len() - 1;
    let mut idx = vec![0usize; lead];
    let mut k: Vec<u64> = windows.iter().map(|w| w.k_min).collect();
    loop {
        let weight: f64 = windows[..lead].iter().zip(&idx).map(|(w, &i)| w.probs[i]).product();
        visit(&k, weight)?;
        let mut d = lead;
        loop {
            if d == 0 {
                return Ok(());
            }
            d -= 1;
            idx[d] += 1;
            if idx[d] < windows[d].probs.len() {
                k[d] += 1;
                break;
            }
            idx[d] = 0;
            k[d] = windows[d].k_min;
        }
    }
}

/// The mean drift at a fixed population size as a vector field.
#[derive(Debug, Clone)]
pub struct MeanDriftField<'a> {
    model: &'a ModelSpec,
    n: u64,
    tau: f64,
    table: Option<IntensityTable>,
}

impl<'a> MeanDriftField<'a> {
    /// Field backed by a precomputed lattice table when it fits in memory.
    pub fn new(model: &'a ModelSpec, n: u64, tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "tolerance must lie in (0, 1), got {tau}"
            )));
        }
        Ok(MeanDriftField {
            model,
            n,
            tau,
            table: IntensityTable::build(model, n, tau),
        })
    }

    /// Field that evaluates every lattice intensity on demand.
    pub fn direct(model: &'a ModelSpec, n: u64, tau: f64) -> Self {
        MeanDriftField {
            model,
            n,
            tau,
            table: None,
        }
    }

    pub fn tolerance(&self) -> f64 {
        self.tau
    }

    pub fn has_table(&self) -> bool {
        self.table.is_some()
    }

    fn direct_intensities(&self, k: &[u64], point: &mut [f64], out: &mut [f64]) -> Result<()> {
        let size = self.n as f64;
        for (p, &ki) in point.iter_mut().zip(k) {
            *p = ki as f64 / size;
        }
        for (slot, t) in out.iter_mut().zip(self.model.transitions()) {
            *slot = if k[t.from] == 0 {
                0.0
            } else {
                point[t.from] * self.model.eval_transition(t, size, point)?
            };
        }
        Ok(())
    }
}

impl VectorField for MeanDriftField<'_> {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn kind(&self) -> FieldKind {
        FieldKind::MeanDrift
    }

    fn population(&self) -> Option<u64> {
        Some(self.n)
    }

    fn eval(&self, m: &[f64]) -> Result<Vec<f64>> {
        let transitions = self.model.transitions();
        let count = transitions.len();
        let windows = coordinate_windows(self.n, m, self.tau)?;
        let last = windows.len() - 1;
        let inner = &windows[last];
        let len = inner.probs.len();
        let mut acc = vec![0.0; count];
        let mut line = vec![0.0; count];
        let mut direct: Vec<Vec<f64>> = vec![vec![0.0; len]; count];
        let mut scratch = vec![0.0; count];
        let mut point = vec![0.0; m.len()];
        let mut k_point = vec![0u64; m.len()];
        for_each_line(&windows, |k, weight| {
            let mut complete = false;
            if let Some(table) = &self.table {
                complete = true;
                for (t, l) in line.iter_mut().enumerate() {
                    match table.line(k, len, t) {
                        Some(values) => *l = dot(&inner.probs, values),
                        None => complete = false,
                    }
                }
                complete = complete && !line.iter().any(|v| v.is_nan());
            }
            if !complete {
                k_point.copy_from_slice(k);
                for j in 0..len {
                    k_point[last] = inner.k_min + j as u64;
                    self.direct_intensities(&k_point, &mut point, &mut scratch)?;
                    for (column, &v) in direct.iter_mut().zip(&scratch) {
                        column[j] = v;
                    }
                }
                for (l, column) in line.iter_mut().zip(&direct) {
                    *l = dot(&inner.probs, column);
                }
            }
            for (a, l) in acc.iter_mut().zip(&line) {
                *a += weight * l;
            }
            Ok(())
        })?;
        let mut out = vec![0.0; m.len()];
        for (t, flow) in transitions.iter().zip(&acc) {
            out[t.from] -= flow;
            out[t.to] += flow;
        }
        Ok(out)
    }
}
