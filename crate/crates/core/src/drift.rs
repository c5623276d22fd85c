//! Intensities, the drift F^(N) and the limit drift F*.

use std::fmt;

use crate::error::{Error, Result};
use crate::model::{ModelSpec, StateId};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldKind {
    Drift,
    MeanDrift,
    Limit,
    Custom,
}

impl fmt::Display for FieldKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FieldKind::Drift => "drift",
            FieldKind::MeanDrift => "meandrift",
            FieldKind::Limit => "limit",
            FieldKind::Custom => "custom",
        })
    }
}

/// A map from the simplex to zero-sum vectors.
pub trait VectorField: Sync {
    fn dim(&self) -> usize;
    fn kind(&self) -> FieldKind;
    /// Population size the field was built for, if any.
    fn population(&self) -> Option<u64> {
        None
    }
    fn eval(&self, m: &[f64]) -> Result<Vec<f64>>;
}

/// F_{s,s'} = m_s Q_{s,s'}(m); zero whenever m_s is zero.
pub fn intensity(model: &ModelSpec, n: u64, m: &[f64], from: StateId, to: StateId) -> Result<f64> {
    if m[from] == 0.0 {
        return Ok(0.0);
    }
    Ok(m[from] * model.rate(n, m, from, to)?)
}

pub fn drift(model: &ModelSpec, n: u64, m: &[f64]) -> Result<Vec<f64>> {
    let mut out = vec![0.0; model.dim()];
    for t in model.transitions() {
        if m[t.from] == 0.0 {
            continue;
        }
        let flow = m[t.from] * model.eval_transition(t, n as f64, m)?;
        out[t.from] -= flow;
        out[t.to] += flow;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LimitMode {
    /// Use the model's declared `limit` rates.
    Declared,
    /// Evaluate F^(N) along N = 2^7, 2^8, ..., 2^20 until successive values
    /// agree to 1e-9 in max-norm.
    Numeric,
}

const NUMERIC_LIMIT_TOL: f64 = 1e-9;

pub fn limit_drift(model: &ModelSpec, m: &[f64], mode: LimitMode) -> Result<Vec<f64>> {
    match mode {
        LimitMode::Declared => {
            let transitions = model.limit_transitions().ok_or_else(|| {
                Error::InvalidArgument("model declares no limit rates; use numeric limit mode".into())
            })?;
            let mut out = vec![0.0; model.dim()];
            for t in transitions {
                if m[t.from] == 0.0 {
                    continue;
                }
                let flow = m[t.from] * model.eval_limit_transition(t, m)?;
                out[t.from] -= flow;
                out[t.to] += flow;
            }
            Ok(out)
        }
        LimitMode::Numeric => {
            let mut prev = drift(model, 1 << 7, m)?;
            let mut change = f64::INFINITY;
            for k in 8..=20 {
                let next = drift(model, 1 << k, m)?;
                change = prev.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                if change < NUMERIC_LIMIT_TOL {
                    return Ok(next);
                }
                prev = next;
            }
            Err(Error::LimitNotConverged {
                n: 1 << 20,
                last_change: change,
            })
        }
    }
}

#[derive(Debug, Clone)]
pub struct DriftField<'a> {
    pub model: &'a ModelSpec,
    pub n: u64,
}

impl VectorField for DriftField<'_> {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn kind(&self) -> FieldKind {
        FieldKind::Drift
    }

    fn population(&self) -> Option<u64> {
        Some(self.n)
    }

    fn eval(&self, m: &[f64]) -> Result<Vec<f64>> {
        drift(self.model, self.n, m)
    }
}

#[derive(Debug, Clone)]
pub struct LimitField<'a> {
    pub model: &'a ModelSpec,
    pub mode: LimitMode,
}

impl VectorField for LimitField<'_> {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn kind(&self) -> FieldKind {
        FieldKind::Limit
    }

    fn eval(&self, m: &[f64]) -> Result<Vec<f64>> {
        limit_drift(self.model, m, self.mode)
    }
}

/// Wraps a closure as a field; handy for tests and ad-hoc systems.
pub struct FnField<F> {
    pub dim: usize,
    pub f: F,
}

impl<F> VectorField for FnField<F>
where
    F: Fn(&[f64]) -> Vec<f64> + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn kind(&self) -> FieldKind {
        FieldKind::Custom
    }

    fn eval(&self, m: &[f64]) -> Result<Vec<f64>> {
        Ok((self.f)(m))
    }
}
