//! Fixed-step classic Runge-Kutta integration of drift, mean-drift and
//! limit ODEs on the simplex.

use crate::drift::{DriftField, FieldKind, LimitField, LimitMode, VectorField};
use crate::error::{Error, Result};
use crate::meandrift::MeanDriftField;
use crate::model::{ModelSpec, OccupancyMeasure};

/// Negative components down to this value are clipped; below it the
/// integration aborts.
pub const CLIP_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub points: Vec<Vec<f64>>,
    pub kind: FieldKind,
    pub n: Option<u64>,
    pub step: f64,
}

impl Trajectory {
    pub fn last(&self) -> &[f64] {
        self.points.last().expect("trajectory has at least one point")
    }

    /// Linear interpolation between stored samples, clamped to the ends.
    pub fn at(&self, t: f64) -> Vec<f64> {
        let idx = self.times.partition_point(|&x| x < t);
        if idx == 0 {
            return self.points[0].clone();
        }
        if idx >= self.times.len() {
            return self.last().to_vec();
        }
        let (t0, t1) = (self.times[idx - 1], self.times[idx]);
        if t1 == t {
            return self.points[idx].clone();
        }
        let w = (t - t0) / (t1 - t0);
        self.points[idx - 1]
            .iter()
            .zip(&self.points[idx])
            .map(|(a, b)| a + w * (b - a))
            .collect()
    }
}

pub fn default_step(t_end: f64) -> f64 {
    (t_end / 1000.0).min(0.1)
}

fn axpy(y: &[f64], a: f64, x: &[f64]) -> Vec<f64> {
    y.iter().zip(x).map(|(yi, xi)| yi + a * xi).collect()
}

fn rk4_step(field: &dyn VectorField, y: &[f64], h: f64) -> Result<Vec<f64>> {
    let k1 = field.eval(y)?;
    let k2 = field.eval(&axpy(y, h / 2.0, &k1))?;
    let k3 = field.eval(&axpy(y, h / 2.0, &k2))?;
    let k4 = field.eval(&axpy(y, h, &k3))?;
    Ok(y.iter()
        .enumerate()
        .map(|(i, yi)| yi + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect())
}

fn project(y: &mut [f64], t: f64) -> Result<()> {
    for (i, v) in y.iter_mut().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite { t });
        }
        if *v < -CLIP_TOLERANCE {
            return Err(Error::LeftSimplex {
                t,
                component: i,
                value: *v,
            });
        }
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    let sum: f64 = y.iter().sum();
    y.iter_mut().for_each(|v| *v /= sum);
    Ok(())
}

/// Integrate `dphi/dt = field(phi)` from `phi0` to `t_end`.
///
/// Output holds `t = 0`, every sample time inside `(0, t_end)` and `t_end`.
/// Between outputs the interval is split into equal sub-steps no longer
/// than `step` (default [`default_step`]).
pub fn integrate(
    field: &dyn VectorField,
    phi0: &OccupancyMeasure,
    t_end: f64,
    step: Option<f64>,
    sample_times: &[f64],
) -> Result<Trajectory> {
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "end time must be positive, got {t_end}"
        )));
    }
    if phi0.dim() != field.dim() {
        return Err(Error::InvalidArgument(format!(
            "initial point has {} entries, field has {}",
            phi0.dim(),
            field.dim()
        )));
    }
    let h = step.unwrap_or_else(|| default_step(t_end));
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidArgument(format!("step must be positive, got {h}")));
    }
    let mut targets: Vec<f64> = sample_times.iter().copied().filter(|&t| t > 0.0 && t < t_end).collect();
    targets.push(t_end);
    targets.sort_by(|a, b| a.partial_cmp(b).expect("finite sample times"));
    targets.dedup();

    let mut y = phi0.as_slice().to_vec();
    let mut times = vec![0.0];
    let mut points = vec![y.clone()];
    let mut t = 0.0;
    for &target in &targets {
        let span = target - t;
        let steps = ((span / h) - 1e-9).ceil().max(1.0) as u64;
        let sub = span / steps as f64;
        for i in 0..steps {
            y = rk4_step(field, &y, sub)?;
            let now = t + (i + 1) as f64 * sub;
            project(&mut y, now)?;
        }
        t = target;
        times.push(t);
        points.push(y.clone());
    }
    Ok(Trajectory {
        times,
        points,
        kind: field.kind(),
        n: field.population(),
        step: h,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Variant {
    Drift,
    MeanDrift { tolerance: f64 },
    Limit(LimitMode),
}

/// Pick the vector field for `variant` and integrate it. `n` is ignored
/// for the limit system.
pub fn solve(
    model: &ModelSpec,
    variant: Variant,
    n: u64,
    phi0: &OccupancyMeasure,
    t_end: f64,
    sample_times: &[f64],
    step: Option<f64>,
) -> Result<Trajectory> {
    if n == 0 && !matches!(variant, Variant::Limit(_)) {
        return Err(Error::InvalidArgument("population size must be positive".into()));
    }
    match variant {
        Variant::Drift => integrate(&DriftField { model, n }, phi0, t_end, step, sample_times),
        Variant::MeanDrift { tolerance } => {
            let field = MeanDriftField::new(model, n, tolerance)?;
            integrate(&field, phi0, t_end, step, sample_times)
        }
        Variant::Limit(mode) => integrate(&LimitField { model, mode }, phi0, t_end, step, sample_times),
    }
}
