use rayon::prelude::*;

use super::{replication_rng, simulate, SimConfig};
use crate::drift::drift;
use crate::error::{Error, Result};
use crate::model::{CountVector, ModelSpec};

pub fn poisson_pmf(k: u64, lambda: f64) -> f64 {
    if lambda == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    let k = k as f64;
    (k * lambda.ln() - lambda - libm::lgamma(k + 1.0)).exp()
}

fn binomial_pmf(k: u64, n: u64, p: f64) -> f64 {
    if k > n {
        return 0.0;
    }
    if p == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    if p == 1.0 {
        return if k == n { 1.0 } else { 0.0 };
    }
    let (kf, nf) = (k as f64, n as f64);
    let log_choose = libm::lgamma(nf + 1.0) - libm::lgamma(kf + 1.0) - libm::lgamma(nf - kf + 1.0);
    (log_choose + kf * p.ln() + (nf - kf) * (-p).ln_1p()).exp()
}

fn fit(counts: &[u64], pmf: impl Fn(u64) -> f64) -> f64 {
    let total: u64 = counts.iter().sum();
    assert!(total > 0, "histogram must not be empty");
    let total = total as f64;
    let mut covered = 0.0;
    let mut gap = 0.0;
    for (k, &c) in counts.iter().enumerate() {
        let p = pmf(k as u64);
        covered += p;
        gap += (c as f64 / total - p).abs();
    }
    0.5 * (gap + (1.0 - covered).max(0.0))
}

/// Total variation distance between the empirical law in `counts`
/// (`counts[k]` observations of value `k`) and Poisson(`lambda`). Mass the
/// Poisson law puts beyond the histogram support is added in full.
pub fn poisson_marginal_fit(counts: &[u64], lambda: f64) -> f64 {
    assert!(lambda >= 0.0, "Poisson mean must be non-negative");
    fit(counts, |k| poisson_pmf(k, lambda))
}

/// Total variation distance between the empirical law and Binomial(`n`, `p`).
pub fn binomial_marginal_fit(counts: &[u64], n: u64, p: f64) -> f64 {
    assert!((0.0..=1.0).contains(&p), "binomial probability must lie in [0, 1]");
    fit(counts, |k| binomial_pmf(k, n, p))
}

/// Two-sample Kolmogorov-Smirnov statistic.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Comparison of the slope of the empirical mean across a time window with
/// the empirical mean of the drift at the window midpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorReport {
    pub window: (f64, f64),
    /// `(mean M(b) - mean M(a)) / (b - a)`.
    pub finite_difference: Vec<f64>,
    /// Mean of `F^(N)(M(mid))`.
    pub mean_drift: Vec<f64>,
    /// `finite_difference - mean_drift`.
    pub discrepancy: Vec<f64>,
    /// Standard error of `discrepancy`, from the per-replication differences.
    pub stderr: Vec<f64>,
    pub replications: usize,
}

impl GeneratorReport {
    /// True when every component of the discrepancy lies within `z`
    /// standard errors of zero.
    pub fn within(&self, z: f64) -> bool {
        self.discrepancy
            .iter()
            .zip(&self.stderr)
            .all(|(d, se)| d.abs() <= z * se || d.abs() <= 1e-15)
    }
}

/// Each replication contributes `(M(b) - M(a)) / (b - a) - F^(N)(M(mid))`;
/// the report holds the mean and standard error of that difference, so the
/// common noise of both sides cancels. Uses `config.n`, `mode`, `reps` and
/// `seed`; the horizon is the window end.
pub fn generator_check(
    model: &ModelSpec,
    config: &SimConfig,
    init: &CountVector,
    window: (f64, f64),
) -> Result<GeneratorReport> {
    let (a, b) = window;
    if !(0.0 <= a && a < b && b.is_finite()) {
        return Err(Error::InvalidArgument(format!("invalid window ({a}, {b})")));
    }
    if config.reps == 0 {
        return Err(Error::InvalidArgument("replication count must be at least 1".into()));
    }
    if init.size() != config.n || init.counts().len() != model.dim() {
        return Err(Error::InvalidArgument(
            "initial counts do not match the model and population".into(),
        ));
    }
    let dim = model.dim();
    let mid = 0.5 * (a + b);
    let size = config.n as f64;
    let rows: Vec<Result<(Vec<f64>, Vec<f64>)>> = (0..config.reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = replication_rng(config.seed, r as u64);
            let path = simulate(model, config.mode, init, b, &mut rng)?;
            let at = path.sample(&[a, mid, b]);
            let occ = |c: &[u32]| c.iter().map(|&x| x as f64 / size).collect::<Vec<f64>>();
            let (ma, mm, mb) = (occ(&at[0]), occ(&at[1]), occ(&at[2]));
            let f = drift(model, config.n, &mm)?;
            let slope: Vec<f64> = (0..dim).map(|i| (mb[i] - ma[i]) / (b - a)).collect();
            Ok((slope, f))
        })
        .collect();

    let mut slope_sum = vec![0.0; dim];
    let mut drift_sum = vec![0.0; dim];
    let mut diff_sum = vec![0.0; dim];
    let mut diff_sq = vec![0.0; dim];
    let mut completed = 0usize;
    let mut failures = Vec::new();
    for (r, row) in rows.into_iter().enumerate() {
        match row {
            Ok((slope, f)) => {
                for i in 0..dim {
                    let d = slope[i] - f[i];
                    slope_sum[i] += slope[i];
                    drift_sum[i] += f[i];
                    diff_sum[i] += d;
                    diff_sq[i] += d * d;
                }
                completed += 1;
            }
            Err(e) => failures.push((r, e)),
        }
    }
    if failures.len() * 100 > config.reps {
        let failed = failures.len();
        let (first_index, first) = failures.into_iter().next().expect("at least one failure");
        return Err(Error::ReplicationFailures {
            failed,
            total: config.reps,
            first_index,
            first: Box::new(first),
        });
    }
    let r = completed as f64;
    let discrepancy: Vec<f64> = diff_sum.iter().map(|s| s / r).collect();
    let stderr = discrepancy
        .iter()
        .zip(&diff_sq)
        .map(|(&m, &s)| {
            if completed < 2 {
                0.0
            } else {
                ((s - r * m * m).max(0.0) / (r - 1.0) / r).sqrt()
            }
        })
        .collect();
    Ok(GeneratorReport {
        window,
        finite_difference: slope_sum.iter().map(|s| s / r).collect(),
        mean_drift: drift_sum.iter().map(|s| s / r).collect(),
        discrepancy,
        stderr,
        replications: completed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::load_model;
    use crate::sim::SimMode;

    #[test]
    fn poisson_pmf_values() {
        assert!((poisson_pmf(0, 2.0) - (-2.0f64).exp()).abs() < 1e-16);
        assert!((poisson_pmf(3, 2.0) - 8.0 / 6.0 * (-2.0f64).exp()).abs() < 1e-15);
        assert_eq!(poisson_pmf(0, 0.0), 1.0);
        assert_eq!(poisson_pmf(2, 0.0), 0.0);
    }

    #[test]
    fn exact_poisson_histogram_leaves_only_the_tail() {
        let lambda = 3.0;
        let support = 13u64;
        let scale = 1e12;
        let counts: Vec<u64> = (0..support)
            .map(|k| (poisson_pmf(k, lambda) * scale).round() as u64)
            .collect();
        let tail: f64 = 1.0 - (0..support).map(|k| poisson_pmf(k, lambda)).sum::<f64>();
        let tv = poisson_marginal_fit(&counts, lambda);
        // renormalizing the truncated pmf moves `tail` mass inside the support
        assert!((tv - tail).abs() < 1e-9, "tv {tv} tail {tail}");
    }

    #[test]
    fn point_mass_histogram() {
        // all observations at k = 4, lambda = 4
        let counts = vec![0, 0, 0, 0, 50];
        let lambda = 4.0;
        let mut expected = 0.0;
        for k in 0..5u64 {
            let p_hat = if k == 4 { 1.0 } else { 0.0 };
            expected += (p_hat - poisson_pmf(k, lambda)).abs();
        }
        expected += 1.0 - (0..5).map(|k| poisson_pmf(k, lambda)).sum::<f64>();
        expected *= 0.5;
        let tv = poisson_marginal_fit(&counts, lambda);
        assert!((tv - expected).abs() < 1e-15);
        assert!((tv - (1.0 - poisson_pmf(4, lambda))).abs() < 1e-15);
    }

    #[test]
    fn binomial_fit_of_exact_pmf_is_zero() {
        let counts: Vec<u64> = (0..=5u64)
            .map(|k| (binomial_pmf(k, 5, 0.5) * 32.0).round() as u64)
            .collect();
        assert_eq!(counts, vec![1, 5, 10, 10, 5, 1]);
        assert!(binomial_marginal_fit(&counts, 5, 0.5) < 1e-15);
    }

    #[test]
    fn ks_values() {
        assert_eq!(ks_statistic(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]), 0.0);
        assert_eq!(ks_statistic(&[0.0, 0.0], &[1.0, 1.0]), 1.0);
        assert!((ks_statistic(&[0.0, 1.0], &[1.0, 1.0]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_model_generator_check() {
        let model = load_model("states = a, b\n").unwrap();
        let config = SimConfig::new(4, SimMode::Ctmc, 10.0, 10, 1);
        let init = CountVector::new(vec![2, 2]).unwrap();
        let report = generator_check(&model, &config, &init, (1.0, 2.0)).unwrap();
        assert_eq!(report.finite_difference, vec![0.0, 0.0]);
        assert_eq!(report.mean_drift, vec![0.0, 0.0]);
        assert!(report.within(4.0));
    }

    #[test]
    fn linear_model_generator_check() {
        // a -> b at rate 1, b -> a at rate 0.5: dm_b/dt = m_a - 0.5 m_b
        let model = load_model("states = a, b\nrate a -> b : 1\nrate b -> a : 0.5\n").unwrap();
        let config = SimConfig::new(30, SimMode::Ctmc, 2.0, 4000, 9);
        let init = CountVector::new(vec![30, 0]).unwrap();
        let (a, b) = (1.0, 1.2);
        let report = generator_check(&model, &config, &init, (a, b)).unwrap();
        assert!(report.within(4.0), "{report:?}");
        // analytic slope of E[m_b] = (2/3)(1 - e^{-1.5 t})
        let mean_b = |t: f64| 2.0 / 3.0 * (1.0 - (-1.5 * t).exp());
        let analytic = (mean_b(b) - mean_b(a)) / (b - a);
        let se_fd = 4.0 * report.stderr[1] + 0.05;
        assert!((report.finite_difference[1] - analytic).abs() < se_fd);
        assert!((report.mean_drift[1] - analytic).abs() < 0.05);
    }
}
