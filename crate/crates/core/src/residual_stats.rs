//! Exponential characterization of absolute residuals.
//!
//! The bulk (lowest `q` fraction) is summarized by its mean, read as the scale
//! of an exponential law; the tail above the empirical `q`-quantile is
//! summarized separately by its median. Imputed cells never enter these
//! statistics.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lowrank::ResidualSeries;

pub const DEFAULT_TRIM_QUANTILE: f64 = 0.99;
pub const MIN_RESIDUALS: usize = 100;
pub const MIN_TAIL_POINTS: usize = 10;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("{found} observed residuals, at least {required} required")]
    TooFewResiduals { found: usize, required: usize },
    #[error("{found} residuals above the cutoff, at least {required} required")]
    TooFewTailPoints { found: usize, required: usize },
    #[error("trim quantile {0} outside (0.5, 1]")]
    InvalidQuantile(f64),
    #[error("exponential mean must be positive, got {0}")]
    NonPositiveMu(f64),
}

/// Which bulk estimate is reported as `mu_hat`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// Mean of the retained values; biased low by the truncation.
    #[default]
    TrimmedMean,
    /// Exponential MLE treating values above the cutoff as right-censored.
    CensoredMle,
}

impl std::str::FromStr for Estimator {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "trimmed-mean" | "trimmed_mean" => Ok(Self::TrimmedMean),
            "censored-mle" | "censored_mle" => Ok(Self::CensoredMle),
            other => Err(format!("unknown estimator `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BulkFit {
    /// Observed residuals considered.
    pub n: usize,
    pub trim_quantile: f64,
    pub cutoff: f64,
    /// Values at or below the cutoff.
    pub retained: usize,
    pub mu_trimmed: f64,
    pub mu_censored: f64,
    /// Mean over every observed residual, for comparison.
    pub mu_all: f64,
}

impl BulkFit {
    pub fn mu(&self, estimator: Estimator) -> f64 {
        match estimator {
            Estimator::TrimmedMean => self.mu_trimmed,
            Estimator::CensoredMle => self.mu_censored,
        }
    }
}

fn sorted_observed(residuals: &ResidualSeries) -> Vec<f64> {
    let mut abs = residuals.observed_absolute();
    abs.sort_by(f64::total_cmp);
    abs
}

/// 1-based index of the cutoff order statistic, `ceil(q n)`.
fn cutoff_rank(q: f64, n: usize) -> usize {
    let x = q * n as f64;
    // guard against q*n landing a hair above an integer
    let k = (x - x * 1e-12).ceil() as usize;
    k.clamp(1, n)
}

fn check_quantile(q: f64) -> Result<(), StatsError> {
    if q > 0.5 && q <= 1.0 {
        Ok(())
    } else {
        Err(StatsError::InvalidQuantile(q))
    }
}

fn median_of_sorted(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn fit_sorted(sorted: &[f64], q: f64) -> BulkFit {
    let n = sorted.len();
    let cutoff = sorted[cutoff_rank(q, n) - 1];
    let retained = sorted.partition_point(|x| *x <= cutoff);
    let kept_sum: f64 = sorted[..retained].iter().sum();
    let censored = (n - retained) as f64;
    BulkFit {
        n,
        trim_quantile: q,
        cutoff,
        retained,
        mu_trimmed: kept_sum / retained as f64,
        mu_censored: (kept_sum + censored * cutoff) / retained as f64,
        mu_all: sorted.iter().sum::<f64>() / n as f64,
    }
}

/// Fits the lowest `q` fraction of observed absolute residuals.
pub fn fit_bulk_exponential(residuals: &ResidualSeries, q: f64) -> Result<BulkFit, StatsError> {
    check_quantile(q)?;
    let sorted = sorted_observed(residuals);
    if sorted.len() < MIN_RESIDUALS {
        return Err(StatsError::TooFewResiduals {
            found: sorted.len(),
            required: MIN_RESIDUALS,
        });
    }
    Ok(fit_sorted(&sorted, q))
}

/// Median of the observed absolute residuals strictly above the `q` cutoff.
pub fn tail_median(residuals: &ResidualSeries, q: f64) -> Result<f64, StatsError> {
    check_quantile(q)?;
    let sorted = sorted_observed(residuals);
    if sorted.is_empty() {
        return Err(StatsError::TooFewTailPoints {
            found: 0,
            required: MIN_TAIL_POINTS,
        });
    }
    let cutoff = sorted[cutoff_rank(q, sorted.len()) - 1];
    let tail = &sorted[sorted.partition_point(|x| *x <= cutoff)..];
    if tail.len() < MIN_TAIL_POINTS {
        return Err(StatsError::TooFewTailPoints {
            found: tail.len(),
            required: MIN_TAIL_POINTS,
        });
    }
    Ok(median_of_sorted(tail))
}

/// One point of an exponential probability plot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbPoint {
    pub theoretical_quantile: f64,
    pub ordered_residual: f64,
}

/// Exponential Q-Q pairs with midpoint plotting positions `(i - 0.5) / n`.
pub fn probplot_points(residuals: &ResidualSeries, mu: f64) -> Result<Vec<ProbPoint>, StatsError> {
    if !(mu > 0.0) {
        return Err(StatsError::NonPositiveMu(mu));
    }
    let sorted = sorted_observed(residuals);
    let n = sorted.len() as f64;
    Ok(sorted
        .into_iter()
        .enumerate()
        .map(|(i, y)| ProbPoint {
            theoretical_quantile: -mu * (1.0 - (i as f64 + 0.5) / n).ln(),
            ordered_residual: y,
        })
        .collect())
}

pub fn write_probplot_csv<W: Write>(points: &[ProbPoint], writer: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["theoretical_quantile", "ordered_residual"])?;
    for p in points {
        w.write_record([p.theoretical_quantile.to_string(), p.ordered_residual.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Expected trimmed mean of an `Exp(mu)` sample cut at its `q`-quantile:
/// `mu (1 - (c/mu) e^{-c/mu} / (1 - e^{-c/mu}))` with `c = mu ln(1/(1-q))`.
pub fn truncated_exponential_mean(mu: f64, q: f64) -> f64 {
    if q >= 1.0 {
        return mu;
    }
    let z = (1.0 / (1.0 - q)).ln();
    let tail = (-z).exp();
    mu * (1.0 - z * tail / (1.0 - tail))
}

/// Combined per-year residual summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualAnalysis {
    pub n: usize,
    pub n_imputed: usize,
    pub trim_quantile: f64,
    pub estimator: Estimator,
    pub mu_hat: f64,
    pub cutoff: f64,
    pub mu_trimmed: f64,
    pub mu_censored: f64,
    pub mu_all: f64,
    /// `None` when fewer than ten residuals lie above the cutoff.
    pub tail_median: Option<f64>,
    #[serde(skip)]
    pub probplot: Vec<ProbPoint>,
}

pub fn analyze_residuals(
    residuals: &ResidualSeries,
    q: f64,
    estimator: Estimator,
) -> Result<ResidualAnalysis, StatsError> {
    let fit = fit_bulk_exponential(residuals, q)?;
    let tail = match tail_median(residuals, q) {
        Ok(m) => Some(m),
        Err(StatsError::TooFewTailPoints { .. }) => None,
        Err(e) => return Err(e),
    };
    let mu_hat = fit.mu(estimator);
    let probplot = if mu_hat > 0.0 {
        probplot_points(residuals, mu_hat)?
    } else {
        Vec::new()
    };
    Ok(ResidualAnalysis {
        n: fit.n,
        n_imputed: residuals.imputed_count(),
        trim_quantile: q,
        estimator,
        mu_hat,
        cutoff: fit.cutoff,
        mu_trimmed: fit.mu_trimmed,
        mu_censored: fit.mu_censored,
        mu_all: fit.mu_all,
        tail_median: tail,
        probplot,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::CellFlag;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Exp};

    fn series(values: Vec<f64>) -> ResidualSeries {
        ResidualSeries::observed(values)
    }

    #[test]
    fn constant_residuals() {
        let fit = fit_bulk_exponential(&series(vec![2.5; 500]), 0.99).unwrap();
        assert_eq!(fit.mu_trimmed, 2.5);
        assert_eq!(fit.cutoff, 2.5);
        assert_eq!(fit.retained, 500);
        assert!(matches!(
            tail_median(&series(vec![2.5; 500]), 0.99),
            Err(StatsError::TooFewTailPoints { found: 0, .. })
        ));
    }

    #[test]
    fn tail_of_one_to_hundred() {
        let s = series((1..=100).map(f64::from).collect());
        assert_eq!(tail_median(&s, 0.9).unwrap(), 95.5);
        let fit = fit_bulk_exponential(&s, 0.9).unwrap();
        assert_eq!(fit.cutoff, 90.0);
        assert_eq!(fit.mu_trimmed, 45.5);
        // sign flips do not matter
        let flipped = series((1..=100).map(|i| if i % 3 == 0 { -(i as f64) } else { i as f64 }).collect());
        assert_eq!(tail_median(&flipped, 0.9).unwrap(), 95.5);
    }

    #[test]
    fn too_few_and_bad_quantile() {
        assert_eq!(
            fit_bulk_exponential(&series(vec![1.0; 99]), 0.99).unwrap_err(),
            StatsError::TooFewResiduals { found: 99, required: 100 }
        );
        assert_eq!(
            fit_bulk_exponential(&series(vec![1.0; 200]), 0.4).unwrap_err(),
            StatsError::InvalidQuantile(0.4)
        );
    }

    #[test]
    fn probplot_single_point() {
        let pts = probplot_points(&series(vec![-4.0]), 2.0).unwrap();
        assert_eq!(pts.len(), 1);
        assert_eq!(pts[0].theoretical_quantile, -2.0 * 0.5f64.ln());
        assert_eq!(pts[0].ordered_residual, 4.0);
        assert_eq!(
            probplot_points(&series(vec![1.0]), 0.0).unwrap_err(),
            StatsError::NonPositiveMu(0.0)
        );
    }

    #[test]
    fn probplot_of_exponential_sample_hugs_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let exp = Exp::new(1.0 / 3.0).unwrap();
        let sample: Vec<f64> = (0..10_000).map(|_| exp.sample(&mut rng)).collect();
        let pts = probplot_points(&series(sample), 3.0).unwrap();
        let sxy: f64 = pts.iter().map(|p| p.theoretical_quantile * p.ordered_residual).sum();
        let sxx: f64 = pts.iter().map(|p| p.theoretical_quantile.powi(2)).sum();
        let slope = sxy / sxx;
        assert!((0.95..=1.05).contains(&slope), "{slope}");
    }

    #[test]
    fn truncated_mean_closed_form() {
        // frozen from direct quadrature of x e^{-x/3}/3 on [0, 3 ln 100], divided by 0.99
        let expected = {
            let c = 3.0 * 100f64.ln();
            let steps = 200_000;
            let h = c / steps as f64;
            let f = |x: f64| x * (-x / 3.0).exp() / 3.0;
            let mut acc = f(0.0) + f(c);
            for i in 1..steps {
                acc += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
            }
            acc * h / 3.0 / 0.99
        };
        assert!((truncated_exponential_mean(3.0, 0.99) - expected).abs() < 1e-9);
        assert!((expected - 2.861).abs() < 1e-3);
    }

    #[test]
    fn imputed_cells_are_ignored() {
        let values: Vec<f64> = (0..300).map(|i| (i % 17) as f64).collect();
        let mut mask = vec![CellFlag::Observed; 300];
        for i in (0..300).step_by(7) {
            mask[i] = CellFlag::Imputed;
        }
        let base = ResidualSeries::new(values.clone(), mask.clone());
        let mut altered = values;
        for i in (0..300).step_by(7) {
            altered[i] = 1e6;
        }
        let altered = ResidualSeries::new(altered, mask);
        let a = analyze_residuals(&base, 0.95, Estimator::TrimmedMean).unwrap();
        let b = analyze_residuals(&altered, 0.95, Estimator::TrimmedMean).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn scale_equivariance(
            xs in prop::collection::vec(-50.0f64..50.0, 120..400),
            exp in -4i32..4,
        ) {
            // powers of two scale exactly in floating point
            let s = 2f64.powi(exp);
            let a = series(xs.clone());
            let b = series(xs.iter().map(|x| x * s).collect());
            let fa = fit_bulk_exponential(&a, 0.9).unwrap();
            let fb = fit_bulk_exponential(&b, 0.9).unwrap();
            prop_assert_eq!(fb.cutoff, fa.cutoff * s);
            prop_assert!((fb.mu_trimmed - fa.mu_trimmed * s).abs() <= 1e-12 * fb.mu_trimmed.abs().max(1.0));
            if let (Ok(ta), Ok(tb)) = (tail_median(&a, 0.9), tail_median(&b, 0.9)) {
                prop_assert_eq!(tb, ta * s);
            }
        }

        #[test]
        fn trimming_is_monotone(
            xs in prop::collection::vec(0.0f64..100.0, 100..300),
            q1 in 0.51f64..1.0,
            q2 in 0.51f64..1.0,
        ) {
            let (lo, hi) = if q1 <= q2 { (q1, q2) } else { (q2, q1) };
            let s = series(xs);
            let a = fit_bulk_exponential(&s, lo).unwrap();
            let b = fit_bulk_exponential(&s, hi).unwrap();
            prop_assert!(a.mu_trimmed <= b.mu_trimmed + 1e-12);
            prop_assert!(a.cutoff <= b.cutoff);
        }

        #[test]
        fn ordering_invariants(xs in prop::collection::vec(-30.0f64..30.0, 150..300)) {
            let s = series(xs);
            let fit = fit_bulk_exponential(&s, 0.9).unwrap();
            prop_assert!(fit.mu_trimmed >= 0.0 && fit.cutoff >= 0.0);
            if let Ok(t) = tail_median(&s, 0.9) {
                prop_assert!(t >= fit.cutoff);
            }
            let pts = probplot_points(&s, 1.5).unwrap();
            for w in pts.windows(2) {
                prop_assert!(w[0].theoretical_quantile <= w[1].theoretical_quantile);
                prop_assert!(w[0].ordered_residual <= w[1].ordered_residual);
            }
        }
    }
}
