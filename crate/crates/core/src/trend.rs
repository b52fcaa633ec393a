//! Year-over-year trend of the volatility parameter.

use std::io::Write;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TrendError {
    #[error("degenerate design: {0}")]
    DegenerateDesign(String),
    #[error("non-finite value for year {0}")]
    NonFinite(i32),
}

/// OLS fit `value = intercept + slope * year` with a two-sided 95% t interval
/// on the slope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolatilityTrend {
    pub points: Vec<(i32, f64)>,
    pub slope: f64,
    /// In calendar-year coordinates.
    pub intercept: f64,
    pub ci95: (f64, f64),
    pub stderr: f64,
    pub dof: usize,
    pub t_critical: f64,
    pub residual_std_error: f64,
}

impl VolatilityTrend {
    pub fn fitted(&self, year: i32) -> f64 {
        self.intercept + self.slope * year as f64
    }

    pub fn residuals(&self) -> Vec<f64> {
        self.points.iter().map(|(y, v)| v - self.fitted(*y)).collect()
    }
}

pub fn fit_trend(points: &[(i32, f64)]) -> Result<VolatilityTrend, TrendError> {
    if points.len() < 3 {
        return Err(TrendError::DegenerateDesign(format!(
            "{} points, at least 3 required",
            points.len()
        )));
    }
    if let Some((year, _)) = points.iter().find(|(_, v)| !v.is_finite()) {
        return Err(TrendError::NonFinite(*year));
    }
    let n = points.len() as f64;
    let x_mean = points.iter().map(|(y, _)| *y as f64).sum::<f64>() / n;
    let y_mean = points.iter().map(|(_, v)| v).sum::<f64>() / n;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (year, v) in points {
        let dx = *year as f64 - x_mean;
        sxx += dx * dx;
        sxy += dx * (v - y_mean);
    }
    if sxx == 0.0 {
        return Err(TrendError::DegenerateDesign("all years are equal".into()));
    }
    let slope = sxy / sxx;
    // intercept at the centered origin, then mapped back to calendar years
    let centered_intercept = y_mean;
    let intercept = centered_intercept - slope * x_mean;
    let sse: f64 = points
        .iter()
        .map(|(year, v)| {
            let e = v - (centered_intercept + slope * (*year as f64 - x_mean));
            e * e
        })
        .sum();
    let dof = points.len() - 2;
    let residual_std_error = (sse / dof as f64).sqrt();
    let stderr = residual_std_error / sxx.sqrt();
    let t_critical = StudentsT::new(0.0, 1.0, dof as f64)
        .expect("dof >= 1")
        .inverse_cdf(0.975);
    let half = t_critical * stderr;
    Ok(VolatilityTrend {
        points: points.to_vec(),
        slope,
        intercept,
        ci95: (slope - half, slope + half),
        stderr,
        dof,
        t_critical,
        residual_std_error,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendSeries {
    pub points: Vec<(i32, f64)>,
}

/// Tail medians ordered by year, for plotting. No model is fitted.
pub fn tail_trend(points: &[(i32, f64)]) -> TrendSeries {
    let mut points = points.to_vec();
    points.sort_by_key(|(year, _)| *year);
    TrendSeries { points }
}

/// Writes `year,mu_hat,fitted,tail_median`; missing tail medians are empty.
pub fn write_trend_csv<W: Write>(
    trend: &VolatilityTrend,
    tails: &TrendSeries,
    writer: W,
) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["year", "mu_hat", "fitted", "tail_median"])?;
    let mut points = trend.points.clone();
    points.sort_by_key(|(y, _)| *y);
    for (year, mu) in points {
        let tail = tails
            .points
            .iter()
            .find(|(y, _)| *y == year)
            .map(|(_, t)| t.to_string())
            .unwrap_or_default();
        w.write_record([
            year.to_string(),
            mu.to_string(),
            trend.fitted(year).to_string(),
            tail,
        ])?;
    }
    w.flush()?;
    Ok(())
}
