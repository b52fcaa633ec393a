//! Mid-year concentration statistic and its permutation test.
//!
//! Hour slots `h = 1..=n` are mapped to `x(h) = (h - h_m) / h_m` with
//! `h_m = n / 2`, so `x` runs from about -1 (1 January) to +1 (31 December).
//! The statistic is `L = (1/1000) Σ |R(h)| x(h)²`: large values mean the
//! residual mass sits at the ends of the year, i.e. in winter.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lowrank::ResidualSeries;

pub const DEFAULT_PERMUTATIONS: usize = 1000;
pub const MIN_PERMUTATIONS: usize = 100;
pub const HISTOGRAM_BINS: usize = 30;

const SCALE: f64 = 1000.0;

#[derive(Debug, Error, PartialEq)]
pub enum SeasonalityError {
    #[error("need at least 2 residuals, got {0}")]
    EmptySeries(usize),
    #[error("{found} permutations requested, at least {required} required")]
    TooFewPermutations { found: usize, required: usize },
}

/// Squared, rescaled distance of each 1-based hour slot from mid-year.
pub fn slot_weights(n: usize) -> Vec<f64> {
    let mid = n as f64 / 2.0;
    (1..=n)
        .map(|h| {
            let x = (h as f64 - mid) / mid;
            x * x
        })
        .collect()
}

fn weighted_sum(values: &[f64], weights: &[f64]) -> f64 {
    values.iter().zip(weights).map(|(r, w)| r * w).sum::<f64>() / SCALE
}

/// Observed statistic over all cells of the series, imputed ones included.
pub fn angular_momentum(residuals: &ResidualSeries) -> Result<f64, SeasonalityError> {
    if residuals.len() < 2 {
        return Err(SeasonalityError::EmptySeries(residuals.len()));
    }
    Ok(weighted_sum(&residuals.absolute(), &slot_weights(residuals.len())))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub bin_left: f64,
    pub bin_right: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationSummary {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub histogram: Vec<HistogramBin>,
}

impl PermutationSummary {
    fn from_values(values: &[f64], bins: usize) -> Self {
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let histogram = if max > min {
            let width = (max - min) / bins as f64;
            let mut counts = vec![0usize; bins];
            for v in values {
                let b = (((v - min) / width) as usize).min(bins - 1);
                counts[b] += 1;
            }
            counts
                .into_iter()
                .enumerate()
                .map(|(i, count)| HistogramBin {
                    bin_left: min + i as f64 * width,
                    bin_right: if i + 1 == bins { max } else { min + (i + 1) as f64 * width },
                    count,
                })
                .collect()
        } else {
            vec![HistogramBin {
                bin_left: min,
                bin_right: max,
                count: values.len(),
            }]
        };
        Self {
            min,
            max,
            mean,
            histogram,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeasonalityTest {
    pub l_observed: f64,
    pub n_permutations: usize,
    pub seed: u64,
    /// `(#{L_perm >= L_obs} + 1) / (n_permutations + 1)`.
    pub p_value: f64,
    pub n_cells: usize,
    pub n_imputed: usize,
    pub summary: PermutationSummary,
    /// Statistic of each permutation, in permutation-index order.
    #[serde(skip)]
    pub permutation_values: Vec<f64>,
}

impl SeasonalityTest {
    pub fn write_histogram_csv<W: Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["bin_left", "bin_right", "count"])?;
        for b in &self.summary.histogram {
            w.write_record([b.bin_left.to_string(), b.bin_right.to_string(), b.count.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Generator for permutation `index`: one ChaCha stream per index, so the
/// outcome does not depend on how permutations are scheduled.
fn permutation_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Permutation test of the concentration statistic against uniformly random
/// reassignments of residual values to hour slots.
pub fn permutation_test(
    residuals: &ResidualSeries,
    n_permutations: usize,
    seed: u64,
) -> Result<SeasonalityTest, SeasonalityError> {
    if n_permutations < MIN_PERMUTATIONS {
        return Err(SeasonalityError::TooFewPermutations {
            found: n_permutations,
            required: MIN_PERMUTATIONS,
        });
    }
    if residuals.len() < 2 {
        return Err(SeasonalityError::EmptySeries(residuals.len()));
    }
    let values = residuals.absolute();
    let weights = slot_weights(values.len());
    let l_observed = weighted_sum(&values, &weights);

    let permutation_values: Vec<f64> = (0..n_permutations)
        .into_par_iter()
        .map_init(
            || values.clone(),
            |buf, index| {
                buf.copy_from_slice(&values);
                buf.shuffle(&mut permutation_rng(seed, index));
                weighted_sum(buf, &weights)
            },
        )
        .collect();

    let exceed = permutation_values.iter().filter(|l| **l >= l_observed).count();
    let p_value = (exceed + 1) as f64 / (n_permutations + 1) as f64;
    Ok(SeasonalityTest {
        l_observed,
        n_permutations,
        seed,
        p_value,
        n_cells: values.len(),
        n_imputed: residuals.imputed_count(),
        summary: PermutationSummary::from_values(&permutation_values, HISTOGRAM_BINS),
        permutation_values,
    })
}
