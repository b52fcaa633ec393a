//! Synthetic hourly price years with known ground truth.
//!
//! A series is a low-rank signal `Σ_k profile_k(hour) · amplitude_k(day)` plus
//! two-sided exponential noise whose scale may be modulated over the year.
//! Timestamps are UTC, so every generated year is a full 24 x D grid.

use std::f64::consts::PI;

use chrono::{Duration, FixedOffset, NaiveDate, NaiveTime};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{days_in_year, Observation, PriceSeries, HOURS_PER_DAY};

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid synth spec: {0}")]
    InvalidSpec(String),
}

/// Per-day multiplier of a profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Amplitude {
    Constant { level: f64 },
    /// `mean + amplitude * cos(2π (day - peak_day) / D)`, day 0-based.
    Cosine { mean: f64, amplitude: f64, peak_day: f64 },
    /// Explicit per-day values; length must equal the day count.
    Values { values: Vec<f64> },
}

impl Amplitude {
    fn at(&self, day: usize, days: usize) -> f64 {
        match self {
            Amplitude::Constant { level } => *level,
            Amplitude::Cosine {
                mean,
                amplitude,
                peak_day,
            } => mean + amplitude * (2.0 * PI * (day as f64 - peak_day) / days as f64).cos(),
            Amplitude::Values { values } => values[day],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    /// 24 hourly weights.
    pub hourly: Vec<f64>,
    pub amplitude: Amplitude,
}

/// Multiplicative noise-scale factor over days.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Modulation {
    #[default]
    None,
    /// `1 + beta * x(d)²` with `x` running from -1 to 1 across the year.
    UShaped { beta: f64 },
}

impl Modulation {
    pub fn at(&self, day: usize, days: usize) -> f64 {
        match *self {
            Modulation::None => 1.0,
            Modulation::UShaped { beta } => {
                let mid = days as f64 / 2.0;
                let x = (day as f64 + 0.5 - mid) / mid;
                1.0 + beta * x * x
            }
        }
    }
}

fn default_sign_mix() -> f64 {
    0.5
}

fn default_label() -> String {
    "synthetic".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub year: i32,
    pub profiles: Vec<Profile>,
    /// Mean of the noise magnitude, EUR/MWh.
    pub residual_mu: f64,
    #[serde(default)]
    pub modulation: Modulation,
    /// Probability that a noise draw is negative.
    #[serde(default = "default_sign_mix")]
    pub sign_mix: f64,
    pub seed: u64,
    #[serde(default = "default_label")]
    pub market_label: String,
}

impl SynthSpec {
    /// Rank-2 signal resembling a day-ahead price year: a morning/evening
    /// double-peaked base profile with a winter-high seasonal level, plus a
    /// midday correction whose sign flips between seasons.
    pub fn price_like(year: i32, residual_mu: f64, seed: u64) -> Self {
        let base: Vec<f64> = (0..HOURS_PER_DAY)
            .map(|h| {
                let h = h as f64;
                30.0 + 12.0 * (-((h - 8.5) / 2.0).powi(2)).exp()
                    + 15.0 * (-((h - 18.5) / 2.5).powi(2)).exp()
            })
            .collect();
        let midday: Vec<f64> = (0..HOURS_PER_DAY)
            .map(|h| -8.0 * (-((h as f64 - 13.0) / 3.0).powi(2)).exp())
            .collect();
        Self {
            year,
            profiles: vec![
                Profile {
                    hourly: base,
                    amplitude: Amplitude::Cosine {
                        mean: 1.0,
                        amplitude: 0.2,
                        peak_day: 15.0,
                    },
                },
                Profile {
                    hourly: midday,
                    amplitude: Amplitude::Cosine {
                        mean: 0.3,
                        amplitude: 0.7,
                        peak_day: 180.0,
                    },
                },
            ],
            residual_mu,
            modulation: Modulation::None,
            sign_mix: 0.5,
            seed,
            market_label: default_label(),
        }
    }

    pub fn with_modulation(mut self, modulation: Modulation) -> Self {
        self.modulation = modulation;
        self
    }

    fn validate(&self) -> Result<usize, SynthError> {
        let invalid = |m: String| Err(SynthError::InvalidSpec(m));
        if NaiveDate::from_ymd_opt(self.year, 1, 1).is_none() {
            return invalid(format!("year {} out of range", self.year));
        }
        let days = days_in_year(self.year);
        if self.profiles.is_empty() {
            return invalid("at least one profile is required".into());
        }
        if !(self.residual_mu >= 0.0 && self.residual_mu.is_finite()) {
            return invalid(format!("residual_mu must be >= 0, got {}", self.residual_mu));
        }
        if !(0.0..=1.0).contains(&self.sign_mix) {
            return invalid(format!("sign_mix must lie in [0, 1], got {}", self.sign_mix));
        }
        if let Modulation::UShaped { beta } = self.modulation {
            if !(beta >= 0.0 && beta.is_finite()) {
                return invalid(format!("modulation beta must be >= 0, got {beta}"));
            }
        }
        for (k, p) in self.profiles.iter().enumerate() {
            if p.hourly.len() != HOURS_PER_DAY {
                return invalid(format!("profile {k} has {} hourly weights", p.hourly.len()));
            }
            if let Amplitude::Values { values } = &p.amplitude {
                if values.len() != days {
                    return invalid(format!(
                        "profile {k} has {} amplitudes for {days} days",
                        values.len()
                    ));
                }
            }
        }
        Ok(days)
    }
}

/// Signal and noise of a generated year, both in hour order.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthComponents {
    pub signal: Vec<f64>,
    pub noise: Vec<f64>,
}

pub fn generate_components(spec: &SynthSpec) -> Result<SynthComponents, SynthError> {
    let days = spec.validate()?;
    let n = days * HOURS_PER_DAY;
    let mut signal = vec![0.0; n];
    for p in &spec.profiles {
        for d in 0..days {
            let amp = p.amplitude.at(d, days);
            for (h, w) in p.hourly.iter().enumerate() {
                signal[d * HOURS_PER_DAY + h] += w * amp;
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut noise = Vec::with_capacity(n);
    for i in 0..n {
        let magnitude: f64 = Exp1.sample(&mut rng);
        let negative = rng.random::<f64>() < spec.sign_mix;
        let scale = spec.residual_mu * spec.modulation.at(i / HOURS_PER_DAY, days);
        let e = magnitude * scale;
        noise.push(if negative { -e } else { e });
    }
    Ok(SynthComponents { signal, noise })
}

/// Generates one synthetic year as a UTC-stamped price series.
pub fn generate(spec: &SynthSpec) -> Result<PriceSeries, SynthError> {
    let SynthComponents { signal, noise } = generate_components(spec)?;
    let utc = FixedOffset::east_opt(0).unwrap();
    let start = NaiveDate::from_ymd_opt(spec.year, 1, 1)
        .unwrap()
        .and_time(NaiveTime::MIN);
    let observations = signal
        .iter()
        .zip(&noise)
        .enumerate()
        .map(|(i, (s, e))| Observation::observed(start + Duration::hours(i as i64), utc, s + e))
        .collect();
    Ok(PriceSeries {
        observations,
        market_label: spec.market_label.clone(),
        year: spec.year,
    })
}
