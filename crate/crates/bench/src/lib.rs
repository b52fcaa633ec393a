//! Fixtures shared by the benchmarks.

use spotvol::ingest::{calendarize, CalendarOptions, DayMatrix, PriceSeries};
use spotvol::lowrank::{decompose, residual_series, truncate, ResidualSeries, DEFAULT_RANK};
use spotvol::synth::{generate, SynthSpec};

/// A synthetic leap year with realistic daily shape and Exp(3) noise.
pub fn year_series(seed: u64) -> PriceSeries {
    generate(&SynthSpec::price_like(2016, 3.0, seed)).expect("valid spec")
}

pub fn year_matrix(seed: u64) -> DayMatrix {
    calendarize(&year_series(seed), &CalendarOptions::default())
        .expect("complete year")
        .0
}

/// Rank-2 residuals of a synthetic leap year.
pub fn year_residuals(seed: u64) -> ResidualSeries {
    let m = year_matrix(seed);
    let model = truncate(&decompose(m.values()).expect("finite"), DEFAULT_RANK).expect("rank");
    residual_series(&m, &model).expect("shapes agree")
}
