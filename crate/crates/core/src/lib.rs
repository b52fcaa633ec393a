//! Volatility of hourly, diurnally periodic price series.
//!
//! A year of hourly prices is recast as a 24 x D hour-by-day matrix, its
//! daily and seasonal structure is removed with a truncated SVD, and the
//! absolute residuals are summarized: exponential bulk scale, tail median,
//! winter-concentration statistic with a permutation test, and a multi-year
//! OLS trend.

pub mod ingest;
pub mod lowrank;
pub mod pipeline;
pub mod residual_stats;
pub mod seasonality;
pub mod synth;
pub mod trend;

pub use ingest::{
    calendarize, parse_price_csv, CalendarOptions, CellFlag, CsvFormat, DayMatrix, DstPolicy,
    IngestError, IngestManifest, Observation, ParseOptions, PriceSeries, Quality, ZoneRule,
};
pub use lowrank::{
    decompose, residual_series, spectrum_report, truncate, LowRankError, Matrix, RankPModel,
    ResidualSeries, SpectralDecomposition, SpectrumTable,
};
pub use residual_stats::{
    analyze_residuals, fit_bulk_exponential, probplot_points, tail_median, BulkFit, Estimator,
    ResidualAnalysis, StatsError,
};
pub use seasonality::{angular_momentum, permutation_test, SeasonalityError, SeasonalityTest};
pub use synth::{generate, Modulation, SynthError, SynthSpec};
pub use trend::{fit_trend, tail_trend, TrendError, TrendSeries, VolatilityTrend};
pub use pipeline::{
    analyze_trend, analyze_year, analyze_years, AnalysisConfig, PipelineError, Stage, TrendReport,
    YearFailure, YearInput, YearReport,
};
