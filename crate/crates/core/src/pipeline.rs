//! Per-year and multi-year analysis runs with JSON reports and plot-ready CSVs.
//!
//! Every file a run writes is named after the year (`year_2016.json`,
//! `probplot_2016.csv`, ...) and referenced from the report by bare file name,
//! so reports do not depend on where the output directory lives.

use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{
    calendarize, parse_price_csv, CalendarOptions, CsvFormat, DayMatrix, DstPolicy, IngestError,
    IngestManifest, ParseOptions, ZoneRule, DEFAULT_GAP_LIMIT, HOURS_PER_DAY,
};
use crate::lowrank::{
    decompose, residual_series, spectrum_report, truncate, write_amplitudes_csv,
    write_profiles_csv, LowRankError, RankPModel, ResidualSeries, DEFAULT_RANK,
};
use crate::residual_stats::{
    analyze_residuals, write_probplot_csv, Estimator, ResidualAnalysis, StatsError,
    DEFAULT_TRIM_QUANTILE,
};
use crate::seasonality::{permutation_test, SeasonalityError, SeasonalityTest, DEFAULT_PERMUTATIONS};
use crate::trend::{fit_trend, tail_trend, write_trend_csv, TrendError, TrendSeries, VolatilityTrend};

/// Analysis parameters; echoed verbatim into every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    pub rank: usize,
    pub trim: f64,
    pub permutations: usize,
    pub seed: u64,
    pub dst_policy: DstPolicy,
    pub gap_limit: usize,
    pub estimator: Estimator,
    pub format: CsvFormat,
    pub zone: ZoneRule,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            rank: DEFAULT_RANK,
            trim: DEFAULT_TRIM_QUANTILE,
            permutations: DEFAULT_PERMUTATIONS,
            seed: 0,
            dst_policy: DstPolicy::default(),
            gap_limit: DEFAULT_GAP_LIMIT,
            estimator: Estimator::default(),
            format: CsvFormat::default(),
            zone: ZoneRule::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Read,
    Parse,
    Calendarize,
    Decompose,
    Truncate,
    Residuals,
    ResidualStats,
    Seasonality,
    Trend,
    Output,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::Read => "read",
            Stage::Parse => "parse",
            Stage::Calendarize => "calendarize",
            Stage::Decompose => "decompose",
            Stage::Truncate => "truncate",
            Stage::Residuals => "residuals",
            Stage::ResidualStats => "residual_stats",
            Stage::Seasonality => "seasonality",
            Stage::Trend => "trend",
            Stage::Output => "output",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Error)]
pub enum StageError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    LowRank(#[from] LowRankError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Seasonality(#[from] SeasonalityError),
    #[error(transparent)]
    Trend(#[from] TrendError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Error)]
#[error("{stage} stage failed: {source}")]
pub struct PipelineError {
    pub stage: Stage,
    #[source]
    pub source: StageError,
}

impl PipelineError {
    fn at(stage: Stage) -> impl FnOnce(StageError) -> Self {
        move |source| Self { stage, source }
    }

    /// 2 for bad input, 3 for numerical failures, 1 when writing output failed.
    pub fn exit_code(&self) -> u8 {
        match (&self.source, self.stage) {
            (StageError::Ingest(_) | StageError::Invalid(_), _) => 2,
            (StageError::LowRank(LowRankError::NonFiniteInput { .. }), _) => 2,
            (StageError::Io(_) | StageError::Json(_), Stage::Read) => 2,
            (StageError::Io(_) | StageError::Csv(_) | StageError::Json(_), _) => 1,
            _ => 3,
        }
    }
}

trait StageResult<T> {
    fn stage(self, stage: Stage) -> Result<T, PipelineError>;
}

impl<T, E: Into<StageError>> StageResult<T> for Result<T, E> {
    fn stage(self, stage: Stage) -> Result<T, PipelineError> {
        self.map_err(|e| PipelineError::at(stage)(e.into()))
    }
}

/// Where a year's prices come from.
#[derive(Debug, Clone)]
pub enum YearInput {
    Path(PathBuf),
    Bytes { name: String, data: Vec<u8> },
}

impl YearInput {
    /// File name used in reports.
    pub fn name(&self) -> String {
        match self {
            YearInput::Path(p) => p
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| p.display().to_string()),
            YearInput::Bytes { name, .. } => name.clone(),
        }
    }

    fn read(&self) -> std::io::Result<Vec<u8>> {
        match self {
            YearInput::Path(p) => fs::read(p),
            YearInput::Bytes { data, .. } => Ok(data.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct YearFiles {
    pub report: String,
    pub probplot: String,
    pub spectrum: String,
    pub profiles: String,
    pub amplitudes: String,
    pub residuals: String,
    pub permutation_histogram: String,
}

impl YearFiles {
    fn for_year(year: i32) -> Self {
        Self {
            report: format!("year_{year}.json"),
            probplot: format!("probplot_{year}.csv"),
            spectrum: format!("spectrum_{year}.csv"),
            profiles: format!("profiles_{year}.csv"),
            amplitudes: format!("amplitudes_{year}.csv"),
            residuals: format!("residuals_{year}.csv"),
            permutation_histogram: format!("permutation_hist_{year}.csv"),
        }
    }

    pub fn all(&self) -> [&str; 7] {
        [
            &self.report,
            &self.probplot,
            &self.spectrum,
            &self.profiles,
            &self.amplitudes,
            &self.residuals,
            &self.permutation_histogram,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YearReport {
    pub year: i32,
    pub input: String,
    pub config: AnalysisConfig,
    pub ingest: IngestManifest,
    pub singular_values: Vec<f64>,
    pub sigma_normalized: Vec<f64>,
    pub rank: usize,
    pub frobenius_error: f64,
    pub relative_frobenius_error: f64,
    pub mu_hat: f64,
    pub tail_median: Option<f64>,
    pub l_observed: f64,
    pub p_value: f64,
    pub residual_stats: ResidualAnalysis,
    pub seasonality: SeasonalityTest,
    pub files: YearFiles,
}

impl YearReport {
    fn check_finite(&self) -> Result<(), StageError> {
        let scalars = [
            ("frobenius_error", self.frobenius_error),
            ("relative_frobenius_error", self.relative_frobenius_error),
            ("mu_hat", self.mu_hat),
            ("l_observed", self.l_observed),
            ("p_value", self.p_value),
            ("cutoff", self.residual_stats.cutoff),
            ("mu_all", self.residual_stats.mu_all),
            ("mu_censored", self.residual_stats.mu_censored),
        ];
        let vectors = self.singular_values.iter().chain(&self.sigma_normalized);
        let tail = self.tail_median.iter();
        if let Some((name, _)) = scalars.iter().find(|(_, v)| !v.is_finite()) {
            return Err(StageError::Invalid(format!("{name} is not finite")));
        }
        if vectors.chain(tail).any(|v| !v.is_finite()) {
            return Err(StageError::Invalid("non-finite spectrum or tail value".into()));
        }
        Ok(())
    }
}

fn validate_config(config: &AnalysisConfig) -> Result<(), PipelineError> {
    let invalid = |m: String| Err(PipelineError::at(Stage::Read)(StageError::Invalid(m)));
    if config.rank == 0 || config.rank > HOURS_PER_DAY {
        return invalid(format!("rank {} outside 1..={HOURS_PER_DAY}", config.rank));
    }
    if !(config.trim > 0.5 && config.trim <= 1.0) {
        return invalid(format!("trim quantile {} outside (0.5, 1]", config.trim));
    }
    Ok(())
}

fn create(out_dir: &Path, name: &str) -> Result<BufWriter<File>, PipelineError> {
    File::create(out_dir.join(name))
        .map(BufWriter::new)
        .stage(Stage::Output)
}

fn write_json<T: Serialize>(out_dir: &Path, name: &str, value: &T) -> Result<(), PipelineError> {
    let mut w = create(out_dir, name)?;
    serde_json::to_writer_pretty(&mut w, value).stage(Stage::Output)?;
    w.write_all(b"\n").stage(Stage::Output)?;
    w.flush().stage(Stage::Output)
}

fn write_residuals_csv<W: Write>(
    matrix: &DayMatrix,
    model: &RankPModel,
    residuals: &ResidualSeries,
    writer: W,
) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["slot", "date", "hour", "value", "approximation", "residual", "flag"])?;
    for (d, date) in matrix.day_labels().iter().enumerate() {
        for h in 0..matrix.hours() {
            let slot = d * matrix.hours() + h;
            let flag = match residuals.mask()[slot] {
                crate::ingest::CellFlag::Observed => "observed",
                crate::ingest::CellFlag::Imputed => "imputed",
            };
            w.write_record([
                (slot + 1).to_string(),
                date.to_string(),
                h.to_string(),
                matrix.get(h, d).to_string(),
                model.approximation.get(h, d).to_string(),
                residuals.signed()[slot].to_string(),
                flag.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Runs ingest, decomposition, residual statistics and the permutation test
/// for one year, writing the report and its plot files into `out_dir`.
pub fn analyze_year(
    config: &AnalysisConfig,
    input: &YearInput,
    out_dir: &Path,
) -> Result<YearReport, PipelineError> {
    validate_config(config)?;
    let bytes = input.read().stage(Stage::Read)?;
    let parse_opts = ParseOptions {
        format: config.format,
        zone: config.zone,
        market_label: String::new(),
    };
    let series = parse_price_csv(bytes.as_slice(), &parse_opts).stage(Stage::Parse)?;
    let cal_opts = CalendarOptions {
        dst_policy: config.dst_policy,
        gap_limit: config.gap_limit,
    };
    let (matrix, manifest) = calendarize(&series, &cal_opts).stage(Stage::Calendarize)?;

    let dec = decompose(matrix.values()).stage(Stage::Decompose)?;
    let model = truncate(&dec, config.rank).stage(Stage::Truncate)?;
    let residuals = residual_series(&matrix, &model).stage(Stage::Residuals)?;
    let stats =
        analyze_residuals(&residuals, config.trim, config.estimator).stage(Stage::ResidualStats)?;
    let seasonality =
        permutation_test(&residuals, config.permutations, config.seed).stage(Stage::Seasonality)?;

    let year = matrix.year();
    let sigma = dec.singular_values().to_vec();
    let spectrum = spectrum_report([(year, sigma.as_slice())]);
    let norm = matrix.values().frobenius_norm();
    let files = YearFiles::for_year(year);
    let report = YearReport {
        year,
        input: input.name(),
        config: config.clone(),
        ingest: manifest,
        sigma_normalized: spectrum.rows.iter().map(|r| r.sigma_normalized).collect(),
        singular_values: sigma,
        rank: config.rank,
        frobenius_error: model.frobenius_error,
        relative_frobenius_error: if norm > 0.0 {
            model.frobenius_error / norm
        } else {
            0.0
        },
        mu_hat: stats.mu_hat,
        tail_median: stats.tail_median,
        l_observed: seasonality.l_observed,
        p_value: seasonality.p_value,
        residual_stats: stats,
        seasonality,
        files,
    };
    report.check_finite().stage(Stage::ResidualStats)?;

    fs::create_dir_all(out_dir).stage(Stage::Output)?;
    let f = &report.files;
    write_probplot_csv(&report.residual_stats.probplot, create(out_dir, &f.probplot)?)
        .stage(Stage::Output)?;
    spectrum.write_csv(create(out_dir, &f.spectrum)?).stage(Stage::Output)?;
    write_profiles_csv(&dec, config.rank, create(out_dir, &f.profiles)?).stage(Stage::Output)?;
    write_amplitudes_csv(&dec, config.rank, create(out_dir, &f.amplitudes)?)
        .stage(Stage::Output)?;
    write_residuals_csv(&matrix, &model, &residuals, create(out_dir, &f.residuals)?)
        .stage(Stage::Output)?;
    report
        .seasonality
        .write_histogram_csv(create(out_dir, &f.permutation_histogram)?)
        .stage(Stage::Output)?;
    write_json(out_dir, &f.report, &report)?;
    Ok(report)
}

/// A year that could not be analyzed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct YearFailure {
    pub input: String,
    pub stage: Stage,
    pub exit_code: u8,
    pub message: String,
}

impl YearFailure {
    fn new(input: &YearInput, err: &PipelineError) -> Self {
        Self {
            input: input.name(),
            stage: err.stage,
            exit_code: err.exit_code(),
            message: err.to_string(),
        }
    }
}

/// Analyzes each input independently on at most `jobs` threads. Results come
/// back in input order whatever the schedule.
pub fn analyze_years(
    config: &AnalysisConfig,
    inputs: &[YearInput],
    out_dir: &Path,
    jobs: usize,
) -> Vec<Result<YearReport, YearFailure>> {
    let run = || {
        inputs
            .par_iter()
            .map(|input| {
                analyze_year(config, input, out_dir).map_err(|e| YearFailure::new(input, &e))
            })
            .collect()
    };
    match rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build() {
        Ok(pool) => pool.install(run),
        Err(_) => run(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrendFiles {
    pub report: String,
    pub trend: String,
    pub spectrum: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendReport {
    pub config: AnalysisConfig,
    pub years: Vec<i32>,
    pub mu_hat_trend: VolatilityTrend,
    pub tail_median_series: TrendSeries,
    pub failures: Vec<YearFailure>,
    pub files: TrendFiles,
}

/// Fits the multi-year trend of `mu_hat` and collects the tail-median series.
pub fn analyze_trend(
    config: &AnalysisConfig,
    reports: &[YearReport],
    failures: Vec<YearFailure>,
    out_dir: &Path,
) -> Result<TrendReport, PipelineError> {
    let mut reports: Vec<&YearReport> = reports.iter().collect();
    reports.sort_by_key(|r| r.year);
    if let Some(pair) = reports.windows(2).find(|w| w[0].year == w[1].year) {
        return Err(PipelineError::at(Stage::Trend)(StageError::Invalid(format!(
            "year {} reported twice",
            pair[0].year
        ))));
    }
    let mu_points: Vec<(i32, f64)> = reports.iter().map(|r| (r.year, r.mu_hat)).collect();
    let tail_points: Vec<(i32, f64)> = reports
        .iter()
        .filter_map(|r| r.tail_median.map(|t| (r.year, t)))
        .collect();
    let mu_hat_trend = fit_trend(&mu_points).stage(Stage::Trend)?;
    let tail_median_series = tail_trend(&tail_points);
    let spectrum = spectrum_report(reports.iter().map(|r| (r.year, r.singular_values.as_slice())));

    let files = TrendFiles {
        report: "trend.json".into(),
        trend: "trend.csv".into(),
        spectrum: "spectrum.csv".into(),
    };
    fs::create_dir_all(out_dir).stage(Stage::Output)?;
    write_trend_csv(&mu_hat_trend, &tail_median_series, create(out_dir, &files.trend)?)
        .stage(Stage::Output)?;
    spectrum.write_csv(create(out_dir, &files.spectrum)?).stage(Stage::Output)?;
    let report = TrendReport {
        config: config.clone(),
        years: mu_points.iter().map(|(y, _)| *y).collect(),
        mu_hat_trend,
        tail_median_series,
        failures,
        files,
    };
    write_json(out_dir, &report.files.report, &report)?;
    Ok(report)
}

/// Loads every `year_<Y>.json` in `dir`, sorted by year.
pub fn load_year_reports(dir: &Path) -> Result<Vec<YearReport>, PipelineError> {
    let mut reports = Vec::new();
    for entry in fs::read_dir(dir).stage(Stage::Read)? {
        let path = entry.stage(Stage::Read)?.path();
        let is_report = path
            .file_name()
            .and_then(|n| n.to_str())
            .is_some_and(|n| n.starts_with("year_") && n.ends_with(".json"));
        if !is_report {
            continue;
        }
        let data = fs::read(&path).stage(Stage::Read)?;
        reports.push(serde_json::from_slice::<YearReport>(&data).stage(Stage::Read)?);
    }
    reports.sort_by_key(|r| r.year);
    Ok(reports)
}
