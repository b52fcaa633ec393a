//! `spotvol` command-line interface.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use spotvol::ingest::{calendarize, parse_price_csv, CalendarOptions, CsvFormat, ParseOptions};
use spotvol::ingest::{DstPolicy, ZoneRule, DEFAULT_GAP_LIMIT};
use spotvol::pipeline::{
    analyze_trend, analyze_year, analyze_years, load_year_reports, AnalysisConfig, YearInput,
};
use spotvol::residual_stats::Estimator;
use spotvol::synth::{generate, Modulation, SynthSpec};

const EXIT_INPUT: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "spotvol", version)]
#[command(about = "SVD-deseasonalized volatility of hourly day-ahead prices")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct InputArgs {
    /// Input layout: `long` (timestamp,price) or `wide` (date,h1..h24).
    #[arg(long, default_value = "long")]
    format: CsvFormat,

    /// Civil-time rule for wide files: `cet`, `utc` or a fixed offset like `+01:00`.
    #[arg(long, default_value = "cet")]
    zone: ZoneRule,

    /// DST folding rule, `<spring>/<fall>`.
    #[arg(long, default_value = "interpolate/mean")]
    dst_policy: DstPolicy,

    /// Longest run of missing hours that is interpolated.
    #[arg(long, default_value_t = DEFAULT_GAP_LIMIT)]
    gap_limit: usize,
}

#[derive(Debug, Args)]
struct AnalysisArgs {
    #[command(flatten)]
    input: InputArgs,

    /// Truncation rank of the SVD model.
    #[arg(long, default_value_t = 2)]
    rank: usize,

    /// Fraction of absolute residuals treated as the exponential bulk.
    #[arg(long, default_value_t = 0.99)]
    trim: f64,

    #[arg(long, default_value_t = 1000)]
    permutations: usize,

    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Bulk estimator: `trimmed-mean` or `censored-mle`.
    #[arg(long, default_value = "trimmed-mean")]
    estimator: Estimator,

    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

impl AnalysisArgs {
    fn config(&self) -> AnalysisConfig {
        AnalysisConfig {
            rank: self.rank,
            trim: self.trim,
            permutations: self.permutations,
            seed: self.seed,
            dst_policy: self.input.dst_policy,
            gap_limit: self.input.gap_limit,
            estimator: self.estimator,
            format: self.input.format,
            zone: self.input.zone,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse and calendarize one file, printing the ingest manifest.
    IngestCheck {
        input: PathBuf,
        #[command(flatten)]
        args: InputArgs,
    },
    /// Analyze one year of prices.
    AnalyzeYear {
        input: PathBuf,
        #[command(flatten)]
        args: AnalysisArgs,
    },
    /// Analyze several years (one file each) and fit the volatility trend.
    AnalyzeTrend {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[command(flatten)]
        args: AnalysisArgs,
        /// Years analyzed concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Rebuild the trend report from the year reports already in a directory.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic year in the long CSV format.
    Synth {
        /// JSON synth spec; overrides the quick flags below.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 2016)]
        year: i32,
        /// Mean noise magnitude.
        #[arg(long, default_value_t = 3.0)]
        mu: f64,
        /// Winter noise boost of a U-shaped modulation.
        #[arg(long, default_value_t = 0.0)]
        beta: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn fail(code: u8, message: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {message}");
    ExitCode::from(code)
}

fn ingest_check(input: &Path, args: &InputArgs) -> ExitCode {
    let bytes = match fs::read(input) {
        Ok(b) => b,
        Err(e) => return fail(EXIT_INPUT, format!("{}: {e}", input.display())),
    };
    let opts = ParseOptions {
        format: args.format,
        zone: args.zone,
        market_label: String::new(),
    };
    let series = match parse_price_csv(bytes.as_slice(), &opts) {
        Ok(s) => s,
        Err(e) => return fail(EXIT_INPUT, e),
    };
    let cal = CalendarOptions {
        dst_policy: args.dst_policy,
        gap_limit: args.gap_limit,
    };
    match calendarize(&series, &cal) {
        Ok((_, manifest)) => {
            let out = json!({
                "input": input.file_name().map(|n| n.to_string_lossy().into_owned()),
                "observations": series.observations.len(),
                "manifest": manifest,
            });
            println!("{}", serde_json::to_string_pretty(&out).expect("serializable"));
            ExitCode::SUCCESS
        }
        Err(e) => fail(EXIT_INPUT, e),
    }
}

fn run_trend(inputs: &[PathBuf], args: &AnalysisArgs, jobs: usize) -> ExitCode {
    let config = args.config();
    let inputs: Vec<YearInput> = inputs.iter().cloned().map(YearInput::Path).collect();
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for outcome in analyze_years(&config, &inputs, &args.out, jobs) {
        match outcome {
            Ok(r) => reports.push(r),
            Err(f) => {
                eprintln!("error: {}: {}", f.input, f.message);
                failures.push(f);
            }
        }
    }
    let worst_failure = failures.iter().map(|f| f.exit_code).max();
    match analyze_trend(&config, &reports, failures, &args.out) {
        Ok(trend) => {
            let t = &trend.mu_hat_trend;
            println!(
                "slope {:.4} per year, 95% CI ({:.4}, {:.4}) over {} years",
                t.slope,
                t.ci95.0,
                t.ci95.1,
                trend.years.len()
            );
            worst_failure.map_or(ExitCode::SUCCESS, ExitCode::from)
        }
        Err(e) => fail(worst_failure.unwrap_or(e.exit_code()), e),
    }
}

fn run_report(out: &Path) -> ExitCode {
    let reports = match load_year_reports(out) {
        Ok(r) => r,
        Err(e) => return fail(e.exit_code(), e),
    };
    let Some(first) = reports.first() else {
        return fail(EXIT_INPUT, format!("no year_<Y>.json reports in {}", out.display()));
    };
    let config = first.config.clone();
    match analyze_trend(&config, &reports, Vec::new(), out) {
        Ok(trend) => {
            println!(
                "slope {:.4} per year over {} years",
                trend.mu_hat_trend.slope,
                trend.years.len()
            );
            ExitCode::SUCCESS
        }
        Err(e) => fail(e.exit_code(), e),
    }
}

fn run_synth(spec_path: Option<&Path>, quick: SynthSpec, out: &Path) -> ExitCode {
    let spec = match spec_path {
        Some(path) => {
            let parsed = fs::read(path)
                .map_err(|e| e.to_string())
                .and_then(|b| serde_json::from_slice::<SynthSpec>(&b).map_err(|e| e.to_string()));
            match parsed {
                Ok(s) => s,
                Err(e) => return fail(EXIT_INPUT, format!("{}: {e}", path.display())),
            }
        }
        None => quick,
    };
    let series = match generate(&spec) {
        Ok(s) => s,
        Err(e) => return fail(EXIT_INPUT, e),
    };
    let written = fs::File::create(out)
        .map_err(|e| e.to_string())
        .and_then(|f| series.write_long_csv(std::io::BufWriter::new(f)).map_err(|e| e.to_string()));
    match written {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(1, format!("{}: {e}", out.display())),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::IngestCheck { input, args } => ingest_check(&input, &args),
        Command::AnalyzeYear { input, args } => {
            match analyze_year(&args.config(), &YearInput::Path(input), &args.out) {
                Ok(r) => {
                    println!(
                        "{}: mu_hat {:.4}, tail median {}, L {:.4}, p {:.4}",
                        r.year,
                        r.mu_hat,
                        r.tail_median.map_or("n/a".to_owned(), |t| format!("{t:.4}")),
                        r.l_observed,
                        r.p_value
                    );
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e.exit_code(), e),
            }
        }
        Command::AnalyzeTrend { inputs, args, jobs } => run_trend(&inputs, &args, jobs),
        Command::Report { out } => run_report(&out),
        Command::Synth {
            spec,
            year,
            mu,
            beta,
            seed,
            out,
        } => {
            if !(mu >= 0.0 && beta >= 0.0) {
                return fail(EXIT_INPUT, "--mu and --beta must be nonnegative");
            }
            let modulation = if beta > 0.0 {
                Modulation::UShaped { beta }
            } else {
                Modulation::None
            };
            let quick = SynthSpec::price_like(year, mu, seed).with_modulation(modulation);
            run_synth(spec.as_deref(), quick, &out)
        }
    }
}
