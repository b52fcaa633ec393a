//! Hourly price ingestion.
//!
//! Two CSV layouts are accepted:
//!
//! * long: header `timestamp,price`, one ISO-8601 timestamp with UTC offset per row
//!   (`2016-07-01T13:00+02:00,28.50`);
//! * wide: header `date,h1,...,h24`, one civil day per row, `h1` being the hour
//!   starting at 00:00 local time. Empty cells are missing values.
//!
//! Series are normalized in local civil time. A day at a daylight-saving
//! transition has 23 or 25 wall-clock hours; [`calendarize`] folds it back onto
//! 24 slots according to a [`DstPolicy`].

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use chrono::{
    DateTime, Datelike, Duration, FixedOffset, NaiveDate, NaiveDateTime, NaiveTime, Timelike,
    Weekday,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lowrank::Matrix;

/// Hour slots per day column.
pub const HOURS_PER_DAY: usize = 24;

/// Default limit on consecutive missing hours that may be interpolated.
pub const DEFAULT_GAP_LIMIT: usize = 6;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("line {line}: duplicate timestamp {timestamp}")]
    DuplicateTimestamp { line: u64, timestamp: String },
    #[error("input contains no observations")]
    EmptyInput,
    #[error("gap of {length} hours starting at {start} exceeds the limit of {limit} hours")]
    GapTooLong {
        start: NaiveDateTime,
        length: usize,
        limit: usize,
    },
    #[error("observation dated {found} lies outside year {expected}")]
    WrongYearSpan { expected: i32, found: NaiveDate },
    #[error("slot {slot} carries {count} values")]
    ConflictingSlot { slot: NaiveDateTime, count: usize },
    #[error("could not read input: {0}")]
    Io(#[from] std::io::Error),
}

/// Quality flag carried by every observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quality {
    Observed,
    Imputed,
    Missing,
}

/// Flag of a calendarized cell. Missing values never survive calendarization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellFlag {
    Observed,
    Imputed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    /// Wall-clock start of the hour.
    pub local: NaiveDateTime,
    /// UTC offset in force; `None` when the wall-clock hour does not exist.
    pub offset: Option<FixedOffset>,
    pub value: Option<f64>,
    pub quality: Quality,
}

impl Observation {
    pub fn observed(local: NaiveDateTime, offset: FixedOffset, value: f64) -> Self {
        Self {
            local,
            offset: Some(offset),
            value: Some(value),
            quality: Quality::Observed,
        }
    }

    pub fn instant(&self) -> Option<DateTime<FixedOffset>> {
        self.offset
            .and_then(|o| self.local.and_local_timezone(o).single())
    }
}

/// Ordered hourly observations for one calendar year.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceSeries {
    pub observations: Vec<Observation>,
    pub market_label: String,
    pub year: i32,
}

impl PriceSeries {
    pub fn count(&self, quality: Quality) -> usize {
        self.observations
            .iter()
            .filter(|o| o.quality == quality)
            .count()
    }

    /// Writes the series in the canonical long format. Missing observations
    /// that have a real wall-clock time are written with an empty price.
    pub fn write_long_csv<W: Write>(&self, writer: W) -> Result<(), IngestError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["timestamp", "price"]).map_err(csv_io)?;
        for obs in &self.observations {
            let Some(ts) = obs.instant() else { continue };
            let value = obs.value.map(|v| v.to_string()).unwrap_or_default();
            w.write_record([ts.format("%Y-%m-%dT%H:%M%:z").to_string(), value])
                .map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_io(e: csv::Error) -> IngestError {
    IngestError::Io(std::io::Error::other(e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CsvFormat {
    #[default]
    Long,
    Wide,
}

impl FromStr for CsvFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "long" => Ok(Self::Long),
            "wide" => Ok(Self::Wide),
            other => Err(format!("unknown format `{other}` (expected long or wide)")),
        }
    }
}

/// How a wall-clock time maps onto UTC offsets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LocalMapping {
    Single(FixedOffset),
    /// Repeated hour at the autumn transition: (earlier, later) offsets.
    Ambiguous(FixedOffset, FixedOffset),
    /// Hour skipped at the spring transition.
    Nonexistent,
}

/// Civil-time rule used to interpret wide files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ZoneRule {
    /// CET/CEST with the EU transition dates (last Sundays of March and October).
    #[default]
    CentralEuropean,
    Fixed(FixedOffset),
}

fn last_sunday(year: i32, month: u32) -> NaiveDate {
    let first_next = if month == 12 {
        NaiveDate::from_ymd_opt(year + 1, 1, 1)
    } else {
        NaiveDate::from_ymd_opt(year, month + 1, 1)
    }
    .expect("valid month start");
    let mut day = first_next.pred_opt().expect("valid date");
    while day.weekday() != Weekday::Sun {
        day = day.pred_opt().expect("valid date");
    }
    day
}

impl ZoneRule {
    pub fn resolve(&self, local: NaiveDateTime) -> LocalMapping {
        match *self {
            ZoneRule::Fixed(offset) => LocalMapping::Single(offset),
            ZoneRule::CentralEuropean => {
                let cet = FixedOffset::east_opt(3600).unwrap();
                let cest = FixedOffset::east_opt(7200).unwrap();
                let date = local.date();
                let hour = local.hour();
                let spring = last_sunday(date.year(), 3);
                let fall = last_sunday(date.year(), 10);
                if date == spring {
                    match hour {
                        0 | 1 => LocalMapping::Single(cet),
                        2 => LocalMapping::Nonexistent,
                        _ => LocalMapping::Single(cest),
                    }
                } else if date == fall {
                    match hour {
                        0 | 1 => LocalMapping::Single(cest),
                        2 => LocalMapping::Ambiguous(cest, cet),
                        _ => LocalMapping::Single(cet),
                    }
                } else if date > spring && date < fall {
                    LocalMapping::Single(cest)
                } else {
                    LocalMapping::Single(cet)
                }
            }
        }
    }
}

impl fmt::Display for ZoneRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ZoneRule::CentralEuropean => f.write_str("cet"),
            ZoneRule::Fixed(o) if o.local_minus_utc() == 0 => f.write_str("utc"),
            ZoneRule::Fixed(o) => write!(f, "{o}"),
        }
    }
}

impl FromStr for ZoneRule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "cet" | "cet/cest" | "europe/berlin" => Ok(Self::CentralEuropean),
            "utc" | "z" => Ok(Self::Fixed(FixedOffset::east_opt(0).unwrap())),
            other => parse_offset(other)
                .map(Self::Fixed)
                .ok_or_else(|| format!("unknown zone rule `{s}`")),
        }
    }
}

fn parse_offset(s: &str) -> Option<FixedOffset> {
    let (sign, rest) = match s.as_bytes().first()? {
        b'+' => (1, &s[1..]),
        b'-' => (-1, &s[1..]),
        _ => return None,
    };
    let (h, m) = rest.split_once(':').unwrap_or((rest, "0"));
    let secs = h.parse::<i32>().ok()? * 3600 + m.parse::<i32>().ok()? * 60;
    FixedOffset::east_opt(sign * secs)
}

impl Serialize for ZoneRule {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ZoneRule {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseOptions {
    pub format: CsvFormat,
    /// Only consulted for wide files; long files carry explicit offsets.
    pub zone: ZoneRule,
    pub market_label: String,
}

impl Default for ParseOptions {
    fn default() -> Self {
        Self {
            format: CsvFormat::Long,
            zone: ZoneRule::CentralEuropean,
            market_label: String::new(),
        }
    }
}

fn parse_timestamp(raw: &str) -> Option<DateTime<FixedOffset>> {
    let s = raw.trim();
    if let Ok(ts) = DateTime::parse_from_rfc3339(s) {
        return Some(ts);
    }
    let normalized = match s.strip_suffix('Z').or_else(|| s.strip_suffix('z')) {
        Some(head) => format!("{head}+00:00"),
        None => s.to_owned(),
    };
    [
        "%Y-%m-%dT%H:%M%:z",
        "%Y-%m-%d %H:%M%:z",
        "%Y-%m-%d %H:%M:%S%:z",
        "%Y-%m-%dT%H:%M%z",
        "%Y-%m-%dT%H:%M:%S%z",
    ]
    .iter()
    .find_map(|fmt| DateTime::parse_from_str(&normalized, fmt).ok())
}

fn parse_price(raw: &str, line: u64) -> Result<Option<f64>, IngestError> {
    let s = raw.trim();
    if s.is_empty() {
        return Ok(None);
    }
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        Ok(_) => Err(IngestError::MalformedRow {
            line,
            reason: format!("non-finite price `{s}`"),
        }),
        Err(_) => Err(IngestError::MalformedRow {
            line,
            reason: format!("unparseable price `{s}`"),
        }),
    }
}

fn record_line(record: &csv::StringRecord) -> u64 {
    record.position().map(|p| p.line()).unwrap_or(0)
}

fn malformed(line: u64, reason: impl Into<String>) -> IngestError {
    IngestError::MalformedRow {
        line,
        reason: reason.into(),
    }
}

/// Parses a price file into a [`PriceSeries`] sorted by time.
pub fn parse_price_csv<R: Read>(source: R, opts: &ParseOptions) -> Result<PriceSeries, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let mut records = reader.records();
    let header = loop {
        match records.next() {
            None => return Err(IngestError::EmptyInput),
            Some(Err(e)) => return Err(malformed(e.position().map_or(0, |p| p.line()), e.to_string())),
            Some(Ok(r)) if r.iter().all(str::is_empty) => continue,
            Some(Ok(r)) => break r,
        }
    };
    let header_line = record_line(&header);
    let mut rows = Vec::new();
    for rec in records {
        let rec = rec.map_err(|e| malformed(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        if rec.iter().all(str::is_empty) {
            continue;
        }
        rows.push(rec);
    }
    let observations = match opts.format {
        CsvFormat::Long => parse_long(&header, header_line, &rows)?,
        CsvFormat::Wide => parse_wide(&header, header_line, &rows, opts.zone)?,
    };
    let year = observations
        .first()
        .map(|o| o.local.year())
        .ok_or(IngestError::EmptyInput)?;
    Ok(PriceSeries {
        observations,
        market_label: opts.market_label.clone(),
        year,
    })
}

fn parse_long(
    header: &csv::StringRecord,
    header_line: u64,
    rows: &[csv::StringRecord],
) -> Result<Vec<Observation>, IngestError> {
    let cols: Vec<String> = header.iter().map(|h| h.to_ascii_lowercase()).collect();
    if cols != ["timestamp", "price"] {
        return Err(malformed(
            header_line,
            format!("expected header `timestamp,price`, found `{}`", cols.join(",")),
        ));
    }
    let mut parsed = Vec::with_capacity(rows.len());
    for rec in rows {
        let line = record_line(rec);
        if rec.len() != 2 {
            return Err(malformed(line, format!("expected 2 fields, found {}", rec.len())));
        }
        let ts = parse_timestamp(&rec[0])
            .ok_or_else(|| malformed(line, format!("unparseable timestamp `{}`", &rec[0])))?;
        if ts.minute() != 0 || ts.second() != 0 || ts.nanosecond() != 0 {
            return Err(malformed(line, format!("timestamp `{}` is not on the hour", &rec[0])));
        }
        let value = parse_price(&rec[1], line)?;
        parsed.push((ts, value, line));
    }
    // stable: the first occurrence of a duplicated instant keeps its position
    parsed.sort_by_key(|(ts, _, _)| *ts);
    for pair in parsed.windows(2) {
        if pair[0].0 == pair[1].0 {
            return Err(IngestError::DuplicateTimestamp {
                line: pair[1].2,
                timestamp: pair[1].0.to_rfc3339(),
            });
        }
    }
    Ok(parsed
        .into_iter()
        .map(|(ts, value, _)| Observation {
            local: ts.naive_local(),
            offset: Some(*ts.offset()),
            value,
            quality: if value.is_some() {
                Quality::Observed
            } else {
                Quality::Missing
            },
        })
        .collect())
}

fn parse_wide(
    header: &csv::StringRecord,
    header_line: u64,
    rows: &[csv::StringRecord],
    zone: ZoneRule,
) -> Result<Vec<Observation>, IngestError> {
    let expected: Vec<String> = std::iter::once("date".to_owned())
        .chain((1..=HOURS_PER_DAY).map(|h| format!("h{h}")))
        .collect();
    let cols: Vec<String> = header.iter().map(|h| h.to_ascii_lowercase()).collect();
    if cols != expected {
        return Err(malformed(header_line, "expected header `date,h1,...,h24`"));
    }
    let mut days: Vec<(NaiveDate, u64, &csv::StringRecord)> = Vec::with_capacity(rows.len());
    for rec in rows {
        let line = record_line(rec);
        if rec.len() != HOURS_PER_DAY + 1 {
            return Err(malformed(
                line,
                format!("expected {} fields, found {}", HOURS_PER_DAY + 1, rec.len()),
            ));
        }
        let date = NaiveDate::parse_from_str(&rec[0], "%Y-%m-%d")
            .map_err(|_| malformed(line, format!("unparseable date `{}`", &rec[0])))?;
        days.push((date, line, rec));
    }
    days.sort_by_key(|(d, _, _)| *d);
    for pair in days.windows(2) {
        if pair[0].0 == pair[1].0 {
            return Err(IngestError::DuplicateTimestamp {
                line: pair[1].1,
                timestamp: pair[1].0.to_string(),
            });
        }
    }
    let mut out = Vec::with_capacity(days.len() * HOURS_PER_DAY);
    for (date, line, rec) in days {
        for hour in 0..HOURS_PER_DAY {
            let local = date.and_time(NaiveTime::from_hms_opt(hour as u32, 0, 0).unwrap());
            let value = parse_price(&rec[hour + 1], line)?;
            let offset = match zone.resolve(local) {
                LocalMapping::Single(o) | LocalMapping::Ambiguous(o, _) => Some(o),
                LocalMapping::Nonexistent => None,
            };
            let value = offset.and(value);
            out.push(Observation {
                local,
                offset,
                value,
                quality: if value.is_some() {
                    Quality::Observed
                } else {
                    Quality::Missing
                },
            });
        }
    }
    Ok(out)
}

/// Treatment of the skipped spring hour.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SpringForward {
    /// Linear interpolation of the neighbouring hours.
    #[default]
    Interpolate,
    /// Repeat the preceding hour.
    Previous,
}

/// Treatment of the repeated autumn hour.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FallBack {
    #[default]
    Mean,
    First,
    Second,
}

/// Rule for folding 23- and 25-hour days onto 24 slots.
///
/// Textual form is `<spring>/<fall>`, e.g. `interpolate/mean` (the default).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DstPolicy {
    pub spring_forward: SpringForward,
    pub fall_back: FallBack,
}

impl fmt::Display for DstPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let spring = match self.spring_forward {
            SpringForward::Interpolate => "interpolate",
            SpringForward::Previous => "previous",
        };
        let fall = match self.fall_back {
            FallBack::Mean => "mean",
            FallBack::First => "first",
            FallBack::Second => "second",
        };
        write!(f, "{spring}/{fall}")
    }
}

impl FromStr for DstPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (spring, fall) = s
            .split_once('/')
            .ok_or_else(|| format!("dst policy `{s}` must look like `interpolate/mean`"))?;
        let spring_forward = match spring {
            "interpolate" => SpringForward::Interpolate,
            "previous" => SpringForward::Previous,
            other => return Err(format!("unknown spring-forward rule `{other}`")),
        };
        let fall_back = match fall {
            "mean" => FallBack::Mean,
            "first" => FallBack::First,
            "second" => FallBack::Second,
            other => return Err(format!("unknown fall-back rule `{other}`")),
        };
        Ok(Self {
            spring_forward,
            fall_back,
        })
    }
}

impl Serialize for DstPolicy {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for DstPolicy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CalendarOptions {
    pub dst_policy: DstPolicy,
    pub gap_limit: usize,
}

impl Default for CalendarOptions {
    fn default() -> Self {
        Self {
            dst_policy: DstPolicy::default(),
            gap_limit: DEFAULT_GAP_LIMIT,
        }
    }
}

/// Bookkeeping of one calendarization, echoed into run reports.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestManifest {
    pub year: i32,
    pub days: usize,
    pub cells: usize,
    pub observed: usize,
    pub imputed: usize,
    /// Slots without a value before filling, DST slot included.
    pub missing: usize,
    pub dst_gaps_filled: usize,
    pub fall_back_merged: usize,
    pub gap_hours_filled: usize,
    pub dst_policy: DstPolicy,
    pub gap_limit: usize,
}

/// Hour-by-day grid of one year: column `d` holds the 24 hourly values of
/// `day_labels[d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DayMatrix {
    values: Matrix,
    mask: Vec<CellFlag>,
    day_labels: Vec<NaiveDate>,
    year: i32,
}

pub fn days_in_year(year: i32) -> usize {
    let start = NaiveDate::from_ymd_opt(year, 1, 1).expect("valid year");
    let next = NaiveDate::from_ymd_opt(year + 1, 1, 1).expect("valid year");
    (next - start).num_days() as usize
}

impl DayMatrix {
    /// Builds a fully observed matrix from hour-ordered values.
    pub fn from_hourly(year: i32, hourly: Vec<f64>) -> Option<Self> {
        let mask = vec![CellFlag::Observed; hourly.len()];
        Self::with_mask(year, hourly, mask)
    }

    pub fn with_mask(year: i32, hourly: Vec<f64>, mask: Vec<CellFlag>) -> Option<Self> {
        let days = days_in_year(year);
        if hourly.len() != days * HOURS_PER_DAY || mask.len() != hourly.len() {
            return None;
        }
        let start = NaiveDate::from_ymd_opt(year, 1, 1)?;
        let day_labels = start.iter_days().take(days).collect();
        Some(Self {
            values: Matrix::from_column_major(HOURS_PER_DAY, days, hourly),
            mask,
            day_labels,
            year,
        })
    }

    pub fn year(&self) -> i32 {
        self.year
    }

    pub fn hours(&self) -> usize {
        HOURS_PER_DAY
    }

    pub fn days(&self) -> usize {
        self.day_labels.len()
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn mask(&self) -> &[CellFlag] {
        &self.mask
    }

    pub fn day_labels(&self) -> &[NaiveDate] {
        &self.day_labels
    }

    pub fn get(&self, hour: usize, day: usize) -> f64 {
        self.values.get(hour, day)
    }

    pub fn flag(&self, hour: usize, day: usize) -> CellFlag {
        self.mask[day * HOURS_PER_DAY + hour]
    }

    /// Values in hour order (column-major).
    pub fn flatten(&self) -> &[f64] {
        self.values.as_column_major()
    }

    pub fn imputed_count(&self) -> usize {
        self.mask.iter().filter(|f| **f == CellFlag::Imputed).count()
    }
}

struct Slot {
    values: Vec<(f64, Option<FixedOffset>, Quality)>,
    first_offset: Option<FixedOffset>,
    last_offset: Option<FixedOffset>,
    nonexistent: bool,
}

/// Recasts a one-year series into a 24 x D day matrix.
pub fn calendarize(
    series: &PriceSeries,
    opts: &CalendarOptions,
) -> Result<(DayMatrix, IngestManifest), IngestError> {
    if series.observations.is_empty() {
        return Err(IngestError::EmptyInput);
    }
    let year = series.year;
    let days = days_in_year(year);
    let n = days * HOURS_PER_DAY;
    let start = NaiveDate::from_ymd_opt(year, 1, 1).expect("valid year");
    let slot_time = |i: usize| {
        start.and_time(NaiveTime::MIN)
            + Duration::days((i / HOURS_PER_DAY) as i64)
            + Duration::hours((i % HOURS_PER_DAY) as i64)
    };

    let mut slots: Vec<Slot> = (0..n)
        .map(|_| Slot {
            values: Vec::new(),
            first_offset: None,
            last_offset: None,
            nonexistent: false,
        })
        .collect();
    for obs in &series.observations {
        let date = obs.local.date();
        if date.year() != year {
            return Err(IngestError::WrongYearSpan {
                expected: year,
                found: date,
            });
        }
        let idx = date.ordinal0() as usize * HOURS_PER_DAY + obs.local.hour() as usize;
        let slot = &mut slots[idx];
        if obs.offset.is_none() {
            slot.nonexistent = true;
        }
        if let Some(o) = obs.offset {
            slot.first_offset.get_or_insert(o);
            slot.last_offset = Some(o);
        }
        if let Some(v) = obs.value {
            slot.values.push((v, obs.offset, obs.quality));
        }
    }

    let policy = opts.dst_policy;
    let mut values = vec![f64::NAN; n];
    let mut mask = vec![CellFlag::Observed; n];
    let mut present = vec![false; n];
    let mut fall_back_merged = 0;
    for (i, slot) in slots.iter().enumerate() {
        let flag_of = |q: Quality| {
            if q == Quality::Imputed {
                CellFlag::Imputed
            } else {
                CellFlag::Observed
            }
        };
        match slot.values.as_slice() {
            [] => {}
            [(v, _, q)] => {
                values[i] = *v;
                mask[i] = flag_of(*q);
                present[i] = true;
            }
            [(a, oa, qa), (b, ob, qb)] if oa != ob => {
                values[i] = match policy.fall_back {
                    FallBack::Mean => 0.5 * (a + b),
                    FallBack::First => *a,
                    FallBack::Second => *b,
                };
                mask[i] = if *qa == Quality::Imputed && *qb == Quality::Imputed {
                    CellFlag::Imputed
                } else {
                    CellFlag::Observed
                };
                present[i] = true;
                fall_back_merged += 1;
            }
            many => {
                return Err(IngestError::ConflictingSlot {
                    slot: slot_time(i),
                    count: many.len(),
                })
            }
        }
    }

    // A single missing wall-clock hour whose neighbours are one real hour apart
    // (offset jumps forward by an hour) was skipped by the spring transition.
    let is_dst_gap = |i: usize| {
        if slots[i].nonexistent {
            return true;
        }
        if i == 0 || i + 1 >= n {
            return false;
        }
        match (slots[i - 1].last_offset, slots[i + 1].first_offset) {
            (Some(before), Some(after)) => {
                after.local_minus_utc() - before.local_minus_utc() == 3600
            }
            _ => false,
        }
    };

    let missing = present.iter().filter(|p| !**p).count();
    if missing == n {
        return Err(IngestError::EmptyInput);
    }
    let mut dst_gaps_filled = 0;
    let mut gap_hours_filled = 0;
    let mut i = 0;
    while i < n {
        if present[i] {
            i += 1;
            continue;
        }
        let run_start = i;
        while i < n && !present[i] {
            i += 1;
        }
        let run_end = i;
        let len = run_end - run_start;
        let before = run_start.checked_sub(1).map(|j| values[j]);
        let after = (run_end < n).then(|| values[run_end]);
        let dst = len == 1 && is_dst_gap(run_start);
        if dst && policy.spring_forward == SpringForward::Previous && before.is_some() {
            values[run_start] = before.unwrap();
        } else {
            if !dst && len > opts.gap_limit {
                return Err(IngestError::GapTooLong {
                    start: slot_time(run_start),
                    length: len,
                    limit: opts.gap_limit,
                });
            }
            for (k, j) in (run_start..run_end).enumerate() {
                values[j] = match (before, after) {
                    (Some(b), Some(a)) => {
                        let t = (k + 1) as f64 / (len + 1) as f64;
                        b + t * (a - b)
                    }
                    (Some(b), None) => b,
                    (None, Some(a)) => a,
                    (None, None) => unreachable!("series has at least one value"),
                };
            }
        }
        for m in &mut mask[run_start..run_end] {
            *m = CellFlag::Imputed;
        }
        if dst {
            dst_gaps_filled += 1;
        } else {
            gap_hours_filled += len;
        }
    }

    let imputed = mask.iter().filter(|m| **m == CellFlag::Imputed).count();
    let manifest = IngestManifest {
        year,
        days,
        cells: n,
        observed: n - imputed,
        imputed,
        missing,
        dst_gaps_filled,
        fall_back_merged,
        gap_hours_filled,
        dst_policy: policy,
        gap_limit: opts.gap_limit,
    };
    let matrix = DayMatrix::with_mask(year, values, mask).expect("shape matches year");
    Ok((matrix, manifest))
}
