use std::fs;

use chrono::{NaiveDate, Timelike};
use proptest::prelude::*;
use spotvol::ingest::{
    calendarize, parse_price_csv, CalendarOptions, CellFlag, CsvFormat, IngestError,
    ParseOptions, Quality,
};
use spotvol::synth::{generate, SynthSpec};

const FIXTURE: &str = concat!(
    env!("CARGO_MANIFEST_DIR"),
    "/tests/fixtures/wide_spring_forward_2016.csv"
);

fn wide() -> ParseOptions {
    ParseOptions {
        format: CsvFormat::Wide,
        ..ParseOptions::default()
    }
}

#[test]
fn wide_fixture_spring_forward_day() {
    let bytes = fs::read(FIXTURE).unwrap();
    let series = parse_price_csv(bytes.as_slice(), &wide()).unwrap();
    assert_eq!(series.count(Quality::Observed), 23);
    assert_eq!(series.count(Quality::Missing), 1);
    let gap = series
        .observations
        .iter()
        .position(|o| o.quality == Quality::Missing)
        .unwrap();
    assert_eq!(series.observations[gap].local.hour(), 2);
    // neighbours straddle the offset change
    assert_eq!(series.observations[gap - 1].offset.unwrap().local_minus_utc(), 3600);
    assert_eq!(series.observations[gap + 1].offset.unwrap().local_minus_utc(), 7200);
}

#[test]
fn wide_value_in_skipped_hour_is_dropped() {
    let text = fs::read_to_string(FIXTURE).unwrap().replace("29.8,,", "29.8,99,");
    let series = parse_price_csv(text.as_bytes(), &wide()).unwrap();
    assert_eq!(series.count(Quality::Missing), 1);
    assert!(series.observations.iter().all(|o| o.value != Some(99.0)));
}

fn synth_long_csv(year: i32, seed: u64) -> Vec<u8> {
    let series = generate(&SynthSpec::price_like(year, 2.0, seed)).unwrap();
    let mut out = Vec::new();
    series.write_long_csv(&mut out).unwrap();
    out
}

#[test]
fn flattening_reproduces_series_values() {
    let series = generate(&SynthSpec::price_like(2016, 2.0, 1)).unwrap();
    let mut text = Vec::new();
    series.write_long_csv(&mut text).unwrap();
    let parsed = parse_price_csv(text.as_slice(), &ParseOptions::default()).unwrap();
    let (m, manifest) = calendarize(&parsed, &CalendarOptions::default()).unwrap();
    assert_eq!((m.days(), manifest.imputed), (366, 0));
    let original: Vec<f64> = series.observations.iter().map(|o| o.value.unwrap()).collect();
    assert_eq!(m.flatten(), original.as_slice());
    assert_eq!(m.day_labels()[59], NaiveDate::from_ymd_opt(2016, 2, 29).unwrap());
}

#[test]
fn calendarize_is_deterministic() {
    let bytes = synth_long_csv(2015, 4);
    let run = || {
        let s = parse_price_csv(bytes.as_slice(), &ParseOptions::default()).unwrap();
        calendarize(&s, &CalendarOptions::default()).unwrap()
    };
    let (a, ma) = run();
    let (b, mb) = run();
    assert_eq!(a, b);
    assert_eq!(ma, mb);
}

#[test]
fn long_file_with_missing_price_cell() {
    let mut text = String::from_utf8(synth_long_csv(2015, 2)).unwrap();
    // blank out one price
    let line = text.lines().nth(500).unwrap().to_owned();
    let (ts, _) = line.split_once(',').unwrap();
    text = text.replacen(&line, &format!("{ts},"), 1);
    let s = parse_price_csv(text.as_bytes(), &ParseOptions::default()).unwrap();
    assert_eq!(s.count(Quality::Missing), 1);
    let (m, manifest) = calendarize(&s, &CalendarOptions::default()).unwrap();
    assert_eq!(manifest.gap_hours_filled, 1);
    assert_eq!(m.mask()[499], CellFlag::Imputed);
}

#[test]
fn calendarize_error_reports_start_of_gap() {
    let text = String::from_utf8(synth_long_csv(2015, 3)).unwrap();
    let kept: Vec<&str> = text
        .lines()
        .enumerate()
        .filter(|(i, _)| !(1000..1020).contains(i))
        .map(|(_, l)| l)
        .collect();
    let s = parse_price_csv(kept.join("\n").as_bytes(), &ParseOptions::default()).unwrap();
    match calendarize(&s, &CalendarOptions::default()) {
        Err(IngestError::GapTooLong { start, length, .. }) => {
            assert_eq!(length, 20);
            // line 1000 is hour slot 999
            assert_eq!(start.to_string(), "2015-02-11 15:00:00");
        }
        other => panic!("unexpected {other:?}"),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    /// The number of imputed cells equals the number of hours removed, as
    /// long as each removed run fits under the gap limit.
    #[test]
    fn imputed_count_matches_removed_hours(
        starts in prop::collection::btree_set(10usize..8700, 1..12),
        lens in prop::collection::vec(1usize..=6, 12),
    ) {
        let text = String::from_utf8(synth_long_csv(2015, 9)).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        let mut drop = vec![false; lines.len()];
        let mut removed = 0;
        let mut last_end = 0;
        for (s, len) in starts.iter().zip(&lens) {
            // keep runs separated so they do not merge into longer gaps
            if *s <= last_end + 1 { continue; }
            for i in *s..(*s + len).min(lines.len()) {
                drop[i] = true;
                removed += 1;
            }
            last_end = s + len;
        }
        let kept: Vec<&str> = lines
            .iter()
            .zip(&drop)
            .filter(|(_, d)| !**d)
            .map(|(l, _)| *l)
            .collect();
        let s = parse_price_csv(kept.join("\n").as_bytes(), &ParseOptions::default()).unwrap();
        let (m, manifest) = calendarize(&s, &CalendarOptions::default()).unwrap();
        prop_assert_eq!(m.imputed_count(), removed);
        prop_assert_eq!(manifest.gap_hours_filled, removed);
        prop_assert_eq!(manifest.imputed, removed);
    }
}
