//! Flow-log CSV ingestion: parse, clean, de-duplicate and roll up into a
//! [`TimeSeries`].

use std::collections::HashSet;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::series::{SeriesError, TimeSeries};
use crate::timefmt;

pub const COL_FLOW_ID: &str = "Flow ID";
pub const COL_TIMESTAMP: &str = "Timestamp";
pub const COL_FWD_PKT_LEN_MEAN: &str = "Fwd Pkt Len Mean";
pub const COL_FWD_SEG_SIZE_AVG: &str = "Fwd Seg Size Avg";
pub const COL_INIT_FWD_WIN_BYTS: &str = "Init Fwd Win Byts";
pub const COL_INIT_BWD_WIN_BYTS: &str = "Init Bwd Win Byts";
pub const COL_FWD_SEG_SIZE_MIN: &str = "Fwd Seg Size Min";

/// Column order used when writing flow CSV files.
pub const FLOW_COLUMNS: [&str; 7] = [
    COL_FLOW_ID,
    COL_TIMESTAMP,
    COL_FWD_PKT_LEN_MEAN,
    COL_FWD_SEG_SIZE_AVG,
    COL_INIT_FWD_WIN_BYTS,
    COL_INIT_BWD_WIN_BYTS,
    COL_FWD_SEG_SIZE_MIN,
];

/// Sentinel for an absent initial window size.
pub const WIN_BYTES_ABSENT: i64 = -1;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("missing or empty header row")]
    MalformedHeader,
    #[error("column {0:?} not found in header")]
    MissingColumn(String),
    #[error("line {line}: timestamp {value:?} is not dd/MM/yyyy hh:mm:ss AM/PM")]
    BadTimestamp { line: u64, value: String },
    #[error("csv error: {0}")]
    Csv(String),
    #[error("no clean records to aggregate")]
    EmptyInput,
    #[error("roll-up interval must be positive, got {0}s")]
    InvalidInterval(i64),
    #[error(transparent)]
    Series(#[from] SeriesError),
}

impl From<csv::Error> for IngestError {
    fn from(e: csv::Error) -> Self {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => IngestError::Io(io),
            other => IngestError::Csv(format!("{other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowRecord {
    /// `src-dst-sport-dport-proto`.
    pub flow_id: String,
    pub timestamp: DateTime<Utc>,
    pub fwd_pkt_len_mean: Option<f64>,
    pub fwd_seg_size_avg: Option<f64>,
    pub init_fwd_win_byts: i64,
    pub init_bwd_win_byts: i64,
    pub fwd_seg_size_min: i64,
    /// The selected value column after numeric coercion.
    pub value: Option<f64>,
}

impl FlowRecord {
    /// Source endpoint: the first component of the flow id.
    pub fn source(&self) -> &str {
        self.flow_id.split('-').next().unwrap_or("")
    }

    pub fn is_clean(&self) -> bool {
        self.value.is_some_and(f64::is_finite)
    }
}

fn ser_opt_ts<S: Serializer>(ts: &Option<DateTime<Utc>>, s: S) -> Result<S::Ok, S::Error> {
    match ts {
        Some(t) => s.serialize_str(&timefmt::format_iso(*t)),
        None => s.serialize_none(),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct IngestReport {
    pub rows_read: usize,
    pub rows_dropped_missing: usize,
    pub rows_dropped_duplicate: usize,
    #[serde(serialize_with = "ser_opt_ts")]
    pub series_start: Option<DateTime<Utc>>,
    #[serde(serialize_with = "ser_opt_ts")]
    pub series_end: Option<DateTime<Utc>>,
}

impl IngestReport {
    pub fn clean_rows(&self) -> usize {
        self.rows_read - self.rows_dropped_missing - self.rows_dropped_duplicate
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CleanCounts {
    pub dropped_missing: usize,
    pub dropped_duplicate: usize,
}

fn coerce_f64(field: Option<&str>) -> Option<f64> {
    field.and_then(|s| s.trim().parse::<f64>().ok())
}

fn coerce_i64(field: Option<&str>, default: i64) -> i64 {
    let Some(s) = field.map(str::trim) else {
        return default;
    };
    s.parse::<i64>()
        .ok()
        .or_else(|| s.parse::<f64>().ok().filter(|v| v.is_finite()).map(|v| v as i64))
        .unwrap_or(default)
}

pub fn parse_flow_csv(
    path: impl AsRef<Path>,
    value_column: &str,
) -> Result<(Vec<FlowRecord>, IngestReport), IngestError> {
    parse_flow_reader(File::open(path)?, value_column)
}

/// Parses flow rows. The value column is coerced to a number; failures are
/// kept as records with `value = None` so [`clean`] can count them.
/// `rows_read` is populated here, the drop counters by [`clean`].
pub fn parse_flow_reader<R: Read>(
    reader: R,
    value_column: &str,
) -> Result<(Vec<FlowRecord>, IngestReport), IngestError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() || headers.iter().all(str::is_empty) {
        return Err(IngestError::MalformedHeader);
    }
    let col = |name: &str| headers.iter().position(|h| h == name);
    let value_idx = col(value_column).ok_or_else(|| IngestError::MissingColumn(value_column.to_string()))?;
    let ts_idx = col(COL_TIMESTAMP).ok_or_else(|| IngestError::MissingColumn(COL_TIMESTAMP.to_string()))?;
    let flow_idx = col(COL_FLOW_ID);
    let pkt_idx = col(COL_FWD_PKT_LEN_MEAN);
    let seg_avg_idx = col(COL_FWD_SEG_SIZE_AVG);
    let fwd_win_idx = col(COL_INIT_FWD_WIN_BYTS);
    let bwd_win_idx = col(COL_INIT_BWD_WIN_BYTS);
    let seg_min_idx = col(COL_FWD_SEG_SIZE_MIN);

    let mut records = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let get = |idx: Option<usize>| idx.and_then(|i| row.get(i));
        let raw_ts = row.get(ts_idx).unwrap_or("");
        let timestamp = timefmt::parse_flow_timestamp(raw_ts).ok_or_else(|| IngestError::BadTimestamp {
            line: row.position().map_or(0, |p| p.line()),
            value: raw_ts.to_string(),
        })?;
        records.push(FlowRecord {
            flow_id: get(flow_idx).unwrap_or("").to_string(),
            timestamp,
            fwd_pkt_len_mean: coerce_f64(get(pkt_idx)),
            fwd_seg_size_avg: coerce_f64(get(seg_avg_idx)),
            init_fwd_win_byts: coerce_i64(get(fwd_win_idx), WIN_BYTES_ABSENT),
            init_bwd_win_byts: coerce_i64(get(bwd_win_idx), WIN_BYTES_ABSENT),
            fwd_seg_size_min: coerce_i64(get(seg_min_idx), 0),
            value: coerce_f64(row.get(value_idx)),
        });
    }
    let report = IngestReport { rows_read: records.len(), ..IngestReport::default() };
    Ok((records, report))
}

/// Drops records without a finite value and exact duplicates (same flow id,
/// timestamp and value), then stable-sorts by timestamp.
pub fn clean(records: &[FlowRecord]) -> (Vec<FlowRecord>, CleanCounts) {
    let mut counts = CleanCounts::default();
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        if !r.is_clean() {
            counts.dropped_missing += 1;
            continue;
        }
        let key = (r.flow_id.as_str(), r.timestamp.timestamp(), r.value.map(f64::to_bits));
        if !seen.insert(key) {
            counts.dropped_duplicate += 1;
            continue;
        }
        out.push(r.clone());
    }
    out.sort_by_key(|r| r.timestamp);
    (out, counts)
}

/// Parse plus clean, with every report field filled in.
pub fn ingest(path: impl AsRef<Path>, value_column: &str) -> Result<(Vec<FlowRecord>, IngestReport), IngestError> {
    let (raw, mut report) = parse_flow_csv(path, value_column)?;
    let (records, counts) = clean(&raw);
    report.rows_dropped_missing = counts.dropped_missing;
    report.rows_dropped_duplicate = counts.dropped_duplicate;
    report.series_start = records.first().map(|r| r.timestamp);
    report.series_end = records.last().map(|r| r.timestamp);
    Ok((records, report))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregator {
    Mean,
    Sum,
    Count,
}

impl FromStr for Aggregator {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mean" => Ok(Aggregator::Mean),
            "sum" => Ok(Aggregator::Sum),
            "count" => Ok(Aggregator::Count),
            other => Err(format!("unknown aggregator {other:?} (mean|sum|count)")),
        }
    }
}

/// Rolls records up into buckets of `interval_secs`, from the first to the
/// last timestamp inclusive. Empty buckets are missing.
pub fn to_series(records: &[FlowRecord], interval_secs: i64, aggregator: Aggregator) -> Result<TimeSeries, IngestError> {
    if interval_secs <= 0 {
        return Err(IngestError::InvalidInterval(interval_secs));
    }
    let clean: Vec<&FlowRecord> = records.iter().filter(|r| r.is_clean()).collect();
    let first = clean.iter().map(|r| r.timestamp).min().ok_or(IngestError::EmptyInput)?;
    let last = clean.iter().map(|r| r.timestamp).max().ok_or(IngestError::EmptyInput)?;
    let len = ((last - first).num_seconds() / interval_secs) as usize + 1;
    to_series_on_grid(records, first, interval_secs, len, aggregator)
}

/// Like [`to_series`] but on a caller-chosen grid; records outside it are ignored.
pub fn to_series_on_grid(
    records: &[FlowRecord],
    start: DateTime<Utc>,
    interval_secs: i64,
    len: usize,
    aggregator: Aggregator,
) -> Result<TimeSeries, IngestError> {
    if interval_secs <= 0 {
        return Err(IngestError::InvalidInterval(interval_secs));
    }
    if len == 0 {
        return Err(IngestError::EmptyInput);
    }
    let mut sums = vec![0.0; len];
    let mut counts = vec![0usize; len];
    for r in records.iter().filter(|r| r.is_clean()) {
        let offset = (r.timestamp - start).num_seconds();
        if offset < 0 {
            continue;
        }
        let idx = (offset / interval_secs) as usize;
        if idx >= len {
            continue;
        }
        sums[idx] += r.value.unwrap_or(0.0);
        counts[idx] += 1;
    }
    let values = sums
        .iter()
        .zip(&counts)
        .map(|(&sum, &n)| match (n, aggregator) {
            (0, _) => None,
            (_, Aggregator::Mean) => Some(sum / n as f64),
            (_, Aggregator::Sum) => Some(sum),
            (_, Aggregator::Count) => Some(n as f64),
        })
        .collect();
    Ok(TimeSeries::from_options(start, interval_secs, values)?)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes records in the flow schema. When `value_column` is not one of the
/// schema columns it is appended as an extra column.
pub fn write_flow_csv<W: Write>(records: &[FlowRecord], value_column: &str, writer: W) -> Result<(), IngestError> {
    let extra = !FLOW_COLUMNS.contains(&value_column);
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = FLOW_COLUMNS.to_vec();
    if extra {
        header.push(value_column);
    }
    w.write_record(&header)?;
    for r in records {
        let pick = |col: &str, own: Option<f64>| if col == value_column { r.value } else { own };
        let mut row = vec![
            r.flow_id.clone(),
            timefmt::format_flow_timestamp(r.timestamp),
            fmt_opt(pick(COL_FWD_PKT_LEN_MEAN, r.fwd_pkt_len_mean)),
            fmt_opt(pick(COL_FWD_SEG_SIZE_AVG, r.fwd_seg_size_avg)),
            r.init_fwd_win_byts.to_string(),
            r.init_bwd_win_byts.to_string(),
            r.fwd_seg_size_min.to_string(),
        ];
        if extra {
            row.push(fmt_opt(r.value));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
