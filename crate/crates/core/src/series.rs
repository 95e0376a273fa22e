//! Uniformly spaced series with an explicit missing mask, plus the
//! preparation steps every forecaster relies on: min-max scaling,
//! chronological splitting, windowing, short-gap imputation and the
//! seasonality/stationarity diagnostics.

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::timefmt;

/// Autocorrelation at the dominant candidate period needed to call a series seasonal.
pub const SEASONAL_ACF_THRESHOLD: f64 = 0.3;
/// Segment drift (in global standard deviations) below which a series counts as stationary.
pub const STATIONARY_DRIFT_THRESHOLD: f64 = 0.5;
/// Number of equal segments compared by the stationarity check.
pub const STATIONARITY_SEGMENTS: usize = 4;
/// Longest run of missing points that [`TimeSeries::impute_short_gaps`] will fill.
pub const MAX_IMPUTED_RUN: usize = 2;

#[derive(Debug, Error, PartialEq)]
pub enum SeriesError {
    #[error("series must contain at least one point")]
    Empty,
    #[error("interval must be positive, got {0}s")]
    InvalidInterval(i64),
    #[error("value at index {0} is not finite")]
    NonFinite(usize),
    #[error("missing mask has {mask} entries for {values} values")]
    MaskLength { values: usize, mask: usize },
    #[error("series too short: {len} points, need at least {required}")]
    SeriesTooShort { len: usize, required: usize },
    #[error("split fraction {0} is outside (0, 1)")]
    InvalidFraction(f64),
    #[error("split leaves an empty side (train {train}, test {test})")]
    DegenerateSplit { train: usize, test: usize },
    #[error("missing value at index {0}")]
    MissingValuesPresent(usize),
    #[error("every value is missing")]
    AllMissing,
    #[error("invalid series file: {0}")]
    Format(String),
}

/// A uniformly spaced series. Missing points carry `0.0` in `values` and
/// `true` in the mask; present points are always finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SeriesFile", into = "SeriesFile")]
pub struct TimeSeries {
    start: DateTime<Utc>,
    interval_secs: i64,
    values: Vec<f64>,
    missing: Vec<bool>,
}

/// On-disk shape: `{start, interval_seconds, values: [number|null]}`.
#[derive(Serialize, Deserialize)]
struct SeriesFile {
    start: String,
    interval_seconds: i64,
    values: Vec<Option<f64>>,
}

impl From<TimeSeries> for SeriesFile {
    fn from(s: TimeSeries) -> Self {
        SeriesFile {
            start: timefmt::format_iso(s.start),
            interval_seconds: s.interval_secs,
            values: s.options(),
        }
    }
}

impl TryFrom<SeriesFile> for TimeSeries {
    type Error = SeriesError;

    fn try_from(f: SeriesFile) -> Result<Self, Self::Error> {
        let start = timefmt::parse_iso(&f.start)
            .ok_or_else(|| SeriesError::Format(format!("bad start instant {:?}", f.start)))?;
        TimeSeries::from_options(start, f.interval_seconds, f.values)
    }
}

impl TimeSeries {
    pub fn new(start: DateTime<Utc>, interval_secs: i64, values: Vec<f64>) -> Result<Self, SeriesError> {
        let missing = vec![false; values.len()];
        Self::with_mask(start, interval_secs, values, missing)
    }

    pub fn from_options(
        start: DateTime<Utc>,
        interval_secs: i64,
        values: Vec<Option<f64>>,
    ) -> Result<Self, SeriesError> {
        let missing = values.iter().map(Option::is_none).collect();
        let values = values.into_iter().map(|v| v.unwrap_or(0.0)).collect();
        Self::with_mask(start, interval_secs, values, missing)
    }

    pub fn with_mask(
        start: DateTime<Utc>,
        interval_secs: i64,
        mut values: Vec<f64>,
        missing: Vec<bool>,
    ) -> Result<Self, SeriesError> {
        if values.is_empty() {
            return Err(SeriesError::Empty);
        }
        if interval_secs <= 0 {
            return Err(SeriesError::InvalidInterval(interval_secs));
        }
        if values.len() != missing.len() {
            return Err(SeriesError::MaskLength { values: values.len(), mask: missing.len() });
        }
        for (i, (v, &m)) in values.iter_mut().zip(&missing).enumerate() {
            if m {
                *v = 0.0;
            } else if !v.is_finite() {
                return Err(SeriesError::NonFinite(i));
            }
        }
        Ok(TimeSeries { start, interval_secs, values, missing })
    }

    pub fn start(&self) -> DateTime<Utc> {
        self.start
    }

    pub fn interval_secs(&self) -> i64 {
        self.interval_secs
    }

    pub fn interval(&self) -> Duration {
        Duration::seconds(self.interval_secs)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    /// Always false; kept for clippy's `len_without_is_empty`.
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Timestamp of the last point.
    pub fn end(&self) -> DateTime<Utc> {
        self.timestamp(self.len() - 1)
    }

    pub fn timestamp(&self, index: usize) -> DateTime<Utc> {
        self.start + Duration::seconds(self.interval_secs * index as i64)
    }

    /// Index of the bucket containing `ts`, if it falls inside the series.
    pub fn index_of(&self, ts: DateTime<Utc>) -> Option<usize> {
        let offset = (ts - self.start).num_seconds();
        if offset < 0 {
            return None;
        }
        let idx = (offset / self.interval_secs) as usize;
        (idx < self.len()).then_some(idx)
    }

    /// Raw values; missing slots hold `0.0`.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn missing_mask(&self) -> &[bool] {
        &self.missing
    }

    pub fn get(&self, index: usize) -> Option<f64> {
        (!self.missing[index]).then(|| self.values[index])
    }

    pub fn is_missing(&self, index: usize) -> bool {
        self.missing[index]
    }

    pub fn has_missing(&self) -> bool {
        self.missing.iter().any(|&m| m)
    }

    pub fn options(&self) -> Vec<Option<f64>> {
        (0..self.len()).map(|i| self.get(i)).collect()
    }

    pub fn present(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().zip(&self.missing).filter(|(_, &m)| !m).map(|(&v, _)| v)
    }

    /// Values with an error on the first missing point.
    pub fn dense_values(&self) -> Result<&[f64], SeriesError> {
        match self.missing.iter().position(|&m| m) {
            Some(i) => Err(SeriesError::MissingValuesPresent(i)),
            None => Ok(&self.values),
        }
    }

    /// Sub-series `[from, to)`, re-anchored at the timestamp of `from`.
    pub fn slice(&self, from: usize, to: usize) -> Result<TimeSeries, SeriesError> {
        let to = to.min(self.len());
        if from >= to {
            return Err(SeriesError::Empty);
        }
        Ok(TimeSeries {
            start: self.timestamp(from),
            interval_secs: self.interval_secs,
            values: self.values[from..to].to_vec(),
            missing: self.missing[from..to].to_vec(),
        })
    }

    /// Applies `f` to present values, keeping the mask.
    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> Result<TimeSeries, SeriesError> {
        let values = self
            .values
            .iter()
            .zip(&self.missing)
            .map(|(&v, &m)| if m { 0.0 } else { f(v) })
            .collect();
        Self::with_mask(self.start, self.interval_secs, values, self.missing.clone())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("series serialization cannot fail")
    }

    pub fn from_json(s: &str) -> Result<Self, SeriesError> {
        serde_json::from_str(s).map_err(|e| SeriesError::Format(e.to_string()))
    }

    /// Linearly interpolates interior missing runs of at most `max_run`
    /// points. Longer runs, and runs touching either end, stay missing so
    /// dropout detection still sees them.
    pub fn impute_short_gaps(&self, max_run: usize) -> TimeSeries {
        let mut out = self.clone();
        let n = self.len();
        let mut i = 0;
        while i < n {
            if !self.missing[i] {
                i += 1;
                continue;
            }
            let run_start = i;
            while i < n && self.missing[i] {
                i += 1;
            }
            let run_len = i - run_start;
            if run_start == 0 || i == n || run_len > max_run {
                continue;
            }
            let left = self.values[run_start - 1];
            let right = self.values[i];
            let span = (run_len + 1) as f64;
            for k in 0..run_len {
                let frac = (k + 1) as f64 / span;
                out.values[run_start + k] = left + (right - left) * frac;
                out.missing[run_start + k] = false;
            }
        }
        out
    }
}

/// Chronological split; the training side gets `ceil(fraction * len)` points.
pub fn split(series: &TimeSeries, train_fraction: f64) -> Result<(TimeSeries, TimeSeries), SeriesError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(SeriesError::InvalidFraction(train_fraction));
    }
    let len = series.len();
    if len < 2 {
        return Err(SeriesError::SeriesTooShort { len, required: 2 });
    }
    // The epsilon keeps 0.7 * 10 from rounding up to 8.
    let train_len = ((train_fraction * len as f64) - 1e-9).ceil().max(0.0) as usize;
    let train_len = train_len.min(len);
    if train_len == 0 || train_len == len {
        return Err(SeriesError::DegenerateSplit { train: train_len, test: len - train_len });
    }
    Ok((series.slice(0, train_len)?, series.slice(train_len, len)?))
}

/// One supervised pair: `num_timesteps` inputs and the value that follows.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub window: Vec<f64>,
    pub target: f64,
}

/// Borrowed view of every sliding window over a dense slice. Avoids
/// materializing `len * num_timesteps` values for long windows.
#[derive(Debug, Clone, Copy)]
pub struct Windows<'a> {
    values: &'a [f64],
    timesteps: usize,
}

impl<'a> Windows<'a> {
    pub fn new(values: &'a [f64], timesteps: usize) -> Result<Self, SeriesError> {
        if timesteps == 0 || values.len() <= timesteps {
            return Err(SeriesError::SeriesTooShort { len: values.len(), required: timesteps + 1 });
        }
        Ok(Windows { values, timesteps })
    }

    pub fn len(&self) -> usize {
        self.values.len() - self.timesteps
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn timesteps(&self) -> usize {
        self.timesteps
    }

    pub fn window(&self, i: usize) -> &'a [f64] {
        &self.values[i..i + self.timesteps]
    }

    pub fn target(&self, i: usize) -> f64 {
        self.values[i + self.timesteps]
    }
}

pub fn sliding_windows(series: &TimeSeries, num_timesteps: usize) -> Result<Vec<Sample>, SeriesError> {
    if num_timesteps == 0 || series.len() <= num_timesteps {
        return Err(SeriesError::SeriesTooShort { len: series.len(), required: num_timesteps + 1 });
    }
    let windows = Windows::new(series.dense_values()?, num_timesteps)?;
    Ok((0..windows.len())
        .map(|i| Sample { window: windows.window(i).to_vec(), target: windows.target(i) })
        .collect())
}

/// Min-max scaler onto `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub min: f64,
    pub max: f64,
}

impl Scaler {
    pub fn fit(series: &TimeSeries) -> Result<Scaler, SeriesError> {
        Self::fit_values(series.present())
    }

    pub fn fit_values(values: impl IntoIterator<Item = f64>) -> Result<Scaler, SeriesError> {
        let mut it = values.into_iter();
        let first = it.next().ok_or(SeriesError::AllMissing)?;
        let (min, max) = it.fold((first, first), |(lo, hi), v| (lo.min(v), hi.max(v)));
        Ok(Scaler { min, max })
    }

    fn span(&self) -> f64 {
        self.max - self.min
    }

    /// A constant series maps to zero.
    pub fn apply(&self, x: f64) -> f64 {
        let span = self.span();
        if span > 0.0 {
            (x - self.min) / span
        } else {
            0.0
        }
    }

    pub fn invert(&self, y: f64) -> f64 {
        self.min + y * self.span()
    }

    pub fn apply_series(&self, series: &TimeSeries) -> TimeSeries {
        series.map_values(|v| self.apply(v)).expect("scaling keeps finite values finite")
    }

    pub fn invert_series(&self, series: &TimeSeries) -> TimeSeries {
        series.map_values(|v| self.invert(v)).expect("inverse scaling keeps finite values finite")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub seasonal: bool,
    pub dominant_period: Option<usize>,
    pub acf_at_period: f64,
    pub stationary: bool,
    pub segment_mean_drift: f64,
    pub segment_var_drift: f64,
}

/// Sample autocorrelation at `lag`. Pairs with a missing member are
/// skipped and the lagged covariance is averaged over the pairs actually
/// used, so a clean periodic signal scores close to 1 at its period.
pub fn autocorrelation(series: &TimeSeries, lag: usize) -> f64 {
    let n_present = series.present().count();
    if n_present == 0 || lag >= series.len() {
        return 0.0;
    }
    let mean = series.present().sum::<f64>() / n_present as f64;
    let var = series.present().map(|v| (v - mean).powi(2)).sum::<f64>() / n_present as f64;
    if var <= 0.0 {
        return 0.0;
    }
    let (mut acc, mut pairs) = (0.0, 0usize);
    for t in 0..series.len() - lag {
        if let (Some(a), Some(b)) = (series.get(t), series.get(t + lag)) {
            acc += (a - mean) * (b - mean);
            pairs += 1;
        }
    }
    if pairs == 0 {
        return 0.0;
    }
    (acc / pairs as f64 / var).clamp(-1.0, 1.0)
}

fn mean_and_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

fn max_pairwise_gap(stats: &[f64]) -> f64 {
    let lo = stats.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = stats.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if stats.is_empty() {
        0.0
    } else {
        hi - lo
    }
}

/// Seasonality via autocorrelation at each candidate period, stationarity
/// via drift of segment means and standard deviations.
///
/// Both drifts are divided by the global standard deviation, so the
/// verdicts are unchanged by any positive affine rescaling of the series.
pub fn diagnose(series: &TimeSeries, candidate_periods: &[usize]) -> Result<DiagnosticsReport, SeriesError> {
    let max_period = candidate_periods.iter().copied().max().unwrap_or(0);
    let required = (3 * max_period).max(STATIONARITY_SEGMENTS);
    if series.len() < required {
        return Err(SeriesError::SeriesTooShort { len: series.len(), required });
    }

    let mut dominant: Option<(usize, f64)> = None;
    for &p in candidate_periods.iter().filter(|&&p| p >= 2) {
        let acf = autocorrelation(series, p);
        if dominant.is_none_or(|(_, best)| acf > best) {
            dominant = Some((p, acf));
        }
    }
    let acf_at_period = dominant.map_or(0.0, |(_, a)| a);
    let seasonal = acf_at_period >= SEASONAL_ACF_THRESHOLD;

    let present: Vec<f64> = series.present().collect();
    let (_, global_std) = mean_and_std(&present).ok_or(SeriesError::AllMissing)?;
    let n = series.len();
    let mut seg_means = Vec::with_capacity(STATIONARITY_SEGMENTS);
    let mut seg_stds = Vec::with_capacity(STATIONARITY_SEGMENTS);
    for k in 0..STATIONARITY_SEGMENTS {
        let (from, to) = (k * n / STATIONARITY_SEGMENTS, (k + 1) * n / STATIONARITY_SEGMENTS);
        let seg: Vec<f64> = (from..to).filter_map(|i| series.get(i)).collect();
        if let Some((m, s)) = mean_and_std(&seg) {
            seg_means.push(m);
            seg_stds.push(s);
        }
    }
    let (mean_drift, var_drift) = if global_std > 0.0 {
        (max_pairwise_gap(&seg_means) / global_std, max_pairwise_gap(&seg_stds) / global_std)
    } else {
        (0.0, 0.0)
    };

    Ok(DiagnosticsReport {
        seasonal,
        dominant_period: dominant.map(|(p, _)| p),
        acf_at_period,
        stationary: mean_drift < STATIONARY_DRIFT_THRESHOLD && var_drift < STATIONARY_DRIFT_THRESHOLD,
        segment_mean_drift: mean_drift,
        segment_var_drift: var_drift,
    })
}
