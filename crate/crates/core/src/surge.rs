//! Confidence-interval bands (`X ± Z·s/√n`) and the detectors that turn a
//! forecast plus observed telemetry into alerts.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cc4::PacketClass;
use crate::forecast::{FittedForecaster, ForecastCursor};
use crate::series::TimeSeries;
use crate::timefmt;

/// Two-sided Z scores, keyed by confidence level. Closed: nothing else is
/// interpolated.
pub const Z_TABLE: [(f64, f64); 7] = [
    (0.80, 1.282),
    (0.85, 1.440),
    (0.90, 1.645),
    (0.95, 1.960),
    (0.99, 2.576),
    (0.995, 2.807),
    (0.999, 3.291),
];

pub const DEFAULT_CONFIDENCE: f64 = 0.95;

#[derive(Debug, Error, PartialEq)]
pub enum SurgeError {
    #[error("confidence {0} is not in the Z table (0.80, 0.85, 0.90, 0.95, 0.99, 0.995, 0.999)")]
    UnsupportedConfidence(f64),
    #[error("window must be nonempty and finite")]
    InvalidWindow,
    #[error("detector window must be at least 1")]
    InvalidWindowSize,
    #[error("gap threshold must be at least 1")]
    InvalidGapThreshold,
}

pub fn z_score(confidence: f64) -> Result<f64, SurgeError> {
    Z_TABLE
        .iter()
        .find(|(c, _)| (c - confidence).abs() < 1e-12)
        .map(|&(_, z)| z)
        .ok_or(SurgeError::UnsupportedConfidence(confidence))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceBand {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
    pub z: f64,
    pub lower: f64,
    pub upper: f64,
}

impl ConfidenceBand {
    pub fn from_stats(mean: f64, std: f64, n: usize, z: f64) -> Self {
        let half = if n == 0 { 0.0 } else { z * std / (n as f64).sqrt() };
        ConfidenceBand { mean, std, n, z, lower: mean - half, upper: mean + half }
    }

    pub fn half_width(&self) -> f64 {
        (self.upper - self.lower) / 2.0
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lower && x <= self.upper
    }

    /// Distance outside the band; zero inside.
    pub fn exceedance(&self, x: f64) -> f64 {
        if x > self.upper {
            x - self.upper
        } else if x < self.lower {
            self.lower - x
        } else {
            0.0
        }
    }

    fn severity_of(&self, x: f64) -> Severity {
        if self.exceedance(x) > 2.0 * self.half_width() {
            Severity::Critical
        } else {
            Severity::Warning
        }
    }
}

/// Sample mean and standard deviation (n−1 denominator, 0 for one point).
pub fn sample_mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

pub fn confidence_interval(window: &[f64], confidence: f64) -> Result<ConfidenceBand, SurgeError> {
    let z = z_score(confidence)?;
    if window.is_empty() || window.iter().any(|v| !v.is_finite()) {
        return Err(SurgeError::InvalidWindow);
    }
    let (mean, std) = sample_mean_std(window);
    Ok(ConfidenceBand::from_stats(mean, std, window.len(), z))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AlertKind {
    Surge,
    Dropout,
    IdentityFlood,
    Intrusion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Severity {
    Warning,
    Critical,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyAlert {
    pub timestamp: DateTime<Utc>,
    pub kind: AlertKind,
    pub observed: f64,
    pub expected: f64,
    pub band: Option<ConfidenceBand>,
    pub severity: Severity,
    pub source: String,
    /// Number of intervals the alert covers, starting at `timestamp`.
    pub span: usize,
    pub class: Option<PacketClass>,
    pub ambiguous: Option<bool>,
}

/// One line of the alert JSON Lines format. Field order is fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertLine {
    pub ts: String,
    pub kind: AlertKind,
    pub observed: f64,
    pub expected: f64,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub severity: Severity,
    pub source: String,
    pub span: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class: Option<PacketClass>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ambiguous: Option<bool>,
}

impl AnomalyAlert {
    pub fn to_line(&self) -> AlertLine {
        AlertLine {
            ts: timefmt::format_iso(self.timestamp),
            kind: self.kind,
            observed: self.observed,
            expected: self.expected,
            lower: self.band.map(|b| b.lower),
            upper: self.band.map(|b| b.upper),
            severity: self.severity,
            source: self.source.clone(),
            span: self.span,
            class: self.class,
            ambiguous: self.ambiguous,
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(&self.to_line()).expect("alert serialization cannot fail")
    }

    /// Ordering used for every merged alert stream.
    pub fn sort_key(&self) -> (DateTime<Utc>, AlertKind, &str) {
        (self.timestamp, self.kind, self.source.as_str())
    }
}

impl AlertLine {
    pub fn timestamp(&self) -> Option<DateTime<Utc>> {
        timefmt::parse_iso(&self.ts)
    }
}

pub fn sort_alerts(alerts: &mut [AnomalyAlert]) {
    alerts.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
}

pub fn write_alerts<W: Write>(alerts: &[AnomalyAlert], mut out: W) -> std::io::Result<()> {
    for a in alerts {
        writeln!(out, "{}", a.to_json_line())?;
    }
    Ok(())
}

pub fn read_alert_lines(text: &str) -> Result<Vec<AlertLine>, serde_json::Error> {
    text.lines().filter(|l| !l.trim().is_empty()).map(serde_json::from_str).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectionMode {
    /// Window means against a band around the forecast window mean.
    #[default]
    MeanShift,
    /// Single points against `forecast ± z·σ_r`.
    Residual,
}

impl fmt::Display for DetectionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DetectionMode::MeanShift => "mean_shift",
            DetectionMode::Residual => "residual",
        })
    }
}

impl FromStr for DetectionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mean_shift" => Ok(DetectionMode::MeanShift),
            "residual" => Ok(DetectionMode::Residual),
            other => Err(format!("unknown mode {other:?} (mean_shift|residual)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurgeConfig {
    pub confidence: f64,
    pub mode: DetectionMode,
    /// Points per window in mean-shift mode.
    pub window: usize,
    /// Flag drops below the band as well as rises above it.
    pub two_sided: bool,
    pub source: String,
}

impl Default for SurgeConfig {
    fn default() -> Self {
        SurgeConfig {
            confidence: DEFAULT_CONFIDENCE,
            mode: DetectionMode::MeanShift,
            window: 4,
            two_sided: true,
            source: String::new(),
        }
    }
}

/// Something that can forecast one step and then absorb an observation.
trait Stepper: Clone {
    fn predict(&self) -> f64;
    fn advance(&mut self, actual: Option<f64>);
}

impl Stepper for ForecastCursor<'_> {
    fn predict(&self) -> f64 {
        ForecastCursor::predict(self)
    }

    fn advance(&mut self, actual: Option<f64>) {
        ForecastCursor::advance(self, actual)
    }
}

/// Flat expectation, used for count series with no forecaster.
#[derive(Clone)]
struct Level(f64);

impl Stepper for Level {
    fn predict(&self) -> f64 {
        self.0
    }

    fn advance(&mut self, _: Option<f64>) {}
}

/// Mean-shift scan shared by the surge and identity-flood detectors.
///
/// The scored range is cut into consecutive windows of `window` points. For
/// each window the stepper's one-step forecasts give the expected mean; the
/// band is `expected + X ± z·s/√n` where `X`, `s` are the mean and sample
/// standard deviation of the training residuals and `n` counts the present
/// points in the window. A flagged window is replayed with its actuals
/// withheld, so an ongoing attack never becomes the model's new normal.
fn mean_shift_scan<S: Stepper>(
    series: &TimeSeries,
    from: usize,
    mut stepper: S,
    residuals: &[f64],
    z: f64,
    window: usize,
    two_sided: bool,
    kind: AlertKind,
    source: &str,
) -> Vec<AnomalyAlert> {
    let (bias, s) = sample_mean_std(residuals);
    let mut alerts = Vec::new();
    let mut start = from;
    while start < series.len() {
        let end = (start + window).min(series.len());
        let snapshot = stepper.clone();
        let (mut obs_sum, mut exp_sum, mut n) = (0.0, 0.0, 0usize);
        for t in start..end {
            let actual = series.get(t);
            let pred = stepper.predict();
            if let Some(y) = actual {
                obs_sum += y;
                exp_sum += pred;
                n += 1;
            }
            stepper.advance(actual);
        }
        if n > 0 {
            let (observed, expected) = (obs_sum / n as f64, exp_sum / n as f64);
            let band = ConfidenceBand::from_stats(expected + bias, s, n, z);
            if observed > band.upper || (two_sided && observed < band.lower) {
                alerts.push(AnomalyAlert {
                    timestamp: series.timestamp(start),
                    kind,
                    observed,
                    expected,
                    band: Some(band),
                    severity: band.severity_of(observed),
                    source: source.to_string(),
                    span: end - start,
                    class: None,
                    ambiguous: None,
                });
                stepper = snapshot;
                for _ in start..end {
                    stepper.advance(None);
                }
            }
        }
        start = end;
    }
    alerts
}

fn residual_scan<S: Stepper>(series: &TimeSeries, mut stepper: S, sigma: f64, z: f64, two_sided: bool, source: &str) -> Vec<AnomalyAlert> {
    let mut alerts = Vec::new();
    for t in 0..series.len() {
        let pred = stepper.predict();
        let Some(y) = series.get(t) else {
            stepper.advance(None);
            continue;
        };
        let band = ConfidenceBand::from_stats(pred, sigma, 1, z);
        let deviation = if two_sided { (y - pred).abs() } else { y - pred };
        if deviation > z * sigma {
            alerts.push(AnomalyAlert {
                timestamp: series.timestamp(t),
                kind: AlertKind::Surge,
                observed: y,
                expected: pred,
                band: Some(band),
                severity: band.severity_of(y),
                source: source.to_string(),
                span: 1,
                class: None,
                ambiguous: None,
            });
            stepper.advance(None);
        } else {
            stepper.advance(Some(y));
        }
    }
    alerts
}

/// Scores `scored`, the stretch immediately after the model's training
/// range, and returns surge alerts in timestamp order. Missing points are
/// skipped (dropout detection covers them).
pub fn detect_surges(scored: &TimeSeries, model: &FittedForecaster, cfg: &SurgeConfig) -> Result<Vec<AnomalyAlert>, SurgeError> {
    let z = z_score(cfg.confidence)?;
    if cfg.window == 0 {
        return Err(SurgeError::InvalidWindowSize);
    }
    let mut alerts = match cfg.mode {
        DetectionMode::MeanShift => mean_shift_scan(
            scored,
            0,
            model.cursor(),
            &model.result().residuals,
            z,
            cfg.window,
            cfg.two_sided,
            AlertKind::Surge,
            &cfg.source,
        ),
        DetectionMode::Residual => residual_scan(scored, model.cursor(), model.residual_std(), z, cfg.two_sided, &cfg.source),
    };
    sort_alerts(&mut alerts);
    Ok(alerts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DropoutConfig {
    pub gap_threshold: usize,
    /// Treat zero-valued buckets as silent too (event-count series).
    pub zero_is_silence: bool,
    pub source: String,
}

impl Default for DropoutConfig {
    fn default() -> Self {
        DropoutConfig { gap_threshold: 3, zero_is_silence: false, source: String::new() }
    }
}

/// One alert per maximal silent run of at least `gap_threshold` buckets,
/// stamped at the run start. `observed` is the run length.
pub fn detect_dropout(series: &TimeSeries, cfg: &DropoutConfig) -> Result<Vec<AnomalyAlert>, SurgeError> {
    if cfg.gap_threshold == 0 {
        return Err(SurgeError::InvalidGapThreshold);
    }
    let silent = |i: usize| match series.get(i) {
        None => true,
        Some(v) => cfg.zero_is_silence && v == 0.0,
    };
    let mut alerts = Vec::new();
    let mut i = 0;
    while i < series.len() {
        if !silent(i) {
            i += 1;
            continue;
        }
        let start = i;
        while i < series.len() && silent(i) {
            i += 1;
        }
        let run = i - start;
        if run >= cfg.gap_threshold {
            alerts.push(AnomalyAlert {
                timestamp: series.timestamp(start),
                kind: AlertKind::Dropout,
                observed: run as f64,
                expected: 0.0,
                band: None,
                severity: if run >= 2 * cfg.gap_threshold { Severity::Critical } else { Severity::Warning },
                source: cfg.source.clone(),
                span: run,
                class: None,
                ambiguous: None,
            });
        }
    }
    Ok(alerts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdentityFloodConfig {
    pub confidence: f64,
    /// Leading intervals that define normal churn.
    pub baseline_intervals: usize,
    pub window: usize,
    pub source: String,
}

impl Default for IdentityFloodConfig {
    fn default() -> Self {
        IdentityFloodConfig { confidence: DEFAULT_CONFIDENCE, baseline_intervals: 24, window: 1, source: String::new() }
    }
}

/// Mean-shift scan of a new-identity count series against its baseline
/// level. The baseline prefix itself is not scored.
pub fn detect_identity_flood(new_ids: &TimeSeries, cfg: &IdentityFloodConfig) -> Result<Vec<AnomalyAlert>, SurgeError> {
    let z = z_score(cfg.confidence)?;
    if cfg.window == 0 {
        return Err(SurgeError::InvalidWindowSize);
    }
    let baseline_end = cfg.baseline_intervals.min(new_ids.len());
    let baseline: Vec<f64> = (0..baseline_end).filter_map(|i| new_ids.get(i)).collect();
    let (level, _) = sample_mean_std(&baseline);
    let residuals: Vec<f64> = baseline.iter().map(|v| v - level).collect();
    Ok(mean_shift_scan(
        new_ids,
        baseline_end,
        Level(level),
        &residuals,
        z,
        cfg.window,
        false,
        AlertKind::IdentityFlood,
        &cfg.source,
    ))
}

/// Counts, per interval, source ids never seen in any earlier event.
/// Every bucket is present (zero when nothing new appeared).
pub fn new_identity_counts<'a>(
    events: impl IntoIterator<Item = (DateTime<Utc>, &'a str)>,
    start: DateTime<Utc>,
    interval_secs: i64,
    len: usize,
) -> TimeSeries {
    let mut events: Vec<(DateTime<Utc>, &str)> = events.into_iter().collect();
    events.sort();
    let mut seen = std::collections::HashSet::new();
    let mut counts = vec![0.0; len.max(1)];
    for (ts, id) in events {
        let offset = (ts - start).num_seconds();
        if offset < 0 {
            continue;
        }
        let idx = (offset / interval_secs) as usize;
        if idx >= counts.len() {
            continue;
        }
        if seen.insert(id) {
            counts[idx] += 1.0;
        }
    }
    TimeSeries::new(start, interval_secs, counts).expect("counts are finite and interval positive")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forecast::{fit_values, ForecasterConfig};
    use chrono::TimeZone;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    fn t0() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2018, 2, 16, 0, 0, 0).unwrap()
    }

    #[test]
    fn z_table_lookup() {
        assert_eq!(z_score(0.95), Ok(1.960));
        assert_eq!(z_score(0.80), Ok(1.282));
        assert_eq!(z_score(0.995), Ok(2.807));
        assert_eq!(z_score(0.97), Err(SurgeError::UnsupportedConfidence(0.97)));
        assert!(z_score(95.0).is_err());
    }

    #[test]
    fn band_arithmetic() {
        let b = ConfidenceBand::from_stats(100.0, 10.0, 25, z_score(0.95).unwrap());
        assert!((b.lower - 96.08).abs() < 1e-9);
        assert!((b.upper - 103.92).abs() < 1e-9);
        assert!(b.lower <= b.mean && b.mean <= b.upper);

        let flat = confidence_interval(&[4.0, 4.0, 4.0], 0.95).unwrap();
        assert_eq!((flat.lower, flat.upper), (4.0, 4.0));
        let single = confidence_interval(&[9.0], 0.99).unwrap();
        assert_eq!((single.lower, single.std, single.upper), (9.0, 0.0, 9.0));
        assert_eq!(confidence_interval(&[], 0.95), Err(SurgeError::InvalidWindow));
        assert_eq!(confidence_interval(&[1.0], 0.5), Err(SurgeError::UnsupportedConfidence(0.5)));
    }

    #[test]
    fn band_widens_with_confidence() {
        let w = [1.0, 2.0, 4.0, 8.0];
        let widths: Vec<f64> = Z_TABLE.iter().map(|(c, _)| confidence_interval(&w, *c).unwrap().half_width()).collect();
        assert!(widths.windows(2).all(|p| p[0] < p[1]));
    }

    #[test]
    fn constant_series_raises_nothing() {
        let train = vec![5.0; 48];
        let scored = TimeSeries::new(t0(), 60, vec![5.0; 48]).unwrap();
        for cfg in [ForecasterConfig::moving_average(4), ForecasterConfig::holt_winters(12), ForecasterConfig::linear_trend(None)] {
            let m = fit_values(&cfg, &train).unwrap();
            for mode in [DetectionMode::MeanShift, DetectionMode::Residual] {
                let sc = SurgeConfig { mode, ..Default::default() };
                assert!(detect_surges(&scored, &m, &sc).unwrap().is_empty());
            }
        }
    }

    #[test]
    fn residual_mode_flags_injected_point_only() {
        // Line plus an alternating ±1 wobble: residuals are exactly ±1.
        let wobble = |t: usize| if t % 2 == 0 { 1.0 } else { -1.0 };
        let line = |t: usize| 10.0 + 0.5 * t as f64;
        let train: Vec<f64> = (0..40).map(|t| line(t) + wobble(t)).collect();
        let m = fit_values(&ForecasterConfig::linear_trend(None), &train).unwrap();
        let sigma = m.residual_std();
        assert!(sigma > 0.9 && sigma < 1.1, "{sigma}");
        let mut scored: Vec<f64> = (40..80).map(|t| line(t) + wobble(t)).collect();
        let fcst = m.forecast(40).unwrap();
        scored[17] = fcst[17] + 3.0 * sigma;
        let s = TimeSeries::new(t0(), 60, scored).unwrap();
        let alerts = detect_surges(&s, &m, &SurgeConfig { mode: DetectionMode::Residual, ..Default::default() }).unwrap();
        assert_eq!(alerts.len(), 1);
        assert_eq!(alerts[0].timestamp, s.timestamp(17));
        assert!(!alerts[0].band.unwrap().contains(alerts[0].observed));
    }

    #[test]
    fn mean_shift_flags_sustained_shift_and_holds_baseline() {
        let train: Vec<f64> = (0..60).map(|t| 10.0 + if t % 2 == 0 { 0.5 } else { -0.5 }).collect();
        let m = fit_values(&ForecasterConfig::moving_average(4), &train).unwrap();
        let mut scored: Vec<f64> = (0..40).map(|t| 10.0 + if t % 2 == 0 { 0.5 } else { -0.5 }).collect();
        for v in &mut scored[16..32] {
            *v += 20.0;
        }
        let s = TimeSeries::new(t0(), 60, scored).unwrap();
        let alerts = detect_surges(&s, &m, &SurgeConfig { window: 4, ..Default::default() }).unwrap();
        let starts: Vec<_> = alerts.iter().map(|a| s.index_of(a.timestamp).unwrap()).collect();
        // Every window of the shift is flagged, even after the first, because
        // flagged windows are withheld from the moving average.
        assert_eq!(starts, vec![16, 20, 24, 28]);
        assert!(alerts.iter().all(|a| a.severity == Severity::Critical && a.span == 4));
    }

    #[test]
    fn dropout_runs() {
        let s = TimeSeries::from_options(
            t0(),
            60,
            vec![Some(1.0), None, None, None, Some(1.0), None, None, Some(2.0), Some(0.0), Some(0.0), Some(0.0)],
        )
        .unwrap();
        let cfg = DropoutConfig { gap_threshold: 3, ..Default::default() };
        let a = detect_dropout(&s, &cfg).unwrap();
        assert_eq!(a.len(), 1);
        assert_eq!(a[0].timestamp, s.timestamp(1));
        assert_eq!(a[0].observed, 3.0);
        let zeros = detect_dropout(&s, &DropoutConfig { zero_is_silence: true, ..cfg.clone() }).unwrap();
        assert_eq!(zeros.len(), 2);
        assert_eq!(zeros[1].timestamp, s.timestamp(8));
        assert_eq!(detect_dropout(&s, &DropoutConfig { gap_threshold: 0, ..cfg }), Err(SurgeError::InvalidGapThreshold));
    }

    #[test]
    fn identity_flood_examples() {
        let zeros = TimeSeries::new(t0(), 60, vec![0.0; 40]).unwrap();
        let cfg = IdentityFloodConfig { baseline_intervals: 20, ..Default::default() };
        assert!(detect_identity_flood(&zeros, &cfg).unwrap().is_empty());

        let mut counts: Vec<f64> = (0..40).map(|t| (t % 3) as f64).collect();
        counts[30] = 25.0;
        let s = TimeSeries::new(t0(), 60, counts).unwrap();
        let a = detect_identity_flood(&s, &cfg).unwrap();
        assert_eq!(a.len(), 1);
        assert_eq!(a[0].kind, AlertKind::IdentityFlood);
        assert_eq!(a[0].timestamp, s.timestamp(30));
        assert!(a[0].observed > a[0].band.unwrap().upper);
    }

    #[test]
    fn new_identity_counting() {
        let ev = [(t0(), "a"), (t0(), "b"), (t0() + chrono::Duration::seconds(70), "a"), (t0() + chrono::Duration::seconds(130), "c")];
        let s = new_identity_counts(ev.iter().copied(), t0(), 60, 4);
        assert_eq!(s.values(), &[2.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn alert_line_field_order() {
        let a = AnomalyAlert {
            timestamp: t0(),
            kind: AlertKind::Surge,
            observed: 12.5,
            expected: 3.0,
            band: Some(ConfidenceBand::from_stats(3.0, 1.0, 1, 1.96)),
            severity: Severity::Critical,
            source: "10.0.0.2".into(),
            span: 1,
            class: None,
            ambiguous: None,
        };
        assert_eq!(
            a.to_json_line(),
            r#"{"ts":"2018-02-16T00:00:00Z","kind":"Surge","observed":12.5,"expected":3.0,"lower":1.04,"upper":4.96,"severity":"Critical","source":"10.0.0.2","span":1}"#
        );
        let back = read_alert_lines(&a.to_json_line()).unwrap();
        assert_eq!(back[0], a.to_line());
    }

    #[test]
    fn coverage_of_gaussian_windows() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2024);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let hits = (0..1000)
            .filter(|_| {
                let w: Vec<f64> = (0..30).map(|_| normal.sample(&mut rng)).collect();
                confidence_interval(&w, 0.95).unwrap().contains(0.0)
            })
            .count();
        let frac = hits as f64 / 1000.0;
        assert!((0.92..=0.98).contains(&frac), "{frac}");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn band_brackets_mean(w in prop::collection::vec(-1e3f64..1e3, 1..40), ci in 0usize..7) {
                let b = confidence_interval(&w, Z_TABLE[ci].0).unwrap();
                prop_assert!(b.lower <= b.mean && b.mean <= b.upper);
            }

            #[test]
            fn alerts_are_scale_equivariant(seed in 0u64..500, a in 0.5f64..50.0, spike in 20usize..60) {
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                let normal = Normal::new(0.0, 1.0).unwrap();
                let base: Vec<f64> = (0..140).map(|t| 20.0 + 5.0 * ((t % 12) as f64 / 12.0) + normal.sample(&mut rng)).collect();
                let mut scored = base[80..].to_vec();
                scored[spike - 20] += 30.0;
                let cfg = ForecasterConfig { hw_alpha: Some(0.3), hw_beta: Some(0.1), hw_gamma: Some(0.2), ..ForecasterConfig::holt_winters(12) };
                for mode in [DetectionMode::MeanShift, DetectionMode::Residual] {
                    let sc = SurgeConfig { mode, ..Default::default() };
                    let m1 = fit_values(&cfg, &base[..80]).unwrap();
                    let s1 = TimeSeries::new(t0(), 60, scored.clone()).unwrap();
                    let m2 = fit_values(&cfg, &base[..80].iter().map(|v| v * a).collect::<Vec<_>>()).unwrap();
                    let s2 = TimeSeries::new(t0(), 60, scored.iter().map(|v| v * a).collect()).unwrap();
                    let a1 = detect_surges(&s1, &m1, &sc).unwrap();
                    let a2 = detect_surges(&s2, &m2, &sc).unwrap();
                    let k1: Vec<_> = a1.iter().map(|x| (x.timestamp, x.kind)).collect();
                    let k2: Vec<_> = a2.iter().map(|x| (x.timestamp, x.kind)).collect();
                    prop_assert_eq!(k1, k2);
                    for (x, y) in a1.iter().zip(&a2) {
                        let (b1, b2) = (x.band.unwrap(), y.band.unwrap());
                        prop_assert!((b2.half_width() - a * b1.half_width()).abs() <= 1e-6 * b2.half_width().max(1.0));
                    }
                }
            }
        }
    }
}
