//! Per-source monitoring of a flow log: each source's records are rolled up
//! on a shared grid, a forecaster is fitted on the leading share of the
//! grid, and the remainder is scored for surges. Dropouts are checked over
//! the whole grid.

use std::collections::BTreeMap;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::forecast::{fit, ForecasterConfig};
use crate::ingest::{to_series_on_grid, Aggregator, FlowRecord, IngestError};
use crate::series::{split, MAX_IMPUTED_RUN};
use crate::surge::{detect_dropout, detect_surges, sort_alerts, AnomalyAlert, DropoutConfig, SurgeConfig, SurgeError};

/// Source name used for alerts on the aggregate of every source.
pub const GATEWAY_SOURCE: &str = "gateway";

/// Daily-seasonal Holt-Winters with the trend held at its initial estimate.
/// Gated stretches run the model open-loop, and a trend fitted to a few days
/// of counts would otherwise extrapolate noise across them.
pub fn rate_forecaster(interval_secs: i64) -> ForecasterConfig {
    let period = (86_400 / interval_secs.max(1)).max(2) as usize;
    ForecasterConfig { hw_beta: Some(0.0), ..ForecasterConfig::holt_winters(period) }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonitorConfig {
    pub interval_secs: i64,
    pub aggregator: Aggregator,
    pub train_fraction: f64,
    pub forecaster: ForecasterConfig,
    pub surge: SurgeConfig,
    pub dropout: DropoutConfig,
    /// One series per flow source; otherwise a single gateway-wide series.
    pub per_source: bool,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        let interval_secs = 900;
        MonitorConfig {
            interval_secs,
            aggregator: Aggregator::Count,
            train_fraction: 0.5,
            forecaster: rate_forecaster(interval_secs),
            surge: SurgeConfig::default(),
            dropout: DropoutConfig::default(),
            per_source: true,
        }
    }
}

#[derive(Debug, Error)]
pub enum MonitorError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Surge(#[from] SurgeError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SourceStatus {
    pub source: String,
    pub train_len: usize,
    pub scored_len: usize,
    /// Why surge scoring was skipped for this source.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonitorReport {
    pub grid_start: DateTime<Utc>,
    pub grid_len: usize,
    pub alerts: Vec<AnomalyAlert>,
    pub sources: Vec<SourceStatus>,
}

fn floor_to(ts: DateTime<Utc>, interval_secs: i64) -> DateTime<Utc> {
    let secs = ts.timestamp().div_euclid(interval_secs) * interval_secs;
    DateTime::from_timestamp(secs, 0).expect("in range")
}

pub fn monitor_flows(records: &[FlowRecord], cfg: &MonitorConfig) -> Result<MonitorReport, MonitorError> {
    if cfg.interval_secs <= 0 {
        return Err(IngestError::InvalidInterval(cfg.interval_secs).into());
    }
    // Validate detector settings up front rather than once per source.
    crate::surge::z_score(cfg.surge.confidence)?;
    let clean: Vec<&FlowRecord> = records.iter().filter(|r| r.is_clean()).collect();
    let first = clean.iter().map(|r| r.timestamp).min().ok_or(IngestError::EmptyInput)?;
    let last = clean.iter().map(|r| r.timestamp).max().ok_or(IngestError::EmptyInput)?;
    let grid_start = floor_to(first, cfg.interval_secs);
    let grid_len = ((last - grid_start).num_seconds() / cfg.interval_secs) as usize + 1;

    let mut groups: BTreeMap<String, Vec<FlowRecord>> = BTreeMap::new();
    for r in clean {
        let key = if cfg.per_source { r.source().to_string() } else { GATEWAY_SOURCE.to_string() };
        groups.entry(key).or_default().push(r.clone());
    }

    let mut alerts = Vec::new();
    let mut sources = Vec::new();
    for (source, recs) in &groups {
        let series = to_series_on_grid(recs, grid_start, cfg.interval_secs, grid_len, cfg.aggregator)?;
        let dropout = DropoutConfig { source: source.clone(), ..cfg.dropout.clone() };
        alerts.extend(detect_dropout(&series, &dropout)?);
        let mut status = SourceStatus { source: source.clone(), train_len: 0, scored_len: 0, error: None };
        match split(&series, cfg.train_fraction) {
            Err(e) => status.error = Some(e.to_string()),
            Ok((train, test)) => {
                status.train_len = train.len();
                status.scored_len = test.len();
                match fit(&cfg.forecaster, &train.impute_short_gaps(MAX_IMPUTED_RUN)) {
                    Err(e) => status.error = Some(e.to_string()),
                    Ok(model) => {
                        let surge = SurgeConfig { source: source.clone(), ..cfg.surge.clone() };
                        alerts.extend(detect_surges(&test, &model, &surge)?);
                    }
                }
            }
        }
        sources.push(status);
    }
    sort_alerts(&mut alerts);
    Ok(MonitorReport { grid_start, grid_len, alerts, sources })
}

/// Start of grid bucket `index`.
pub fn bucket_start(grid_start: DateTime<Utc>, interval_secs: i64, index: usize) -> DateTime<Utc> {
    grid_start + Duration::seconds(interval_secs * index as i64)
}
