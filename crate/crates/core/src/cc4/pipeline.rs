//! collect → cleanse → symbolize/classify → emit, one thread per stage,
//! joined by bounded queues. Output never depends on scheduling: records
//! leave the cleanse stage in timestamp order and alerts are sorted before
//! they reach the sink.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashSet};
use std::io;
use std::sync::mpsc::{sync_channel, Receiver, SyncSender};
use std::thread;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Cc4Network, EventLogRecord, PacketClass, SymbolSchema};
use crate::forecast::{fit, ForecasterConfig};
use crate::series::{split, TimeSeries};
use crate::surge::{
    detect_dropout, detect_identity_flood, detect_surges, new_identity_counts, sort_alerts, AlertKind, AnomalyAlert,
    DropoutConfig, IdentityFloodConfig, Severity, SurgeConfig,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub interval_secs: i64,
    /// Records older than the newest seen minus this many intervals are late.
    pub skew_intervals: i64,
    pub queue_capacity: usize,
    /// Also alert on records classified Unknown.
    pub strict: bool,
    /// Grid origin for rate series; defaults to the first record's bucket.
    #[serde(with = "opt_iso")]
    pub start: Option<DateTime<Utc>>,
    pub rate_detectors: bool,
    pub forecaster: ForecasterConfig,
    /// Leading share of each rate series used for fitting and as the
    /// identity-churn baseline.
    pub train_fraction: f64,
    /// A source gets rate detectors only if it is active in at least this
    /// share of the training buckets.
    pub min_presence: f64,
    pub surge: SurgeConfig,
    pub dropout: DropoutConfig,
    pub identity: IdentityFloodConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let interval_secs = 900;
        PipelineConfig {
            interval_secs,
            skew_intervals: 5,
            queue_capacity: 1024,
            strict: false,
            start: None,
            rate_detectors: true,
            forecaster: crate::monitor::rate_forecaster(interval_secs),
            train_fraction: 0.5,
            min_presence: 0.5,
            surge: SurgeConfig::default(),
            dropout: DropoutConfig { zero_is_silence: true, ..DropoutConfig::default() },
            identity: IdentityFloodConfig::default(),
        }
    }
}

mod opt_iso {
    use chrono::{DateTime, Utc};
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<DateTime<Utc>>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(t) => s.serialize_str(&crate::timefmt::format_iso(*t)),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<DateTime<Utc>>, D::Error> {
        let raw: Option<String> = Option::deserialize(d)?;
        raw.map(|s| crate::timefmt::parse_iso(&s).ok_or_else(|| serde::de::Error::custom(format!("bad timestamp {s:?}"))))
            .transpose()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct PipelineSummary {
    pub records_in: usize,
    pub classified: usize,
    pub dropped_malformed: usize,
    pub dropped_late: usize,
    pub dropped_duplicate: usize,
    pub known: usize,
    pub unknown: usize,
    pub attack: usize,
    pub sources_monitored: usize,
    pub alerts_emitted: usize,
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid pipeline config: {0}")]
    Config(String),
    #[error("reading input: {0}")]
    Input(#[from] io::Error),
    #[error("alert sink failed after {} alerts: {error}", summary.alerts_emitted)]
    Sink { error: String, summary: PipelineSummary },
}

struct Pending(DateTime<Utc>, u64, EventLogRecord);

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        (self.0, self.1) == (other.0, other.1)
    }
}

impl Eq for Pending {}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Pending {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.0, self.1).cmp(&(other.0, other.1))
    }
}

fn collect_stage<I>(lines: I, tx: SyncSender<EventLogRecord>) -> io::Result<(usize, usize)>
where
    I: Iterator<Item = io::Result<String>>,
{
    let (mut seen, mut malformed) = (0, 0);
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        seen += 1;
        match EventLogRecord::from_json_line(&line) {
            Ok(r) => {
                if tx.send(r).is_err() {
                    break;
                }
            }
            Err(_) => malformed += 1,
        }
    }
    Ok((seen, malformed))
}

/// Drops duplicates and late records, releases the rest in timestamp order
/// once the watermark has passed them.
fn cleanse_stage(rx: Receiver<EventLogRecord>, tx: SyncSender<EventLogRecord>, skew: Duration) -> (usize, usize) {
    let mut heap = BinaryHeap::new();
    let mut keys = HashSet::new();
    let (mut late, mut dup, mut seq) = (0, 0, 0u64);
    let mut newest: Option<DateTime<Utc>> = None;
    for r in rx {
        if let Some(n) = newest {
            if r.timestamp < n - skew {
                late += 1;
                continue;
            }
        }
        if !keys.insert(r.dedup_key()) {
            dup += 1;
            continue;
        }
        newest = Some(newest.map_or(r.timestamp, |n| n.max(r.timestamp)));
        heap.push(Reverse(Pending(r.timestamp, seq, r)));
        seq += 1;
        let watermark = newest.expect("set above") - skew;
        while heap.peek().is_some_and(|Reverse(p)| p.0 < watermark) {
            let Reverse(Pending(_, _, rec)) = heap.pop().expect("peeked");
            if tx.send(rec).is_err() {
                return (late, dup);
            }
        }
    }
    while let Some(Reverse(Pending(_, _, rec))) = heap.pop() {
        if tx.send(rec).is_err() {
            break;
        }
    }
    (late, dup)
}

#[derive(Default)]
struct Classified {
    malformed: usize,
    counts: [usize; 3],
    /// (bucket start, source, class) → (records, any ambiguous).
    intrusions: BTreeMap<(DateTime<Utc>, String, PacketClass), (usize, bool)>,
    /// Per source, records per bucket start.
    rates: BTreeMap<String, BTreeMap<DateTime<Utc>, usize>>,
    first_seen: Vec<(DateTime<Utc>, String)>,
    first_bucket: Option<DateTime<Utc>>,
    last_bucket: Option<DateTime<Utc>>,
}

fn bucket_of(ts: DateTime<Utc>, interval_secs: i64) -> DateTime<Utc> {
    let secs = ts.timestamp().div_euclid(interval_secs) * interval_secs;
    DateTime::from_timestamp(secs, 0).expect("in range")
}

fn classify_stage(rx: Receiver<EventLogRecord>, schema: &SymbolSchema, network: &Cc4Network, cfg: &PipelineConfig) -> Classified {
    let mut out = Classified::default();
    let mut seen_sources = HashSet::new();
    for r in rx {
        let Ok(sym) = schema.symbolize(&r) else {
            out.malformed += 1;
            continue;
        };
        let Ok(c) = network.classify(&sym.bits) else {
            out.malformed += 1;
            continue;
        };
        out.counts[c.class.index()] += 1;
        let bucket = bucket_of(r.timestamp, cfg.interval_secs);
        out.first_bucket.get_or_insert(bucket);
        out.last_bucket = Some(bucket);
        if c.class == PacketClass::Attack || (cfg.strict && c.class == PacketClass::Unknown) {
            let e = out.intrusions.entry((bucket, r.source_id.clone(), c.class)).or_insert((0, false));
            e.0 += 1;
            e.1 |= c.ambiguous;
        }
        *out.rates.entry(r.source_id.clone()).or_default().entry(bucket).or_insert(0) += 1;
        if seen_sources.insert(r.source_id.clone()) {
            out.first_seen.push((r.timestamp, r.source_id));
        }
    }
    out
}

fn rate_alerts(c: &Classified, cfg: &PipelineConfig) -> (Vec<AnomalyAlert>, usize) {
    let (Some(first), Some(last)) = (c.first_bucket, c.last_bucket) else {
        return (Vec::new(), 0);
    };
    let start = cfg.start.map_or(first, |s| bucket_of(s, cfg.interval_secs));
    if last < start {
        return (Vec::new(), 0);
    }
    let len = ((last - start).num_seconds() / cfg.interval_secs) as usize + 1;
    let train_len = ((cfg.train_fraction * len as f64) - 1e-9).ceil().max(0.0) as usize;
    let mut alerts = Vec::new();
    let mut monitored = 0;
    for (src, buckets) in &c.rates {
        let counts: Vec<f64> = (0..len)
            .map(|i| *buckets.get(&(start + Duration::seconds(i as i64 * cfg.interval_secs))).unwrap_or(&0) as f64)
            .collect();
        let active = counts[..train_len.min(len)].iter().filter(|&&v| v > 0.0).count();
        if train_len == 0 || (active as f64) < cfg.min_presence * train_len as f64 {
            continue;
        }
        monitored += 1;
        let series = TimeSeries::new(start, cfg.interval_secs, counts).expect("counts are finite");
        let dropout = DropoutConfig { source: src.clone(), ..cfg.dropout.clone() };
        alerts.extend(detect_dropout(&series, &dropout).unwrap_or_default());
        if let Ok((train, test)) = split(&series, cfg.train_fraction) {
            if let Ok(model) = fit(&cfg.forecaster, &train) {
                let surge = SurgeConfig { source: src.clone(), ..cfg.surge.clone() };
                alerts.extend(detect_surges(&test, &model, &surge).unwrap_or_default());
            }
        }
    }
    let ids = new_identity_counts(c.first_seen.iter().map(|(t, s)| (*t, s.as_str())), start, cfg.interval_secs, len);
    let identity = IdentityFloodConfig { baseline_intervals: train_len, ..cfg.identity.clone() };
    alerts.extend(detect_identity_flood(&ids, &identity).unwrap_or_default());
    (alerts, monitored)
}

/// Runs the pipeline over JSON Lines `lines` and hands every alert, in
/// `(timestamp, kind, source)` order, to `sink`.
pub fn run_pipeline<I, F>(
    lines: I,
    schema: &SymbolSchema,
    network: &Cc4Network,
    cfg: &PipelineConfig,
    mut sink: F,
) -> Result<PipelineSummary, PipelineError>
where
    I: Iterator<Item = io::Result<String>> + Send,
    F: FnMut(&AnomalyAlert) -> io::Result<()>,
{
    if cfg.interval_secs <= 0 || cfg.skew_intervals < 0 || cfg.queue_capacity == 0 {
        return Err(PipelineError::Config("interval, skew and queue capacity must be positive".into()));
    }
    if schema.total_bits() != network.width() {
        return Err(PipelineError::Config(format!(
            "schema encodes {} bits but the network expects {}",
            schema.total_bits(),
            network.width()
        )));
    }
    let skew = Duration::seconds(cfg.skew_intervals * cfg.interval_secs);
    let (raw_tx, raw_rx) = sync_channel(cfg.queue_capacity);
    let (clean_tx, clean_rx) = sync_channel(cfg.queue_capacity);
    let (collected, (late, dup), classified) = thread::scope(|s| {
        let collector = s.spawn(move || collect_stage(lines, raw_tx));
        let cleanser = s.spawn(move || cleanse_stage(raw_rx, clean_tx, skew));
        let classified = classify_stage(clean_rx, schema, network, cfg);
        (
            collector.join().expect("collect stage panicked"),
            cleanser.join().expect("cleanse stage panicked"),
            classified,
        )
    });
    let (records_in, parse_failures) = collected?;

    let mut alerts: Vec<AnomalyAlert> = classified
        .intrusions
        .iter()
        .map(|((bucket, src, class), (n, ambiguous))| AnomalyAlert {
            timestamp: *bucket,
            kind: AlertKind::Intrusion,
            observed: *n as f64,
            expected: 0.0,
            band: None,
            severity: if *class == PacketClass::Attack { Severity::Critical } else { Severity::Warning },
            source: src.clone(),
            span: 1,
            class: Some(*class),
            ambiguous: Some(*ambiguous),
        })
        .collect();
    let monitored = if cfg.rate_detectors {
        let (rate, monitored) = rate_alerts(&classified, cfg);
        alerts.extend(rate);
        monitored
    } else {
        0
    };
    sort_alerts(&mut alerts);

    let [known, unknown, attack] = classified.counts;
    let mut summary = PipelineSummary {
        records_in,
        classified: known + unknown + attack,
        dropped_malformed: parse_failures + classified.malformed,
        dropped_late: late,
        dropped_duplicate: dup,
        known,
        unknown,
        attack,
        sources_monitored: monitored,
        alerts_emitted: 0,
    };
    for a in &alerts {
        if let Err(e) = sink(a) {
            return Err(PipelineError::Sink { error: e.to_string(), summary });
        }
        summary.alerts_emitted += 1;
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cc4::{BitVec, FieldEncoder, FieldSpec};
    use chrono::TimeZone;

    fn schema() -> SymbolSchema {
        SymbolSchema::new(vec![FieldSpec {
            name: "kind".into(),
            encoder: FieldEncoder::OneHot { vocabulary: vec!["ok".into(), "bad".into(), "odd".into()] },
        }])
        .unwrap()
    }

    fn network() -> Cc4Network {
        let bv = |s: &str| s.parse::<BitVec>().unwrap();
        Cc4Network::train(&[(bv("100"), PacketClass::Known), (bv("010"), PacketClass::Attack)], 0).unwrap()
    }

    fn line(min: i64, src: &str, kind: &str) -> String {
        let ts = Utc.with_ymd_and_hms(2018, 2, 16, 0, 0, 0).unwrap() + Duration::minutes(min);
        format!(r#"{{"ts":"{}","src":"{src}","kind":"{kind}"}}"#, crate::timefmt::format_iso(ts))
    }

    fn quiet() -> PipelineConfig {
        PipelineConfig { interval_secs: 60, rate_detectors: false, queue_capacity: 2, ..Default::default() }
    }

    fn run(lines: Vec<String>, cfg: &PipelineConfig) -> (PipelineSummary, Vec<AnomalyAlert>) {
        let mut alerts = Vec::new();
        let s = run_pipeline(lines.into_iter().map(Ok), &schema(), &network(), cfg, |a| {
            alerts.push(a.clone());
            Ok(())
        })
        .unwrap();
        (s, alerts)
    }

    #[test]
    fn counts_balance_and_attacks_alert() {
        let mut lines: Vec<String> = (0..12).map(|m| line(m, "a", "ok")).collect();
        lines.push(line(12, "b", "bad"));
        lines.push(line(12, "b", "bad"));
        lines.push(line(13, "b", "bad"));
        lines.push("{broken".into());
        lines.push(line(14, "c", "unlisted"));
        lines.push(line(15, "c", "odd"));
        lines.push(line(15, "c", "ok").replace('}', r#","extra":1}"#));
        lines.extend((12..30).map(|m| line(m, "a", "ok")));
        lines.push(line(1, "a", "ok"));
        let (s, alerts) = run(lines, &quiet());
        assert_eq!(s.records_in, 38);
        assert_eq!(s.dropped_duplicate, 1);
        assert_eq!(s.dropped_late, 1);
        assert_eq!(s.dropped_malformed, 2);
        assert_eq!(s.records_in, s.classified + s.dropped_malformed + s.dropped_late + s.dropped_duplicate);
        assert_eq!((s.known, s.attack, s.unknown), (30, 2, 2));
        assert_eq!(alerts.len(), 2);
        assert!(alerts.iter().all(|a| a.kind == AlertKind::Intrusion && a.class == Some(PacketClass::Attack)));
        assert_eq!(alerts[0].observed, 1.0);

        let strict = PipelineConfig { strict: true, ..quiet() };
        let (_, alerts) = run((0..3).map(|m| line(m, "c", "odd")).collect(), &strict);
        assert_eq!(alerts.len(), 3);
        assert_eq!(alerts[0].severity, Severity::Warning);
    }

    #[test]
    fn bounded_disorder_is_reordered() {
        let lines = vec![line(3, "a", "bad"), line(1, "a", "bad"), line(2, "a", "bad")];
        let (s, alerts) = run(lines, &quiet());
        assert_eq!(s.dropped_late, 0);
        let times: Vec<_> = alerts.iter().map(|a| a.timestamp).collect();
        let mut sorted = times.clone();
        sorted.sort();
        assert_eq!(times, sorted);
    }

    #[test]
    fn flat_benign_stream_is_silent() {
        let lines: Vec<String> = (0..200).flat_map(|m| [line(m, "a", "ok"), line(m, "b", "ok")]).collect();
        let cfg = PipelineConfig {
            interval_secs: 60,
            forecaster: ForecasterConfig::moving_average(4),
            ..Default::default()
        };
        let (s, alerts) = run(lines, &cfg);
        assert_eq!(s.sources_monitored, 2);
        assert!(alerts.is_empty(), "{alerts:?}");
    }

    #[test]
    fn sink_failure_reports_progress() {
        let lines = vec![line(1, "a", "bad"), line(2, "a", "bad")];
        let mut calls = 0;
        let err = run_pipeline(lines.into_iter().map(Ok), &schema(), &network(), &quiet(), |_| {
            calls += 1;
            if calls == 2 {
                Err(io::Error::other("disk full"))
            } else {
                Ok(())
            }
        })
        .unwrap_err();
        match err {
            PipelineError::Sink { summary, .. } => assert_eq!(summary.alerts_emitted, 1),
            other => panic!("{other}"),
        }
    }
}
