//! Seeded generator of labeled smart-city gateway traces, and the scorer
//! that grades detector alerts against the labels.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::f64::consts::PI;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cc4::{BitVec, EventLogRecord, FieldEncoder, FieldSpec, FieldValue, PacketClass, SymbolSchema};
use crate::ingest::{write_flow_csv, FlowRecord, IngestError, COL_FWD_PKT_LEN_MEAN, WIN_BYTES_ABSENT};
use crate::monitor::GATEWAY_SOURCE;
use crate::surge::{AlertKind, AnomalyAlert};

pub const GATEWAY_ADDRESS: &str = "10.0.0.1";
pub const DEFAULT_FLOOD_MULTIPLIER: f64 = 10.0;
pub const DEFAULT_FAKE_IDS: usize = 5;

pub const FLOWS_FILE: &str = "flows.csv";
pub const EVENTS_FILE: &str = "events.jsonl";
pub const LABELS_FILE: &str = "labels.csv";
pub const TRAINING_FILE: &str = "training.jsonl";

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("invalid attack script: {0}")]
    InvalidScript(String),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("alert at {0} is not on the trace's time grid")]
    TimeBaseMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviceKind {
    Streetlight,
    Camera,
    WaterSensor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceSpec {
    pub id: String,
    pub kind: DeviceKind,
    /// Source address written into flow ids.
    pub address: String,
    /// Mean flows per interval.
    pub base_rate: f64,
    pub diurnal_amplitude: f64,
    pub noise_std: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AttackKind {
    UdpFlood,
    SilenceAfterOverflow,
    Sybil,
}

impl AttackKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AttackKind::UdpFlood => "UdpFlood",
            AttackKind::SilenceAfterOverflow => "SilenceAfterOverflow",
            AttackKind::Sybil => "Sybil",
        }
    }

    /// Whether an alert of `kind` is evidence of this attack.
    pub fn explained_by(self, kind: AlertKind) -> bool {
        matches!(
            (self, kind),
            (_, AlertKind::Intrusion)
                | (AttackKind::UdpFlood, AlertKind::Surge)
                | (AttackKind::SilenceAfterOverflow, AlertKind::Dropout)
                | (AttackKind::Sybil, AlertKind::IdentityFlood)
        )
    }
}

fn default_magnitude() -> f64 {
    DEFAULT_FLOOD_MULTIPLIER
}

fn default_fake_ids() -> usize {
    DEFAULT_FAKE_IDS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackScript {
    pub kind: AttackKind,
    pub target_id: String,
    /// First attacked interval.
    pub start: usize,
    /// One past the last attacked interval.
    pub end: usize,
    /// Rate multiplier for floods.
    #[serde(default = "default_magnitude")]
    pub magnitude: f64,
    /// Fresh identities per interval for Sybil attacks.
    #[serde(default = "default_fake_ids")]
    pub fake_id_count: usize,
}

impl AttackScript {
    pub fn new(kind: AttackKind, target_id: &str, start: usize, end: usize) -> Self {
        AttackScript {
            kind,
            target_id: target_id.to_string(),
            start,
            end,
            magnitude: DEFAULT_FLOOD_MULTIPLIER,
            fake_id_count: DEFAULT_FAKE_IDS,
        }
    }

    fn covers(&self, interval: usize) -> bool {
        (self.start..self.end).contains(&interval)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    #[serde(with = "iso")]
    pub start: DateTime<Utc>,
    /// Number of intervals.
    pub duration: usize,
    pub interval_secs: i64,
    pub fleet: Vec<DeviceSpec>,
    #[serde(default)]
    pub attacks: Vec<AttackScript>,
}

mod iso {
    use chrono::{DateTime, Utc};
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&crate::timefmt::format_iso(*v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DateTime<Utc>, D::Error> {
        let raw = String::deserialize(d)?;
        crate::timefmt::parse_iso(&raw).ok_or_else(|| serde::de::Error::custom(format!("bad timestamp {raw:?}")))
    }
}

impl SimConfig {
    /// Intervals per day.
    pub fn period_day(&self) -> usize {
        (86_400 / self.interval_secs).max(1) as usize
    }

    pub fn interval_start(&self, interval: usize) -> DateTime<Utc> {
        self.start + Duration::seconds(self.interval_secs * interval as i64)
    }

    pub fn device(&self, id: &str) -> Option<&DeviceSpec> {
        self.fleet.iter().find(|d| d.id == id)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.duration == 0 {
            return Err(SimError::InvalidConfig("duration must be at least one interval".into()));
        }
        if self.interval_secs <= 0 {
            return Err(SimError::InvalidConfig("interval must be positive".into()));
        }
        let mut ids = HashSet::new();
        for d in &self.fleet {
            if !ids.insert(d.id.as_str()) || d.id.is_empty() || d.id.contains('-') {
                return Err(SimError::InvalidConfig(format!("device id {:?} must be unique, nonempty and free of '-'", d.id)));
            }
            if !(d.base_rate > 0.0) || !(d.noise_std >= 0.0) || !d.diurnal_amplitude.is_finite() {
                return Err(SimError::InvalidConfig(format!("device {:?} needs base_rate > 0 and noise_std >= 0", d.id)));
            }
        }
        for (i, a) in self.attacks.iter().enumerate() {
            if a.start >= a.end || a.end > self.duration {
                return Err(SimError::InvalidScript(format!("window [{}, {}) outside 0..{}", a.start, a.end, self.duration)));
            }
            if self.device(&a.target_id).is_none() {
                return Err(SimError::InvalidScript(format!("unknown target {:?}", a.target_id)));
            }
            if a.kind == AttackKind::UdpFlood && !(a.magnitude > 1.0) {
                return Err(SimError::InvalidScript(format!("flood magnitude must exceed 1, got {}", a.magnitude)));
            }
            if a.kind == AttackKind::Sybil && a.fake_id_count == 0 {
                return Err(SimError::InvalidScript("Sybil attack needs at least one fake identity".into()));
            }
            for b in &self.attacks[..i] {
                if b.target_id == a.target_id && a.start < b.end && b.start < a.end {
                    return Err(SimError::InvalidScript(format!("overlapping scripts on {:?}", a.target_id)));
                }
            }
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self, SimError> {
        serde_json::from_str(s).map_err(|e| SimError::InvalidConfig(e.to_string()))
    }
}

pub fn default_fleet() -> Vec<DeviceSpec> {
    vec![
        DeviceSpec {
            id: "streetlight1".into(),
            kind: DeviceKind::Streetlight,
            address: "10.0.1.10".into(),
            base_rate: 24.0,
            diurnal_amplitude: 10.0,
            noise_std: 2.0,
        },
        DeviceSpec {
            id: "camera1".into(),
            kind: DeviceKind::Camera,
            address: "10.0.2.20".into(),
            base_rate: 40.0,
            diurnal_amplitude: 12.0,
            noise_std: 3.0,
        },
        DeviceSpec {
            id: "water1".into(),
            kind: DeviceKind::WaterSensor,
            address: "10.0.3.30".into(),
            base_rate: 16.0,
            diurnal_amplitude: 5.0,
            noise_std: 1.5,
        },
    ]
}

/// Four days of 15-minute intervals over the default fleet, no attacks.
pub fn default_config(seed: u64) -> SimConfig {
    SimConfig {
        seed,
        start: Utc.with_ymd_and_hms(2018, 2, 12, 0, 0, 0).unwrap(),
        duration: 384,
        interval_secs: 900,
        fleet: default_fleet(),
        attacks: Vec::new(),
    }
}

/// The camera floods for the whole third day.
pub fn default_flood(seed: u64) -> SimConfig {
    SimConfig { attacks: vec![AttackScript::new(AttackKind::UdpFlood, "camera1", 240, 336)], ..default_config(seed) }
}

/// The water sensor goes silent for six hours after a buffer overflow.
pub fn default_silence(seed: u64) -> SimConfig {
    SimConfig {
        attacks: vec![AttackScript::new(AttackKind::SilenceAfterOverflow, "water1", 300, 324)],
        ..default_config(seed)
    }
}

/// A streetlight presents fresh identities for three hours.
pub fn default_sybil(seed: u64) -> SimConfig {
    SimConfig { attacks: vec![AttackScript::new(AttackKind::Sybil, "streetlight1", 300, 312)], ..default_config(seed) }
}

/// Symbol schema matching the event-log fields the simulator writes.
pub fn event_schema() -> SymbolSchema {
    let one_hot = |name: &str, voc: &[&str]| FieldSpec {
        name: name.into(),
        encoder: FieldEncoder::OneHot { vocabulary: voc.iter().map(|s| s.to_string()).collect() },
    };
    let thermo = |name: &str, edges: &[f64]| FieldSpec { name: name.into(), encoder: FieldEncoder::Thermometer { edges: edges.to_vec() } };
    SymbolSchema::new(vec![
        one_hot("proto", &["tcp", "udp", "icmp"]),
        one_hot("port_class", &["well_known", "registered", "dynamic"]),
        thermo("bytes", &[64.0, 256.0, 1024.0, 4096.0, 16384.0, 65536.0]),
        thermo("packets", &[2.0, 4.0, 8.0, 32.0, 128.0]),
        one_hot("status", &["ok", "buffer_overflow", "join"]),
    ])
    .expect("static schema is valid")
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Label {
    pub interval_index: usize,
    pub device_id: String,
    pub attack_kind: AttackKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledTrace {
    pub config: SimConfig,
    /// Time-ordered.
    pub flows: Vec<FlowRecord>,
    /// Time-ordered.
    pub events: Vec<EventLogRecord>,
    /// Ground-truth class of each event.
    pub event_classes: Vec<PacketClass>,
    /// Sorted by interval, then device.
    pub labels: Vec<Label>,
}

struct Profile {
    proto: u8,
    dport: (u32, u32),
    bytes: (f64, f64),
    packets: (u32, u32),
    init_fwd: i64,
    init_bwd: i64,
    seg_min: i64,
}

fn profile(kind: DeviceKind) -> Profile {
    match kind {
        DeviceKind::Streetlight => Profile {
            proto: 17,
            dport: (5683, 5683),
            bytes: (80.0, 200.0),
            packets: (2, 4),
            init_fwd: WIN_BYTES_ABSENT,
            init_bwd: WIN_BYTES_ABSENT,
            seg_min: 8,
        },
        DeviceKind::Camera => Profile {
            proto: 6,
            dport: (554, 554),
            bytes: (20_000.0, 200_000.0),
            packets: (20, 200),
            init_fwd: 65535,
            init_bwd: 29200,
            seg_min: 20,
        },
        DeviceKind::WaterSensor => Profile {
            proto: 6,
            dport: (1883, 1883),
            bytes: (300.0, 900.0),
            packets: (4, 10),
            init_fwd: 29200,
            init_bwd: 28960,
            seg_min: 20,
        },
    }
}

const FLOOD_PROFILE: Profile = Profile {
    proto: 17,
    dport: (49152, 65535),
    bytes: (28.0, 60.0),
    packets: (1, 1),
    init_fwd: WIN_BYTES_ABSENT,
    init_bwd: WIN_BYTES_ABSENT,
    seg_min: 8,
};

fn port_class(port: u32) -> &'static str {
    match port {
        0..=1023 => "well_known",
        1024..=49151 => "registered",
        _ => "dynamic",
    }
}

fn proto_name(proto: u8) -> &'static str {
    match proto {
        6 => "tcp",
        17 => "udp",
        _ => "icmp",
    }
}

fn event(ts: DateTime<Utc>, src: &str, proto: &str, port: &str, bytes: f64, packets: f64, status: &str) -> EventLogRecord {
    let mut fields = BTreeMap::new();
    fields.insert("proto".into(), FieldValue::Text(proto.into()));
    fields.insert("port_class".into(), FieldValue::Text(port.into()));
    fields.insert("bytes".into(), FieldValue::Number(bytes));
    fields.insert("packets".into(), FieldValue::Number(packets));
    fields.insert("status".into(), FieldValue::Text(status.into()));
    EventLogRecord { timestamp: ts, source_id: src.into(), fields }
}

/// Fresh identity `k` presented by `device`.
pub fn fake_identity(device: &str, k: usize) -> String {
    format!("{device}/fake{k}")
}

fn emit_flow(
    rng: &mut ChaCha8Rng,
    p: &Profile,
    dev: &DeviceSpec,
    ts: DateTime<Utc>,
    class: PacketClass,
    out: &mut Vec<(DateTime<Utc>, u64, FlowRecord, EventLogRecord, PacketClass)>,
    seq: &mut u64,
) {
    let sport: u32 = rng.random_range(1024..=65535);
    let dport: u32 = rng.random_range(p.dport.0..=p.dport.1);
    let bytes = rng.random_range(p.bytes.0..=p.bytes.1).round();
    let packets = rng.random_range(p.packets.0..=p.packets.1) as f64;
    let pkt_len = (bytes / packets * 100.0).round() / 100.0;
    let flow = FlowRecord {
        flow_id: format!("{}-{GATEWAY_ADDRESS}-{sport}-{dport}-{}", dev.address, p.proto),
        timestamp: ts,
        fwd_pkt_len_mean: Some(pkt_len),
        fwd_seg_size_avg: Some(pkt_len),
        init_fwd_win_byts: p.init_fwd,
        init_bwd_win_byts: p.init_bwd,
        fwd_seg_size_min: p.seg_min,
        value: Some(pkt_len),
    };
    let ev = event(ts, &dev.id, proto_name(p.proto), port_class(dport), bytes, packets, "ok");
    out.push((ts, *seq, flow, ev, class));
    *seq += 1;
}

/// Independent stream per (interval, device), so an attack on one cell never
/// shifts the randomness of another.
fn cell_rng(seed: u64, interval: usize, device: usize) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(interval as u64).to_le_bytes());
    key[16..24].copy_from_slice(&(device as u64).to_le_bytes());
    key[24] = 1;
    ChaCha8Rng::from_seed(key)
}

/// Generates the trace. The same config always yields identical output.
pub fn generate_trace(cfg: &SimConfig) -> Result<LabeledTrace, SimError> {
    cfg.validate()?;
    let mut rate_rngs: Vec<ChaCha8Rng> = (0..cfg.fleet.len())
        .map(|i| {
            let mut r = ChaCha8Rng::seed_from_u64(cfg.seed);
            r.set_stream(i as u64);
            r
        })
        .collect();
    let period = cfg.period_day() as f64;
    let mut rows = Vec::new();
    let mut extra_events: Vec<(DateTime<Utc>, u64, EventLogRecord, PacketClass)> = Vec::new();
    let mut seq = 0u64;
    let mut fake_counter: BTreeMap<&str, usize> = BTreeMap::new();
    let mut labels = BTreeSet::new();

    for a in &cfg.attacks {
        for t in a.start..a.end {
            labels.insert(Label { interval_index: t, device_id: a.target_id.clone(), attack_kind: a.kind });
        }
    }

    for t in 0..cfg.duration {
        let t_start = cfg.interval_start(t);
        for (di, dev) in cfg.fleet.iter().enumerate() {
            let mut rng = cell_rng(cfg.seed, t, di);
            // Streetlights run at night: half a day out of phase.
            let phase = if dev.kind == DeviceKind::Streetlight { PI } else { 0.0 };
            let noise: f64 = StandardNormal.sample(&mut rate_rngs[di]);
            let rate = (dev.base_rate + dev.diurnal_amplitude * (2.0 * PI * t as f64 / period + phase).sin() + dev.noise_std * noise).max(0.0);
            let script = cfg.attacks.iter().find(|a| a.target_id == dev.id && a.covers(t));
            let normal = if script.is_some_and(|a| a.kind == AttackKind::SilenceAfterOverflow) { 0 } else { rate.round() as usize };
            let p = profile(dev.kind);
            for _ in 0..normal {
                let ts = t_start + Duration::seconds(rng.random_range(0..cfg.interval_secs));
                emit_flow(&mut rng, &p, dev, ts, PacketClass::Known, &mut rows, &mut seq);
            }
            match script.map(|a| a.kind) {
                Some(AttackKind::UdpFlood) => {
                    let a = script.expect("matched");
                    let flood = ((rate * a.magnitude).round() as usize).saturating_sub(normal);
                    for _ in 0..flood {
                        let ts = t_start + Duration::seconds(rng.random_range(0..cfg.interval_secs));
                        emit_flow(&mut rng, &FLOOD_PROFILE, dev, ts, PacketClass::Attack, &mut rows, &mut seq);
                    }
                }
                Some(AttackKind::SilenceAfterOverflow) => {
                    let a = script.expect("matched");
                    if t == a.start {
                        let ev = event(t_start, &dev.id, "tcp", "registered", 0.0, 0.0, "buffer_overflow");
                        extra_events.push((t_start, seq, ev, PacketClass::Attack));
                        seq += 1;
                    }
                }
                Some(AttackKind::Sybil) => {
                    let a = script.expect("matched");
                    let counter = fake_counter.entry(dev.id.as_str()).or_insert(0);
                    for _ in 0..a.fake_id_count {
                        let offset = rng.random_range(0..cfg.interval_secs);
                        let ts = t_start + Duration::seconds(offset);
                        let ev = event(ts, &fake_identity(&dev.id, *counter), "udp", "registered", 100.0, 1.0, "join");
                        *counter += 1;
                        extra_events.push((ts, seq, ev, PacketClass::Attack));
                        seq += 1;
                    }
                }
                None => {}
            }
        }
    }

    rows.sort_by_key(|r| (r.0, r.1));
    let mut events: Vec<(DateTime<Utc>, u64, EventLogRecord, PacketClass)> = Vec::with_capacity(rows.len() + extra_events.len());
    let mut flows = Vec::with_capacity(rows.len());
    for (ts, s, flow, ev, class) in rows {
        flows.push(flow);
        events.push((ts, s, ev, class));
    }
    events.extend(extra_events);
    events.sort_by_key(|e| (e.0, e.1));
    let (events, event_classes) = events.into_iter().map(|(_, _, e, c)| (e, c)).unzip();
    Ok(LabeledTrace { config: cfg.clone(), flows, events, event_classes, labels: labels.into_iter().collect() })
}

impl LabeledTrace {
    pub fn write_flows<W: Write>(&self, w: W) -> Result<(), SimError> {
        write_flow_csv(&self.flows, COL_FWD_PKT_LEN_MEAN, w)?;
        Ok(())
    }

    pub fn write_events<W: Write>(&self, mut w: W) -> Result<(), SimError> {
        for e in &self.events {
            writeln!(w, "{}", e.to_json_line())?;
        }
        Ok(())
    }

    /// Events with their ground-truth class in a `"class"` key, for training.
    pub fn write_training<W: Write>(&self, mut w: W) -> Result<(), SimError> {
        for (e, c) in self.events.iter().zip(&self.event_classes) {
            let line = e.to_json_line();
            writeln!(w, "{},\"class\":\"{c}\"}}", &line[..line.len() - 1])?;
        }
        Ok(())
    }

    pub fn write_labels<W: Write>(&self, w: W) -> Result<(), SimError> {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["interval_index", "device_id", "attack_kind"])?;
        for l in &self.labels {
            csv.write_record([l.interval_index.to_string().as_str(), &l.device_id, l.attack_kind.as_str()])?;
        }
        csv.flush()?;
        Ok(())
    }

    /// Writes flows, events, labels and training events into `dir`.
    pub fn write_to_dir(&self, dir: &Path) -> Result<(), SimError> {
        fs::create_dir_all(dir)?;
        let open = |name: &str| File::create(dir.join(name)).map(BufWriter::new);
        let mut f = open(FLOWS_FILE)?;
        self.write_flows(&mut f)?;
        f.flush()?;
        let mut f = open(EVENTS_FILE)?;
        self.write_events(&mut f)?;
        f.flush()?;
        let mut f = open(LABELS_FILE)?;
        self.write_labels(&mut f)?;
        f.flush()?;
        let mut f = open(TRAINING_FILE)?;
        self.write_training(&mut f)?;
        f.flush()?;
        Ok(())
    }

    /// Distinct `(vector, class)` pairs from the labeled events.
    pub fn training_samples(&self, schema: &SymbolSchema) -> Result<Vec<(BitVec, PacketClass)>, crate::cc4::Cc4Error> {
        training_samples(self.events.iter().zip(self.event_classes.iter().copied()), schema)
    }
}

/// Symbolizes labeled records, keeping the first occurrence of each
/// `(vector, class)` pair.
pub fn training_samples<'a>(
    labeled: impl IntoIterator<Item = (&'a EventLogRecord, PacketClass)>,
    schema: &SymbolSchema,
) -> Result<Vec<(BitVec, PacketClass)>, crate::cc4::Cc4Error> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (e, c) in labeled {
        let bits = schema.symbolize(e)?.bits;
        if seen.insert((bits.clone(), c)) {
            out.push((bits, c));
        }
    }
    Ok(out)
}

impl From<csv::Error> for SimError {
    fn from(e: csv::Error) -> Self {
        SimError::Ingest(e.into())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct KindCounts {
    pub alerts: usize,
    pub true_positives: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionScore {
    /// `None` when there are no alerts.
    pub precision: Option<f64>,
    pub recall: f64,
    pub true_positive_alerts: usize,
    pub false_positive_alerts: usize,
    pub detected_labels: usize,
    pub total_labels: usize,
    pub per_kind: BTreeMap<AlertKind, KindCounts>,
}

fn source_matches(source: &str, dev: &DeviceSpec) -> bool {
    source == GATEWAY_SOURCE
        || source == dev.id
        || source == dev.address
        || source.strip_prefix(dev.id.as_str()).is_some_and(|rest| rest.starts_with('/'))
}

/// An alert is a true positive when some interval it spans carries a label
/// for a device its source names and an attack its kind can explain.
/// Recall is the share of labels covered by at least one such alert.
pub fn score_detections(alerts: &[AnomalyAlert], trace: &LabeledTrace) -> Result<DetectionScore, SimError> {
    let cfg = &trace.config;
    let mut by_interval: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, l) in trace.labels.iter().enumerate() {
        by_interval.entry(l.interval_index).or_default().push(i);
    }
    let mut detected = vec![false; trace.labels.len()];
    let mut per_kind: BTreeMap<AlertKind, KindCounts> = BTreeMap::new();
    let mut tp = 0;
    for a in alerts {
        let offset = (a.timestamp - cfg.start).num_seconds();
        if offset < 0 || offset % cfg.interval_secs != 0 || offset / cfg.interval_secs >= cfg.duration as i64 {
            return Err(SimError::TimeBaseMismatch(crate::timefmt::format_iso(a.timestamp)));
        }
        let first = (offset / cfg.interval_secs) as usize;
        let mut hit = false;
        for t in first..(first + a.span.max(1)).min(cfg.duration) {
            for &li in by_interval.get(&t).into_iter().flatten() {
                let l = &trace.labels[li];
                let dev = cfg.device(&l.device_id).expect("labels name fleet devices");
                if l.attack_kind.explained_by(a.kind) && source_matches(&a.source, dev) {
                    detected[li] = true;
                    hit = true;
                }
            }
        }
        let k = per_kind.entry(a.kind).or_default();
        k.alerts += 1;
        if hit {
            k.true_positives += 1;
            tp += 1;
        }
    }
    let found = detected.iter().filter(|&&d| d).count();
    Ok(DetectionScore {
        precision: (!alerts.is_empty()).then(|| tp as f64 / alerts.len() as f64),
        recall: if trace.labels.is_empty() { 0.0 } else { found as f64 / trace.labels.len() as f64 },
        true_positive_alerts: tp,
        false_positive_alerts: alerts.len() - tp,
        detected_labels: found,
        total_labels: trace.labels.len(),
        per_kind,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{parse_flow_reader, to_series_on_grid, Aggregator};
    use crate::surge::Severity;

    fn small(attacks: Vec<AttackScript>) -> SimConfig {
        SimConfig { duration: 96, attacks, ..default_config(7) }
    }

    fn count_series(trace: &LabeledTrace, address: &str) -> Vec<Option<f64>> {
        let recs: Vec<FlowRecord> = trace.flows.iter().filter(|f| f.source() == address).cloned().collect();
        to_series_on_grid(&recs, trace.config.start, trace.config.interval_secs, trace.config.duration, Aggregator::Count)
            .unwrap()
            .options()
    }

    #[test]
    fn deterministic_bytes() {
        let render = |seed| {
            let t = generate_trace(&default_flood(seed)).unwrap();
            let (mut f, mut e, mut l) = (Vec::new(), Vec::new(), Vec::new());
            t.write_flows(&mut f).unwrap();
            t.write_events(&mut e).unwrap();
            t.write_labels(&mut l).unwrap();
            (f, e, l)
        };
        assert_eq!(render(42), render(42));
        assert_ne!(render(42).0, render(43).0);
    }

    #[test]
    fn flood_ratio() {
        let mut cfg = default_flood(42);
        for d in &mut cfg.fleet {
            d.noise_std = 0.5;
        }
        let t = generate_trace(&cfg).unwrap();
        let s = count_series(&t, "10.0.2.20");
        let (mut inside, mut outside) = (vec![], vec![]);
        for (i, v) in s.iter().enumerate() {
            let v = v.unwrap_or(0.0);
            if (240..336).contains(&i) { inside.push(v) } else { outside.push(v) }
        }
        let mean = |x: &[f64]| x.iter().sum::<f64>() / x.len() as f64;
        let ratio = mean(&inside) / mean(&outside);
        assert!((8.0..=12.0).contains(&ratio), "{ratio}");
    }

    #[test]
    fn silence_window_is_missing_and_labeled() {
        let t = generate_trace(&small(vec![AttackScript::new(AttackKind::SilenceAfterOverflow, "water1", 40, 50)])).unwrap();
        let s = count_series(&t, "10.0.3.30");
        for (i, v) in s.iter().enumerate() {
            assert_eq!(v.is_none(), (40..50).contains(&i), "interval {i}");
        }
        let labeled: Vec<usize> = t.labels.iter().map(|l| l.interval_index).collect();
        assert_eq!(labeled, (40..50).collect::<Vec<_>>());
        let overflow = t.events.iter().filter(|e| e.fields["status"] == FieldValue::Text("buffer_overflow".into())).count();
        assert_eq!(overflow, 1);
    }

    #[test]
    fn label_soundness() {
        let attacks = vec![
            AttackScript::new(AttackKind::UdpFlood, "camera1", 10, 20),
            AttackScript::new(AttackKind::Sybil, "streetlight1", 30, 33),
            AttackScript::new(AttackKind::SilenceAfterOverflow, "water1", 60, 62),
        ];
        let with = generate_trace(&small(attacks.clone())).unwrap();
        let clean = generate_trace(&small(vec![])).unwrap();
        assert!(clean.labels.is_empty());
        // Perturbed (interval, device) pairs: attack-class events or a changed flow count.
        let mut perturbed = BTreeSet::new();
        for (e, c) in with.events.iter().zip(&with.event_classes) {
            if *c == PacketClass::Attack {
                let t = ((e.timestamp - with.config.start).num_seconds() / 900) as usize;
                let dev = e.source_id.split('/').next().unwrap().to_string();
                perturbed.insert((t, dev));
            }
        }
        for d in &with.config.fleet {
            let (a, b) = (count_series(&with, &d.address), count_series(&clean, &d.address));
            for t in 0..96 {
                if a[t] != b[t] {
                    perturbed.insert((t, d.id.clone()));
                }
            }
        }
        let labeled: BTreeSet<(usize, String)> = with.labels.iter().map(|l| (l.interval_index, l.device_id.clone())).collect();
        assert_eq!(perturbed, labeled);
    }

    #[test]
    fn flows_round_trip_through_ingest() {
        let t = generate_trace(&small(vec![AttackScript::new(AttackKind::UdpFlood, "camera1", 10, 12)])).unwrap();
        let mut buf = Vec::new();
        t.write_flows(&mut buf).unwrap();
        let parsed = parse_flow_reader(buf.as_slice(), COL_FWD_PKT_LEN_MEAN).unwrap();
        assert_eq!(parsed.0, t.flows);
        assert_eq!(parsed.1.rows_read, t.flows.len());
    }

    #[test]
    fn events_and_training_lines_parse() {
        let t = generate_trace(&small(vec![AttackScript::new(AttackKind::Sybil, "water1", 5, 7)])).unwrap();
        let mut buf = Vec::new();
        t.write_events(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let schema = event_schema();
        for (line, e) in text.lines().zip(&t.events) {
            let r = EventLogRecord::from_json_line(line).unwrap();
            assert_eq!(&r, e);
            assert!(schema.symbolize(&r).is_ok());
        }
        let mut buf = Vec::new();
        t.write_training(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let first = text.lines().next().unwrap();
        assert!(first.ends_with(r#","class":"Known"}"#), "{first}");
        for ((line, e), c) in text.lines().zip(&t.events).zip(&t.event_classes) {
            assert_eq!(EventLogRecord::from_labeled_json_line(line).unwrap(), (e.clone(), *c));
        }
        assert!(EventLogRecord::from_labeled_json_line(&t.events[0].to_json_line()).is_err());
    }

    #[test]
    fn invalid_scripts() {
        let overlap = small(vec![
            AttackScript::new(AttackKind::UdpFlood, "camera1", 10, 20),
            AttackScript::new(AttackKind::SilenceAfterOverflow, "camera1", 19, 25),
        ]);
        assert!(matches!(generate_trace(&overlap), Err(SimError::InvalidScript(_))));
        let out_of_range = small(vec![AttackScript::new(AttackKind::UdpFlood, "camera1", 90, 97)]);
        assert!(matches!(generate_trace(&out_of_range), Err(SimError::InvalidScript(_))));
        let empty = small(vec![AttackScript::new(AttackKind::UdpFlood, "camera1", 5, 5)]);
        assert!(matches!(generate_trace(&empty), Err(SimError::InvalidScript(_))));
    }

    fn alert(trace: &LabeledTrace, t: usize, kind: AlertKind, source: &str) -> AnomalyAlert {
        AnomalyAlert {
            timestamp: trace.config.interval_start(t),
            kind,
            observed: 1.0,
            expected: 0.0,
            band: None,
            severity: Severity::Warning,
            source: source.into(),
            span: 1,
            class: None,
            ambiguous: None,
        }
    }

    #[test]
    fn scoring_rules() {
        let t = generate_trace(&small(vec![AttackScript::new(AttackKind::UdpFlood, "camera1", 10, 12)])).unwrap();
        let exact = [alert(&t, 10, AlertKind::Surge, "10.0.2.20"), alert(&t, 11, AlertKind::Surge, "camera1")];
        let s = score_detections(&exact, &t).unwrap();
        assert_eq!((s.precision, s.recall), (Some(1.0), 1.0));

        let none = score_detections(&[], &t).unwrap();
        assert_eq!((none.precision, none.recall), (None, 0.0));

        let wrong = [alert(&t, 10, AlertKind::Dropout, "camera1"), alert(&t, 30, AlertKind::Surge, "camera1"), alert(&t, 10, AlertKind::Surge, "water1")];
        let s = score_detections(&wrong, &t).unwrap();
        assert_eq!((s.precision, s.recall), (Some(0.0), 0.0));

        let mut wide = alert(&t, 9, AlertKind::Surge, "camera1");
        wide.span = 4;
        let s = score_detections(&[wide], &t).unwrap();
        assert_eq!((s.precision, s.recall), (Some(1.0), 1.0));

        let mut off_grid = alert(&t, 10, AlertKind::Surge, "camera1");
        off_grid.timestamp += Duration::seconds(30);
        assert!(matches!(score_detections(&[off_grid], &t), Err(SimError::TimeBaseMismatch(_))));
    }
}
