use std::collections::BTreeMap;
use std::fmt::Write as _;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Cc4Error, PacketClass};
use crate::ingest::FlowRecord;
use crate::timefmt;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FieldValue {
    Number(f64),
    Text(String),
}

impl FieldValue {
    /// Category label: text as-is, integral numbers without a fraction.
    pub fn as_category(&self) -> String {
        match self {
            FieldValue::Text(s) => s.clone(),
            FieldValue::Number(v) if v.fract() == 0.0 && v.abs() < 1e15 => format!("{}", *v as i64),
            FieldValue::Number(v) => v.to_string(),
        }
    }

    pub fn as_number(&self) -> Option<f64> {
        match self {
            FieldValue::Number(v) => Some(*v),
            FieldValue::Text(s) => s.trim().parse().ok().filter(|v: &f64| v.is_finite()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventLogRecord {
    pub timestamp: DateTime<Utc>,
    pub source_id: String,
    pub fields: BTreeMap<String, FieldValue>,
}

impl EventLogRecord {
    /// Parses `{"ts": ..., "src": ..., field: string|number, ...}`. The
    /// timestamp may be ISO-8601 or the flow-log format.
    pub fn from_json_line(line: &str) -> Result<Self, Cc4Error> {
        let value: Value = serde_json::from_str(line).map_err(|e| Cc4Error::Malformed(e.to_string()))?;
        let Value::Object(map) = value else {
            return Err(Cc4Error::Malformed("record is not an object".into()));
        };
        let mut timestamp = None;
        let mut source_id = None;
        let mut fields = BTreeMap::new();
        for (k, v) in map {
            match (k.as_str(), v) {
                ("ts", Value::String(s)) => {
                    timestamp = timefmt::parse_iso(&s).or_else(|| timefmt::parse_flow_timestamp(&s));
                    if timestamp.is_none() {
                        return Err(Cc4Error::Malformed(format!("bad timestamp {s:?}")));
                    }
                }
                ("src", Value::String(s)) if !s.is_empty() => source_id = Some(s),
                ("ts" | "src", _) => return Err(Cc4Error::Malformed(format!("bad {k:?}"))),
                (_, Value::String(s)) => {
                    fields.insert(k, FieldValue::Text(s));
                }
                (_, Value::Number(n)) => {
                    let v = n.as_f64().filter(|v| v.is_finite()).ok_or_else(|| Cc4Error::Malformed(format!("bad number in {k:?}")))?;
                    fields.insert(k, FieldValue::Number(v));
                }
                (_, other) => return Err(Cc4Error::Malformed(format!("field {k:?} has unsupported value {other}"))),
            }
        }
        Ok(EventLogRecord {
            timestamp: timestamp.ok_or_else(|| Cc4Error::Malformed("missing \"ts\"".into()))?,
            source_id: source_id.ok_or_else(|| Cc4Error::Malformed("missing \"src\"".into()))?,
            fields,
        })
    }

    /// `ts` and `src` first, then fields in name order.
    pub fn to_json_line(&self) -> String {
        let mut out = String::from("{\"ts\":");
        out.push_str(&json(&timefmt::format_iso(self.timestamp)));
        out.push_str(",\"src\":");
        out.push_str(&json(&self.source_id));
        for (k, v) in &self.fields {
            let _ = write!(out, ",{}:{}", json(k), json(v));
        }
        out.push('}');
        out
    }

    /// Parses a training line: a record with an extra `"class"` key.
    pub fn from_labeled_json_line(line: &str) -> Result<(Self, PacketClass), Cc4Error> {
        let mut value: Value = serde_json::from_str(line).map_err(|e| Cc4Error::Malformed(e.to_string()))?;
        let class = match value.as_object_mut().and_then(|m| m.remove("class")) {
            Some(Value::String(s)) => s.parse::<PacketClass>().map_err(Cc4Error::Malformed)?,
            Some(other) => return Err(Cc4Error::Malformed(format!("bad \"class\" {other}"))),
            None => return Err(Cc4Error::Malformed("missing \"class\"".into())),
        };
        Ok((Self::from_json_line(&value.to_string())?, class))
    }

    /// Key used for duplicate elimination.
    pub fn dedup_key(&self) -> String {
        self.to_json_line()
    }
}

fn json<T: Serialize + ?Sized>(v: &T) -> String {
    serde_json::to_string(v).expect("plain values always serialize")
}

fn port_class(port: u32) -> &'static str {
    match port {
        0..=1023 => "well_known",
        1024..=49151 => "registered",
        _ => "dynamic",
    }
}

/// Adapter from flow-log rows to event records: source is the flow's
/// source endpoint, fields are protocol, destination port class and the
/// forward packet-length statistics.
pub fn events_from_flows(records: &[FlowRecord]) -> Vec<EventLogRecord> {
    records
        .iter()
        .map(|r| {
            let parts: Vec<&str> = r.flow_id.split('-').collect();
            let proto = match parts.get(4).copied() {
                Some("6") => "tcp",
                Some("17") => "udp",
                Some("1") => "icmp",
                _ => "other",
            };
            let dport = parts.get(3).and_then(|p| p.parse::<u32>().ok()).unwrap_or(0);
            let mut fields = BTreeMap::new();
            fields.insert("proto".to_string(), FieldValue::Text(proto.into()));
            fields.insert("port_class".to_string(), FieldValue::Text(port_class(dport).into()));
            fields.insert("pkt_len".to_string(), FieldValue::Number(r.fwd_pkt_len_mean.unwrap_or(0.0)));
            fields.insert("seg_size_min".to_string(), FieldValue::Number(r.fwd_seg_size_min as f64));
            EventLogRecord { timestamp: r.timestamp, source_id: r.source().to_string(), fields }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip() {
        let line = r#"{"ts":"2018-02-16T10:15:00Z","src":"cam-1","bytes":1500.0,"proto":"udp"}"#;
        let r = EventLogRecord::from_json_line(line).unwrap();
        assert_eq!(r.fields["bytes"], FieldValue::Number(1500.0));
        assert_eq!(r.to_json_line(), line);
        let flow_ts = r#"{"ts":"16/02/2018 10:15:00 AM","src":"cam-1"}"#;
        assert_eq!(EventLogRecord::from_json_line(flow_ts).unwrap().timestamp, r.timestamp);
    }

    #[test]
    fn malformed_records() {
        for bad in [
            "not json",
            "[1,2]",
            r#"{"src":"a"}"#,
            r#"{"ts":"2018-02-16T10:15:00Z"}"#,
            r#"{"ts":"yesterday","src":"a"}"#,
            r#"{"ts":"2018-02-16T10:15:00Z","src":"a","x":true}"#,
            r#"{"ts":"2018-02-16T10:15:00Z","src":""}"#,
        ] {
            assert!(matches!(EventLogRecord::from_json_line(bad), Err(Cc4Error::Malformed(_))), "{bad}");
        }
    }

    #[test]
    fn categories_from_numbers() {
        assert_eq!(FieldValue::Number(443.0).as_category(), "443");
        assert_eq!(FieldValue::Number(0.5).as_category(), "0.5");
        assert_eq!(FieldValue::Text("7".into()).as_number(), Some(7.0));
    }
}
