//! Instant formatting shared by every file format in the crate.

use chrono::{DateTime, NaiveDateTime, Utc};

/// Format used by flow-log CSV files: day-first, 12-hour clock.
pub const FLOW_TIMESTAMP_FORMAT: &str = "%d/%m/%Y %I:%M:%S %p";

const FLOW_TIMESTAMP_LEN: usize = "22/02/2018 12:27:57 AM".len();

/// ISO-8601 with a `Z` suffix and second resolution.
pub fn format_iso(ts: DateTime<Utc>) -> String {
    ts.format("%Y-%m-%dT%H:%M:%SZ").to_string()
}

/// Parses an RFC 3339 instant and normalizes it to UTC.
pub fn parse_iso(s: &str) -> Option<DateTime<Utc>> {
    DateTime::parse_from_rfc3339(s.trim())
        .ok()
        .map(|t| t.with_timezone(&Utc))
}

pub fn format_flow_timestamp(ts: DateTime<Utc>) -> String {
    ts.format(FLOW_TIMESTAMP_FORMAT).to_string()
}

/// Parses `dd/MM/yyyy hh:mm:ss AM|PM` and nothing else.
///
/// chrono accepts unpadded numeric fields, so the fixed width is checked
/// first; `3/7/2017 5:25:58 PM` is rejected rather than guessed.
pub fn parse_flow_timestamp(s: &str) -> Option<DateTime<Utc>> {
    let s = s.trim();
    if s.len() != FLOW_TIMESTAMP_LEN || !s.is_ascii() {
        return None;
    }
    let b = s.as_bytes();
    let shape_ok = b[2] == b'/'
        && b[5] == b'/'
        && b[10] == b' '
        && b[13] == b':'
        && b[16] == b':'
        && b[19] == b' '
        && matches!(&s[20..], "AM" | "PM");
    if !shape_ok {
        return None;
    }
    NaiveDateTime::parse_from_str(s, FLOW_TIMESTAMP_FORMAT)
        .ok()
        .map(|n| n.and_utc())
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    #[test]
    fn day_first_parsing() {
        let t = parse_flow_timestamp("03/07/2017 05:25:58 PM").unwrap();
        assert_eq!(t, Utc.with_ymd_and_hms(2017, 7, 3, 17, 25, 58).unwrap());
        let t = parse_flow_timestamp("22/02/2018 12:27:57 AM").unwrap();
        assert_eq!(t, Utc.with_ymd_and_hms(2018, 2, 22, 0, 27, 57).unwrap());
    }

    #[test]
    fn rejects_other_shapes() {
        for bad in [
            "2018-02-22 00:27:57",
            "22/02/2018 00:27:57",
            "3/7/2017 5:25:58 PM",
            "22/02/2018 12:27:57 am",
            "02/22/2018 12:27:57 AM",
            "",
        ] {
            assert!(parse_flow_timestamp(bad).is_none(), "{bad}");
        }
    }

    #[test]
    fn flow_format_round_trips() {
        let t = Utc.with_ymd_and_hms(2018, 2, 16, 23, 18, 14).unwrap();
        let s = format_flow_timestamp(t);
        assert_eq!(s, "16/02/2018 11:18:14 PM");
        assert_eq!(parse_flow_timestamp(&s), Some(t));
    }

    #[test]
    fn iso_round_trip() {
        let t = Utc.with_ymd_and_hms(2018, 2, 22, 0, 27, 57).unwrap();
        assert_eq!(format_iso(t), "2018-02-22T00:27:57Z");
        assert_eq!(parse_iso("2018-02-22T00:27:57Z"), Some(t));
        assert_eq!(parse_iso("2018-02-22T01:27:57+01:00"), Some(t));
    }
}
