//! Event-log intrusion classification with a corner-classification (CC4)
//! network: records are symbolized into bit vectors, the network is built
//! one-shot from labeled vectors, and a streaming pipeline classifies live
//! records alongside the rate-based detectors.

mod bits;
mod network;
mod pipeline;
mod record;
mod symbol;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bits::BitVec;
pub use network::{Cc4Network, Classification};
pub use pipeline::{run_pipeline, PipelineConfig, PipelineError, PipelineSummary};
pub use record::{events_from_flows, EventLogRecord, FieldValue};
pub use symbol::{FieldEncoder, FieldSpec, SymbolSchema, Symbolized};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PacketClass {
    Known,
    Unknown,
    Attack,
}

impl PacketClass {
    pub const ALL: [PacketClass; 3] = [PacketClass::Known, PacketClass::Unknown, PacketClass::Attack];

    /// Order consulted when class scores tie.
    pub const TIE_ORDER: [PacketClass; 3] = [PacketClass::Known, PacketClass::Attack, PacketClass::Unknown];

    fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PacketClass::Known => "Known",
            PacketClass::Unknown => "Unknown",
            PacketClass::Attack => "Attack",
        }
    }
}

impl fmt::Display for PacketClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PacketClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "Known" | "known" => Ok(PacketClass::Known),
            "Unknown" | "unknown" => Ok(PacketClass::Unknown),
            "Attack" | "attack" => Ok(PacketClass::Attack),
            other => Err(format!("unknown packet class {other:?}")),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Cc4Error {
    #[error("record does not match schema: {0}")]
    SchemaMismatch(String),
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("malformed record: {0}")]
    Malformed(String),
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("vector width {found} does not match {expected}")]
    WidthMismatch { expected: usize, found: usize },
    #[error("invalid network document: {0}")]
    Format(String),
}
