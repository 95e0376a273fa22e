use std::fmt;

use gatewatch::cc4::{Cc4Error, PipelineError};
use gatewatch::eval::EvalError;
use gatewatch::forecast::ForecastError;
use gatewatch::ingest::IngestError;
use gatewatch::monitor::MonitorError;
use gatewatch::series::SeriesError;
use gatewatch::sim::SimError;
use gatewatch::surge::SurgeError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Usage,
    Data,
    Model,
}

#[derive(Debug)]
pub struct CliError {
    pub kind: Kind,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError { kind: Kind::Usage, message: message.into() }
    }

    pub fn data(message: impl Into<String>) -> Self {
        CliError { kind: Kind::Data, message: message.into() }
    }

    pub fn exit_code(&self) -> u8 {
        match self.kind {
            Kind::Usage => 1,
            Kind::Data => 2,
            Kind::Model => 3,
        }
    }
}

/// One line: `error[usage|data|model]: message`.
impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.kind {
            Kind::Usage => "usage",
            Kind::Data => "data",
            Kind::Model => "model",
        };
        let flat: Vec<&str> = self.message.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
        write!(f, "error[{tag}]: {}", flat.join(" "))
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::data(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::data(e.to_string())
    }
}

impl From<SeriesError> for CliError {
    fn from(e: SeriesError) -> Self {
        match e {
            SeriesError::InvalidFraction(_) | SeriesError::InvalidInterval(_) => CliError::usage(e.to_string()),
            _ => CliError::data(e.to_string()),
        }
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        match e {
            IngestError::InvalidInterval(_) => CliError::usage(e.to_string()),
            IngestError::Series(s) => s.into(),
            other => CliError::data(other.to_string()),
        }
    }
}

impl From<ForecastError> for CliError {
    fn from(e: ForecastError) -> Self {
        match e {
            ForecastError::InvalidConfig(_) | ForecastError::InvalidHorizon => CliError::usage(e.to_string()),
            ForecastError::Series(s) => s.into(),
            ForecastError::Format(_) => CliError::data(e.to_string()),
            other => CliError { kind: Kind::Model, message: other.to_string() },
        }
    }
}

impl From<SurgeError> for CliError {
    fn from(e: SurgeError) -> Self {
        CliError::usage(e.to_string())
    }
}

impl From<MonitorError> for CliError {
    fn from(e: MonitorError) -> Self {
        match e {
            MonitorError::Ingest(i) => i.into(),
            MonitorError::Surge(s) => s.into(),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::data(e.to_string())
    }
}

impl From<Cc4Error> for CliError {
    fn from(e: Cc4Error) -> Self {
        match e {
            Cc4Error::InvalidSchema(_) => CliError::usage(e.to_string()),
            Cc4Error::EmptyTrainingSet | Cc4Error::WidthMismatch { .. } => CliError { kind: Kind::Model, message: e.to_string() },
            other => CliError::data(other.to_string()),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Config(_) => CliError::usage(e.to_string()),
            other => CliError::data(other.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::InvalidConfig(_) | SimError::InvalidScript(_) => CliError::usage(e.to_string()),
            other => CliError::data(other.to_string()),
        }
    }
}
