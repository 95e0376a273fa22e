//! Gateway telemetry analysis: flow-log ingestion, forecasting, confidence
//! band detectors, CC4 intrusion classification and a labeled traffic
//! simulator.

pub mod cc4;
pub mod eval;
pub mod forecast;
pub mod ingest;
pub mod monitor;
pub mod series;
pub mod sim;
pub mod surge;
pub mod timefmt;

pub use cc4::{Cc4Network, EventLogRecord, PacketClass, SymbolSchema};
pub use eval::{compare_models, mape, mse, ModelReport};
pub use forecast::{FittedForecaster, ForecastResult, ForecasterConfig, Variant};
pub use ingest::{Aggregator, FlowRecord, IngestReport};
pub use series::{DiagnosticsReport, TimeSeries};
pub use surge::{AlertKind, AnomalyAlert, ConfidenceBand, DetectionMode, Severity};
