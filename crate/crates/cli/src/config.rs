use std::path::Path;

use serde::Deserialize;

use gatewatch::cc4::PipelineConfig;
use gatewatch::monitor::MonitorConfig;
use gatewatch::sim::SimConfig;
use gatewatch::{Aggregator, DetectionMode, ForecasterConfig};

use crate::error::CliError;

/// Settings file (TOML). Every key is optional; command-line flags win
/// over values given here.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub value_col: Option<String>,
    pub interval: Option<i64>,
    pub aggregator: Option<Aggregator>,
    pub model: Option<String>,
    pub period: Option<usize>,
    pub confidence: Option<f64>,
    pub mode: Option<DetectionMode>,
    pub train_frac: Option<f64>,
    pub horizon: Option<usize>,
    pub radius: Option<usize>,
    /// Full forecaster settings; `model`, `period` and `seed` are applied on top.
    pub forecaster: Option<ForecasterConfig>,
    pub monitor: Option<MonitorConfig>,
    pub pipeline: Option<PipelineConfig>,
    pub simulation: Option<SimConfig>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::usage(format!("{}: {}", path.display(), e.message())))
    }
}

/// `persistence` or any forecaster variant name.
pub fn apply_model(base: &mut ForecasterConfig, name: &str) -> Result<(), CliError> {
    if name == "persistence" {
        base.variant = gatewatch::Variant::MovingAverage;
        base.ma_window = 1;
        return Ok(());
    }
    base.variant = name.parse().map_err(CliError::usage)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use gatewatch::Variant;

    #[test]
    fn defaults_follow_reference_values() {
        let cfg: RunConfig = toml::from_str("[forecaster]\nvariant = \"lstm\"\n").unwrap();
        let f = cfg.forecaster.unwrap();
        assert_eq!((f.lstm_units, f.lstm_dropout, f.lstm_learning_rate, f.lstm_batch_size, f.lstm_epochs), (10, 0.2, 0.01, 128, 1));
        let m = MonitorConfig::default();
        assert_eq!(m.surge.confidence, 0.95);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("sede = 3\n").is_err());
        assert!(toml::from_str::<RunConfig>("[forecaster]\nunits = 3\n").is_err());
        let ok: RunConfig = toml::from_str("seed = 3\nmode = \"residual\"\naggregator = \"count\"\n").unwrap();
        assert_eq!((ok.seed, ok.mode, ok.aggregator), (Some(3), Some(DetectionMode::Residual), Some(Aggregator::Count)));
    }

    #[test]
    fn model_names() {
        let mut f = ForecasterConfig::default();
        apply_model(&mut f, "persistence").unwrap();
        assert_eq!((f.variant, f.ma_window), (Variant::MovingAverage, 1));
        apply_model(&mut f, "hw").unwrap();
        assert_eq!(f.variant, Variant::HoltWinters);
        assert!(apply_model(&mut f, "arima").is_err());
    }
}
