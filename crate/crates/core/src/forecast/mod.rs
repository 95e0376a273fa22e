//! Forecaster families behind one contract: [`fit`] on a dense training
//! series, then one-step-ahead scoring through a [`ForecastCursor`] or a
//! multi-step [`FittedForecaster::forecast`].

pub mod holt_winters;
pub mod linear_trend;
pub mod lstm;

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::series::{Scaler, SeriesError, TimeSeries, Windows};
use holt_winters::HoltWinters;
use linear_trend::LinearTrend;
use lstm::{LstmParams, TrainSettings};

pub use lstm::{lstm_param_count, lstm_total_param_count, train_lstm_chunked, ChunkLoss, LstmTraining};

#[derive(Debug, Error, PartialEq)]
pub enum ForecastError {
    #[error("series too short: {len} points, need at least {required}")]
    SeriesTooShort { len: usize, required: usize },
    #[error("training series: {0}")]
    Series(#[from] SeriesError),
    #[error("non-finite loss during LSTM training (epoch {epoch}, chunk {chunk})")]
    NonFiniteLoss { epoch: usize, chunk: usize },
    #[error("invalid forecaster config: {0}")]
    InvalidConfig(String),
    #[error("horizon must be at least 1")]
    InvalidHorizon,
    #[error("invalid model document: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    MovingAverage,
    HoltWinters,
    LinearTrend,
    Lstm,
}

impl Variant {
    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::MovingAverage => "moving_average",
            Variant::HoltWinters => "holt_winters",
            Variant::LinearTrend => "linear_trend",
            Variant::Lstm => "lstm",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "moving_average" | "ma" => Ok(Variant::MovingAverage),
            "holt_winters" | "hw" => Ok(Variant::HoltWinters),
            "linear_trend" | "lt" => Ok(Variant::LinearTrend),
            "lstm" => Ok(Variant::Lstm),
            other => Err(format!("unknown model {other:?} (moving_average|holt_winters|linear_trend|lstm)")),
        }
    }
}

/// Every forecaster setting. Only the fields of `variant` are consulted.
/// LSTM defaults are the single-feature reference configuration: 10 units,
/// dropout 0.2, SGD at 0.01, batches of 128, one epoch, 1008 timesteps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForecasterConfig {
    pub variant: Variant,
    pub ma_window: usize,
    /// `None` means grid search over 0.1..=0.9.
    pub hw_alpha: Option<f64>,
    pub hw_beta: Option<f64>,
    pub hw_gamma: Option<f64>,
    /// Season length; also the dummy count for `linear_trend`.
    pub hw_period: usize,
    pub lt_seasonal_dummies: bool,
    pub lstm_units: usize,
    pub lstm_dropout: f64,
    pub lstm_learning_rate: f64,
    pub lstm_batch_size: usize,
    pub lstm_epochs: usize,
    pub lstm_num_timesteps: usize,
    pub lstm_num_chunks: usize,
    pub rng_seed: u64,
}

pub const DEFAULT_LSTM_UNITS: usize = 10;
pub const DEFAULT_LSTM_DROPOUT: f64 = 0.2;
pub const DEFAULT_LSTM_LEARNING_RATE: f64 = 0.01;
pub const DEFAULT_LSTM_BATCH_SIZE: usize = 128;
pub const DEFAULT_LSTM_EPOCHS: usize = 1;
pub const DEFAULT_LSTM_TIMESTEPS: usize = 1008;
pub const DEFAULT_LSTM_CHUNKS: usize = 2;

impl Default for ForecasterConfig {
    fn default() -> Self {
        ForecasterConfig {
            variant: Variant::HoltWinters,
            ma_window: 24,
            hw_alpha: None,
            hw_beta: None,
            hw_gamma: None,
            hw_period: 24,
            lt_seasonal_dummies: false,
            lstm_units: DEFAULT_LSTM_UNITS,
            lstm_dropout: DEFAULT_LSTM_DROPOUT,
            lstm_learning_rate: DEFAULT_LSTM_LEARNING_RATE,
            lstm_batch_size: DEFAULT_LSTM_BATCH_SIZE,
            lstm_epochs: DEFAULT_LSTM_EPOCHS,
            lstm_num_timesteps: DEFAULT_LSTM_TIMESTEPS,
            lstm_num_chunks: DEFAULT_LSTM_CHUNKS,
            rng_seed: 42,
        }
    }
}

impl ForecasterConfig {
    pub fn moving_average(window: usize) -> Self {
        ForecasterConfig { variant: Variant::MovingAverage, ma_window: window, ..Default::default() }
    }

    /// Last observed value repeated.
    pub fn persistence() -> Self {
        Self::moving_average(1)
    }

    pub fn holt_winters(period: usize) -> Self {
        ForecasterConfig { variant: Variant::HoltWinters, hw_period: period, ..Default::default() }
    }

    pub fn linear_trend(seasonal_period: Option<usize>) -> Self {
        ForecasterConfig {
            variant: Variant::LinearTrend,
            lt_seasonal_dummies: seasonal_period.is_some(),
            hw_period: seasonal_period.unwrap_or(24),
            ..Default::default()
        }
    }

    pub fn lstm(num_timesteps: usize) -> Self {
        ForecasterConfig { variant: Variant::Lstm, lstm_num_timesteps: num_timesteps, ..Default::default() }
    }

    /// Short label used in reports, e.g. `holt_winters(m=24)`.
    pub fn label(&self) -> String {
        match self.variant {
            Variant::MovingAverage if self.ma_window == 1 => "persistence".to_string(),
            Variant::MovingAverage => format!("moving_average(w={})", self.ma_window),
            Variant::HoltWinters => format!("holt_winters(m={})", self.hw_period),
            Variant::LinearTrend if self.lt_seasonal_dummies => format!("linear_trend(m={})", self.hw_period),
            Variant::LinearTrend => "linear_trend".to_string(),
            Variant::Lstm => format!("lstm(units={},k={})", self.lstm_units, self.lstm_num_timesteps),
        }
    }

    /// Smallest training length this config can fit.
    pub fn min_train_len(&self) -> usize {
        match self.variant {
            Variant::MovingAverage => self.ma_window.max(1),
            Variant::HoltWinters => 2 * self.hw_period,
            Variant::LinearTrend if self.lt_seasonal_dummies => 2 * self.hw_period,
            Variant::LinearTrend => 2,
            Variant::Lstm => self.lstm_num_timesteps + 1,
        }
    }

    pub fn validate(&self) -> Result<(), ForecastError> {
        let bad = |msg: &str| Err(ForecastError::InvalidConfig(msg.to_string()));
        let unit = |v: Option<f64>| v.is_none_or(|x| (0.0..=1.0).contains(&x));
        match self.variant {
            Variant::MovingAverage if self.ma_window == 0 => bad("ma_window must be at least 1"),
            Variant::HoltWinters if self.hw_period < 2 => bad("hw_period must be at least 2"),
            Variant::HoltWinters if !(unit(self.hw_alpha) && unit(self.hw_beta) && unit(self.hw_gamma)) => {
                bad("smoothing constants must lie in [0, 1]")
            }
            Variant::LinearTrend if self.lt_seasonal_dummies && self.hw_period < 2 => {
                bad("seasonal dummies need hw_period >= 2")
            }
            Variant::Lstm if self.lstm_units == 0 || self.lstm_batch_size == 0 || self.lstm_num_timesteps == 0 => {
                bad("lstm units, batch size and timesteps must be positive")
            }
            Variant::Lstm if self.lstm_num_chunks == 0 => bad("lstm_num_chunks must be positive"),
            Variant::Lstm if !(0.0..1.0).contains(&self.lstm_dropout) => bad("lstm_dropout must lie in [0, 1)"),
            Variant::Lstm if !self.lstm_learning_rate.is_finite() || self.lstm_learning_rate < 0.0 => {
                bad("lstm_learning_rate must be finite and non-negative")
            }
            _ => Ok(()),
        }
    }

    fn train_settings(&self) -> TrainSettings {
        TrainSettings {
            units: self.lstm_units,
            dropout: self.lstm_dropout,
            learning_rate: self.lstm_learning_rate,
            batch_size: self.lstm_batch_size,
            epochs: self.lstm_epochs,
            num_chunks: self.lstm_num_chunks,
            seed: self.rng_seed,
        }
    }
}

/// In-sample one-step predictions and their residual statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastResult {
    /// Training index of `fitted[0]`; earlier points are warm-up.
    pub fitted_start: usize,
    pub fitted: Vec<f64>,
    pub forecasts: Vec<f64>,
    pub residuals: Vec<f64>,
    /// Population standard deviation of `residuals`.
    pub residual_std: f64,
}

impl ForecastResult {
    fn from_fitted(train: &[f64], fitted_start: usize, fitted: Vec<f64>) -> Self {
        let residuals: Vec<f64> = train[fitted_start..].iter().zip(&fitted).map(|(y, f)| y - f).collect();
        let residual_std = population_std(&residuals);
        ForecastResult { fitted_start, fitted, forecasts: Vec::new(), residuals, residual_std }
    }
}

fn population_std(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
struct MovingAverage {
    window: usize,
    /// Last `window` training values.
    recent: Vec<f64>,
}

fn mean(values: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = values.len() as f64;
    values.sum::<f64>() / n
}

#[derive(Debug, Clone, PartialEq)]
struct LstmModel {
    params: LstmParams,
    scaler: Scaler,
    /// Last `num_timesteps` training values, scaled.
    recent: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
enum Model {
    MovingAverage(MovingAverage),
    HoltWinters(HoltWinters),
    LinearTrend(LinearTrend),
    Lstm(LstmModel),
}

/// A model fitted on a training prefix. Immutable; scoring goes through
/// [`ForecastCursor`], which owns its own copy of the evolving state.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedForecaster {
    config: ForecasterConfig,
    train_len: usize,
    model: Model,
    result: ForecastResult,
    loss_trace: Vec<ChunkLoss>,
}

/// Fits `config` on `train`. Deterministic in `(config, train)`.
pub fn fit(config: &ForecasterConfig, train: &TimeSeries) -> Result<FittedForecaster, ForecastError> {
    fit_values(config, train.dense_values()?)
}

pub fn fit_values(config: &ForecasterConfig, train: &[f64]) -> Result<FittedForecaster, ForecastError> {
    config.validate()?;
    let required = config.min_train_len();
    if train.len() < required {
        return Err(ForecastError::SeriesTooShort { len: train.len(), required });
    }
    let mut loss_trace = Vec::new();
    let (model, result) = match config.variant {
        Variant::MovingAverage => {
            let w = config.ma_window;
            let fitted = (w..train.len()).map(|t| mean(train[t - w..t].iter().copied())).collect();
            let model = MovingAverage { window: w, recent: train[train.len() - w..].to_vec() };
            (Model::MovingAverage(model), ForecastResult::from_fitted(train, w, fitted))
        }
        Variant::HoltWinters => {
            let (hw, fitted) = HoltWinters::fit(train, config.hw_period, config.hw_alpha, config.hw_beta, config.hw_gamma)?;
            (Model::HoltWinters(hw), ForecastResult::from_fitted(train, config.hw_period, fitted))
        }
        Variant::LinearTrend => {
            let phases = if config.lt_seasonal_dummies { config.hw_period } else { 1 };
            let lt = LinearTrend::fit(train, phases)?;
            let fitted = (0..train.len()).map(|t| lt.at(t)).collect();
            (Model::LinearTrend(lt), ForecastResult::from_fitted(train, 0, fitted))
        }
        Variant::Lstm => {
            let k = config.lstm_num_timesteps;
            let scaler = Scaler::fit_values(train.iter().copied())?;
            let scaled: Vec<f64> = train.iter().map(|&v| scaler.apply(v)).collect();
            let windows = Windows::new(&scaled, k)?;
            let trained = train_lstm_chunked(&config.train_settings(), &windows)?;
            let fitted = (0..windows.len())
                .map(|i| scaler.invert(trained.params.predict(windows.window(i))))
                .collect();
            loss_trace = trained.loss_trace;
            let model = LstmModel { params: trained.params, scaler, recent: scaled[scaled.len() - k..].to_vec() };
            (Model::Lstm(model), ForecastResult::from_fitted(train, k, fitted))
        }
    };
    Ok(FittedForecaster { config: config.clone(), train_len: train.len(), model, result, loss_trace })
}

impl FittedForecaster {
    pub fn config(&self) -> &ForecasterConfig {
        &self.config
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn train_len(&self) -> usize {
        self.train_len
    }

    pub fn result(&self) -> &ForecastResult {
        &self.result
    }

    pub fn residual_std(&self) -> f64 {
        self.result.residual_std
    }

    /// Per-chunk training losses (LSTM only; empty otherwise).
    pub fn loss_trace(&self) -> &[ChunkLoss] {
        &self.loss_trace
    }

    pub fn lstm_params(&self) -> Option<&LstmParams> {
        match &self.model {
            Model::Lstm(m) => Some(&m.params),
            _ => None,
        }
    }

    /// Predictions for the `horizon` points after the training range.
    /// Moving averages are flat; LSTMs roll forward on their own output.
    pub fn forecast(&self, horizon: usize) -> Result<Vec<f64>, ForecastError> {
        if horizon == 0 {
            return Err(ForecastError::InvalidHorizon);
        }
        Ok(match &self.model {
            Model::MovingAverage(ma) => vec![mean(ma.recent.iter().copied()); horizon],
            Model::HoltWinters(hw) => hw.forecast(horizon),
            Model::LinearTrend(lt) => lt.forecast(horizon),
            Model::Lstm(_) => {
                let mut cur = self.cursor();
                (0..horizon)
                    .map(|_| {
                        let p = cur.predict();
                        cur.advance(None);
                        p
                    })
                    .collect()
            }
        })
    }

    /// The fit result with `forecasts` filled for `horizon` steps.
    pub fn forecast_result(&self, horizon: usize) -> Result<ForecastResult, ForecastError> {
        let mut r = self.result.clone();
        r.forecasts = self.forecast(horizon)?;
        Ok(r)
    }

    pub fn cursor(&self) -> ForecastCursor<'_> {
        let state = match &self.model {
            Model::MovingAverage(ma) => CursorState::Window(ma.recent.iter().copied().collect()),
            Model::HoltWinters(hw) => CursorState::HoltWinters(hw.clone()),
            Model::LinearTrend(lt) => CursorState::Index(lt.next_t),
            Model::Lstm(m) => CursorState::Window(m.recent.iter().copied().collect()),
        };
        ForecastCursor { model: &self.model, state }
    }

    /// Teacher-forced one-step predictions for the points that follow the
    /// training range. A `None` actual is replaced by the prediction itself.
    pub fn one_step_ahead(&self, continuation: &[Option<f64>]) -> Vec<f64> {
        let mut cur = self.cursor();
        continuation
            .iter()
            .map(|&actual| {
                let p = cur.predict();
                cur.advance(actual);
                p
            })
            .collect()
    }

    pub fn to_document(&self) -> ModelDocument {
        let mut parameters = BTreeMap::new();
        let mut put = |k: &str, v: Vec<f64>| {
            parameters.insert(k.to_string(), v);
        };
        let mut scaler = None;
        match &self.model {
            Model::MovingAverage(ma) => {
                put("window", vec![ma.window as f64]);
                put("recent", ma.recent.clone());
            }
            Model::HoltWinters(hw) => {
                put("alpha", vec![hw.alpha]);
                put("beta", vec![hw.beta]);
                put("gamma", vec![hw.gamma]);
                put("period", vec![hw.period as f64]);
                put("level", vec![hw.level]);
                put("trend", vec![hw.trend]);
                put("seasonals", hw.seasonals.clone());
                put("next_t", vec![hw.next_t as f64]);
            }
            Model::LinearTrend(lt) => {
                put("slope", vec![lt.slope]);
                put("intercepts", lt.intercepts.clone());
                put("next_t", vec![lt.next_t as f64]);
            }
            Model::Lstm(m) => {
                put("units", vec![m.params.units as f64]);
                put("input_dim", vec![m.params.input_dim as f64]);
                put("weights", m.params.flat.clone());
                put("recent", m.recent.clone());
                scaler = Some(m.scaler);
            }
        }
        ModelDocument {
            variant: self.config.variant,
            config: self.config.clone(),
            train_len: self.train_len,
            parameters,
            scaler,
            fit: self.result.clone(),
            loss_trace: self.loss_trace.clone(),
        }
    }

    pub fn from_document(doc: ModelDocument) -> Result<Self, ForecastError> {
        let p = &doc.parameters;
        let arr = |k: &str| p.get(k).ok_or_else(|| ForecastError::Format(format!("missing parameter {k:?}")));
        let one = |k: &str| -> Result<f64, ForecastError> {
            arr(k)?.first().copied().ok_or_else(|| ForecastError::Format(format!("empty parameter {k:?}")))
        };
        let count = |k: &str| -> Result<usize, ForecastError> {
            let v = one(k)?;
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(ForecastError::Format(format!("parameter {k:?} must be a count")))
            }
        };
        if doc.variant != doc.config.variant {
            return Err(ForecastError::Format("variant disagrees with config".into()));
        }
        let model = match doc.variant {
            Variant::MovingAverage => {
                let window = count("window")?;
                let recent = arr("recent")?.clone();
                if window == 0 || recent.len() != window {
                    return Err(ForecastError::Format("moving-average window mismatch".into()));
                }
                Model::MovingAverage(MovingAverage { window, recent })
            }
            Variant::HoltWinters => {
                let period = count("period")?;
                let seasonals = arr("seasonals")?.clone();
                if period < 2 || seasonals.len() != period {
                    return Err(ForecastError::Format("seasonal vector length mismatch".into()));
                }
                Model::HoltWinters(HoltWinters {
                    alpha: one("alpha")?,
                    beta: one("beta")?,
                    gamma: one("gamma")?,
                    period,
                    level: one("level")?,
                    trend: one("trend")?,
                    seasonals,
                    next_t: count("next_t")?,
                })
            }
            Variant::LinearTrend => {
                let intercepts = arr("intercepts")?.clone();
                if intercepts.is_empty() {
                    return Err(ForecastError::Format("no intercepts".into()));
                }
                Model::LinearTrend(LinearTrend { slope: one("slope")?, intercepts, next_t: count("next_t")? })
            }
            Variant::Lstm => {
                let units = count("units")?;
                let input_dim = count("input_dim")?;
                let flat = arr("weights")?.clone();
                if units == 0 || input_dim == 0 || flat.len() != lstm_total_param_count(units, input_dim) {
                    return Err(ForecastError::Format("LSTM weight count mismatch".into()));
                }
                let recent = arr("recent")?.clone();
                if recent.len() != doc.config.lstm_num_timesteps {
                    return Err(ForecastError::Format("LSTM history length mismatch".into()));
                }
                let scaler = doc.scaler.ok_or_else(|| ForecastError::Format("LSTM model without scaler".into()))?;
                Model::Lstm(LstmModel { params: LstmParams { units, input_dim, flat }, scaler, recent })
            }
        };
        Ok(FittedForecaster {
            config: doc.config,
            train_len: doc.train_len,
            model,
            result: doc.fit,
            loss_trace: doc.loss_trace,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("model serialization cannot fail")
    }

    pub fn from_json(s: &str) -> Result<Self, ForecastError> {
        let doc: ModelDocument = serde_json::from_str(s).map_err(|e| ForecastError::Format(e.to_string()))?;
        Self::from_document(doc)
    }
}

/// Serialized form of a fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDocument {
    pub variant: Variant,
    pub config: ForecasterConfig,
    pub train_len: usize,
    pub parameters: BTreeMap<String, Vec<f64>>,
    pub scaler: Option<Scaler>,
    pub fit: ForecastResult,
    #[serde(default)]
    pub loss_trace: Vec<ChunkLoss>,
}

#[derive(Debug, Clone, PartialEq)]
enum CursorState {
    Window(VecDeque<f64>),
    HoltWinters(HoltWinters),
    Index(usize),
}

/// Walks forward from the end of training: [`predict`](Self::predict)
/// gives the next one-step forecast, [`advance`](Self::advance) consumes
/// the actual value. Cloning a cursor snapshots its state.
#[derive(Debug, Clone)]
pub struct ForecastCursor<'a> {
    model: &'a Model,
    state: CursorState,
}

impl ForecastCursor<'_> {
    pub fn predict(&self) -> f64 {
        match (self.model, &self.state) {
            (Model::MovingAverage(_), CursorState::Window(w)) => mean(w.iter().copied()),
            (Model::HoltWinters(_), CursorState::HoltWinters(hw)) => hw.predict_next(),
            (Model::LinearTrend(lt), CursorState::Index(t)) => lt.at(*t),
            (Model::Lstm(m), CursorState::Window(w)) => {
                let (a, b) = w.as_slices();
                let window = if b.is_empty() { a.to_vec() } else { w.iter().copied().collect() };
                m.scaler.invert(m.params.predict(&window))
            }
            _ => unreachable!("cursor state always matches its model"),
        }
    }

    /// Feeds the actual value; `None` feeds the current prediction instead.
    pub fn advance(&mut self, actual: Option<f64>) {
        let y = match actual {
            Some(v) => v,
            None => self.predict(),
        };
        match (self.model, &mut self.state) {
            (Model::MovingAverage(_), CursorState::Window(w)) => {
                w.pop_front();
                w.push_back(y);
            }
            (Model::Lstm(m), CursorState::Window(w)) => {
                w.pop_front();
                w.push_back(m.scaler.apply(y));
            }
            (Model::HoltWinters(_), CursorState::HoltWinters(hw)) => hw.observe(y),
            (Model::LinearTrend(_), CursorState::Index(t)) => *t += 1,
            _ => unreachable!("cursor state always matches its model"),
        }
    }
}
