//! Additive Holt-Winters (triple exponential smoothing).

use super::ForecastError;

/// Smoothing constants tried when a constant is not fixed in the config.
pub fn smoothing_grid() -> Vec<f64> {
    (1..=9).map(|k| k as f64 / 10.0).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct HoltWinters {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub period: usize,
    pub level: f64,
    pub trend: f64,
    /// Indexed by `t % period`.
    pub seasonals: Vec<f64>,
    /// Index of the next unseen point.
    pub next_t: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Initial {
    pub level: f64,
    pub trend: f64,
}

/// Level is the first-period mean, trend the mean per-step slope between
/// the first two period means, seasonals the first-period deviations (so
/// they sum to zero).
pub fn initial_state(values: &[f64], period: usize) -> Result<(Initial, Vec<f64>), ForecastError> {
    let required = 2 * period;
    if period < 2 || values.len() < required {
        return Err(ForecastError::SeriesTooShort { len: values.len(), required: required.max(4) });
    }
    let m = period as f64;
    let first = values[..period].iter().sum::<f64>() / m;
    let second = values[period..2 * period].iter().sum::<f64>() / m;
    let seasonals = values[..period].iter().map(|v| v - first).collect();
    Ok((Initial { level: first, trend: (second - first) / m }, seasonals))
}

impl HoltWinters {
    fn start(alpha: f64, beta: f64, gamma: f64, period: usize, init: Initial, seasonals: Vec<f64>) -> Self {
        HoltWinters { alpha, beta, gamma, period, level: init.level, trend: init.trend, seasonals, next_t: period }
    }

    pub fn predict_next(&self) -> f64 {
        self.level + self.trend + self.seasonals[self.next_t % self.period]
    }

    pub fn observe(&mut self, y: f64) {
        let idx = self.next_t % self.period;
        let s_prev = self.seasonals[idx];
        let level_prev = self.level;
        self.level = self.alpha * (y - s_prev) + (1.0 - self.alpha) * (level_prev + self.trend);
        self.trend = self.beta * (self.level - level_prev) + (1.0 - self.beta) * self.trend;
        self.seasonals[idx] = self.gamma * (y - self.level) + (1.0 - self.gamma) * s_prev;
        self.next_t += 1;
    }

    /// `level + h * trend + seasonal` for `h = 1..=horizon`.
    pub fn forecast(&self, horizon: usize) -> Vec<f64> {
        (1..=horizon)
            .map(|h| {
                let idx = (self.next_t + h - 1) % self.period;
                self.level + h as f64 * self.trend + self.seasonals[idx]
            })
            .collect()
    }

    /// Runs the recurrences over `values` with fixed constants. Returns the
    /// final state and one-step predictions for `t >= period`.
    pub fn run(values: &[f64], period: usize, alpha: f64, beta: f64, gamma: f64) -> Result<(Self, Vec<f64>), ForecastError> {
        let (init, seasonals) = initial_state(values, period)?;
        let mut hw = Self::start(alpha, beta, gamma, period, init, seasonals);
        let mut fitted = Vec::with_capacity(values.len() - period);
        for &y in &values[period..] {
            fitted.push(hw.predict_next());
            hw.observe(y);
        }
        Ok((hw, fitted))
    }

    /// Fits with any unset constant chosen from [`smoothing_grid`] by
    /// one-step training MSE. Ties keep the earliest grid point.
    pub fn fit(
        values: &[f64],
        period: usize,
        alpha: Option<f64>,
        beta: Option<f64>,
        gamma: Option<f64>,
    ) -> Result<(Self, Vec<f64>), ForecastError> {
        let grid = smoothing_grid();
        let choices = |fixed: Option<f64>| fixed.map_or_else(|| grid.clone(), |v| vec![v]);
        let (init, seasonals) = initial_state(values, period)?;
        let mut best: Option<(f64, f64, f64, f64)> = None;
        for &a in &choices(alpha) {
            for &b in &choices(beta) {
                for &g in &choices(gamma) {
                    let mut hw = Self::start(a, b, g, period, init, seasonals.clone());
                    let mut sse = 0.0;
                    for &y in &values[period..] {
                        let e = y - hw.predict_next();
                        sse += e * e;
                        hw.observe(y);
                    }
                    if best.is_none_or(|(s, ..)| sse < s) {
                        best = Some((sse, a, b, g));
                    }
                }
            }
        }
        let (_, a, b, g) = best.expect("grid is never empty");
        Self::run(values, period, a, b, g)
    }
}
