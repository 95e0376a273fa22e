//! Ordinary least squares on time, optionally with one intercept per
//! seasonal phase (seasonal dummies).

use super::ForecastError;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearTrend {
    pub slope: f64,
    /// One intercept, or one per phase when seasonal dummies are enabled.
    pub intercepts: Vec<f64>,
    pub next_t: usize,
}

impl LinearTrend {
    /// Closed form with phase-demeaned regressors:
    /// `slope = sum (t - mean_t[p]) (y - mean_y[p]) / sum (t - mean_t[p])^2`,
    /// `intercept[p] = mean_y[p] - slope * mean_t[p]`.
    pub fn fit(values: &[f64], phases: usize) -> Result<Self, ForecastError> {
        let phases = phases.max(1);
        let required = 2 * phases;
        if values.len() < required {
            return Err(ForecastError::SeriesTooShort { len: values.len(), required });
        }
        let mut sum_t = vec![0.0; phases];
        let mut sum_y = vec![0.0; phases];
        let mut count = vec![0.0; phases];
        for (t, &y) in values.iter().enumerate() {
            let p = t % phases;
            sum_t[p] += t as f64;
            sum_y[p] += y;
            count[p] += 1.0;
        }
        let mean_t: Vec<f64> = sum_t.iter().zip(&count).map(|(s, c)| s / c).collect();
        let mean_y: Vec<f64> = sum_y.iter().zip(&count).map(|(s, c)| s / c).collect();
        let (mut sxy, mut sxx) = (0.0, 0.0);
        for (t, &y) in values.iter().enumerate() {
            let p = t % phases;
            let dt = t as f64 - mean_t[p];
            sxy += dt * (y - mean_y[p]);
            sxx += dt * dt;
        }
        let slope = sxy / sxx;
        let intercepts = mean_y.iter().zip(&mean_t).map(|(my, mt)| my - slope * mt).collect();
        Ok(LinearTrend { slope, intercepts, next_t: values.len() })
    }

    pub fn at(&self, t: usize) -> f64 {
        self.intercepts[t % self.intercepts.len()] + self.slope * t as f64
    }

    pub fn forecast(&self, horizon: usize) -> Vec<f64> {
        (0..horizon).map(|h| self.at(self.next_t + h)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line() {
        let values: Vec<f64> = (0..50).map(|t| 2.0 * t as f64 + 1.0).collect();
        let lt = LinearTrend::fit(&values, 1).unwrap();
        for (h, f) in lt.forecast(20).iter().enumerate() {
            assert!((f - (2.0 * (50 + h) as f64 + 1.0)).abs() < 1e-9);
        }
    }

    #[test]
    fn seasonal_dummies_recover_phase_offsets() {
        let offsets = [3.0, -1.0, 0.5, 7.0];
        let values: Vec<f64> = (0..40).map(|t| 0.25 * t as f64 + offsets[t % 4]).collect();
        let lt = LinearTrend::fit(&values, 4).unwrap();
        assert!((lt.slope - 0.25).abs() < 1e-12);
        for (a, b) in lt.intercepts.iter().zip(offsets) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn too_short() {
        assert!(LinearTrend::fit(&[1.0], 1).is_err());
        assert!(LinearTrend::fit(&[1.0; 7], 4).is_err());
    }
}
