//! Loss metrics and a side-by-side comparison of forecasters on one series.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::forecast::{fit, ForecasterConfig, Variant};
use crate::series::{split, TimeSeries, MAX_IMPUTED_RUN};

pub const BASELINE_NAME: &str = "persistence (baseline)";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("length mismatch: {actual} actual values, {predicted} predictions")]
    LengthMismatch { actual: usize, predicted: usize },
    #[error("nothing to score")]
    EmptyInput,
    #[error("every target is zero; MAPE is undefined")]
    AllTargetsZero,
}

fn check_lengths(actual: &[f64], predicted: &[f64]) -> Result<(), EvalError> {
    if actual.len() != predicted.len() {
        return Err(EvalError::LengthMismatch { actual: actual.len(), predicted: predicted.len() });
    }
    if actual.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    Ok(())
}

pub fn mse(actual: &[f64], predicted: &[f64]) -> Result<f64, EvalError> {
    check_lengths(actual, predicted)?;
    let total: f64 = actual.iter().zip(predicted).map(|(a, p)| (a - p) * (a - p)).sum();
    Ok(total / actual.len() as f64)
}

/// Mean absolute percentage error over nonzero targets, with the number of
/// zero targets that were skipped.
pub fn mape(actual: &[f64], predicted: &[f64]) -> Result<(f64, usize), EvalError> {
    check_lengths(actual, predicted)?;
    let mut total = 0.0;
    let mut used = 0usize;
    for (a, p) in actual.iter().zip(predicted) {
        if *a != 0.0 {
            total += ((a - p) / a).abs();
            used += 1;
        }
    }
    if used == 0 {
        return Err(EvalError::AllTargetsZero);
    }
    Ok((total / used as f64 * 100.0, actual.len() - used))
}

/// Qualitative aspects of a model family: the pattern it suits and the
/// series length it is usually applied to.
pub fn family_profile(variant: Variant) -> (&'static str, &'static str) {
    match variant {
        Variant::HoltWinters => ("seasonality and/or trend", "14-200"),
        Variant::MovingAverage => ("stationary", "12-200"),
        Variant::LinearTrend => ("seasonality and/or trend", "14-200"),
        Variant::Lstm => ("any pattern", "200+"),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRow {
    pub name: String,
    pub pattern_class: String,
    pub length_guidance: String,
    pub train_len: usize,
    pub test_len: usize,
    pub test_mse: Option<f64>,
    pub test_mape_pct: Option<f64>,
    pub mape_skipped_zero_targets: usize,
    /// Wall-clock fit time; only recorded when timing is requested.
    pub fit_seconds: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub train_fraction: f64,
    /// In input order, baseline last.
    pub rows: Vec<ModelRow>,
    /// Row names by ascending test MSE; ties by name, failed rows last.
    pub ranking: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CompareOptions {
    pub record_timing: bool,
}

fn evaluate(config: &ForecasterConfig, name: String, train: &TimeSeries, test: &TimeSeries, timing: bool) -> ModelRow {
    let (pattern, length) = family_profile(config.variant);
    let mut row = ModelRow {
        name,
        pattern_class: pattern.to_string(),
        length_guidance: length.to_string(),
        train_len: train.len(),
        test_len: test.len(),
        test_mse: None,
        test_mape_pct: None,
        mape_skipped_zero_targets: 0,
        fit_seconds: None,
        error: None,
    };
    let started = Instant::now();
    let model = match fit(config, &train.impute_short_gaps(MAX_IMPUTED_RUN)) {
        Ok(m) => m,
        Err(e) => {
            row.error = Some(e.to_string());
            return row;
        }
    };
    if timing {
        row.fit_seconds = Some(started.elapsed().as_secs_f64());
    }
    let continuation = test.options();
    let predictions = model.one_step_ahead(&continuation);
    let (actual, predicted): (Vec<f64>, Vec<f64>) =
        continuation.iter().zip(&predictions).filter_map(|(a, p)| a.map(|a| (a, *p))).unzip();
    match mse(&actual, &predicted) {
        Ok(v) => row.test_mse = Some(v),
        Err(e) => {
            row.error = Some(e.to_string());
            return row;
        }
    }
    match mape(&actual, &predicted) {
        Ok((pct, skipped)) => {
            row.test_mape_pct = Some(pct);
            row.mape_skipped_zero_targets = skipped;
        }
        Err(_) => row.mape_skipped_zero_targets = actual.len(),
    }
    row
}

fn rank(rows: &[ModelRow]) -> Vec<String> {
    let mut order: Vec<&ModelRow> = rows.iter().collect();
    order.sort_by(|a, b| {
        let by_mse = match (a.test_mse, b.test_mse) {
            (Some(x), Some(y)) => x.total_cmp(&y),
            (Some(_), None) => Ordering::Less,
            (None, Some(_)) => Ordering::Greater,
            (None, None) => Ordering::Equal,
        };
        by_mse.then_with(|| a.name.cmp(&b.name))
    });
    order.into_iter().map(|r| r.name.clone()).collect()
}

/// Distinct display names: repeated labels get a `#k` suffix.
fn row_names(configs: &[ForecasterConfig]) -> Vec<String> {
    let mut seen: HashMap<String, usize> = HashMap::new();
    configs
        .iter()
        .map(|c| {
            let label = c.label();
            let k = seen.entry(label.clone()).or_insert(0);
            *k += 1;
            if *k == 1 {
                label
            } else {
                format!("{label}#{k}")
            }
        })
        .collect()
}

/// Fits every config on the leading `train_fraction` of `series` and scores
/// teacher-forced one-step predictions on the rest. A persistence baseline
/// is always appended. Fits run on separate threads; failures are recorded
/// in their row.
pub fn compare_models(
    configs: &[ForecasterConfig],
    series: &TimeSeries,
    train_fraction: f64,
    options: CompareOptions,
) -> Result<ModelReport, EvalError> {
    let (train, test) = split(series, train_fraction).map_err(|_| EvalError::EmptyInput)?;
    let names = row_names(configs);
    let baseline = ForecasterConfig::persistence();
    let jobs: Vec<(&ForecasterConfig, String)> =
        configs.iter().zip(names).chain(std::iter::once((&baseline, BASELINE_NAME.to_string()))).collect();

    let rows: Vec<ModelRow> = std::thread::scope(|scope| {
        let handles: Vec<_> = jobs
            .into_iter()
            .map(|(cfg, name)| {
                let (train, test) = (&train, &test);
                scope.spawn(move || evaluate(cfg, name, train, test, options.record_timing))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("model evaluation panicked")).collect()
    });
    let ranking = rank(&rows);
    Ok(ModelReport { train_fraction, rows, ranking })
}

impl ModelReport {
    pub fn row(&self, name: &str) -> Option<&ModelRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }

    /// Aligned text table in ranking order.
    pub fn to_table(&self) -> String {
        let header = ["rank", "model", "pattern", "length", "train", "test", "mse", "mape_pct", "zero_skipped", "fit_s", "error"];
        let opt = |v: Option<f64>, prec: usize| v.map_or("-".to_string(), |x| format!("{x:.prec$}"));
        let mut lines: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
        for (i, name) in self.ranking.iter().enumerate() {
            let r = self.row(name).expect("ranked names come from rows");
            lines.push(vec![
                (i + 1).to_string(),
                r.name.clone(),
                r.pattern_class.clone(),
                r.length_guidance.clone(),
                r.train_len.to_string(),
                r.test_len.to_string(),
                r.test_mse.map_or("-".to_string(), |x| format!("{x:.6e}")),
                opt(r.test_mape_pct, 2),
                r.mape_skipped_zero_targets.to_string(),
                opt(r.fit_seconds, 3),
                r.error.clone().unwrap_or_else(|| "-".to_string()),
            ]);
        }
        let widths: Vec<usize> = (0..header.len()).map(|c| lines.iter().map(|l| l[c].chars().count()).max().unwrap_or(0)).collect();
        let mut out = String::new();
        for line in &lines {
            let cells: Vec<String> = line.iter().zip(&widths).map(|(cell, w)| format!("{cell:<w$}")).collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{TimeZone, Utc};

    fn series(values: Vec<f64>) -> TimeSeries {
        TimeSeries::new(Utc.with_ymd_and_hms(2018, 2, 16, 0, 0, 0).unwrap(), 3600, values).unwrap()
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mse(&[2.0, 4.0], &[1.0, 2.0]).unwrap(), 2.5);
        assert_eq!(mse(&[3.0], &[5.0]).unwrap(), 4.0);
        assert_eq!(mse(&[1.0], &[1.0, 2.0]), Err(EvalError::LengthMismatch { actual: 1, predicted: 2 }));
        assert_eq!(mse(&[], &[]), Err(EvalError::EmptyInput));
    }

    #[test]
    fn mape_examples() {
        assert_eq!(mape(&[2.0, 4.0], &[1.0, 2.0]).unwrap(), (50.0, 0));
        assert_eq!(mape(&[0.0, 2.0], &[1.0, 2.0]).unwrap(), (0.0, 1));
        assert_eq!(mape(&[3.0, 7.0], &[3.0, 7.0]).unwrap(), (0.0, 0));
        assert_eq!(mape(&[0.0, 0.0], &[1.0, 2.0]), Err(EvalError::AllTargetsZero));
    }

    #[test]
    fn baseline_always_present_and_ties_break_by_name() {
        let s = series((0..60).map(|i| (i % 5) as f64 + 1.0).collect());
        // MA(3) twice: identical predictions, so the two rows tie.
        let report = compare_models(
            &[ForecasterConfig::moving_average(3), ForecasterConfig::moving_average(3)],
            &s,
            0.5,
            CompareOptions::default(),
        )
        .unwrap();
        let names: Vec<&str> = report.rows.iter().map(|r| r.name.as_str()).collect();
        assert_eq!(names, ["moving_average(w=3)", "moving_average(w=3)#2", BASELINE_NAME]);
        let pos = |n: &str| report.ranking.iter().position(|r| r == n).unwrap();
        assert_eq!(pos("moving_average(w=3)#2"), pos("moving_average(w=3)") + 1);
        assert!(report.rows.iter().all(|r| r.fit_seconds.is_none()));
        assert_eq!(report.row(BASELINE_NAME).unwrap().train_len, 30);
    }

    #[test]
    fn failed_rows_rank_last() {
        let s = series((0..40).map(|i| 10.0 + (i % 3) as f64).collect());
        let report = compare_models(&[ForecasterConfig::holt_winters(24)], &s, 0.5, CompareOptions { record_timing: true }).unwrap();
        let hw = &report.rows[0];
        assert!(hw.error.as_deref().unwrap().contains("too short"));
        assert_eq!(report.ranking.last().unwrap(), &hw.name);
        assert!(report.row(BASELINE_NAME).unwrap().fit_seconds.is_some());
        let table = report.to_table();
        assert_eq!(table.lines().count(), 3);
        assert!(table.lines().nth(1).unwrap().starts_with("1     persistence (baseline)"));
    }

    #[test]
    fn zero_targets_are_counted() {
        let s = series([1.0, 0.0].repeat(20));
        let report = compare_models(&[], &s, 0.5, CompareOptions::default()).unwrap();
        let row = &report.rows[0];
        assert_eq!((row.mape_skipped_zero_targets, row.test_mape_pct), (10, Some(100.0)));
        assert_eq!(row.test_mse, Some(1.0));
    }

    #[test]
    fn report_json_round_trips() {
        let s = series((0..48).map(|i| (i as f64 * 0.3).sin() + 2.0).collect());
        let report = compare_models(&[ForecasterConfig::linear_trend(None)], &s, 0.5, CompareOptions::default()).unwrap();
        let back: ModelReport = serde_json::from_str(&report.to_json()).unwrap();
        assert_eq!(back, report);
    }

    mod props {
        use super::*;
        use proptest::collection::vec;
        use proptest::prelude::*;

        fn pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
            (1usize..20).prop_flat_map(|n| (vec(-100.0f64..100.0, n), vec(-100.0f64..100.0, n)))
        }

        proptest! {
            #[test]
            fn mse_is_symmetric_and_scales_quadratically((a, p) in pair(), k in -5.0f64..5.0) {
                let m = mse(&a, &p).unwrap();
                prop_assert_eq!(m, mse(&p, &a).unwrap());
                let sa: Vec<f64> = a.iter().map(|x| k * x).collect();
                let sp: Vec<f64> = p.iter().map(|x| k * x).collect();
                prop_assert!((mse(&sa, &sp).unwrap() - k * k * m).abs() <= 1e-9 * (1.0 + k * k * m));
            }

            #[test]
            fn mse_zero_iff_equal((a, p) in pair()) {
                prop_assert_eq!(mse(&a, &p).unwrap() == 0.0, a == p);
            }

            #[test]
            fn mape_is_scale_invariant((a, p) in pair(), k in 0.01f64..50.0) {
                prop_assume!(a.iter().any(|x| *x != 0.0));
                let (m, skipped) = mape(&a, &p).unwrap();
                let sa: Vec<f64> = a.iter().map(|x| k * x).collect();
                let sp: Vec<f64> = p.iter().map(|x| k * x).collect();
                let (ms, skipped_s) = mape(&sa, &sp).unwrap();
                prop_assert_eq!(skipped, skipped_s);
                prop_assert!((m - ms).abs() <= 1e-9 * (1.0 + m));
            }
        }
    }
}
