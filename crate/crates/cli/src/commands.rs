use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use gatewatch::cc4::{run_pipeline, Cc4Network, EventLogRecord, PipelineConfig, SymbolSchema};
use gatewatch::eval::{compare_models, CompareOptions};
use gatewatch::forecast::fit;
use gatewatch::ingest::{ingest as ingest_flows, to_series, COL_FWD_PKT_LEN_MEAN};
use gatewatch::monitor::{monitor_flows, rate_forecaster};
use gatewatch::series::{diagnose, split, MAX_IMPUTED_RUN};
use gatewatch::sim::{self, AttackKind, SimConfig};
use gatewatch::surge::{write_alerts, z_score, DEFAULT_CONFIDENCE};
use gatewatch::timefmt::format_iso;
use gatewatch::{Aggregator, DetectionMode, ForecasterConfig, TimeSeries};

use crate::config::{apply_model, RunConfig};
use crate::error::CliError;
use crate::{CompareArgs, DetectArgs, ForecastArgs, IngestArgs, InspectArgs, ModelArgs, SimulateArgs, StreamArgs};

const DEFAULT_SERIES_INTERVAL: i64 = 3600;
const DEFAULT_FORECAST_TRAIN_FRAC: f64 = 0.8;

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::data(format!("{}: {e}", dir.display())))
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

fn read_series(path: &Path) -> Result<TimeSeries, CliError> {
    Ok(TimeSeries::from_json(&read_text(path)?)?)
}

fn aggregator(flag: Option<&str>, cfg: Option<Aggregator>, default: Aggregator) -> Result<Aggregator, CliError> {
    match flag {
        Some(s) => s.parse().map_err(CliError::usage),
        None => Ok(cfg.unwrap_or(default)),
    }
}

fn confidence(flag: Option<f64>, cfg: &RunConfig, default: f64) -> Result<f64, CliError> {
    let c = flag.or(cfg.confidence).unwrap_or(default);
    z_score(c)?;
    Ok(c)
}

/// Applies model-related flags, then config keys, onto `base`.
fn forecaster(mut base: ForecasterConfig, args: &ModelArgs, cfg: &RunConfig) -> Result<ForecasterConfig, CliError> {
    if let Some(name) = args.model.as_deref().or(cfg.model.as_deref()) {
        apply_model(&mut base, name)?;
    }
    if let Some(p) = args.period.or(cfg.period) {
        base.hw_period = p;
    }
    if let Some(w) = args.window {
        base.ma_window = w;
    }
    if let Some(k) = args.timesteps {
        base.lstm_num_timesteps = k;
    }
    if let Some(seed) = args.seed.or(cfg.seed) {
        base.rng_seed = seed;
    }
    base.validate()?;
    Ok(base)
}

pub fn ingest(cfg: &RunConfig, a: IngestArgs) -> Result<(), CliError> {
    let value_col = a.value_col.as_deref().or(cfg.value_col.as_deref()).unwrap_or(COL_FWD_PKT_LEN_MEAN);
    let interval = a.interval.or(cfg.interval).unwrap_or(DEFAULT_SERIES_INTERVAL);
    let agg = aggregator(a.agg.as_deref(), cfg.aggregator, Aggregator::Mean)?;
    let (records, report) = ingest_flows(&a.input, value_col)?;
    let series = to_series(&records, interval, agg)?;
    create_dir(&a.out)?;
    write_text(&a.out.join("series.json"), &(series.to_json() + "\n"))?;
    write_json(&a.out.join("ingest_report.json"), &report)?;
    println!("{} clean rows -> {} points at {}s", report.clean_rows(), series.len(), interval);
    Ok(())
}

pub fn inspect(_cfg: &RunConfig, a: InspectArgs) -> Result<(), CliError> {
    let series = read_series(&a.input)?;
    let candidates: Vec<usize> = if a.period.is_empty() {
        let day = (86_400 / series.interval_secs()) as usize;
        [day, 7 * day].into_iter().filter(|&p| p >= 2 && 3 * p <= series.len()).collect()
    } else {
        a.period.clone()
    };
    let report = diagnose(&series, &candidates)?;
    write_json(&a.out, &report)?;
    println!("seasonal={} period={:?} stationary={}", report.seasonal, report.dominant_period, report.stationary);
    Ok(())
}

#[derive(Serialize)]
struct ForecastOutput<'a> {
    model: String,
    train_len: usize,
    test_len: usize,
    confidence: f64,
    z: f64,
    #[serde(flatten)]
    result: &'a gatewatch::ForecastResult,
}

fn csv_num(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

pub fn forecast(cfg: &RunConfig, a: ForecastArgs) -> Result<(), CliError> {
    let series = read_series(&a.input)?;
    let fcfg = forecaster(cfg.forecaster.clone().unwrap_or_default(), &a.model, cfg)?;
    let conf = confidence(a.confidence, cfg, DEFAULT_CONFIDENCE)?;
    let z = z_score(conf)?;
    let train_frac = a.model.train_frac.or(cfg.train_frac).unwrap_or(DEFAULT_FORECAST_TRAIN_FRAC);
    let horizon = a.horizon.or(cfg.horizon).unwrap_or(0);
    let (train, test) = split(&series, train_frac)?;
    let model = fit(&fcfg, &train.impute_short_gaps(MAX_IMPUTED_RUN))?;
    let sigma = model.residual_std();

    let mut csv = String::from("t,actual,predicted,lower,upper\n");
    let mut cursor = model.cursor();
    let mut row = |t, actual: Option<f64>, p: f64| {
        csv.push_str(&format!("{},{},{},{},{}\n", format_iso(t), csv_num(actual), p, p - z * sigma, p + z * sigma));
    };
    for (i, actual) in test.options().into_iter().enumerate() {
        let p = cursor.predict();
        row(test.timestamp(i), actual, p);
        cursor.advance(actual);
    }
    for h in 0..horizon {
        let p = cursor.predict();
        row(test.timestamp(test.len() - 1) + test.interval() * (h as i32 + 1), None, p);
        cursor.advance(None);
    }

    let result = model.forecast_result(test.len() + horizon)?;
    let output = ForecastOutput { model: fcfg.label(), train_len: train.len(), test_len: test.len(), confidence: conf, z, result: &result };
    create_dir(&a.out)?;
    write_json(&a.out.join("forecast.json"), &output)?;
    write_text(&a.out.join("forecast.csv"), &csv)?;
    write_text(&a.out.join("model.json"), &(model.to_json() + "\n"))?;
    println!("{}: residual std {sigma:.6}, {} test points, horizon {horizon}", fcfg.label(), test.len());
    Ok(())
}

pub fn compare(cfg: &RunConfig, a: CompareArgs) -> Result<(), CliError> {
    let series = read_series(&a.input)?;
    let base = forecaster(cfg.forecaster.clone().unwrap_or_default(), &ModelArgs { model: None, ..a.model }, cfg)?;
    let mut configs = Vec::new();
    for name in a.models.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let mut c = base.clone();
        apply_model(&mut c, name)?;
        if name != "persistence" && a.model.window.is_none() {
            c.ma_window = c.hw_period;
        }
        c.lt_seasonal_dummies = true;
        c.validate()?;
        configs.push(c);
    }
    let train_frac = a.model.train_frac.or(cfg.train_frac).unwrap_or(DEFAULT_FORECAST_TRAIN_FRAC);
    let report = compare_models(&configs, &series, train_frac, CompareOptions { record_timing: a.timing })?;
    let table = report.to_table();
    create_dir(&a.out)?;
    write_text(&a.out.join("report.json"), &(report.to_json() + "\n"))?;
    write_text(&a.out.join("report.txt"), &table)?;
    print!("{table}");
    Ok(())
}

pub fn detect(cfg: &RunConfig, a: DetectArgs) -> Result<(), CliError> {
    let value_col = a.value_col.as_deref().or(cfg.value_col.as_deref()).unwrap_or(COL_FWD_PKT_LEN_MEAN);
    let mut m = cfg.monitor.clone().unwrap_or_default();
    if let Some(iv) = a.interval.or(cfg.interval) {
        m.interval_secs = iv;
        if cfg.monitor.is_none() {
            m.forecaster = rate_forecaster(iv);
        }
    }
    m.aggregator = aggregator(a.agg.as_deref(), cfg.aggregator, m.aggregator)?;
    m.forecaster = forecaster(cfg.forecaster.clone().unwrap_or(m.forecaster), &a.model, cfg)?;
    m.surge.confidence = confidence(a.confidence, cfg, m.surge.confidence)?;
    if let Some(mode) = a.mode.as_deref() {
        m.surge.mode = mode.parse::<DetectionMode>().map_err(CliError::usage)?;
    } else if let Some(mode) = cfg.mode {
        m.surge.mode = mode;
    }
    if let Some(f) = a.model.train_frac.or(cfg.train_frac) {
        m.train_fraction = f;
    }
    if a.one_sided {
        m.surge.two_sided = false;
    }
    if a.gateway {
        m.per_source = false;
    }
    let (records, _) = ingest_flows(&a.input, value_col)?;
    let report = monitor_flows(&records, &m)?;
    let mut out = BufWriter::new(File::create(&a.out).map_err(|e| CliError::data(format!("{}: {e}", a.out.display())))?);
    write_alerts(&report.alerts, &mut out)?;
    out.flush()?;
    for s in report.sources.iter().filter(|s| s.error.is_some()) {
        eprintln!("warning: {}: {}", s.source, s.error.as_deref().unwrap_or_default());
    }
    println!("{} alerts over {} sources", report.alerts.len(), report.sources.len());
    Ok(())
}

fn scenario(name: &str, seed: u64) -> Result<SimConfig, CliError> {
    Ok(match name {
        "clean" => sim::default_config(seed),
        "flood" => sim::default_flood(seed),
        "silence" => sim::default_silence(seed),
        "sybil" => sim::default_sybil(seed),
        "mixed" => {
            let mut c = sim::default_flood(seed);
            c.attacks.extend(sim::default_silence(seed).attacks);
            c.attacks.extend(sim::default_sybil(seed).attacks);
            c
        }
        other => return Err(CliError::usage(format!("unknown scenario {other:?} (clean|flood|silence|sybil|mixed)"))),
    })
}

pub fn simulate(cfg: &RunConfig, a: SimulateArgs) -> Result<(), CliError> {
    let seed = a.seed.or(cfg.seed).unwrap_or(42);
    let mut sc = match &cfg.simulation {
        Some(s) => s.clone(),
        None => scenario(&a.scenario, seed)?,
    };
    if a.seed.is_some() || cfg.simulation.is_none() {
        sc.seed = seed;
    }
    if let Some(k) = a.magnitude {
        sc.attacks.iter_mut().filter(|s| s.kind == AttackKind::UdpFlood).for_each(|s| s.magnitude = k);
    }
    let trace = sim::generate_trace(&sc)?;
    trace.write_to_dir(&a.out)?;
    write_json(&a.out.join("sim_config.json"), &sc)?;
    println!("{} flows, {} events, {} labels -> {}", trace.flows.len(), trace.events.len(), trace.labels.len(), a.out.display());
    Ok(())
}

fn train_network(path: &Path, schema: &SymbolSchema, radius: usize) -> Result<Cc4Network, CliError> {
    let text = read_text(path)?;
    let mut labeled = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let rec = EventLogRecord::from_labeled_json_line(line).map_err(|e| CliError::data(format!("{}:{}: {e}", path.display(), i + 1)))?;
        labeled.push(rec);
    }
    let samples = sim::training_samples(labeled.iter().map(|(e, c)| (e, *c)), schema)?;
    Ok(Cc4Network::train(&samples, radius)?)
}

pub fn stream(cfg: &RunConfig, a: StreamArgs) -> Result<(), CliError> {
    let schema = match &a.schema {
        Some(p) => SymbolSchema::from_json(&read_text(p)?)?,
        None => sim::event_schema(),
    };
    let radius = a.radius.or(cfg.radius).unwrap_or(1);
    let network = match (&a.train, &a.network) {
        (Some(train), _) => train_network(train, &schema, radius)?,
        (None, Some(p)) => Cc4Network::from_json(&read_text(p)?)?,
        (None, None) => return Err(CliError::usage("either --train or --network is required")),
    };
    if network.width() != schema.total_bits() {
        return Err(CliError::usage(format!("network width {} does not match schema width {}", network.width(), schema.total_bits())));
    }
    if let Some(p) = &a.save_network {
        write_text(p, &(network.to_json() + "\n"))?;
    }
    let mut pc: PipelineConfig = cfg.pipeline.clone().unwrap_or_default();
    if let Some(iv) = a.interval.or(cfg.interval) {
        pc.interval_secs = iv;
        if cfg.pipeline.is_none() {
            pc.forecaster = rate_forecaster(iv);
        }
    }
    if let Some(seed) = cfg.seed {
        pc.forecaster.rng_seed = seed;
    }
    let conf = confidence(a.confidence, cfg, pc.surge.confidence)?;
    pc.surge.confidence = conf;
    pc.identity.confidence = conf;
    pc.strict |= a.strict;

    let input = File::open(&a.input).map_err(|e| CliError::data(format!("{}: {e}", a.input.display())))?;
    let lines = BufReader::new(input).lines();
    let mut out = BufWriter::new(File::create(&a.out).map_err(|e| CliError::data(format!("{}: {e}", a.out.display())))?);
    let summary = run_pipeline(lines, &schema, &network, &pc, |alert| writeln!(out, "{}", alert.to_json_line()))?;
    out.flush()?;
    println!("{}", serde_json::to_string(&summary)?);
    Ok(())
}
