use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use gatewatch::cc4::{run_pipeline, PipelineConfig};
use gatewatch::forecast::{self, lstm::LstmParams};
use gatewatch::monitor::{monitor_flows, MonitorConfig};
use gatewatch::sim::{self, generate_trace};
use gatewatch::{Cc4Network, ForecasterConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn seasonal(n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    (0..n)
        .map(|t| 10.0 + (t as f64 * std::f64::consts::TAU / 24.0).sin() + rng.random_range(-0.3..0.3))
        .collect()
}

fn forecasters(c: &mut Criterion) {
    let values = seasonal(480);
    c.bench_function("holt-winters fit (480 points, grid search)", |b| {
        let cfg = ForecasterConfig::holt_winters(24);
        b.iter(|| forecast::fit_values(&cfg, &values).unwrap());
    });
    c.bench_function("lstm fit (480 points, 48 steps, 1 epoch)", |b| {
        let cfg = ForecasterConfig::lstm(48);
        b.iter(|| forecast::fit_values(&cfg, &values).unwrap());
    });

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let params = LstmParams::init(10, 1, &mut rng);
    let windows: Vec<(Vec<f64>, f64)> =
        (0..128).map(|i| (values[i..i + 48].to_vec(), values[i + 48])).collect();
    let batch: Vec<(&[f64], f64)> = windows.iter().map(|(w, y)| (w.as_slice(), *y)).collect();
    c.bench_function("lstm loss and gradient (batch 128, 48 steps)", |b| {
        b.iter(|| params.loss_and_grad(&batch, None));
    });
}

fn detection(c: &mut Criterion) {
    let flood = generate_trace(&sim::default_flood(42)).unwrap();
    c.bench_function("simulate flood trace", |b| {
        let cfg = sim::default_flood(42);
        b.iter(|| generate_trace(&cfg).unwrap());
    });
    c.bench_function("monitor flows (flood trace)", |b| {
        let cfg = MonitorConfig::default();
        b.iter(|| monitor_flows(&flood.flows, &cfg).unwrap());
    });

    let schema = sim::event_schema();
    let pairs: Vec<_> = flood.events.iter().zip(flood.event_classes.iter().copied()).collect();
    let samples = sim::training_samples(pairs.iter().map(|(e, c)| (*e, *c)), &schema).unwrap();
    c.bench_function("cc4 train (radius 1)", |b| {
        b.iter(|| Cc4Network::train(&samples, 1).unwrap());
    });
    let net = Cc4Network::train(&samples, 1).unwrap();
    c.bench_function("cc4 classify (every training sample)", |b| {
        b.iter(|| samples.iter().filter(|(bits, _)| net.classify(bits).is_ok()).count());
    });

    let lines: Vec<String> = flood.events.iter().map(|e| e.to_json_line()).collect();
    c.bench_function("stream pipeline (flood event log)", |b| {
        b.iter_batched(
            || lines.clone(),
            |lines| run_pipeline(lines.into_iter().map(Ok), &schema, &net, &PipelineConfig::default(), |_| Ok(())).unwrap(),
            BatchSize::LargeInput,
        );
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = forecasters, detection
}
criterion_main!(benches);
