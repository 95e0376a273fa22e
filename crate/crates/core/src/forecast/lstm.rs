//! Single-layer LSTM with a linear head, trained by backpropagation through
//! time and plain minibatch SGD over shuffled chunks of windows.
//!
//! Gate order in every weight block is input, forget, candidate, output.
//! All parameters live in one flat vector so the optimizer, the gradient
//! check and serialization can treat them uniformly:
//!
//! ```text
//! [ w_x: 4H x D | w_h: 4H x H | bias: 4H | head_w: H | head_b: 1 ]
//! ```

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ForecastError;
use crate::series::Windows;

/// Trainable weights in the recurrent layer: `4 * units * (units + input_dim + 1)`.
pub fn lstm_param_count(units: usize, input_dim: usize) -> usize {
    4 * units * (units + input_dim + 1)
}

/// Recurrent layer plus the one-output dense head.
pub fn lstm_total_param_count(units: usize, input_dim: usize) -> usize {
    lstm_param_count(units, input_dim) + units + 1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    pub units: usize,
    pub input_dim: usize,
    pub flat: Vec<f64>,
}

const GATES: usize = 4;
const GATE_I: usize = 0;
const GATE_F: usize = 1;
const GATE_G: usize = 2;
const GATE_O: usize = 3;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl LstmParams {
    pub fn zeros(units: usize, input_dim: usize) -> Self {
        LstmParams { units, input_dim, flat: vec![0.0; lstm_total_param_count(units, input_dim)] }
    }

    /// Glorot-uniform weight matrices, zero biases except the forget gate at 1.
    pub fn init(units: usize, input_dim: usize, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(units, input_dim);
        let h4 = GATES * units;
        let lim_x = (6.0 / (input_dim + h4) as f64).sqrt();
        let lim_h = (6.0 / (units + h4) as f64).sqrt();
        let lim_head = (6.0 / (units + 1) as f64).sqrt();
        p.w_x_mut().iter_mut().for_each(|w| *w = rng.random_range(-lim_x..lim_x));
        p.w_h_mut().iter_mut().for_each(|w| *w = rng.random_range(-lim_h..lim_h));
        let bias = p.bias_mut();
        bias[GATE_F * units..(GATE_F + 1) * units].fill(1.0);
        p.head_w_mut().iter_mut().for_each(|w| *w = rng.random_range(-lim_head..lim_head));
        p
    }

    pub fn len(&self) -> usize {
        self.flat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flat.is_empty()
    }

    fn offsets(&self) -> [usize; 5] {
        let (h, d) = (self.units, self.input_dim);
        let wx = 0;
        let wh = wx + GATES * h * d;
        let b = wh + GATES * h * h;
        let hw = b + GATES * h;
        let hb = hw + h;
        [wx, wh, b, hw, hb]
    }

    pub fn w_x(&self) -> &[f64] {
        let o = self.offsets();
        &self.flat[o[0]..o[1]]
    }

    pub fn w_h(&self) -> &[f64] {
        let o = self.offsets();
        &self.flat[o[1]..o[2]]
    }

    pub fn bias(&self) -> &[f64] {
        let o = self.offsets();
        &self.flat[o[2]..o[3]]
    }

    pub fn head_w(&self) -> &[f64] {
        let o = self.offsets();
        &self.flat[o[3]..o[4]]
    }

    pub fn head_b(&self) -> f64 {
        self.flat[self.offsets()[4]]
    }

    fn w_x_mut(&mut self) -> &mut [f64] {
        let o = self.offsets();
        &mut self.flat[o[0]..o[1]]
    }

    fn w_h_mut(&mut self) -> &mut [f64] {
        let o = self.offsets();
        &mut self.flat[o[1]..o[2]]
    }

    fn bias_mut(&mut self) -> &mut [f64] {
        let o = self.offsets();
        &mut self.flat[o[2]..o[3]]
    }

    fn head_w_mut(&mut self) -> &mut [f64] {
        let o = self.offsets();
        &mut self.flat[o[3]..o[4]]
    }

    /// Inference: no dropout.
    pub fn predict(&self, window: &[f64]) -> f64 {
        let trace = self.forward(window);
        let h = trace.last_hidden();
        self.head_b() + self.head_w().iter().zip(h).map(|(w, x)| w * x).sum::<f64>()
    }

    /// Runs the recurrence over `window` (length `T * input_dim`), keeping
    /// every intermediate needed for backpropagation.
    pub fn forward(&self, window: &[f64]) -> ForwardTrace {
        let (h, d) = (self.units, self.input_dim);
        assert_eq!(window.len() % d, 0, "window length must be a multiple of input_dim");
        let steps = window.len() / d;
        let (w_x, w_h, bias) = (self.w_x(), self.w_h(), self.bias());
        let mut trace = ForwardTrace {
            units: h,
            steps,
            gates: vec![0.0; steps * GATES * h],
            cells: vec![0.0; (steps + 1) * h],
            hidden: vec![0.0; (steps + 1) * h],
        };
        let mut z = vec![0.0; GATES * h];
        for t in 0..steps {
            let x = &window[t * d..(t + 1) * d];
            let h_prev = &trace.hidden[t * h..(t + 1) * h];
            for (r, zr) in z.iter_mut().enumerate() {
                let mut acc = bias[r];
                for (k, xk) in x.iter().enumerate() {
                    acc += w_x[r * d + k] * xk;
                }
                let row = &w_h[r * h..(r + 1) * h];
                for (w, hp) in row.iter().zip(h_prev) {
                    acc += w * hp;
                }
                *zr = acc;
            }
            let gates = &mut trace.gates[t * GATES * h..(t + 1) * GATES * h];
            for j in 0..h {
                gates[GATE_I * h + j] = sigmoid(z[GATE_I * h + j]);
                gates[GATE_F * h + j] = sigmoid(z[GATE_F * h + j]);
                gates[GATE_G * h + j] = z[GATE_G * h + j].tanh();
                gates[GATE_O * h + j] = sigmoid(z[GATE_O * h + j]);
            }
            for j in 0..h {
                let c_prev = trace.cells[t * h + j];
                let c = gates[GATE_F * h + j] * c_prev + gates[GATE_I * h + j] * gates[GATE_G * h + j];
                trace.cells[(t + 1) * h + j] = c;
                trace.hidden[(t + 1) * h + j] = gates[GATE_O * h + j] * c.tanh();
            }
        }
        trace
    }

    /// Mean squared error over a batch and its gradient. `masks[b]` is the
    /// dropout multiplier vector for sample `b` (already scaled by `1/(1-p)`),
    /// or `None` for no dropout.
    pub fn loss_and_grad(&self, batch: &[(&[f64], f64)], masks: Option<&[Vec<f64>]>) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.len()];
        let mut loss = 0.0;
        let scale = 1.0 / batch.len() as f64;
        for (b, &(window, target)) in batch.iter().enumerate() {
            let mask = masks.map(|m| m[b].as_slice());
            loss += self.accumulate_sample(window, target, mask, scale, &mut grad);
        }
        (loss * scale, grad)
    }

    fn accumulate_sample(&self, window: &[f64], target: f64, mask: Option<&[f64]>, scale: f64, grad: &mut [f64]) -> f64 {
        let (h, d) = (self.units, self.input_dim);
        let o = self.offsets();
        let trace = self.forward(window);
        let h_last = trace.last_hidden();
        let dropped: Vec<f64> = match mask {
            Some(m) => h_last.iter().zip(m).map(|(x, k)| x * k).collect(),
            None => h_last.to_vec(),
        };
        let y = self.head_b() + self.head_w().iter().zip(&dropped).map(|(w, x)| w * x).sum::<f64>();
        let err = y - target;
        let dy = 2.0 * err * scale;

        for j in 0..h {
            grad[o[3] + j] += dy * dropped[j];
        }
        grad[o[4]] += dy;

        let head_w = self.head_w();
        let mut dh: Vec<f64> = (0..h).map(|j| dy * head_w[j] * mask.map_or(1.0, |m| m[j])).collect();
        let mut dc = vec![0.0; h];
        let mut dz = vec![0.0; GATES * h];
        let w_h = self.w_h();
        for t in (0..trace.steps).rev() {
            let gates = &trace.gates[t * GATES * h..(t + 1) * GATES * h];
            let c_prev = &trace.cells[t * h..(t + 1) * h];
            let c = &trace.cells[(t + 1) * h..(t + 2) * h];
            for j in 0..h {
                let (gi, gf, gg, go) = (gates[GATE_I * h + j], gates[GATE_F * h + j], gates[GATE_G * h + j], gates[GATE_O * h + j]);
                let tc = c[j].tanh();
                let d_o = dh[j] * tc;
                let dcj = dc[j] + dh[j] * go * (1.0 - tc * tc);
                dz[GATE_I * h + j] = dcj * gg * gi * (1.0 - gi);
                dz[GATE_F * h + j] = dcj * c_prev[j] * gf * (1.0 - gf);
                dz[GATE_G * h + j] = dcj * gi * (1.0 - gg * gg);
                dz[GATE_O * h + j] = d_o * go * (1.0 - go);
                dc[j] = dcj * gf;
            }
            let x = &window[t * d..(t + 1) * d];
            let h_prev = &trace.hidden[t * h..(t + 1) * h];
            for (r, &dzr) in dz.iter().enumerate() {
                if dzr == 0.0 {
                    continue;
                }
                for k in 0..d {
                    grad[o[0] + r * d + k] += dzr * x[k];
                }
                let row = &mut grad[o[1] + r * h..o[1] + (r + 1) * h];
                for (g, hp) in row.iter_mut().zip(h_prev) {
                    *g += dzr * hp;
                }
                grad[o[2] + r] += dzr;
            }
            for (k, dhk) in dh.iter_mut().enumerate() {
                *dhk = dz.iter().enumerate().map(|(r, dzr)| dzr * w_h[r * h + k]).sum();
            }
        }
        err * err
    }
}

/// Per-step activations from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    units: usize,
    steps: usize,
    /// `steps x [i, f, g, o] x units`
    gates: Vec<f64>,
    /// `(steps + 1) x units`, index 0 is the zero initial state.
    cells: Vec<f64>,
    hidden: Vec<f64>,
}

impl ForwardTrace {
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn last_hidden(&self) -> &[f64] {
        &self.hidden[self.steps * self.units..]
    }

    pub fn last_cell(&self) -> &[f64] {
        &self.cells[self.steps * self.units..]
    }

    /// Gate activations `[i, f, g, o]` at step `t`.
    pub fn gates(&self, t: usize) -> [&[f64]; 4] {
        let h = self.units;
        let g = &self.gates[t * GATES * h..(t + 1) * GATES * h];
        [&g[..h], &g[h..2 * h], &g[2 * h..3 * h], &g[3 * h..]]
    }

    pub fn hidden(&self, t: usize) -> &[f64] {
        &self.hidden[(t + 1) * self.units..(t + 2) * self.units]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainSettings {
    pub units: usize,
    pub dropout: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub num_chunks: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChunkLoss {
    pub epoch: usize,
    pub chunk: usize,
    /// Mean pre-update batch loss over the chunk.
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmTraining {
    pub initial: LstmParams,
    pub params: LstmParams,
    pub loss_trace: Vec<ChunkLoss>,
}

/// Contiguous chunk boundaries, sizes differing by at most one.
fn chunk_bounds(n: usize, chunks: usize) -> Vec<(usize, usize)> {
    let chunks = chunks.clamp(1, n.max(1));
    (0..chunks).map(|c| (c * n / chunks, (c + 1) * n / chunks)).collect()
}

/// Chunked minibatch SGD. Windows are split into `num_chunks` contiguous
/// chunks; each epoch walks the chunks in the current order, shuffles the
/// samples inside each chunk and takes one SGD step per minibatch. The
/// chunk order is reshuffled after every epoch. Inputs must already be
/// scaled to `[0, 1]`.
pub fn train_lstm_chunked(settings: &TrainSettings, windows: &Windows<'_>) -> Result<LstmTraining, ForecastError> {
    if windows.is_empty() {
        return Err(ForecastError::SeriesTooShort { len: 0, required: 1 });
    }
    if settings.batch_size == 0 || settings.units == 0 || !(0.0..1.0).contains(&settings.dropout) {
        return Err(ForecastError::InvalidConfig("lstm units, batch size and dropout must be valid".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let initial = LstmParams::init(settings.units, 1, &mut rng);
    let mut params = initial.clone();
    let bounds = chunk_bounds(windows.len(), settings.num_chunks);
    let mut order: Vec<usize> = (0..bounds.len()).collect();
    let keep = 1.0 - settings.dropout;
    let mut loss_trace = Vec::new();

    for epoch in 0..settings.epochs {
        for &chunk in &order {
            let (lo, hi) = bounds[chunk];
            let mut idx: Vec<usize> = (lo..hi).collect();
            idx.shuffle(&mut rng);
            let mut total = 0.0;
            for batch_idx in idx.chunks(settings.batch_size) {
                let batch: Vec<(&[f64], f64)> = batch_idx.iter().map(|&i| (windows.window(i), windows.target(i))).collect();
                let masks: Option<Vec<Vec<f64>>> = (settings.dropout > 0.0).then(|| {
                    batch_idx
                        .iter()
                        .map(|_| {
                            (0..settings.units)
                                .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                                .collect()
                        })
                        .collect()
                });
                let (loss, grad) = params.loss_and_grad(&batch, masks.as_deref());
                if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                    return Err(ForecastError::NonFiniteLoss { epoch, chunk });
                }
                total += loss * batch.len() as f64;
                for (p, g) in params.flat.iter_mut().zip(&grad) {
                    *p -= settings.learning_rate * g;
                }
            }
            let loss = total / (hi - lo) as f64;
            loss_trace.push(ChunkLoss { epoch, chunk, loss });
        }
        order.shuffle(&mut rng);
    }
    if params.flat.iter().any(|p| !p.is_finite()) {
        return Err(ForecastError::NonFiniteLoss { epoch: settings.epochs, chunk: 0 });
    }
    Ok(LstmTraining { initial, params, loss_trace })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn settings() -> TrainSettings {
        TrainSettings {
            units: 3,
            dropout: 0.0,
            learning_rate: 0.01,
            batch_size: 4,
            epochs: 1,
            num_chunks: 1,
            seed: 11,
        }
    }

    #[test]
    fn parameter_accounting() {
        assert_eq!(lstm_param_count(10, 1), 480);
        assert_eq!(lstm_param_count(1, 1), 12);
        assert_eq!(lstm_total_param_count(10, 1), 491);
        // The familiar 4*units*(units+2) for a single input feature.
        for u in 1..20 {
            assert_eq!(lstm_param_count(u, 1), 4 * u * (u + 2));
        }
        let p = LstmParams::zeros(10, 1);
        assert_eq!(p.len(), 491);
        assert_eq!(p.w_x().len(), 40);
        assert_eq!(p.w_h().len(), 400);
        assert_eq!(p.bias().len(), 40);
        assert_eq!(p.head_w().len(), 10);
    }

    #[test]
    fn init_sets_forget_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = LstmParams::init(4, 1, &mut rng);
        assert_eq!(&p.bias()[4..8], &[1.0; 4]);
        assert!(p.bias()[..4].iter().chain(&p.bias()[8..]).all(|&b| b == 0.0));
        let lim = (6.0f64 / 17.0).sqrt();
        assert!(p.w_h().iter().all(|w| w.abs() <= lim));
    }

    #[test]
    fn activations_stay_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = LstmParams::init(10, 1, &mut rng);
        let window: Vec<f64> = (0..30).map(|t| (t as f64 * 0.7).sin() * 5.0).collect();
        let tr = p.forward(&window);
        assert_eq!(tr.last_hidden().len(), 10);
        assert_eq!(tr.last_cell().len(), 10);
        for t in 0..tr.steps() {
            let [i, f, g, o] = tr.gates(t);
            for j in 0..10 {
                assert!(i[j] > 0.0 && i[j] < 1.0);
                assert!(f[j] > 0.0 && f[j] < 1.0);
                assert!(o[j] > 0.0 && o[j] < 1.0);
                assert!(g[j] > -1.0 && g[j] < 1.0);
                assert!(tr.hidden(t)[j] > -1.0 && tr.hidden(t)[j] < 1.0);
            }
        }
    }

    #[test]
    fn zero_learning_rate_leaves_params() {
        let values: Vec<f64> = (0..40).map(|t| (t as f64 * 0.3).sin() * 0.5 + 0.5).collect();
        let w = Windows::new(&values, 5).unwrap();
        let s = TrainSettings { learning_rate: 0.0, dropout: 0.2, ..settings() };
        let out = train_lstm_chunked(&s, &w).unwrap();
        assert_eq!(out.initial, out.params);
        assert_eq!(out.loss_trace.len(), 1);
    }

    #[test]
    fn training_is_bit_deterministic() {
        let values: Vec<f64> = (0..200).map(|t| (t as f64 * 0.3).sin() * 0.5 + 0.5).collect();
        let w = Windows::new(&values, 8).unwrap();
        let s = TrainSettings { epochs: 3, num_chunks: 4, dropout: 0.2, ..settings() };
        let a = train_lstm_chunked(&s, &w).unwrap();
        let b = train_lstm_chunked(&s, &w).unwrap();
        assert_eq!(a.params.flat.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), b.params.flat.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
        let la: Vec<u64> = a.loss_trace.iter().map(|l| l.loss.to_bits()).collect();
        let lb: Vec<u64> = b.loss_trace.iter().map(|l| l.loss.to_bits()).collect();
        assert_eq!(la, lb);
        assert_eq!(a.loss_trace.len(), 12);
    }

    #[test]
    fn divergence_is_reported() {
        let values: Vec<f64> = (0..60).map(|t| (t % 7) as f64).collect();
        let w = Windows::new(&values, 5).unwrap();
        let s = TrainSettings { learning_rate: 1e12, ..settings() };
        assert!(matches!(train_lstm_chunked(&s, &w), Err(ForecastError::NonFiniteLoss { .. })));
    }

    #[test]
    fn chunking_is_contiguous_and_even() {
        assert_eq!(chunk_bounds(10, 3), vec![(0, 3), (3, 6), (6, 10)]);
        assert_eq!(chunk_bounds(2, 5), vec![(0, 1), (1, 2)]);
    }

    #[test]
    fn sgd_reduces_loss_on_a_learnable_series() {
        let values: Vec<f64> = (0..400).map(|t| 0.5 + 0.4 * (t as f64 * std::f64::consts::PI / 6.0).sin()).collect();
        let w = Windows::new(&values, 12).unwrap();
        let s = TrainSettings { units: 6, learning_rate: 0.1, batch_size: 16, epochs: 20, num_chunks: 2, ..settings() };
        let out = train_lstm_chunked(&s, &w).unwrap();
        let first = out.loss_trace.first().unwrap().loss;
        let last = out.loss_trace.last().unwrap().loss;
        assert!(last < first * 0.5, "{first} -> {last}");
    }
}
