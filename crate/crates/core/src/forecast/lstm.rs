//! Single-layer LSTM with a linear read-out, trained by full-batch gradient
//! descent with hand-written backpropagation through time.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_series, windows, ForecasterSpec, ModelKind, Standardization, TrainedModel};
use crate::error::{Error, Result};

/// Offsets into the flat parameter vector for hidden size `H` (scalar input):
///
/// * `[0, 4H(1+H))`: gate weights, row-major `4H × (1+H)`. Rows are grouped
///   by gate in the order input, forget, candidate, output; column 0 is the
///   input weight, columns `1..=H` the recurrent weights.
/// * `[4H(1+H), 4H(2+H))`: gate biases, same row order.
/// * next `H`: read-out weights; last entry: read-out bias.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LstmLayout {
    pub hidden: usize,
}

/// Per-step activations of one unrolled window, flat: for each step
/// `[x, h_prev(H), c_prev(H), gates(4H), tanh(c)(H)]`.
#[derive(Default)]
struct Trace {
    buf: Vec<f64>,
}

impl Trace {
    fn stride(h: usize) -> usize {
        1 + 7 * h
    }
}

impl LstmLayout {
    pub fn new(hidden: usize) -> Self {
        Self { hidden }
    }

    pub fn len(&self) -> usize {
        self.bias_offset() + 4 * self.hidden + self.hidden + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn cols(&self) -> usize {
        1 + self.hidden
    }

    fn bias_offset(&self) -> usize {
        4 * self.hidden * self.cols()
    }

    fn head_offset(&self) -> usize {
        self.bias_offset() + 4 * self.hidden
    }

    /// Uniform `±1/√H` weights, zero biases except a unit forget bias.
    pub fn init_parameters(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = 1.0 / (self.hidden as f64).sqrt();
        let mut p = vec![0.0; self.len()];
        for w in &mut p[..self.bias_offset()] {
            *w = rng.gen_range(-k..k);
        }
        let h = self.hidden;
        for b in &mut p[self.bias_offset() + h..self.bias_offset() + 2 * h] {
            *b = 1.0;
        }
        let head = self.head_offset();
        for w in &mut p[head..head + h] {
            *w = rng.gen_range(-k..k);
        }
        p
    }

    fn run(&self, params: &[f64], window: &[f64], mut trace: Option<&mut Trace>) -> (f64, Vec<f64>) {
        let h = self.hidden;
        let cols = self.cols();
        let bias = &params[self.bias_offset()..self.head_offset()];
        let mut hs = vec![0.0; h];
        let mut cs = vec![0.0; h];
        let mut gates = vec![0.0; 4 * h];
        let mut c_tanh = vec![0.0; h];
        if let Some(t) = trace.as_deref_mut() {
            t.buf.clear();
        }
        for &x in window {
            for (r, g) in gates.iter_mut().enumerate() {
                let row = &params[r * cols..(r + 1) * cols];
                let z = bias[r] + row[0] * x + row[1..].iter().zip(&hs).map(|(w, v)| w * v).sum::<f64>();
                *g = if (2 * h..3 * h).contains(&r) { z.tanh() } else { sigmoid(z) };
            }
            if let Some(t) = trace.as_deref_mut() {
                t.buf.push(x);
                t.buf.extend_from_slice(&hs);
                t.buf.extend_from_slice(&cs);
                t.buf.extend_from_slice(&gates);
            }
            for k in 0..h {
                let (i, f, g, o) = (gates[k], gates[h + k], gates[2 * h + k], gates[3 * h + k]);
                cs[k] = f * cs[k] + i * g;
                c_tanh[k] = cs[k].tanh();
                hs[k] = o * c_tanh[k];
            }
            if let Some(t) = trace.as_deref_mut() {
                t.buf.extend_from_slice(&c_tanh);
            }
        }
        let head = &params[self.head_offset()..];
        let y = head[h] + head[..h].iter().zip(&hs).map(|(w, v)| w * v).sum::<f64>();
        (y, hs)
    }

    pub fn predict(&self, params: &[f64], window: &[f64]) -> f64 {
        self.run(params, window, None).0
    }

    /// Mean squared one-step error over `(window, target)` pairs.
    pub fn loss<'a>(&self, params: &[f64], data: impl IntoIterator<Item = (&'a [f64], f64)>) -> f64 {
        let mut sum = 0.0;
        let mut n = 0usize;
        for (w, t) in data {
            let e = self.predict(params, w) - t;
            sum += e * e;
            n += 1;
        }
        sum / n.max(1) as f64
    }

    /// Mean squared error and its gradient with respect to every parameter.
    pub fn loss_and_gradient<'a>(
        &self,
        params: &[f64],
        data: impl IntoIterator<Item = (&'a [f64], f64)>,
    ) -> (f64, Vec<f64>) {
        let data: Vec<_> = data.into_iter().collect();
        let n = data.len().max(1) as f64;
        let h = self.hidden;
        let cols = self.cols();
        let (b_off, head_off) = (self.bias_offset(), self.head_offset());
        let mut grad = vec![0.0; self.len()];
        let mut loss = 0.0;
        let mut trace = Trace::default();
        let stride = Trace::stride(h);
        let mut dz = vec![0.0; 4 * h];
        let mut dh_prev = vec![0.0; h];

        for (window, target) in data {
            let (y, h_last) = self.run(params, window, Some(&mut trace));
            let err = y - target;
            loss += err * err;
            let dy = 2.0 * err / n;

            grad[head_off + h] += dy;
            for k in 0..h {
                grad[head_off + k] += dy * h_last[k];
            }
            let mut dh: Vec<f64> = params[head_off..head_off + h].iter().map(|w| dy * w).collect();
            let mut dc = vec![0.0; h];

            for step in trace.buf.chunks_exact(stride).rev() {
                let x = step[0];
                let h_prev = &step[1..1 + h];
                let c_prev = &step[1 + h..1 + 2 * h];
                let g = &step[1 + 2 * h..1 + 6 * h];
                let c_tanh = &step[1 + 6 * h..];
                for k in 0..h {
                    let (i, f, gg, o) = (g[k], g[h + k], g[2 * h + k], g[3 * h + k]);
                    let tc = c_tanh[k];
                    let d_o = dh[k] * tc;
                    let dck = dc[k] + dh[k] * o * (1.0 - tc * tc);
                    dz[k] = dck * gg * i * (1.0 - i);
                    dz[h + k] = dck * c_prev[k] * f * (1.0 - f);
                    dz[2 * h + k] = dck * i * (1.0 - gg * gg);
                    dz[3 * h + k] = d_o * o * (1.0 - o);
                    dc[k] = dck * f;
                }
                dh_prev.iter_mut().for_each(|v| *v = 0.0);
                for (r, &d) in dz.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let row = r * cols;
                    grad[b_off + r] += d;
                    grad[row] += d * x;
                    let w = &params[row + 1..row + cols];
                    let gw = &mut grad[row + 1..row + cols];
                    for k in 0..h {
                        gw[k] += d * h_prev[k];
                        dh_prev[k] += d * w[k];
                    }
                }
                std::mem::swap(&mut dh, &mut dh_prev);
            }
        }
        (loss / n, grad)
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Full-batch gradient descent for `spec.epochs` steps; deterministic for a
/// given seed.
pub fn fit_lstm(series: &[f64], spec: &ForecasterSpec) -> Result<TrainedModel> {
    if spec.kind != ModelKind::Lstm {
        return Err(Error::InvalidInput(format!("spec is for `{}`, not lstm", spec.kind)));
    }
    check_series(series, spec)?;
    let std = Standardization::fit(series);
    let z: Vec<f64> = series.iter().map(|&v| std.apply(v)).collect();
    let layout = LstmLayout::new(spec.hidden_size);
    let mut params = layout.init_parameters(spec.seed);

    for epoch in 0..spec.epochs {
        let (loss, grad) = layout.loss_and_gradient(&params, windows(&z, spec.lag_window));
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence { epoch });
        }
        for (p, g) in params.iter_mut().zip(&grad) {
            *p -= spec.learning_rate * g;
        }
    }
    if params.iter().any(|p| !p.is_finite()) {
        return Err(Error::Divergence { epoch: spec.epochs });
    }
    Ok(TrainedModel::new(spec.clone(), std, params, series))
}
