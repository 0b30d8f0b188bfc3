//! DistNet: a small fully connected network that maps preprocessed instance
//! features to all parameters of one RTD family at once, trained by SGD
//! directly on the negative log-likelihood of individual runtime
//! observations.
//!
//! Layout: `n_in -> [dense -> (batch norm) -> activation]* -> dense -> exp`.
//! Hidden dense layers carry a bias only when batch norm is off; with batch
//! norm the normalization shift plays that role. The exp head keeps every
//! predicted parameter strictly positive.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, FeatureVector};
use crate::distributions::{RtdFamily, RtdParams};
use crate::error::{Error, Result};
use crate::preprocessing::{FeaturePipeline, RuntimeScaler, DEFAULT_CONSTANT_TOL};
use crate::rng;

const BN_EPS: f64 = 1e-5;
/// Output columns accumulated in registers at once by the dense kernels.
const LANES: usize = 8;
/// The default mini-batch size, for which the dense kernels are specialized.
const COMMON_BATCH: usize = 16;
const BN_MOMENTUM: f64 = 0.9;
/// Pre-activations of the exp head are clamped to this magnitude.
pub const OUTPUT_CLAMP: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    /// Derivative expressed through the activation output.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// `tanh` through a single [`exp`]. Saturates to +-1 beyond 20, where the
/// exact value already rounds to +-1.
#[inline(always)]
fn tanh(x: f64) -> f64 {
    let e = exp(2.0 * x.clamp(-20.0, 20.0));
    (e - 1.0) / (e + 1.0)
}

/// Branch-free `exp` for `|x| <= 700`, within a couple of ulps of the libm
/// result. Written so loops over slices vectorize, which the libm call
/// prevents.
#[inline(always)]
fn exp(x: f64) -> f64 {
    const LN2_HI: f64 = 6.931_471_803_691_238e-1;
    const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
    const SHIFT: f64 = 6_755_399_441_055_744.0; // 1.5 * 2^52
    let x = x.clamp(-700.0, 700.0);
    let n = (x * core::f64::consts::LOG2_E + SHIFT) - SHIFT;
    let r = (x - n * LN2_HI) - n * LN2_LO;
    // Taylor series to degree 13; |r| <= ln(2) / 2.
    let mut p = 1.0 / 6_227_020_800.0;
    for c in [
        1.0 / 479_001_600.0,
        1.0 / 39_916_800.0,
        1.0 / 3_628_800.0,
        1.0 / 362_880.0,
        1.0 / 40_320.0,
        1.0 / 5_040.0,
        1.0 / 720.0,
        1.0 / 120.0,
        1.0 / 24.0,
        1.0 / 6.0,
        0.5,
        1.0,
        1.0,
    ] {
        p = p * r + c;
    }
    f64::from_bits(((n as i64 + 1023) as u64) << 52) * p
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub hidden_layers: Vec<usize>,
    pub activation: Activation,
    pub batch_norm: bool,
    pub l2: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            hidden_layers: vec![16, 16],
            activation: Activation::Tanh,
            batch_norm: true,
            l2: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub max_epochs: usize,
    /// Enforced by the caller's stop hook (see [`train_with_stop`]).
    pub max_wall_seconds: f64,
    /// Threshold on the global L2 norm of the gradient.
    pub grad_clip_norm: f64,
    pub shuffle_seed: u64,
    pub init_seed: u64,
    pub constant_tol: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            lr_start: 1e-3,
            lr_end: 1e-5,
            max_epochs: 1000,
            max_wall_seconds: 3600.0,
            grad_clip_norm: 1.0,
            shuffle_seed: 0,
            init_seed: 0,
            constant_tol: DEFAULT_CONSTANT_TOL,
        }
    }
}

impl TrainConfig {
    /// `lr_start * (lr_end / lr_start)^(epoch / max_epochs)`.
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        let frac = epoch as f64 / self.max_epochs.max(1) as f64;
        self.lr_start * (self.lr_end / self.lr_start).powf(frac)
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(String::from(m)));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.lr_start > 0.0 && self.lr_end > 0.0) {
            return bad("learning rates must be positive");
        }
        if self.grad_clip_norm.is_nan() || self.grad_clip_norm <= 0.0 {
            return bad("grad_clip_norm must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch-norm layers use statistics of the current batch.
    Train,
    /// Batch-norm layers use their running statistics.
    Infer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub n_in: usize,
    pub n_out: usize,
    /// Row-major `n_in x n_out`.
    pub weights: Vec<f64>,
    pub bias: Option<Vec<f64>>,
}

impl Dense {
    fn zeros(n_in: usize, n_out: usize, with_bias: bool) -> Self {
        Self {
            n_in,
            n_out,
            weights: vec![0.0; n_in * n_out],
            bias: with_bias.then(|| vec![0.0; n_out]),
        }
    }

    /// `out[j, :] = sum_i W[i, j] x[i, :] (+ bias[j])`. Both `x` and `out`
    /// are feature-major: one contiguous run of `batch` values per unit.
    fn forward(&self, x: &[f64], batch: usize, out: &mut Vec<f64>) {
        // A literal batch size lets the compiler fully unroll the kernel.
        if batch == COMMON_BATCH {
            self.forward_kernel(x, COMMON_BATCH, out)
        } else {
            self.forward_kernel(x, batch, out)
        }
    }

    #[inline(always)]
    fn forward_kernel(&self, x: &[f64], batch: usize, out: &mut Vec<f64>) {
        let n_out = self.n_out;
        let x = &x[..self.n_in * batch];
        out.resize(batch * n_out, 0.0);
        let blocks = batch / LANES * LANES;
        for (j, orow) in out.chunks_exact_mut(batch).enumerate() {
            let b0 = self.bias.as_ref().map_or(0.0, |b| b[j]);
            for s in (0..blocks).step_by(LANES) {
                let mut acc = [b0; LANES];
                for (xrow, wrow) in x.chunks_exact(batch).zip(self.weights.chunks_exact(n_out)) {
                    let w = wrow[j];
                    let xs = &xrow[s..s + LANES];
                    for k in 0..LANES {
                        acc[k] += w * xs[k];
                    }
                }
                orow[s..s + LANES].copy_from_slice(&acc);
            }
            for b in blocks..batch {
                orow[b] = b0
                    + x.chunks_exact(batch)
                        .zip(self.weights.chunks_exact(n_out))
                        .map(|(xrow, wrow)| wrow[j] * xrow[b])
                        .sum::<f64>();
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BatchNorm {
    fn identity(n: usize) -> Self {
        Self {
            gamma: vec![1.0; n],
            beta: vec![0.0; n],
            running_mean: vec![0.0; n],
            running_var: vec![1.0; n],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HiddenLayer {
    pub dense: Dense,
    pub norm: Option<BatchNorm>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub family: RtdFamily,
    pub activation: Activation,
    pub hidden: Vec<HiddenLayer>,
    pub output: Dense,
}

/// Reusable buffers for one forward/backward pass. Buffers are resized
/// but not cleared between passes; each pass overwrites every element.
#[derive(Debug, Default, Clone)]
pub struct Workspace {
    batch: usize,
    input: Vec<f64>,
    pre: Vec<Vec<f64>>,
    normed: Vec<Vec<f64>>,
    act: Vec<Vec<f64>>,
    batch_mean: Vec<Vec<f64>>,
    batch_var: Vec<Vec<f64>>,
    inv_std: Vec<Vec<f64>>,
    out_pre: Vec<f64>,
    theta: Vec<f64>,
    grad: Vec<f64>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

impl Network {
    pub fn zeros(n_in: usize, family: RtdFamily, cfg: &NetworkConfig) -> Self {
        let mut hidden = Vec::new();
        let mut width = n_in;
        for &h in &cfg.hidden_layers {
            hidden.push(HiddenLayer {
                dense: Dense::zeros(width, h, !cfg.batch_norm),
                norm: cfg.batch_norm.then(|| BatchNorm::identity(h)),
            });
            width = h;
        }
        Self {
            family,
            activation: cfg.activation,
            hidden,
            output: Dense::zeros(width, family.n_params(), true),
        }
    }

    /// Weights uniform in `+-sqrt(3 / fan_in)` (unit-variance preserving),
    /// biases zero.
    pub fn new(n_in: usize, family: RtdFamily, cfg: &NetworkConfig, seed: u64) -> Self {
        let mut net = Self::zeros(n_in, family, cfg);
        let mut rng = rng::substream(seed, "init", 0);
        let mut fill = |d: &mut Dense| {
            let limit = (3.0 / d.n_in as f64).sqrt();
            for w in &mut d.weights {
                *w = rng.random_range(-limit..limit);
            }
        };
        for layer in &mut net.hidden {
            fill(&mut layer.dense);
        }
        fill(&mut net.output);
        net
    }

    pub fn n_inputs(&self) -> usize {
        self.hidden.first().map_or(self.output.n_in, |l| l.dense.n_in)
    }

    pub fn n_outputs(&self) -> usize {
        self.output.n_out
    }

    fn visit<'a>(&'a self, mut f: impl FnMut(&'a [f64])) {
        for layer in &self.hidden {
            f(&layer.dense.weights);
            if let Some(b) = &layer.dense.bias {
                f(b);
            }
            if let Some(n) = &layer.norm {
                f(&n.gamma);
                f(&n.beta);
            }
        }
        f(&self.output.weights);
        if let Some(b) = &self.output.bias {
            f(b);
        }
    }

    fn visit_mut(&mut self, mut f: impl FnMut(&mut [f64])) {
        for layer in &mut self.hidden {
            f(&mut layer.dense.weights);
            if let Some(b) = &mut layer.dense.bias {
                f(b);
            }
            if let Some(n) = &mut layer.norm {
                f(&mut n.gamma);
                f(&mut n.beta);
            }
        }
        f(&mut self.output.weights);
        if let Some(b) = &mut self.output.bias {
            f(b);
        }
    }

    pub fn n_parameters(&self) -> usize {
        let mut n = 0;
        self.visit(|s| n += s.len());
        n
    }

    /// All trainable values flattened: per hidden layer weights, bias,
    /// gamma, beta (those present), then output weights and bias.
    /// Gradients use the same order.
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_parameters());
        self.visit(|s| out.extend_from_slice(s));
        out
    }

    pub fn set_parameters(&mut self, values: &[f64]) -> Result<()> {
        let expected = self.n_parameters();
        if values.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                got: values.len(),
            });
        }
        let mut offset = 0;
        self.visit_mut(|s| {
            s.copy_from_slice(&values[offset..offset + s.len()]);
            offset += s.len();
        });
        Ok(())
    }

    fn check_inputs(&self, inputs: &[f64], batch: usize) -> Result<()> {
        let expected = batch * self.n_inputs();
        if batch == 0 || inputs.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                got: inputs.len(),
            });
        }
        Ok(())
    }

    /// Predicted parameter rows (`batch x n_params`) for a row-major input
    /// batch.
    pub fn forward(&self, inputs: &[f64], batch: usize, mode: Mode) -> Result<Vec<f64>> {
        self.check_inputs(inputs, batch)?;
        let mut ws = Workspace::default();
        self.forward_into(inputs, batch, mode, &mut ws);
        Ok(ws.theta)
    }

    /// Forward pass. `inputs` is row-major (`batch x n_in`); everything in
    /// `ws` except `theta` is feature-major.
    fn forward_into(&self, inputs: &[f64], batch: usize, mode: Mode, ws: &mut Workspace) {
        let n_hidden = self.hidden.len();
        let n_in = self.n_inputs();
        ws.batch = batch;
        ws.input.resize(n_in * batch, 0.0);
        for (b, row) in inputs.chunks_exact(n_in).enumerate() {
            for (i, &v) in row.iter().enumerate() {
                ws.input[i * batch + b] = v;
            }
        }
        for buf in [
            &mut ws.pre,
            &mut ws.normed,
            &mut ws.act,
            &mut ws.batch_mean,
            &mut ws.batch_var,
            &mut ws.inv_std,
        ] {
            buf.resize_with(n_hidden, Vec::new);
        }
        let inv_b = 1.0 / batch as f64;
        for (l, layer) in self.hidden.iter().enumerate() {
            let width = layer.dense.n_out;
            {
                let x: &[f64] = if l == 0 { &ws.input } else { &ws.act[l - 1] };
                let mut pre = core::mem::take(&mut ws.pre[l]);
                layer.dense.forward(x, batch, &mut pre);
                ws.pre[l] = pre;
            }
            let pre = &ws.pre[l];
            let act = &mut ws.act[l];
            act.clear();
            act.extend_from_slice(pre);
            if let Some(bn) = &layer.norm {
                let normed = &mut ws.normed[l];
                normed.resize(batch * width, 0.0);
                let (mean, var, inv_std) = (&mut ws.batch_mean[l], &mut ws.batch_var[l], &mut ws.inv_std[l]);
                mean.clear();
                var.clear();
                inv_std.clear();
                for (j, ((z, n), a)) in pre
                    .chunks_exact(batch)
                    .zip(normed.chunks_exact_mut(batch))
                    .zip(act.chunks_exact_mut(batch))
                    .enumerate()
                {
                    let (m, v) = match mode {
                        Mode::Train => {
                            let m = z.iter().sum::<f64>() * inv_b;
                            let v = z.iter().map(|&zi| (zi - m) * (zi - m)).sum::<f64>() * inv_b;
                            (m, v)
                        }
                        Mode::Infer => (bn.running_mean[j], bn.running_var[j]),
                    };
                    let is = 1.0 / (v + BN_EPS).sqrt();
                    let (g, beta) = (bn.gamma[j], bn.beta[j]);
                    for ((ni, ai), &zi) in n.iter_mut().zip(a.iter_mut()).zip(z) {
                        *ni = (zi - m) * is;
                        *ai = g * *ni + beta;
                    }
                    mean.push(m);
                    var.push(v);
                    inv_std.push(is);
                }
            }
            match self.activation {
                Activation::Tanh => act.iter_mut().for_each(|a| *a = tanh(*a)),
                Activation::Relu => act.iter_mut().for_each(|a| *a = a.max(0.0)),
            }
        }
        {
            let x: &[f64] = if n_hidden == 0 {
                &ws.input
            } else {
                &ws.act[n_hidden - 1]
            };
            let mut out = core::mem::take(&mut ws.out_pre);
            self.output.forward(x, batch, &mut out);
            ws.out_pre = out;
        }
        let p = self.n_outputs();
        ws.theta.resize(batch * p, 0.0);
        for (j, orow) in ws.out_pre.chunks_exact(batch).enumerate() {
            for (b, &o) in orow.iter().enumerate() {
                ws.theta[b * p + j] = exp(o.clamp(-OUTPUT_CLAMP, OUTPUT_CLAMP));
            }
        }
    }

    fn l2_penalty(&self) -> f64 {
        let sq = |w: &[f64]| w.iter().map(|v| v * v).sum::<f64>();
        self.hidden.iter().map(|l| sq(&l.dense.weights)).sum::<f64>() + sq(&self.output.weights)
    }

    /// Training-mode objective: mean NLLH of `times` (scaled) under the
    /// predicted parameters plus `(l2 / 2) * sum ||W||^2` over dense weights.
    pub fn loss(&self, inputs: &[f64], times: &[f64], l2: f64) -> Result<f64> {
        self.check_inputs(inputs, times.len())?;
        let mut ws = Workspace::default();
        self.forward_into(inputs, times.len(), Mode::Train, &mut ws);
        Ok(self.data_loss(&ws, times) + 0.5 * l2 * self.l2_penalty())
    }

    fn data_loss(&self, ws: &Workspace, times: &[f64]) -> f64 {
        let p = self.n_outputs();
        let total: f64 = times
            .iter()
            .zip(ws.theta.chunks_exact(p))
            .map(|(&t, th)| -self.family.log_pdf_unchecked(th, t))
            .sum();
        total / times.len() as f64
    }

    /// Loss and its exact gradient (flattened as in [`Self::parameters`]).
    pub fn loss_and_gradient(&self, inputs: &[f64], times: &[f64], l2: f64) -> Result<(f64, Vec<f64>)> {
        self.check_inputs(inputs, times.len())?;
        let mut ws = Workspace::default();
        let loss = self.backprop(inputs, times, l2, &mut ws);
        Ok((loss, ws.grad))
    }

    /// Forward (train mode) + backward pass; the gradient lands in `ws.grad`.
    fn backprop(&self, inputs: &[f64], times: &[f64], l2: f64, ws: &mut Workspace) -> f64 {
        let batch = times.len();
        self.forward_into(inputs, batch, Mode::Train, ws);
        let loss = self.data_loss(ws, times) + 0.5 * l2 * self.l2_penalty();

        let p = self.n_outputs();
        let n_params = self.n_parameters();
        ws.grad.resize(n_params, 0.0);

        // d loss / d output pre-activation.
        let inv_b = 1.0 / batch as f64;
        ws.delta.resize(batch * p, 0.0);
        for (b, &t) in times.iter().enumerate() {
            let th = &ws.theta[b * p..(b + 1) * p];
            let g = self.family.grad_log_pdf_unchecked(th, t);
            for j in 0..p {
                let o = ws.out_pre[j * batch + b];
                let inside = o > -OUTPUT_CLAMP && o < OUTPUT_CLAMP;
                ws.delta[j * batch + b] = if inside { -g[j] * inv_b * th[j] } else { 0.0 };
            }
        }

        // Walk the flat gradient from the back: output layer first.
        let n_hidden = self.hidden.len();
        let mut end = n_params;
        let out_b = end - self.output.n_out;
        let out_w = out_b - self.output.weights.len();
        end = out_w;
        let last_x: &[f64] = if n_hidden == 0 {
            &ws.input
        } else {
            &ws.act[n_hidden - 1]
        };
        let (g_out_w, g_out_b) = ws.grad[out_w..].split_at_mut(out_b - out_w);
        dense_backward(
            &self.output,
            last_x,
            &ws.delta,
            batch,
            l2,
            g_out_w,
            Some(g_out_b),
            if n_hidden > 0 { Some(&mut ws.delta_prev) } else { None },
        );

        for l in (0..n_hidden).rev() {
            let layer = &self.hidden[l];
            let width = layer.dense.n_out;
            core::mem::swap(&mut ws.delta, &mut ws.delta_prev);
            // ws.delta: d loss / d activation output of layer l.
            for (d, &a) in ws.delta.iter_mut().zip(ws.act[l].iter()) {
                *d *= self.activation.derivative_from_output(a);
            }
            if let Some(bn) = &layer.norm {
                end -= 2 * width;
                let (g_gamma, g_beta) = ws.grad[end..end + 2 * width].split_at_mut(width);
                let inv_std = &ws.inv_std[l];
                for (j, (drow, nrow)) in ws
                    .delta
                    .chunks_exact_mut(batch)
                    .zip(ws.normed[l].chunks_exact(batch))
                    .enumerate()
                {
                    let sum_dn: f64 = drow.iter().zip(nrow).map(|(d, n)| d * n).sum();
                    let sum_d: f64 = drow.iter().sum();
                    g_gamma[j] = sum_dn;
                    g_beta[j] = sum_d;
                    let g = bn.gamma[j];
                    let (mean_d, mean_dn) = (g * sum_d * inv_b, g * sum_dn * inv_b);
                    let s = inv_std[j];
                    for (d, &n) in drow.iter_mut().zip(nrow) {
                        *d = s * (g * *d - mean_d - n * mean_dn);
                    }
                }
            }
            let g_b = match &layer.dense.bias {
                Some(b) => {
                    end -= b.len();
                    Some(end)
                }
                None => None,
            };
            end -= layer.dense.weights.len();
            let w_end = end + layer.dense.weights.len();
            let x: &[f64] = if l == 0 { &ws.input } else { &ws.act[l - 1] };
            let (head, tail) = ws.grad.split_at_mut(w_end);
            let g_w = &mut head[end..];
            let g_b = g_b.map(|o| &mut tail[o - w_end..][..width]);
            dense_backward(
                &layer.dense,
                x,
                &ws.delta,
                batch,
                l2,
                g_w,
                g_b,
                if l > 0 { Some(&mut ws.delta_prev) } else { None },
            );
        }
        debug_assert_eq!(end, 0);
        loss
    }

    /// Exponential moving average of the batch statistics left in `ws` by
    /// the last training-mode pass.
    fn update_running_stats(&mut self, ws: &Workspace) {
        for (l, layer) in self.hidden.iter_mut().enumerate() {
            if let Some(bn) = &mut layer.norm {
                for j in 0..bn.running_mean.len() {
                    bn.running_mean[j] = BN_MOMENTUM * bn.running_mean[j] + (1.0 - BN_MOMENTUM) * ws.batch_mean[l][j];
                    bn.running_var[j] = BN_MOMENTUM * bn.running_var[j] + (1.0 - BN_MOMENTUM) * ws.batch_var[l][j];
                }
            }
        }
    }

    fn sgd_step(&mut self, grad: &[f64], lr: f64) {
        let mut offset = 0;
        self.visit_mut(|s| {
            let len = s.len();
            for (w, g) in s.iter_mut().zip(&grad[offset..offset + len]) {
                *w -= lr * g;
            }
            offset += len;
        });
    }
}

/// Gradients of one dense layer from feature-major `x` (`n_in x batch`)
/// and `delta` (`n_out x batch`); optionally the delta of its input.
#[allow(clippy::too_many_arguments)]
fn dense_backward(
    dense: &Dense,
    x: &[f64],
    delta: &[f64],
    batch: usize,
    l2: f64,
    g_w: &mut [f64],
    g_b: Option<&mut [f64]>,
    delta_in: Option<&mut Vec<f64>>,
) {
    if batch == COMMON_BATCH {
        dense_backward_kernel(dense, x, delta, COMMON_BATCH, l2, g_w, g_b, delta_in)
    } else {
        dense_backward_kernel(dense, x, delta, batch, l2, g_w, g_b, delta_in)
    }
}

#[allow(clippy::too_many_arguments)]
#[inline(always)]
fn dense_backward_kernel(
    dense: &Dense,
    x: &[f64],
    delta: &[f64],
    batch: usize,
    l2: f64,
    g_w: &mut [f64],
    g_b: Option<&mut [f64]>,
    delta_in: Option<&mut Vec<f64>>,
) {
    let (n_in, n_out) = (dense.n_in, dense.n_out);
    let x = &x[..batch * n_in];
    let delta = &delta[..batch * n_out];
    for ((grow, wrow), xrow) in g_w
        .chunks_exact_mut(n_out)
        .zip(dense.weights.chunks_exact(n_out))
        .zip(x.chunks_exact(batch))
    {
        for ((g, &w), drow) in grow.iter_mut().zip(wrow).zip(delta.chunks_exact(batch)) {
            *g = l2 * w + dot(xrow, drow);
        }
    }
    if let Some(g_b) = g_b {
        for (g, drow) in g_b.iter_mut().zip(delta.chunks_exact(batch)) {
            *g = drow.iter().sum();
        }
    }
    if let Some(out) = delta_in {
        out.resize(batch * n_in, 0.0);
        let blocks = batch / LANES * LANES;
        for (orow, wrow) in out.chunks_exact_mut(batch).zip(dense.weights.chunks_exact(n_out)) {
            for s in (0..blocks).step_by(LANES) {
                let mut acc = [0.0; LANES];
                for (&w, drow) in wrow.iter().zip(delta.chunks_exact(batch)) {
                    let d = &drow[s..s + LANES];
                    for k in 0..LANES {
                        acc[k] += w * d[k];
                    }
                }
                orow[s..s + LANES].copy_from_slice(&acc);
            }
            for b in blocks..batch {
                orow[b] = wrow.iter().zip(delta.chunks_exact(batch)).map(|(w, d)| w * d[b]).sum();
            }
        }
    }
}

/// Dot product with four independent accumulators so it vectorizes.
#[inline(always)]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ac, bc) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ac.remainder().iter().zip(bc.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ac.zip(bc) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn clip_global_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= scale);
    }
    norm
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    Budget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub learning_rate: f64,
    pub mean_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    /// Learning-rate decay granularity.
    pub lr_schedule: String,
    pub n_samples: usize,
    pub epochs: Vec<EpochLog>,
    pub stop: StopReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistNetModel {
    pub family: RtdFamily,
    pub network_config: NetworkConfig,
    pub train_config: TrainConfig,
    pub network: Network,
    pub pipeline: FeaturePipeline,
    pub scaler: RuntimeScaler,
    pub training_log: TrainingLog,
}

impl DistNetModel {
    /// Parameters in scaled time for one preprocessed feature vector.
    pub fn forward(&self, fv: &[f64], mode: Mode) -> Result<RtdParams> {
        let theta = self.network.forward(fv, 1, mode)?;
        RtdParams::new(self.family, &theta)
    }

    /// Training-mode loss of a batch of (preprocessed features, scaled time).
    pub fn loss(&self, batch: &[(Vec<f64>, f64)]) -> Result<f64> {
        let (x, t) = flatten_batch(batch);
        self.network.loss(&x, &t, self.network_config.l2)
    }

    pub fn gradient(&self, batch: &[(Vec<f64>, f64)]) -> Result<Vec<f64>> {
        let (x, t) = flatten_batch(batch);
        Ok(self.network.loss_and_gradient(&x, &t, self.network_config.l2)?.1)
    }

    /// Parameters in scaled time for a raw feature vector.
    pub fn predict_scaled(&self, raw: &FeatureVector) -> Result<RtdParams> {
        self.forward(&self.pipeline.transform(raw)?, Mode::Infer)
    }

    /// Parameters in seconds for a raw feature vector.
    pub fn predict(&self, raw: &FeatureVector) -> Result<RtdParams> {
        self.scaler.unscale_params(&self.predict_scaled(raw)?)
    }
}

fn flatten_batch(batch: &[(Vec<f64>, f64)]) -> (Vec<f64>, Vec<f64>) {
    let x = batch.iter().flat_map(|(f, _)| f.iter().copied()).collect();
    let t = batch.iter().map(|(_, t)| *t).collect();
    (x, t)
}

/// Train for `train_cfg.max_epochs` epochs; fully deterministic.
pub fn train(
    dataset: &Dataset,
    family: RtdFamily,
    net_cfg: &NetworkConfig,
    train_cfg: &TrainConfig,
) -> Result<DistNetModel> {
    train_with_stop(dataset, family, net_cfg, train_cfg, &mut |_| false)
}

/// Like [`train`], but `should_stop(epoch)` is consulted before every epoch
/// (the hook for a wall-clock budget).
///
/// Every runtime observation is one training sample; samples are reshuffled
/// each epoch and consumed in mini-batches (the last one may be smaller).
/// Each step clips the global gradient norm and takes a plain SGD step with
/// the epoch's learning rate.
pub fn train_with_stop(
    dataset: &Dataset,
    family: RtdFamily,
    net_cfg: &NetworkConfig,
    train_cfg: &TrainConfig,
    should_stop: &mut dyn FnMut(usize) -> bool,
) -> Result<DistNetModel> {
    train_cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let pipeline = FeaturePipeline::fit(dataset, train_cfg.constant_tol)?;
    let scaler = RuntimeScaler::fit(dataset)?;
    let features = pipeline.transform_dataset(dataset)?;
    let m = pipeline.n_output();
    let samples: Vec<(u32, f64)> = dataset
        .instances()
        .iter()
        .enumerate()
        .flat_map(|(i, inst)| inst.runtimes.times().iter().map(move |&t| (i as u32, scaler.scale(t))))
        .collect();

    let mut network = Network::new(m, family, net_cfg, train_cfg.init_seed);
    let mut ws = Workspace::default();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut x = Vec::with_capacity(train_cfg.batch_size * m);
    let mut t = Vec::with_capacity(train_cfg.batch_size);
    let mut epochs = Vec::new();
    let mut stop = StopReason::MaxEpochs;

    for epoch in 0..train_cfg.max_epochs {
        if should_stop(epoch) {
            stop = StopReason::Budget;
            break;
        }
        let lr = train_cfg.learning_rate(epoch);
        order.sort_unstable();
        order.shuffle(&mut rng::substream(train_cfg.shuffle_seed, "shuffle", epoch as u64));
        let mut loss_sum = 0.0;
        for chunk in order.chunks(train_cfg.batch_size) {
            x.clear();
            t.clear();
            for &s in chunk {
                let (inst, time) = samples[s];
                x.extend_from_slice(&features[inst as usize]);
                t.push(time);
            }
            let loss = network.backprop(&x, &t, net_cfg.l2, &mut ws);
            loss_sum += loss * chunk.len() as f64;
            network.update_running_stats(&ws);
            let mut grad = core::mem::take(&mut ws.grad);
            clip_global_norm(&mut grad, train_cfg.grad_clip_norm);
            network.sgd_step(&grad, lr);
            ws.grad = grad;
        }
        epochs.push(EpochLog {
            epoch,
            learning_rate: lr,
            mean_loss: loss_sum / samples.len() as f64,
        });
    }

    Ok(DistNetModel {
        family,
        network_config: net_cfg.clone(),
        train_config: train_cfg.clone(),
        network,
        pipeline,
        scaler,
        training_log: TrainingLog {
            lr_schedule: String::from("exponential, per epoch"),
            n_samples: samples.len(),
            epochs,
            stop,
        },
    })
}
