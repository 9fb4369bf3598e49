//! Minimal dense networks trained with plain mini-batch gradient descent.
//!
//! Covers the three heads this crate needs: a linear softmax classifier, a
//! one-hidden-layer multi-label sigmoid head and a one-hidden-layer softmax
//! fusion net. Parameters are flat `f64` vectors so they can be persisted
//! and finite-difference checked without ceremony.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    /// `x * sigmoid(x)`
    Silu,
}

impl Activation {
    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Silu => "silu",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "silu" => Ok(Activation::Silu),
            other => Err(Error::ModelFormat(format!("unknown activation `{other}`"))),
        }
    }

    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Silu => z * sigmoid(z),
        }
    }

    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Silu => {
                let s = sigmoid(z);
                s * (1.0 + z * (1.0 - s))
            }
        }
    }
}

/// How logits become outputs, and the matching cross-entropy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutputKind {
    /// Independent sigmoids, loss = binary cross-entropy summed over outputs.
    MultiLabel,
    /// Softmax, loss = categorical cross-entropy.
    Categorical,
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
#[inline]
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln()
}

/// Fully connected layer, weights stored row-major as `outputs x inputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let weights = (0..inputs * outputs).map(|_| rng.gen_range(-limit..limit)).collect();
        Self {
            inputs,
            outputs,
            weights,
            bias: vec![0.0; outputs],
        }
    }

    pub fn from_parts(inputs: usize, outputs: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if weights.len() != inputs * outputs || bias.len() != outputs {
            return Err(Error::Shape(format!(
                "dense {inputs}->{outputs} needs {} weights and {outputs} biases, got {} and {}",
                inputs * outputs,
                weights.len(),
                bias.len()
            )));
        }
        Ok(Self {
            inputs,
            outputs,
            weights,
            bias,
        })
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.inputs);
        self.weights
            .chunks_exact(self.inputs)
            .zip(&self.bias)
            .map(|(row, b)| b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .collect()
    }

    fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HiddenLayer {
    pub dense: Dense,
    pub activation: Activation,
    /// Drop probability during training; inference never drops.
    pub dropout: f64,
}

/// Input -> optional hidden layer -> output logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub hidden: Option<HiddenLayer>,
    pub output: Dense,
    pub kind: OutputKind,
}

/// Hidden layer shape for [`Mlp::new`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HiddenSpec {
    pub width: usize,
    pub activation: Activation,
    pub dropout: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Training(format!(
                "learning rate, epochs and batch size must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Full-dataset loss (inference mode) before training and after every epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub initial_loss: f64,
    pub epoch_losses: Vec<f64>,
}

impl TrainLog {
    pub fn final_loss(&self) -> f64 {
        self.epoch_losses.last().copied().unwrap_or(self.initial_loss)
    }
}

impl Mlp {
    pub fn new(
        inputs: usize,
        hidden: Option<HiddenSpec>,
        outputs: usize,
        kind: OutputKind,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if inputs == 0 || outputs == 0 {
            return Err(Error::Shape("network needs at least one input and output".into()));
        }
        let hidden = match hidden {
            Some(spec) => {
                if spec.width == 0 || !(0.0..1.0).contains(&spec.dropout) {
                    return Err(Error::Shape(format!("invalid hidden layer {spec:?}")));
                }
                Some(HiddenLayer {
                    dense: Dense::glorot(inputs, spec.width, rng),
                    activation: spec.activation,
                    dropout: spec.dropout,
                })
            }
            None => None,
        };
        let last = hidden.as_ref().map_or(inputs, |h| h.dense.outputs);
        Ok(Self {
            hidden,
            output: Dense::glorot(last, outputs, rng),
            kind,
        })
    }

    pub fn inputs(&self) -> usize {
        self.hidden.as_ref().map_or(self.output.inputs, |h| h.dense.inputs)
    }

    pub fn outputs(&self) -> usize {
        self.output.outputs
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        match &self.hidden {
            Some(h) => {
                let a: Vec<f64> = h.dense.forward(x).into_iter().map(|z| h.activation.apply(z)).collect();
                self.output.forward(&a)
            }
            None => self.output.forward(x),
        }
    }

    /// Inference-mode output: sigmoids or a softmax distribution.
    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        let z = self.logits(x);
        match self.kind {
            OutputKind::MultiLabel => z.into_iter().map(sigmoid).collect(),
            OutputKind::Categorical => softmax(&z),
        }
    }

    fn sample_loss(&self, z: &[f64], t: &[f64]) -> f64 {
        match self.kind {
            OutputKind::MultiLabel => z.iter().zip(t).map(|(&z, &t)| softplus(z) - t * z).sum(),
            OutputKind::Categorical => log_sum_exp(z) - z.iter().zip(t).map(|(z, t)| z * t).sum::<f64>(),
        }
    }

    /// Mean loss over the set in inference mode.
    pub fn loss(&self, xs: &[Vec<f64>], ts: &[Vec<f64>]) -> f64 {
        let total: f64 = xs.iter().zip(ts).map(|(x, t)| self.sample_loss(&self.logits(x), t)).sum();
        total / xs.len() as f64
    }

    pub fn param_count(&self) -> usize {
        self.hidden.as_ref().map_or(0, |h| h.dense.param_count()) + self.output.param_count()
    }

    /// Flat parameter vector: hidden weights, hidden bias, output weights, output bias.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.param_count());
        if let Some(h) = &self.hidden {
            p.extend_from_slice(&h.dense.weights);
            p.extend_from_slice(&h.dense.bias);
        }
        p.extend_from_slice(&self.output.weights);
        p.extend_from_slice(&self.output.bias);
        p
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                params.len()
            )));
        }
        let mut rest = params;
        let mut take = |dst: &mut Vec<f64>| {
            let (head, tail) = rest.split_at(dst.len());
            dst.copy_from_slice(head);
            rest = tail;
        };
        if let Some(h) = &mut self.hidden {
            take(&mut h.dense.weights);
            take(&mut h.dense.bias);
        }
        take(&mut self.output.weights);
        take(&mut self.output.bias);
        Ok(())
    }

    /// Mean loss over the batch and its gradient in [`Mlp::params`] order.
    ///
    /// With `dropout_rng` set, hidden activations are dropped with inverted
    /// scaling, as during training; `None` is inference mode.
    pub fn loss_and_gradient(
        &self,
        xs: &[&[f64]],
        ts: &[&[f64]],
        mut dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> (f64, Vec<f64>) {
        let n = xs.len() as f64;
        let mut grad = vec![0.0; self.param_count()];
        let hidden_len = self.hidden.as_ref().map_or(0, |h| h.dense.param_count());
        let (g_hidden, g_out) = grad.split_at_mut(hidden_len);
        let out_w = self.output.weights.len();
        let mut loss = 0.0;

        for (x, t) in xs.iter().zip(ts) {
            let (pre, act, mask) = match &self.hidden {
                Some(h) => {
                    let pre = h.dense.forward(x);
                    let mask: Vec<f64> = match dropout_rng.as_deref_mut() {
                        Some(rng) if h.dropout > 0.0 => (0..pre.len())
                            .map(|_| if rng.gen::<f64>() < h.dropout { 0.0 } else { 1.0 / (1.0 - h.dropout) })
                            .collect(),
                        _ => vec![1.0; pre.len()],
                    };
                    let act: Vec<f64> = pre
                        .iter()
                        .zip(&mask)
                        .map(|(&z, m)| h.activation.apply(z) * m)
                        .collect();
                    (pre, act, mask)
                }
                None => (Vec::new(), x.to_vec(), Vec::new()),
            };
            let z = self.output.forward(&act);
            loss += self.sample_loss(&z, t);
            let probs = match self.kind {
                OutputKind::MultiLabel => z.iter().map(|&v| sigmoid(v)).collect(),
                OutputKind::Categorical => softmax(&z),
            };
            let dz: Vec<f64> = probs.iter().zip(t.iter()).map(|(p, t)| (p - t) / n).collect();

            let (gw, gb) = g_out.split_at_mut(out_w);
            for (o, &d) in dz.iter().enumerate() {
                gb[o] += d;
                for (i, &a) in act.iter().enumerate() {
                    gw[o * self.output.inputs + i] += d * a;
                }
            }

            if let Some(h) = &self.hidden {
                let (gw1, gb1) = g_hidden.split_at_mut(h.dense.weights.len());
                for j in 0..h.dense.outputs {
                    let back: f64 = dz
                        .iter()
                        .enumerate()
                        .map(|(o, d)| d * self.output.weights[o * self.output.inputs + j])
                        .sum();
                    let d1 = back * mask[j] * h.activation.derivative(pre[j]);
                    if d1 == 0.0 {
                        continue;
                    }
                    gb1[j] += d1;
                    for (i, &xi) in x.iter().enumerate() {
                        gw1[j * h.dense.inputs + i] += d1 * xi;
                    }
                }
            }
        }
        (loss / n, grad)
    }

    /// Mini-batch gradient descent over shuffled batches. Deterministic given
    /// `cfg.seed` and the starting parameters.
    pub fn fit(&mut self, xs: &[Vec<f64>], ts: &[Vec<f64>], cfg: &TrainConfig) -> Result<TrainLog> {
        cfg.validate()?;
        if xs.is_empty() || xs.len() != ts.len() {
            return Err(Error::Training(format!("{} inputs vs {} targets", xs.len(), ts.len())));
        }
        if xs.iter().any(|x| x.len() != self.inputs()) || ts.iter().any(|t| t.len() != self.outputs()) {
            return Err(Error::Shape("sample width does not match the network".into()));
        }
        let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(cfg.seed ^ 0x05ee_df17);
        let mut order: Vec<usize> = (0..xs.len()).collect();
        let initial_loss = self.loss(xs, ts);
        let mut epoch_losses = Vec::with_capacity(cfg.epochs);
        let mut params = self.params();
        for _ in 0..cfg.epochs {
            order.shuffle(&mut rng);
            for batch in order.chunks(cfg.batch_size) {
                let bx: Vec<&[f64]> = batch.iter().map(|&i| xs[i].as_slice()).collect();
                let bt: Vec<&[f64]> = batch.iter().map(|&i| ts[i].as_slice()).collect();
                let (_, grad) = self.loss_and_gradient(&bx, &bt, Some(&mut rng));
                for (p, g) in params.iter_mut().zip(&grad) {
                    *p -= cfg.learning_rate * g;
                }
                self.set_params(&params)?;
            }
            let loss = self.loss(xs, ts);
            if !loss.is_finite() {
                return Err(Error::Training("loss diverged; lower the learning rate".into()));
            }
            epoch_losses.push(loss);
        }
        Ok(TrainLog {
            initial_loss,
            epoch_losses,
        })
    }
}

/// Largest relative disagreement between the analytic gradient (inference
/// mode) and central finite differences with the given step. Relative error
/// is `|a - n| / max(|a|, |n|, 1e-7)`, so parameters whose gradient is
/// numerically zero are compared absolutely.
pub fn gradient_check(net: &Mlp, xs: &[Vec<f64>], ts: &[Vec<f64>], step: f64) -> f64 {
    let xr: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
    let tr: Vec<&[f64]> = ts.iter().map(Vec::as_slice).collect();
    let (_, analytic) = net.loss_and_gradient(&xr, &tr, None);
    let base = net.params();
    let mut probe = net.clone();
    let mut worst = 0.0f64;
    for (i, a) in analytic.iter().enumerate() {
        let mut p = base.clone();
        p[i] = base[i] + step;
        probe.set_params(&p).expect("same length");
        let up = probe.loss(xs, ts);
        p[i] = base[i] - step;
        probe.set_params(&p).expect("same length");
        let down = probe.loss(xs, ts);
        let numeric = (up - down) / (2.0 * step);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-7);
        worst = worst.max(rel);
    }
    worst
}

/// Per-feature affine standardization fitted on a training set.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let first = rows.first().ok_or_else(|| Error::Training("no rows to standardize".into()))?;
        let dim = first.len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v / n;
            }
        }
        let mut std = vec![0.0; dim];
        for r in rows {
            for ((s, v), m) in std.iter_mut().zip(r).zip(&mean) {
                *s += (v - m).powi(2) / n;
            }
        }
        let std = std.into_iter().map(|v| if v > 1e-24 { v.sqrt() } else { 1.0 }).collect();
        Ok(Self { mean, std })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn net(hidden: Option<HiddenSpec>, kind: OutputKind) -> Mlp {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        Mlp::new(3, hidden, 2, kind, &mut rng).unwrap()
    }

    #[test]
    fn params_round_trip() {
        let mut m = net(
            Some(HiddenSpec { width: 4, activation: Activation::Silu, dropout: 0.2 }),
            OutputKind::MultiLabel,
        );
        let p = m.params();
        assert_eq!(p.len(), 3 * 4 + 4 + 4 * 2 + 2);
        let bumped: Vec<f64> = p.iter().map(|v| v + 1.0).collect();
        m.set_params(&bumped).unwrap();
        assert_eq!(m.params(), bumped);
        assert!(m.set_params(&p[1..]).is_err());
    }

    #[test]
    fn zero_logits_give_uniform_softmax() {
        let mut m = net(None, OutputKind::Categorical);
        m.set_params(&vec![0.0; m.param_count()]).unwrap();
        assert_eq!(m.predict(&[1.0, -2.0, 3.0]), vec![0.5, 0.5]);
    }

    #[test]
    fn stable_loss_at_extreme_logits() {
        let mut m = net(None, OutputKind::MultiLabel);
        let mut p = vec![0.0; m.param_count()];
        let n = p.len();
        p[n - 2] = 800.0;
        p[n - 1] = -800.0;
        m.set_params(&p).unwrap();
        let l = m.loss(&[vec![0.0; 3]], &[vec![1.0, 0.0]]);
        assert!(l.is_finite() && l < 1e-9);
    }

    #[test]
    fn fit_rejects_mismatched_shapes() {
        let mut m = net(None, OutputKind::Categorical);
        let cfg = TrainConfig { learning_rate: 0.1, epochs: 1, batch_size: 2, seed: 0 };
        assert!(m.fit(&[vec![0.0; 2]], &[vec![1.0, 0.0]], &cfg).is_err());
        assert!(m.fit(&[], &[], &cfg).is_err());
        let bad = TrainConfig { epochs: 0, ..cfg };
        assert!(m.fit(&[vec![0.0; 3]], &[vec![1.0, 0.0]], &bad).is_err());
    }

    #[test]
    fn standardizer_handles_constant_columns() {
        let s = Standardizer::fit(&[vec![1.0, 5.0], vec![3.0, 5.0]]).unwrap();
        assert_eq!(s.apply(&[2.0, 5.0]), vec![0.0, 0.0]);
        assert_eq!(s.std[1], 1.0);
    }
}
