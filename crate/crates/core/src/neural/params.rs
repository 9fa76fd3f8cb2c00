//! Parameter tensors of the encoder, decoder and evaluator.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::SimRng;

/// Layer sizes. Encoder and decoder share one hidden size because the
/// decoder attends over encoder outputs with a plain dot product and starts
/// from the last one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dims {
    pub vocab: usize,
    pub embedding: usize,
    pub hidden: usize,
    pub evaluator_hidden: usize,
}

impl Dims {
    pub const EMBEDDING: usize = 32;
    pub const HIDDEN: usize = 64;
    pub const EVALUATOR_HIDDEN: usize = 200;

    /// Standard sizes for a pool of `devices` clients.
    pub fn standard(devices: usize) -> Self {
        Self {
            vocab: devices + 2,
            embedding: Self::EMBEDDING,
            hidden: Self::HIDDEN,
            evaluator_hidden: Self::EVALUATOR_HIDDEN,
        }
    }
}

/// One LSTM cell. Gate columns are ordered input, forget, cell, output.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmWeights {
    pub w_input: Array2<f64>,
    pub w_hidden: Array2<f64>,
    pub bias: Array2<f64>,
}

impl LstmWeights {
    fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w_input: Array2::zeros((input, 4 * hidden)),
            w_hidden: Array2::zeros((hidden, 4 * hidden)),
            bias: Array2::zeros((1, 4 * hidden)),
        }
    }
}

/// All trainable tensors. The same shape doubles as a gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub embedding: Array2<f64>,
    pub encoder: LstmWeights,
    pub decoder: LstmWeights,
    /// Maps `[decoder state; attention context]` to vocabulary logits.
    pub output_weight: Array2<f64>,
    pub output_bias: Array2<f64>,
    pub eval_w1: Array2<f64>,
    pub eval_b1: Array2<f64>,
    pub eval_w2: Array2<f64>,
    pub eval_b2: Array2<f64>,
}

pub const TENSOR_NAMES: [&str; 13] = [
    "embedding",
    "encoder.w_input",
    "encoder.w_hidden",
    "encoder.bias",
    "decoder.w_input",
    "decoder.w_hidden",
    "decoder.bias",
    "output.weight",
    "output.bias",
    "evaluator.w1",
    "evaluator.b1",
    "evaluator.w2",
    "evaluator.b2",
];

impl Params {
    pub fn zeros(d: &Dims) -> Self {
        Self {
            embedding: Array2::zeros((d.vocab, d.embedding)),
            encoder: LstmWeights::zeros(d.embedding, d.hidden),
            decoder: LstmWeights::zeros(d.embedding, d.hidden),
            output_weight: Array2::zeros((2 * d.hidden, d.vocab)),
            output_bias: Array2::zeros((1, d.vocab)),
            eval_w1: Array2::zeros((d.hidden, d.evaluator_hidden)),
            eval_b1: Array2::zeros((1, d.evaluator_hidden)),
            eval_w2: Array2::zeros((d.evaluator_hidden, 1)),
            eval_b2: Array2::zeros((1, 1)),
        }
    }

    /// Weight matrices uniform in `±sqrt(6 / (fan_in + fan_out))`, biases zero.
    pub fn xavier(d: &Dims, rng: &mut SimRng) -> Self {
        let mut p = Self::zeros(d);
        for (name, t) in p.tensors_mut() {
            if is_bias(name) {
                continue;
            }
            let (fan_in, fan_out) = t.dim();
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            t.iter_mut().for_each(|v| *v = rng.random_range(-limit..limit));
        }
        p
    }

    pub fn tensors(&self) -> [(&'static str, &Array2<f64>); 13] {
        [
            (TENSOR_NAMES[0], &self.embedding),
            (TENSOR_NAMES[1], &self.encoder.w_input),
            (TENSOR_NAMES[2], &self.encoder.w_hidden),
            (TENSOR_NAMES[3], &self.encoder.bias),
            (TENSOR_NAMES[4], &self.decoder.w_input),
            (TENSOR_NAMES[5], &self.decoder.w_hidden),
            (TENSOR_NAMES[6], &self.decoder.bias),
            (TENSOR_NAMES[7], &self.output_weight),
            (TENSOR_NAMES[8], &self.output_bias),
            (TENSOR_NAMES[9], &self.eval_w1),
            (TENSOR_NAMES[10], &self.eval_b1),
            (TENSOR_NAMES[11], &self.eval_w2),
            (TENSOR_NAMES[12], &self.eval_b2),
        ]
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, &mut Array2<f64>); 13] {
        [
            (TENSOR_NAMES[0], &mut self.embedding),
            (TENSOR_NAMES[1], &mut self.encoder.w_input),
            (TENSOR_NAMES[2], &mut self.encoder.w_hidden),
            (TENSOR_NAMES[3], &mut self.encoder.bias),
            (TENSOR_NAMES[4], &mut self.decoder.w_input),
            (TENSOR_NAMES[5], &mut self.decoder.w_hidden),
            (TENSOR_NAMES[6], &mut self.decoder.bias),
            (TENSOR_NAMES[7], &mut self.output_weight),
            (TENSOR_NAMES[8], &mut self.output_bias),
            (TENSOR_NAMES[9], &mut self.eval_w1),
            (TENSOR_NAMES[10], &mut self.eval_b1),
            (TENSOR_NAMES[11], &mut self.eval_w2),
            (TENSOR_NAMES[12], &mut self.eval_b2),
        ]
    }

    pub fn fill(&mut self, value: f64) {
        for (_, t) in self.tensors_mut() {
            t.fill(value);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }

    pub fn count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }
}

fn is_bias(name: &str) -> bool {
    name.ends_with("bias") || name.ends_with(".b1") || name.ends_with(".b2")
}

/// Whether a tensor belongs to the evaluator head.
pub fn is_evaluator(name: &str) -> bool {
    name.starts_with("evaluator.")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::from_seed;

    #[test]
    fn xavier_bounds_and_zero_biases() {
        let d = Dims::standard(30);
        let p = Params::xavier(&d, &mut from_seed(0));
        for (name, t) in p.tensors() {
            if is_bias(name) {
                assert!(t.iter().all(|&v| v == 0.0), "{name}");
            } else {
                let (a, b) = t.dim();
                let limit = (6.0 / (a + b) as f64).sqrt();
                assert!(t.iter().all(|v| v.abs() < limit), "{name}");
                assert!(t.iter().any(|&v| v != 0.0));
            }
        }
        assert_eq!(p.embedding.dim(), (32, 32));
        assert_eq!(p.output_weight.dim(), (128, 32));
        assert_eq!(p.eval_w1.dim(), (64, 200));
    }
}
