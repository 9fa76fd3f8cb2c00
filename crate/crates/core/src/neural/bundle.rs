use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use super::net::{self, Latent};
use super::params::{Dims, Params, TENSOR_NAMES};
use super::train::Example;
use super::Vocabulary;
use crate::error::{Error, Result};
use crate::model::ClientSelection;

/// Encoder outputs of one sequence, one row per token (`T x hidden`).
pub type LatentRep = Array2<f64>;

/// Min-max bounds used to map raw comprehensive scores to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreNorm {
    pub min: f64,
    pub max: f64,
}

impl ScoreNorm {
    pub fn fit(scores: impl IntoIterator<Item = f64>) -> Result<Self> {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        let mut any = false;
        for s in scores {
            if !s.is_finite() {
                return Err(Error::Numeric(format!("non-finite score {s}")));
            }
            min = min.min(s);
            max = max.max(s);
            any = true;
        }
        if !any {
            return Err(Error::Data("cannot normalize an empty score list".into()));
        }
        Ok(Self { min, max })
    }

    pub fn is_degenerate(&self) -> bool {
        self.max <= self.min
    }

    /// Degenerate bounds map every score to 0.5.
    pub fn normalize(&self, score: f64) -> f64 {
        if self.is_degenerate() {
            0.5
        } else {
            (score - self.min) / (self.max - self.min)
        }
    }

    pub fn denormalize(&self, value: f64) -> f64 {
        if self.is_degenerate() {
            self.min
        } else {
            self.min + value * (self.max - self.min)
        }
    }
}

/// Recurrent state of the decoder for one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderState {
    pub h: Array1<f64>,
    pub c: Array1<f64>,
}

/// Joint loss and its exact gradients.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub loss: f64,
    pub params: Params,
    /// `d loss / d E_s` for each example, in batch order.
    pub latents: Vec<LatentRep>,
}

/// Dot-product attention of one decoder state over a latent. Returns the
/// attention weights and the context vector.
pub fn attend(h_dec: &Array1<f64>, latent: &LatentRep) -> (Array1<f64>, Array1<f64>) {
    let q = h_dec.view().insert_axis(Axis(0)).to_owned();
    let (w, ctx) = net::attend(&q, &Latent::Shared(latent));
    (w.row(0).to_owned(), ctx.row(0).to_owned())
}

/// A trained (or freshly initialized) network with its score normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub dims: Dims,
    pub params: Params,
    pub norm: ScoreNorm,
    pub seed: u64,
    /// Hash of the configuration that produced this bundle, empty if none.
    pub config_hash: String,
}

fn to_time_major(latents: &[&LatentRep]) -> Vec<Array2<f64>> {
    let len = latents[0].nrows();
    (0..len)
        .map(|t| {
            let rows: Vec<_> = latents.iter().map(|e| e.row(t)).collect();
            ndarray::stack(Axis(0), &rows).expect("equal widths")
        })
        .collect()
}

fn group_by_len<'a>(lens: impl Iterator<Item = usize>) -> BTreeMap<usize, Vec<usize>> {
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, len) in lens.enumerate() {
        groups.entry(len).or_default().push(i);
    }
    groups
}

impl ModelBundle {
    pub fn new(dims: Dims, params: Params, norm: ScoreNorm, seed: u64) -> Self {
        Self {
            dims,
            params,
            norm,
            seed,
            config_hash: String::new(),
        }
    }

    pub fn vocabulary(&self) -> Vocabulary {
        Vocabulary {
            devices: self.dims.vocab - 2,
        }
    }

    fn check_tokens(&self, tokens: &[usize]) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::InvalidSelection("cannot encode an empty sequence".into()));
        }
        let vocab = self.vocabulary();
        if let Some(&bad) = tokens.iter().find(|&&t| !vocab.is_device(t)) {
            return Err(Error::UnknownDevice {
                id: bad,
                pool_size: vocab.devices(),
            });
        }
        Ok(())
    }

    fn check_latent(&self, latent: &LatentRep) -> Result<()> {
        if latent.nrows() == 0 || latent.ncols() != self.dims.hidden {
            return Err(Error::Shape(format!(
                "latent is {:?}, expected T x {}",
                latent.dim(),
                self.dims.hidden
            )));
        }
        if latent.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("latent has non-finite entries".into()));
        }
        Ok(())
    }

    pub fn encode(&self, selection: &ClientSelection) -> Result<LatentRep> {
        self.encode_tokens(selection.ids())
    }

    pub fn encode_tokens(&self, tokens: &[usize]) -> Result<LatentRep> {
        self.check_tokens(tokens)?;
        let steps = net::encode_batch(&self.params, &[tokens.to_vec()]);
        let rows: Vec<_> = steps.iter().map(|s| s.h.row(0)).collect();
        Ok(ndarray::stack(Axis(0), &rows).expect("equal widths"))
    }

    /// Encodes many sequences, batching equal lengths together.
    pub fn encode_many(&self, sequences: &[Vec<usize>]) -> Result<Vec<LatentRep>> {
        for seq in sequences {
            self.check_tokens(seq)?;
        }
        let mut out: Vec<Option<LatentRep>> = vec![None; sequences.len()];
        for (len, idx) in group_by_len(sequences.iter().map(Vec::len)) {
            let tokens: Vec<Vec<usize>> = idx.iter().map(|&i| sequences[i].clone()).collect();
            let steps = net::encode_batch(&self.params, &tokens);
            for (r, &i) in idx.iter().enumerate() {
                let mut e = Array2::zeros((len, self.dims.hidden));
                for (t, s) in steps.iter().enumerate() {
                    e.row_mut(t).assign(&s.h.row(r));
                }
                out[i] = Some(e);
            }
        }
        Ok(out.into_iter().map(|e| e.expect("every index grouped")).collect())
    }

    /// Normalized score estimate `omega(E_s)`.
    pub fn evaluate(&self, latent: &LatentRep) -> Result<f64> {
        self.check_latent(latent)?;
        let pooled = latent.mean_axis(Axis(0)).expect("non-empty").insert_axis(Axis(0));
        Ok(net::evaluator_forward(&self.params, pooled).pred[0])
    }

    /// `omega(E_s)` and its gradient with respect to every latent entry.
    pub fn evaluate_with_grad(&self, latent: &LatentRep) -> Result<(f64, LatentRep)> {
        self.check_latent(latent)?;
        let p = &self.params;
        let pooled = latent.mean_axis(Axis(0)).expect("non-empty").insert_axis(Axis(0));
        let cache = net::evaluator_forward(p, pooled);
        let mut d_pre = p.eval_w2.t().to_owned();
        for (d, &z) in d_pre.iter_mut().zip(cache.pre.iter()) {
            if z <= 0.0 {
                *d = 0.0;
            }
        }
        let d_pooled = d_pre.dot(&p.eval_w1.t());
        let t = latent.nrows();
        let mut grad = Array2::zeros(latent.dim());
        for mut row in grad.rows_mut() {
            row.assign(&(&d_pooled.row(0) / t as f64));
        }
        Ok((cache.pred[0], grad))
    }

    /// Decoder state before the first step: the last latent row as hidden
    /// state and a zero cell.
    pub fn initial_state(&self, latent: &LatentRep) -> DecoderState {
        DecoderState {
            h: latent.row(latent.nrows() - 1).to_owned(),
            c: Array1::zeros(self.dims.hidden),
        }
    }

    /// One decoder step: next-token distribution over the whole vocabulary
    /// and the following state.
    pub fn decode_step(
        &self,
        prev: usize,
        state: &DecoderState,
        latent: &LatentRep,
    ) -> Result<(Array1<f64>, DecoderState)> {
        self.check_latent(latent)?;
        if prev >= self.dims.vocab {
            return Err(Error::Shape(format!("token {prev} outside vocabulary")));
        }
        let h = state.h.view().insert_axis(Axis(0)).to_owned();
        let c = state.c.view().insert_axis(Axis(0)).to_owned();
        let (mut logits, h, c) = self.decode_logits(latent, vec![prev], h, c);
        net::softmax_rows(&mut logits);
        let next = DecoderState {
            h: h.row(0).to_owned(),
            c: c.row(0).to_owned(),
        };
        Ok((logits.row(0).to_owned(), next))
    }

    /// Batched decoder step over several hypotheses sharing one latent.
    /// Returns raw logits and the next hidden and cell states.
    pub(crate) fn decode_logits(
        &self,
        latent: &LatentRep,
        prev: Vec<usize>,
        h: Array2<f64>,
        c: Array2<f64>,
    ) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
        let p = &self.params;
        let step = net::lstm_forward(&p.decoder, &p.embedding, prev, h, c);
        let (_, ctx) = net::attend(&step.h, &Latent::Shared(latent));
        let logits = net::output_logits(p, &step.h, &ctx);
        (logits, step.h, step.c)
    }

    /// Teacher-forced negative log-likelihood of `tokens` followed by EOS.
    pub fn sequence_nll(&self, tokens: &[usize], latent: &LatentRep) -> Result<f64> {
        self.check_tokens(tokens)?;
        self.check_latent(latent)?;
        if latent.nrows() != tokens.len() {
            return Err(Error::Shape(format!(
                "latent has {} rows for {} tokens",
                latent.nrows(),
                tokens.len()
            )));
        }
        let tm = to_time_major(&[latent]);
        let fwd = net::latent_forward(&self.params, &tm, &[tokens.to_vec()], self.vocabulary().eos());
        Ok(fwd.nll[0])
    }

    fn check_batch(&self, batch: &[Example], alpha: f64) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::Data("empty batch".into()));
        }
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::Config(format!("alpha {alpha} outside [0, 1]")));
        }
        for ex in batch {
            self.check_tokens(&ex.tokens)?;
            if !ex.score.is_finite() {
                return Err(Error::Numeric("non-finite score target".into()));
            }
        }
        Ok(())
    }

    /// Mean over the batch of `alpha * nll + (1 - alpha) * (p - p_hat)²`,
    /// with scores already normalized.
    pub fn joint_loss(&self, batch: &[Example], alpha: f64) -> Result<f64> {
        self.check_batch(batch, alpha)?;
        let eos = self.vocabulary().eos();
        let mut total = 0.0;
        for (_, idx) in group_by_len(batch.iter().map(|e| e.tokens.len())) {
            let tokens: Vec<Vec<usize>> = idx.iter().map(|&i| batch[i].tokens.clone()).collect();
            let scores: Vec<f64> = idx.iter().map(|&i| batch[i].score).collect();
            total += net::batch_forward_backward(&self.params, &tokens, &scores, alpha, eos, 1.0, None);
        }
        Ok(total / batch.len() as f64)
    }

    /// Joint loss evaluated with the encoder bypassed: `latents[i]` stands in
    /// for the encoding of `batch[i]`.
    pub fn joint_loss_at_latents(
        &self,
        batch: &[Example],
        latents: &[LatentRep],
        alpha: f64,
    ) -> Result<f64> {
        self.check_batch(batch, alpha)?;
        if latents.len() != batch.len() {
            return Err(Error::Shape("one latent per example required".into()));
        }
        for (ex, e) in batch.iter().zip(latents) {
            self.check_latent(e)?;
            if e.nrows() != ex.tokens.len() {
                return Err(Error::Shape("latent length differs from sequence length".into()));
            }
        }
        let eos = self.vocabulary().eos();
        let mut total = 0.0;
        for (_, idx) in group_by_len(batch.iter().map(|e| e.tokens.len())) {
            let tokens: Vec<Vec<usize>> = idx.iter().map(|&i| batch[i].tokens.clone()).collect();
            let scores: Vec<f64> = idx.iter().map(|&i| batch[i].score).collect();
            let reps: Vec<&LatentRep> = idx.iter().map(|&i| &latents[i]).collect();
            let fwd = net::latent_forward(&self.params, &to_time_major(&reps), &tokens, eos);
            total += net::joint_sum(&fwd, &scores, alpha);
        }
        Ok(total / batch.len() as f64)
    }

    /// Joint loss with its gradients with respect to every parameter and
    /// every example's latent.
    pub fn backward(&self, batch: &[Example], alpha: f64) -> Result<Gradients> {
        self.check_batch(batch, alpha)?;
        let mut grads = Params::zeros(&self.dims);
        let loss = self.accumulate(batch, alpha, &mut grads, true)?;
        let latents = loss.1.expect("latent gradients requested");
        Ok(Gradients {
            loss: loss.0,
            params: grads,
            latents,
        })
    }

    /// Adds the batch-mean gradient into `grads` and returns the mean loss.
    pub(crate) fn accumulate(
        &self,
        batch: &[Example],
        alpha: f64,
        grads: &mut Params,
        keep_latent_grads: bool,
    ) -> Result<(f64, Option<Vec<LatentRep>>)> {
        let eos = self.vocabulary().eos();
        let denom = batch.len() as f64;
        let mut total = 0.0;
        let mut latent_grads: Vec<Option<LatentRep>> =
            if keep_latent_grads { vec![None; batch.len()] } else { Vec::new() };
        for (len, idx) in group_by_len(batch.iter().map(|e| e.tokens.len())) {
            let tokens: Vec<Vec<usize>> = idx.iter().map(|&i| batch[i].tokens.clone()).collect();
            let scores: Vec<f64> = idx.iter().map(|&i| batch[i].score).collect();
            let enc = net::encode_batch(&self.params, &tokens);
            let latent: Vec<Array2<f64>> = enc.iter().map(|s| s.h.clone()).collect();
            let fwd = net::latent_forward(&self.params, &latent, &tokens, eos);
            total += net::joint_sum(&fwd, &scores, alpha);
            let d_latent =
                net::latent_backward(&self.params, &latent, &fwd, &scores, alpha, denom, grads);
            if keep_latent_grads {
                for (r, &i) in idx.iter().enumerate() {
                    let mut g = Array2::zeros((len, self.dims.hidden));
                    for (t, d) in d_latent.iter().enumerate() {
                        g.row_mut(t).assign(&d.row(r));
                    }
                    latent_grads[i] = Some(g);
                }
            }
            net::encoder_backward(&self.params, &enc, d_latent, grads);
        }
        if !total.is_finite() {
            return Err(Error::Numeric("joint loss is not finite".into()));
        }
        let latents = keep_latent_grads
            .then(|| latent_grads.into_iter().map(|g| g.expect("grouped")).collect());
        Ok((total / denom, latents))
    }

    pub fn to_json(&self) -> String {
        let ckpt = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            manifest: Manifest {
                dims: self.dims,
                vocabulary: self.dims.vocab,
                norm: self.norm,
                seed: self.seed,
                config_hash: self.config_hash.clone(),
            },
            tensors: self
                .params
                .tensors()
                .iter()
                .map(|(name, t)| Tensor {
                    name: (*name).to_string(),
                    shape: [t.nrows(), t.ncols()],
                    data: t.iter().copied().collect(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&ckpt).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: Checkpoint =
            serde_json::from_str(text).map_err(|e| Error::Data(format!("bad checkpoint: {e}")))?;
        if ckpt.format != CHECKPOINT_FORMAT || ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Data(format!(
                "unsupported checkpoint {} v{}",
                ckpt.format, ckpt.version
            )));
        }
        let m = ckpt.manifest;
        if m.vocabulary != m.dims.vocab || m.dims.vocab < 3 {
            return Err(Error::Data("inconsistent vocabulary size".into()));
        }
        let mut params = Params::zeros(&m.dims);
        if ckpt.tensors.len() != TENSOR_NAMES.len() {
            return Err(Error::Data("wrong number of tensors".into()));
        }
        for ((name, slot), t) in params.tensors_mut().into_iter().zip(ckpt.tensors) {
            if t.name != name || t.shape != [slot.nrows(), slot.ncols()] || t.data.len() != slot.len() {
                return Err(Error::Data(format!("tensor {} does not match {name}", t.name)));
            }
            if t.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("tensor {name} has non-finite entries")));
            }
            *slot = Array2::from_shape_vec((t.shape[0], t.shape[1]), t.data).expect("checked shape");
        }
        Ok(Self {
            dims: m.dims,
            params,
            norm: m.norm,
            seed: m.seed,
            config_hash: m.config_hash,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

const CHECKPOINT_FORMAT: &str = "fedgen-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Checkpoint {
    format: String,
    version: u32,
    manifest: Manifest,
    tensors: Vec<Tensor>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    dims: Dims,
    vocabulary: usize,
    norm: ScoreNorm,
    seed: u64,
    config_hash: String,
}

/// Row-major matrix.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Tensor {
    name: String,
    shape: [usize; 2],
    data: Vec<f64>,
}
