use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::bundle::{ModelBundle, ScoreNorm};
use super::params::{Dims, Params};
use crate::collectors::RecordSet;
use crate::error::{Error, Result};
use crate::rng;

/// One training pair: device tokens (EOS is implicit) and a normalized score.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub tokens: Vec<usize>,
    pub score: f64,
}

/// Turns records into training pairs under the given normalization.
pub fn examples_from_records(records: &RecordSet, norm: &ScoreNorm) -> Vec<Example> {
    records
        .records
        .iter()
        .map(|r| Example {
            tokens: r.selection.ids().to_vec(),
            score: norm.normalize(r.score),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub alpha: f64,
    pub epochs: usize,
    /// Stop after this many epochs without a lower training loss; 0 disables.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 1024,
            learning_rate: 0.001,
            alpha: 0.8,
            epochs: 200,
            patience: 20,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean joint loss of every completed epoch.
    pub epoch_losses: Vec<f64>,
    /// Epoch whose parameters were kept (0 when no epoch ran).
    pub best_epoch: usize,
    pub stopped_early: bool,
    /// All scores were equal, so every target became 0.5.
    pub degenerate_scores: bool,
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Params,
    v: Params,
    t: i32,
}

impl Adam {
    pub fn new(dims: &Dims, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: Params::zeros(dims),
            v: Params::zeros(dims),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut Params, grads: &Params) {
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let (lr, eps) = (self.lr, self.eps);
        let slots = params
            .tensors_mut()
            .into_iter()
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut())
            .zip(grads.tensors());
        for ((((_, p), (_, m)), (_, v)), (_, g)) in slots {
            ndarray::Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            });
        }
    }
}

/// Trains a standard-size bundle on a record corpus.
pub fn train(records: &RecordSet, devices: usize, cfg: &TrainConfig) -> Result<(ModelBundle, TrainReport)> {
    train_with_dims(records, Dims::standard(devices), cfg)
}

/// Trains with explicit layer sizes. Scores are min-max normalized over the
/// corpus; mini-batches are reshuffled every epoch and the parameters of
/// the epoch with the lowest mean loss are returned.
pub fn train_with_dims(
    records: &RecordSet,
    dims: Dims,
    cfg: &TrainConfig,
) -> Result<(ModelBundle, TrainReport)> {
    cfg.validate()?;
    if records.is_empty() {
        return Err(Error::Data("cannot train on an empty corpus".into()));
    }
    let devices = dims.vocab - 2;
    for r in &records.records {
        r.selection.check_pool(devices)?;
    }
    let norm = ScoreNorm::fit(records.records.iter().map(|r| r.score))?;
    if norm.is_degenerate() {
        log::warn!("all {} scores equal {}; targets set to 0.5", records.len(), norm.min);
    }
    let examples = examples_from_records(records, &norm);

    let params = Params::xavier(&dims, &mut rng::stream(cfg.seed, "train/init", 0));
    let mut bundle = ModelBundle::new(dims, params, norm, cfg.seed);
    let mut report = TrainReport {
        epoch_losses: Vec::new(),
        best_epoch: 0,
        stopped_early: false,
        degenerate_scores: norm.is_degenerate(),
    };
    let mut shuffle_rng = rng::stream(cfg.seed, "train/shuffle", 0);
    let mut adam = Adam::new(&dims, cfg.learning_rate);
    let mut grads = Params::zeros(&dims);
    let mut best = (f64::INFINITY, bundle.params.clone());
    let mut order: Vec<usize> = (0..examples.len()).collect();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<Example> = chunk.iter().map(|&i| examples[i].clone()).collect();
            grads.fill(0.0);
            let (loss, _) = bundle.accumulate(&batch, cfg.alpha, &mut grads, false)?;
            if !grads.is_finite() {
                return Err(Error::Numeric(format!("non-finite gradient in epoch {epoch}")));
            }
            adam.step(&mut bundle.params, &grads);
            loss_sum += loss * batch.len() as f64;
        }
        let epoch_loss = loss_sum / examples.len() as f64;
        log::info!("epoch {epoch} loss {epoch_loss:.6}");
        report.epoch_losses.push(epoch_loss);
        if epoch_loss < best.0 {
            best = (epoch_loss, bundle.params.clone());
            report.best_epoch = epoch;
        } else if cfg.patience > 0 && epoch - report.best_epoch >= cfg.patience {
            report.stopped_early = true;
            break;
        }
    }
    if report.best_epoch > 0 {
        bundle.params = best.1;
    }
    if !bundle.params.is_finite() {
        return Err(Error::Numeric("training produced non-finite parameters".into()));
    }
    Ok((bundle, report))
}
