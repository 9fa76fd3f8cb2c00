//! Gradient ascent in the learned latent space and beam-search decoding of
//! the best latent back into a client selection.

mod ascent;
mod beam;

pub use ascent::{ascend, select_best, Ascent, LatentObjective, Quadratic};
pub use beam::{beam_decode, greedy_decode, sequence_log_prob};

use serde::{Deserialize, Serialize};

use crate::collectors::SelectionRecord;
use crate::error::{Error, Result};
use crate::model::ClientSelection;
use crate::neural::{LatentRep, ModelBundle};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptConfig {
    /// Number of best records used as ascent starts.
    pub top_k: usize,
    /// Initial ascent step size.
    pub step_size: f64,
    /// Maximum number of accepted ascent steps per start.
    pub max_steps: usize,
    /// Step size multiplier after a rejected step.
    pub shrink: f64,
    /// Ascent stops once the step size falls below this.
    pub min_step: f64,
    pub beam_width: usize,
    /// Longest decoded selection; defaults to `min(2T, J)`.
    pub max_len: Option<usize>,
}

impl Default for OptConfig {
    fn default() -> Self {
        Self {
            top_k: 25,
            step_size: 0.1,
            max_steps: 20,
            shrink: 0.5,
            min_step: 1e-8,
            beam_width: 5,
            max_len: None,
        }
    }
}

impl OptConfig {
    pub fn validate(&self, devices: usize) -> Result<()> {
        if self.top_k == 0 {
            return Err(Error::Config("top_k must be at least 1".into()));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::Config("step_size must be positive".into()));
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(Error::Config("shrink must lie in (0, 1)".into()));
        }
        if !(self.min_step > 0.0) {
            return Err(Error::Config("min_step must be positive".into()));
        }
        if self.beam_width == 0 {
            return Err(Error::Config("beam_width must be at least 1".into()));
        }
        if let Some(len) = self.max_len {
            if len == 0 || len > devices {
                return Err(Error::Config(format!(
                    "max_len {len} must lie in 1..={devices}"
                )));
            }
        }
        Ok(())
    }

    /// Decode length limit for a target selection size `t` and `devices`
    /// devices.
    pub fn resolved_max_len(&self, t: usize, devices: usize) -> usize {
        self.max_len.unwrap_or((2 * t).min(devices)).max(1)
    }
}

/// One ascended latent with its estimate and where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub latent: LatentRep,
    pub score: f64,
    /// Position of the start among the top-K records.
    pub start: usize,
    pub steps: usize,
}

/// Indices of the `k` best-scored records, best first; ties keep collection
/// order. `k` is clamped to the record count.
pub fn top_k_indices(records: &[SelectionRecord], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| records[b].score.total_cmp(&records[a].score));
    order.truncate(k);
    order
}

/// Encodings of the `k` best-scored records.
pub fn top_k_starts(
    records: &[SelectionRecord],
    k: usize,
    bundle: &ModelBundle,
) -> Result<Vec<LatentRep>> {
    if records.is_empty() {
        return Err(Error::Data("no records to start from".into()));
    }
    let seqs: Vec<Vec<usize>> = top_k_indices(records, k)
        .into_iter()
        .map(|i| records[i].selection.ids().to_vec())
        .collect();
    bundle.encode_many(&seqs)
}

/// Result of one generative selection.
#[derive(Debug, Clone, PartialEq)]
pub struct GcsOutcome {
    pub selection: ClientSelection,
    /// Evaluator estimate of the chosen latent.
    pub estimate: f64,
    pub start: usize,
    pub steps: usize,
}

/// Top-K starts, ascent from each, best candidate, beam decode.
pub fn gcs_select(
    bundle: &ModelBundle,
    records: &[SelectionRecord],
    cfg: &OptConfig,
) -> Result<GcsOutcome> {
    let devices = bundle.vocabulary().devices();
    cfg.validate(devices)?;
    let starts = top_k_starts(records, cfg.top_k, bundle)?;
    let mut candidates = Vec::with_capacity(starts.len());
    for (i, start) in starts.into_iter().enumerate() {
        let a = ascend(start, bundle, cfg)?;
        candidates.push(Candidate {
            score: *a.trajectory.last().expect("trajectory holds the start"),
            steps: a.trajectory.len() - 1,
            latent: a.latent,
            start: i,
        });
    }
    let best = &candidates[select_best(&candidates)];
    let longest = records.iter().map(|r| r.selection.len()).max().unwrap_or(1);
    let max_len = cfg.max_len.unwrap_or((2 * longest).min(devices));
    let selection = beam_decode(bundle, &best.latent, cfg.beam_width, max_len)?;
    Ok(GcsOutcome {
        selection,
        estimate: best.score,
        start: best.start,
        steps: best.steps,
    })
}

#[cfg(test)]
mod tests;
