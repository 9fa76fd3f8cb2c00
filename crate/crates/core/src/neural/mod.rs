//! Encoder, attention decoder and score evaluator over tokenized selections.
//!
//! Device `i` is token `i`. Two extra tokens close the vocabulary: EOS
//! (index `J`) terminates a sequence and doubles as the decoder's start
//! input, PAD (index `J + 1`) is reserved and never produced or scored.

mod bundle;
pub(crate) mod net;
mod params;
mod train;

pub use bundle::{attend, DecoderState, Gradients, LatentRep, ModelBundle, ScoreNorm};
pub use params::{is_evaluator, Dims, LstmWeights, Params, TENSOR_NAMES};
pub use train::{examples_from_records, train, train_with_dims, Adam, Example, TrainConfig, TrainReport};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ClientSelection;

/// Token set for a pool of `J` devices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    devices: usize,
}

impl Vocabulary {
    pub fn new(devices: usize) -> Result<Self> {
        if devices == 0 {
            return Err(Error::Config("vocabulary needs at least one device".into()));
        }
        Ok(Self { devices })
    }

    pub fn devices(&self) -> usize {
        self.devices
    }

    pub fn size(&self) -> usize {
        self.devices + 2
    }

    pub fn eos(&self) -> usize {
        self.devices
    }

    pub fn pad(&self) -> usize {
        self.devices + 1
    }

    pub fn is_device(&self, token: usize) -> bool {
        token < self.devices
    }

    /// Device tokens of a selection, in selection order.
    pub fn tokenize(&self, selection: &ClientSelection) -> Result<Vec<usize>> {
        selection.check_pool(self.devices)?;
        Ok(selection.ids().to_vec())
    }
}
