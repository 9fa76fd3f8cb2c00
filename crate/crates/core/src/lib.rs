//! Generative client selection for simulated federated learning.
//!
//! The pipeline collects selection/score records from classical selection
//! policies running inside a simulated heterogeneous federation, trains an
//! encoder-evaluator-decoder over those selections, climbs the evaluator's
//! gradient in the learned latent space and decodes the best latent back into
//! a client subset with beam search.

pub mod collectors;
pub mod error;
pub mod harness;
pub mod latent;
pub mod model;
pub mod neural;
pub mod rng;
pub mod sim;

pub use error::{Error, ErrorKind, Result};
