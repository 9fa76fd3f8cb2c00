use ndarray::{Array1, Array2, Axis};

use crate::error::{Error, Result};
use crate::model::ClientSelection;
use crate::neural::{LatentRep, ModelBundle};

struct Hypothesis {
    tokens: Vec<usize>,
    log_prob: f64,
    h: Array1<f64>,
    c: Array1<f64>,
}

/// Tokens the decoder may emit after `prefix`: unused devices while the
/// prefix is shorter than `max_len`, and EOS once the prefix is non-empty.
/// PAD is never allowed.
fn allowed(prefix: &[usize], devices: usize, max_len: usize) -> Vec<usize> {
    let mut out = Vec::new();
    if prefix.len() < max_len {
        out.extend((0..devices).filter(|d| !prefix.contains(d)));
    }
    if !prefix.is_empty() {
        out.push(devices);
    }
    out
}

/// Log-probabilities of the allowed tokens after renormalizing over them.
fn masked_log_softmax(logits: ndarray::ArrayView1<'_, f64>, allowed: &[usize]) -> Vec<f64> {
    let max = allowed
        .iter()
        .map(|&t| logits[t])
        .fold(f64::NEG_INFINITY, f64::max);
    let lse = max + allowed.iter().map(|&t| (logits[t] - max).exp()).sum::<f64>().ln();
    allowed.iter().map(|&t| logits[t] - lse).collect()
}

fn check(bundle: &ModelBundle, latent: &LatentRep, width: usize, max_len: usize) -> Result<usize> {
    let devices = bundle.vocabulary().devices();
    if width == 0 {
        return Err(Error::Config("beam width must be at least 1".into()));
    }
    if max_len == 0 || max_len > devices {
        return Err(Error::Config(format!("max_len {max_len} must lie in 1..={devices}")));
    }
    if latent.nrows() == 0 || latent.ncols() != bundle.dims.hidden {
        return Err(Error::Shape(format!("latent has shape {:?}", latent.dim())));
    }
    if latent.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("latent has non-finite entries".into()));
    }
    Ok(devices)
}

/// Beam search over masked decoder distributions. Beams are ranked by
/// accumulated log-probability; a beam ends when it emits EOS, and a beam
/// holding `max_len` devices can only emit EOS.
pub fn beam_decode(
    bundle: &ModelBundle,
    latent: &LatentRep,
    width: usize,
    max_len: usize,
) -> Result<ClientSelection> {
    let devices = check(bundle, latent, width, max_len)?;
    let eos = devices;
    let start = bundle.initial_state(latent);
    let mut live = vec![Hypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        h: start.h,
        c: start.c,
    }];
    let mut finished: Vec<(Vec<usize>, f64)> = Vec::new();
    while !live.is_empty() {
        let prev: Vec<usize> = live.iter().map(|b| *b.tokens.last().unwrap_or(&eos)).collect();
        let h = ndarray::stack(Axis(0), &live.iter().map(|b| b.h.view()).collect::<Vec<_>>())
            .expect("equal widths");
        let c = ndarray::stack(Axis(0), &live.iter().map(|b| b.c.view()).collect::<Vec<_>>())
            .expect("equal widths");
        let (logits, h, c): (Array2<f64>, Array2<f64>, Array2<f64>) =
            bundle.decode_logits(latent, prev, h, c);

        // (log prob, parent, token) in generation order
        let mut expansions = Vec::new();
        for (r, beam) in live.iter().enumerate() {
            let tokens = allowed(&beam.tokens, devices, max_len);
            let logp = masked_log_softmax(logits.row(r), &tokens);
            for (t, lp) in tokens.into_iter().zip(logp) {
                expansions.push((beam.log_prob + lp, r, t));
            }
        }
        expansions.sort_by(|a, b| b.0.total_cmp(&a.0));
        expansions.truncate(width);

        let mut next = Vec::new();
        for (lp, r, t) in expansions {
            let mut tokens = live[r].tokens.clone();
            if t == eos {
                finished.push((tokens, lp));
            } else {
                tokens.push(t);
                next.push(Hypothesis {
                    tokens,
                    log_prob: lp,
                    h: h.row(r).to_owned(),
                    c: c.row(r).to_owned(),
                });
            }
        }
        live = next;
        let best_done = finished.iter().map(|f| f.1).fold(f64::NEG_INFINITY, f64::max);
        let best_live = live.iter().map(|b| b.log_prob).fold(f64::NEG_INFINITY, f64::max);
        if best_done >= best_live {
            break;
        }
    }
    let mut best = 0;
    for (i, f) in finished.iter().enumerate() {
        if f.1 > finished[best].1 {
            best = i;
        }
    }
    let (tokens, _) = finished.swap_remove(best);
    ClientSelection::new(tokens)
}

/// Beam search with a single beam: the per-step argmax chain.
pub fn greedy_decode(bundle: &ModelBundle, latent: &LatentRep, max_len: usize) -> Result<ClientSelection> {
    beam_decode(bundle, latent, 1, max_len)
}

/// Log-probability of `tokens` followed by EOS under the same masks and
/// renormalization that decoding uses.
pub fn sequence_log_prob(
    bundle: &ModelBundle,
    latent: &LatentRep,
    tokens: &[usize],
    max_len: usize,
) -> Result<f64> {
    let devices = check(bundle, latent, 1, max_len)?;
    let eos = devices;
    if tokens.is_empty() || tokens.len() > max_len {
        return Err(Error::InvalidSelection(format!(
            "length {} outside 1..={max_len}",
            tokens.len()
        )));
    }
    let mut state = bundle.initial_state(latent);
    let mut prev = eos;
    let mut total = 0.0;
    for (k, &target) in tokens.iter().chain(std::iter::once(&eos)).enumerate() {
        let prefix = &tokens[..k];
        let allow = allowed(prefix, devices, max_len);
        let Some(pos) = allow.iter().position(|&t| t == target) else {
            return Err(Error::InvalidSelection(format!("token {target} masked after {prefix:?}")));
        };
        let h = state.h.view().insert_axis(Axis(0)).to_owned();
        let c = state.c.view().insert_axis(Axis(0)).to_owned();
        let (logits, h, c) = bundle.decode_logits(latent, vec![prev], h, c);
        total += masked_log_softmax(logits.row(0), &allow)[pos];
        state.h = h.row(0).to_owned();
        state.c = c.row(0).to_owned();
        prev = target;
    }
    Ok(total)
}
