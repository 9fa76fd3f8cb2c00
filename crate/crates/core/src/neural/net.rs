//! Batched forward and reverse passes of the encoder, attention decoder and
//! evaluator.
//!
//! Batches are time-major: a latent is a list of `T` matrices of shape
//! `N x hidden`, where row `n` of matrix `j` is the encoder output for token
//! `j` of sequence `n`. All sequences in a batch share one length.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, Axis, Zip};

use super::params::{LstmWeights, Params};

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Row-wise softmax in place with max subtraction.
pub(crate) fn softmax_rows(z: &mut Array2<f64>) {
    for mut row in z.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        row.mapv_inplace(|v| {
            let e = (v - max).exp();
            sum += e;
            e
        });
        row.mapv_inplace(|v| v / sum);
    }
}

/// Cached activations of one LSTM step over a batch.
#[derive(Debug, Clone)]
pub(crate) struct LstmStep {
    pub inputs: Vec<usize>,
    pub x: Array2<f64>,
    pub h_prev: Array2<f64>,
    pub c_prev: Array2<f64>,
    /// Activated gates `[i | f | g | o]`.
    pub gates: Array2<f64>,
    pub tanh_c: Array2<f64>,
    pub c: Array2<f64>,
    pub h: Array2<f64>,
}

pub(crate) fn lstm_forward(
    w: &LstmWeights,
    embedding: &Array2<f64>,
    inputs: Vec<usize>,
    h_prev: Array2<f64>,
    c_prev: Array2<f64>,
) -> LstmStep {
    let hidden = h_prev.ncols();
    let x = embedding.select(Axis(0), &inputs);
    let mut gates = x.dot(&w.w_input);
    general_mat_mul(1.0, &h_prev, &w.w_hidden, 1.0, &mut gates);
    gates += &w.bias;
    let n = inputs.len();
    let mut c = Array2::zeros((n, hidden));
    let mut tanh_c = Array2::zeros((n, hidden));
    let mut h = Array2::zeros((n, hidden));
    for r in 0..n {
        let g = gates.row_mut(r).into_slice().expect("standard layout");
        let cp = c_prev.row(r);
        let cp = cp.as_slice().expect("standard layout");
        let (c_row, tc_row, h_row) = (
            c.row_mut(r).into_slice().expect("standard layout"),
            tanh_c.row_mut(r).into_slice().expect("standard layout"),
            h.row_mut(r).into_slice().expect("standard layout"),
        );
        for k in 0..hidden {
            let i = sigmoid(g[k]);
            let f = sigmoid(g[hidden + k]);
            let gg = g[2 * hidden + k].tanh();
            let o = sigmoid(g[3 * hidden + k]);
            g[k] = i;
            g[hidden + k] = f;
            g[2 * hidden + k] = gg;
            g[3 * hidden + k] = o;
            let ck = f * cp[k] + i * gg;
            let t = ck.tanh();
            c_row[k] = ck;
            tc_row[k] = t;
            h_row[k] = o * t;
        }
    }
    LstmStep {
        inputs,
        x,
        h_prev,
        c_prev,
        gates,
        tanh_c,
        c,
        h,
    }
}

/// Accumulates parameter gradients of one step and returns the gradients
/// flowing into the previous hidden and cell states.
pub(crate) fn lstm_backward(
    w: &LstmWeights,
    step: &LstmStep,
    dh: &Array2<f64>,
    dc: &Array2<f64>,
    grad: &mut LstmWeights,
    d_embedding: &mut Array2<f64>,
) -> (Array2<f64>, Array2<f64>) {
    let (n, hidden) = dh.dim();
    let mut dz = Array2::zeros((n, 4 * hidden));
    let mut dc_prev = Array2::zeros((n, hidden));
    for r in 0..n {
        let g = step.gates.row(r);
        let g = g.as_slice().expect("standard layout");
        let tc = step.tanh_c.row(r);
        let tc = tc.as_slice().expect("standard layout");
        let cp = step.c_prev.row(r);
        let cp = cp.as_slice().expect("standard layout");
        let dh_r = dh.row(r);
        let dh_r = dh_r.as_slice().expect("standard layout");
        let dc_r = dc.row(r);
        let dc_r = dc_r.as_slice().expect("standard layout");
        let dz_r = dz.row_mut(r).into_slice().expect("standard layout");
        let dcp = dc_prev.row_mut(r).into_slice().expect("standard layout");
        for k in 0..hidden {
            let (i, f, gg, o) = (g[k], g[hidden + k], g[2 * hidden + k], g[3 * hidden + k]);
            let t = tc[k];
            let d_o = dh_r[k] * t;
            let d_c = dc_r[k] + dh_r[k] * o * (1.0 - t * t);
            dz_r[k] = d_c * gg * i * (1.0 - i);
            dz_r[hidden + k] = d_c * cp[k] * f * (1.0 - f);
            dz_r[2 * hidden + k] = d_c * i * (1.0 - gg * gg);
            dz_r[3 * hidden + k] = d_o * o * (1.0 - o);
            dcp[k] = d_c * f;
        }
    }
    general_mat_mul(1.0, &step.x.t(), &dz, 1.0, &mut grad.w_input);
    general_mat_mul(1.0, &step.h_prev.t(), &dz, 1.0, &mut grad.w_hidden);
    grad.bias += &dz.sum_axis(Axis(0)).insert_axis(Axis(0));
    let dx = dz.dot(&w.w_input.t());
    for (r, &token) in step.inputs.iter().enumerate() {
        let mut row = d_embedding.row_mut(token);
        row += &dx.row(r);
    }
    let dh_prev = dz.dot(&w.w_hidden.t());
    (dh_prev, dc_prev)
}

/// Source of latent rows for attention: per-sequence (training) or one
/// latent shared by every row (beam search).
pub(crate) enum Latent<'a> {
    PerRow(&'a [Array2<f64>]),
    Shared(&'a Array2<f64>),
}

impl Latent<'_> {
    pub fn len(&self) -> usize {
        match self {
            Latent::PerRow(steps) => steps.len(),
            Latent::Shared(e) => e.nrows(),
        }
    }

    #[inline]
    fn row(&self, n: usize, j: usize) -> ArrayView1<'_, f64> {
        match self {
            Latent::PerRow(steps) => steps[j].row(n),
            Latent::Shared(e) => e.row(j),
        }
    }
}

/// Dot-product attention of each decoder state over its latent rows.
/// Returns `(weights N x T, context N x hidden)`.
pub(crate) fn attend(h_dec: &Array2<f64>, latent: &Latent<'_>) -> (Array2<f64>, Array2<f64>) {
    let (n, hidden) = h_dec.dim();
    let t = latent.len();
    let mut weights = Array2::zeros((n, t));
    let mut context = Array2::zeros((n, hidden));
    for r in 0..n {
        let q = h_dec.row(r);
        let q = q.as_slice().expect("standard layout");
        let w = weights.row_mut(r).into_slice().expect("standard layout");
        for (j, wj) in w.iter_mut().enumerate() {
            let e = latent.row(r, j);
            *wj = dot(q, e.as_slice().expect("standard layout"));
        }
        let max = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for wj in w.iter_mut() {
            *wj = (*wj - max).exp();
            sum += *wj;
        }
        let ctx = context.row_mut(r).into_slice().expect("standard layout");
        for (j, wj) in w.iter_mut().enumerate() {
            *wj /= sum;
            let e = latent.row(r, j);
            axpy(*wj, e.as_slice().expect("standard layout"), ctx);
        }
    }
    (weights, context)
}

/// Output logits for `[h_dec ; context]`.
pub(crate) fn output_logits(p: &Params, h_dec: &Array2<f64>, context: &Array2<f64>) -> Array2<f64> {
    let hidden = h_dec.ncols();
    let mut logits = h_dec.dot(&p.output_weight.slice(s![..hidden, ..]));
    general_mat_mul(1.0, context, &p.output_weight.slice(s![hidden.., ..]), 1.0, &mut logits);
    logits += &p.output_bias;
    logits
}

#[derive(Debug, Clone)]
pub(crate) struct EvalCache {
    pub pooled: Array2<f64>,
    pub pre: Array2<f64>,
    pub act: Array2<f64>,
    pub pred: Array1<f64>,
}

pub(crate) fn mean_pool(latent: &[Array2<f64>]) -> Array2<f64> {
    let mut pooled = latent[0].clone();
    for e in &latent[1..] {
        pooled += e;
    }
    pooled /= latent.len() as f64;
    pooled
}

pub(crate) fn evaluator_forward(p: &Params, pooled: Array2<f64>) -> EvalCache {
    let mut pre = pooled.dot(&p.eval_w1);
    pre += &p.eval_b1;
    let act = pre.mapv(|v| v.max(0.0));
    let mut out = act.dot(&p.eval_w2);
    out += &p.eval_b2;
    let pred = out.column(0).to_owned();
    EvalCache {
        pooled,
        pre,
        act,
        pred,
    }
}

/// Given `d loss / d pred`, accumulates evaluator gradients and returns the
/// gradient with respect to the pooled latent.
pub(crate) fn evaluator_backward(
    p: &Params,
    cache: &EvalCache,
    d_pred: &Array1<f64>,
    grad: &mut Params,
) -> Array2<f64> {
    let d_out = d_pred.view().insert_axis(Axis(1));
    general_mat_mul(1.0, &cache.act.t(), &d_out, 1.0, &mut grad.eval_w2);
    grad.eval_b2[[0, 0]] += d_pred.sum();
    let mut d_pre = d_out.dot(&p.eval_w2.t());
    Zip::from(&mut d_pre)
        .and(&cache.pre)
        .for_each(|d, &z| {
            if z <= 0.0 {
                *d = 0.0;
            }
        });
    general_mat_mul(1.0, &cache.pooled.t(), &d_pre, 1.0, &mut grad.eval_w1);
    grad.eval_b1 += &d_pre.sum_axis(Axis(0)).insert_axis(Axis(0));
    d_pre.dot(&p.eval_w1.t())
}

/// Encoder pass over a batch of equal-length token sequences.
pub(crate) fn encode_batch(p: &Params, tokens: &[Vec<usize>]) -> Vec<LstmStep> {
    let n = tokens.len();
    let len = tokens[0].len();
    let hidden = p.encoder.w_hidden.nrows();
    let mut steps: Vec<LstmStep> = Vec::with_capacity(len);
    for t in 0..len {
        let inputs: Vec<usize> = tokens.iter().map(|seq| seq[t]).collect();
        let (h_prev, c_prev) = match steps.last() {
            Some(s) => (s.h.clone(), s.c.clone()),
            None => (Array2::zeros((n, hidden)), Array2::zeros((n, hidden))),
        };
        steps.push(lstm_forward(&p.encoder, &p.embedding, inputs, h_prev, c_prev));
    }
    steps
}

pub(crate) fn encoder_backward(
    p: &Params,
    steps: &[LstmStep],
    d_latent: Vec<Array2<f64>>,
    grad: &mut Params,
) {
    let (n, hidden) = steps[0].h.dim();
    let mut dh_next: Array2<f64> = Array2::zeros((n, hidden));
    let mut dc_next: Array2<f64> = Array2::zeros((n, hidden));
    for (step, mut dh) in steps.iter().zip(d_latent).rev() {
        dh += &dh_next;
        let (dh_prev, dc_prev) =
            lstm_backward(&p.encoder, step, &dh, &dc_next, &mut grad.encoder, &mut grad.embedding);
        dh_next = dh_prev;
        dc_next = dc_prev;
    }
}

#[derive(Debug, Clone)]
pub(crate) struct DecoderStepCache {
    pub lstm: LstmStep,
    pub weights: Array2<f64>,
    pub context: Array2<f64>,
    pub probs: Array2<f64>,
    pub targets: Vec<usize>,
}

/// Forward state of the decoder and evaluator on top of a given latent.
#[derive(Debug, Clone)]
pub(crate) struct LatentForward {
    pub steps: Vec<DecoderStepCache>,
    pub eval: EvalCache,
    /// Teacher-forced negative log-likelihood per sequence (EOS included).
    pub nll: Vec<f64>,
}

/// Teacher-forced decoder pass. The decoder starts from the last latent row
/// with a zero cell state; its first input is the EOS token, after which it
/// is fed the true previous token. Targets are the tokens followed by EOS.
pub(crate) fn latent_forward(
    p: &Params,
    latent: &[Array2<f64>],
    tokens: &[Vec<usize>],
    eos: usize,
) -> LatentForward {
    let n = tokens.len();
    let len = tokens[0].len();
    let hidden = latent[0].ncols();
    let mut h = latent[len - 1].clone();
    let mut c = Array2::zeros((n, hidden));
    let mut nll = vec![0.0; n];
    let mut steps = Vec::with_capacity(len + 1);
    let view = Latent::PerRow(latent);
    for k in 0..=len {
        let inputs: Vec<usize> = if k == 0 {
            vec![eos; n]
        } else {
            tokens.iter().map(|seq| seq[k - 1]).collect()
        };
        let targets: Vec<usize> = if k < len {
            tokens.iter().map(|seq| seq[k]).collect()
        } else {
            vec![eos; n]
        };
        let lstm = lstm_forward(&p.decoder, &p.embedding, inputs, h, c);
        let (weights, context) = attend(&lstm.h, &view);
        let mut probs = output_logits(p, &lstm.h, &context);
        softmax_rows(&mut probs);
        for (r, &target) in targets.iter().enumerate() {
            nll[r] -= probs[[r, target]].ln();
        }
        h = lstm.h.clone();
        c = lstm.c.clone();
        steps.push(DecoderStepCache {
            lstm,
            weights,
            context,
            probs,
            targets,
        });
    }
    let eval = evaluator_forward(p, mean_pool(latent));
    LatentForward { steps, eval, nll }
}

/// Summed joint loss of a batch: `alpha * nll + (1 - alpha) * (score - pred)²`.
pub(crate) fn joint_sum(fwd: &LatentForward, scores: &[f64], alpha: f64) -> f64 {
    fwd.nll
        .iter()
        .zip(scores)
        .zip(fwd.eval.pred.iter())
        .map(|((nll, s), p)| alpha * nll + (1.0 - alpha) * (s - p).powi(2))
        .sum::<f64>()
}

/// Reverse pass of [`latent_forward`] for the joint loss summed over the
/// batch and divided by `denom`. Accumulates decoder, output and evaluator
/// gradients and returns `d loss / d latent`.
pub(crate) fn latent_backward(
    p: &Params,
    latent: &[Array2<f64>],
    fwd: &LatentForward,
    scores: &[f64],
    alpha: f64,
    denom: f64,
    grad: &mut Params,
) -> Vec<Array2<f64>> {
    let n = fwd.nll.len();
    let len = latent.len();
    let hidden = latent[0].ncols();
    let inv_n = 1.0 / denom;
    let mut d_latent: Vec<Array2<f64>> = (0..len).map(|_| Array2::zeros((n, hidden))).collect();

    // evaluator
    let d_pred: Array1<f64> = fwd
        .eval
        .pred
        .iter()
        .zip(scores)
        .map(|(p, s)| (1.0 - alpha) * 2.0 * (p - s) * inv_n)
        .collect();
    let d_pooled = evaluator_backward(p, &fwd.eval, &d_pred, grad);
    for d in d_latent.iter_mut() {
        d.scaled_add(1.0 / len as f64, &d_pooled);
    }

    // decoder, newest step first
    let w_state = p.output_weight.slice(s![..hidden, ..]);
    let w_context = p.output_weight.slice(s![hidden.., ..]);
    let mut dh_next: Array2<f64> = Array2::zeros((n, hidden));
    let mut dc_next: Array2<f64> = Array2::zeros((n, hidden));
    for step in fwd.steps.iter().rev() {
        let mut d_logits = step.probs.clone();
        for (r, &target) in step.targets.iter().enumerate() {
            d_logits[[r, target]] -= 1.0;
        }
        d_logits *= alpha * inv_n;
        {
            let (mut gw_state, mut gw_ctx) = grad
                .output_weight
                .view_mut()
                .split_at(Axis(0), hidden);
            general_mat_mul(1.0, &step.lstm.h.t(), &d_logits, 1.0, &mut gw_state);
            general_mat_mul(1.0, &step.context.t(), &d_logits, 1.0, &mut gw_ctx);
        }
        grad.output_bias += &d_logits.sum_axis(Axis(0)).insert_axis(Axis(0));
        let mut dh = d_logits.dot(&w_state.t());
        let d_context = d_logits.dot(&w_context.t());
        dh += &dh_next;

        // attention
        for r in 0..n {
            let a = step.weights.row(r);
            let dctx = d_context.row(r);
            let dctx = dctx.as_slice().expect("standard layout");
            let q = step.lstm.h.row(r);
            let q = q.as_slice().expect("standard layout");
            let mut da = vec![0.0; len];
            let mut weighted = 0.0;
            for j in 0..len {
                let e = latent[j].row(r);
                da[j] = dot(dctx, e.as_slice().expect("standard layout"));
                weighted += a[j] * da[j];
            }
            for j in 0..len {
                let ds = a[j] * (da[j] - weighted);
                {
                    let dl = d_latent[j].row_mut(r).into_slice().expect("standard layout");
                    axpy(a[j], dctx, dl);
                    axpy(ds, q, dl);
                }
                let e = latent[j].row(r);
                let dh_r = dh.row_mut(r).into_slice().expect("standard layout");
                axpy(ds, e.as_slice().expect("standard layout"), dh_r);
            }
        }

        let (dh_prev, dc_prev) =
            lstm_backward(&p.decoder, &step.lstm, &dh, &dc_next, &mut grad.decoder, &mut grad.embedding);
        dh_next = dh_prev;
        dc_next = dc_prev;
    }
    // the initial decoder state is the last latent row; the initial cell is
    // a constant zero
    d_latent[len - 1] += &dh_next;
    d_latent
}

/// Summed joint loss of one equal-length batch, accumulating gradients
/// into `grad` when given.
pub(crate) fn batch_forward_backward(
    p: &Params,
    tokens: &[Vec<usize>],
    scores: &[f64],
    alpha: f64,
    eos: usize,
    denom: f64,
    grad: Option<&mut Params>,
) -> f64 {
    let enc = encode_batch(p, tokens);
    let latent: Vec<Array2<f64>> = enc.iter().map(|s| s.h.clone()).collect();
    let fwd = latent_forward(p, &latent, tokens, eos);
    let loss_sum = joint_sum(&fwd, scores, alpha);
    if let Some(grad) = grad {
        let d_latent = latent_backward(p, &latent, &fwd, scores, alpha, denom, grad);
        encoder_backward(p, &enc, d_latent, grad);
    }
    loss_sum
}
