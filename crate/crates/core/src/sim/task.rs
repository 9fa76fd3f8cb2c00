//! The desk-scale task model: a linear softmax classifier trained with
//! mini-batch SGD, optionally with a proximal pull toward the global model.

use std::ops::Range;

use super::data::Dataset;
use crate::error::{Error, Result};

pub const LOCAL_BATCH: usize = 32;

/// Flat parameter vector of a `dim -> classes` linear softmax model.
///
/// Layout: `weight[f * classes + c]` for the first `dim * classes` entries,
/// then one bias per class.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskModel {
    pub dim: usize,
    pub classes: usize,
    pub params: Vec<f64>,
}

impl TaskModel {
    pub fn zeros(dim: usize, classes: usize) -> Self {
        Self {
            dim,
            classes,
            params: vec![0.0; dim * classes + classes],
        }
    }

    pub fn segments(&self) -> [(&'static str, Range<usize>); 2] {
        let w = self.dim * self.classes;
        [("weight", 0..w), ("bias", w..w + self.classes)]
    }

    pub fn weight(&self, feature: usize, class: usize) -> f64 {
        self.params[feature * self.classes + class]
    }

    pub fn bias(&self, class: usize) -> f64 {
        self.params[self.dim * self.classes + class]
    }

    fn logits_into(&self, x: &[f64], out: &mut [f64]) {
        let b = self.dim * self.classes;
        out.copy_from_slice(&self.params[b..b + self.classes]);
        for (f, &xf) in x.iter().enumerate() {
            let row = &self.params[f * self.classes..(f + 1) * self.classes];
            for (o, w) in out.iter_mut().zip(row) {
                *o += xf * w;
            }
        }
    }

    /// Class probabilities for one feature row.
    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        let mut p = vec![0.0; self.classes];
        self.logits_into(x, &mut p);
        softmax_in_place(&mut p);
        p
    }

    /// Predicted class; ties resolve to the lowest index.
    pub fn predict(&self, x: &[f64]) -> usize {
        let mut z = vec![0.0; self.classes];
        self.logits_into(x, &mut z);
        argmax(&z)
    }

    fn check_compatible(&self, data: &Dataset) -> Result<()> {
        if data.dim() != self.dim || data.classes > self.classes {
            return Err(Error::Shape(format!(
                "model is {}x{}, data has dim {} and {} classes",
                self.dim,
                self.classes,
                data.dim(),
                data.classes
            )));
        }
        Ok(())
    }
}

pub(crate) fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

fn argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in z.iter().enumerate().skip(1) {
        if v > z[best] {
            best = i;
        }
    }
    best
}

/// Local optimizer settings for one client update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Proximal coefficient; zero gives plain local SGD.
    pub mu: f64,
}

/// Runs `epochs` in-order passes of mini-batch SGD over `shard` starting from
/// `global`, minimising mean cross-entropy plus `mu/2 * ||w - w_global||²`.
///
/// The proximal term is applied through its proximal operator,
/// `w <- (w - lr*g + lr*mu*w_global) / (1 + lr*mu)`, which is stable for any
/// `mu` and reduces to the plain SGD step at `mu = 0`.
pub fn local_train(
    global: &TaskModel,
    data: &Dataset,
    shard: &[usize],
    cfg: &LocalTrainConfig,
) -> Result<TaskModel> {
    if shard.is_empty() {
        return Err(Error::EmptyShard(usize::MAX));
    }
    global.check_compatible(data)?;
    let classes = global.classes;
    let bias_at = global.dim * classes;
    let mut model = global.clone();
    let mut grad = vec![0.0; model.params.len()];
    let mut probs = vec![0.0; classes];
    for _ in 0..cfg.epochs {
        for batch in shard.chunks(LOCAL_BATCH) {
            grad.fill(0.0);
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let x = data.features.row(i);
                let x = x.as_slice().expect("standard layout");
                model.logits_into(x, &mut probs);
                softmax_in_place(&mut probs);
                probs[data.labels[i]] -= 1.0;
                for (f, &xf) in x.iter().enumerate() {
                    let row = &mut grad[f * classes..(f + 1) * classes];
                    for (g, p) in row.iter_mut().zip(&probs) {
                        *g += scale * xf * p;
                    }
                }
                for (g, p) in grad[bias_at..].iter_mut().zip(&probs) {
                    *g += scale * p;
                }
            }
            if cfg.mu == 0.0 {
                for (w, g) in model.params.iter_mut().zip(&grad) {
                    *w -= cfg.lr * g;
                }
            } else {
                let pull = cfg.lr * cfg.mu;
                for ((w, g), w0) in model.params.iter_mut().zip(&grad).zip(&global.params) {
                    *w = (*w - cfg.lr * g + pull * w0) / (1.0 + pull);
                }
            }
        }
    }
    Ok(model)
}

/// Cross-entropy of each shard sample under `model`.
pub fn sample_losses(model: &TaskModel, data: &Dataset, shard: &[usize]) -> Vec<f64> {
    shard
        .iter()
        .map(|&i| {
            let x = data.features.row(i);
            let p = model.predict_proba(x.as_slice().expect("standard layout"));
            -p[data.labels[i]].max(f64::MIN_POSITIVE).ln()
        })
        .collect()
}

/// Element-wise mean of the local models.
pub fn aggregate(locals: &[TaskModel]) -> Result<TaskModel> {
    let first = locals
        .first()
        .ok_or_else(|| Error::Shape("no local models to aggregate".into()))?;
    if let Some(bad) = locals
        .iter()
        .find(|m| m.dim != first.dim || m.classes != first.classes || m.params.len() != first.params.len())
    {
        return Err(Error::Shape(format!(
            "cannot average a {}x{} model with a {}x{} model",
            first.dim, first.classes, bad.dim, bad.classes
        )));
    }
    // Each coordinate is summed in sorted order so the mean does not depend
    // on the order of `locals`.
    let k = locals.len() as f64;
    let mut mean = TaskModel::zeros(first.dim, first.classes);
    let mut column = vec![0.0; locals.len()];
    for (j, slot) in mean.params.iter_mut().enumerate() {
        for (c, m) in column.iter_mut().zip(locals) {
            *c = m.params[j];
        }
        column.sort_by(f64::total_cmp);
        *slot = column.iter().sum::<f64>() / k;
    }
    Ok(mean)
}

/// Fraction of rows whose argmax prediction equals the label.
pub fn evaluate_model(model: &TaskModel, data: &Dataset) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let correct = data
        .features
        .rows()
        .into_iter()
        .zip(&data.labels)
        .filter(|(x, &y)| model.predict(x.as_slice().expect("standard layout")) == y)
        .count();
    correct as f64 / data.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::from_seed;
    use crate::sim::data::MixtureSpec;
    use ndarray::{array, Array2};
    use proptest::prelude::*;

    fn small_data() -> Dataset {
        let (train, _) = MixtureSpec {
            train_samples: 200,
            validation_samples: 4,
            ..MixtureSpec::default()
        }
        .generate(&mut from_seed(11))
        .unwrap();
        train
    }

    fn random_model(seed: u64) -> TaskModel {
        use rand::Rng;
        let mut rng = from_seed(seed);
        let mut m = TaskModel::zeros(16, 4);
        m.params.iter_mut().for_each(|p| *p = rng.random_range(-1.0..1.0));
        m
    }

    #[test]
    fn zero_lr_keeps_params() {
        let data = small_data();
        let g = random_model(1);
        let shard: Vec<usize> = (0..50).collect();
        let out = local_train(&g, &data, &shard, &LocalTrainConfig { epochs: 3, lr: 0.0, mu: 0.0 }).unwrap();
        assert_eq!(out, g);
    }

    #[test]
    fn empty_shard_errors() {
        let data = small_data();
        let cfg = LocalTrainConfig { epochs: 1, lr: 0.1, mu: 0.0 };
        assert!(matches!(
            local_train(&TaskModel::zeros(16, 4), &data, &[], &cfg),
            Err(Error::EmptyShard(_))
        ));
    }

    #[test]
    fn single_sample_step_matches_hand_gradient() {
        // 2 features, 2 classes, zero init: softmax is uniform.
        let data = Dataset::new(array![[1.0, 2.0]], vec![1], 2).unwrap();
        let g = TaskModel::zeros(2, 2);
        let lr = 0.5;
        let out = local_train(&g, &data, &[0], &LocalTrainConfig { epochs: 1, lr, mu: 0.0 }).unwrap();
        // dL/dz = p - y = [0.5, -0.5]; dW[f][c] = x_f * (p - y)_c
        let expected = [
            -lr * 1.0 * 0.5,
            -lr * 1.0 * -0.5,
            -lr * 2.0 * 0.5,
            -lr * 2.0 * -0.5,
            -lr * 0.5,
            -lr * -0.5,
        ];
        for (a, b) in out.params.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn proximal_term_shrinks_drift() {
        let data = small_data();
        let g = random_model(2);
        let shard: Vec<usize> = (0..64).collect();
        let drift = |mu: f64| {
            let out = local_train(&g, &data, &shard, &LocalTrainConfig { epochs: 2, lr: 0.05, mu }).unwrap();
            out.params
                .iter()
                .zip(&g.params)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt()
        };
        let norms: Vec<f64> = [0.0, 1.0, 10.0, 1e6].iter().map(|&m| drift(m)).collect();
        assert!(norms.windows(2).all(|w| w[0] > w[1]), "{norms:?}");
        assert!(norms[3] < 1e-3 * norms[0]);
    }

    #[test]
    fn aggregate_examples() {
        let mut a = TaskModel::zeros(2, 2);
        let mut b = TaskModel::zeros(2, 2);
        b.params.fill(2.0);
        assert!(aggregate(&[a.clone(), b]).unwrap().params.iter().all(|&v| v == 1.0));
        a.params.fill(0.3);
        assert_eq!(aggregate(&[a.clone(), a.clone(), a.clone()]).unwrap().params, a.params);
        assert!(aggregate(&[]).is_err());
        assert!(aggregate(&[TaskModel::zeros(2, 2), TaskModel::zeros(3, 2)]).is_err());
    }

    #[test]
    fn aggregate_matches_coordinate_average() {
        let models: Vec<TaskModel> = (0..7).map(random_model).collect();
        let mean = aggregate(&models).unwrap();
        for j in 0..mean.params.len() {
            let mut total = 0.0;
            for m in &models {
                total += m.params[j];
            }
            assert!((mean.params[j] - total / 7.0).abs() < 1e-15);
        }
    }

    #[test]
    fn evaluate_examples() {
        // constant class on a balanced 4-class set
        let features = Array2::from_shape_fn((8, 16), |(i, j)| (i + j) as f64 * 0.1);
        let data = Dataset::new(features, (0..8).map(|i| i % 4).collect(), 4).unwrap();
        let mut constant = TaskModel::zeros(16, 4);
        constant.params[16 * 4 + 2] = 1.0;
        assert_eq!(evaluate_model(&constant, &data), 0.25);

        // one-hot features, identity weights: a perfect memoriser
        let features = Array2::from_shape_fn((4, 4), |(i, j)| if i == j { 1.0 } else { 0.0 });
        let data = Dataset::new(features, vec![0, 1, 2, 3], 4).unwrap();
        let mut ident = TaskModel::zeros(4, 4);
        for c in 0..4 {
            ident.params[c * 4 + c] = 1.0;
        }
        assert_eq!(evaluate_model(&ident, &data), 1.0);
    }

    #[test]
    fn evaluate_matches_counting_oracle() {
        let data = small_data();
        for seed in 0..5 {
            let m = random_model(seed);
            let mut hits = 0;
            for i in 0..data.len() {
                let mut best = (0, f64::NEG_INFINITY);
                for c in 0..4 {
                    let mut z = m.bias(c);
                    for f in 0..16 {
                        z += data.features[[i, f]] * m.weight(f, c);
                    }
                    if z > best.1 {
                        best = (c, z);
                    }
                }
                hits += usize::from(best.0 == data.labels[i]);
            }
            assert_eq!(evaluate_model(&m, &data), hits as f64 / data.len() as f64);
        }
    }

    proptest! {
        #[test]
        fn aggregate_is_permutation_invariant(seed in any::<u64>(), n in 2usize..6) {
            use rand::seq::SliceRandom;
            let models: Vec<TaskModel> = (0..n as u64).map(|i| random_model(seed ^ i)).collect();
            let mut shuffled = models.clone();
            shuffled.shuffle(&mut from_seed(seed));
            prop_assert_eq!(aggregate(&models).unwrap(), aggregate(&shuffled).unwrap());
        }
    }
}
