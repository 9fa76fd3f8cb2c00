//! Synthetic classification data and client partitioning.

use std::io::Read;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;

use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SimRng;

/// Feature rows with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn new(features: Array2<f64>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} feature rows but {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Data(format!("label {bad} outside 0..{classes}")));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite feature value".into()));
        }
        Ok(Self {
            features,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    /// Reads a `f0,..,f{d-1},label` table with a header row.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_reader(file)
    }

    pub fn from_csv_reader(reader: impl Read) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let header = rdr
            .headers()
            .map_err(|e| Error::Data(format!("csv header: {e}")))?
            .clone();
        let dim = header.len().saturating_sub(1);
        let expected: Vec<String> = (0..dim)
            .map(|i| format!("f{i}"))
            .chain(std::iter::once("label".to_string()))
            .collect();
        if dim == 0 || header.iter().ne(expected.iter().map(String::as_str)) {
            return Err(Error::Data(format!(
                "csv header must be f0..f{{d-1}},label; got {:?}",
                header.iter().collect::<Vec<_>>()
            )));
        }
        let mut values = Vec::new();
        let mut labels = Vec::new();
        for (line, record) in rdr.records().enumerate() {
            let record = record.map_err(|e| Error::Data(format!("csv row {}: {e}", line + 1)))?;
            for field in record.iter().take(dim) {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| Error::Data(format!("csv row {}: bad number {field:?}", line + 1)))?;
                values.push(v);
            }
            let label: usize = record[dim]
                .trim()
                .parse()
                .map_err(|_| Error::Data(format!("csv row {}: bad label", line + 1)))?;
            labels.push(label);
        }
        if labels.is_empty() {
            return Err(Error::Data("csv table has no rows".into()));
        }
        let classes = labels.iter().max().map_or(0, |m| m + 1);
        let features = Array2::from_shape_vec((labels.len(), dim), values)
            .map_err(|e| Error::Shape(e.to_string()))?;
        Dataset::new(features, labels, classes)
    }

    /// Rows selected by `indices`, in order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let features = self.features.select(ndarray::Axis(0), indices);
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Dataset {
            features,
            labels,
            classes: self.classes,
        }
    }
}

/// Isotropic Gaussian clusters, one per class, with means drawn from
/// `N(0, mean_scale²)` per coordinate and unit noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MixtureSpec {
    pub classes: usize,
    pub dim: usize,
    pub train_samples: usize,
    pub validation_samples: usize,
    pub mean_scale: f64,
}

impl Default for MixtureSpec {
    fn default() -> Self {
        Self {
            classes: 4,
            dim: 16,
            train_samples: 4000,
            validation_samples: 1000,
            mean_scale: 0.6,
        }
    }
}

impl MixtureSpec {
    /// Returns `(train, validation)` drawn from the same mixture.
    pub fn generate(&self, rng: &mut SimRng) -> Result<(Dataset, Dataset)> {
        if self.classes < 2 || self.dim == 0 || self.train_samples == 0 || self.validation_samples == 0
        {
            return Err(Error::Config(format!("degenerate mixture spec {self:?}")));
        }
        let means = Array2::from_shape_fn((self.classes, self.dim), |_| {
            let z: f64 = StandardNormal.sample(rng);
            z * self.mean_scale
        });
        let draw = |n: usize, rng: &mut SimRng| {
            let mut labels: Vec<usize> = (0..n).map(|i| i % self.classes).collect();
            labels.shuffle(rng);
            let features = Array2::from_shape_fn((n, self.dim), |(i, j)| {
                let z: f64 = StandardNormal.sample(rng);
                means[[labels[i], j]] + z
            });
            Dataset::new(features, labels, self.classes)
        };
        let train = draw(self.train_samples, rng)?;
        let validation = draw(self.validation_samples, rng)?;
        Ok((train, validation))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartitionMode {
    Iid,
    Dirichlet,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionConfig {
    pub mode: PartitionMode,
    #[serde(default = "default_beta")]
    pub beta: f64,
}

fn default_beta() -> f64 {
    0.1
}

impl Default for PartitionConfig {
    fn default() -> Self {
        Self {
            mode: PartitionMode::Dirichlet,
            beta: default_beta(),
        }
    }
}

impl PartitionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mode == PartitionMode::Dirichlet && !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(Error::Config(format!(
                "dirichlet beta must be positive, got {}",
                self.beta
            )));
        }
        Ok(())
    }
}

/// Index lists, one per client; disjoint and covering `0..data.len()`.
pub type Shards = Vec<Vec<usize>>;

const DIRICHLET_RETRIES: usize = 1000;

/// Splits the dataset across `clients`.
///
/// In Dirichlet mode each class is spread over clients with proportions drawn
/// from `Dir(beta, ..., beta)`. Draws that leave some client with fewer than
/// `min(10, n / clients)` samples are redrawn; if that keeps failing, the
/// largest shards donate samples to the starved ones.
pub fn partition_dataset(
    data: &Dataset,
    clients: usize,
    cfg: &PartitionConfig,
    rng: &mut SimRng,
) -> Result<Shards> {
    cfg.validate()?;
    if clients == 0 {
        return Err(Error::Infeasible("partition over zero clients".into()));
    }
    if clients > data.len() {
        return Err(Error::Infeasible(format!(
            "{clients} clients but only {} samples",
            data.len()
        )));
    }
    match cfg.mode {
        PartitionMode::Iid => Ok(iid_split(data.len(), clients, rng)),
        PartitionMode::Dirichlet => dirichlet_split(data, clients, cfg.beta, rng),
    }
}

fn iid_split(n: usize, clients: usize, rng: &mut SimRng) -> Shards {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let base = n / clients;
    let extra = n % clients;
    let mut shards = Vec::with_capacity(clients);
    let mut start = 0;
    for c in 0..clients {
        let size = base + usize::from(c < extra);
        shards.push(order[start..start + size].to_vec());
        start += size;
    }
    shards
}

fn dirichlet_split(data: &Dataset, clients: usize, beta: f64, rng: &mut SimRng) -> Result<Shards> {
    let gamma = Gamma::new(beta, 1.0).map_err(|e| Error::Config(format!("gamma({beta}): {e}")))?;
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); data.classes];
    for (i, &label) in data.labels.iter().enumerate() {
        by_class[label].push(i);
    }
    let min_size = (data.len() / clients).clamp(1, 10);

    let mut shards = Vec::new();
    for _ in 0..DIRICHLET_RETRIES {
        shards = vec![Vec::new(); clients];
        for members in &by_class {
            let mut members = members.clone();
            members.shuffle(rng);
            let mut props: Vec<f64> = (0..clients).map(|_| gamma.sample(rng)).collect();
            let total: f64 = props.iter().sum();
            if total > 0.0 {
                props.iter_mut().for_each(|p| *p /= total);
            } else {
                props.fill(1.0 / clients as f64);
            }
            let mut cum = 0.0;
            let mut start = 0;
            for (c, p) in props.iter().enumerate() {
                cum += p;
                let end = if c + 1 == clients {
                    members.len()
                } else {
                    ((cum * members.len() as f64) as usize).min(members.len()).max(start)
                };
                shards[c].extend_from_slice(&members[start..end]);
                start = end;
            }
        }
        if shards.iter().all(|s| s.len() >= min_size) {
            return Ok(shards);
        }
    }
    // Redistribute from the largest shards until every client has data.
    while let Some(starved) = shards.iter().position(|s| s.len() < min_size) {
        let donor = (0..clients)
            .max_by_key(|&c| (shards[c].len(), std::cmp::Reverse(c)))
            .expect("at least one client");
        if shards[donor].len() <= min_size {
            break;
        }
        let moved = shards[donor].pop().expect("donor non-empty");
        shards[starved].push(moved);
    }
    if shards.iter().any(Vec::is_empty) {
        return Err(Error::Infeasible("could not give every client a sample".into()));
    }
    Ok(shards)
}

/// Shannon entropy (nats) of the label histogram of one shard.
pub fn label_entropy(data: &Dataset, shard: &[usize]) -> f64 {
    let mut counts = vec![0usize; data.classes];
    for &i in shard {
        counts[data.labels[i]] += 1;
    }
    let n = shard.len() as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::from_seed;

    fn toy(n: usize, classes: usize) -> Dataset {
        let features = Array2::from_shape_fn((n, 2), |(i, j)| (i * 2 + j) as f64);
        Dataset::new(features, (0..n).map(|i| i % classes).collect(), classes).unwrap()
    }

    fn assert_partition(shards: &Shards, n: usize) {
        let mut all: Vec<usize> = shards.iter().flatten().copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn iid_equal_shards() {
        let data = toy(100, 4);
        let cfg = PartitionConfig {
            mode: PartitionMode::Iid,
            beta: 1.0,
        };
        let shards = partition_dataset(&data, 10, &cfg, &mut from_seed(1)).unwrap();
        assert!(shards.iter().all(|s| s.len() == 10));
        assert_partition(&shards, 100);
    }

    #[test]
    fn dirichlet_covers_and_is_seeded() {
        let data = toy(400, 4);
        let cfg = PartitionConfig {
            mode: PartitionMode::Dirichlet,
            beta: 0.1,
        };
        let a = partition_dataset(&data, 10, &cfg, &mut from_seed(5)).unwrap();
        let b = partition_dataset(&data, 10, &cfg, &mut from_seed(5)).unwrap();
        assert_eq!(a, b);
        assert_partition(&a, 400);
        assert!(a.iter().all(|s| !s.is_empty()));
    }

    #[test]
    fn infeasible_and_invalid() {
        let data = toy(5, 2);
        let cfg = PartitionConfig::default();
        assert!(matches!(
            partition_dataset(&data, 6, &cfg, &mut from_seed(0)),
            Err(Error::Infeasible(_))
        ));
        let bad = PartitionConfig {
            mode: PartitionMode::Dirichlet,
            beta: 0.0,
        };
        assert!(partition_dataset(&data, 2, &bad, &mut from_seed(0)).is_err());
    }

    #[test]
    fn skew_grows_as_beta_shrinks() {
        let (data, _) = MixtureSpec {
            train_samples: 2000,
            validation_samples: 10,
            ..MixtureSpec::default()
        }
        .generate(&mut from_seed(0))
        .unwrap();
        let mean_entropy = |beta: f64, seed: u64| {
            let cfg = PartitionConfig {
                mode: PartitionMode::Dirichlet,
                beta,
            };
            let shards = partition_dataset(&data, 20, &cfg, &mut from_seed(seed)).unwrap();
            shards.iter().map(|s| label_entropy(&data, s)).sum::<f64>() / shards.len() as f64
        };
        for seed in 0..20 {
            assert!(mean_entropy(0.1, seed) < mean_entropy(100.0, seed));
        }
    }

    #[test]
    fn csv_round_trip() {
        let text = "f0,f1,label\n0.5,1.0,0\n-2,3e-1,2\n";
        let d = Dataset::from_csv_reader(text.as_bytes()).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.classes, 3);
        assert_eq!(d.features[[1, 1]], 0.3);
        assert!(Dataset::from_csv_reader("a,b\n1,2\n".as_bytes()).is_err());
        assert!(Dataset::from_csv_reader("f0,label\nx,1\n".as_bytes()).is_err());
    }

    #[test]
    fn mixture_shapes() {
        let (train, val) = MixtureSpec::default().generate(&mut from_seed(2)).unwrap();
        assert_eq!(train.features.dim(), (4000, 16));
        assert_eq!(val.len(), 1000);
        assert_eq!(train.labels.iter().filter(|&&l| l == 3).count(), 1000);
    }
}
