use crate::collectors::{
    augment_records, collect_records, Collection, CollectorKind, CollectorSpec, RecordSet,
    SelectionPolicy, SelectionRecord,
};
use crate::error::{Error, Result};
use crate::latent::{gcs_select, OptConfig};
use crate::model::{ClientSelection, DevicePool};
use crate::neural::{train, ModelBundle, TrainReport};
use crate::rng::{child_seed, from_seed, stream, SimRng};
use crate::sim::{Dataset, Environment, RoundOutcome};

use super::config::ExperimentConfig;
use super::metrics::{metrics_rows, MetricsRow};

pub fn build_pool(cfg: &ExperimentConfig) -> Result<DevicePool> {
    match &cfg.pool.profiles {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&text)
                .map_err(|e| Error::Data(format!("{}: {e}", path.display())))
        }
        None => Ok(cfg
            .pool
            .generator
            .generate(cfg.sim.clients, &mut stream(cfg.seed, "pool", 0))),
    }
}

pub fn build_data(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    match (&cfg.data.train_csv, &cfg.data.validation_csv) {
        (Some(train), Some(val)) => Ok((Dataset::from_csv(train)?, Dataset::from_csv(val)?)),
        _ => cfg.data.mixture.generate(&mut stream(cfg.seed, "data", 0)),
    }
}

pub fn build_environment(cfg: &ExperimentConfig) -> Result<Environment> {
    let pool = build_pool(cfg)?;
    let (train, validation) = build_data(cfg)?;
    Environment::new(
        pool,
        train,
        validation,
        &cfg.partition,
        cfg.sim,
        cfg.budget,
        &mut stream(cfg.seed, "partition", 0),
    )
}

pub fn collect(cfg: &ExperimentConfig, env: &Environment) -> Result<Collection> {
    collect_with(cfg, env, &cfg.collection.collectors)
}

pub fn collect_with(
    cfg: &ExperimentConfig,
    env: &Environment,
    roster: &[CollectorSpec],
) -> Result<Collection> {
    collect_records(env, roster, &cfg.rewards, &cfg.oort, child_seed(cfg.seed, "collect", 0))
}

/// A roster of purely random collectors with the same total session count.
pub fn random_roster(cfg: &ExperimentConfig) -> Vec<CollectorSpec> {
    let sessions = cfg.collection.collectors.iter().map(|c| c.sessions).sum();
    vec![CollectorSpec::random(sessions)]
}

pub fn augment(cfg: &ExperimentConfig, records: &RecordSet, shuffles: usize) -> RecordSet {
    augment_records(records, shuffles, &mut stream(cfg.seed, "augment", 0))
}

/// Augments the corpus and trains a bundle stamped with the train hash.
pub fn train_model(
    cfg: &ExperimentConfig,
    records: &RecordSet,
    shuffles: usize,
) -> Result<(ModelBundle, TrainReport)> {
    let corpus = augment(cfg, records, shuffles);
    let mut train_cfg = cfg.train.clone();
    train_cfg.seed = child_seed(cfg.seed, "train", cfg.train.seed);
    let (mut bundle, report) = train(&corpus, cfg.sim.clients, &train_cfg)?;
    bundle.config_hash = cfg.train_hash();
    Ok((bundle, report))
}

/// The generative selector as a per-round policy.
pub struct GcsPolicy<'a> {
    pub bundle: &'a ModelBundle,
    pub records: &'a [SelectionRecord],
    pub opt: OptConfig,
    pub round_matched: bool,
}

impl<'a> GcsPolicy<'a> {
    pub fn new(cfg: &ExperimentConfig, bundle: &'a ModelBundle, records: &'a [SelectionRecord]) -> Self {
        let mut opt = cfg.opt.clone();
        opt.max_len = Some(opt.resolved_max_len(cfg.sim.participants, cfg.sim.clients));
        Self {
            bundle,
            records,
            opt,
            round_matched: cfg.gcs.round_matched_starts,
        }
    }

    pub fn starts(&self, round: usize) -> Vec<SelectionRecord> {
        if self.round_matched {
            let same: Vec<SelectionRecord> =
                self.records.iter().filter(|r| r.round == round).cloned().collect();
            if !same.is_empty() {
                return same;
            }
        }
        self.records.to_vec()
    }
}

impl SelectionPolicy for GcsPolicy<'_> {
    fn select(&mut self, round: usize, _rng: &mut SimRng) -> Result<ClientSelection> {
        let starts = self.starts(round);
        Ok(gcs_select(self.bundle, &starts, &self.opt)?.selection)
    }
}

/// Plays `policy` on a fresh session, stopping early once `target` accuracy
/// is reached.
pub fn run_policy(
    env: &Environment,
    policy: &mut dyn SelectionPolicy,
    rng: &mut SimRng,
    target: Option<f64>,
) -> Result<Vec<RoundOutcome>> {
    let mut session = env.session();
    let mut previous = session.accuracy();
    let mut outcomes = Vec::with_capacity(env.sim.rounds);
    for round in 0..env.sim.rounds {
        let selection = policy.select(round, rng)?;
        let outcome = session.run_round(&selection)?;
        policy.observe(&outcome, previous);
        previous = outcome.accuracy;
        let done = target.is_some_and(|t| outcome.accuracy >= t);
        outcomes.push(outcome);
        if done {
            break;
        }
    }
    Ok(outcomes)
}

/// Looks a policy name up: `random`, `gcs`, a roster tag, or a collector
/// kind (first roster entry of that kind).
pub fn resolve_collector(cfg: &ExperimentConfig, name: &str) -> Result<Option<CollectorSpec>> {
    if name == "gcs" {
        return Ok(None);
    }
    let roster = &cfg.collection.collectors;
    if let Some(spec) = roster.iter().find(|c| c.tag() == name) {
        return Ok(Some(spec.clone()));
    }
    let kind = match name {
        "random" => return Ok(Some(CollectorSpec::random(1))),
        "oort" => CollectorKind::Oort,
        "explore" => CollectorKind::Explore,
        _ => return Err(Error::Config(format!("unknown policy {name:?}"))),
    };
    roster
        .iter()
        .find(|c| c.kind == kind)
        .cloned()
        .map(Some)
        .ok_or_else(|| Error::Config(format!("no {name} collector in the roster")))
}

/// Runs a classical collector as a stand-alone policy.
pub fn run_collector(
    cfg: &ExperimentConfig,
    env: &Environment,
    spec: &CollectorSpec,
) -> Result<Vec<MetricsRow>> {
    let tag = spec.tag();
    let mut policy = spec.build(env, &cfg.rewards, &cfg.oort)?;
    let mut rng = from_seed(child_seed(cfg.seed, &format!("run/{tag}"), 0));
    let outcomes = run_policy(env, policy.as_mut(), &mut rng, cfg.target_accuracy)?;
    Ok(metrics_rows(&tag, &outcomes))
}

pub fn run_gcs(
    cfg: &ExperimentConfig,
    env: &Environment,
    bundle: &ModelBundle,
    records: &RecordSet,
) -> Result<Vec<MetricsRow>> {
    let mut policy = GcsPolicy::new(cfg, bundle, &records.records);
    let mut rng = from_seed(child_seed(cfg.seed, "run/gcs", 0));
    let outcomes = run_policy(env, &mut policy, &mut rng, cfg.target_accuracy)?;
    Ok(metrics_rows("gcs", &outcomes))
}
