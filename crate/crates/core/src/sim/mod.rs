//! Deterministic simulated federated training.

pub mod data;
pub mod task;

pub use data::{
    label_entropy, partition_dataset, Dataset, MixtureSpec, PartitionConfig, PartitionMode, Shards,
};
pub use task::{aggregate, evaluate_model, local_train, sample_losses, LocalTrainConfig, TaskModel};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    comprehensive_score, round_energy, round_latency, Budget, ClientSelection, DevicePool,
    ScoreBreakdown,
};
use crate::rng::SimRng;

/// Federation size and local training schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub clients: usize,
    pub participants: usize,
    pub rounds: usize,
    pub local_epochs: usize,
    pub local_lr: f64,
    pub mu: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            clients: 30,
            participants: 6,
            rounds: 20,
            local_epochs: 5,
            local_lr: 0.02,
            mu: 0.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.clients >= 1
            && (1..=self.clients).contains(&self.participants)
            && self.rounds >= 1
            && self.local_epochs >= 1
            && self.local_lr.is_finite()
            && self.local_lr >= 0.0
            && self.mu.is_finite()
            && self.mu >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid sim config {self:?}")))
        }
    }

    pub fn local(&self) -> LocalTrainConfig {
        LocalTrainConfig {
            epochs: self.local_epochs,
            lr: self.local_lr,
            mu: self.mu,
        }
    }
}

/// Everything a session needs that does not change from round to round:
/// the device pool, the data and its partition.
#[derive(Debug, Clone)]
pub struct Environment {
    pub pool: DevicePool,
    pub train: Dataset,
    pub validation: Dataset,
    pub shards: Shards,
    pub sim: SimConfig,
    pub budget: Budget,
}

impl Environment {
    pub fn new(
        pool: DevicePool,
        train: Dataset,
        validation: Dataset,
        partition: &PartitionConfig,
        sim: SimConfig,
        budget: Budget,
        rng: &mut SimRng,
    ) -> Result<Self> {
        sim.validate()?;
        budget.validate()?;
        if pool.len() != sim.clients {
            return Err(Error::Config(format!(
                "pool has {} devices but sim expects {} clients",
                pool.len(),
                sim.clients
            )));
        }
        if validation.is_empty() {
            return Err(Error::Data("validation set is empty".into()));
        }
        let shards = partition_dataset(&train, sim.clients, partition, rng)?;
        Ok(Self {
            pool,
            train,
            validation,
            shards,
            sim,
            budget,
        })
    }

    pub fn fresh_model(&self) -> TaskModel {
        TaskModel::zeros(self.train.dim(), self.train.classes)
    }

    pub fn session(&self) -> Session<'_> {
        Session {
            env: self,
            global: self.fresh_model(),
            round: 0,
        }
    }
}

/// What one participant reported back in a round.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticipantReport {
    pub client: usize,
    /// Per-sample losses of the incoming global model on the client's shard.
    pub losses: Vec<f64>,
    pub latency_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutcome {
    pub round: usize,
    pub accuracy: f64,
    pub breakdown: ScoreBreakdown,
    pub selection: ClientSelection,
    pub reports: Vec<ParticipantReport>,
}

/// One training trajectory: a global model advanced round by round.
#[derive(Debug, Clone)]
pub struct Session<'a> {
    env: &'a Environment,
    pub global: TaskModel,
    pub round: usize,
}

impl<'a> Session<'a> {
    pub fn env(&self) -> &'a Environment {
        self.env
    }

    pub fn accuracy(&self) -> f64 {
        evaluate_model(&self.global, &self.env.validation)
    }

    /// Trains the selected clients from the current global model, averages
    /// them and scores the round. No randomness is involved.
    pub fn run_round(&mut self, selection: &ClientSelection) -> Result<RoundOutcome> {
        let env = self.env;
        selection.check_pool(env.pool.len())?;
        let local_cfg = env.sim.local();
        let mut locals = Vec::with_capacity(selection.len());
        let mut reports = Vec::with_capacity(selection.len());
        for &client in selection.ids() {
            let shard = &env.shards[client];
            if shard.is_empty() {
                return Err(Error::EmptyShard(client));
            }
            let losses = sample_losses(&self.global, &env.train, shard);
            locals.push(local_train(&self.global, &env.train, shard, &local_cfg)?);
            reports.push(ParticipantReport {
                client,
                losses,
                latency_s: env.pool.get(client)?.latency_s(self.round, env.sim.local_epochs),
            });
        }
        self.global = aggregate(&locals)?;
        let accuracy = self.accuracy();
        let latency = round_latency(selection.ids(), &env.pool, self.round, env.sim.local_epochs)?;
        let energy = round_energy(selection.ids(), &env.pool, self.round, env.sim.local_epochs)?;
        let breakdown = comprehensive_score(accuracy, latency, energy, &env.budget)?;
        let outcome = RoundOutcome {
            round: self.round,
            accuracy,
            breakdown,
            selection: selection.clone(),
            reports,
        };
        self.round += 1;
        Ok(outcome)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DeviceProfile, ProfileGenerator};
    use crate::rng::from_seed;

    fn env(seed: u64) -> Environment {
        let sim = SimConfig {
            clients: 10,
            participants: 3,
            ..SimConfig::default()
        };
        let pool = ProfileGenerator::default().generate(10, &mut from_seed(seed));
        let (train, val) = MixtureSpec {
            train_samples: 600,
            validation_samples: 200,
            ..MixtureSpec::default()
        }
        .generate(&mut from_seed(seed + 1))
        .unwrap();
        Environment::new(
            pool,
            train,
            val,
            &PartitionConfig::default(),
            sim,
            Budget::new(6.0, 60.0).unwrap(),
            &mut from_seed(seed + 2),
        )
        .unwrap()
    }

    #[test]
    fn replay_is_bit_identical() {
        let e = env(1);
        let sel = ClientSelection::new(vec![4, 1, 7]).unwrap();
        let run = || {
            let mut s = e.session();
            (0..3).map(|_| s.run_round(&sel).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn outcome_bounds() {
        let e = env(2);
        let mut s = e.session();
        for r in 0..4 {
            let out = s.run_round(&ClientSelection::new(vec![r, r + 3]).unwrap()).unwrap();
            assert_eq!(out.round, r);
            assert!((0.0..=1.0).contains(&out.accuracy));
            assert!(out.breakdown.comprehensive <= out.accuracy);
            assert_eq!(out.breakdown.perf, out.accuracy);
            assert_eq!(out.reports.len(), 2);
        }
    }

    #[test]
    fn identical_devices_latency_equals_single() {
        let mut e = env(3);
        let d = |id| DeviceProfile {
            id,
            comm_latency_s: 1.5,
            comp_latency_s_per_epoch: 0.5,
            comm_energy_j: 1.0,
            comp_energy_j_per_epoch: 1.0,
            availability: vec![1.0],
        };
        e.pool = DevicePool::new((0..10).map(d).collect()).unwrap();
        let out = e.session().run_round(&ClientSelection::new(vec![0, 5, 9]).unwrap()).unwrap();
        assert_eq!(out.breakdown.total_latency_s, 1.5 + 0.5 * 5.0);
    }

    #[test]
    fn frozen_training_keeps_model() {
        let mut e = env(4);
        e.sim.local_lr = 0.0;
        let mut s = e.session();
        let start = s.global.clone();
        let acc0 = s.accuracy();
        for r in 0..3 {
            let out = s.run_round(&ClientSelection::new(vec![r, 9 - r]).unwrap()).unwrap();
            assert_eq!(out.accuracy, acc0);
        }
        assert_eq!(s.global, start);
    }

    #[test]
    fn rejects_foreign_ids() {
        let e = env(5);
        let mut s = e.session();
        assert!(s.run_round(&ClientSelection::new(vec![10]).unwrap()).is_err());
    }
}
