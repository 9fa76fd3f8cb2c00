//! Running collector policies inside simulated sessions.

use serde::{Deserialize, Serialize};

use super::policies::{explore_select, oort_select, random_select, ClientStats, SizeBandit, ValueTable};
use super::records::{RecordSet, SelectionRecord};
use super::rewards::{favor_reward, favor_step, fedmarl_reward, RewardConfig};
use crate::error::{Error, Result};
use crate::model::ClientSelection;
use crate::rng::{child_seed, from_seed, SimRng};
use crate::sim::{Environment, RoundOutcome};

/// A per-round client selection rule that learns from round outcomes.
pub trait SelectionPolicy {
    fn select(&mut self, round: usize, rng: &mut SimRng) -> Result<ClientSelection>;

    fn observe(&mut self, _outcome: &RoundOutcome, _previous_accuracy: f64) {}
}

/// Plain FedAvg sampling.
#[derive(Debug, Clone)]
pub struct RandomPolicy {
    pub pool_size: usize,
    pub count: usize,
}

impl SelectionPolicy for RandomPolicy {
    fn select(&mut self, _round: usize, rng: &mut SimRng) -> Result<ClientSelection> {
        random_select(self.pool_size, self.count, rng)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OortConfig {
    /// Preferred round duration; `None` uses the latency budget.
    pub deadline_s: Option<f64>,
    pub alpha: f64,
}

impl Default for OortConfig {
    fn default() -> Self {
        Self {
            deadline_s: None,
            alpha: 2.0,
        }
    }
}

/// Utility-ranked selection with a fixed exploration fraction.
#[derive(Debug, Clone)]
pub struct OortPolicy {
    pub stats: Vec<ClientStats>,
    pub count: usize,
    pub epsilon: f64,
    pub deadline_s: f64,
    pub alpha: f64,
}

impl OortPolicy {
    pub fn new(env: &Environment, count: usize, epsilon: f64, cfg: &OortConfig) -> Self {
        let epochs = env.sim.local_epochs as f64;
        let stats = env
            .pool
            .devices()
            .iter()
            .map(|d| ClientStats::unexplored(d.comm_latency_s + d.comp_latency_s_per_epoch * epochs))
            .collect();
        Self {
            stats,
            count,
            epsilon,
            deadline_s: cfg.deadline_s.unwrap_or(env.budget.latency_budget_s),
            alpha: cfg.alpha,
        }
    }
}

impl SelectionPolicy for OortPolicy {
    fn select(&mut self, _round: usize, rng: &mut SimRng) -> Result<ClientSelection> {
        oort_select(&self.stats, self.count, self.epsilon, self.deadline_s, self.alpha, rng)
    }

    fn observe(&mut self, outcome: &RoundOutcome, _previous_accuracy: f64) {
        for report in &outcome.reports {
            let s = &mut self.stats[report.client];
            s.losses.clone_from(&report.losses);
            s.round_time_s = report.latency_s;
            s.times_selected += 1;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardSignal {
    Fedmarl,
    Favor,
}

/// Tabular epsilon-greedy learner standing in for the reinforcement-learning
/// selectors. Optionally also learns how many clients to pick.
#[derive(Debug, Clone)]
pub struct ExplorePolicy {
    pub values: ValueTable,
    pub sizes: Option<SizeBandit>,
    pub count: usize,
    pub epsilon: f64,
    pub signal: RewardSignal,
    pub rewards: RewardConfig,
    last_size: usize,
}

impl ExplorePolicy {
    pub fn new(
        pool_size: usize,
        count: usize,
        epsilon: f64,
        signal: RewardSignal,
        adaptive_size: bool,
        rewards: RewardConfig,
    ) -> Result<Self> {
        let sizes = if adaptive_size {
            let (lo, hi) = adaptive_size_range(count, pool_size);
            Some(SizeBandit::new(lo, hi)?)
        } else {
            None
        };
        Ok(Self {
            values: ValueTable::new(pool_size),
            sizes,
            count,
            epsilon,
            signal,
            rewards,
            last_size: count,
        })
    }
}

/// Sizes tried by adaptive collectors: `1 ..= min(2T, J)`.
pub fn adaptive_size_range(count: usize, pool_size: usize) -> (usize, usize) {
    (1, (2 * count).min(pool_size).max(1))
}

impl SelectionPolicy for ExplorePolicy {
    fn select(&mut self, _round: usize, rng: &mut SimRng) -> Result<ClientSelection> {
        self.last_size = match &self.sizes {
            Some(bandit) => bandit.choose(self.epsilon, rng),
            None => self.count,
        };
        explore_select(&self.values.values, self.last_size, self.epsilon, rng)
    }

    fn observe(&mut self, outcome: &RoundOutcome, previous_accuracy: f64) {
        let reward = match self.signal {
            RewardSignal::Fedmarl => fedmarl_reward(
                outcome.accuracy,
                previous_accuracy,
                outcome.breakdown.total_latency_s,
                outcome.selection.len() as f64,
                &self.rewards.fedmarl,
            ),
            RewardSignal::Favor => favor_step(outcome.accuracy, &self.rewards.favor),
        };
        self.values.credit(outcome.selection.ids(), reward);
        if let Some(bandit) = &mut self.sizes {
            bandit.credit(outcome.selection.len(), reward);
        }
    }
}

/// Runs `policy` for the environment's configured number of rounds on a fresh
/// global model.
pub fn run_session(
    env: &Environment,
    policy: &mut dyn SelectionPolicy,
    rng: &mut SimRng,
) -> Result<Vec<RoundOutcome>> {
    let mut session = env.session();
    let mut previous = session.accuracy();
    let mut outcomes = Vec::with_capacity(env.sim.rounds);
    for round in 0..env.sim.rounds {
        let selection = policy.select(round, rng)?;
        let outcome = session.run_round(&selection)?;
        policy.observe(&outcome, previous);
        previous = outcome.accuracy;
        outcomes.push(outcome);
    }
    Ok(outcomes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CollectorKind {
    Random,
    Oort,
    Explore,
}

/// One entry of the collector roster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollectorSpec {
    pub kind: CollectorKind,
    /// Tag stored in every record; defaults to the kind.
    #[serde(default)]
    pub name: Option<String>,
    pub sessions: usize,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_signal")]
    pub reward: RewardSignal,
    #[serde(default)]
    pub adaptive_size: bool,
}

fn default_epsilon() -> f64 {
    0.1
}

fn default_signal() -> RewardSignal {
    RewardSignal::Fedmarl
}

impl CollectorSpec {
    pub fn random(sessions: usize) -> Self {
        Self {
            kind: CollectorKind::Random,
            name: None,
            sessions,
            epsilon: 0.0,
            reward: RewardSignal::Fedmarl,
            adaptive_size: false,
        }
    }

    pub fn oort(sessions: usize) -> Self {
        Self {
            kind: CollectorKind::Oort,
            name: None,
            sessions,
            epsilon: default_epsilon(),
            reward: RewardSignal::Fedmarl,
            adaptive_size: false,
        }
    }

    pub fn explore(name: &str, sessions: usize, signal: RewardSignal, adaptive_size: bool) -> Self {
        Self {
            kind: CollectorKind::Explore,
            name: Some(name.to_string()),
            sessions,
            epsilon: 0.2,
            reward: signal,
            adaptive_size,
        }
    }

    /// Oort plus two epsilon-greedy learners, one driven by the Favor reward
    /// with a fixed size and one by the FedMarl reward with adaptive size.
    pub fn default_roster(sessions: usize) -> Vec<Self> {
        vec![
            Self::oort(sessions),
            Self::explore("favor", sessions, RewardSignal::Favor, false),
            Self::explore("fedmarl", sessions, RewardSignal::Fedmarl, true),
        ]
    }

    pub fn tag(&self) -> String {
        self.name.clone().unwrap_or_else(|| {
            match self.kind {
                CollectorKind::Random => "random",
                CollectorKind::Oort => "oort",
                CollectorKind::Explore => "explore",
            }
            .to_string()
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::Config(format!(
                "collector {}: epsilon {} outside [0, 1]",
                self.tag(),
                self.epsilon
            )));
        }
        Ok(())
    }

    pub fn build(
        &self,
        env: &Environment,
        rewards: &RewardConfig,
        oort: &OortConfig,
    ) -> Result<Box<dyn SelectionPolicy>> {
        self.validate()?;
        let count = env.sim.participants;
        let pool_size = env.pool.len();
        Ok(match self.kind {
            CollectorKind::Random => Box::new(RandomPolicy { pool_size, count }),
            CollectorKind::Oort => Box::new(OortPolicy::new(env, count, self.epsilon, oort)),
            CollectorKind::Explore => Box::new(ExplorePolicy::new(
                pool_size,
                count,
                self.epsilon,
                self.reward,
                self.adaptive_size,
                *rewards,
            )?),
        })
    }
}

/// Per-session metadata kept next to the records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub collector: String,
    pub session: usize,
    pub seed: u64,
    /// Discounted Favor return of the session's accuracy path.
    pub favor_return: f64,
    pub mean_score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Collection {
    pub records: RecordSet,
    pub sessions: Vec<SessionSummary>,
}

/// Stream name of a collector session; the session seed is
/// `child_seed(root, stream, session)`.
pub fn session_stream(tag: &str) -> String {
    format!("collect/{tag}")
}

/// Runs every collector for its number of sessions and stores one record per
/// round, ordered by (collector, session, round).
pub fn collect_records(
    env: &Environment,
    roster: &[CollectorSpec],
    rewards: &RewardConfig,
    oort: &OortConfig,
    root_seed: u64,
) -> Result<Collection> {
    rewards.validate()?;
    let mut records = RecordSet::new(env.budget, env.pool.fingerprint());
    let mut sessions = Vec::new();
    for spec in roster {
        let tag = spec.tag();
        for session in 0..spec.sessions {
            let seed = child_seed(root_seed, &session_stream(&tag), session as u64);
            let mut policy = spec.build(env, rewards, oort)?;
            let outcomes = run_session(env, policy.as_mut(), &mut from_seed(seed))?;
            let accuracies: Vec<f64> = outcomes.iter().map(|o| o.accuracy).collect();
            let mut score_sum = 0.0;
            for outcome in outcomes {
                let record = SelectionRecord::new(
                    tag.clone(),
                    seed,
                    outcome.round,
                    outcome.selection,
                    &outcome.breakdown,
                );
                record.verify(&env.budget)?;
                score_sum += record.score;
                records.records.push(record);
            }
            sessions.push(SessionSummary {
                collector: tag.clone(),
                session,
                seed,
                favor_return: favor_reward(&accuracies, &rewards.favor),
                mean_score: score_sum / env.sim.rounds as f64,
            });
        }
    }
    Ok(Collection { records, sessions })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Budget, ProfileGenerator};
    use crate::rng::from_seed;
    use crate::sim::{MixtureSpec, PartitionConfig, SimConfig};

    pub(crate) fn small_env(rounds: usize) -> Environment {
        let sim = SimConfig {
            clients: 12,
            participants: 4,
            rounds,
            ..SimConfig::default()
        };
        let pool = ProfileGenerator::default().generate(12, &mut from_seed(1));
        let (train, val) = MixtureSpec {
            train_samples: 600,
            validation_samples: 200,
            ..MixtureSpec::default()
        }
        .generate(&mut from_seed(2))
        .unwrap();
        Environment::new(
            pool,
            train,
            val,
            &PartitionConfig::default(),
            sim,
            Budget::new(6.0, 60.0).unwrap(),
            &mut from_seed(3),
        )
        .unwrap()
    }

    #[test]
    fn record_count_and_round_trip() {
        let env = small_env(5);
        let roster = vec![CollectorSpec::oort(2)];
        let c = collect_records(&env, &roster, &RewardConfig::default(), &OortConfig::default(), 9).unwrap();
        assert_eq!(c.records.len(), 10);
        assert_eq!(c.sessions.len(), 2);
        for r in &c.records.records {
            let again = crate::model::comprehensive_score(r.perf, r.latency_s, r.energy_j, &env.budget).unwrap();
            assert_eq!(again.comprehensive.to_bits(), r.score.to_bits());
        }
        let rounds: Vec<usize> = c.records.records.iter().map(|r| r.round).collect();
        assert_eq!(rounds, vec![0, 1, 2, 3, 4, 0, 1, 2, 3, 4]);
    }

    #[test]
    fn collection_is_reproducible() {
        let env = small_env(4);
        let roster = CollectorSpec::default_roster(2);
        let run = || {
            collect_records(&env, &roster, &RewardConfig::default(), &OortConfig::default(), 5)
                .unwrap()
                .records
                .to_jsonl()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn adaptive_collector_varies_size() {
        let env = small_env(12);
        let roster = vec![CollectorSpec::explore("fedmarl", 3, RewardSignal::Fedmarl, true)];
        let c = collect_records(&env, &roster, &RewardConfig::default(), &OortConfig::default(), 1).unwrap();
        let mut sizes: Vec<usize> = c.records.records.iter().map(|r| r.selection.len()).collect();
        sizes.sort_unstable();
        sizes.dedup();
        assert!(sizes.len() >= 2, "{sizes:?}");
        let (lo, hi) = adaptive_size_range(4, 12);
        assert!(sizes.iter().all(|s| (lo..=hi).contains(s)));
    }

    #[test]
    fn fixed_collectors_emit_fixed_size() {
        let env = small_env(6);
        let roster = vec![
            CollectorSpec::random(2),
            CollectorSpec::oort(2),
            CollectorSpec::explore("favor", 2, RewardSignal::Favor, false),
        ];
        let c = collect_records(&env, &roster, &RewardConfig::default(), &OortConfig::default(), 2).unwrap();
        assert!(c.records.records.iter().all(|r| r.selection.len() == 4));
        assert!(c.records.records.iter().all(|r| r.selection.check_pool(12).is_ok()));
    }
}
