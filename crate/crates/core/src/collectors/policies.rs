//! Selection rules of the classical collectors.

use rand::seq::{index, SliceRandom};
use rand::Rng;

use crate::error::{Error, Result};
use crate::model::ClientSelection;
use crate::rng::SimRng;

/// Uniform sample of `count` distinct clients out of `pool_size`, in random
/// order.
pub fn random_select(pool_size: usize, count: usize, rng: &mut SimRng) -> Result<ClientSelection> {
    if count == 0 || count > pool_size {
        return Err(Error::Infeasible(format!(
            "cannot select {count} of {pool_size} clients"
        )));
    }
    let mut ids = index::sample(rng, pool_size, count).into_vec();
    ids.shuffle(rng);
    ClientSelection::new(ids)
}

/// What the server knows about one client.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ClientStats {
    /// Per-sample losses from the client's last participation; empty while
    /// the client is unexplored.
    pub losses: Vec<f64>,
    /// Estimated round duration in seconds.
    pub round_time_s: f64,
    pub times_selected: usize,
}

impl ClientStats {
    pub fn unexplored(round_time_s: f64) -> Self {
        Self {
            losses: Vec::new(),
            round_time_s,
            times_selected: 0,
        }
    }

    pub fn is_explored(&self) -> bool {
        !self.losses.is_empty()
    }
}

/// `|B| sqrt(mean(loss²)) * (deadline / t)^(alpha·[deadline < t])`.
pub fn oort_utility(stats: &ClientStats, deadline_s: f64, alpha: f64) -> Result<f64> {
    if stats.losses.is_empty() {
        return Err(Error::InvalidSelection(
            "statistical utility needs at least one loss sample".into(),
        ));
    }
    if !(stats.round_time_s > 0.0) {
        return Err(Error::Numeric(format!(
            "round time must be positive, got {}",
            stats.round_time_s
        )));
    }
    let n = stats.losses.len() as f64;
    let mean_sq = stats.losses.iter().map(|l| l * l).sum::<f64>() / n;
    let mut utility = n * mean_sq.sqrt();
    if deadline_s < stats.round_time_s {
        utility *= (deadline_s / stats.round_time_s).powf(alpha);
    }
    Ok(utility)
}

/// Oort-style participant selection.
///
/// `count - floor(epsilon * count)` slots go to the explored clients with the
/// highest utility (ties to the lower id); the remaining slots are filled
/// uniformly from unexplored clients, then from any client not yet chosen.
pub fn oort_select(
    stats: &[ClientStats],
    count: usize,
    epsilon: f64,
    deadline_s: f64,
    alpha: f64,
    rng: &mut SimRng,
) -> Result<ClientSelection> {
    if count == 0 || count > stats.len() {
        return Err(Error::Infeasible(format!(
            "cannot select {count} of {} clients",
            stats.len()
        )));
    }
    let explore_slots = (epsilon.clamp(0.0, 1.0) * count as f64).floor() as usize;
    let exploit_slots = count - explore_slots;

    let mut ranked = Vec::new();
    for (id, s) in stats.iter().enumerate() {
        if s.is_explored() {
            ranked.push((id, oort_utility(s, deadline_s, alpha)?));
        }
    }
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut chosen: Vec<usize> = ranked.iter().take(exploit_slots).map(|&(id, _)| id).collect();

    let mut taken = vec![false; stats.len()];
    chosen.iter().for_each(|&id| taken[id] = true);
    let mut fresh: Vec<usize> = (0..stats.len())
        .filter(|&id| !taken[id] && !stats[id].is_explored())
        .collect();
    fresh.shuffle(rng);
    let need = count - chosen.len();
    let from_fresh = need.min(fresh.len());
    chosen.extend_from_slice(&fresh[..from_fresh]);
    if chosen.len() < count {
        chosen.iter().for_each(|&id| taken[id] = true);
        let mut rest: Vec<usize> = (0..stats.len()).filter(|&id| !taken[id]).collect();
        rest.shuffle(rng);
        let need = count - chosen.len();
        chosen.extend_from_slice(&rest[..need]);
    }
    ClientSelection::new(chosen)
}

/// Epsilon-greedy pick of `count` distinct clients: each slot is uniform
/// among unchosen clients with probability `epsilon`, otherwise the unchosen
/// client with the highest value (ties to the lower id).
pub fn explore_select(
    values: &[f64],
    count: usize,
    epsilon: f64,
    rng: &mut SimRng,
) -> Result<ClientSelection> {
    if count == 0 || count > values.len() {
        return Err(Error::Infeasible(format!(
            "cannot select {count} of {} clients",
            values.len()
        )));
    }
    let mut remaining: Vec<usize> = (0..values.len()).collect();
    let mut chosen = Vec::with_capacity(count);
    for _ in 0..count {
        let pos = if rng.random_bool(epsilon.clamp(0.0, 1.0)) {
            rng.random_range(0..remaining.len())
        } else {
            greedy_position(&remaining, values)
        };
        chosen.push(remaining.remove(pos));
    }
    ClientSelection::new(chosen)
}

fn greedy_position(candidates: &[usize], values: &[f64]) -> usize {
    let mut best = 0;
    for (pos, &id) in candidates.iter().enumerate().skip(1) {
        let (b, v) = (values[candidates[best]], values[id]);
        if v > b || (v == b && id < candidates[best]) {
            best = pos;
        }
    }
    best
}

/// Sample-average value estimates. Unvisited entries sit at zero, so with
/// negative rewards every client gets tried once before exploitation.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable {
    pub values: Vec<f64>,
    pub visits: Vec<usize>,
}

impl ValueTable {
    pub fn new(len: usize) -> Self {
        Self {
            values: vec![0.0; len],
            visits: vec![0; len],
        }
    }

    /// Splits `reward` equally over the participants and folds that share
    /// into each participant's running mean.
    pub fn credit(&mut self, participants: &[usize], reward: f64) {
        if participants.is_empty() {
            return;
        }
        let share = reward / participants.len() as f64;
        for &id in participants {
            self.visits[id] += 1;
            let v = &mut self.values[id];
            *v += (share - *v) / self.visits[id] as f64;
        }
    }
}

/// Epsilon-greedy choice of how many clients to select.
#[derive(Debug, Clone, PartialEq)]
pub struct SizeBandit {
    pub sizes: Vec<usize>,
    pub values: ValueTable,
}

impl SizeBandit {
    pub fn new(min: usize, max: usize) -> Result<Self> {
        if min == 0 || min > max {
            return Err(Error::Config(format!("invalid size range {min}..={max}")));
        }
        let sizes: Vec<usize> = (min..=max).collect();
        let values = ValueTable::new(sizes.len());
        Ok(Self { sizes, values })
    }

    pub fn choose(&self, epsilon: f64, rng: &mut SimRng) -> usize {
        let arms: Vec<usize> = (0..self.sizes.len()).collect();
        let arm = if rng.random_bool(epsilon.clamp(0.0, 1.0)) {
            rng.random_range(0..arms.len())
        } else {
            greedy_position(&arms, &self.values.values)
        };
        self.sizes[arm]
    }

    pub fn credit(&mut self, size: usize, reward: f64) {
        if let Some(arm) = self.sizes.iter().position(|&s| s == size) {
            self.values.credit(&[arm], reward);
        }
    }
}
