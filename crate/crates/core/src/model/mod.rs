//! Domain types shared by every stage of the pipeline, the round cost model
//! and the comprehensive score.

mod cost;
mod profiles;

pub use cost::{comprehensive_score, round_energy, round_latency};
pub use profiles::{Archetype, ProfileGenerator, ARCHETYPES};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Cost coefficients of one client device.
///
/// `availability[r % len]` multiplies both latency terms in round `r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceProfile {
    pub id: usize,
    pub comm_latency_s: f64,
    pub comp_latency_s_per_epoch: f64,
    pub comm_energy_j: f64,
    pub comp_energy_j_per_epoch: f64,
    pub availability: Vec<f64>,
}

impl DeviceProfile {
    fn validate(&self) -> Result<()> {
        let fields = [
            ("comm_latency_s", self.comm_latency_s),
            ("comp_latency_s_per_epoch", self.comp_latency_s_per_epoch),
            ("comm_energy_j", self.comm_energy_j),
            ("comp_energy_j_per_epoch", self.comp_energy_j_per_epoch),
        ];
        for (name, value) in fields {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::Config(format!(
                    "device {}: {name} must be finite and positive, got {value}",
                    self.id
                )));
            }
        }
        if self.availability.is_empty() {
            return Err(Error::Config(format!(
                "device {}: availability trace is empty",
                self.id
            )));
        }
        if let Some(bad) = self
            .availability
            .iter()
            .find(|m| !(m.is_finite() && **m > 0.0))
        {
            return Err(Error::Config(format!(
                "device {}: availability multiplier {bad} is not positive",
                self.id
            )));
        }
        Ok(())
    }

    /// Availability multiplier for `round`; traces are cycled.
    pub fn availability_at(&self, round: usize) -> f64 {
        self.availability[round % self.availability.len()]
    }

    pub fn latency_s(&self, round: usize, epochs: usize) -> f64 {
        let m = self.availability_at(round);
        m * self.comm_latency_s + m * self.comp_latency_s_per_epoch * epochs as f64
    }

    pub fn energy_j(&self, epochs: usize) -> f64 {
        self.comm_energy_j + self.comp_energy_j_per_epoch * epochs as f64
    }
}

/// The candidate device pool; device `i` sits at index `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<DeviceProfile>", into = "Vec<DeviceProfile>")]
pub struct DevicePool {
    devices: Vec<DeviceProfile>,
}

impl DevicePool {
    pub fn new(mut devices: Vec<DeviceProfile>) -> Result<Self> {
        if devices.is_empty() {
            return Err(Error::Config("device pool is empty".into()));
        }
        devices.sort_by_key(|d| d.id);
        for (expected, device) in devices.iter().enumerate() {
            if device.id != expected {
                return Err(Error::Config(format!(
                    "device ids must be exactly 0..{}; found id {} at position {expected}",
                    devices.len(),
                    device.id
                )));
            }
            device.validate()?;
        }
        Ok(Self { devices })
    }

    pub fn len(&self) -> usize {
        self.devices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.devices.is_empty()
    }

    pub fn devices(&self) -> &[DeviceProfile] {
        &self.devices
    }

    pub fn get(&self, id: usize) -> Result<&DeviceProfile> {
        self.devices.get(id).ok_or(Error::UnknownDevice {
            id,
            pool_size: self.devices.len(),
        })
    }

    /// Short content hash used to tie record files to the pool they were
    /// collected on.
    pub fn fingerprint(&self) -> String {
        let bytes = serde_json::to_vec(&self.devices).expect("device profiles serialize");
        hex::encode(&Sha256::digest(&bytes)[..8])
    }
}

impl TryFrom<Vec<DeviceProfile>> for DevicePool {
    type Error = Error;

    fn try_from(devices: Vec<DeviceProfile>) -> Result<Self> {
        DevicePool::new(devices)
    }
}

impl From<DevicePool> for Vec<DeviceProfile> {
    fn from(pool: DevicePool) -> Self {
        pool.devices
    }
}

/// An ordered sequence of distinct device ids that stands for a set.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct ClientSelection(Vec<usize>);

impl ClientSelection {
    pub fn new(ids: Vec<usize>) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::InvalidSelection("selection is empty".into()));
        }
        let mut seen = ids.clone();
        seen.sort_unstable();
        if let Some(w) = seen.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::InvalidSelection(format!(
                "device {} appears more than once",
                w[0]
            )));
        }
        Ok(Self(ids))
    }

    /// Builds a selection and checks every id against a pool of `pool_size`.
    pub fn for_pool(ids: Vec<usize>, pool_size: usize) -> Result<Self> {
        let selection = Self::new(ids)?;
        selection.check_pool(pool_size)?;
        Ok(selection)
    }

    pub fn check_pool(&self, pool_size: usize) -> Result<()> {
        match self.0.iter().find(|&&id| id >= pool_size) {
            Some(&id) => Err(Error::UnknownDevice { id, pool_size }),
            None => Ok(()),
        }
    }

    pub fn ids(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// The ids in ascending order, for order-insensitive comparison.
    pub fn sorted_ids(&self) -> Vec<usize> {
        let mut ids = self.0.clone();
        ids.sort_unstable();
        ids
    }

    pub fn same_set(&self, other: &ClientSelection) -> bool {
        self.sorted_ids() == other.sorted_ids()
    }
}

impl TryFrom<Vec<usize>> for ClientSelection {
    type Error = Error;

    fn try_from(ids: Vec<usize>) -> Result<Self> {
        ClientSelection::new(ids)
    }
}

impl From<ClientSelection> for Vec<usize> {
    fn from(selection: ClientSelection) -> Self {
        selection.0
    }
}

/// Latency and energy budgets with their penalty exponents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Budget {
    pub latency_budget_s: f64,
    pub energy_budget_j: f64,
    #[serde(default = "default_penalty_exp")]
    pub latency_penalty_exp: f64,
    #[serde(default = "default_penalty_exp")]
    pub energy_penalty_exp: f64,
}

fn default_penalty_exp() -> f64 {
    2.0
}

impl Budget {
    pub fn new(latency_budget_s: f64, energy_budget_j: f64) -> Result<Self> {
        let budget = Self {
            latency_budget_s,
            energy_budget_j,
            latency_penalty_exp: default_penalty_exp(),
            energy_penalty_exp: default_penalty_exp(),
        };
        budget.validate()?;
        Ok(budget)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.latency_budget_s.is_finite()
            && self.latency_budget_s > 0.0
            && self.energy_budget_j.is_finite()
            && self.energy_budget_j > 0.0
            && self.latency_penalty_exp.is_finite()
            && self.latency_penalty_exp >= 0.0
            && self.energy_penalty_exp.is_finite()
            && self.energy_penalty_exp >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid budget {self:?}")))
        }
    }
}

/// Outcome of scoring one selection in one round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreBreakdown {
    pub perf: f64,
    pub total_latency_s: f64,
    pub total_energy_j: f64,
    pub comprehensive: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn device(id: usize) -> DeviceProfile {
        DeviceProfile {
            id,
            comm_latency_s: 1.0,
            comp_latency_s_per_epoch: 1.0,
            comm_energy_j: 1.0,
            comp_energy_j_per_epoch: 1.0,
            availability: vec![1.0],
        }
    }

    #[test]
    fn pool_requires_contiguous_ids() {
        assert!(DevicePool::new(vec![device(0), device(1)]).is_ok());
        assert!(DevicePool::new(vec![device(1), device(0)]).is_ok());
        assert!(DevicePool::new(vec![device(0), device(2)]).is_err());
        assert!(DevicePool::new(vec![device(0), device(0)]).is_err());
        assert!(DevicePool::new(vec![]).is_err());
    }

    #[test]
    fn pool_rejects_nonpositive_fields() {
        let mut d = device(0);
        d.comm_energy_j = 0.0;
        assert!(DevicePool::new(vec![d]).is_err());
        let mut d = device(0);
        d.availability = vec![1.0, -0.5];
        assert!(DevicePool::new(vec![d]).is_err());
    }

    #[test]
    fn selection_invariants() {
        assert!(ClientSelection::new(vec![]).is_err());
        assert!(ClientSelection::new(vec![3, 1, 3]).is_err());
        let s = ClientSelection::for_pool(vec![4, 0, 2], 5).unwrap();
        assert_eq!(s.sorted_ids(), vec![0, 2, 4]);
        assert!(matches!(
            ClientSelection::for_pool(vec![0, 5], 5),
            Err(Error::UnknownDevice { id: 5, .. })
        ));
        assert!(s.same_set(&ClientSelection::new(vec![2, 4, 0]).unwrap()));
    }

    #[test]
    fn selection_deserialization_validates() {
        assert!(serde_json::from_str::<ClientSelection>("[1,2,3]").is_ok());
        assert!(serde_json::from_str::<ClientSelection>("[1,1]").is_err());
        assert!(serde_json::from_str::<ClientSelection>("[]").is_err());
    }

    #[test]
    fn availability_cycles() {
        let mut d = device(0);
        d.availability = vec![1.0, 2.0, 3.0];
        assert_eq!(d.availability_at(0), 1.0);
        assert_eq!(d.availability_at(4), 2.0);
        assert_eq!(d.latency_s(5, 2), 3.0 * 1.0 + 3.0 * 2.0);
        assert_eq!(d.energy_j(2), 3.0);
    }

    #[test]
    fn budget_defaults_to_squared_penalties() {
        let b: Budget = toml::from_str("latency_budget_s = 5.0\nenergy_budget_j = 3.0").unwrap();
        assert_eq!(b.latency_penalty_exp, 2.0);
        assert_eq!(b.energy_penalty_exp, 2.0);
        assert!(Budget::new(0.0, 1.0).is_err());
    }
}
