//! Reward signals of the learning-based collectors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Accuracy-driven reward of the Favor agent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FavorConfig {
    /// Base of the exponential accuracy reward; must exceed 1.
    pub xi: f64,
    /// Target accuracy.
    pub omega_target: f64,
    /// Discount factor in (0, 1].
    pub gamma: f64,
}

impl Default for FavorConfig {
    fn default() -> Self {
        Self {
            xi: 64.0,
            omega_target: 0.8,
            gamma: 0.95,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UtilityShape {
    Identity,
    Log1p,
}

impl UtilityShape {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            UtilityShape::Identity => x,
            UtilityShape::Log1p => x.ln_1p(),
        }
    }
}

/// Accuracy gain versus latency and communication cost of the FedMarl agent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FedMarlConfig {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    pub utility: UtilityShape,
}

impl Default for FedMarlConfig {
    fn default() -> Self {
        Self {
            w1: 1.0,
            w2: 0.02,
            w3: 0.02,
            utility: UtilityShape::Identity,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardConfig {
    pub favor: FavorConfig,
    pub fedmarl: FedMarlConfig,
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        let f = &self.favor;
        let m = &self.fedmarl;
        let ok = f.xi.is_finite()
            && f.xi > 1.0
            && f.omega_target.is_finite()
            && f.gamma > 0.0
            && f.gamma <= 1.0
            && [m.w1, m.w2, m.w3].iter().all(|w| w.is_finite() && *w >= 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid reward config {self:?}")))
        }
    }
}

/// One round's term of the Favor return: `xi^(acc - omega) - 1`.
pub fn favor_step(accuracy: f64, cfg: &FavorConfig) -> f64 {
    cfg.xi.powf(accuracy - cfg.omega_target) - 1.0
}

/// Discounted return `sum_t gamma^(t-1) (xi^(acc_t - omega) - 1)` of an
/// accuracy trajectory.
pub fn favor_reward(accuracies: &[f64], cfg: &FavorConfig) -> f64 {
    let mut discount = 1.0;
    let mut total = 0.0;
    for &acc in accuracies {
        total += discount * favor_step(acc, cfg);
        discount *= cfg.gamma;
    }
    total
}

/// `w1 [U(acc_t) - U(acc_{t-1})] - w2 H_t - w3 B_t`.
pub fn fedmarl_reward(
    accuracy: f64,
    previous_accuracy: f64,
    latency: f64,
    comm_cost: f64,
    cfg: &FedMarlConfig,
) -> f64 {
    cfg.w1 * (cfg.utility.apply(accuracy) - cfg.utility.apply(previous_accuracy))
        - cfg.w2 * latency
        - cfg.w3 * comm_cost
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn favor_examples() {
        let cfg = FavorConfig {
            xi: 2.0,
            omega_target: 0.5,
            gamma: 1.0,
        };
        assert_eq!(favor_reward(&[0.5], &cfg), 0.0);
        assert_eq!(favor_reward(&[1.5, 1.5], &cfg), 2.0);
        assert!(favor_reward(&[0.1, 0.3, 0.49], &cfg) < 0.0);
        assert_eq!(favor_reward(&[], &cfg), 0.0);
    }

    #[test]
    fn favor_discounts() {
        let cfg = FavorConfig {
            xi: 4.0,
            omega_target: 0.0,
            gamma: 0.5,
        };
        // (4^1 - 1) + 0.5 (4^0.5 - 1)
        assert_eq!(favor_reward(&[1.0, 0.5], &cfg), 3.0 + 0.5);
    }

    #[test]
    fn fedmarl_examples() {
        let cfg = FedMarlConfig {
            w1: 1.0,
            w2: 0.5,
            w3: 0.25,
            utility: UtilityShape::Identity,
        };
        assert_eq!(fedmarl_reward(0.7, 0.7, 0.0, 0.0, &cfg), 0.0);
        let r = fedmarl_reward(0.6, 0.5, 0.2, 0.4, &cfg);
        assert!((r - (-0.1)).abs() < 1e-15);
        assert!(fedmarl_reward(0.6, 0.5, 0.3, 0.4, &cfg) < r);
        let log = FedMarlConfig {
            utility: UtilityShape::Log1p,
            ..cfg
        };
        assert_eq!(fedmarl_reward(0.6, 0.5, 0.0, 0.0, &log), 0.6f64.ln_1p() - 0.5f64.ln_1p());
    }

    #[test]
    fn config_validation() {
        assert!(RewardConfig::default().validate().is_ok());
        let mut bad = RewardConfig::default();
        bad.favor.xi = 1.0;
        assert!(bad.validate().is_err());
        let mut bad = RewardConfig::default();
        bad.favor.gamma = 0.0;
        assert!(bad.validate().is_err());
        let mut bad = RewardConfig::default();
        bad.fedmarl.w2 = -1.0;
        assert!(bad.validate().is_err());
    }
}
