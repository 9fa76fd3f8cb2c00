use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{DevicePool, DeviceProfile};
use crate::rng::SimRng;

/// Nominal cost coefficients of a hardware class before per-device jitter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Archetype {
    pub name: &'static str,
    pub comm_latency_s: f64,
    pub comp_latency_s_per_epoch: f64,
    pub comm_energy_j: f64,
    pub comp_energy_j_per_epoch: f64,
}

/// Fast/slow compute crossed with good/poor link, plus two battery-weak
/// classes that burn more energy for the same work.
pub const ARCHETYPES: [Archetype; 6] = [
    Archetype {
        name: "fast-good-link",
        comm_latency_s: 1.0,
        comp_latency_s_per_epoch: 0.6,
        comm_energy_j: 2.0,
        comp_energy_j_per_epoch: 3.0,
    },
    Archetype {
        name: "fast-poor-link",
        comm_latency_s: 4.0,
        comp_latency_s_per_epoch: 0.6,
        comm_energy_j: 6.0,
        comp_energy_j_per_epoch: 3.0,
    },
    Archetype {
        name: "slow-good-link",
        comm_latency_s: 1.0,
        comp_latency_s_per_epoch: 2.0,
        comm_energy_j: 2.0,
        comp_energy_j_per_epoch: 6.0,
    },
    Archetype {
        name: "slow-poor-link",
        comm_latency_s: 4.0,
        comp_latency_s_per_epoch: 2.0,
        comm_energy_j: 6.0,
        comp_energy_j_per_epoch: 6.0,
    },
    Archetype {
        name: "battery-weak-fast",
        comm_latency_s: 1.5,
        comp_latency_s_per_epoch: 0.8,
        comm_energy_j: 5.0,
        comp_energy_j_per_epoch: 9.0,
    },
    Archetype {
        name: "battery-weak-slow",
        comm_latency_s: 3.0,
        comp_latency_s_per_epoch: 2.5,
        comm_energy_j: 8.0,
        comp_energy_j_per_epoch: 12.0,
    },
];

/// Draws a heterogeneous pool from [`ARCHETYPES`].
///
/// Each coefficient is jittered uniformly within `±jitter` of its nominal
/// value. Availability traces alternate between normal load (multiplier in
/// `[0.8, 1.25]`) and busy periods (`[1.5, 3.0]`, probability `busy_prob`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProfileGenerator {
    pub jitter: f64,
    pub trace_len: usize,
    pub busy_prob: f64,
}

impl Default for ProfileGenerator {
    fn default() -> Self {
        Self {
            jitter: 0.2,
            trace_len: 10,
            busy_prob: 0.25,
        }
    }
}

impl ProfileGenerator {
    pub fn generate(&self, clients: usize, rng: &mut SimRng) -> DevicePool {
        let mut classes: Vec<usize> = (0..clients).map(|i| i % ARCHETYPES.len()).collect();
        classes.shuffle(rng);
        let trace_len = self.trace_len.max(1);
        let devices = classes
            .into_iter()
            .enumerate()
            .map(|(id, class)| {
                let a = &ARCHETYPES[class];
                let mut jit = |v: f64| v * rng.random_range(1.0 - self.jitter..=1.0 + self.jitter);
                let comm_latency_s = jit(a.comm_latency_s);
                let comp_latency_s_per_epoch = jit(a.comp_latency_s_per_epoch);
                let comm_energy_j = jit(a.comm_energy_j);
                let comp_energy_j_per_epoch = jit(a.comp_energy_j_per_epoch);
                let availability = (0..trace_len)
                    .map(|_| {
                        if rng.random_bool(self.busy_prob) {
                            rng.random_range(1.5..=3.0)
                        } else {
                            rng.random_range(0.8..=1.25)
                        }
                    })
                    .collect();
                DeviceProfile {
                    id,
                    comm_latency_s,
                    comp_latency_s_per_epoch,
                    comm_energy_j,
                    comp_energy_j_per_epoch,
                    availability,
                }
            })
            .collect();
        DevicePool::new(devices).expect("generated profiles are valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::from_seed;

    #[test]
    fn generated_pool_is_valid_and_seeded() {
        let g = ProfileGenerator::default();
        let a = g.generate(30, &mut from_seed(3));
        let b = g.generate(30, &mut from_seed(3));
        assert_eq!(a, b);
        assert_eq!(a.len(), 30);
        assert_ne!(a, g.generate(30, &mut from_seed(4)));
        for d in a.devices() {
            assert_eq!(d.availability.len(), 10);
            assert!(d.comm_latency_s > 0.0 && d.comp_energy_j_per_epoch > 0.0);
        }
    }
}
