use super::{Budget, DevicePool, ScoreBreakdown};
use crate::error::{Error, Result};

fn check_nonempty(selection: &[usize]) -> Result<()> {
    if selection.is_empty() {
        Err(Error::InvalidSelection("selection is empty".into()))
    } else {
        Ok(())
    }
}

/// Wall time of one round: the slowest participant's communication plus
/// `epochs` of computation, both scaled by its availability in `round`.
pub fn round_latency(
    selection: &[usize],
    pool: &DevicePool,
    round: usize,
    epochs: usize,
) -> Result<f64> {
    check_nonempty(selection)?;
    let mut worst = f64::NEG_INFINITY;
    for &id in selection {
        worst = worst.max(pool.get(id)?.latency_s(round, epochs));
    }
    Ok(worst)
}

/// Energy of one round summed over participants. Availability does not
/// enter: background load slows a device but the work done is the same.
///
/// Terms are summed in ascending id order so the result is bit-identical for
/// every ordering of the same set.
pub fn round_energy(
    selection: &[usize],
    pool: &DevicePool,
    _round: usize,
    epochs: usize,
) -> Result<f64> {
    check_nonempty(selection)?;
    let mut ids = selection.to_vec();
    ids.sort_unstable();
    let mut total = 0.0;
    for id in ids {
        total += pool.get(id)?.energy_j(epochs);
    }
    Ok(total)
}

/// `perf * (L/p_L)^(a·[L<p_L]) * (E/p_E)^(b·[E<p_E])`.
pub fn comprehensive_score(
    perf: f64,
    total_latency_s: f64,
    total_energy_j: f64,
    budget: &Budget,
) -> Result<ScoreBreakdown> {
    for (name, v) in [
        ("perf", perf),
        ("latency", total_latency_s),
        ("energy", total_energy_j),
    ] {
        if !v.is_finite() {
            return Err(Error::Numeric(format!("{name} is not finite: {v}")));
        }
    }
    if total_latency_s <= 0.0 || total_energy_j <= 0.0 {
        return Err(Error::Numeric(format!(
            "latency and energy must be positive (got {total_latency_s}, {total_energy_j})"
        )));
    }
    let mut score = perf;
    if budget.latency_budget_s < total_latency_s {
        score *= (budget.latency_budget_s / total_latency_s).powf(budget.latency_penalty_exp);
    }
    if budget.energy_budget_j < total_energy_j {
        score *= (budget.energy_budget_j / total_energy_j).powf(budget.energy_penalty_exp);
    }
    Ok(ScoreBreakdown {
        perf,
        total_latency_s,
        total_energy_j,
        comprehensive: score,
    })
}
