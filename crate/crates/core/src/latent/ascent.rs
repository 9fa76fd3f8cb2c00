use ndarray::Zip;

use super::{Candidate, OptConfig};
use crate::error::{Error, Result};
use crate::neural::{LatentRep, ModelBundle};

/// A differentiable score over latents.
pub trait LatentObjective {
    fn value(&self, latent: &LatentRep) -> Result<f64>;
    fn value_and_grad(&self, latent: &LatentRep) -> Result<(f64, LatentRep)>;
}

impl LatentObjective for ModelBundle {
    fn value(&self, latent: &LatentRep) -> Result<f64> {
        self.evaluate(latent)
    }

    fn value_and_grad(&self, latent: &LatentRep) -> Result<(f64, LatentRep)> {
        self.evaluate_with_grad(latent)
    }
}

/// `-||E - center||²`, maximized at `center`.
#[derive(Debug, Clone)]
pub struct Quadratic {
    pub center: LatentRep,
}

impl LatentObjective for Quadratic {
    fn value(&self, latent: &LatentRep) -> Result<f64> {
        if latent.dim() != self.center.dim() {
            return Err(Error::Shape("latent and center differ in shape".into()));
        }
        Ok(-Zip::from(latent)
            .and(&self.center)
            .fold(0.0, |acc, &e, &c| acc + (e - c) * (e - c)))
    }

    fn value_and_grad(&self, latent: &LatentRep) -> Result<(f64, LatentRep)> {
        let value = self.value(latent)?;
        let grad = (latent - &self.center) * -2.0;
        Ok((value, grad))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ascent {
    pub latent: LatentRep,
    /// Objective at the start and after every accepted step.
    pub trajectory: Vec<f64>,
    /// Step size in effect when the ascent stopped.
    pub final_step: f64,
}

/// Gradient ascent with backtracking: a step `E + eta * grad` is taken only
/// if it strictly raises the objective, otherwise `eta` shrinks and the step
/// is retried. The step size carries over between accepted steps.
pub fn ascend(start: LatentRep, objective: &dyn LatentObjective, cfg: &OptConfig) -> Result<Ascent> {
    if start.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("ascent start is not finite".into()));
    }
    let mut latent = start;
    let mut eta = cfg.step_size;
    let (mut value, mut grad) = objective.value_and_grad(&latent)?;
    let mut trajectory = vec![value];
    while trajectory.len() <= cfg.max_steps && eta >= cfg.min_step {
        if !value.is_finite() || grad.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite objective or gradient after {} ascent steps",
                trajectory.len() - 1
            )));
        }
        let proposal = &latent + &(&grad * eta);
        let next = objective.value(&proposal)?;
        if next > value {
            latent = proposal;
            let (v, g) = objective.value_and_grad(&latent)?;
            value = v;
            grad = g;
            trajectory.push(value);
        } else {
            eta *= cfg.shrink;
        }
    }
    Ok(Ascent {
        latent,
        trajectory,
        final_step: eta,
    })
}

/// Index of the highest-scored candidate; the first one wins ties.
pub fn select_best(candidates: &[Candidate]) -> usize {
    let mut best = 0;
    for (i, c) in candidates.iter().enumerate().skip(1) {
        if c.score > candidates[best].score {
            best = i;
        }
    }
    best
}
