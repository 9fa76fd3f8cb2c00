use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::RoundOutcome;

/// One round of a policy run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub policy: String,
    pub round: usize,
    pub selection_size: usize,
    pub accuracy: f64,
    pub score: f64,
    pub latency_s: f64,
    pub energy_j: f64,
    pub cum_latency_s: f64,
    pub cum_energy_j: f64,
}

/// Aggregate of a whole run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub policy: String,
    pub rounds: usize,
    pub mean_score: f64,
    pub final_accuracy: f64,
    pub peak_accuracy: f64,
    pub total_latency_s: f64,
    pub total_energy_j: f64,
    pub distinct_sizes: usize,
}

pub fn metrics_rows(policy: &str, outcomes: &[RoundOutcome]) -> Vec<MetricsRow> {
    let mut cum_latency = 0.0;
    let mut cum_energy = 0.0;
    outcomes
        .iter()
        .map(|o| {
            cum_latency += o.breakdown.total_latency_s;
            cum_energy += o.breakdown.total_energy_j;
            MetricsRow {
                policy: policy.to_string(),
                round: o.round,
                selection_size: o.selection.len(),
                accuracy: o.accuracy,
                score: o.breakdown.comprehensive,
                latency_s: o.breakdown.total_latency_s,
                energy_j: o.breakdown.total_energy_j,
                cum_latency_s: cum_latency,
                cum_energy_j: cum_energy,
            }
        })
        .collect()
}

pub fn summarize(policy: &str, rows: &[MetricsRow]) -> RunSummary {
    let n = rows.len().max(1) as f64;
    let mut sizes: Vec<usize> = rows.iter().map(|r| r.selection_size).collect();
    sizes.sort_unstable();
    sizes.dedup();
    RunSummary {
        policy: policy.to_string(),
        rounds: rows.len(),
        mean_score: rows.iter().map(|r| r.score).sum::<f64>() / n,
        final_accuracy: rows.last().map_or(0.0, |r| r.accuracy),
        peak_accuracy: rows.iter().map(|r| r.accuracy).fold(0.0, f64::max),
        total_latency_s: rows.last().map_or(0.0, |r| r.cum_latency_s),
        total_energy_j: rows.last().map_or(0.0, |r| r.cum_energy_j),
        distinct_sizes: sizes.len(),
    }
}

/// Cumulative latency and energy when accuracy first reaches `target`.
pub fn cost_to_accuracy(rows: &[MetricsRow], target: f64) -> Option<(f64, f64)> {
    rows.iter()
        .find(|r| r.accuracy >= target)
        .map(|r| (r.cum_latency_s, r.cum_energy_j))
}

pub const METRICS_HEADER: [&str; 9] = [
    "policy",
    "round",
    "selection_size",
    "accuracy",
    "score",
    "latency_s",
    "energy_j",
    "cum_latency_s",
    "cum_energy_j",
];

/// Per-round rows followed by one summary row whose round is `all`, whose
/// selection size is the mean size and whose score is the mean score.
pub fn write_metrics_csv(rows: &[MetricsRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::Data(format!("writing metrics: {e}"));
    w.write_record(METRICS_HEADER).map_err(err)?;
    for r in rows {
        w.write_record([
            r.policy.clone(),
            r.round.to_string(),
            r.selection_size.to_string(),
            r.accuracy.to_string(),
            r.score.to_string(),
            r.latency_s.to_string(),
            r.energy_j.to_string(),
            r.cum_latency_s.to_string(),
            r.cum_energy_j.to_string(),
        ])
        .map_err(err)?;
    }
    if let Some(first) = rows.first() {
        let s = summarize(&first.policy, rows);
        let mean_size = rows.iter().map(|r| r.selection_size).sum::<usize>() as f64 / rows.len() as f64;
        w.write_record([
            s.policy,
            "all".into(),
            mean_size.to_string(),
            s.final_accuracy.to_string(),
            s.mean_score.to_string(),
            (s.total_latency_s / rows.len() as f64).to_string(),
            (s.total_energy_j / rows.len() as f64).to_string(),
            s.total_latency_s.to_string(),
            s.total_energy_j.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::Data(format!("writing metrics: {e}")))
}

/// Reads the per-round rows of a metrics file, skipping its summary row.
pub fn read_metrics_csv(input: impl std::io::Read) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_reader(input);
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::Data(format!("reading metrics: {e}")))?;
        if rec.get(1) == Some("all") {
            continue;
        }
        let field = |i: usize| rec.get(i).unwrap_or_default();
        let num = |i: usize| -> Result<f64> {
            field(i)
                .parse()
                .map_err(|_| Error::Data(format!("bad number {:?} in metrics column {i}", field(i))))
        };
        let int = |i: usize| -> Result<usize> {
            field(i)
                .parse()
                .map_err(|_| Error::Data(format!("bad integer {:?} in metrics column {i}", field(i))))
        };
        rows.push(MetricsRow {
            policy: field(0).to_string(),
            round: int(1)?,
            selection_size: int(2)?,
            accuracy: num(3)?,
            score: num(4)?,
            latency_s: num(5)?,
            energy_j: num(6)?,
            cum_latency_s: num(7)?,
            cum_energy_j: num(8)?,
        });
    }
    Ok(rows)
}
