//! Selection/score records, their line-delimited file format and the
//! order-shuffling augmentation.

use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{comprehensive_score, Budget, ClientSelection, ScoreBreakdown};
use crate::rng::SimRng;

/// One scored selection. Serialized as one JSON object per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionRecord {
    pub collector: String,
    pub session_seed: u64,
    pub round: usize,
    pub selection: ClientSelection,
    pub perf: f64,
    pub latency_s: f64,
    pub energy_j: f64,
    pub score: f64,
}

impl SelectionRecord {
    pub fn new(
        collector: impl Into<String>,
        session_seed: u64,
        round: usize,
        selection: ClientSelection,
        breakdown: &ScoreBreakdown,
    ) -> Self {
        Self {
            collector: collector.into(),
            session_seed,
            round,
            selection,
            perf: breakdown.perf,
            latency_s: breakdown.total_latency_s,
            energy_j: breakdown.total_energy_j,
            score: breakdown.comprehensive,
        }
    }

    pub fn breakdown(&self) -> ScoreBreakdown {
        ScoreBreakdown {
            perf: self.perf,
            total_latency_s: self.latency_s,
            total_energy_j: self.energy_j,
            comprehensive: self.score,
        }
    }

    /// Recomputes the score from the breakdown; it must match bit for bit.
    pub fn verify(&self, budget: &Budget) -> Result<()> {
        let again = comprehensive_score(self.perf, self.latency_s, self.energy_j, budget)?;
        if again.comprehensive.to_bits() == self.score.to_bits() {
            Ok(())
        } else {
            Err(Error::Data(format!(
                "record ({}, round {}) stores score {} but its breakdown gives {}",
                self.collector, self.round, self.score, again.comprehensive
            )))
        }
    }
}

/// Records collected against one pool under one budget.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordSet {
    pub records: Vec<SelectionRecord>,
    pub budget: Budget,
    pub pool_fingerprint: String,
}

impl RecordSet {
    pub fn new(budget: Budget, pool_fingerprint: impl Into<String>) -> Self {
        Self {
            records: Vec::new(),
            budget,
            pool_fingerprint: pool_fingerprint.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn verify(&self) -> Result<()> {
        self.records.iter().try_for_each(|r| r.verify(&self.budget))
    }

    /// Appends another set collected on the same pool under the same budget.
    pub fn extend(&mut self, other: RecordSet) -> Result<()> {
        if other.pool_fingerprint != self.pool_fingerprint || other.budget != self.budget {
            return Err(Error::Data(
                "cannot merge record sets from different pools or budgets".into(),
            ));
        }
        self.records.extend(other.records);
        Ok(())
    }

    pub fn write_jsonl(&self, mut out: impl Write) -> std::io::Result<()> {
        for record in &self.records {
            serde_json::to_writer(&mut out, record)?;
            out.write_all(b"\n")?;
        }
        out.flush()
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }

    /// Parses records and checks each score against `budget`.
    pub fn read_jsonl(
        input: impl BufRead,
        budget: Budget,
        pool_fingerprint: impl Into<String>,
    ) -> Result<Self> {
        let mut set = RecordSet::new(budget, pool_fingerprint);
        for (n, line) in input.lines().enumerate() {
            let line = line.map_err(|e| Error::Data(format!("record line {}: {e}", n + 1)))?;
            if line.trim().is_empty() {
                continue;
            }
            let record: SelectionRecord = serde_json::from_str(&line)
                .map_err(|e| Error::Data(format!("record line {}: {e}", n + 1)))?;
            record.verify(&budget)?;
            set.records.push(record);
        }
        Ok(set)
    }
}

/// Returns each record followed by `shuffles` copies of it whose device ids
/// are randomly reordered; set and score are unchanged.
pub fn augment_records(set: &RecordSet, shuffles: usize, rng: &mut SimRng) -> RecordSet {
    let mut out = RecordSet::new(set.budget, set.pool_fingerprint.clone());
    out.records.reserve(set.len() * (shuffles + 1));
    for record in &set.records {
        out.records.push(record.clone());
        for _ in 0..shuffles {
            let mut ids = record.selection.ids().to_vec();
            ids.shuffle(rng);
            let mut copy = record.clone();
            copy.selection = ClientSelection::new(ids).expect("permutation of a valid selection");
            out.records.push(copy);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::from_seed;
    use proptest::prelude::*;

    fn budget() -> Budget {
        Budget::new(5.0, 40.0).unwrap()
    }

    fn record(ids: Vec<usize>, perf: f64, latency: f64, energy: f64) -> SelectionRecord {
        let b = comprehensive_score(perf, latency, energy, &budget()).unwrap();
        SelectionRecord::new("oort", 17, 3, ClientSelection::new(ids).unwrap(), &b)
    }

    #[test]
    fn jsonl_round_trip_is_exact() {
        let mut set = RecordSet::new(budget(), "abc");
        set.records.push(record(vec![3, 1, 2], 0.8123456789, 7.1, 55.3));
        set.records.push(record(vec![0], 0.1 + 0.2, 1.0 / 3.0, 12.0));
        let text = set.to_jsonl();
        assert!(text.lines().next().unwrap().starts_with(r#"{"collector":"oort","session_seed":17,"round":3,"selection":[3,1,2],"perf":"#));
        let back = RecordSet::read_jsonl(text.as_bytes(), budget(), "abc").unwrap();
        assert_eq!(back, set);
        assert_eq!(back.to_jsonl(), text);
    }

    #[test]
    fn tampered_score_is_rejected() {
        let mut r = record(vec![1, 2], 0.5, 9.0, 70.0);
        r.score = f64::from_bits(r.score.to_bits() + 1);
        assert!(r.verify(&budget()).is_err());
        let line = serde_json::to_string(&r).unwrap();
        assert!(RecordSet::read_jsonl(line.as_bytes(), budget(), "x").is_err());
        assert!(RecordSet::read_jsonl("{\"bogus\":1}".as_bytes(), budget(), "x").is_err());
    }

    #[test]
    fn zero_shuffles_is_identity() {
        let mut set = RecordSet::new(budget(), "f");
        set.records.push(record(vec![4, 2, 9], 0.6, 3.0, 20.0));
        assert_eq!(augment_records(&set, 0, &mut from_seed(1)), set);
    }

    proptest! {
        #[test]
        fn augmentation_preserves_sets_and_scores(seed in any::<u64>(), shuffles in 0usize..30) {
            let mut set = RecordSet::new(budget(), "f");
            set.records.push(record(vec![4, 2, 9, 7], 0.6, 3.0, 20.0));
            set.records.push(record(vec![1, 0], 0.9, 8.0, 50.0));
            let out = augment_records(&set, shuffles, &mut from_seed(seed));
            prop_assert_eq!(out.len(), set.len() * (shuffles + 1));
            for (i, chunk) in out.records.chunks(shuffles + 1).enumerate() {
                prop_assert_eq!(&chunk[0], &set.records[i]);
                for copy in chunk {
                    prop_assert!(copy.selection.same_set(&set.records[i].selection));
                    prop_assert_eq!(copy.score.to_bits(), set.records[i].score.to_bits());
                }
            }
        }
    }
}
