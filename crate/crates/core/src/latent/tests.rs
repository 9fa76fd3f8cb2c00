use ndarray::Array2;
use rand::Rng;

use super::*;
use crate::model::ScoreBreakdown;
use crate::neural::{Dims, ModelBundle, Params, ScoreNorm};
use crate::rng::from_seed;

fn bundle(devices: usize, hidden: usize, seed: u64) -> ModelBundle {
    let dims = Dims {
        vocab: devices + 2,
        embedding: 6,
        hidden,
        evaluator_hidden: 10,
    };
    let mut rng = from_seed(seed);
    let mut params = Params::xavier(&dims, &mut rng);
    // sharper distributions than plain xavier
    params.output_weight.mapv_inplace(|v| 3.0 * v);
    params.eval_b1.iter_mut().for_each(|v| *v = rng.random_range(-0.3..0.3));
    ModelBundle::new(dims, params, ScoreNorm { min: 0.0, max: 1.0 }, seed)
}

fn record(round: usize, ids: Vec<usize>, score: f64) -> SelectionRecord {
    let b = ScoreBreakdown {
        perf: score,
        total_latency_s: 1.0,
        total_energy_j: 1.0,
        comprehensive: score,
    };
    SelectionRecord::new("t", 0, round, ClientSelection::new(ids).unwrap(), &b)
}

#[test]
fn config_validation() {
    let cfg = OptConfig::default();
    assert!(cfg.validate(30).is_ok());
    assert_eq!((cfg.top_k, cfg.beam_width, cfg.max_steps), (25, 5, 20));
    assert_eq!(cfg.resolved_max_len(6, 30), 12);
    assert_eq!(cfg.resolved_max_len(6, 8), 8);
    for bad in [
        OptConfig { step_size: 0.0, ..OptConfig::default() },
        OptConfig { top_k: 0, ..OptConfig::default() },
        OptConfig { beam_width: 0, ..OptConfig::default() },
        OptConfig { shrink: 1.0, ..OptConfig::default() },
        OptConfig { max_len: Some(31), ..OptConfig::default() },
    ] {
        assert!(bad.validate(30).is_err());
    }
}

#[test]
fn zero_steps_returns_start() {
    let b = bundle(5, 4, 0);
    let start = b.encode_tokens(&[1, 2]).unwrap();
    let cfg = OptConfig { max_steps: 0, ..OptConfig::default() };
    let a = ascend(start.clone(), &b, &cfg).unwrap();
    assert_eq!(a.latent, start);
    assert_eq!(a.trajectory.len(), 1);
}

#[test]
fn quadratic_step_matches_closed_form() {
    let mut rng = from_seed(4);
    for _ in 0..50 {
        let e0 = Array2::from_shape_fn((3, 4), |_| rng.random_range(-2.0..2.0));
        let c = Array2::from_shape_fn((3, 4), |_| rng.random_range(-2.0..2.0));
        let q = Quadratic { center: c.clone() };
        let cfg = OptConfig { max_steps: 1, ..OptConfig::default() };
        let a = ascend(e0.clone(), &q, &cfg).unwrap();
        assert_eq!(a.trajectory.len(), 2);
        for ((out, e), c) in a.latent.iter().zip(&e0).zip(&c) {
            let expected = e + 0.1 * (-2.0 * (e - c));
            assert!((out - expected).abs() < 1e-12);
        }
    }
}

#[test]
fn ascent_trajectory_never_decreases() {
    let mut rng = from_seed(5);
    let cfg = OptConfig::default();
    for seed in 0..20 {
        let b = bundle(6, 5, seed);
        for _ in 0..10 {
            let start = Array2::from_shape_fn((rng.random_range(1..5), 5), |_| {
                rng.random_range(-1.0..1.0)
            });
            let a = ascend(start.clone(), &b, &cfg).unwrap();
            assert!(a.trajectory.windows(2).all(|w| w[1] >= w[0]));
            assert_eq!(*a.trajectory.last().unwrap(), b.evaluate(&a.latent).unwrap());
            assert!(b.evaluate(&a.latent).unwrap() >= b.evaluate(&start).unwrap());
        }
    }
    let b = bundle(6, 5, 0);
    let bad = Array2::from_elem((2, 5), f64::NAN);
    assert!(matches!(ascend(bad, &b, &cfg), Err(crate::Error::Numeric(_))));
}

fn cand(score: f64, start: usize) -> Candidate {
    Candidate {
        latent: Array2::zeros((1, 1)),
        score,
        start,
        steps: 0,
    }
}

#[test]
fn select_best_examples() {
    assert_eq!(select_best(&[cand(0.3, 0)]), 0);
    let c = vec![cand(0.1, 0), cand(0.7, 1), cand(0.7, 2), cand(0.2, 3)];
    assert_eq!(select_best(&c), 1);
    let mut rng = from_seed(6);
    for _ in 0..200 {
        let scores: Vec<f64> = (0..rng.random_range(1..12)).map(|_| rng.random_range(-1.0..1.0)).collect();
        let c: Vec<Candidate> = scores.iter().enumerate().map(|(i, &s)| cand(s, i)).collect();
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let oracle = scores.iter().position(|&s| s == max).unwrap();
        assert_eq!(select_best(&c), oracle);
        let rescaled: Vec<Candidate> = scores.iter().enumerate().map(|(i, &s)| cand(3.0 * s.exp() + 1.0, i)).collect();
        assert_eq!(select_best(&rescaled), oracle);
    }
}

#[test]
fn top_k_examples() {
    let records = vec![
        record(0, vec![0], 0.2),
        record(0, vec![1], 0.9),
        record(0, vec![2], 0.5),
        record(0, vec![3], 0.9),
    ];
    assert_eq!(top_k_indices(&records, 1), vec![1]);
    assert_eq!(top_k_indices(&records, 10), vec![1, 3, 2, 0]);
    let b = bundle(5, 4, 0);
    assert_eq!(top_k_starts(&records, 10, &b).unwrap().len(), 4);
    let one = top_k_starts(&records, 1, &b).unwrap();
    assert_eq!(one[0], b.encode_tokens(&[1]).unwrap());
    assert!(top_k_starts(&[], 3, &b).is_err());

    let mut rng = from_seed(7);
    for _ in 0..100 {
        let recs: Vec<SelectionRecord> = (0..30)
            .map(|i| record(0, vec![i % 5], (rng.random_range(0..6) as f64) / 5.0))
            .collect();
        let k = rng.random_range(1..40);
        let got: Vec<f64> = top_k_indices(&recs, k).iter().map(|&i| recs[i].score).collect();
        let mut all: Vec<f64> = recs.iter().map(|r| r.score).collect();
        all.sort_by(|a, b| b.partial_cmp(a).unwrap());
        all.truncate(k);
        assert_eq!(got, all);
    }
}

/// Independent scorer: renormalizes the unmasked decoder distribution over
/// the allowed tokens at each step.
fn brute_log_prob(b: &ModelBundle, latent: &Array2<f64>, tokens: &[usize], max_len: usize) -> f64 {
    let devices = b.vocabulary().devices();
    let eos = devices;
    let mut state = b.initial_state(latent);
    let mut prev = eos;
    let mut total = 0.0;
    for k in 0..=tokens.len() {
        let (probs, next) = b.decode_step(prev, &state, latent).unwrap();
        let target = if k < tokens.len() { tokens[k] } else { eos };
        let mut mass = 0.0;
        for t in 0..devices {
            if k < max_len && !tokens[..k].contains(&t) {
                mass += probs[t];
            }
        }
        if k > 0 {
            mass += probs[eos];
        }
        total += (probs[target] / mass).ln();
        state = next;
        prev = target;
    }
    total
}

fn all_sequences(devices: usize, max_len: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut frontier: Vec<Vec<usize>> = vec![vec![]];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for p in &frontier {
            for d in 0..devices {
                if !p.contains(&d) {
                    let mut s = p.clone();
                    s.push(d);
                    next.push(s);
                }
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

#[test]
fn exhaustive_beam_matches_enumeration() {
    let seqs = all_sequences(6, 4);
    assert_eq!(seqs.len(), 6 + 30 + 120 + 360);
    for seed in 0..5 {
        let b = bundle(6, 5, 100 + seed);
        let latent = b.encode_tokens(&[seed as usize % 6, 3]).unwrap();
        let scores: Vec<f64> = seqs.iter().map(|s| brute_log_prob(&b, &latent, s, 4)).collect();
        let total: f64 = scores.iter().map(|s| s.exp()).sum();
        assert!((total - 1.0).abs() < 1e-9);
        let best = (0..seqs.len()).max_by(|&i, &j| scores[i].total_cmp(&scores[j])).unwrap();
        let decoded = beam_decode(&b, &latent, seqs.len(), 4).unwrap();
        assert_eq!(decoded.ids(), &seqs[best][..]);
        let lp = sequence_log_prob(&b, &latent, decoded.ids(), 4).unwrap();
        assert!((lp - scores[best]).abs() < 1e-12);
    }
}

#[test]
fn width_one_is_greedy_chain() {
    for seed in 0..10 {
        let b = bundle(8, 5, seed);
        let latent = b.encode_tokens(&[1, 5, 2]).unwrap();
        let max_len = 5;
        let mut prefix: Vec<usize> = Vec::new();
        loop {
            let devices = 8;
            let candidates: Vec<Vec<usize>> = (0..=devices)
                .filter(|&t| {
                    if t == devices {
                        !prefix.is_empty()
                    } else {
                        prefix.len() < max_len && !prefix.contains(&t)
                    }
                })
                .map(|t| {
                    let mut s = prefix.clone();
                    s.push(t);
                    s
                })
                .collect();
            // compare next-token probabilities through the unmasked distribution
            let mut state = b.initial_state(&latent);
            let mut prev = devices;
            for &t in &prefix {
                state = b.decode_step(prev, &state, &latent).unwrap().1;
                prev = t;
            }
            let (probs, _) = b.decode_step(prev, &state, &latent).unwrap();
            let pick = candidates
                .iter()
                .map(|s| *s.last().unwrap())
                .max_by(|&x, &y| probs[x].total_cmp(&probs[y]))
                .unwrap();
            if pick == devices {
                break;
            }
            prefix.push(pick);
        }
        assert_eq!(greedy_decode(&b, &latent, max_len).unwrap().ids(), &prefix[..]);
    }
}

#[test]
fn decoded_selections_are_valid() {
    let mut rng = from_seed(8);
    for seed in 0..1000 {
        let b = bundle(10, 4, seed);
        let latent = Array2::from_shape_fn((3, 4), |_| rng.random_range(-2.0..2.0));
        let max_len = rng.random_range(1..=10);
        let s = beam_decode(&b, &latent, 1 + seed as usize % 5, max_len).unwrap();
        assert!(!s.is_empty() && s.len() <= max_len);
        assert!(s.check_pool(10).is_ok());
    }
}

#[test]
fn gcs_pipeline_degenerate_and_deterministic() {
    let b = bundle(8, 5, 3);
    let records = vec![record(0, vec![1, 2, 3], 0.4), record(0, vec![4, 0], 0.8), record(0, vec![7], 0.1)];
    let cfg = OptConfig { top_k: 1, max_steps: 0, beam_width: 1, ..OptConfig::default() };
    let out = gcs_select(&b, &records, &cfg).unwrap();
    assert_eq!(out.start, 0);
    assert_eq!(out.steps, 0);
    assert_eq!(out.estimate, b.evaluate(&b.encode_tokens(&[4, 0]).unwrap()).unwrap());
    let full = OptConfig::default();
    let a = gcs_select(&b, &records, &full).unwrap();
    assert_eq!(a, gcs_select(&b, &records, &full).unwrap());
    assert!(a.selection.len() <= 6);
}
