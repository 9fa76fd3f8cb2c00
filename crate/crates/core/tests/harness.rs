use fedgen_core::collectors::CollectorSpec;
use fedgen_core::harness::*;
use fedgen_core::Error;
use proptest::prelude::*;

fn tiny(seed: u64, out: &std::path::Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::with_seed(seed);
    cfg.out_dir = out.to_path_buf();
    cfg.sim.clients = 8;
    cfg.sim.participants = 2;
    cfg.sim.rounds = 3;
    cfg.data.mixture.train_samples = 400;
    cfg.data.mixture.validation_samples = 100;
    cfg.collection.collectors = CollectorSpec::default_roster(1);
    cfg.collection.augment_shuffles = 1;
    cfg.train.epochs = 1;
    cfg.train.batch_size = 16;
    cfg.opt.top_k = 2;
    cfg.opt.max_steps = 2;
    cfg
}

#[test]
fn toml_round_trip() {
    let cfg = ExperimentConfig::with_seed(11);
    let back = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
    assert_eq!(back, cfg);
    assert_eq!(back.config_hash(), cfg.config_hash());
}

#[test]
fn unknown_keys_are_config_errors() {
    for text in ["seed = 1\nbogus = 2", "seed = 1\n[sim]\nclientz = 3", "[sim]\nclients = 3"] {
        assert!(matches!(ExperimentConfig::from_toml(text), Err(Error::Config(_))), "{text}");
    }
}

#[test]
fn validation_rejects_bad_rosters() {
    let mut cfg = ExperimentConfig::with_seed(1);
    cfg.collection.collectors.push(CollectorSpec::oort(1));
    assert!(cfg.validate().is_err(), "repeated tag");

    let mut cfg = ExperimentConfig::with_seed(1);
    cfg.collection.collectors[0].name = Some("gcs".into());
    assert!(cfg.validate().is_err(), "reserved tag");

    let mut cfg = ExperimentConfig::with_seed(1);
    cfg.collection.collectors.clear();
    assert!(cfg.validate().is_err(), "empty roster");

    let mut cfg = ExperimentConfig::with_seed(1);
    cfg.data.train_csv = Some("train.csv".into());
    assert!(cfg.validate().is_err(), "unpaired csv");

    let mut cfg = ExperimentConfig::with_seed(1);
    cfg.target_accuracy = Some(1.5);
    assert!(cfg.validate().is_err());
}

#[test]
fn stage_hashes_track_their_inputs() {
    let base = ExperimentConfig::with_seed(3);

    let mut opt = base.clone();
    opt.opt.top_k = 7;
    assert_eq!(opt.collect_hash(), base.collect_hash());
    assert_eq!(opt.train_hash(), base.train_hash());
    assert_ne!(opt.config_hash(), base.config_hash());

    let mut train = base.clone();
    train.train.alpha = 0.5;
    assert_eq!(train.collect_hash(), base.collect_hash());
    assert_ne!(train.train_hash(), base.train_hash());

    let mut budget = base.clone();
    budget.budget.energy_budget_j += 1.0;
    assert_ne!(budget.collect_hash(), base.collect_hash());
    assert_ne!(budget.train_hash(), base.train_hash());

    let mut moved = base.clone();
    moved.out_dir = "elsewhere".into();
    assert_eq!(moved.config_hash(), base.config_hash());
}

#[test]
fn stale_records_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(1, dir.path());
    cmd_collect(&cfg).unwrap();
    assert_eq!(load_records(&cfg).unwrap().len(), 3 * 3);

    let mut other = cfg.clone();
    other.seed = 2;
    assert!(matches!(load_records(&other), Err(Error::StaleArtifact { .. })));
    assert!(matches!(cmd_train(&other), Err(Error::StaleArtifact { .. })));

    // Changing only the optimizer keeps the corpus valid.
    let mut opt = cfg.clone();
    opt.opt.beam_width = 3;
    assert!(load_records(&opt).is_ok());
}

#[test]
fn stale_model_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(4, dir.path());
    cmd_train(&cfg).unwrap();
    assert!(load_model(&cfg).is_ok());
    let mut other = cfg.clone();
    other.train.learning_rate = 0.01;
    assert!(matches!(load_model(&other), Err(Error::StaleArtifact { .. })));
    assert!(load_records(&other).is_ok());
}

#[test]
fn report_covers_every_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(5, dir.path());
    for p in ["gcs", "oort", "random"] {
        cmd_run(&cfg, p).unwrap();
    }
    let text = std::fs::read_to_string(cmd_report(&cfg).unwrap()).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4);
    for p in ["gcs", "oort", "random"] {
        assert!(lines.iter().any(|l| l.starts_with(&format!("{p},3,"))), "{p}");
    }
}

#[test]
fn fixed_size_policies_emit_t() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(6, dir.path());
    let env = build_environment(&cfg).unwrap();
    for name in ["random", "oort", "favor"] {
        let rows = policy_rows(&cfg, &env, name).unwrap();
        assert!(rows.iter().all(|r| r.selection_size == 2), "{name}");
    }
}

#[test]
fn cost_to_accuracy_stops_at_first_hit() {
    let row = |round, accuracy, cum| MetricsRow {
        policy: "p".into(),
        round,
        selection_size: 1,
        accuracy,
        score: 0.0,
        latency_s: 1.0,
        energy_j: 1.0,
        cum_latency_s: cum,
        cum_energy_j: 10.0 * cum,
    };
    let rows = vec![row(0, 0.5, 1.0), row(1, 0.8, 2.0), row(2, 0.7, 3.0), row(3, 0.9, 4.0)];
    assert_eq!(cost_to_accuracy(&rows, 0.75), Some((2.0, 20.0)));
    assert_eq!(cost_to_accuracy(&rows, 0.85), Some((4.0, 40.0)));
    assert_eq!(cost_to_accuracy(&rows, 0.95), None);
}

fn arb_row() -> impl Strategy<Value = MetricsRow> {
    (0usize..100, 1usize..30, 0.0f64..1.0, 0.0f64..1.0, 0.0f64..1e3, 0.0f64..1e4).prop_map(
        |(round, size, accuracy, score, latency, energy)| MetricsRow {
            policy: "gcs".into(),
            round,
            selection_size: size,
            accuracy,
            score,
            latency_s: latency,
            energy_j: energy,
            cum_latency_s: latency * 2.0,
            cum_energy_j: energy * 3.0,
        },
    )
}

proptest! {
    #[test]
    fn metrics_csv_round_trips(rows in prop::collection::vec(arb_row(), 0..20)) {
        let mut buf = Vec::new();
        write_metrics_csv(&rows, &mut buf).unwrap();
        let back = read_metrics_csv(buf.as_slice()).unwrap();
        prop_assert_eq!(back, rows);
    }
}
