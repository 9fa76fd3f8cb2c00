//! The subcommands. Every command reads and writes inside the configured
//! output directory; every file it writes gets a `<file>.manifest.json`
//! sidecar naming the configuration that produced it.

use std::fmt::Write as _;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::metrics::{cost_to_accuracy, read_metrics_csv, summarize, write_metrics_csv, MetricsRow};
use super::pipeline::{
    build_environment, collect, collect_with, random_roster, resolve_collector, run_collector,
    run_gcs, train_model,
};
use crate::collectors::{RecordSet, SessionSummary};
use crate::error::{Error, Result};
use crate::latent::{gcs_select, OptConfig};
use crate::neural::ModelBundle;
use crate::sim::Environment;

pub const RECORDS_FILE: &str = "records.jsonl";
pub const MODEL_FILE: &str = "model.json";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const SELECTION_FILE: &str = "selection.json";
pub const ABLATION_FILE: &str = "ablation.csv";
pub const SUMMARY_FILE: &str = "summary.csv";

pub fn metrics_file(policy: &str) -> String {
    format!("metrics_{policy}.csv")
}

pub fn sweep_file(param: &str) -> String {
    format!("sweep_{param}.csv")
}

/// Sidecar describing where an artifact came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub artifact: String,
    pub config_hash: String,
    /// Hash of the configuration sections this artifact depends on.
    pub stage_hash: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pool_fingerprint: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sessions: Vec<SessionSummary>,
}

fn manifest_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().expect("artifact has a file name").to_os_string();
    name.push(".manifest.json");
    path.with_file_name(name)
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_artifact(path: &Path, bytes: impl AsRef<[u8]>, manifest: &Manifest) -> Result<()> {
    write_file(path, bytes)?;
    let text = serde_json::to_string_pretty(manifest).expect("manifest serializes") + "\n";
    write_file(&manifest_path(path), text)
}

fn manifest(cfg: &ExperimentConfig, artifact: &str, stage_hash: String) -> Manifest {
    Manifest {
        artifact: artifact.to_string(),
        config_hash: cfg.config_hash(),
        stage_hash,
        seed: cfg.seed,
        pool_fingerprint: None,
        sessions: Vec::new(),
    }
}

/// Reads an artifact's manifest and refuses it if it was produced under a
/// different stage hash.
pub fn check_artifact(path: &Path, expected_stage: &str) -> Result<Manifest> {
    let mpath = manifest_path(path);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let m: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::Data(format!("{}: {e}", mpath.display())))?;
    if m.stage_hash != expected_stage {
        return Err(Error::StaleArtifact {
            path: path.to_path_buf(),
            found: m.stage_hash,
            expected: expected_stage.to_string(),
        });
    }
    Ok(m)
}

fn out(cfg: &ExperimentConfig, name: &str) -> PathBuf {
    cfg.out_dir.join(name)
}

/// Runs the collectors and writes the record corpus.
pub fn cmd_collect(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let env = build_environment(cfg)?;
    let records = write_records(cfg, &env)?;
    log::info!("collected {} records", records.len());
    Ok(out(cfg, RECORDS_FILE))
}

fn write_records(cfg: &ExperimentConfig, env: &Environment) -> Result<RecordSet> {
    let collection = collect(cfg, env)?;
    let mut m = manifest(cfg, "records", cfg.collect_hash());
    m.pool_fingerprint = Some(collection.records.pool_fingerprint.clone());
    m.sessions = collection.sessions;
    write_artifact(&out(cfg, RECORDS_FILE), collection.records.to_jsonl(), &m)?;
    Ok(collection.records)
}

/// Loads the record corpus, checking it belongs to this configuration.
pub fn load_records(cfg: &ExperimentConfig) -> Result<RecordSet> {
    let path = out(cfg, RECORDS_FILE);
    let m = check_artifact(&path, &cfg.collect_hash())?;
    let file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
    RecordSet::read_jsonl(
        BufReader::new(file),
        cfg.budget,
        m.pool_fingerprint.unwrap_or_default(),
    )
}

/// Existing records if present, otherwise freshly collected ones.
pub fn ensure_records(cfg: &ExperimentConfig, env: &Environment) -> Result<RecordSet> {
    if out(cfg, RECORDS_FILE).exists() {
        load_records(cfg)
    } else {
        write_records(cfg, env)
    }
}

/// Trains on the (augmented) corpus and writes the checkpoint and a
/// per-epoch loss log.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let env = build_environment(cfg)?;
    let records = ensure_records(cfg, &env)?;
    write_model(cfg, &records)?;
    Ok(out(cfg, MODEL_FILE))
}

fn write_model(cfg: &ExperimentConfig, records: &RecordSet) -> Result<ModelBundle> {
    let (bundle, report) = train_model(cfg, records, cfg.collection.augment_shuffles)?;
    let stage = cfg.train_hash();
    write_artifact(&out(cfg, MODEL_FILE), bundle.to_json(), &manifest(cfg, "model", stage.clone()))?;
    let mut log = String::from("epoch,loss\n");
    for (i, loss) in report.epoch_losses.iter().enumerate() {
        writeln!(log, "{},{loss}", i + 1).expect("writing to a string");
    }
    write_artifact(&out(cfg, TRAIN_LOG_FILE), log, &manifest(cfg, "train_log", stage))?;
    Ok(bundle)
}

pub fn load_model(cfg: &ExperimentConfig) -> Result<ModelBundle> {
    let path = out(cfg, MODEL_FILE);
    let expected = cfg.train_hash();
    check_artifact(&path, &expected)?;
    let bundle = ModelBundle::load(&path)?;
    if bundle.config_hash != expected {
        return Err(Error::StaleArtifact {
            path,
            found: bundle.config_hash,
            expected,
        });
    }
    Ok(bundle)
}

pub fn ensure_model(cfg: &ExperimentConfig, records: &RecordSet) -> Result<ModelBundle> {
    if out(cfg, MODEL_FILE).exists() {
        load_model(cfg)
    } else {
        write_model(cfg, records)
    }
}

/// One-shot generative selection over the whole corpus, or over the records
/// of one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionDump {
    pub round: Option<usize>,
    pub selection: Vec<usize>,
    pub estimate: f64,
    pub start: usize,
    pub steps: usize,
}

pub fn cmd_select(cfg: &ExperimentConfig, round: Option<usize>) -> Result<PathBuf> {
    let env = build_environment(cfg)?;
    let records = ensure_records(cfg, &env)?;
    let bundle = ensure_model(cfg, &records)?;
    let starts: Vec<_> = match round {
        Some(r) => records.records.iter().filter(|x| x.round == r).cloned().collect(),
        None => records.records.clone(),
    };
    let mut opt = cfg.opt.clone();
    opt.max_len = Some(opt.resolved_max_len(cfg.sim.participants, cfg.sim.clients));
    let outcome = gcs_select(&bundle, &starts, &opt)?;
    let dump = SelectionDump {
        round,
        selection: outcome.selection.ids().to_vec(),
        estimate: outcome.estimate,
        start: outcome.start,
        steps: outcome.steps,
    };
    let path = out(cfg, SELECTION_FILE);
    let text = serde_json::to_string_pretty(&dump).expect("serializes") + "\n";
    write_artifact(&path, text, &manifest(cfg, "selection", cfg.config_hash()))?;
    Ok(path)
}

/// Per-round metrics of one policy on a fresh session.
pub fn policy_rows(cfg: &ExperimentConfig, env: &Environment, policy: &str) -> Result<Vec<MetricsRow>> {
    match resolve_collector(cfg, policy)? {
        Some(spec) => run_collector(cfg, env, &spec),
        None => {
            let records = ensure_records(cfg, env)?;
            let bundle = ensure_model(cfg, &records)?;
            run_gcs(cfg, env, &bundle, &records)
        }
    }
}

pub fn cmd_run(cfg: &ExperimentConfig, policy: &str) -> Result<PathBuf> {
    let env = build_environment(cfg)?;
    let rows = policy_rows(cfg, &env, policy)?;
    let mut buf = Vec::new();
    write_metrics_csv(&rows, &mut buf)?;
    let path = out(cfg, &metrics_file(policy));
    write_artifact(&path, buf, &manifest(cfg, "metrics", cfg.config_hash()))?;
    Ok(path)
}

/// Hyperparameter swept by `sweep`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Alpha,
    TopK,
}

impl SweepParam {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "alpha" => Ok(Self::Alpha),
            "topk" => Ok(Self::TopK),
            _ => Err(Error::Config(format!("unknown sweep parameter {name:?}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Alpha => "alpha",
            Self::TopK => "topk",
        }
    }

    pub fn default_grid(self) -> Vec<f64> {
        match self {
            Self::Alpha => vec![0.1, 0.3, 0.5, 0.7, 0.9],
            Self::TopK => vec![5.0, 10.0, 25.0, 50.0],
        }
    }
}

const RESULT_HEADER: &str =
    "mean_score,final_accuracy,total_latency_s,total_energy_j,distinct_sizes";

fn result_fields(rows: &[MetricsRow]) -> String {
    let s = summarize("", rows);
    format!(
        "{},{},{},{},{}",
        s.mean_score, s.final_accuracy, s.total_latency_s, s.total_energy_j, s.distinct_sizes
    )
}

/// GCS with one hyperparameter varied over `grid`. Varying alpha retrains
/// the model for each value; varying top-K reuses it.
pub fn cmd_sweep(cfg: &ExperimentConfig, param: SweepParam, grid: &[f64]) -> Result<PathBuf> {
    if grid.is_empty() {
        return Err(Error::Config("sweep grid is empty".into()));
    }
    let env = build_environment(cfg)?;
    let records = ensure_records(cfg, &env)?;
    let mut text = format!("param,value,{RESULT_HEADER}\n");
    for &value in grid {
        let mut c = cfg.clone();
        let rows = match param {
            SweepParam::Alpha => {
                c.train.alpha = value;
                c.validate()?;
                let (bundle, _) = train_model(&c, &records, c.collection.augment_shuffles)?;
                run_gcs(&c, &env, &bundle, &records)?
            }
            SweepParam::TopK => {
                if value < 1.0 || value.fract() != 0.0 {
                    return Err(Error::Config(format!("top-K value {value} is not a positive integer")));
                }
                c.opt = OptConfig {
                    top_k: value as usize,
                    ..cfg.opt.clone()
                };
                c.validate()?;
                let bundle = ensure_model(cfg, &records)?;
                run_gcs(&c, &env, &bundle, &records)?
            }
        };
        writeln!(text, "{},{value},{}", param.name(), result_fields(&rows)).expect("string");
    }
    let path = out(cfg, &sweep_file(param.name()));
    write_artifact(&path, text, &manifest(cfg, "sweep", cfg.config_hash()))?;
    Ok(path)
}

/// Corpus ablations of the generative selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ablation {
    /// Corpus collected by random selection only.
    NoCollectors,
    /// Training without shuffled copies.
    NoAugmentation,
}

impl Ablation {
    pub const ALL: [Ablation; 2] = [Ablation::NoCollectors, Ablation::NoAugmentation];

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "no-collectors" => Ok(Self::NoCollectors),
            "no-augmentation" => Ok(Self::NoAugmentation),
            _ => Err(Error::Config(format!("unknown ablation {name:?}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::NoCollectors => "no-collectors",
            Self::NoAugmentation => "no-augmentation",
        }
    }
}

/// GCS metrics when trained and started from a modified version of
/// `records`, the collector corpus.
pub fn ablation_rows(
    cfg: &ExperimentConfig,
    env: &Environment,
    records: &RecordSet,
    variant: Ablation,
) -> Result<Vec<MetricsRow>> {
    match variant {
        Ablation::NoCollectors => {
            let corpus = collect_with(cfg, env, &random_roster(cfg))?.records;
            let (bundle, _) = train_model(cfg, &corpus, cfg.collection.augment_shuffles)?;
            run_gcs(cfg, env, &bundle, &corpus)
        }
        Ablation::NoAugmentation => {
            let (bundle, _) = train_model(cfg, records, 0)?;
            run_gcs(cfg, env, &bundle, records)
        }
    }
}

/// Baseline GCS followed by each requested variant.
pub fn cmd_ablate(cfg: &ExperimentConfig, variants: &[Ablation]) -> Result<PathBuf> {
    let env = build_environment(cfg)?;
    let records = ensure_records(cfg, &env)?;
    let bundle = ensure_model(cfg, &records)?;
    let mut text = format!("variant,{RESULT_HEADER}\n");
    let base = run_gcs(cfg, &env, &bundle, &records)?;
    writeln!(text, "gcs,{}", result_fields(&base)).expect("string");
    for &v in variants {
        let rows = ablation_rows(cfg, &env, &records, v)?;
        writeln!(text, "{},{}", v.name(), result_fields(&rows)).expect("string");
    }
    let path = out(cfg, ABLATION_FILE);
    write_artifact(&path, text, &manifest(cfg, "ablation", cfg.config_hash()))?;
    Ok(path)
}

/// Aggregates every `metrics_*.csv` in the output directory. Costs are read
/// at the configured target accuracy, or else at 95% of the lowest peak
/// accuracy among the runs so every policy reaches it.
pub fn cmd_report(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let dir = &cfg.out_dir;
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("metrics_") && n.ends_with(".csv"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Data(format!("no metrics files in {}", dir.display())));
    }
    let mut runs = Vec::new();
    for path in &files {
        check_artifact(path, &cfg.config_hash())?;
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        runs.push(read_metrics_csv(file)?);
    }
    let target = cfg.target_accuracy.unwrap_or_else(|| {
        0.95 * runs
            .iter()
            .map(|rows| rows.iter().map(|r| r.accuracy).fold(0.0, f64::max))
            .fold(f64::INFINITY, f64::min)
    });
    let mut text = String::from(
        "policy,rounds,mean_score,final_accuracy,peak_accuracy,total_latency_s,total_energy_j,distinct_sizes,target_accuracy,latency_to_target_s,energy_to_target_j\n",
    );
    for rows in &runs {
        let policy = rows.first().map_or("", |r| r.policy.as_str());
        let s = summarize(policy, rows);
        let (toa, eoa) = match cost_to_accuracy(rows, target) {
            Some((l, e)) => (l.to_string(), e.to_string()),
            None => (String::new(), String::new()),
        };
        writeln!(
            text,
            "{},{},{},{},{},{},{},{},{target},{toa},{eoa}",
            s.policy,
            s.rounds,
            s.mean_score,
            s.final_accuracy,
            s.peak_accuracy,
            s.total_latency_s,
            s.total_energy_j,
            s.distinct_sizes
        )
        .expect("string");
    }
    let path = out(cfg, SUMMARY_FILE);
    write_artifact(&path, text, &manifest(cfg, "summary", cfg.config_hash()))?;
    Ok(path)
}
