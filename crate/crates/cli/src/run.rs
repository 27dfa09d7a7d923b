//! Data preparation, single training runs and the reduction sweep.

use std::fs;
use std::path::{Path, PathBuf};

use mixf::data::{self, Dataset, Label, Split, Vocabulary};
use mixf::model::{self, Parameters};
use mixf::trainer::{self, EpochReport};
use serde::{Deserialize, Serialize};

use crate::config::{sha256_hex, RunConfig};
use crate::CliError;

pub const RUN_FILE: &str = "run.json";
pub const PARAMS_FILE: &str = "params.mixf";
pub const VOCAB_FILE: &str = "vocab.json";
pub const SWEEP_FILE: &str = "sweep.csv";

/// Vocabulary and encoded splits built from a config's data files.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub vocab: Vocabulary,
    pub train: Dataset,
    pub dev: Dataset,
}

/// Builds the vocabulary from the full training file and encodes both splits.
pub fn prepare(config: &RunConfig) -> Result<Prepared, CliError> {
    let task = &config.task;
    let rows = data::read_tsv(&config.paths.train, task)?;
    let corpus = rows
        .iter()
        .flat_map(|r| std::iter::once(r.sentence1.as_str()).chain(r.sentence2.as_deref()));
    let vocab = data::build_vocab(corpus, config.vocab.min_count, config.vocab.max_size)?;
    let max_len = config.model.max_len;
    let train = Dataset::from_raw(&rows, task, &vocab, max_len, Split::Train)?;
    let dev = data::load_tsv(&config.paths.dev, task, &vocab, max_len, Split::Dev)?;
    Ok(Prepared { vocab, train, dev })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Baseline,
    Mixup,
}

impl Arm {
    pub fn name(self) -> &'static str {
        match self {
            Arm::Baseline => "baseline",
            Arm::Mixup => "mixup",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub run_id: String,
    pub task: String,
    pub fraction: f64,
    pub mixup_enabled: bool,
    pub seed: u64,
    pub config: RunConfig,
    pub config_hash: String,
    pub vocab_size: usize,
    pub train_examples: usize,
    /// SHA-256 over the token ids and labels of the (reduced) training set.
    pub train_subset_sha256: String,
    pub epochs: Vec<EpochReport>,
    pub final_metric: f64,
    pub best_metric: f64,
    pub best_epoch: usize,
}

impl RunReport {
    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let json = serde_json::to_string_pretty(self).expect("report serializes");
        write_file(path, (json + "\n").as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
    }
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)
            .map_err(|e| CliError::Input(format!("cannot create {}: {e}", dir.display())))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))
}

pub fn subset_digest(ds: &Dataset) -> String {
    let mut bytes = Vec::with_capacity(ds.len() * (ds.max_len + 1) * 8);
    for ex in &ds.examples {
        for &t in &ex.token_ids {
            bytes.extend_from_slice(&(t as u64).to_le_bytes());
        }
        let label = match ex.label {
            Label::Class(c) => c as f64,
            Label::Score(s) => s,
        };
        bytes.extend_from_slice(&label.to_le_bytes());
    }
    sha256_hex(&bytes)
}

pub fn run_id(task: &str, fraction: f64, arm: Arm, seed: u64) -> String {
    format!("{task}-f{fraction}-{}-s{seed}", arm.name())
}

/// Reduces the training set to `fraction` (seeded by `config.seed`, so both
/// arms see the same subset) and trains with mixup on or off.
pub fn run_cell(
    config: &RunConfig,
    prepared: &Prepared,
    fraction: f64,
    arm: Arm,
) -> Result<(RunReport, Parameters), CliError> {
    let mut config = config.clone();
    config.mixup.enabled = arm == Arm::Mixup;
    let train = data::reduce_dataset(&prepared.train, fraction, config.seed)?;
    let model_config = config.model_config(prepared.vocab.len());
    let outcome = trainer::run_training(&model_config, &config.train_config(), &train, &prepared.dev)?;
    let (best_metric, best_epoch) = outcome.best_metric();
    let report = RunReport {
        run_id: run_id(&config.task.name, fraction, arm, config.seed),
        task: config.task.name.clone(),
        fraction,
        mixup_enabled: config.mixup.enabled,
        seed: config.seed,
        config_hash: config.hash(),
        vocab_size: prepared.vocab.len(),
        train_examples: train.len(),
        train_subset_sha256: subset_digest(&train),
        final_metric: outcome.final_metric(),
        best_metric,
        best_epoch,
        epochs: outcome.reports,
        config,
    };
    Ok((report, outcome.params))
}

/// Runs one training job and writes `run.json`, the parameters and the
/// vocabulary into `out`.
pub fn train_to_dir(
    config: &RunConfig,
    fraction: f64,
    out: &Path,
) -> Result<RunReport, CliError> {
    let prepared = prepare(config)?;
    let arm = if config.mixup.enabled { Arm::Mixup } else { Arm::Baseline };
    let (report, params) = run_cell(config, &prepared, fraction, arm)?;
    fs::create_dir_all(out)
        .map_err(|e| CliError::Input(format!("cannot create {}: {e}", out.display())))?;
    model::save_params(&params, &out.join(PARAMS_FILE))?;
    prepared.vocab.save(&out.join(VOCAB_FILE))?;
    report.write(&out.join(RUN_FILE))?;
    Ok(report)
}

/// Loads saved parameters and scores `dev_path` (or the config's dev file).
pub fn evaluate_saved(
    config: &RunConfig,
    params_path: &Path,
    vocab_path: &Path,
    dev_path: Option<&Path>,
) -> Result<mixf::metrics::EvalResult, CliError> {
    let vocab = Vocabulary::load(vocab_path)?;
    let params = model::load_params(params_path)?;
    let model_config = config.model_config(vocab.len());
    params.check_compatible(&model_config)?;
    let dev_path: PathBuf = dev_path.map_or_else(|| config.paths.dev.clone(), Path::to_path_buf);
    let dev = data::load_tsv(&dev_path, &config.task, &vocab, config.model.max_len, Split::Dev)?;
    Ok(trainer::evaluate(&model_config, &params, &dev)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPlan {
    pub fractions: Vec<f64>,
    pub arms: Vec<Arm>,
    pub seeds: Vec<u64>,
    pub jobs: usize,
}

impl SweepPlan {
    /// 0.1, 0.2, …, 1.0
    pub fn default_fractions() -> Vec<f64> {
        (1..=10).map(|i| i as f64 / 10.0).collect()
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.fractions.is_empty() || self.arms.is_empty() || self.seeds.is_empty() {
            return Err(CliError::Input("sweep needs at least one fraction, arm and seed".into()));
        }
        if let Some(f) = self.fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
            return Err(CliError::Input(format!("fraction {f} is outside (0, 1]")));
        }
        if self.jobs == 0 {
            return Err(CliError::Input("--jobs must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellResult {
    pub fraction: f64,
    pub arm: Arm,
    pub seed: u64,
    pub outcome: Result<RunReport, String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSummary {
    pub task: String,
    pub cells: Vec<CellResult>,
    /// `(fraction, mean mixup metric − mean baseline metric)` where both arms
    /// have at least one finished cell.
    pub deltas: Vec<(f64, Option<f64>)>,
}

impl SweepSummary {
    pub fn failures(&self) -> usize {
        self.cells.iter().filter(|c| c.outcome.is_err()).count()
    }
}

/// Every (fraction, arm, seed) cell, in that nesting order. Per-run reports
/// go to `out/runs/<run_id>.json` and the table to `out/sweep.csv`. A failing
/// cell is recorded and the rest still run.
pub fn sweep(config: &RunConfig, plan: &SweepPlan, out: &Path) -> Result<SweepSummary, CliError> {
    plan.validate()?;
    let prepared = prepare(config)?;
    let mut specs = Vec::new();
    for &fraction in &plan.fractions {
        for &arm in &plan.arms {
            for &seed in &plan.seeds {
                specs.push((fraction, arm, seed));
            }
        }
    }

    let run_one = |&(fraction, arm, seed): &(f64, Arm, u64)| -> CellResult {
        let mut cfg = config.clone();
        cfg.seed = seed;
        let id = run_id(&cfg.task.name, fraction, arm, seed);
        let outcome = run_cell(&cfg, &prepared, fraction, arm)
            .and_then(|(report, _)| {
                report.write(&out.join("runs").join(format!("{id}.json")))?;
                Ok(report)
            })
            .map_err(|e| {
                log::error!("cell {id} failed: {e}");
                e.to_string()
            });
        CellResult {
            fraction,
            arm,
            seed,
            outcome,
        }
    };

    let cells: Vec<CellResult> = if plan.jobs > 1 {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(plan.jobs)
            .build()
            .map_err(|e| CliError::Input(format!("cannot start {} workers: {e}", plan.jobs)))?;
        pool.install(|| specs.par_iter().map(run_one).collect())
    } else {
        specs.iter().map(run_one).collect()
    };

    let mean = |fraction: f64, arm: Arm| -> Option<f64> {
        let vals: Vec<f64> = cells
            .iter()
            .filter(|c| c.fraction == fraction && c.arm == arm)
            .filter_map(|c| c.outcome.as_ref().ok().map(|r| r.final_metric))
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    };
    let both = plan.arms.contains(&Arm::Baseline) && plan.arms.contains(&Arm::Mixup);
    let deltas = if both {
        plan.fractions
            .iter()
            .map(|&f| (f, mean(f, Arm::Mixup).zip(mean(f, Arm::Baseline)).map(|(m, b)| m - b)))
            .collect()
    } else {
        Vec::new()
    };

    let summary = SweepSummary {
        task: config.task.name.clone(),
        cells,
        deltas,
    };
    write_sweep_csv(&summary, &out.join(SWEEP_FILE))?;
    Ok(summary)
}

/// Header `task,fraction,arm,seed,metric,status`. Delta rows use arm `delta`
/// and an empty seed.
pub fn write_sweep_csv(summary: &SweepSummary, path: &Path) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| CliError::Input(format!("cannot format {}: {e}", path.display()));
    w.write_record(["task", "fraction", "arm", "seed", "metric", "status"])
        .map_err(csv_err)?;
    for c in &summary.cells {
        let (metric, status) = match &c.outcome {
            Ok(r) => (r.final_metric.to_string(), "ok"),
            Err(_) => (String::new(), "error"),
        };
        w.write_record([
            summary.task.as_str(),
            &c.fraction.to_string(),
            c.arm.name(),
            &c.seed.to_string(),
            &metric,
            status,
        ])
        .map_err(csv_err)?;
    }
    for (fraction, delta) in &summary.deltas {
        let (metric, status) = match delta {
            Some(d) => (d.to_string(), "ok"),
            None => (String::new(), "error"),
        };
        w.write_record([summary.task.as_str(), &fraction.to_string(), "delta", "", &metric, status])
            .map_err(csv_err)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| CliError::Input(format!("cannot format {}: {e}", path.display())))?;
    write_file(path, &bytes)
}
