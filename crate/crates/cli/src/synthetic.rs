//! Keyword-vs-distractor sentences for a binary task that needs no external
//! data. Each sentence carries exactly one cue word for its class among
//! neutral filler; noise flips a share of the training labels.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use mixf::data::{Columns, InputArity, LabelKind, TaskSpec};
use mixf::metrics::Metric;
use mixf::rng;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::{ModelSection, Paths, RunConfig, TrainSection, VocabSection};
use crate::CliError;

const POSITIVE: &[&str] = &[
    "excellent", "superb", "wonderful", "brilliant", "delightful", "charming", "moving", "gripping",
];
const NEGATIVE: &[&str] = &[
    "terrible", "awful", "dreadful", "boring", "tedious", "clumsy", "bland", "painful",
];
const FILLER: &[&str] = &[
    "the", "a", "film", "movie", "plot", "story", "actor", "actress", "scene", "director", "script",
    "music", "camera", "and", "with", "was", "is", "quite", "very", "really", "this", "that", "of",
    "in", "it", "ending", "cast", "dialogue", "pace", "character", "screen", "sequel", "studio",
    "rather", "somewhat", "its", "on", "at", "for", "overall",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub train_size: usize,
    pub dev_size: usize,
    /// Probability of flipping a training label. Dev labels stay clean.
    pub noise: f64,
    pub seed: u64,
    pub min_words: usize,
    pub max_words: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            train_size: 2000,
            dev_size: 500,
            noise: 0.1,
            seed: 0,
            min_words: 5,
            max_words: 12,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), CliError> {
        if self.train_size == 0 || self.dev_size == 0 {
            return Err(CliError::Input("synthetic split sizes must be positive".into()));
        }
        if !(0.0..=0.5).contains(&self.noise) {
            return Err(CliError::Input(format!("noise {} must be in [0, 0.5]", self.noise)));
        }
        if self.min_words == 0 || self.min_words > self.max_words {
            return Err(CliError::Input("need 1 <= min_words <= max_words".into()));
        }
        Ok(())
    }
}

pub fn task_spec() -> TaskSpec {
    TaskSpec {
        name: "synthetic".into(),
        input_arity: InputArity::Single,
        label_kind: LabelKind::Classes { n: 2 },
        metric: Metric::Accuracy,
        columns: Columns {
            sentence1: 0,
            sentence2: None,
            label: 1,
        },
    }
}

/// Settings that let the small randomly initialized encoder learn the task
/// in three epochs.
pub fn default_config(train: PathBuf, dev: PathBuf) -> RunConfig {
    RunConfig {
        seed: 0,
        model: ModelSection {
            d_model: 32,
            n_heads: 2,
            n_layers: 1,
            d_ff: 64,
            max_len: 16,
            dropout_rate: 0.1,
        },
        train: TrainSection {
            learning_rate: 1e-3,
            ..TrainSection::default()
        },
        mixup: Default::default(),
        task: task_spec(),
        vocab: VocabSection::default(),
        paths: Paths {
            train,
            dev,
            out: None,
        },
    }
}

/// `(sentence, label)` rows for one split.
pub fn generate_split(spec: &SyntheticSpec, split: &str, size: usize, noise: f64) -> Vec<(String, usize)> {
    let mut r = rng::stream(spec.seed, &format!("synthetic-{split}"), 0);
    (0..size)
        .map(|_| {
            let label = r.random_range(0..2usize);
            let n = r.random_range(spec.min_words..=spec.max_words);
            let mut words: Vec<&str> = (0..n - 1)
                .map(|_| FILLER[r.random_range(0..FILLER.len())])
                .collect();
            let cues = if label == 1 { POSITIVE } else { NEGATIVE };
            let cue = cues[r.random_range(0..cues.len())];
            words.insert(r.random_range(0..n), cue);
            let shown = if r.random_bool(noise) { 1 - label } else { label };
            (words.join(" "), shown)
        })
        .collect()
}

fn write_tsv(path: &Path, rows: &[(String, usize)]) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Input(format!("cannot write {}: {e}", path.display()));
    let mut f = std::io::BufWriter::new(fs::File::create(path).map_err(io)?);
    writeln!(f, "sentence\tlabel").map_err(io)?;
    for (s, l) in rows {
        writeln!(f, "{s}\t{l}").map_err(io)?;
    }
    f.flush().map_err(io)
}

/// Writes `train.tsv`, `dev.tsv` and a ready-to-run `config.json` into `dir`
/// and returns the config path.
pub fn write_task(dir: &Path, spec: &SyntheticSpec) -> Result<PathBuf, CliError> {
    spec.validate()?;
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Input(format!("cannot create {}: {e}", dir.display())))?;
    write_tsv(&dir.join("train.tsv"), &generate_split(spec, "train", spec.train_size, spec.noise))?;
    write_tsv(&dir.join("dev.tsv"), &generate_split(spec, "dev", spec.dev_size, 0.0))?;
    let mut config = default_config("train.tsv".into(), "dev.tsv".into());
    config.seed = spec.seed;
    let path = dir.join("config.json");
    let json = serde_json::to_string_pretty(&config).expect("config serializes");
    fs::write(&path, json + "\n")
        .map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))?;
    Ok(path)
}
