//! Tasks, vocabulary, TSV ingestion, subset reduction and batching.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::Metric;
use crate::model::{BatchLabels, EncodedBatch, HeadKind};
use crate::numerics::Tensor;
use crate::rng;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const CLS: usize = 2;
pub const SEP: usize = 3;
const RESERVED: [&str; 4] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputArity {
    Single,
    Pair,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LabelKind {
    Classes { n: usize },
    Regression { min: f64, max: f64 },
}

/// 0-based TSV column indices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Columns {
    pub sentence1: usize,
    #[serde(default)]
    pub sentence2: Option<usize>,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    pub input_arity: InputArity,
    pub label_kind: LabelKind,
    pub metric: Metric,
    pub columns: Columns,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        match (&self.label_kind, self.metric) {
            (LabelKind::Classes { n }, _) if *n < 2 => {
                return Err(Error::validation("a classification task needs at least 2 classes"))
            }
            (LabelKind::Classes { n }, Metric::Matthews) if *n != 2 => {
                return Err(Error::validation("matthews correlation requires exactly 2 classes"))
            }
            (LabelKind::Classes { .. }, Metric::Spearman) => {
                return Err(Error::validation("spearman correlation requires a regression task"))
            }
            (LabelKind::Regression { min, max }, metric) => {
                if metric != Metric::Spearman {
                    return Err(Error::validation(
                        "regression tasks are scored with spearman correlation",
                    ));
                }
                if !(min < max) {
                    return Err(Error::validation("regression range needs min < max"));
                }
            }
            _ => {}
        }
        match (self.input_arity, self.columns.sentence2) {
            (InputArity::Pair, None) => Err(Error::validation(
                "pair task needs a sentence2 column",
            )),
            (InputArity::Single, Some(_)) => Err(Error::validation(
                "single-sentence task must not set a sentence2 column",
            )),
            _ => Ok(()),
        }
    }

    pub fn head(&self) -> HeadKind {
        match self.label_kind {
            LabelKind::Classes { n } => HeadKind::Classification { n_classes: n },
            LabelKind::Regression { .. } => HeadKind::Regression,
        }
    }

    fn check_label(&self, label: &Label) -> Result<()> {
        match (&self.label_kind, label) {
            (LabelKind::Classes { n }, Label::Class(c)) if c < n => Ok(()),
            (LabelKind::Classes { n }, Label::Class(c)) => Err(Error::validation(format!(
                "class label {c} outside 0..{n}"
            ))),
            (LabelKind::Regression { min, max }, Label::Score(s)) if s >= min && s <= max => {
                Ok(())
            }
            (LabelKind::Regression { min, max }, Label::Score(s)) => Err(Error::validation(
                format!("score {s} outside [{min}, {max}]"),
            )),
            _ => Err(Error::validation("label kind does not match the task")),
        }
    }

    fn parse_label(&self, raw: &str) -> Result<Label> {
        let raw = raw.trim();
        let label = match self.label_kind {
            LabelKind::Classes { .. } => Label::Class(raw.parse().map_err(|_| {
                Error::validation(format!("class label '{raw}' is not a non-negative integer"))
            })?),
            LabelKind::Regression { .. } => {
                let v: f64 = raw
                    .parse()
                    .map_err(|_| Error::validation(format!("score '{raw}' is not a number")))?;
                if !v.is_finite() {
                    return Err(Error::validation(format!("score '{raw}' is not finite")));
                }
                Label::Score(v)
            }
        };
        self.check_label(&label)?;
        Ok(label)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Label {
    Class(usize),
    Score(f64),
}

/// Lowercases, splits on Unicode whitespace and strips ASCII punctuation from
/// both ends of each piece. Pieces that are pure punctuation disappear.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| w.trim_matches(|c: char| c.is_ascii_punctuation()).to_lowercase())
        .filter(|w| !w.is_empty())
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "VocabFile", into = "VocabFile")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    pub min_count: usize,
    pub max_size: usize,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    min_count: usize,
    max_size: usize,
    tokens: Vec<String>,
}

impl From<Vocabulary> for VocabFile {
    fn from(v: Vocabulary) -> Self {
        VocabFile {
            min_count: v.min_count,
            max_size: v.max_size,
            tokens: v.tokens,
        }
    }
}

impl TryFrom<VocabFile> for Vocabulary {
    type Error = Error;

    fn try_from(f: VocabFile) -> Result<Self> {
        if f.tokens.len() < RESERVED.len() || f.tokens[..RESERVED.len()] != RESERVED {
            return Err(Error::validation("vocabulary must start with the reserved tokens"));
        }
        let index: HashMap<String, usize> =
            f.tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        if index.len() != f.tokens.len() {
            return Err(Error::validation("vocabulary contains duplicate tokens"));
        }
        Ok(Vocabulary {
            tokens: f.tokens,
            index,
            min_count: f.min_count,
            max_size: f.max_size,
        })
    }
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Id of an already-normalized token; unseen tokens map to UNK.
    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Frequency-ranked vocabulary over the tokenized corpus. Tokens seen fewer
/// than `min_count` times are dropped; ties go to the lexicographically
/// smaller token; the total size including the four reserved ids is capped
/// at `max_size`.
pub fn build_vocab<'a, I>(corpus: I, min_count: usize, max_size: usize) -> Result<Vocabulary>
where
    I: IntoIterator<Item = &'a str>,
{
    if max_size < RESERVED.len() {
        return Err(Error::validation(format!(
            "vocabulary max_size {max_size} cannot hold the {} reserved tokens",
            RESERVED.len()
        )));
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    let mut documents = 0usize;
    for text in corpus {
        documents += 1;
        for tok in tokenize(text) {
            *counts.entry(tok).or_default() += 1;
        }
    }
    if documents == 0 {
        return Err(Error::validation("cannot build a vocabulary from an empty corpus"));
    }
    let mut ranked: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(t, c)| *c >= min_count.max(1) && !RESERVED.contains(&t.as_str()))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(max_size - RESERVED.len());

    let tokens: Vec<String> = RESERVED
        .iter()
        .map(|s| s.to_string())
        .chain(ranked.into_iter().map(|(t, _)| t))
        .collect();
    Vocabulary::try_from(VocabFile {
        min_count,
        max_size,
        tokens,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub token_ids: Vec<usize>,
    pub mask: Vec<u8>,
    pub label: Label,
}

/// Lays out `[CLS] s1 [SEP]` (plus `s2 [SEP]` for pairs), truncating the
/// longer segment from its end until the layout fits `max_len`, then pads.
pub fn encode_example(
    vocab: &Vocabulary,
    task: &TaskSpec,
    sentence1: &str,
    sentence2: Option<&str>,
    label: Label,
    max_len: usize,
) -> Result<Example> {
    task.check_label(&label)?;
    let ids = |s: &str| -> Vec<usize> { tokenize(s).iter().map(|t| vocab.id(t)).collect() };
    let mut first = ids(sentence1);
    let mut second = match (task.input_arity, sentence2) {
        (InputArity::Single, None) => None,
        (InputArity::Pair, Some(s)) => Some(ids(s)),
        (InputArity::Single, Some(_)) => {
            return Err(Error::validation("single-sentence task given a second sentence"))
        }
        (InputArity::Pair, None) => {
            return Err(Error::validation("pair task is missing its second sentence"))
        }
    };
    let specials = if second.is_some() { 3 } else { 2 };
    if max_len < specials {
        return Err(Error::validation(format!(
            "max_len {max_len} cannot hold {specials} special tokens"
        )));
    }
    let budget = max_len - specials;
    match second.as_mut() {
        None => first.truncate(budget),
        Some(second) => {
            // pop from the longer side; on a tie pop from the first, which
            // alternates the two while they stay level
            while first.len() + second.len() > budget {
                if second.len() > first.len() {
                    second.pop();
                } else {
                    first.pop();
                }
            }
        }
    }

    let mut token_ids = Vec::with_capacity(max_len);
    token_ids.push(CLS);
    token_ids.extend(&first);
    token_ids.push(SEP);
    if let Some(second) = second {
        token_ids.extend(&second);
        token_ids.push(SEP);
    }
    let real = token_ids.len();
    token_ids.resize(max_len, PAD);
    let mut mask = vec![1u8; real];
    mask.resize(max_len, 0);
    Ok(Example {
        token_ids,
        mask,
        label,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Dev,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub task: TaskSpec,
    pub split: Split,
    pub max_len: usize,
    pub examples: Vec<Example>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn from_raw(
        rows: &[RawExample],
        task: &TaskSpec,
        vocab: &Vocabulary,
        max_len: usize,
        split: Split,
    ) -> Result<Self> {
        let examples = rows
            .iter()
            .map(|r| {
                encode_example(vocab, task, &r.sentence1, r.sentence2.as_deref(), r.label, max_len)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            task: task.clone(),
            split,
            max_len,
            examples,
        })
    }
}

/// One parsed TSV row before tokenization. `line` is 1-based, counting the
/// header as line 1.
#[derive(Clone, Debug, PartialEq)]
pub struct RawExample {
    pub line: usize,
    pub sentence1: String,
    pub sentence2: Option<String>,
    pub label: Label,
}

/// Parses a headed, tab-separated file with the task's column mapping.
/// Every data row must have the header's field count.
pub fn read_tsv(path: &Path, task: &TaskSpec) -> Result<Vec<RawExample>> {
    task.validate()?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let text = String::from_utf8(bytes).map_err(|e| Error::Row {
        path: path.to_path_buf(),
        line: 0,
        message: format!("file is not valid UTF-8: {e}"),
    })?;
    let row_err = |line: usize, message: String| Error::Row {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| row_err(1, "file is empty, expected a header row".into()))?;
    let width = header.split('\t').count();
    let cols = &task.columns;
    let needed = [Some(cols.sentence1), cols.sentence2, Some(cols.label)]
        .into_iter()
        .flatten()
        .max()
        .unwrap();
    if needed >= width {
        return Err(row_err(
            1,
            format!("header has {width} columns but the task reads column {needed}"),
        ));
    }

    let mut rows = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        // `lines` already strips "\n" and "\r\n"; a lone trailing "\r" also goes
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != width {
            return Err(row_err(
                line_no,
                format!("expected {width} tab-separated fields, found {}", fields.len()),
            ));
        }
        let label = task
            .parse_label(fields[cols.label])
            .map_err(|e| row_err(line_no, e.to_string()))?;
        rows.push(RawExample {
            line: line_no,
            sentence1: fields[cols.sentence1].to_string(),
            sentence2: cols.sentence2.map(|c| fields[c].to_string()),
            label,
        });
    }
    if rows.is_empty() {
        return Err(row_err(1, "no data rows after the header".into()));
    }
    Ok(rows)
}

pub fn load_tsv(
    path: &Path,
    task: &TaskSpec,
    vocab: &Vocabulary,
    max_len: usize,
    split: Split,
) -> Result<Dataset> {
    let rows = read_tsv(path, task)?;
    Dataset::from_raw(&rows, task, vocab, max_len, split)
}

/// Seeded subset for the low-resource sweep.
///
/// Classification keeps `round(fraction·n_c)` examples of each class (at
/// least one per non-empty class); regression keeps `round(fraction·N)`
/// overall. Kept examples stay in their original order.
pub fn reduce_dataset(ds: &Dataset, fraction: f64, seed: u64) -> Result<Dataset> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::validation(format!(
            "reduction fraction {fraction} must be in (0, 1]"
        )));
    }
    if ds.split != Split::Train {
        return Err(Error::validation("only training data can be reduced"));
    }
    if fraction == 1.0 {
        return Ok(ds.clone());
    }
    let mut rng = rng::stream(seed, "reduce", fraction.to_bits());
    let keep_count = |n: usize| ((fraction * n as f64).round() as usize).clamp(1, n);

    let mut keep: Vec<usize> = match ds.task.label_kind {
        LabelKind::Classes { n } => {
            let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n];
            for (i, ex) in ds.examples.iter().enumerate() {
                if let Label::Class(c) = ex.label {
                    by_class[c].push(i);
                }
            }
            let mut keep = Vec::new();
            for mut members in by_class.into_iter().filter(|m| !m.is_empty()) {
                let k = keep_count(members.len());
                rng::shuffle(&mut members, &mut rng);
                keep.extend_from_slice(&members[..k]);
            }
            keep
        }
        LabelKind::Regression { .. } => {
            let mut all: Vec<usize> = (0..ds.len()).collect();
            let k = keep_count(all.len());
            rng::shuffle(&mut all, &mut rng);
            all.truncate(k);
            all
        }
    };
    keep.sort_unstable();
    Ok(Dataset {
        examples: keep.iter().map(|&i| ds.examples[i].clone()).collect(),
        ..ds.clone()
    })
}

/// Splits `ds` into batches, optionally shuffled by `shuffle_seed`. Class
/// labels are expanded to one-hot rows here.
pub fn batches(
    ds: &Dataset,
    batch_size: usize,
    shuffle_seed: Option<u64>,
    drop_last: bool,
) -> Result<Vec<EncodedBatch>> {
    if batch_size == 0 {
        return Err(Error::validation("batch_size must be at least 1"));
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    if let Some(seed) = shuffle_seed {
        rng::shuffle(&mut order, &mut rng::stream(seed, "batches", 0));
    }
    let mut out = Vec::with_capacity(order.len().div_ceil(batch_size));
    for chunk in order.chunks(batch_size) {
        if drop_last && chunk.len() < batch_size {
            break;
        }
        out.push(collate(ds, chunk)?);
    }
    Ok(out)
}

/// Builds one batch from the listed example indices.
pub fn collate(ds: &Dataset, indices: &[usize]) -> Result<EncodedBatch> {
    let b = indices.len();
    let len = ds.max_len;
    let mut token_ids = Vec::with_capacity(b * len);
    let mut mask = Vec::with_capacity(b * len);
    for &i in indices {
        let ex = &ds.examples[i];
        token_ids.extend_from_slice(&ex.token_ids);
        mask.extend_from_slice(&ex.mask);
    }
    let labels = match ds.task.label_kind {
        LabelKind::Classes { n } => {
            let mut targets = Tensor::zeros(&[b, n]);
            let mut ids = Vec::with_capacity(b);
            for (row, &i) in indices.iter().enumerate() {
                let Label::Class(c) = ds.examples[i].label else {
                    return Err(Error::validation("regression label in a classification task"));
                };
                targets.row_mut(row)[c] = 1.0;
                ids.push(c);
            }
            BatchLabels::Classes { ids, targets }
        }
        LabelKind::Regression { .. } => {
            let scores = indices
                .iter()
                .map(|&i| match ds.examples[i].label {
                    Label::Score(s) => Ok(s),
                    Label::Class(_) => Err(Error::validation("class label in a regression task")),
                })
                .collect::<Result<Vec<f64>>>()?;
            BatchLabels::Scores(Tensor::new(vec![b, 1], scores)?)
        }
    };
    Ok(EncodedBatch {
        batch_size: b,
        seq_len: len,
        token_ids,
        mask,
        labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_task() -> TaskSpec {
        TaskSpec {
            name: "toy".into(),
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

    fn pair_task() -> TaskSpec {
        TaskSpec {
            input_arity: InputArity::Pair,
            columns: Columns {
                sentence1: 0,
                sentence2: Some(1),
                label: 2,
            },
            ..single_task()
        }
    }

    #[test]
    fn tokenizer_rules() {
        assert_eq!(tokenize("Hello, World!  (ok)"), vec!["hello", "world", "ok"]);
        assert_eq!(tokenize("don't -- stop"), vec!["don't", "stop"]);
        assert!(tokenize("  ...  ").is_empty());
    }

    #[test]
    fn vocab_ordering_and_cutoffs() {
        let v = build_vocab(["a a b"], 1, 100).unwrap();
        assert_eq!(v.id("a"), 4);
        assert_eq!(v.id("b"), 5);
        assert_eq!(v.len(), 6);
        let v = build_vocab(["a a b"], 2, 100).unwrap();
        assert_eq!(v.id("a"), 4);
        assert_eq!(v.id("b"), UNK);
        let v = build_vocab(["y x"], 1, 100).unwrap();
        assert!(v.id("x") < v.id("y"));
        let v = build_vocab(["a a a b b c"], 1, 6).unwrap();
        assert_eq!(v.len(), 6);
        assert_eq!(v.id("c"), UNK);
        assert!(build_vocab(std::iter::empty::<&str>(), 1, 10).is_err());
    }

    #[test]
    fn reserved_ids_are_fixed_points() {
        let v = build_vocab(["pad unk cls sep"], 1, 100).unwrap();
        for (id, name) in RESERVED.iter().enumerate() {
            assert_eq!(v.token(id), Some(*name));
            assert_eq!(v.id(name), id);
        }
    }

    #[test]
    fn single_layout() {
        let v = build_vocab(["hello world"], 1, 100).unwrap();
        let ex = encode_example(&v, &single_task(), "hello world", None, Label::Class(1), 6).unwrap();
        assert_eq!(ex.token_ids, vec![CLS, v.id("hello"), v.id("world"), SEP, PAD, PAD]);
        assert_eq!(ex.mask, vec![1, 1, 1, 1, 0, 0]);
    }

    #[test]
    fn pair_truncation_keeps_both_separators() {
        let v = build_vocab(["a b c d e f g h"], 1, 100).unwrap();
        let ex = encode_example(
            &v,
            &pair_task(),
            "a b c d e f",
            Some("g h"),
            Label::Class(0),
            8,
        )
        .unwrap();
        assert_eq!(ex.token_ids.len(), 8);
        assert_eq!(ex.token_ids.iter().filter(|&&t| t == SEP).count(), 2);
        assert_eq!(ex.token_ids[0], CLS);
        assert_eq!(*ex.token_ids.last().unwrap(), SEP);
        // budget 5: the longer first segment shrinks 6 → 3 while "g h" stays
        assert_eq!(ex.token_ids[1..4], [v.id("a"), v.id("b"), v.id("c")]);
        assert_eq!(ex.token_ids[5..7], [v.id("g"), v.id("h")]);
    }

    #[test]
    fn pair_truncation_alternates_when_level() {
        let v = build_vocab(["a b c d e f"], 1, 100).unwrap();
        let ex =
            encode_example(&v, &pair_task(), "a b c", Some("d e f"), Label::Class(0), 7).unwrap();
        // budget 4 from 3+3: first loses "c", then second loses "f"
        assert_eq!(
            ex.token_ids,
            vec![CLS, v.id("a"), v.id("b"), SEP, v.id("d"), v.id("e"), SEP]
        );
    }

    #[test]
    fn all_oov_sentence_is_unk() {
        let v = build_vocab(["known"], 1, 100).unwrap();
        let ex = encode_example(&v, &single_task(), "foo bar", None, Label::Class(0), 5).unwrap();
        assert_eq!(ex.token_ids[1..3], [UNK, UNK]);
    }

    #[test]
    fn label_out_of_range() {
        let v = build_vocab(["x"], 1, 100).unwrap();
        assert!(encode_example(&v, &single_task(), "x", None, Label::Class(2), 5).is_err());
        assert!(encode_example(&v, &single_task(), "x", Some("y"), Label::Class(0), 5).is_err());
    }

    #[test]
    fn task_invariants() {
        let mut t = single_task();
        t.metric = Metric::Matthews;
        assert!(t.validate().is_ok());
        t.label_kind = LabelKind::Classes { n: 3 };
        assert!(t.validate().is_err());
        t.metric = Metric::Spearman;
        assert!(t.validate().is_err());
        t.label_kind = LabelKind::Regression { min: 0.0, max: 5.0 };
        assert!(t.validate().is_ok());
        t.metric = Metric::Accuracy;
        assert!(t.validate().is_err());
    }

    fn toy_dataset(labels: &[usize]) -> Dataset {
        let v = build_vocab(["x"], 1, 100).unwrap();
        let task = single_task();
        let examples = labels
            .iter()
            .map(|&c| encode_example(&v, &task, "x", None, Label::Class(c), 4).unwrap())
            .collect();
        Dataset {
            task,
            split: Split::Train,
            max_len: 4,
            examples,
        }
    }

    #[test]
    fn batch_sizes_and_one_hot() {
        let ds = toy_dataset(&[0, 1, 0, 1, 0, 1, 0, 1, 0, 1]);
        let bs = batches(&ds, 8, None, false).unwrap();
        assert_eq!(bs.iter().map(|b| b.batch_size).collect::<Vec<_>>(), [8, 2]);
        assert_eq!(batches(&ds, 8, None, true).unwrap().len(), 1);
        match &bs[0].labels {
            BatchLabels::Classes { ids, targets } => {
                assert_eq!(ids[..3], [0, 1, 0]);
                assert_eq!(targets.row(1), &[0.0, 1.0]);
            }
            _ => panic!("expected classes"),
        }
        let a = batches(&ds, 3, Some(5), false).unwrap();
        let b = batches(&ds, 3, Some(5), false).unwrap();
        assert_eq!(a, b);
        assert!(batches(&ds, 0, None, false).is_err());
    }

    #[test]
    fn reduction_is_stratified() {
        let labels: Vec<usize> = (0..100).map(|i| i % 2).collect();
        let ds = toy_dataset(&labels);
        let r = reduce_dataset(&ds, 0.1, 3).unwrap();
        assert_eq!(r.len(), 10);
        let ones = r.examples.iter().filter(|e| e.label == Label::Class(1)).count();
        assert_eq!(ones, 5);
        assert_eq!(reduce_dataset(&ds, 1.0, 99).unwrap(), ds);
        assert!(reduce_dataset(&ds, 0.0, 1).is_err());
        assert!(reduce_dataset(&ds, 1.5, 1).is_err());
        let mut dev = ds.clone();
        dev.split = Split::Dev;
        assert!(reduce_dataset(&dev, 0.5, 1).is_err());
    }

    #[test]
    fn tiny_class_keeps_one() {
        let mut labels = vec![0; 30];
        labels.push(1);
        let r = reduce_dataset(&toy_dataset(&labels), 0.1, 1).unwrap();
        assert_eq!(r.len(), 4);
        assert!(r.examples.iter().any(|e| e.label == Label::Class(1)));
    }
}
