//! Dataset ingestion, text featurization, embedding-matrix I/O and corpus
//! statistics.

mod embeddings;
mod featurize;
mod stats;

pub use embeddings::{decode_emb1, encode_emb1, load_embeddings, save_embeddings, EMB1_MAGIC};
pub use featurize::{bucket, featurize, tokenize, HashedTfIdf, DEFAULT_FEATURE_DIM};
pub use stats::{dataset_stats, normalized_entropy, DatasetStats};

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{BufRead, BufReader};
use std::path::Path;

use ndarray::{concatenate, Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Stream};

/// Dense row-major matrix, one row per example.
pub type FeatureMatrix = Array2<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Text field of a conversational record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Field {
    Q,
    A,
    QA,
}

impl Field {
    pub const ALL: [Field; 3] = [Field::Q, Field::A, Field::QA];

    pub fn index(self) -> usize {
        match self {
            Field::Q => 0,
            Field::A => 1,
            Field::QA => 2,
        }
    }
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Field::Q => "Q",
            Field::A => "A",
            Field::QA => "QA",
        })
    }
}

impl std::str::FromStr for Field {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "Q" => Ok(Field::Q),
            "A" => Ok(Field::A),
            "QA" => Ok(Field::QA),
            other => Err(Error::Config(format!("unknown field {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intent: Option<String>,
    pub split: Split,
}

impl Example {
    /// Text of a field; QA joins question and answer with a single space.
    pub fn text(&self, field: Field) -> Option<std::borrow::Cow<'_, str>> {
        match field {
            Field::Q => Some(self.question.as_str().into()),
            Field::A => self.answer.as_deref().map(Into::into),
            Field::QA => self
                .answer
                .as_deref()
                .map(|a| format!("{} {}", self.question, a).into()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    examples: Vec<Example>,
    by_id: HashMap<String, usize>,
}

impl Dataset {
    /// Validates id uniqueness and non-empty questions.
    pub fn new(examples: Vec<Example>) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::Validation("dataset is empty".into()));
        }
        let mut by_id = HashMap::with_capacity(examples.len());
        for (i, ex) in examples.iter().enumerate() {
            if ex.question.trim().is_empty() {
                return Err(Error::Validation(format!("example {:?} has an empty question", ex.id)));
            }
            if by_id.insert(ex.id.clone(), i).is_some() {
                return Err(Error::Validation(format!("duplicate id {:?}", ex.id)));
            }
        }
        Ok(Self { examples, by_id })
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    /// True when every example carries an answer.
    pub fn is_conversational(&self) -> bool {
        self.examples.iter().all(|e| e.answer.is_some())
    }

    /// Row indices of a split, in dataset order.
    pub fn split_rows(&self, split: Split) -> Vec<usize> {
        self.examples
            .iter()
            .enumerate()
            .filter(|(_, e)| e.split == split)
            .map(|(i, _)| i)
            .collect()
    }

    /// Distinct intents of the given rows, sorted.
    pub fn intents_of(&self, rows: &[usize]) -> Vec<String> {
        let mut set: Vec<String> = rows
            .iter()
            .filter_map(|&r| self.examples[r].intent.clone())
            .collect();
        set.sort();
        set.dedup();
        set
    }
}

#[derive(Deserialize)]
struct RawExample {
    id: String,
    question: String,
    #[serde(default)]
    answer: Option<String>,
    #[serde(default)]
    intent: Option<String>,
    #[serde(default)]
    split: Option<Split>,
}

/// Reads a JSONL dataset. Examples without a `split` are assigned a
/// stratified (per-intent) 80/10/10 train/val/test split drawn with `seed`.
pub fn load_dataset(path: impl AsRef<Path>, seed: u64) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut raw = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RawExample = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_owned(),
            line: line_no,
            message: e.to_string(),
        })?;
        if let Some(first) = seen.insert(rec.id.clone(), line_no) {
            return Err(Error::Validation(format!(
                "{}:{line_no}: duplicate id {:?} (first seen on line {first})",
                path.display(),
                rec.id
            )));
        }
        if rec.question.trim().is_empty() {
            return Err(Error::Validation(format!(
                "{}:{line_no}: empty question",
                path.display()
            )));
        }
        raw.push(rec);
    }
    if raw.is_empty() {
        return Err(Error::Validation(format!("{}: no examples", path.display())));
    }

    let missing: Vec<usize> = (0..raw.len()).filter(|&i| raw[i].split.is_none()).collect();
    let groups: Vec<Option<&str>> = missing.iter().map(|&i| raw[i].intent.as_deref()).collect();
    let assigned = stratified_split(&groups, seed);
    let mut splits: Vec<Option<Split>> = raw.iter().map(|r| r.split).collect();
    for (&i, s) in missing.iter().zip(assigned) {
        splits[i] = Some(s);
    }

    let examples = raw
        .into_iter()
        .zip(splits)
        .map(|(r, s)| Example {
            id: r.id,
            question: r.question,
            answer: r.answer,
            intent: r.intent,
            split: s.expect("every split assigned"),
        })
        .collect();
    Dataset::new(examples)
}

/// Stratified 80/10/10 assignment. Each group of size n (grouped by label,
/// unlabeled items forming one group) sends ⌊n/10⌋ items to test, ⌊n/10⌋ to
/// val and the rest to train.
pub fn stratified_split(groups: &[Option<&str>], seed: u64) -> Vec<Split> {
    let mut by_group: BTreeMap<Option<&str>, Vec<usize>> = BTreeMap::new();
    for (i, g) in groups.iter().enumerate() {
        by_group.entry(*g).or_default().push(i);
    }
    let mut rng = rng::stream(seed, Stream::Split);
    let mut out = vec![Split::Train; groups.len()];
    for members in by_group.values_mut() {
        members.shuffle(&mut rng);
        let tenth = members.len() / 10;
        for &i in &members[..tenth] {
            out[i] = Split::Test;
        }
        for &i in &members[tenth..2 * tenth] {
            out[i] = Split::Val;
        }
    }
    out
}

/// Per-field feature matrices aligned with the dataset rows.
#[derive(Debug, Clone, Default)]
pub struct FieldMatrices {
    fields: [Option<FeatureMatrix>; 3],
}

impl FieldMatrices {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, field: Field, m: FeatureMatrix) -> Self {
        self.insert(field, m);
        self
    }

    pub fn insert(&mut self, field: Field, m: FeatureMatrix) {
        self.fields[field.index()] = Some(m);
    }

    pub fn get(&self, field: Field) -> Option<&FeatureMatrix> {
        self.fields[field.index()].as_ref()
    }

    pub fn get_mut(&mut self, field: Field) -> Option<&mut FeatureMatrix> {
        self.fields[field.index()].as_mut()
    }

    pub fn require(&self, field: Field) -> Result<&FeatureMatrix> {
        self.get(field)
            .ok_or_else(|| Error::Validation(format!("feature matrix for field {field} is missing")))
    }

    /// Horizontal concatenation of the requested fields.
    pub fn concat(&self, fields: &[Field]) -> Result<FeatureMatrix> {
        let views = fields
            .iter()
            .map(|&f| self.require(f).map(|m| m.view()))
            .collect::<Result<Vec<_>>>()?;
        concatenate(Axis(1), &views).map_err(|e| Error::Validation(format!("cannot concatenate fields: {e}")))
    }

    /// Number of rows shared by every present matrix.
    pub fn rows(&self) -> Option<usize> {
        self.fields.iter().flatten().map(|m| m.nrows()).next()
    }
}
