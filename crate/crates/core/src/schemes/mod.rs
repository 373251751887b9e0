//! Training schemes: static embeddings, DAC, CDAC and supervised LMCL.

mod contrastive;
mod lmcl;
mod pairs;
mod schedule;

pub use contrastive::{train_cdac, train_dac, ContrastiveTrainer};
pub use lmcl::{lmcl_loss, train_supervised, LmclOutput};
pub use pairs::{
    cosine_matrix, exact_label, pair_loss, pair_loss_grad, pseudo_label, PairCounts, PairEntry, PairLabelMatrix,
    PairLossOutput, PairObjective, Provenance,
};
pub use schedule::{ThresholdSchedule, LAMBDA_STEP};

use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, FieldMatrices, Split};
use crate::error::{Error, Result};
use crate::model::{RepModel, RepSource};
use crate::protocol::MaskedView;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Static,
    Dac,
    Cdac,
    Supervised,
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scheme::Static => "static",
            Scheme::Dac => "dac",
            Scheme::Cdac => "cdac",
            Scheme::Supervised => "supervised",
        })
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "static" => Ok(Scheme::Static),
            "dac" => Ok(Scheme::Dac),
            "cdac" => Ok(Scheme::Cdac),
            "supervised" | "lmcl" => Ok(Scheme::Supervised),
            other => Err(Error::Config(format!("unknown scheme {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Overrides the learning rate of the shared backbone layer.
    pub backbone_learning_rate: Option<f64>,
    pub max_epochs: usize,
    /// Scale of the supervised-epoch loss in CDAC.
    pub delta: f64,
    pub lmcl_scale: f64,
    pub lmcl_margin: f64,
    /// Similarity clamp applied before the logarithms of the pair loss.
    pub clamp_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            learning_rate: 1e-4,
            backbone_learning_rate: None,
            max_epochs: 100,
            delta: 1.0,
            lmcl_scale: 30.0,
            lmcl_margin: 0.35,
            clamp_eps: 1e-7,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config(format!("batch_size must be >= 2, got {}", self.batch_size)));
        }
        let lrs = std::iter::once(self.learning_rate).chain(self.backbone_learning_rate);
        for lr in lrs {
            if !(lr.is_finite() && lr >= 0.0) {
                return Err(Error::Config(format!("invalid learning rate {lr}")));
            }
        }
        if !(self.delta >= 1.0) {
            return Err(Error::Config(format!("delta must be >= 1, got {}", self.delta)));
        }
        if !(self.clamp_eps > 0.0 && self.clamp_eps < 0.5) {
            return Err(Error::Config(format!("clamp_eps must lie in (0, 0.5), got {}", self.clamp_eps)));
        }
        if !(self.lmcl_scale > 0.0) || !(self.lmcl_margin >= 0.0) {
            return Err(Error::Config("lmcl_scale must be > 0 and lmcl_margin >= 0".into()));
        }
        Ok(())
    }

    pub(crate) fn backbone_lr(&self) -> f64 {
        self.backbone_learning_rate.unwrap_or(self.learning_rate)
    }
}

/// Train rows with their (possibly hidden) known-intent labels.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    /// Row indices into the feature matrices.
    pub rows: Vec<usize>,
    /// Class index per row; `None` for unlabeled rows.
    pub labels: Vec<Option<u32>>,
    /// Class names, index-aligned with label values.
    pub classes: Vec<String>,
}

impl TrainingSet {
    pub fn unlabeled(rows: Vec<usize>) -> Self {
        let labels = vec![None; rows.len()];
        Self {
            rows,
            labels,
            classes: Vec::new(),
        }
    }

    /// Train split rows; labels visible only for the view's labeled ids.
    pub fn from_masked(dataset: &Dataset, view: &MaskedView) -> Result<Self> {
        let classes = view.known_intents.clone();
        let mut labels: Vec<Option<u32>> = vec![None; dataset.len()];
        for id in &view.labeled_ids {
            let row = dataset
                .position(id)
                .ok_or_else(|| Error::Validation(format!("masked view names unknown id {id:?}")))?;
            let ex = &dataset.examples()[row];
            if ex.split != Split::Train {
                return Err(Error::Validation(format!("labeled id {id:?} is not in the train split")));
            }
            let intent = ex
                .intent
                .as_deref()
                .ok_or_else(|| Error::Validation(format!("labeled id {id:?} has no intent")))?;
            let class = classes
                .binary_search_by(|c| c.as_str().cmp(intent))
                .map_err(|_| Error::Validation(format!("labeled id {id:?} has non-known intent {intent:?}")))?;
            labels[row] = Some(class as u32);
        }
        let rows = dataset.split_rows(Split::Train);
        let labels = rows.iter().map(|&r| labels[r]).collect();
        Ok(Self { rows, labels, classes })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Positions (into `rows`) of labeled entries.
    pub fn labeled_positions(&self) -> Vec<usize> {
        (0..self.rows.len()).filter(|&i| self.labels[i].is_some()).collect()
    }

    pub fn without_labels(&self) -> Self {
        Self::unlabeled(self.rows.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    /// Labeled examples only, exact targets.
    Supervised,
    /// Whole train set, exact and pseudo targets.
    Semi,
}

/// One training-log record (JSONL line).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub phase: Phase,
    pub lambda_t: f64,
    pub u: f64,
    pub l: f64,
    pub mean_loss: f64,
    pub positive_pairs: usize,
    pub negative_pairs: usize,
    pub none_pairs: usize,
    pub batches: usize,
    pub skipped_batches: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: RepModel,
    pub log: Vec<EpochLog>,
}

pub fn write_log_jsonl(path: impl AsRef<Path>, log: &[EpochLog]) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    for rec in log {
        serde_json::to_writer(&mut buf, rec)?;
        buf.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

/// Representations without training: the raw field matrices.
pub fn static_representations(features: &FieldMatrices, source: &RepSource) -> Result<Array2<f64>> {
    features.concat(&source.fields())
}

/// Applies the optimizer to every tensor of heads with λ > 0 and to the
/// backbone.
pub(crate) fn apply_update(model: &mut RepModel, grads: &crate::model::Params, adam: &mut crate::optim::Adam, config: &TrainConfig) {
    let owners = model.params.tensor_owners();
    let lambda = model.config.lambda;
    adam.tick();
    for (slot, ((_, param), ((_, grad), owner))) in model
        .params
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors().into_iter().zip(owners))
        .enumerate()
    {
        let lr = match owner {
            None => config.backbone_lr(),
            Some(f) if lambda.get(f) > 0.0 => config.learning_rate,
            Some(_) => continue,
        };
        adam.update(slot, param, grad, lr);
    }
}

pub(crate) fn new_adam(model: &RepModel) -> crate::optim::Adam {
    crate::optim::Adam::new(model.params.tensors().iter().map(|(_, t)| t.len()))
}
