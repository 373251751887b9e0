//! Evaluation suite for novel intent discovery.
//!
//! ACC, NMI and ARI compare clusters with ground truth on examples whose
//! true intent is novel. Binary F1 (known vs. novel) and macro F1 (averaged
//! over novel intents) label every cluster by majority vote and score the
//! whole evaluated set. AVG is the mean of the five.

mod contingency;
mod hungarian;
mod silhouette;
mod ttest;

pub use contingency::Contingency;
pub use hungarian::max_weight_assignment;
pub use silhouette::silhouette_per_intent;
pub use ttest::{paired_t_test, TTestResult, SIGNIFICANCE_LEVEL};

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_scope<T, C>(truth: &[T], clusters: &[C]) -> Result<()> {
    if truth.len() != clusters.len() {
        return Err(Error::Dimension {
            expected: truth.len(),
            actual: clusters.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::Validation("metric scope is empty".into()));
    }
    Ok(())
}

/// Hungarian-matched clustering accuracy.
pub fn clustering_accuracy<T: Ord, C: Ord>(truth: &[T], clusters: &[C]) -> Result<f64> {
    check_scope(truth, clusters)?;
    let table = Contingency::new(truth, clusters);
    let size = table.n_classes().max(table.n_clusters());
    let mut profit = vec![vec![0.0; size]; size];
    for (i, row) in table.counts.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            profit[i][j] = c as f64;
        }
    }
    let matched: f64 = max_weight_assignment(&profit)
        .iter()
        .enumerate()
        .map(|(i, &j)| profit[i][j])
        .sum();
    Ok(matched / table.total as f64)
}

fn entropy(counts: &[usize], total: f64) -> f64 {
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.ln()
        })
        .sum()
}

/// Mutual information normalized by the arithmetic mean of the two
/// entropies.
pub fn nmi<T: Ord, C: Ord>(truth: &[T], clusters: &[C]) -> Result<f64> {
    check_scope(truth, clusters)?;
    let table = Contingency::new(truth, clusters);
    let n = table.total as f64;
    let rows = table.row_sums();
    let cols = table.col_sums();
    let (h_truth, h_clusters) = (entropy(&rows, n), entropy(&cols, n));
    if h_truth == 0.0 && h_clusters == 0.0 {
        return Ok(1.0);
    }
    if h_truth == 0.0 || h_clusters == 0.0 {
        return Ok(0.0);
    }
    let mut mi = 0.0;
    for (i, row) in table.counts.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if c > 0 {
                let c = c as f64;
                mi += c / n * (n * c / (rows[i] as f64 * cols[j] as f64)).ln();
            }
        }
    }
    Ok((mi / ((h_truth + h_clusters) / 2.0)).clamp(0.0, 1.0))
}

fn comb2(n: usize) -> f64 {
    let n = n as f64;
    n * (n - 1.0) / 2.0
}

/// Adjusted Rand index from pair counts on the contingency table.
pub fn ari<T: Ord, C: Ord>(truth: &[T], clusters: &[C]) -> Result<f64> {
    check_scope(truth, clusters)?;
    let table = Contingency::new(truth, clusters);
    let joint: f64 = table.counts.iter().flatten().map(|&c| comb2(c)).sum();
    let a: f64 = table.row_sums().into_iter().map(comb2).sum();
    let b: f64 = table.col_sums().into_iter().map(comb2).sum();
    let total = comb2(table.total);
    if total == 0.0 {
        return Ok(1.0);
    }
    let expected = a * b / total;
    let max_index = (a + b) / 2.0;
    let denom = max_index - expected;
    if denom == 0.0 {
        return Ok(1.0);
    }
    Ok((joint - expected) / denom)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum F1Mode {
    /// Labels collapsed to known/novel; macro F1 over those classes.
    Binary,
    /// Full intent labels; F1 averaged over novel intents only.
    Macro,
}

/// Majority label per cluster; ties go to the lexicographically smallest
/// label.
pub fn majority_labels<'a>(truth: &[&'a str], clusters: &[usize]) -> BTreeMap<usize, &'a str> {
    let mut votes: BTreeMap<usize, BTreeMap<&str, usize>> = BTreeMap::new();
    for (&t, &c) in truth.iter().zip(clusters) {
        *votes.entry(c).or_default().entry(t).or_default() += 1;
    }
    votes
        .into_iter()
        .map(|(c, counts)| {
            let best = counts.values().copied().max().unwrap();
            let winners: Vec<&str> = counts.iter().filter(|(_, &n)| n == best).map(|(&l, _)| l).collect();
            if winners.len() > 1 {
                log::debug!("cluster {c}: majority tie between {winners:?}, picking {:?}", winners[0]);
            }
            (c, winners[0])
        })
        .collect()
}

fn f1_for(label: &str, truth: &[&str], pred: &[&str]) -> f64 {
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fne = 0usize;
    for (&t, &p) in truth.iter().zip(pred) {
        match (t == label, p == label) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (true, false) => fne += 1,
            (false, false) => {}
        }
    }
    let denom = 2 * tp + fp + fne;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

const KNOWN: &str = "known";
const NOVEL: &str = "novel";

/// F1 after labeling each cluster with the majority ground truth of its
/// members. Intents absent from `known_intents` count as novel.
pub fn majority_vote_f1<S: AsRef<str>>(truth: &[S], clusters: &[usize], mode: F1Mode, known_intents: &BTreeSet<String>) -> Result<f64> {
    check_scope(truth, clusters)?;
    let full: Vec<&str> = truth.iter().map(AsRef::as_ref).collect();
    let truth: Vec<&str> = match mode {
        F1Mode::Binary => full
            .iter()
            .map(|t| if known_intents.contains(*t) { KNOWN } else { NOVEL })
            .collect(),
        F1Mode::Macro => full,
    };
    let majority = majority_labels(&truth, clusters);
    let pred: Vec<&str> = clusters.iter().map(|c| majority[c]).collect();
    let labels: BTreeSet<&str> = match mode {
        F1Mode::Binary => truth.iter().chain(&pred).copied().collect(),
        F1Mode::Macro => truth.iter().copied().filter(|t| !known_intents.contains(*t)).collect(),
    };
    if labels.is_empty() {
        return Err(Error::Validation("no novel intents in the evaluated set".into()));
    }
    Ok(labels.iter().map(|l| f1_for(l, &truth, &pred)).sum::<f64>() / labels.len() as f64)
}

/// Arithmetic mean of exactly five metric values.
pub fn avg_metric(components: &[f64]) -> Result<f64> {
    if components.len() != 5 {
        return Err(Error::Validation(format!("AVG needs five metrics, got {}", components.len())));
    }
    if let Some(v) = components.iter().find(|v| !v.is_finite()) {
        return Err(Error::Validation(format!("non-finite metric value {v}")));
    }
    Ok(components.iter().sum::<f64>() / 5.0)
}

/// The five metrics and their mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub acc: f64,
    pub nmi: f64,
    pub ari: f64,
    pub binary_f1: f64,
    pub macro_f1: f64,
    pub avg: f64,
}

impl Metrics {
    pub const NAMES: [&'static str; 6] = ["acc", "nmi", "ari", "binary_f1", "macro_f1", "avg"];

    pub fn from_components(acc: f64, nmi: f64, ari: f64, binary_f1: f64, macro_f1: f64) -> Result<Self> {
        let avg = avg_metric(&[acc, nmi, ari, binary_f1, macro_f1])?;
        Ok(Self {
            acc,
            nmi,
            ari,
            binary_f1,
            macro_f1,
            avg,
        })
    }

    pub fn values(&self) -> [f64; 6] {
        [self.acc, self.nmi, self.ari, self.binary_f1, self.macro_f1, self.avg]
    }
}

/// Scores a clustering of an evaluation set. `truth` holds the ground-truth
/// intent of every clustered example.
pub fn evaluate<S: AsRef<str>>(truth: &[S], clusters: &[usize], known_intents: &BTreeSet<String>) -> Result<Metrics> {
    check_scope(truth, clusters)?;
    let (novel_truth, novel_clusters): (Vec<&str>, Vec<usize>) = truth
        .iter()
        .map(AsRef::as_ref)
        .zip(clusters.iter().copied())
        .filter(|(t, _)| !known_intents.contains(*t))
        .unzip();
    Metrics::from_components(
        clustering_accuracy(&novel_truth, &novel_clusters)?,
        nmi(&novel_truth, &novel_clusters)?,
        ari(&novel_truth, &novel_clusters)?,
        majority_vote_f1(truth, clusters, F1Mode::Binary, known_intents)?,
        majority_vote_f1(truth, clusters, F1Mode::Macro, known_intents)?,
    )
}

/// Per-run metrics with provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub dataset: String,
    pub scheme: String,
    pub seed: u64,
    #[serde(flatten)]
    pub metrics: Metrics,
}
