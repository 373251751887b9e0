use std::collections::BTreeMap;

use serde::Serialize;

use super::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct DatasetStats {
    pub n_intents: usize,
    pub n_examples: usize,
    pub per_intent: BTreeMap<String, usize>,
    pub mean_per_intent: f64,
    pub std_per_intent: f64,
    pub min_per_intent: usize,
    pub max_per_intent: usize,
    pub normalized_entropy: f64,
    pub mean_question_chars: f64,
    pub mean_answer_chars: Option<f64>,
}

/// Shannon entropy of the count distribution divided by `ln K`.
///
/// Equal counts (including K = 1) give exactly 1.0.
pub fn normalized_entropy(counts: &[usize]) -> f64 {
    let counts: Vec<usize> = counts.iter().copied().filter(|&c| c > 0).collect();
    if counts.is_empty() {
        return 0.0;
    }
    if counts.iter().all(|&c| c == counts[0]) {
        return 1.0;
    }
    let total: usize = counts.iter().sum();
    let total = total as f64;
    let h: f64 = counts
        .iter()
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.ln()
        })
        .sum();
    (h / (counts.len() as f64).ln()).clamp(0.0, 1.0)
}

pub fn dataset_stats(dataset: &Dataset) -> Result<DatasetStats> {
    let mut per_intent: BTreeMap<String, usize> = BTreeMap::new();
    for e in dataset.examples() {
        let intent = e
            .intent
            .as_ref()
            .ok_or_else(|| Error::Validation(format!("example {:?} has no intent label", e.id)))?;
        *per_intent.entry(intent.clone()).or_default() += 1;
    }
    let counts: Vec<usize> = per_intent.values().copied().collect();
    let k = counts.len() as f64;
    let mean = dataset.len() as f64 / k;
    let std = if counts.len() > 1 {
        (counts.iter().map(|&c| (c as f64 - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
    } else {
        0.0
    };
    let n = dataset.len() as f64;
    let mean_question_chars = dataset
        .examples()
        .iter()
        .map(|e| e.question.chars().count() as f64)
        .sum::<f64>()
        / n;
    let mean_answer_chars = dataset.is_conversational().then(|| {
        dataset
            .examples()
            .iter()
            .map(|e| e.answer.as_deref().unwrap_or("").chars().count() as f64)
            .sum::<f64>()
            / n
    });
    Ok(DatasetStats {
        n_intents: counts.len(),
        n_examples: dataset.len(),
        mean_per_intent: mean,
        std_per_intent: std,
        min_per_intent: counts.iter().copied().min().unwrap_or(0),
        max_per_intent: counts.iter().copied().max().unwrap_or(0),
        normalized_entropy: normalized_entropy(&counts),
        per_intent,
        mean_question_chars,
        mean_answer_chars,
    })
}
