//! Synthetic conversational corpus with precomputed field embeddings.
//!
//! Every intent has a center on a circle in the question signal plane
//! (dims 0..2) and, under a different arrangement, in the answer signal
//! plane (dims 2..4). The remaining dims carry isotropic nuisance noise.
//! QA rows are the normalized sum of the question and answer rows, so they
//! carry both signals, as a text encoder would for the concatenated string.

use std::f64::consts::TAU;

use ndarray::Array2;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{stratified_split, Dataset, Example, FieldMatrices, Field};
use crate::error::{Error, Result};
use crate::rng::{self, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n_intents: usize,
    pub per_intent: usize,
    pub dim: usize,
    /// Std of the noise added to each signal coordinate.
    pub signal_noise: f64,
    /// Std of every nuisance coordinate.
    pub nuisance_noise: f64,
    /// Answer center of intent `i` sits at angle index `(i · stride) mod n`.
    pub answer_stride: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_intents: 8,
            per_intent: 200,
            dim: 16,
            signal_noise: 0.2,
            nuisance_noise: 0.5,
            answer_stride: 3,
            seed: 0,
        }
    }
}

pub fn intent_name(i: usize) -> String {
    format!("intent_{i:02}")
}

/// Builds the corpus and its Q, A and QA embedding matrices. Splits are
/// assigned by the stratified rule with the config seed.
pub fn conversational_blobs(config: &SyntheticConfig) -> Result<(Dataset, FieldMatrices)> {
    let k = config.n_intents;
    if k < 2 || config.per_intent == 0 || config.dim < 5 {
        return Err(Error::Config("synthetic corpus needs >= 2 intents, >= 1 example each and dim >= 5".into()));
    }
    let signal = Normal::new(0.0, config.signal_noise).map_err(|e| Error::Config(e.to_string()))?;
    let nuisance = Normal::new(0.0, config.nuisance_noise).map_err(|e| Error::Config(e.to_string()))?;
    let mut rng = rng::stream(config.seed, Stream::Synthetic);
    let n = k * config.per_intent;
    let mut q = Array2::zeros((n, config.dim));
    let mut a = Array2::zeros((n, config.dim));
    let mut labels = Vec::with_capacity(n);
    for row in 0..n {
        let intent = row % k;
        labels.push(intent_name(intent));
        let q_angle = TAU * intent as f64 / k as f64;
        let a_angle = TAU * ((intent * config.answer_stride) % k) as f64 / k as f64;
        q[[row, 0]] = q_angle.cos() + signal.sample(&mut rng);
        q[[row, 1]] = q_angle.sin() + signal.sample(&mut rng);
        a[[row, 2]] = a_angle.cos() + signal.sample(&mut rng);
        a[[row, 3]] = a_angle.sin() + signal.sample(&mut rng);
        for d in 4..config.dim {
            q[[row, d]] = nuisance.sample(&mut rng);
            a[[row, d]] = nuisance.sample(&mut rng);
        }
    }
    let qa = (&q + &a) / std::f64::consts::SQRT_2;

    let groups: Vec<Option<&str>> = labels.iter().map(|l| Some(l.as_str())).collect();
    let splits = stratified_split(&groups, config.seed);
    let examples = labels
        .iter()
        .zip(splits)
        .enumerate()
        .map(|(i, (intent, split))| Example {
            id: format!("s{i:05}"),
            question: format!("question {i} about {intent}"),
            answer: Some(format!("answer {i}")),
            intent: Some(intent.clone()),
            split,
        })
        .collect();
    let features = FieldMatrices::new()
        .with(Field::Q, q)
        .with(Field::A, a)
        .with(Field::QA, qa);
    Ok((Dataset::new(examples)?, features))
}
