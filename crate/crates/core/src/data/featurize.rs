//! Deterministic hashed TF-IDF featurizer.
//!
//! Tokens are maximal runs of Unicode alphanumeric characters after
//! lowercasing. Each token lands in bucket `FNV-1a-64(utf8 bytes) mod dim`.
//! Document frequencies come from the fitting corpus (the train split), and
//! idf is the smoothed `ln((1 + N) / (1 + df)) + 1`.

use std::hash::Hasher;

use fnv::FnvHasher;
use ndarray::Array2;

use super::{Dataset, FeatureMatrix, Field, Split};
use crate::error::{Error, Result};

pub const DEFAULT_FEATURE_DIM: usize = 2048;

pub fn tokenize(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    lower
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

pub fn bucket(token: &str, dim: usize) -> usize {
    let mut h = FnvHasher::default();
    h.write(token.as_bytes());
    (h.finish() % dim as u64) as usize
}

#[derive(Debug, Clone, PartialEq)]
pub struct HashedTfIdf {
    dim: usize,
    idf: Vec<f64>,
}

impl HashedTfIdf {
    pub fn fit<'a>(dim: usize, docs: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        if dim < 2 {
            return Err(Error::Config(format!("feature dim must be >= 2, got {dim}")));
        }
        let mut df = vec![0usize; dim];
        let mut n_docs = 0usize;
        let mut seen = vec![false; dim];
        let mut touched = Vec::new();
        for doc in docs {
            n_docs += 1;
            for tok in tokenize(doc) {
                let b = bucket(&tok, dim);
                if !seen[b] {
                    seen[b] = true;
                    touched.push(b);
                }
            }
            for b in touched.drain(..) {
                df[b] += 1;
                seen[b] = false;
            }
        }
        let n = n_docs as f64;
        let idf = df
            .iter()
            .map(|&d| ((1.0 + n) / (1.0 + d as f64)).ln() + 1.0)
            .collect();
        Ok(Self { dim, idf })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn idf(&self) -> &[f64] {
        &self.idf
    }

    /// Sparse `(bucket, weight)` pairs sorted by bucket, L2-normalized.
    pub fn transform_sparse(&self, text: &str) -> Vec<(usize, f64)> {
        let mut buckets: Vec<usize> = tokenize(text).iter().map(|t| bucket(t, self.dim)).collect();
        buckets.sort_unstable();
        let mut out: Vec<(usize, f64)> = Vec::new();
        for b in buckets {
            match out.last_mut() {
                Some((last, tf)) if *last == b => *tf += 1.0,
                _ => out.push((b, 1.0)),
            }
        }
        for (b, w) in &mut out {
            *w *= self.idf[*b];
        }
        let norm = out.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
        if norm > 0.0 {
            for (_, w) in &mut out {
                *w /= norm;
            }
        }
        out
    }

    pub fn transform(&self, text: &str) -> Vec<f64> {
        let mut row = vec![0.0; self.dim];
        for (b, w) in self.transform_sparse(text) {
            row[b] = w;
        }
        row
    }

    pub fn transform_all<S: AsRef<str>>(&self, texts: &[S]) -> FeatureMatrix {
        let mut m = Array2::zeros((texts.len(), self.dim));
        for (i, t) in texts.iter().enumerate() {
            for (b, w) in self.transform_sparse(t.as_ref()) {
                m[[i, b]] = w;
            }
        }
        m
    }
}

/// Featurizes one field of every example, with document frequencies taken
/// from the train split.
pub fn featurize(dataset: &Dataset, field: Field, dim: usize) -> Result<FeatureMatrix> {
    let missing: Vec<&str> = dataset
        .examples()
        .iter()
        .filter(|e| e.text(field).is_none())
        .map(|e| e.id.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Validation(format!(
            "field {field} requires answers; missing for ids: {}",
            missing.join(", ")
        )));
    }
    let texts: Vec<String> = dataset
        .examples()
        .iter()
        .map(|e| e.text(field).expect("checked above").into_owned())
        .collect();
    let train: Vec<&str> = dataset
        .examples()
        .iter()
        .zip(&texts)
        .filter(|(e, _)| e.split == Split::Train)
        .map(|(_, t)| t.as_str())
        .collect();
    if train.is_empty() {
        return Err(Error::Validation("featurizer needs a non-empty train split".into()));
    }
    let vectorizer = HashedTfIdf::fit(dim, train)?;
    Ok(vectorizer.transform_all(&texts))
}
