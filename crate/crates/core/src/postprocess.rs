//! Cluster post-processing: extractive summaries that suggest intent names,
//! and known-intent infilling for flagging clusters that merely rediscover a
//! known intent.

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::data::{bucket, tokenize, HashedTfIdf, DEFAULT_FEATURE_DIM};
use crate::error::{Error, Result};

pub const DEFAULT_SENTENCE_PATTERN: &str = r"[.?!]\s+";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SummaryConfig {
    /// Hash buckets for both the classifier features and the centrality
    /// embedding.
    pub dim: usize,
    /// Sentence separator. A sentence ends right after the first character
    /// of each match, so terminal punctuation stays with its sentence.
    pub sentence_pattern: String,
    pub n_sentences: usize,
    /// Inverse L2 strength, as in `C · Σ loss + ½‖w‖²`.
    pub inverse_regularization: f64,
    pub tolerance: f64,
    pub max_iter: usize,
    /// Minimum share of one known intent for a cluster to be flagged known.
    pub known_share_threshold: f64,
}

impl Default for SummaryConfig {
    fn default() -> Self {
        Self {
            dim: DEFAULT_FEATURE_DIM,
            sentence_pattern: DEFAULT_SENTENCE_PATTERN.into(),
            n_sentences: 5,
            inverse_regularization: 1.0,
            tolerance: 1e-6,
            max_iter: 20_000,
            known_share_threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSentence {
    pub text: String,
    /// Sum of the cluster's classifier coefficients over the sentence's
    /// buckets.
    pub score: f64,
    /// Cosine similarity to the cluster's sentence centroid.
    pub centrality: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "intent", rename_all = "snake_case")]
pub enum IntentFlag {
    LikelyKnown(String),
    LikelyNovel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub cluster_id: usize,
    pub size: usize,
    pub sentences: Vec<ScoredSentence>,
    /// Largest fraction of members predicted as one single known intent.
    pub known_intent_share: f64,
    pub flag: IntentFlag,
    /// Set when no member yielded a sentence with at least one token.
    pub empty: bool,
}

/// Splits text into verbatim sentences.
pub fn split_sentences<'t>(text: &'t str, separator: &Regex) -> Vec<&'t str> {
    let mut out = Vec::new();
    let mut start = 0;
    for m in separator.find_iter(text) {
        let end = m.start() + text[m.start()..].chars().next().map_or(0, char::len_utf8);
        out.push(&text[start..end]);
        start = m.end();
    }
    out.push(&text[start..]);
    out.into_iter().map(str::trim).filter(|s| !s.is_empty()).collect()
}

fn sparse_bow(text: &str, dim: usize) -> Vec<(usize, f64)> {
    let mut buckets: Vec<usize> = tokenize(text).iter().map(|t| bucket(t, dim)).collect();
    buckets.sort_unstable();
    let mut out: Vec<(usize, f64)> = Vec::new();
    for b in buckets {
        match out.last_mut() {
            Some((last, c)) if *last == b => *c += 1.0,
            _ => out.push((b, 1.0)),
        }
    }
    let norm = out.iter().map(|(_, c)| c * c).sum::<f64>().sqrt();
    if norm > 0.0 {
        out.iter_mut().for_each(|(_, c)| *c /= norm);
    }
    out
}

/// Binary L2-regularized logistic regression fit by gradient descent on
/// `(C · Σ loss + ½‖w‖²) / n`; the intercept is not penalized. Returns
/// `(weights, intercept)`.
fn fit_logistic(x: &[Vec<(usize, f64)>], y: &[bool], dim: usize, c: f64, tol: f64, max_iter: usize) -> (Vec<f64>, f64) {
    let n = x.len() as f64;
    // features have unit norm, so the loss Hessian is bounded by C·n/4
    let lipschitz = (0.25 * c * n + 1.0) / n;
    let step = 1.0 / lipschitz;
    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    let mut grad = vec![0.0; dim];
    for _ in 0..max_iter {
        grad.iter_mut().zip(&w).for_each(|(g, wi)| *g = wi / n);
        let mut gb = 0.0;
        for (row, &target) in x.iter().zip(y) {
            let z = b + row.iter().map(|&(j, v)| w[j] * v).sum::<f64>();
            let p = 1.0 / (1.0 + (-z).exp());
            let r = c * (p - if target { 1.0 } else { 0.0 }) / n;
            gb += r;
            for &(j, v) in row {
                grad[j] += r * v;
            }
        }
        let worst = grad.iter().fold(gb.abs(), |m, g| m.max(g.abs()));
        if worst <= tol {
            break;
        }
        w.iter_mut().zip(&grad).for_each(|(wi, g)| *wi -= step * g);
        b -= step * gb;
    }
    (w, b)
}

fn cosine(a: &[f64], b: ArrayView1<'_, f64>) -> f64 {
    let dot: f64 = a.iter().zip(b.iter()).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.dot(&b).sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Summarizes every cluster id in `0..=max(assignment)`.
///
/// `known_predictions` holds, per message, the known intent it was labeled
/// with or infilled as (`None` when unknown); it drives the known/novel flag.
pub fn summarize_clusters<S: AsRef<str> + Sync>(
    messages: &[S],
    assignment: &[usize],
    known_predictions: Option<&[Option<String>]>,
    config: &SummaryConfig,
) -> Result<Vec<ClusterSummary>> {
    if messages.len() != assignment.len() {
        return Err(Error::Dimension {
            expected: messages.len(),
            actual: assignment.len(),
        });
    }
    if let Some(p) = known_predictions {
        if p.len() != messages.len() {
            return Err(Error::Dimension {
                expected: messages.len(),
                actual: p.len(),
            });
        }
    }
    let k = assignment.iter().max().map_or(0, |m| m + 1);
    if k < 2 {
        return Err(Error::Validation("summarization needs at least 2 clusters".into()));
    }
    if config.n_sentences == 0 || !(config.inverse_regularization > 0.0) {
        return Err(Error::Config("n_sentences and inverse_regularization must be positive".into()));
    }
    let separator = Regex::new(&config.sentence_pattern)
        .map_err(|e| Error::Config(format!("bad sentence pattern: {e}")))?;

    let features: Vec<Vec<(usize, f64)>> = messages.iter().map(|m| sparse_bow(m.as_ref(), config.dim)).collect();
    let coefficients: Vec<Vec<f64>> = (0..k)
        .into_par_iter()
        .map(|c| {
            let y: Vec<bool> = assignment.iter().map(|&a| a == c).collect();
            fit_logistic(&features, &y, config.dim, config.inverse_regularization, config.tolerance, config.max_iter).0
        })
        .collect();

    // most informative sentence of every message, under its cluster's classifier
    let kept: Vec<Option<(&str, f64)>> = messages
        .iter()
        .zip(assignment)
        .map(|(m, &c)| {
            let mut best: Option<(&str, f64)> = None;
            for s in split_sentences(m.as_ref(), &separator) {
                let mut buckets: Vec<usize> = tokenize(s).iter().map(|t| bucket(t, config.dim)).collect();
                if buckets.is_empty() {
                    continue;
                }
                buckets.sort_unstable();
                buckets.dedup();
                let score: f64 = buckets.iter().map(|&b| coefficients[c][b]).sum();
                if best.is_none_or(|(_, top)| score > top) {
                    best = Some((s, score));
                }
            }
            best
        })
        .collect();

    let embedder = HashedTfIdf::fit(config.dim, kept.iter().flatten().map(|(s, _)| *s))?;
    let mut summaries = Vec::with_capacity(k);
    for c in 0..k {
        let members: Vec<usize> = (0..messages.len()).filter(|&i| assignment[i] == c).collect();
        let candidates: Vec<(&str, f64)> = members.iter().filter_map(|&i| kept[i]).collect();
        let (share, flag) = known_share(&members, known_predictions, config.known_share_threshold);
        let mut sentences = Vec::new();
        if !candidates.is_empty() {
            let rows: Vec<Vec<f64>> = candidates.iter().map(|(s, _)| embedder.transform(s)).collect();
            let mut centroid = Array2::<f64>::zeros((1, config.dim));
            for r in &rows {
                centroid.row_mut(0).iter_mut().zip(r).for_each(|(c, v)| *c += v / rows.len() as f64);
            }
            let mut ranked: Vec<(usize, f64)> = rows.iter().map(|r| cosine(r, centroid.row(0))).enumerate().collect();
            ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            sentences = ranked
                .into_iter()
                .take(config.n_sentences)
                .map(|(i, centrality)| ScoredSentence {
                    text: candidates[i].0.to_owned(),
                    score: candidates[i].1,
                    centrality,
                })
                .collect();
        }
        summaries.push(ClusterSummary {
            cluster_id: c,
            size: members.len(),
            empty: sentences.is_empty(),
            sentences,
            known_intent_share: share,
            flag,
        });
    }
    Ok(summaries)
}

fn known_share(members: &[usize], predictions: Option<&[Option<String>]>, threshold: f64) -> (f64, IntentFlag) {
    let Some(predictions) = predictions else {
        return (0.0, IntentFlag::LikelyNovel);
    };
    if members.is_empty() {
        return (0.0, IntentFlag::LikelyNovel);
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for &i in members {
        if let Some(intent) = &predictions[i] {
            *counts.entry(intent).or_default() += 1;
        }
    }
    // BTreeMap order makes the smallest intent win ties
    let best = counts.iter().fold(None, |best: Option<(&str, usize)>, (&name, &n)| match best {
        Some((_, top)) if top >= n => best,
        _ => Some((name, n)),
    });
    match best {
        Some((name, n)) => {
            let share = n as f64 / members.len() as f64;
            let flag = if share >= threshold {
                IntentFlag::LikelyKnown(name.to_owned())
            } else {
                IntentFlag::LikelyNovel
            };
            (share, flag)
        }
        None => (0.0, IntentFlag::LikelyNovel),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfillPrediction {
    pub intent: String,
    /// Softmax over negative Euclidean distances to all known centroids.
    pub confidence: f64,
}

/// Nearest-centroid classification of `query` rows over the known intents
/// of the labeled rows. Ties go to the lexicographically smaller intent.
pub fn infill_known_intents<S: AsRef<str>>(
    reps: ArrayView2<'_, f64>,
    labeled: &[(usize, S)],
    query: &[usize],
) -> Result<Vec<InfillPrediction>> {
    if labeled.is_empty() {
        return Err(Error::Validation("infilling needs labeled examples".into()));
    }
    let n = reps.nrows();
    if let Some(&bad) = labeled.iter().map(|(i, _)| i).chain(query).find(|&&i| i >= n) {
        return Err(Error::Validation(format!("row {bad} out of range for {n} representations")));
    }
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, intent) in labeled {
        groups.entry(intent.as_ref()).or_default().push(*i);
    }
    let names: Vec<&str> = groups.keys().copied().collect();
    let mut centroids = Array2::<f64>::zeros((names.len(), reps.ncols()));
    for (mut row, members) in centroids.rows_mut().into_iter().zip(groups.values()) {
        for &i in members {
            row += &reps.row(i);
        }
        row /= members.len() as f64;
    }
    Ok(query
        .iter()
        .map(|&q| {
            let x = reps.row(q);
            let dist: Vec<f64> = centroids
                .rows()
                .into_iter()
                .map(|c| c.iter().zip(x.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
                .collect();
            let mut best = 0;
            for (j, &d) in dist.iter().enumerate() {
                if d < dist[best] {
                    best = j;
                }
            }
            let z: f64 = dist.iter().map(|d| (dist[best] - d).exp()).sum();
            InfillPrediction {
                intent: names[best].to_owned(),
                confidence: 1.0 / z,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    use crate::rng::{stream, Stream};

    #[test]
    fn sentence_splitting_is_verbatim() {
        let re = Regex::new(DEFAULT_SENTENCE_PATTERN).unwrap();
        let text = "Where is my parcel?  It was due Monday. thanks!";
        let parts = split_sentences(text, &re);
        assert_eq!(parts, ["Where is my parcel?", "It was due Monday.", "thanks!"]);
        assert!(parts.iter().all(|p| text.contains(p)));
        assert_eq!(split_sentences("v1.2 is out", &re), ["v1.2 is out"]);
    }

    fn disjoint_corpus(n: usize) -> (Vec<String>, Vec<usize>) {
        let mut msgs = Vec::new();
        let mut assign = Vec::new();
        for i in 0..n {
            msgs.push(format!("refund money back please. order {i}"));
            assign.push(0);
            msgs.push(format!("parcel late delivery again. ticket {i}"));
            assign.push(1);
        }
        (msgs, assign)
    }

    #[test]
    fn disjoint_vocabularies_stay_in_their_cluster() {
        let (msgs, assign) = disjoint_corpus(8);
        let out = summarize_clusters(&msgs, &assign, None, &SummaryConfig::default()).unwrap();
        assert_eq!(out.len(), 2);
        for s in &out {
            assert_eq!(s.sentences.len(), 5);
            let needle = if s.cluster_id == 0 { "refund" } else { "parcel" };
            for sent in &s.sentences {
                assert!(sent.text.contains(needle), "{}", sent.text);
                assert!(sent.score > 0.0 && sent.score.is_finite());
            }
        }
    }

    #[test]
    fn identical_messages_fill_every_slot() {
        let msgs = ["where is my card", "where is my card", "where is my card", "reset password", "reset password"];
        let out = summarize_clusters(&msgs, &[0, 0, 0, 1, 1], None, &SummaryConfig::default()).unwrap();
        assert_eq!(out[0].sentences.len(), 3);
        assert!(out[0].sentences.iter().all(|s| s.text == "where is my card"));
        assert_eq!(out[1].sentences.len(), 2);
    }

    #[test]
    fn single_cluster_is_rejected() {
        assert!(summarize_clusters(&["a", "b"], &[0, 0], None, &SummaryConfig::default()).is_err());
    }

    #[test]
    fn cluster_without_sentences_is_flagged_empty() {
        let msgs = ["card lost", "card stolen", "?!", "pin reset"];
        let out = summarize_clusters(&msgs, &[0, 0, 1, 2], None, &SummaryConfig::default()).unwrap();
        assert!(out[1].empty);
        assert!(out[1].sentences.is_empty());
        assert!(!out[0].empty);
    }

    #[test]
    fn permuting_cluster_ids_permutes_summaries() {
        let (msgs, assign) = disjoint_corpus(4);
        let swapped: Vec<usize> = assign.iter().map(|a| 1 - a).collect();
        let a = summarize_clusters(&msgs, &assign, None, &SummaryConfig::default()).unwrap();
        let b = summarize_clusters(&msgs, &swapped, None, &SummaryConfig::default()).unwrap();
        assert_eq!(a[0].sentences, b[1].sentences);
        assert_eq!(a[1].sentences, b[0].sentences);
    }

    #[test]
    fn known_share_drives_flag() {
        let msgs = ["a x", "a y", "a z", "b x", "b y"];
        let preds: Vec<Option<String>> = vec![Some("card".into()), Some("card".into()), Some("pin".into()), None, Some("pin".into())];
        let out = summarize_clusters(&msgs, &[0, 0, 0, 1, 1], Some(&preds), &SummaryConfig::default()).unwrap();
        assert!((out[0].known_intent_share - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(out[0].flag, IntentFlag::LikelyKnown("card".into()));
        assert_eq!(out[1].known_intent_share, 0.5);
        assert_eq!(out[1].flag, IntentFlag::LikelyKnown("pin".into()));
    }

    #[test]
    fn logistic_fit_reaches_stationary_point() {
        let x = vec![vec![(0, 1.0)], vec![(1, 1.0)], vec![(0, 0.6), (1, 0.8)]];
        let y = [true, false, true];
        let (w, b) = fit_logistic(&x, &y, 2, 1.0, 1e-10, 200_000);
        // gradient of C·Σ loss + ½‖w‖² vanishes
        let mut g = w.clone();
        let mut gb = 0.0;
        for (row, &t) in x.iter().zip(&y) {
            let z = b + row.iter().map(|&(j, v)| w[j] * v).sum::<f64>();
            let r = 1.0 / (1.0 + (-z).exp()) - if t { 1.0 } else { 0.0 };
            gb += r;
            for &(j, v) in row {
                g[j] += r * v;
            }
        }
        assert!(g.iter().chain([&gb]).all(|v| v.abs() < 1e-8), "{g:?} {gb}");
        assert!(w[0] > 0.0 && w[1] < w[0]);
    }

    #[test]
    fn point_on_centroid_gets_that_intent() {
        let reps = array![[0.0, 0.0], [2.0, 0.0], [0.0, 2.0], [0.0, 0.0]];
        let labeled = [(0, "a"), (1, "b"), (2, "c")];
        let p = infill_known_intents(reps.view(), &labeled, &[3]).unwrap();
        assert_eq!(p[0].intent, "a");
        let others = (-2.0f64).exp() * 2.0;
        assert!((p[0].confidence - 1.0 / (1.0 + others)).abs() < 1e-15);
    }

    #[test]
    fn equidistant_tie_goes_to_smaller_intent() {
        let reps = array![[1.0, 0.0], [-1.0, 0.0], [0.0, 0.0]];
        let p = infill_known_intents(reps.view(), &[(0, "zeta"), (1, "alpha")], &[2]).unwrap();
        assert_eq!(p[0].intent, "alpha");
        assert!((p[0].confidence - 0.5).abs() < 1e-15);
    }

    #[test]
    fn no_labels_is_error() {
        let reps = array![[1.0]];
        assert!(infill_known_intents::<&str>(reps.view(), &[], &[0]).is_err());
    }

    fn three_blobs(seed: u64) -> (Array2<f64>, Vec<&'static str>) {
        let names = ["billing", "delivery", "login"];
        let centers = [[0.0, 4.0], [4.0, -2.0], [-4.0, -2.0]];
        let mut rng = stream(seed, Stream::Synthetic);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let mut reps = Array2::zeros((300, 2));
        let mut labels = Vec::new();
        for i in 0..300 {
            let c = i % 3;
            reps[[i, 0]] = centers[c][0] + noise.sample(&mut rng);
            reps[[i, 1]] = centers[c][1] + noise.sample(&mut rng);
            labels.push(names[c]);
        }
        (reps, labels)
    }

    #[test]
    fn separable_blobs_infill_accurately() {
        let (reps, labels) = three_blobs(5);
        let mut rng = stream(6, Stream::Synthetic);
        let (mut labeled, mut query) = (Vec::new(), Vec::new());
        for i in 0..300 {
            if i < 3 || rng.random_bool(0.1) {
                labeled.push((i, labels[i]));
            } else {
                query.push(i);
            }
        }
        let preds = infill_known_intents(reps.view(), &labeled, &query).unwrap();
        let correct = preds.iter().zip(&query).filter(|(p, &q)| p.intent == labels[q]).count();
        assert!(correct as f64 / query.len() as f64 >= 0.9);
    }

    #[test]
    fn infill_ignores_translation() {
        let (reps, labels) = three_blobs(9);
        let labeled: Vec<(usize, &str)> = (0..30).map(|i| (i, labels[i])).collect();
        let query: Vec<usize> = (30..300).collect();
        let shifted = &reps + &array![[13.5, -7.25]];
        let a = infill_known_intents(reps.view(), &labeled, &query).unwrap();
        let b = infill_known_intents(shifted.view(), &labeled, &query).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.intent, y.intent);
            assert!((x.confidence - y.confidence).abs() < 1e-9);
        }
    }
}
