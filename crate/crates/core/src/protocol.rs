//! Simulated open-world setting: a share of intents is hidden entirely and
//! a share of the remaining train examples loses its label.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::rng::{self, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskedView {
    pub seed: u64,
    pub novel_intent_ratio: f64,
    pub label_keep_ratio: f64,
    /// Sorted.
    pub known_intents: Vec<String>,
    /// Sorted.
    pub novel_intents: Vec<String>,
    /// Train examples whose label stays visible, in dataset order.
    pub labeled_ids: Vec<String>,
    /// Train examples treated as unlabeled, in dataset order.
    pub unlabeled_ids: Vec<String>,
}

impl MaskedView {
    pub fn is_known(&self, intent: &str) -> bool {
        self.known_intents.binary_search_by(|k| k.as_str().cmp(intent)).is_ok()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Masks the train split.
///
/// ⌊K·novel_intent_ratio⌋ of the K train intents become novel; of the
/// remaining n examples, ⌊n·label_keep_ratio⌋ keep their label.
pub fn mask(
    dataset: &Dataset,
    novel_intent_ratio: f64,
    label_keep_ratio: f64,
    seed: u64,
) -> Result<MaskedView> {
    for (name, r) in [("novel_intent_ratio", novel_intent_ratio), ("label_keep_ratio", label_keep_ratio)] {
        if !(r > 0.0 && r < 1.0) {
            return Err(Error::Config(format!("{name} must lie in (0, 1), got {r}")));
        }
    }
    let train = dataset.split_rows(Split::Train);
    if train.is_empty() {
        return Err(Error::Validation("train split is empty".into()));
    }
    if let Some(&r) = train.iter().find(|&&r| dataset.examples()[r].intent.is_none()) {
        return Err(Error::Validation(format!(
            "train example {:?} has no intent label",
            dataset.examples()[r].id
        )));
    }
    let mut intents = dataset.intents_of(&train);
    let n_novel = (intents.len() as f64 * novel_intent_ratio).floor() as usize;
    intents.shuffle(&mut rng::stream(seed, Stream::MaskIntents));
    let novel: BTreeSet<String> = intents[..n_novel].iter().cloned().collect();
    let known: BTreeSet<String> = intents[n_novel..].iter().cloned().collect();

    let remaining: Vec<usize> = train
        .iter()
        .copied()
        .filter(|&r| known.contains(dataset.examples()[r].intent.as_deref().unwrap()))
        .collect();
    let n_keep = (remaining.len() as f64 * label_keep_ratio).floor() as usize;
    if n_keep == 0 {
        return Err(Error::Validation("masking would leave no labeled examples".into()));
    }
    let mut order = remaining;
    order.shuffle(&mut rng::stream(seed, Stream::MaskExamples));
    let keep: BTreeSet<usize> = order[..n_keep].iter().copied().collect();

    let mut labeled_ids = Vec::with_capacity(n_keep);
    let mut unlabeled_ids = Vec::with_capacity(train.len() - n_keep);
    for &r in &train {
        let id = dataset.examples()[r].id.clone();
        if keep.contains(&r) {
            labeled_ids.push(id);
        } else {
            unlabeled_ids.push(id);
        }
    }
    Ok(MaskedView {
        seed,
        novel_intent_ratio,
        label_keep_ratio,
        known_intents: known.into_iter().collect(),
        novel_intents: novel.into_iter().collect(),
        labeled_ids,
        unlabeled_ids,
    })
}

/// Derives `n_seeds` distinct run seeds from a base seed.
///
/// Seed i is `mix64(base + (i + 1)·φ)` with φ the 64-bit golden-ratio
/// constant; `mix64` is a bijection, so seeds within a plan never collide.
pub fn seed_plan(base_seed: u64, n_seeds: usize) -> Vec<u64> {
    const PHI: u64 = 0x9e37_79b9_7f4a_7c15;
    (0..n_seeds as u64)
        .map(|i| rng::mix64(base_seed.wrapping_add((i + 1).wrapping_mul(PHI))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Example;
    use proptest::prelude::*;

    fn dataset(n_intents: usize, per_intent: usize) -> Dataset {
        let mut ex = Vec::new();
        for i in 0..n_intents {
            for j in 0..per_intent {
                ex.push(Example {
                    id: format!("{i}-{j}"),
                    question: format!("question {j}"),
                    answer: None,
                    intent: Some(format!("intent{i:02}")),
                    split: Split::Train,
                });
            }
        }
        Dataset::new(ex).unwrap()
    }

    #[test]
    fn counts_four_by_ten() {
        let ds = dataset(4, 10);
        for seed in 0..10 {
            let v = mask(&ds, 0.5, 0.5, seed).unwrap();
            assert_eq!(v.novel_intents.len(), 2);
            assert_eq!(v.labeled_ids.len(), 10);
            assert_eq!(v.unlabeled_ids.len(), 30);
        }
    }

    #[test]
    fn deterministic() {
        let ds = dataset(4, 10);
        assert_eq!(mask(&ds, 0.5, 0.5, 3).unwrap(), mask(&ds, 0.5, 0.5, 3).unwrap());
    }

    #[test]
    fn seeds_vary_the_novel_set() {
        let ds = dataset(10, 3);
        let sets: BTreeSet<Vec<String>> = (0..5).map(|s| mask(&ds, 0.5, 0.5, s).unwrap().novel_intents).collect();
        assert!(sets.len() >= 2);
    }

    #[test]
    fn bad_ratios() {
        let ds = dataset(4, 10);
        assert!(matches!(mask(&ds, 0.0, 0.5, 0), Err(Error::Config(_))));
        assert!(matches!(mask(&ds, 0.5, 1.0, 0), Err(Error::Config(_))));
    }

    #[test]
    fn empty_labeled_set_is_an_error() {
        let ds = dataset(2, 1);
        assert!(matches!(mask(&ds, 0.5, 0.5, 0), Err(Error::Validation(_))));
    }

    #[test]
    fn seed_plan_properties() {
        let a = seed_plan(42, 5);
        assert_eq!(a, seed_plan(42, 5));
        assert_eq!(a.iter().collect::<BTreeSet<_>>().len(), 5);
        assert_eq!(seed_plan(42, 1), vec![a[0]]);
        assert_ne!(seed_plan(0, 5), seed_plan(1, 5));
    }

    proptest! {
        #[test]
        fn masked_view_invariants(k in 2usize..9, per in 1usize..8, seed in any::<u64>()) {
            let ds = dataset(k, per);
            let Ok(v) = mask(&ds, 0.5, 0.5, seed) else { return Ok(()); };
            let known: BTreeSet<_> = v.known_intents.iter().collect();
            let novel: BTreeSet<_> = v.novel_intents.iter().collect();
            prop_assert!(known.is_disjoint(&novel));
            prop_assert_eq!(known.len() + novel.len(), k);
            let n_novel_ex = ds.examples().iter().filter(|e| novel.contains(e.intent.as_ref().unwrap())).count();
            prop_assert_eq!(v.labeled_ids.len(), (0.5 * (ds.len() - n_novel_ex) as f64).floor() as usize);
            let labeled: BTreeSet<_> = v.labeled_ids.iter().collect();
            for e in ds.examples() {
                if novel.contains(e.intent.as_ref().unwrap()) {
                    prop_assert!(!labeled.contains(&e.id));
                }
            }
            prop_assert!(v.unlabeled_ids.iter().all(|id| !labeled.contains(id)));
            prop_assert_eq!(labeled.len() + v.unlabeled_ids.len(), ds.len());
        }
    }
}
