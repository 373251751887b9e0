use std::collections::BTreeMap;

use ndarray::ArrayView2;

use crate::error::{Error, Result};

/// Mean silhouette per intent using cosine distance and the ground-truth
/// intents as cluster labels. Members of singleton intents score 0.
pub fn silhouette_per_intent<L: AsRef<str>>(embeddings: ArrayView2<'_, f64>, labels: &[L]) -> Result<BTreeMap<String, f64>> {
    let n = embeddings.nrows();
    if labels.len() != n {
        return Err(Error::Dimension {
            expected: n,
            actual: labels.len(),
        });
    }
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        groups.entry(l.as_ref()).or_default().push(i);
    }
    if groups.len() < 2 {
        return Err(Error::Validation("silhouette needs at least two intents".into()));
    }
    let norms: Vec<f64> = embeddings.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
    let dist = |i: usize, j: usize| {
        let denom = norms[i] * norms[j];
        let cos = if denom > 0.0 {
            embeddings.row(i).dot(&embeddings.row(j)) / denom
        } else {
            0.0
        };
        1.0 - cos
    };
    let group_ids: Vec<&str> = groups.keys().copied().collect();
    let mut out = BTreeMap::new();
    for (&name, members) in &groups {
        if members.len() == 1 {
            out.insert(name.to_owned(), 0.0);
            continue;
        }
        let mut total = 0.0;
        for &i in members {
            let a = members.iter().filter(|&&j| j != i).map(|&j| dist(i, j)).sum::<f64>() / (members.len() - 1) as f64;
            let b = group_ids
                .iter()
                .filter(|&&g| g != name)
                .map(|g| {
                    let other = &groups[g];
                    other.iter().map(|&j| dist(i, j)).sum::<f64>() / other.len() as f64
                })
                .fold(f64::INFINITY, f64::min);
            let m = a.max(b);
            total += if m > 0.0 { (b - a) / m } else { 0.0 };
        }
        out.insert(name.to_owned(), total / members.len() as f64);
    }
    Ok(out)
}
