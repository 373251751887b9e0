//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use convlab::data::{Dataset, Example, Split};
use ndarray::ArrayView2;

/// Best matching by trying every permutation of the padded square table.
pub fn brute_force_accuracy(truth: &[usize], clusters: &[usize]) -> f64 {
    let nt = truth.iter().max().map_or(0, |m| m + 1);
    let nc = clusters.iter().max().map_or(0, |m| m + 1);
    let size = nt.max(nc);
    let mut table = vec![vec![0usize; size]; size];
    for (&t, &c) in truth.iter().zip(clusters) {
        table[t][c] += 1;
    }
    let mut perm: Vec<usize> = (0..size).collect();
    let mut best = 0;
    permute(&mut perm, 0, &mut |p| {
        let matched = (0..size).map(|i| table[i][p[i]]).sum::<usize>();
        best = best.max(matched);
    });
    best as f64 / truth.len() as f64
}

fn permute(v: &mut Vec<usize>, k: usize, visit: &mut dyn FnMut(&[usize])) {
    if k == v.len() {
        visit(v);
        return;
    }
    for i in k..v.len() {
        v.swap(k, i);
        permute(v, k + 1, visit);
        v.swap(k, i);
    }
}

/// NMI with arithmetic-mean normalization from per-example loops.
pub fn reference_nmi(truth: &[usize], clusters: &[usize]) -> f64 {
    let n = truth.len();
    let nf = n as f64;
    let mut h_t = 0.0;
    let mut h_c = 0.0;
    let mut mi = 0.0;
    for i in 0..n {
        // each example contributes 1/n of the log term of its own cell
        let same_t = (0..n).filter(|&j| truth[j] == truth[i]).count() as f64;
        let same_c = (0..n).filter(|&j| clusters[j] == clusters[i]).count() as f64;
        let same_both = (0..n).filter(|&j| truth[j] == truth[i] && clusters[j] == clusters[i]).count() as f64;
        h_t -= (same_t / nf).ln() / nf;
        h_c -= (same_c / nf).ln() / nf;
        mi += (nf * same_both / (same_t * same_c)).ln() / nf;
    }
    if h_t == 0.0 && h_c == 0.0 {
        return 1.0;
    }
    if h_t == 0.0 || h_c == 0.0 {
        return 0.0;
    }
    mi / ((h_t + h_c) / 2.0)
}

/// Per-intent mean silhouette with cosine distance, one point at a time.
pub fn reference_silhouette(x: ArrayView2<'_, f64>, labels: &[String]) -> BTreeMap<String, f64> {
    let n = x.nrows();
    let dist = |i: usize, j: usize| {
        let (a, b) = (x.row(i), x.row(j));
        1.0 - a.dot(&b) / (a.dot(&a).sqrt() * b.dot(&b).sqrt())
    };
    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for i in 0..n {
        let mut by_label: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
        for j in 0..n {
            if j != i {
                let e = by_label.entry(labels[j].as_str()).or_default();
                e.0 += dist(i, j);
                e.1 += 1;
            }
        }
        let own = by_label.get(labels[i].as_str()).copied();
        let s = match own {
            None => 0.0,
            Some((sum, count)) => {
                let a = sum / count as f64;
                let b = by_label
                    .iter()
                    .filter(|(l, _)| **l != labels[i])
                    .map(|(_, (s, c))| s / *c as f64)
                    .fold(f64::INFINITY, f64::min);
                if a.max(b) == 0.0 {
                    0.0
                } else {
                    (b - a) / a.max(b)
                }
            }
        };
        let e = sums.entry(labels[i].clone()).or_default();
        e.0 += s;
        e.1 += 1;
    }
    sums.into_iter().map(|(l, (s, c))| (l, s / c as f64)).collect()
}

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Dataset of `counts[i]` examples of intent `i`, all in the train split.
pub fn dataset_with_counts(counts: &[usize]) -> Dataset {
    let mut examples = Vec::new();
    for (i, &c) in counts.iter().enumerate() {
        for j in 0..c {
            examples.push(Example {
                id: format!("{i}-{j}"),
                question: format!("question {j}"),
                answer: None,
                intent: Some(format!("intent{i}")),
                split: Split::Train,
            });
        }
    }
    Dataset::new(examples).unwrap()
}
