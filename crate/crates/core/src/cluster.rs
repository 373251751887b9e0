//! K-means (k-means++ seeding, Lloyd iterations, best of several restarts).

use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KMeansConfig {
    pub n_init: usize,
    pub max_iter: usize,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            n_init: 10,
            max_iter: 300,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    pub k: usize,
    pub assignment: Vec<usize>,
    pub centroids: Array2<f64>,
    pub inertia: f64,
    /// Lloyd iterations of the selected restart.
    pub iterations: usize,
    /// Inertia after every assignment step of the selected restart.
    pub inertia_trace: Vec<f64>,
}

/// `⌈factor · n⌉`.
pub fn overcluster_k(n_true_intents: usize, factor: f64) -> Result<usize> {
    if !(factor >= 1.0) || !factor.is_finite() {
        return Err(Error::Config(format!("over-clustering factor must be >= 1, got {factor}")));
    }
    Ok((factor * n_true_intents as f64).ceil() as usize)
}

fn sq_dist(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn kmeans(reps: ArrayView2<'_, f64>, k: usize, seed: u64, config: KMeansConfig) -> Result<ClusterAssignment> {
    let n = reps.nrows();
    if k < 2 {
        return Err(Error::Config(format!("k must be >= 2, got {k}")));
    }
    if k > n {
        return Err(Error::Validation(format!("k = {k} exceeds the number of rows ({n})")));
    }
    if reps.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("non-finite representation values".into()));
    }
    if config.n_init == 0 || config.max_iter == 0 {
        return Err(Error::Config("n_init and max_iter must be positive".into()));
    }
    let runs: Vec<ClusterAssignment> = (0..config.n_init)
        .into_par_iter()
        .map(|restart| {
            let mut rng = rng::stream_raw(seed, (Stream::KMeans as u64) << 32 | restart as u64);
            let init = plus_plus(reps, k, &mut rng);
            lloyd(reps, init, config.max_iter)
        })
        .collect();
    // first restart wins ties, so the choice is independent of scheduling
    Ok(runs
        .into_iter()
        .reduce(|best, r| if r.inertia < best.inertia { r } else { best })
        .expect("n_init > 0"))
}

fn plus_plus<R: Rng>(x: ArrayView2<'_, f64>, k: usize, rng: &mut R) -> Array2<f64> {
    let n = x.nrows();
    let mut chosen = Vec::with_capacity(k);
    chosen.push(rng.random_range(0..n));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(x.row(i), x.row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if d > 0.0 && acc > target {
                    pick = Some(i);
                    break;
                }
            }
            // rounding can leave target ≥ acc; fall back to the last candidate
            pick.unwrap_or_else(|| d2.iter().rposition(|&d| d > 0.0).unwrap())
        } else {
            let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(next);
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(x.row(i), x.row(next)));
        }
    }
    let mut c = Array2::zeros((k, x.ncols()));
    for (j, &i) in chosen.iter().enumerate() {
        c.row_mut(j).assign(&x.row(i));
    }
    c
}

/// Nearest centroid per row (lowest index on ties) and squared distances.
fn assign(x: ArrayView2<'_, f64>, c: &Array2<f64>) -> (Vec<usize>, Vec<f64>) {
    x.rows()
        .into_iter()
        .map(|row| {
            let mut best = (0, f64::INFINITY);
            for (j, cj) in c.rows().into_iter().enumerate() {
                let d = sq_dist(row, cj);
                if d < best.1 {
                    best = (j, d);
                }
            }
            best
        })
        .unzip()
}

/// Moves the row farthest from its centroid into every empty cluster.
fn repair_empty(x: ArrayView2<'_, f64>, c: &mut Array2<f64>, labels: &mut [usize], dist: &mut [f64]) {
    let k = c.nrows();
    loop {
        let mut sizes = vec![0usize; k];
        for &l in labels.iter() {
            sizes[l] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        let far = (0..labels.len())
            .filter(|&i| sizes[labels[i]] > 1)
            .fold(None::<usize>, |best, i| match best {
                Some(b) if dist[b] >= dist[i] => Some(b),
                _ => Some(i),
            })
            .expect("k <= rows guarantees a donor cluster");
        labels[far] = empty;
        dist[far] = 0.0;
        c.row_mut(empty).assign(&x.row(far));
    }
}

fn means(x: ArrayView2<'_, f64>, labels: &[usize], k: usize) -> Array2<f64> {
    let mut c = Array2::zeros((k, x.ncols()));
    let mut counts = vec![0usize; k];
    for (row, &l) in x.rows().into_iter().zip(labels) {
        let mut target = c.row_mut(l);
        target += &row;
        counts[l] += 1;
    }
    for (mut row, &n) in c.rows_mut().into_iter().zip(&counts) {
        if n > 0 {
            row /= n as f64;
        }
    }
    c
}

fn lloyd(x: ArrayView2<'_, f64>, mut centroids: Array2<f64>, max_iter: usize) -> ClusterAssignment {
    let k = centroids.nrows();
    let (mut labels, mut dist) = assign(x, &centroids);
    repair_empty(x, &mut centroids, &mut labels, &mut dist);
    let mut trace = vec![dist.iter().sum::<f64>()];
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        centroids = means(x, &labels, k);
        let (mut next, mut next_dist) = assign(x, &centroids);
        repair_empty(x, &mut centroids, &mut next, &mut next_dist);
        trace.push(next_dist.iter().sum());
        dist = next_dist;
        if next == labels {
            break;
        }
        labels = next;
    }
    ClusterAssignment {
        k,
        inertia: dist.iter().sum(),
        assignment: labels,
        centroids,
        iterations,
        inertia_trace: trace,
    }
}

/// Writes `id,cluster_id` rows with a header line.
pub fn write_assignment_csv<S: AsRef<str>>(path: impl AsRef<Path>, ids: &[S], assignment: &[usize]) -> Result<()> {
    let path = path.as_ref();
    if ids.len() != assignment.len() {
        return Err(Error::Dimension {
            expected: ids.len(),
            actual: assignment.len(),
        });
    }
    let mut out = String::from("id,cluster_id\n");
    for (id, c) in ids.iter().zip(assignment) {
        let id = id.as_ref();
        if id.contains([',', '"', '\n']) {
            out.push_str(&format!("\"{}\",{c}\n", id.replace('"', "\"\"")));
        } else {
            out.push_str(&format!("{id},{c}\n"));
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_assignment_csv(path: impl AsRef<Path>) -> Result<Vec<(String, usize)>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_owned(),
            line: i + 1,
            message,
        };
        let (id, cluster) = line.rsplit_once(',').ok_or_else(|| parse_err("expected `id,cluster_id`".into()))?;
        let id = match id.strip_prefix('"').and_then(|s| s.strip_suffix('"')) {
            Some(quoted) => quoted.replace("\"\"", "\""),
            None => id.to_owned(),
        };
        let cluster = cluster.trim().parse().map_err(|e| parse_err(format!("bad cluster id: {e}")))?;
        out.push((id, cluster));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand_distr::{Distribution, Normal};

    fn canonical(labels: &[usize]) -> Vec<usize> {
        let mut map = std::collections::HashMap::new();
        labels
            .iter()
            .map(|l| {
                let next = map.len();
                *map.entry(*l).or_insert(next)
            })
            .collect()
    }

    #[test]
    fn two_pairs() {
        let x = array![[0.0, 0.0], [0.0, 1.0], [10.0, 10.0], [10.0, 11.0]];
        let out = kmeans(x.view(), 2, 0, KMeansConfig::default()).unwrap();
        assert_eq!(canonical(&out.assignment), [0, 0, 1, 1]);
        assert!((out.inertia - 1.0).abs() < 1e-12);
    }

    #[test]
    fn k_equals_rows() {
        let x = array![[0.0, 0.0], [0.0, 1.0], [10.0, 10.0], [10.0, 11.0], [3.0, 3.0]];
        let out = kmeans(x.view(), 5, 1, KMeansConfig::default()).unwrap();
        assert_eq!(out.inertia, 0.0);
        let mut a = out.assignment.clone();
        a.sort_unstable();
        assert_eq!(a, [0, 1, 2, 3, 4]);
    }

    #[test]
    fn errors() {
        let x = array![[0.0], [1.0]];
        assert!(kmeans(x.view(), 3, 0, KMeansConfig::default()).is_err());
        assert!(kmeans(x.view(), 1, 0, KMeansConfig::default()).is_err());
        let bad = array![[0.0], [f64::NAN]];
        assert!(kmeans(bad.view(), 2, 0, KMeansConfig::default()).is_err());
    }

    fn three_blobs(seed: u64) -> (Array2<f64>, Vec<usize>) {
        let mut rng = rng::stream(seed, Stream::Synthetic);
        let noise = Normal::new(0.0, 0.1).unwrap();
        let centers = [[0.0, 0.0], [5.0, 0.0], [0.0, 5.0]];
        let mut x = Array2::zeros((300, 2));
        let mut truth = Vec::new();
        for i in 0..300 {
            let c = i % 3;
            x[[i, 0]] = centers[c][0] + noise.sample(&mut rng);
            x[[i, 1]] = centers[c][1] + noise.sample(&mut rng);
            truth.push(c);
        }
        (x, truth)
    }

    #[test]
    fn recovers_blobs_up_to_relabeling() {
        let (x, truth) = three_blobs(3);
        let out = kmeans(x.view(), 3, 11, KMeansConfig::default()).unwrap();
        assert_eq!(canonical(&out.assignment), canonical(&truth));
    }

    #[test]
    fn inertia_never_increases() {
        let mut rng = rng::stream(5, Stream::Synthetic);
        let x = Array2::from_shape_simple_fn((200, 3), || rng.random_range(-1.0..1.0));
        let out = kmeans(x.view(), 7, 2, KMeansConfig { n_init: 3, max_iter: 300 }).unwrap();
        for w in out.inertia_trace.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12), "{w:?}");
        }
        assert_eq!(*out.inertia_trace.last().unwrap(), out.inertia);
    }

    #[test]
    fn deterministic_and_permutation_equivariant() {
        let (x, _) = three_blobs(8);
        let a = kmeans(x.view(), 3, 4, KMeansConfig::default()).unwrap();
        assert_eq!(a, kmeans(x.view(), 3, 4, KMeansConfig::default()).unwrap());
        let perm: Vec<usize> = (0..300).rev().collect();
        let xp = x.select(ndarray::Axis(0), &perm);
        let b = kmeans(xp.view(), 3, 4, KMeansConfig::default()).unwrap();
        let unpermuted: Vec<usize> = (0..300).map(|i| b.assignment[299 - i]).collect();
        assert_eq!(canonical(&unpermuted), canonical(&a.assignment));
    }

    #[test]
    fn duplicate_points_fill_every_cluster() {
        let x = array![[1.0, 1.0], [1.0, 1.0], [1.0, 1.0], [2.0, 2.0]];
        let out = kmeans(x.view(), 3, 0, KMeansConfig::default()).unwrap();
        let mut seen = out.assignment.clone();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 3);
    }

    #[test]
    fn overcluster() {
        assert_eq!(overcluster_k(100, 1.5).unwrap(), 150);
        assert_eq!(overcluster_k(23, 2.0).unwrap(), 46);
        assert_eq!(overcluster_k(22, 1.0).unwrap(), 22);
        assert!(overcluster_k(10, 0.5).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        write_assignment_csv(&p, &["a", "b,c", "d"], &[1, 0, 2]).unwrap();
        let back = read_assignment_csv(&p).unwrap();
        assert_eq!(back, vec![("a".into(), 1), ("b,c".into(), 0), ("d".into(), 2)]);
    }
}
