use std::collections::BTreeMap;

/// Counts with rows = ground-truth classes and columns = clusters, both
/// re-indexed densely in ascending label order.
#[derive(Debug, Clone, PartialEq)]
pub struct Contingency {
    pub counts: Vec<Vec<usize>>,
    pub total: usize,
}

impl Contingency {
    pub fn new<T: Ord, C: Ord>(truth: &[T], clusters: &[C]) -> Self {
        assert_eq!(truth.len(), clusters.len(), "label vectors must align");
        let rows = dense_index(truth);
        let cols = dense_index(clusters);
        let mut counts = vec![vec![0usize; cols.len()]; rows.len()];
        for (t, c) in truth.iter().zip(clusters) {
            counts[rows[t]][cols[c]] += 1;
        }
        Self {
            counts,
            total: truth.len(),
        }
    }

    pub fn n_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn n_clusters(&self) -> usize {
        self.counts.first().map_or(0, Vec::len)
    }

    pub fn row_sums(&self) -> Vec<usize> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<usize> {
        (0..self.n_clusters())
            .map(|j| self.counts.iter().map(|r| r[j]).sum())
            .collect()
    }
}

fn dense_index<T: Ord>(labels: &[T]) -> BTreeMap<&T, usize> {
    let mut map: BTreeMap<&T, usize> = labels.iter().map(|l| (l, 0)).collect();
    for (i, v) in map.values_mut().enumerate() {
        *v = i;
    }
    map
}
