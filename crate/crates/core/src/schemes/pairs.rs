//! Pairwise targets and the contrastive pair loss on cosine similarities.

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::ThresholdSchedule;
use crate::error::{Error, Result};

/// `−R·ln S − (1−R)·ln(1−S)` with `S` clamped to `[ε, 1−ε]`.
pub fn pair_loss(similarity: f64, positive: bool, eps: f64) -> f64 {
    let s = similarity.clamp(eps, 1.0 - eps);
    if positive {
        -s.ln()
    } else {
        -(1.0 - s).ln()
    }
}

/// ∂pair_loss/∂S; zero where the clamp is active.
pub fn pair_loss_grad(similarity: f64, positive: bool, eps: f64) -> f64 {
    if similarity < eps || similarity > 1.0 - eps {
        return 0.0;
    }
    if positive {
        -1.0 / similarity
    } else {
        1.0 / (1.0 - similarity)
    }
}

/// Thresholded pseudo-target: positive at or above `u`, negative below `l`,
/// excluded in between.
pub fn pseudo_label(similarity: f64, schedule: &ThresholdSchedule) -> Option<bool> {
    if similarity >= schedule.upper() {
        Some(true)
    } else if similarity < schedule.lower() {
        Some(false)
    } else {
        None
    }
}

/// Exact target from two labels.
pub fn exact_label<L: PartialEq>(a: Option<L>, b: Option<L>) -> Result<bool> {
    match (a, b) {
        (Some(a), Some(b)) => Ok(a == b),
        _ => Err(Error::Validation("exact pair target needs two labeled examples".into())),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Exact,
    Pseudo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairEntry {
    /// `None` marks a pair excluded from the loss.
    pub target: Option<bool>,
    pub provenance: Provenance,
}

/// Targets for all in-batch pairs `i < j`, upper triangle row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PairLabelMatrix {
    n: usize,
    entries: Vec<PairEntry>,
}

impl PairLabelMatrix {
    /// Exact targets between two labeled examples, pseudo-targets for every
    /// other pair. With `schedule = None` pairs touching an unlabeled
    /// example are excluded.
    pub fn build(similarity: ArrayView2<'_, f64>, labels: &[Option<u32>], schedule: Option<&ThresholdSchedule>) -> Self {
        let n = labels.len();
        let mut entries = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for i in 0..n {
            for j in i + 1..n {
                let entry = match (labels[i], labels[j]) {
                    (Some(a), Some(b)) => PairEntry {
                        target: Some(a == b),
                        provenance: Provenance::Exact,
                    },
                    _ => PairEntry {
                        target: schedule.and_then(|s| pseudo_label(similarity[[i, j]], s)),
                        provenance: Provenance::Pseudo,
                    },
                };
                entries.push(entry);
            }
        }
        Self { n, entries }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> PairEntry {
        assert!(i != j && i < self.n && j < self.n);
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        // offset of row i in the packed upper triangle
        let row = i * (2 * self.n - i - 1) / 2;
        self.entries[row + (j - i - 1)]
    }

    pub fn counts(&self) -> PairCounts {
        let mut c = PairCounts::default();
        for e in &self.entries {
            match e.target {
                Some(true) => c.positive += 1,
                Some(false) => c.negative += 1,
                None => c.excluded += 1,
            }
        }
        c
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairCounts {
    pub positive: usize,
    pub negative: usize,
    pub excluded: usize,
}

impl PairCounts {
    pub fn participating(&self) -> usize {
        self.positive + self.negative
    }

    pub fn add(&mut self, other: PairCounts) {
        self.positive += other.positive;
        self.negative += other.negative;
        self.excluded += other.excluded;
    }
}

const NORM_FLOOR: f64 = 1e-12;

/// Row-normalized copy of `reps` plus the original row norms (floored).
fn normalize_rows(reps: ArrayView2<'_, f64>) -> (Array2<f64>, Vec<f64>) {
    let norms: Vec<f64> = reps
        .rows()
        .into_iter()
        .map(|r| r.dot(&r).sqrt().max(NORM_FLOOR))
        .collect();
    let mut unit = reps.to_owned();
    for (mut row, &n) in unit.rows_mut().into_iter().zip(&norms) {
        row /= n;
    }
    (unit, norms)
}

pub fn cosine_matrix(reps: ArrayView2<'_, f64>) -> Array2<f64> {
    let (unit, _) = normalize_rows(reps);
    unit.dot(&unit.t())
}

/// Settings of one pair-loss evaluation.
#[derive(Debug, Clone, Copy)]
pub struct PairObjective<'s> {
    pub eps: f64,
    /// Multiplies the mean pair loss (δ in supervised epochs, 1 otherwise).
    pub scale: f64,
    /// Pseudo-labeling thresholds; also enables the `u − l` penalty.
    pub schedule: Option<&'s ThresholdSchedule>,
}

#[derive(Debug, Clone)]
pub struct PairLossOutput {
    pub loss: f64,
    pub grad: Array2<f64>,
    pub counts: PairCounts,
}

impl PairObjective<'_> {
    /// Mean pair loss over participating pairs (scaled), plus the
    /// threshold penalty when a schedule is present, and its gradient with
    /// respect to the raw representations.
    pub fn evaluate(&self, reps: ArrayView2<'_, f64>, labels: &[Option<u32>]) -> PairLossOutput {
        let n = reps.nrows();
        assert_eq!(n, labels.len());
        let (unit, norms) = normalize_rows(reps);
        let sim = unit.dot(&unit.t());
        let targets = PairLabelMatrix::build(sim.view(), labels, self.schedule);
        let counts = targets.counts();
        let penalty = self.schedule.map_or(0.0, ThresholdSchedule::penalty);
        let mut grad = Array2::zeros(reps.raw_dim());
        let participating = counts.participating();
        if participating == 0 {
            return PairLossOutput {
                loss: penalty,
                grad,
                counts,
            };
        }
        let weight = self.scale / participating as f64;
        let mut sum = 0.0;
        // ∂L/∂S, symmetric
        let mut d_sim = Array2::<f64>::zeros((n, n));
        for i in 0..n {
            for j in i + 1..n {
                if let Some(t) = targets.get(i, j).target {
                    let s = sim[[i, j]];
                    sum += pair_loss(s, t, self.eps);
                    let g = weight * pair_loss_grad(s, t, self.eps);
                    d_sim[[i, j]] = g;
                    d_sim[[j, i]] = g;
                }
            }
        }
        // S = U Uᵀ with each pair stored in both halves of d_sim: ∂L/∂U = d_sim·U
        let d_unit = d_sim.dot(&unit);
        for (i, (mut g, u)) in grad.rows_mut().into_iter().zip(unit.rows()).enumerate() {
            let du = d_unit.row(i);
            let radial = u.dot(&du);
            // project out the radial part: ∂u/∂r = (I − u uᵀ)/‖r‖
            g.assign(&((&du - &(&u * radial)) / norms[i]));
        }
        PairLossOutput {
            loss: weight * sum + penalty,
            grad,
            counts,
        }
    }
}

/// Rows of `m` selected by `rows`.
pub(crate) fn gather(m: &Array2<f64>, rows: &[usize]) -> Array2<f64> {
    m.select(Axis(0), rows)
}
