//! Supervised training over known intents with the large margin cosine
//! loss. Unlabeled rows are discarded; the class weight vectors live only
//! for the duration of training.

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::Rng;

use super::pairs::gather;
use super::{apply_update, new_adam, EpochLog, Phase, TrainConfig, TrainOutcome, TrainingSet};
use crate::data::{Field, FieldMatrices};
use crate::error::{Error, Result};
use crate::model::RepModel;
use crate::optim::Adam;
use crate::rng::{self, Stream};

#[derive(Debug, Clone)]
pub struct LmclOutput {
    /// Mean over the batch.
    pub loss: f64,
    pub grad_reps: Array2<f64>,
    pub grad_weights: Array2<f64>,
    /// Examples whose highest cosine is their own class.
    pub correct: usize,
}

const NORM_FLOOR: f64 = 1e-12;

/// `−ln(e^{s(cos_y − m)} / (e^{s(cos_y − m)} + Σ_{j≠y} e^{s·cos_j}))`
/// averaged over rows, where `cos_j` is the cosine between the row and
/// class weight vector `j`.
pub fn lmcl_loss(reps: ArrayView2<'_, f64>, labels: &[usize], weights: ArrayView2<'_, f64>, scale: f64, margin: f64) -> LmclOutput {
    let (b, c) = (reps.nrows(), weights.nrows());
    assert_eq!(labels.len(), b);
    let w_norms: Vec<f64> = weights.rows().into_iter().map(|w| w.dot(&w).sqrt().max(NORM_FLOOR)).collect();
    let mut w_unit = weights.to_owned();
    for (mut row, &n) in w_unit.rows_mut().into_iter().zip(&w_norms) {
        row /= n;
    }
    let mut grad_reps = Array2::zeros(reps.raw_dim());
    let mut d_w_unit = Array2::<f64>::zeros(weights.raw_dim());
    let mut loss = 0.0;
    let mut correct = 0;
    let inv_b = 1.0 / b as f64;
    for (i, r) in reps.rows().into_iter().enumerate() {
        let y = labels[i];
        let r_norm = r.dot(&r).sqrt().max(NORM_FLOOR);
        let unit = &r / r_norm;
        let cos = w_unit.dot(&unit);
        let best = (0..c).fold(0, |best, j| if cos[j] > cos[best] { j } else { best });
        if best == y {
            correct += 1;
        }
        let logits: Vec<f64> = (0..c).map(|j| scale * (cos[j] - if j == y { margin } else { 0.0 })).collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = logits.iter().map(|z| (z - max).exp()).sum();
        loss += (max + sum_exp.ln() - logits[y]) * inv_b;

        // ∂/∂cos_j = s·(p_j − [j = y])
        let g: Vec<f64> = (0..c)
            .map(|j| {
                let p = (logits[j] - max).exp() / sum_exp;
                inv_b * scale * (p - if j == y { 1.0 } else { 0.0 })
            })
            .collect();
        let g = ndarray::Array1::from(g);
        let d_unit = w_unit.t().dot(&g);
        let radial = unit.dot(&d_unit);
        grad_reps.row_mut(i).assign(&((&d_unit - &(&unit * radial)) / r_norm));
        for j in 0..c {
            d_w_unit.row_mut(j).scaled_add(g[j], &unit);
        }
    }
    let mut grad_weights = Array2::zeros(weights.raw_dim());
    for j in 0..c {
        let u = w_unit.row(j);
        let d = d_w_unit.row(j);
        let radial = u.dot(&d);
        grad_weights.row_mut(j).assign(&((&d - &(&u * radial)) / w_norms[j]));
    }
    LmclOutput {
        loss,
        grad_reps,
        grad_weights,
        correct,
    }
}

fn class_weight_stream(field: Field) -> u64 {
    (Stream::InitClassWeights as u64) << 8 | field.index() as u64
}

pub fn train_supervised(
    mut model: RepModel,
    features: &FieldMatrices,
    set: &TrainingSet,
    config: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    config.validate()?;
    let labeled = set.labeled_positions();
    let mut present: Vec<u32> = labeled.iter().map(|&p| set.labels[p].unwrap()).collect();
    present.sort_unstable();
    present.dedup();
    if present.len() < 2 {
        return Err(Error::Validation(format!(
            "supervised training needs at least two labeled classes, found {}",
            present.len()
        )));
    }
    let n_classes = set.classes.len().max(*present.last().unwrap() as usize + 1);
    let rep_dim = model.config.rep_dim;
    let active: Vec<Field> = model.config.lambda.active().collect();
    for &f in &active {
        features.require(f)?;
    }

    let bound = 1.0 / (rep_dim as f64).sqrt();
    let mut class_weights: [Option<Array2<f64>>; 3] = [None, None, None];
    for &f in &active {
        let mut rng = rng::stream_raw(seed, class_weight_stream(f));
        class_weights[f.index()] = Some(Array2::from_shape_simple_fn((n_classes, rep_dim), || {
            rng.random_range(-bound..=bound)
        }));
    }
    let mut class_adam = Adam::new([n_classes * rep_dim; 3]);
    let mut adam = new_adam(&model);
    let mut rng = rng::stream(seed, Stream::Shuffle);
    let mut log = Vec::new();

    for epoch in 0..config.max_epochs {
        let mut order = labeled.clone();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        let mut seen = 0usize;
        let mut batches = 0;
        for chunk in order.chunks(config.batch_size) {
            let rows: Vec<usize> = chunk.iter().map(|&p| set.rows[p]).collect();
            let labels: Vec<usize> = chunk.iter().map(|&p| set.labels[p].unwrap() as usize).collect();
            let inputs: [Option<Array2<f64>>; 3] =
                Field::ALL.map(|f| (model.config.lambda.get(f) > 0.0).then(|| gather(features.get(f).unwrap(), &rows)));
            let mut weight_grads: [Option<Array2<f64>>; 3] = [None, None, None];
            let mut batch_correct = 0;
            let out = model.conv_loss(
                |f| inputs[f.index()].as_ref().map(|m| m.view()),
                |f, reps| {
                    let w = class_weights[f.index()].as_ref().expect("weights for active head");
                    let o = lmcl_loss(reps, &labels, w.view(), config.lmcl_scale, config.lmcl_margin);
                    if Some(f) == active.first().copied() {
                        batch_correct = o.correct;
                    }
                    weight_grads[f.index()] = Some(o.grad_weights);
                    Ok((o.loss, o.grad_reps))
                },
            )?;
            apply_update(&mut model, &out.grads, &mut adam, config);
            class_adam.tick();
            for &f in &active {
                let scale = model.config.lambda.get(f);
                let g = weight_grads[f.index()].take().unwrap() * scale;
                let w = class_weights[f.index()].as_mut().unwrap();
                class_adam.update(f.index(), w.as_slice_mut().unwrap(), g.as_slice().unwrap(), config.learning_rate);
            }
            loss_sum += out.loss;
            correct += batch_correct;
            seen += chunk.len();
            batches += 1;
        }
        if !model.params.is_finite() {
            return Err(Error::Training(format!("non-finite parameters after epoch {epoch}")));
        }
        log.push(EpochLog {
            epoch,
            phase: Phase::Supervised,
            lambda_t: 0.0,
            u: 0.0,
            l: 0.0,
            mean_loss: if batches > 0 { loss_sum / batches as f64 } else { 0.0 },
            positive_pairs: 0,
            negative_pairs: 0,
            none_pairs: 0,
            batches,
            skipped_batches: 0,
            accuracy: Some(if seen > 0 { correct as f64 / seen as f64 } else { 0.0 }),
        });
    }
    Ok(TrainOutcome { model, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn zero_margin_is_scaled_softmax() {
        let reps = array![[0.3, 0.9], [1.0, -0.2]];
        let w = array![[1.0, 0.0], [0.0, 2.0], [-1.0, 1.0]];
        let out = lmcl_loss(reps.view(), &[1, 0], w.view(), 5.0, 0.0);
        let mut expected = 0.0;
        for (i, y) in [(0usize, 1usize), (1, 0)] {
            let r = reps.row(i);
            let cos: Vec<f64> = w
                .rows()
                .into_iter()
                .map(|wj| r.dot(&wj) / (r.dot(&r).sqrt() * wj.dot(&wj).sqrt()))
                .collect();
            let z: f64 = cos.iter().map(|c| (5.0 * c).exp()).sum();
            expected += -((5.0 * cos[y]).exp() / z).ln() / 2.0;
        }
        assert!((out.loss - expected).abs() < 1e-12);
    }

    #[test]
    fn loss_vanishes_with_scale_on_centroid() {
        let reps = array![[1.0, 0.0, 0.0]];
        let w = array![[2.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 3.0]];
        let mut last = f64::INFINITY;
        for s in [1.0, 3.0, 10.0, 30.0] {
            let l = lmcl_loss(reps.view(), &[0], w.view(), s, 0.35).loss;
            assert!(l < last);
            last = l;
        }
        // ln(1 + 2·exp(−30·0.65))
        assert!((last - (2.0 * (-19.5f64).exp()).ln_1p()).abs() < 1e-12);
    }

    #[test]
    fn invariant_to_rescaling_representation() {
        let reps = array![[0.3, -0.7, 0.2], [1.5, 0.1, -0.4]];
        let w = array![[1.0, 0.5, 0.0], [0.0, 1.0, -1.0]];
        let a = lmcl_loss(reps.view(), &[0, 1], w.view(), 30.0, 0.35).loss;
        let b = lmcl_loss((&reps * 17.5).view(), &[0, 1], w.view(), 30.0, 0.35).loss;
        assert!((a - b).abs() < 1e-10);
    }
}
