//! DAC and CDAC training loops.
//!
//! DAC runs semi-supervised epochs on pseudo-targets only. CDAC alternates:
//! even epochs (starting at 0) train on labeled rows with exact targets and
//! the loss scaled by δ; odd epochs train on every row with exact targets
//! between labeled rows and pseudo-targets elsewhere, plus the `u − l`
//! penalty. The threshold schedule advances after every semi-supervised
//! epoch, and training stops once `u ≤ l` or after `max_epochs` epochs.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use super::pairs::{gather, PairCounts, PairObjective};
use super::{apply_update, new_adam, EpochLog, Phase, ThresholdSchedule, TrainConfig, TrainOutcome, TrainingSet};
use crate::data::{Field, FieldMatrices};
use crate::error::{Error, Result};
use crate::model::RepModel;
use crate::optim::Adam;
use crate::rng::{self, Stream};

#[derive(Debug, Clone)]
pub struct ContrastiveTrainer {
    model: RepModel,
    config: TrainConfig,
    adam: Adam,
    schedule: ThresholdSchedule,
    rng: ChaCha8Rng,
    alternating: bool,
    epoch: usize,
    finished: bool,
    log: Vec<EpochLog>,
}

impl ContrastiveTrainer {
    fn new(model: RepModel, config: TrainConfig, seed: u64, alternating: bool) -> Result<Self> {
        config.validate()?;
        let adam = new_adam(&model);
        Ok(Self {
            model,
            config,
            adam,
            schedule: ThresholdSchedule::new(),
            rng: rng::stream(seed, Stream::Shuffle),
            alternating,
            epoch: 0,
            finished: false,
            log: Vec::new(),
        })
    }

    pub fn dac(model: RepModel, config: TrainConfig, seed: u64) -> Result<Self> {
        Self::new(model, config, seed, false)
    }

    pub fn cdac(model: RepModel, config: TrainConfig, seed: u64) -> Result<Self> {
        Self::new(model, config, seed, true)
    }

    pub fn model(&self) -> &RepModel {
        &self.model
    }

    pub fn schedule(&self) -> ThresholdSchedule {
        self.schedule
    }

    pub fn log(&self) -> &[EpochLog] {
        &self.log
    }

    /// Phase of the next epoch, or `None` once training has ended.
    pub fn next_phase(&self) -> Option<Phase> {
        if self.finished || self.epoch >= self.config.max_epochs || !self.schedule.is_active() {
            return None;
        }
        Some(if self.alternating && self.epoch % 2 == 0 {
            Phase::Supervised
        } else {
            Phase::Semi
        })
    }

    /// Runs one epoch; returns `Ok(None)` when training has already ended.
    pub fn run_epoch(&mut self, features: &FieldMatrices, set: &TrainingSet) -> Result<Option<&EpochLog>> {
        let Some(phase) = self.next_phase() else {
            self.finished = true;
            return Ok(None);
        };
        for f in self.model.config.lambda.active() {
            let m = features.require(f)?;
            if let Some(&bad) = set.rows.iter().find(|&&r| r >= m.nrows()) {
                return Err(Error::Validation(format!("train row {bad} outside {f} matrix with {} rows", m.nrows())));
            }
        }

        let mut positions: Vec<usize> = match phase {
            Phase::Supervised => set.labeled_positions(),
            Phase::Semi => (0..set.len()).collect(),
        };
        positions.shuffle(&mut self.rng);

        let (scale, schedule) = match phase {
            Phase::Supervised => (self.config.delta, None),
            Phase::Semi => (1.0, Some(self.schedule)),
        };
        let objective = PairObjective {
            eps: self.config.clamp_eps,
            scale,
            schedule: schedule.as_ref(),
        };

        let mut counts = PairCounts::default();
        let mut loss_sum = 0.0;
        let mut batches = 0;
        let mut skipped = 0;
        for chunk in positions.chunks(self.config.batch_size) {
            if chunk.len() < 2 {
                log::debug!("epoch {}: skipping batch of {} example(s)", self.epoch, chunk.len());
                skipped += 1;
                continue;
            }
            let rows: Vec<usize> = chunk.iter().map(|&p| set.rows[p]).collect();
            let labels: Vec<Option<u32>> = chunk.iter().map(|&p| set.labels[p]).collect();
            let inputs: [Option<Array2<f64>>; 3] =
                Field::ALL.map(|f| (self.model.config.lambda.get(f) > 0.0).then(|| gather(features.get(f).unwrap(), &rows)));

            let mut batch_counts = PairCounts::default();
            let out = self.model.conv_loss(
                |f| inputs[f.index()].as_ref().map(|m| m.view()),
                |_, reps| {
                    let o = objective.evaluate(reps, &labels);
                    batch_counts.add(o.counts);
                    Ok((o.loss, o.grad))
                },
            )?;
            counts.add(batch_counts);
            loss_sum += out.loss;
            batches += 1;
            // a batch with every pair excluded carries only the constant
            // penalty, so it has no gradient
            if batch_counts.participating() > 0 {
                apply_update(&mut self.model, &out.grads, &mut self.adam, &self.config);
            }
        }
        if !self.model.params.is_finite() {
            return Err(Error::Training(format!("non-finite parameters after epoch {}", self.epoch)));
        }

        self.log.push(EpochLog {
            epoch: self.epoch,
            phase,
            lambda_t: self.schedule.lambda_t(),
            u: self.schedule.upper(),
            l: self.schedule.lower(),
            mean_loss: if batches > 0 { loss_sum / batches as f64 } else { 0.0 },
            positive_pairs: counts.positive,
            negative_pairs: counts.negative,
            none_pairs: counts.excluded,
            batches,
            skipped_batches: skipped,
            accuracy: None,
        });
        self.epoch += 1;
        if phase == Phase::Semi {
            self.schedule = self.schedule.step();
        }
        Ok(self.log.last())
    }

    pub fn run(mut self, features: &FieldMatrices, set: &TrainingSet) -> Result<TrainOutcome> {
        while self.run_epoch(features, set)?.is_some() {}
        Ok(self.finish())
    }

    pub fn finish(self) -> TrainOutcome {
        TrainOutcome {
            model: self.model,
            log: self.log,
        }
    }
}

/// Unsupervised DAC on the given train rows.
pub fn train_dac(model: RepModel, features: &FieldMatrices, rows: &[usize], config: &TrainConfig, seed: u64) -> Result<TrainOutcome> {
    ContrastiveTrainer::dac(model, config.clone(), seed)?.run(features, &TrainingSet::unlabeled(rows.to_vec()))
}

/// CDAC with alternating supervised/semi-supervised epochs.
pub fn train_cdac(model: RepModel, features: &FieldMatrices, set: &TrainingSet, config: &TrainConfig, seed: u64) -> Result<TrainOutcome> {
    if set.labeled_positions().is_empty() {
        return Err(Error::Validation("CDAC needs labeled examples; use DAC for fully unlabeled data".into()));
    }
    ContrastiveTrainer::cdac(model, config.clone(), seed)?.run(features, set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_model, HeadWeights, ModelConfig};
    use ndarray::Array2;
    use rand::Rng;

    fn blobs(n: usize, seed: u64) -> (Array2<f64>, Vec<u32>) {
        let mut rng = rng::stream(seed, Stream::Synthetic);
        let mut x = Array2::zeros((n, 4));
        let mut y = Vec::new();
        for i in 0..n {
            let c = (i % 2) as u32;
            let center = if c == 0 { [1.0, 0.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0, 0.0] };
            for d in 0..4 {
                x[[i, d]] = center[d] + rng.random_range(-0.1..0.1);
            }
            y.push(c);
        }
        (x, y)
    }

    fn cfg() -> TrainConfig {
        TrainConfig {
            batch_size: 16,
            learning_rate: 1e-3,
            max_epochs: 6,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_epochs_is_identity() {
        let (x, _) = blobs(20, 0);
        let feats = FieldMatrices::new().with(Field::Q, x);
        let model = init_model(ModelConfig::new(4, 3, HeadWeights::QUESTION), 0).unwrap();
        let config = TrainConfig { max_epochs: 0, ..cfg() };
        let out = train_dac(model.clone(), &feats, &(0..20).collect::<Vec<_>>(), &config, 0).unwrap();
        assert_eq!(out.model, model);
        assert!(out.log.is_empty());
    }

    #[test]
    fn dac_deterministic() {
        let (x, _) = blobs(40, 1);
        let feats = FieldMatrices::new().with(Field::Q, x);
        let rows: Vec<usize> = (0..40).collect();
        let run = || {
            let model = init_model(ModelConfig::new(4, 3, HeadWeights::QUESTION), 3).unwrap();
            train_dac(model, &feats, &rows, &cfg(), 3).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.model, b.model);
        assert_eq!(a.log, b.log);
        assert_eq!(a.log.len(), 6);
        assert!(a.log.windows(2).all(|w| w[1].u < w[0].u && w[1].l > w[0].l));
    }

    #[test]
    fn cdac_phases_alternate_and_schedule_advances_on_semi_only() {
        let (x, y) = blobs(40, 2);
        let feats = FieldMatrices::new().with(Field::Q, x);
        let set = TrainingSet {
            rows: (0..40).collect(),
            labels: y.iter().enumerate().map(|(i, &c)| (i < 10).then_some(c)).collect(),
            classes: vec!["a".into(), "b".into()],
        };
        let model = init_model(ModelConfig::new(4, 3, HeadWeights::QUESTION), 0).unwrap();
        let out = train_cdac(model, &feats, &set, &cfg(), 0).unwrap();
        let phases: Vec<Phase> = out.log.iter().map(|l| l.phase).collect();
        assert_eq!(phases, [Phase::Supervised, Phase::Semi, Phase::Supervised, Phase::Semi, Phase::Supervised, Phase::Semi]);
        assert_eq!(out.log[0].lambda_t, out.log[1].lambda_t);
        assert!(out.log[2].lambda_t > out.log[1].lambda_t);
        assert_eq!(out.log[0].none_pairs, 0);
        assert_eq!(out.log[0].positive_pairs + out.log[0].negative_pairs, 45);
    }

    #[test]
    fn cdac_without_labels_is_rejected() {
        let (x, _) = blobs(10, 0);
        let feats = FieldMatrices::new().with(Field::Q, x);
        let model = init_model(ModelConfig::new(4, 3, HeadWeights::QUESTION), 0).unwrap();
        let err = train_cdac(model, &feats, &TrainingSet::unlabeled((0..10).collect()), &cfg(), 0).unwrap_err();
        assert!(err.to_string().contains("DAC"));
    }

    #[test]
    fn dac_stops_when_thresholds_meet() {
        let (x, _) = blobs(8, 0);
        let feats = FieldMatrices::new().with(Field::Q, x);
        let model = init_model(ModelConfig::new(4, 3, HeadWeights::QUESTION), 0).unwrap();
        let config = TrainConfig { max_epochs: 100, batch_size: 8, ..cfg() };
        let out = train_dac(model, &feats, &(0..8).collect::<Vec<_>>(), &config, 0).unwrap();
        assert_eq!(out.log.len(), 46);
    }

    #[test]
    fn lone_trailing_example_is_skipped() {
        let (x, _) = blobs(9, 0);
        let feats = FieldMatrices::new().with(Field::Q, x);
        let model = init_model(ModelConfig::new(4, 3, HeadWeights::QUESTION), 0).unwrap();
        let config = TrainConfig { max_epochs: 1, batch_size: 4, ..cfg() };
        let out = train_dac(model, &feats, &(0..9).collect::<Vec<_>>(), &config, 0).unwrap();
        assert_eq!((out.log[0].batches, out.log[0].skipped_batches), (2, 1));
    }
}
