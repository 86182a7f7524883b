//! The epoch loop: seeded shuffling, training-mode passes, ℓ2, Adam,
//! per-epoch evaluation, checkpoints and the metrics log.
//!
//! Randomness: initial weights come from the `Init` stream of the seed. A
//! master generator, whose state is saved in checkpoints, hands out one
//! shuffle seed and one dropout seed per epoch, so resuming from a
//! checkpoint replays exactly the batches an uninterrupted run would see.

use std::ops::ControlFlow;
use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::audio::batch::{assemble, make_batches};
use crate::audio::dataset::ClipSet;
use crate::error::{Error, Result};
use crate::nn::Mode;
use crate::rng::{RandomSource, Stream};
use crate::tensor::Tensor;
use crate::train::adam::{adam_step, apply_l2, AdamConfig, AdamState};
use crate::train::checkpoint::Checkpoint;
use crate::train::metrics::{EpochReport, MetricsLog};
use crate::zoo::{ArchitectureSpec, ModelGraph, INPUT_SAMPLES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub arch: String,
    pub num_classes: usize,
    /// Channel multiplier applied to every conv layer.
    pub width: f64,
    pub input_samples: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub l2: f64,
    /// Leave batch-norm gamma and beta out of the ℓ2 term.
    pub l2_exclude_bn: bool,
    pub seed: u64,
    pub test_fold: u8,
    pub val_fold: Option<u8>,
    pub checkpoint_path: Option<PathBuf>,
    /// Save every this many epochs; 0 saves only at the end.
    pub checkpoint_every: usize,
    pub log_path: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            arch: "m18".into(),
            num_classes: 10,
            width: 1.0,
            input_samples: INPUT_SAMPLES,
            epochs: 100,
            batch_size: 32,
            adam: AdamConfig::default(),
            l2: 1e-4,
            l2_exclude_bn: false,
            seed: 0,
            test_fold: 10,
            val_fold: Some(9),
            checkpoint_path: None,
            checkpoint_every: 0,
            log_path: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.epochs < 1 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size < 2 {
            return bad(format!("batch size {} is below 2", self.batch_size));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return bad(format!("l2 coefficient {} must be non-negative", self.l2));
        }
        if !(self.adam.lr > 0.0 && self.adam.lr.is_finite()) {
            return bad(format!("learning rate {} must be positive", self.adam.lr));
        }
        Ok(())
    }

    pub fn spec(&self) -> Result<ArchitectureSpec> {
        let mut spec = ArchitectureSpec::from_name(&self.arch, self.num_classes)?;
        if self.width != 1.0 {
            spec = spec.with_width(self.width)?;
        }
        Ok(spec.with_input_samples(self.input_samples))
    }
}

/// Accuracy and confusion matrix (`confusion[true][predicted]`).
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    pub confusion: Vec<Vec<usize>>,
}

/// Index of the largest value; the first wins ties.
pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Inference-mode accuracy over `set`, processed `batch_size` clips at a
/// time. The model is not modified.
pub fn evaluate(model: &ModelGraph<f32>, set: &ClipSet, batch_size: usize) -> Result<Evaluation> {
    let k = model.num_classes();
    let mut confusion = vec![vec![0usize; k]; k];
    let samples = model.spec().input_samples;
    let order: Vec<usize> = (0..set.len()).collect();
    for chunk in order.chunks(batch_size.max(1)) {
        let batch = assemble(set, chunk, samples)?;
        let probs = model.infer(&batch.x)?;
        for (row, &label) in probs.data().chunks(k).zip(&batch.labels) {
            if label >= k {
                return Err(Error::LabelOutOfRange { label, classes: k });
            }
            confusion[label][argmax(row)] += 1;
        }
    }
    let total = set.len();
    let correct = (0..k).map(|i| confusion[i][i]).sum();
    Ok(Evaluation {
        accuracy: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
        correct,
        total,
        confusion,
    })
}

/// Mean loss and accuracy of one training epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub loss: f64,
    pub accuracy: f64,
}

pub struct Trainer {
    pub config: TrainConfig,
    pub model: ModelGraph<f32>,
    pub adam: AdamState<f32>,
    master: RandomSource,
    /// Completed epochs.
    pub epoch: usize,
    l2_mask: Vec<bool>,
}

fn l2_mask(model: &ModelGraph<f32>, exclude_bn: bool) -> Vec<bool> {
    model
        .param_names()
        .iter()
        .map(|n| !(exclude_bn && n.contains(".bn.")))
        .collect()
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut init = RandomSource::derive(config.seed, Stream::Init, 0);
        let model = ModelGraph::from_spec(config.spec()?, &mut init)?;
        let adam = AdamState::new(config.adam, model.params().into_iter().map(|(_, t)| t));
        Ok(Trainer {
            l2_mask: l2_mask(&model, config.l2_exclude_bn),
            master: RandomSource::derive(config.seed, Stream::Shuffle, 0),
            config,
            model,
            adam,
            epoch: 0,
        })
    }

    /// Continues from `ck`. `config` supplies the run settings (epochs,
    /// paths); its architecture must match the checkpoint's.
    pub fn resume(ck: &Checkpoint, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let spec = config.spec()?;
        if spec.name != ck.arch || spec.num_classes != ck.num_classes || spec.width != ck.width {
            return Err(crate::train::checkpoint::CheckpointError::ArchMismatch {
                expected: spec.name,
                found: ck.arch.clone(),
            }
            .into());
        }
        let mut model = ModelGraph::from_spec(spec, &mut RandomSource::new(0))?;
        ck.restore_into(&mut model)?;
        let adam = match &ck.adam {
            Some(a) => a.clone(),
            None => AdamState::new(config.adam, model.params().into_iter().map(|(_, t)| t)),
        };
        Ok(Trainer {
            l2_mask: l2_mask(&model, config.l2_exclude_bn),
            master: RandomSource::from_state(ck.rng),
            config,
            model,
            adam,
            epoch: ck.epoch,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::capture(&self.model, Some(&self.adam), self.epoch, self.master.state(), Some(&self.config))
    }

    /// One optimizer step on a batch; returns the data loss and the number
    /// of correct training-mode predictions.
    pub fn step(&mut self, x: &Tensor<f32>, labels: &[usize], dropout: &mut RandomSource, batch_id: usize) -> Result<(f64, usize)> {
        self.model.set_mode(Mode::Train);
        let pass = self.model.forward_train(x, labels, dropout)?;
        let loss = pass.loss();
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch: self.epoch + 1,
                batch: batch_id,
            });
        }
        let k = self.model.num_classes();
        let correct = pass
            .probabilities()
            .data()
            .chunks(k)
            .zip(labels)
            .filter(|(row, &l)| argmax(row) == l)
            .count();
        let mut grads = pass.backward()?;
        drop(pass);
        {
            let params: Vec<&Tensor<f32>> = self.model.params().into_iter().map(|(_, t)| t).collect();
            apply_l2(&mut grads, &params, &self.l2_mask, self.config.l2)?;
        }
        if grads.iter().any(|g| !g.all_finite()) {
            return Err(Error::NonFiniteLoss {
                epoch: self.epoch + 1,
                batch: batch_id,
            });
        }
        let mut params: Vec<&mut Tensor<f32>> = self.model.params_mut().into_iter().map(|(_, t)| t).collect();
        adam_step(&mut params, &grads, &mut self.adam)?;
        self.model.set_mode(Mode::Infer);
        Ok((loss, correct))
    }

    /// One pass over `train` in a freshly shuffled order.
    pub fn run_epoch(&mut self, train: &ClipSet) -> Result<EpochStats> {
        if train.is_empty() {
            return Err(Error::EmptySplit);
        }
        let mut shuffle = RandomSource::new(self.master.next_u64());
        let mut dropout = RandomSource::new(self.master.next_u64());
        let batches = make_batches(train.len(), self.config.batch_size, &mut shuffle)?;
        let (mut loss_sum, mut correct, mut seen) = (0.0, 0usize, 0usize);
        for (b, idx) in batches.iter().enumerate() {
            let batch = assemble(train, idx, self.config.input_samples)?;
            let (loss, ok) = self.step(&batch.x, &batch.labels, &mut dropout, b)?;
            loss_sum += loss * idx.len() as f64;
            correct += ok;
            seen += idx.len();
        }
        self.epoch += 1;
        Ok(EpochStats {
            loss: loss_sum / seen as f64,
            accuracy: correct as f64 / seen as f64,
        })
    }

    /// Runs until `config.epochs` epochs are complete (counting any already
    /// done before a resume) or `on_epoch` breaks. Evaluates the optional
    /// splits after every epoch, appends to the metrics log and writes
    /// checkpoints at the configured cadence and at the end.
    pub fn train(
        &mut self,
        train: &ClipSet,
        test: Option<&ClipSet>,
        val: Option<&ClipSet>,
        mut on_epoch: impl FnMut(&EpochReport, &ModelGraph<f32>) -> ControlFlow<()>,
    ) -> Result<Vec<EpochReport>> {
        let log = self.config.log_path.as_deref().map(MetricsLog::open).transpose()?;
        let mut reports = Vec::new();
        while self.epoch < self.config.epochs {
            let start = Instant::now();
            let stats = self.run_epoch(train)?;
            let eval = |s: Option<&ClipSet>| -> Result<Option<f64>> {
                s.filter(|s| !s.is_empty())
                    .map(|s| evaluate(&self.model, s, self.config.batch_size).map(|e| e.accuracy))
                    .transpose()
            };
            let report = EpochReport {
                epoch: self.epoch,
                train_loss: stats.loss,
                train_acc: stats.accuracy,
                test_acc: eval(test)?,
                val_acc: eval(val)?,
                seconds: start.elapsed().as_secs_f64(),
            };
            log::info!(
                "epoch {} loss {:.4} train_acc {:.4} val_acc {} test_acc {} ({:.1}s)",
                report.epoch,
                report.train_loss,
                report.train_acc,
                report.val_acc.map_or("-".into(), |a| format!("{a:.4}")),
                report.test_acc.map_or("-".into(), |a| format!("{a:.4}")),
                report.seconds
            );
            if let Some(log) = &log {
                log.append(&report)?;
            }
            let every = self.config.checkpoint_every;
            if let Some(path) = &self.config.checkpoint_path {
                if every > 0 && self.epoch.is_multiple_of(every) {
                    self.checkpoint().save(path)?;
                }
            }
            let flow = on_epoch(&report, &self.model);
            reports.push(report);
            if flow.is_break() {
                break;
            }
        }
        if let Some(path) = &self.config.checkpoint_path {
            self.checkpoint().save(path)?;
        }
        Ok(reports)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::synthetic::sine_vs_noise;

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            arch: "m3".into(),
            num_classes: 2,
            width: 1.0 / 32.0,
            input_samples: 800,
            epochs: 3,
            batch_size: 4,
            seed: 42,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig { batch_size: 1, ..tiny_config() }.validate().is_err());
        assert!(TrainConfig { epochs: 0, ..tiny_config() }.validate().is_err());
        assert!(TrainConfig { l2: -1.0, ..tiny_config() }.validate().is_err());
    }

    #[test]
    fn empty_split_is_an_error() {
        let mut t = Trainer::new(tiny_config()).unwrap();
        assert!(matches!(t.run_epoch(&ClipSet::default()), Err(Error::EmptySplit)));
    }

    #[test]
    fn same_seed_same_trajectory() {
        let data = sine_vs_noise(12, 800, 1);
        let run = || {
            let mut t = Trainer::new(tiny_config()).unwrap();
            let r = t.train(&data, None, None, |_, _| ControlFlow::Continue(())).unwrap();
            (r.iter().map(|e| e.train_loss.to_bits()).collect::<Vec<_>>(), t.model.state_digest())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn resume_matches_uninterrupted() {
        let data = sine_vs_noise(10, 800, 2);
        let mut full = Trainer::new(tiny_config()).unwrap();
        full.train(&data, None, None, |_, _| ControlFlow::Continue(())).unwrap();

        let mut first = Trainer::new(TrainConfig { epochs: 2, ..tiny_config() }).unwrap();
        first.train(&data, None, None, |_, _| ControlFlow::Continue(())).unwrap();
        let ck = Checkpoint::from_bytes(&first.checkpoint().to_bytes()).unwrap();
        let mut resumed = Trainer::resume(&ck, tiny_config()).unwrap();
        let reports = resumed.train(&data, None, None, |_, _| ControlFlow::Continue(())).unwrap();
        assert_eq!(reports.len(), 1);
        assert_eq!(resumed.model.state_digest(), full.model.state_digest());
        assert_eq!(resumed.adam, full.adam);
    }

    #[test]
    fn evaluation_is_pure_and_consistent() {
        let data = sine_vs_noise(9, 800, 3);
        let t = Trainer::new(tiny_config()).unwrap();
        let before = t.model.state_digest();
        let e = evaluate(&t.model, &data, 4).unwrap();
        assert_eq!(t.model.state_digest(), before);
        assert_eq!(e.total, 9);
        for (class, row) in e.confusion.iter().enumerate() {
            assert_eq!(row.iter().sum::<usize>(), data.labels.iter().filter(|&&l| l == class).count());
        }
    }

    #[test]
    fn argmax_first_wins() {
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
    }
}
