//! Overfit smoke run: a narrow M3 on synthetic sine-versus-noise clips
//! must reach perfect inference-mode training accuracy.

use std::ops::ControlFlow;

use crate::audio::synthetic::sine_vs_noise;
use crate::error::Result;
use crate::train::adam::AdamConfig;
use crate::train::engine::{evaluate, TrainConfig, Trainer};
use crate::zoo::INPUT_SAMPLES;

#[derive(Debug, Clone, PartialEq)]
pub struct SmokeConfig {
    pub arch: String,
    pub width: f64,
    pub clips: usize,
    pub samples: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for SmokeConfig {
    fn default() -> Self {
        SmokeConfig {
            arch: "m3".into(),
            width: 1.0 / 16.0,
            clips: 32,
            samples: INPUT_SAMPLES,
            max_epochs: 50,
            batch_size: 8,
            lr: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmokeReport {
    /// Training-mode mean loss per epoch.
    pub losses: Vec<f64>,
    /// Inference-mode accuracy on the training clips after each epoch.
    pub accuracies: Vec<f64>,
    /// First epoch (1-based) at which accuracy reached 1.0.
    pub solved_at: Option<usize>,
}

impl SmokeReport {
    pub fn passed(&self) -> bool {
        self.solved_at.is_some()
    }
}

impl SmokeConfig {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            arch: self.arch.clone(),
            num_classes: 2,
            width: self.width,
            input_samples: self.samples,
            epochs: self.max_epochs,
            batch_size: self.batch_size,
            adam: AdamConfig {
                lr: self.lr,
                ..AdamConfig::default()
            },
            seed: self.seed,
            val_fold: None,
            ..TrainConfig::default()
        }
    }
}

/// Trains until every clip is classified correctly or `max_epochs` pass.
pub fn run_smoke(cfg: &SmokeConfig) -> Result<SmokeReport> {
    let data = sine_vs_noise(cfg.clips, cfg.samples, cfg.seed);
    let mut trainer = Trainer::new(cfg.train_config())?;
    let mut accuracies = Vec::new();
    let mut failure = None;
    let reports = trainer.train(&data, None, None, |report, model| match evaluate(model, &data, cfg.batch_size) {
        Ok(e) => {
            log::info!("smoke epoch {} loss {:.4} accuracy {:.3}", report.epoch, report.train_loss, e.accuracy);
            accuracies.push(e.accuracy);
            if e.accuracy == 1.0 {
                ControlFlow::Break(())
            } else {
                ControlFlow::Continue(())
            }
        }
        Err(err) => {
            failure = Some(err);
            ControlFlow::Break(())
        }
    })?;
    if let Some(err) = failure {
        return Err(err);
    }
    let solved_at = accuracies.iter().position(|&a| a == 1.0).map(|i| i + 1);
    Ok(SmokeReport {
        losses: reports.iter().map(|r| r.train_loss).collect(),
        accuracies,
        solved_at,
    })
}
