//! Training procedures: learning-rate schedule, time masking, frame-budget
//! batching, CTC fine-tuning and masked-frame reconstruction pre-training.

mod batch;
mod engine;
mod finetune;
mod mask;
mod pretrain;
mod schedule;

use serde::{Deserialize, Serialize};

pub use batch::{pack_batches, updates_per_epoch};
pub use engine::{EpochStats, TrainLog};
pub use finetune::{ctc_validation_loss, finetune, FinetuneOutcome};
pub use mask::{apply_time_mask, sample_time_mask, span_start_probability};
pub use pretrain::{masked_reconstruction_loss, pretrain_masked_reconstruction, PretrainOutcome};
pub use schedule::lr_at;

use crate::ctc::Alphabet;
use crate::error::{Error, Result};
use crate::numkit::Matrix;

/// Every fine-tuning / pre-training hyperparameter.
///
/// `frame_budget_per_batch` replaces a raw-audio sample budget: batches are
/// packed from whole utterances until the next one would push the total frame
/// count past the budget. Optimizer steps (the `step` of [`lr_at`]) happen
/// once every `grad_accumulation` micro-batches; the first `freeze_steps`
/// of them update only the CTC projection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub max_lr: f64,
    pub warmup_steps: u64,
    pub freeze_steps: u64,
    pub epochs: usize,
    pub mask_span: usize,
    pub mask_target_fraction: f64,
    pub frame_budget_per_batch: usize,
    pub grad_accumulation: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    /// Desk-scale defaults: the published warmup and freeze lengths scaled
    /// down 20x.
    fn default() -> Self {
        TrainConfig {
            max_lr: 1e-3,
            warmup_steps: 400,
            freeze_steps: 200,
            epochs: 60,
            mask_span: 10,
            mask_target_fraction: 0.65,
            frame_budget_per_batch: 2000,
            grad_accumulation: 4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// The published full-scale fine-tuning recipe (CTC on wav2vec2-sized
    /// models). Kept for reference; far too slow for this crate's models.
    pub fn published() -> Self {
        TrainConfig {
            max_lr: 1e-4,
            warmup_steps: 8000,
            freeze_steps: 4000,
            epochs: 300,
            mask_span: 10,
            mask_target_fraction: 0.65,
            frame_budget_per_batch: 2000,
            grad_accumulation: 4,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.mask_target_fraction > 0.0 && self.mask_target_fraction < 1.0) {
            return bad(format!(
                "mask_target_fraction must be in (0, 1), got {}",
                self.mask_target_fraction
            ));
        }
        if self.mask_span == 0 {
            return bad("mask_span must be >= 1".into());
        }
        if self.grad_accumulation == 0 {
            return bad("grad_accumulation must be >= 1".into());
        }
        if self.warmup_steps == 0 {
            return bad("warmup_steps must be >= 1".into());
        }
        if self.frame_budget_per_batch == 0 {
            return bad("frame_budget_per_batch must be >= 1".into());
        }
        if !(self.max_lr >= 0.0 && self.max_lr.is_finite()) {
            return bad(format!("max_lr must be finite and >= 0, got {}", self.max_lr));
        }
        Ok(())
    }
}

/// A supervised example: frames plus CTC label sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingExample {
    pub id: String,
    pub frames: Matrix<f64>,
    pub labels: Vec<u32>,
}

impl TrainingExample {
    pub fn new(id: impl Into<String>, frames: Matrix<f64>, text: &str, alphabet: &Alphabet) -> Result<Self> {
        Ok(TrainingExample {
            id: id.into(),
            frames,
            labels: alphabet.encode(text)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = TrainConfig {
            seed: 9,
            ..TrainConfig::default()
        };
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(toml::from_str::<TrainConfig>(&text).unwrap(), cfg);
        let partial: TrainConfig = toml::from_str("epochs = 3").unwrap();
        assert_eq!(partial.epochs, 3);
        assert_eq!(partial.warmup_steps, 400);
    }

    #[test]
    fn validation_rejects_bad_fractions() {
        let mut cfg = TrainConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.mask_target_fraction = 1.0;
        assert!(cfg.validate().is_err());
        cfg.mask_target_fraction = 0.5;
        cfg.grad_accumulation = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn published_preset_matches_recipe() {
        let p = TrainConfig::published();
        assert_eq!((p.max_lr, p.warmup_steps, p.freeze_steps), (1e-4, 8000, 4000));
        assert_eq!(
            (p.mask_span, p.mask_target_fraction, p.grad_accumulation),
            (10, 0.65, 4)
        );
    }
}
