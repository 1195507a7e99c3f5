use super::engine::{self, ExampleResult, TrainLog};
use super::mask::sample_time_mask;
use super::TrainConfig;
use crate::error::{Error, Result};
use crate::numkit::{derive_seed, EncoderModel, ForwardMode, Head, Matrix, ModelCheckpoint, SeededRng, TrainableMask};

#[derive(Clone, Debug)]
pub struct PretrainOutcome {
    pub checkpoint: ModelCheckpoint,
    pub log: TrainLog,
}

/// Mean squared error between reconstruction and input over masked frames
/// only, and its gradient with respect to the reconstruction.
pub fn masked_reconstruction_loss(recon: &Matrix<f64>, frames: &Matrix<f64>, mask: &[bool]) -> (f64, Matrix<f64>) {
    let d = frames.cols();
    let masked = mask.iter().filter(|&&m| m).count();
    let mut grad = Matrix::zeros(frames.rows(), d);
    if masked == 0 {
        return (0.0, grad);
    }
    let norm = 1.0 / (masked * d) as f64;
    let mut loss = 0.0;
    for (t, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        for j in 0..d {
            let diff = recon.get(t, j) - frames.get(t, j);
            loss += diff * diff * norm;
            grad.set(t, j, 2.0 * diff * norm);
        }
    }
    (loss, grad)
}

fn example_gradient(
    model: &EncoderModel<f64>,
    frames: &Matrix<f64>,
    cfg: &TrainConfig,
    seed: u64,
    trainable: TrainableMask,
) -> ExampleResult {
    let span = cfg.mask_span.min(frames.rows());
    let mask = sample_time_mask(
        frames.rows(),
        span,
        cfg.mask_target_fraction,
        &mut SeededRng::derived(seed, "mask"),
    )?;
    let mode = ForwardMode::Stochastic {
        seed: derive_seed(seed, "dropout"),
    };
    let (recon, cache) = model.forward_with(frames, Some(&mask), mode, Head::Reconstruction)?;
    let (loss, grad_out) = masked_reconstruction_loss(&recon, frames, &mask);
    let g = model.backward(&cache, &grad_out, trainable)?;
    Ok(Some((loss, g)))
}

/// Masked-frame reconstruction on unlabeled source frames: masked frames are
/// replaced by the learned mask embedding and the reconstruction head must
/// recover them from context. Trains feature extractor, encoder and
/// reconstruction head.
pub fn pretrain_masked_reconstruction(
    model: EncoderModel<f64>,
    source: &[Matrix<f64>],
    cfg: &TrainConfig,
) -> Result<PretrainOutcome> {
    if source.is_empty() {
        return Err(Error::Config("pre-training corpus is empty".into()));
    }
    let mut model = model;
    let lengths: Vec<usize> = source.iter().map(Matrix::rows).collect();
    let grad_fn = |m: &EncoderModel<f64>, i: usize, seed: u64, trainable: TrainableMask| {
        example_gradient(m, &source[i], cfg, seed, trainable)
    };
    let log = engine::run(
        &mut model,
        cfg,
        &lengths,
        |_| TrainableMask::pretraining(),
        grad_fn,
        None::<fn(&EncoderModel<f64>) -> Result<f64>>,
    )?;
    let checkpoint = ModelCheckpoint::new(model, "pretrain", None, cfg.seed, None)?;
    Ok(PretrainOutcome { checkpoint, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::{Activation, ModelDims};

    #[test]
    fn empty_mask_gives_zero_loss_and_gradient() {
        let dims = ModelDims {
            frame_dim: 3,
            context: 3,
            hidden: 6,
            encoder_layers: 1,
            vocab: 4,
        };
        let model = EncoderModel::<f64>::new(dims, Activation::Tanh, 0.1, 2).unwrap();
        let frames = Matrix::from_fn(8, 3, |i, j| (i as f64 - j as f64) * 0.1);
        let mask = vec![false; 8];
        let (recon, cache) = model
            .forward_with(&frames, Some(&mask), ForwardMode::Deterministic, Head::Reconstruction)
            .unwrap();
        let (loss, grad_out) = masked_reconstruction_loss(&recon, &frames, &mask);
        assert_eq!(loss, 0.0);
        let g = model.backward(&cache, &grad_out, TrainableMask::pretraining()).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_epochs_returns_init() {
        let dims = ModelDims {
            frame_dim: 2,
            context: 3,
            hidden: 4,
            encoder_layers: 1,
            vocab: 3,
        };
        let model = EncoderModel::<f64>::new(dims, Activation::Tanh, 0.1, 2).unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let out = pretrain_masked_reconstruction(model.clone(), &[Matrix::zeros(5, 2)], &cfg).unwrap();
        assert_eq!(out.checkpoint.model(), &model);
        assert_eq!(out.checkpoint.stage(), "pretrain");
    }
}
