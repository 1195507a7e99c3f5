use super::engine::{self, ExampleResult, TrainLog};
use super::mask::sample_time_mask;
use super::{TrainConfig, TrainingExample};
use crate::ctc::{ctc_loss_and_grad, Alphabet, LogProbLattice};
use crate::error::{Error, Result};
use crate::numkit::{derive_seed, EncoderModel, ForwardMode, Head, ModelCheckpoint, SeededRng, TrainableMask};

#[derive(Clone, Debug)]
pub struct FinetuneOutcome {
    pub checkpoint: ModelCheckpoint,
    pub log: TrainLog,
}

/// Mean CTC loss with dropout off. Examples that cannot be aligned are skipped.
pub fn ctc_validation_loss(model: &EncoderModel<f64>, examples: &[TrainingExample]) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for ex in examples {
        let (logits, _) = model.forward(&ex.frames, ForwardMode::Deterministic)?;
        match ctc_loss_and_grad(&LogProbLattice::from_logits(&logits), &ex.labels) {
            Ok((loss, _)) => {
                total += loss;
                n += 1;
            }
            Err(Error::InfeasibleAlignment { .. } | Error::EmptyTarget) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(if n == 0 { f64::INFINITY } else { total / n as f64 })
}

fn example_gradient(
    model: &EncoderModel<f64>,
    ex: &TrainingExample,
    cfg: &TrainConfig,
    seed: u64,
    trainable: TrainableMask,
) -> ExampleResult {
    let t_len = ex.frames.rows();
    let span = cfg.mask_span.min(t_len);
    let mask = sample_time_mask(
        t_len,
        span,
        cfg.mask_target_fraction,
        &mut SeededRng::derived(seed, "mask"),
    )?;
    let mode = ForwardMode::Stochastic {
        seed: derive_seed(seed, "dropout"),
    };
    let (logits, cache) = model.forward_with(&ex.frames, Some(&mask), mode, Head::Projection)?;
    let lattice = LogProbLattice::from_logits(&logits);
    let (loss, grad) = match ctc_loss_and_grad(&lattice, &ex.labels) {
        Ok(v) => v,
        Err(Error::InfeasibleAlignment { .. } | Error::EmptyTarget) => return Ok(None),
        Err(e) => return Err(e),
    };
    let g = model.backward(&cache, &grad, trainable)?;
    Ok(Some((loss, g)))
}

/// CTC fine-tuning. The first `freeze_steps` optimizer updates touch only
/// the projection; afterwards encoder and projection train jointly. The
/// feature extractor never changes. When `init` carries a different alphabet
/// (or none), the projection is re-initialized for `alphabet`. The returned
/// checkpoint holds the parameters with the lowest validation loss.
pub fn finetune(
    init: &ModelCheckpoint,
    train: &[TrainingExample],
    valid: &[TrainingExample],
    alphabet: &Alphabet,
    cfg: &TrainConfig,
    stage: &str,
) -> Result<FinetuneOutcome> {
    cfg.validate()?;
    let mut model = init.model().clone();
    if init.alphabet() != Some(alphabet) || model.dims().vocab != alphabet.vocab_size() {
        model.reset_projection(alphabet.vocab_size(), derive_seed(cfg.seed, "projection"))?;
    }
    let vocab = alphabet.vocab_size() as u32;
    for ex in train.iter().chain(valid) {
        if let Some(&l) = ex.labels.iter().find(|&&l| l == 0 || l >= vocab) {
            return Err(Error::AlphabetMismatch(format!(
                "example {} has label {l} outside 1..{vocab}",
                ex.id
            )));
        }
    }

    let lengths: Vec<usize> = train.iter().map(|e| e.frames.rows()).collect();
    let k = cfg.freeze_steps;
    let phase = move |step: u64| {
        if step <= k {
            TrainableMask::projection_only()
        } else {
            TrainableMask::joint()
        }
    };
    let grad_fn = |m: &EncoderModel<f64>, i: usize, seed: u64, trainable: TrainableMask| {
        example_gradient(m, &train[i], cfg, seed, trainable)
    };
    let validate = (!valid.is_empty()).then_some(|m: &EncoderModel<f64>| ctc_validation_loss(m, valid));
    let log = engine::run(&mut model, cfg, &lengths, phase, grad_fn, validate)?;

    let checkpoint = ModelCheckpoint::new(
        model,
        stage,
        Some(init.id().to_string()),
        cfg.seed,
        Some(alphabet.clone()),
    )?;
    Ok(FinetuneOutcome { checkpoint, log })
}
