//! Fine-tuning and pre-training invariants: frozen groups, zero epochs,
//! determinism, divergence handling, masking coverage and schedule shape.

use dust::ctc::Alphabet;
use dust::experiment::{Experiment, ExperimentConfig, LOG_FILE};
use dust::numkit::{Activation, EncoderModel, Matrix, ModelCheckpoint, ModelDims, ParamGroup, SeededRng};
use dust::store;
use dust::train::{
    finetune, lr_at, pretrain_masked_reconstruction, sample_time_mask, TrainConfig, TrainLog, TrainingExample,
};
use dust::Error;

fn alphabet() -> Alphabet {
    Alphabet::with_space("abcd").unwrap()
}

fn init(seed: u64, with_alphabet: bool) -> ModelCheckpoint {
    let alpha = alphabet();
    let dims = ModelDims {
        frame_dim: 4,
        context: 3,
        hidden: 10,
        encoder_layers: 2,
        vocab: alpha.vocab_size(),
    };
    let model = EncoderModel::new(dims, Activation::Tanh, 0.1, seed).unwrap();
    ModelCheckpoint::new(model, "pretrain", None, seed, with_alphabet.then_some(alpha)).unwrap()
}

fn examples(seed: u64, n: usize) -> Vec<TrainingExample> {
    let alpha = alphabet();
    let mut rng = SeededRng::new(seed);
    let texts = ["ab cd", "dab", "c a", "bad cab"];
    (0..n)
        .map(|i| {
            let text = texts[i % texts.len()];
            let frames = Matrix::from_fn(3 * text.len(), 4, |_, _| rng.normal());
            TrainingExample::new(format!("x{i}"), frames, text, &alpha).unwrap()
        })
        .collect()
}

fn cfg() -> TrainConfig {
    TrainConfig {
        max_lr: 3e-3,
        warmup_steps: 4,
        freeze_steps: 3,
        epochs: 3,
        mask_span: 2,
        mask_target_fraction: 0.2,
        frame_budget_per_batch: 60,
        grad_accumulation: 2,
        seed: 5,
    }
}

fn group(model: &EncoderModel<f64>, g: ParamGroup) -> Vec<u64> {
    model.group_params(g).iter().map(|v| v.to_bits()).collect()
}

#[test]
fn feature_extractor_and_recon_head_never_move() {
    let start = init(1, true);
    let out = finetune(
        &start,
        &examples(2, 12),
        &examples(3, 4),
        &alphabet(),
        &cfg(),
        "finetune",
    )
    .unwrap();
    let (a, b) = (start.model(), out.checkpoint.model());
    assert_eq!(
        group(a, ParamGroup::FeatureExtractor),
        group(b, ParamGroup::FeatureExtractor)
    );
    assert_eq!(group(a, ParamGroup::ReconHead), group(b, ParamGroup::ReconHead));
    assert_ne!(group(a, ParamGroup::Encoder), group(b, ParamGroup::Encoder));
    assert_ne!(group(a, ParamGroup::Projection), group(b, ParamGroup::Projection));
}

#[test]
fn encoder_stays_frozen_during_projection_only_steps() {
    let start = init(1, true);
    let c = TrainConfig {
        freeze_steps: 1_000,
        ..cfg()
    };
    let out = finetune(&start, &examples(2, 12), &[], &alphabet(), &c, "finetune").unwrap();
    assert!(out.log.updates > 0 && out.log.updates < 1_000);
    let (a, b) = (start.model(), out.checkpoint.model());
    assert_eq!(group(a, ParamGroup::Encoder), group(b, ParamGroup::Encoder));
    assert_ne!(group(a, ParamGroup::Projection), group(b, ParamGroup::Projection));
}

#[test]
fn zero_epochs_returns_the_initialization() {
    let start = init(4, true);
    let c = TrainConfig { epochs: 0, ..cfg() };
    let out = finetune(&start, &examples(2, 6), &examples(3, 2), &alphabet(), &c, "finetune").unwrap();
    assert_eq!(out.checkpoint.model().params(), start.model().params());
    assert_eq!(out.log, TrainLog::default());

    let frames: Vec<Matrix<f64>> = examples(5, 4).into_iter().map(|e| e.frames).collect();
    let pre = pretrain_masked_reconstruction(start.model().clone(), &frames, &c).unwrap();
    assert_eq!(pre.checkpoint.model().params(), start.model().params());
    assert_eq!(pre.checkpoint.stage(), "pretrain");
}

#[test]
fn new_alphabet_reinitializes_only_the_projection() {
    let start = init(6, false);
    let c = TrainConfig { epochs: 0, ..cfg() };
    let out = finetune(&start, &examples(2, 4), &[], &alphabet(), &c, "finetune").unwrap();
    let (a, b) = (start.model(), out.checkpoint.model());
    assert_ne!(group(a, ParamGroup::Projection), group(b, ParamGroup::Projection));
    assert_eq!(group(a, ParamGroup::Encoder), group(b, ParamGroup::Encoder));
    assert_eq!(out.checkpoint.parent(), Some(start.id()));
}

#[test]
fn training_is_deterministic_across_thread_counts() {
    let start = init(7, true);
    let (train, valid) = (examples(2, 16), examples(3, 4));
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| finetune(&start, &train, &valid, &alphabet(), &cfg(), "finetune").unwrap())
    };
    let a = run(1);
    let b = run(3);
    assert_eq!(a.checkpoint.to_bytes(), b.checkpoint.to_bytes());
    assert_eq!(a.log, b.log);
}

#[test]
fn best_validation_epoch_is_kept() {
    let start = init(8, true);
    let out = finetune(
        &start,
        &examples(2, 12),
        &examples(3, 4),
        &alphabet(),
        &cfg(),
        "finetune",
    )
    .unwrap();
    let best = out.log.best_epoch.unwrap();
    let losses: Vec<f64> = out.log.epochs.iter().map(|e| e.valid_loss.unwrap()).collect();
    let min = losses.iter().cloned().fold(f64::INFINITY, f64::min);
    assert_eq!(losses[best], min);
    let again = dust::train::ctc_validation_loss(out.checkpoint.model(), &examples(3, 4)).unwrap();
    assert_eq!(again, min);
}

#[test]
fn runaway_learning_rate_reports_divergence() {
    let start = init(9, true);
    let c = TrainConfig {
        max_lr: 1e300,
        warmup_steps: 1,
        freeze_steps: 0,
        epochs: 4,
        ..cfg()
    };
    match finetune(&start, &examples(2, 12), &[], &alphabet(), &c, "finetune") {
        Err(Error::Diverged { last_finite, .. }) => {
            assert!(last_finite.model().params().iter().all(|p| p.is_finite()));
            assert_eq!(last_finite.stage(), "diverged");
        }
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn mask_coverage_matches_target() {
    let mut rng = SeededRng::new(77);
    let (t, draws) = (1000, 1000);
    let masked: usize = (0..draws)
        .map(|_| {
            sample_time_mask(t, 10, 0.65, &mut rng)
                .unwrap()
                .iter()
                .filter(|&&m| m)
                .count()
        })
        .sum();
    let frac = masked as f64 / (t * draws) as f64;
    assert!((frac - 0.65).abs() <= 0.05, "masked fraction {frac}");
}

#[test]
fn schedule_peaks_at_warmup_and_decays() {
    assert!((lr_at(8000, 1e-4, 8000).unwrap() - 1e-4).abs() < 1e-12);
    assert!((lr_at(4000, 1e-4, 8000).unwrap() - 5e-5).abs() < 1e-12);
    assert!((lr_at(32000, 1e-4, 8000).unwrap() - 5e-5).abs() < 1e-12);
    let mut prev = 0.0;
    for s in 1..=100 {
        let lr = lr_at(s, 1.0, 40).unwrap();
        if s <= 40 {
            assert!(lr > prev);
        } else {
            assert!(lr < prev);
        }
        prev = lr;
    }
}

#[test]
fn reference_pretraining_loss_falls_each_epoch() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::default();
    cfg.pretrain.epochs = 3;
    let exp = Experiment::open(dir.path(), cfg).unwrap();
    exp.generate_data().unwrap();
    exp.run_pretrain().unwrap();
    let log: TrainLog = store::read_json(&exp.dir().stage_dir("pretrain").join(LOG_FILE)).unwrap();
    let losses: Vec<f64> = log.epochs.iter().map(|e| e.train_loss).collect();
    assert_eq!(losses.len(), 3);
    assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
}
