//! Backpropagation against central finite differences on random tiny models,
//! and the dropout expectation by Monte Carlo.

use dust::ctc::{ctc_loss_and_grad, LogProbLattice};
use dust::numkit::{
    derive_seed, Activation, EncoderModel, ForwardMode, Head, Matrix, ModelDims, ParamGroup, SeededRng, TrainableMask,
};
use dust::train::{masked_reconstruction_loss, sample_time_mask};

const ALL: TrainableMask = TrainableMask {
    feature_extractor: true,
    encoder: true,
    projection: true,
    recon_head: true,
};

struct Case {
    model: EncoderModel<f64>,
    frames: Matrix<f64>,
    mask: Option<Vec<bool>>,
    mode: ForwardMode,
    head: Head,
    labels: Vec<u32>,
}

impl Case {
    fn draw(seed: u64) -> Case {
        let mut rng = SeededRng::new(seed);
        let dims = ModelDims {
            frame_dim: rng.range_inclusive(1, 3),
            context: [1, 3, 5][rng.range_inclusive(0, 2)],
            hidden: rng.range_inclusive(2, 4),
            encoder_layers: rng.range_inclusive(1, 2),
            vocab: rng.range_inclusive(2, 4),
        };
        let activation = if rng.bernoulli(0.7) {
            Activation::Tanh
        } else {
            Activation::Linear
        };
        let p = if rng.bernoulli(0.5) { 0.3 } else { 0.0 };
        let mut model = EncoderModel::new(dims, activation, p, derive_seed(seed, "init")).unwrap();
        // Random mask embedding and biases so no block sits at a special point.
        let mut params = model.params();
        params.iter_mut().for_each(|v| *v += 0.2 * rng.normal());
        model.set_params(&params).unwrap();

        let t = rng.range_inclusive(2, 6);
        let frames = Matrix::from_fn(t, dims.frame_dim, |_, _| rng.normal());
        let mask = rng
            .bernoulli(0.6)
            .then(|| sample_time_mask(t, 1, 0.4, &mut rng).unwrap());
        let mode = if rng.bernoulli(0.5) {
            ForwardMode::Stochastic { seed: seed ^ 0xabcd }
        } else {
            ForwardMode::Deterministic
        };
        let head = if rng.bernoulli(0.5) {
            Head::Projection
        } else {
            Head::Reconstruction
        };
        let n = rng.range_inclusive(1, t.div_ceil(2));
        let labels = (0..n).map(|_| rng.range_inclusive(1, dims.vocab - 1) as u32).collect();
        Case {
            model,
            frames,
            mask,
            mode,
            head,
            labels,
        }
    }

    /// Loss and gradient with respect to the head output.
    fn loss(&self, model: &EncoderModel<f64>) -> Option<(f64, Matrix<f64>, dust::numkit::ForwardCache<f64>)> {
        let (y, cache) = model
            .forward_with(&self.frames, self.mask.as_deref(), self.mode, self.head)
            .unwrap();
        match self.head {
            Head::Projection => {
                let (l, g) = ctc_loss_and_grad(&LogProbLattice::from_logits(&y), &self.labels).ok()?;
                Some((l, g, cache))
            }
            Head::Reconstruction => {
                // Score every frame so unmasked cases still carry gradient.
                let mask = vec![true; self.frames.rows()];
                let (l, g) = masked_reconstruction_loss(&y, &self.frames, &mask);
                Some((l, g, cache))
            }
        }
    }
}

#[test]
fn backward_matches_finite_differences() {
    let eps = 1e-6;
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    for seed in 0..160u64 {
        let case = Case::draw(seed);
        let Some((_, out_grad, cache)) = case.loss(&case.model) else {
            continue;
        };
        let grad = case.model.backward(&cache, &out_grad, ALL).unwrap();
        let base = case.model.params();
        let mut probe = case.model.clone();
        for i in 0..base.len() {
            let mut p = base.clone();
            p[i] = base[i] + eps;
            probe.set_params(&p).unwrap();
            let plus = case.loss(&probe).unwrap().0;
            p[i] = base[i] - eps;
            probe.set_params(&p).unwrap();
            let minus = case.loss(&probe).unwrap().0;
            let fd = (plus - minus) / (2.0 * eps);
            let rel = (grad[i] - fd).abs() / grad[i].abs().max(fd.abs()).max(1e-3);
            assert!(
                rel < 1e-4,
                "seed {seed} param {i}: analytic {} vs numeric {fd}",
                grad[i]
            );
            worst = worst.max(rel);
        }
        checked += 1;
    }
    assert!(checked >= 100, "only {checked} feasible models");
    println!("worst relative error {worst:e} over {checked} models");
}

#[test]
fn frozen_groups_get_exactly_zero() {
    for seed in 0..40u64 {
        let case = Case::draw(seed);
        let Some((_, out_grad, cache)) = case.loss(&case.model) else {
            continue;
        };
        let layout = case.model.layout();
        for trainable in [
            TrainableMask::projection_only(),
            TrainableMask::joint(),
            TrainableMask::pretraining(),
        ] {
            let grad = case.model.backward(&cache, &out_grad, trainable).unwrap();
            let mut offset = 0;
            for block in &layout {
                if !trainable.includes(block.group) {
                    assert!(grad[offset..offset + block.len()].iter().all(|&g| g == 0.0));
                }
                offset += block.len();
            }
        }
    }
}

#[test]
fn stale_cache_is_rejected() {
    let case = Case::draw(3);
    let (_, out_grad, cache) = case.loss(&case.model).unwrap();
    let mut changed = case.model.clone();
    changed.set_params(&case.model.params()).unwrap();
    assert!(changed.backward(&cache, &out_grad, ALL).is_err());
}

#[test]
fn mask_embedding_belongs_to_the_extractor_group() {
    let case = Case::draw(5);
    let layout = case.model.layout();
    assert_eq!(layout[0].group, ParamGroup::FeatureExtractor);
    assert_eq!(layout[0].len(), case.model.dims().frame_dim);
}

#[test]
fn dropout_mean_matches_deterministic_logits() {
    // With one encoder layer the projection is linear in the dropped
    // activations, so inverted dropout leaves the expected logits unchanged.
    let dims = ModelDims {
        frame_dim: 3,
        context: 3,
        hidden: 6,
        encoder_layers: 1,
        vocab: 4,
    };
    let model = EncoderModel::<f64>::new(dims, Activation::Tanh, 0.3, 21).unwrap();
    let mut rng = SeededRng::new(22);
    let frames = Matrix::from_fn(5, 3, |_, _| rng.normal());
    let (det, _) = model.forward(&frames, ForwardMode::Deterministic).unwrap();
    let n = 10_000;
    let mut mean = Matrix::zeros(5, 4);
    for s in 0..n {
        let (y, _) = model.forward(&frames, ForwardMode::Stochastic { seed: s }).unwrap();
        for (m, v) in mean.as_mut_slice().iter_mut().zip(y.as_slice()) {
            *m += v / n as f64;
        }
    }
    let scale = det.as_slice().iter().map(|v| v.abs()).fold(0.0, f64::max);
    for (m, d) in mean.as_slice().iter().zip(det.as_slice()) {
        assert!((m - d).abs() <= 0.02 * scale, "{m} vs {d}");
    }
}
