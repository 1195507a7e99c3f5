//! Framewise encoder: windowed affine feature extractor, MLP encoder with
//! dropout, linear CTC projection and a frame reconstruction head.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::rng::SeededRng;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

static NEXT_REVISION: AtomicU64 = AtomicU64::new(1);

fn next_revision() -> u64 {
    NEXT_REVISION.fetch_add(1, Ordering::Relaxed)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Linear,
}

impl Activation {
    #[inline]
    fn apply<S: Scalar>(self, z: S) -> S {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(S::zero()),
            Activation::Linear => z,
        }
    }

    /// Derivative expressed through the activation output.
    #[inline]
    fn derivative_from_output<S: Scalar>(self, a: S) -> S {
        match self {
            Activation::Tanh => S::one() - a * a,
            Activation::Relu => {
                if a > S::zero() {
                    S::one()
                } else {
                    S::zero()
                }
            }
            Activation::Linear => S::one(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    /// Input frame dimension `d`.
    pub frame_dim: usize,
    /// Frames concatenated by the feature extractor (odd, centered).
    pub context: usize,
    pub hidden: usize,
    pub encoder_layers: usize,
    /// Output vocabulary size including blank.
    pub vocab: usize,
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        if self.frame_dim == 0 || self.hidden == 0 || self.vocab < 2 {
            return Err(Error::Config(format!("degenerate model dims {self:?}")));
        }
        if self.context == 0 || self.context.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "context window must be odd, got {}",
                self.context
            )));
        }
        if self.encoder_layers == 0 {
            return Err(Error::Config("at least one encoder layer required".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    FeatureExtractor,
    Encoder,
    Projection,
    ReconHead,
}

/// Which parameter groups receive gradient.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TrainableMask {
    pub feature_extractor: bool,
    pub encoder: bool,
    pub projection: bool,
    pub recon_head: bool,
}

impl TrainableMask {
    pub const fn projection_only() -> Self {
        TrainableMask {
            feature_extractor: false,
            encoder: false,
            projection: true,
            recon_head: false,
        }
    }

    /// Encoder and projection; the feature extractor stays frozen.
    pub const fn joint() -> Self {
        TrainableMask {
            feature_extractor: false,
            encoder: true,
            projection: true,
            recon_head: false,
        }
    }

    pub const fn pretraining() -> Self {
        TrainableMask {
            feature_extractor: true,
            encoder: true,
            projection: false,
            recon_head: true,
        }
    }

    pub const fn all() -> Self {
        TrainableMask {
            feature_extractor: true,
            encoder: true,
            projection: true,
            recon_head: true,
        }
    }

    pub fn includes(&self, group: ParamGroup) -> bool {
        match group {
            ParamGroup::FeatureExtractor => self.feature_extractor,
            ParamGroup::Encoder => self.encoder,
            ParamGroup::Projection => self.projection,
            ParamGroup::ReconHead => self.recon_head,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockInfo {
    pub name: String,
    pub group: ParamGroup,
    pub rows: usize,
    pub cols: usize,
}

impl BlockInfo {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `y = x·W + b` with `W` stored `in × out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Affine<S> {
    pub weight: Matrix<S>,
    pub bias: Vec<S>,
}

impl<S: Scalar> Affine<S> {
    /// Glorot-uniform weights, zero bias.
    pub fn init(inputs: usize, outputs: usize, rng: &mut SeededRng) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let weight = Matrix::from_fn(inputs, outputs, |_, _| S::lit((2.0 * rng.uniform() - 1.0) * limit));
        Affine {
            weight,
            bias: vec![S::zero(); outputs],
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.rows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.cols()
    }

    fn apply(&self, x: &Matrix<S>) -> Result<Matrix<S>> {
        let mut y = x.matmul(&self.weight)?;
        y.add_row_vector(&self.bias);
        Ok(y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ForwardMode {
    /// Dropout off.
    Deterministic,
    /// Fresh dropout masks drawn from `seed`.
    Stochastic { seed: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Head {
    Projection,
    Reconstruction,
}

/// Activation record of one forward call.
#[derive(Clone, Debug)]
pub struct ForwardCache<S> {
    revision: u64,
    head: Head,
    frames: usize,
    time_mask: Option<Vec<bool>>,
    window: Matrix<S>,
    /// Input to each encoder layer (index 0 is the extractor output).
    layer_inputs: Vec<Matrix<S>>,
    /// Post-activation, pre-dropout outputs.
    activations: Vec<Matrix<S>>,
    /// Inverted-dropout scale factors (`0` or `1/(1-p)`); `None` when no dropout.
    dropout_scales: Vec<Option<Vec<S>>>,
    /// Output of the last encoder layer after dropout.
    top: Matrix<S>,
}

impl<S> ForwardCache<S> {
    pub fn head(&self) -> Head {
        self.head
    }
}

#[derive(Clone, Debug)]
pub struct EncoderModel<S> {
    dims: ModelDims,
    activation: Activation,
    dropout_p: f64,
    /// Learned vector substituted for time-masked frames.
    mask_embedding: Vec<S>,
    feature_extractor: Affine<S>,
    encoder: Vec<Affine<S>>,
    projection: Affine<S>,
    recon_head: Affine<S>,
    revision: u64,
}

impl<S: Scalar> PartialEq for EncoderModel<S> {
    fn eq(&self, other: &Self) -> bool {
        self.dims == other.dims
            && self.activation == other.activation
            && self.dropout_p.to_bits() == other.dropout_p.to_bits()
            && self.params() == other.params()
    }
}

impl<S: Scalar> EncoderModel<S> {
    pub fn new(dims: ModelDims, activation: Activation, dropout_p: f64, seed: u64) -> Result<Self> {
        dims.validate()?;
        if !(0.0..1.0).contains(&dropout_p) {
            return Err(Error::Config(format!(
                "dropout probability must be in [0, 1), got {dropout_p}"
            )));
        }
        let mut rng = SeededRng::derived(seed, "model-init");
        let window = dims.context * dims.frame_dim;
        let feature_extractor = Affine::init(window, dims.hidden, &mut rng);
        let encoder = (0..dims.encoder_layers)
            .map(|_| Affine::init(dims.hidden, dims.hidden, &mut rng))
            .collect();
        let projection = Affine::init(dims.hidden, dims.vocab, &mut rng);
        let recon_head = Affine::init(dims.hidden, dims.frame_dim, &mut rng);
        Ok(EncoderModel {
            dims,
            activation,
            dropout_p,
            mask_embedding: vec![S::zero(); dims.frame_dim],
            feature_extractor,
            encoder,
            projection,
            recon_head,
            revision: next_revision(),
        })
    }

    /// Builds a model from explicit layers. Layer shapes must chain.
    pub fn from_parts(
        activation: Activation,
        dropout_p: f64,
        context: usize,
        feature_extractor: Affine<S>,
        encoder: Vec<Affine<S>>,
        projection: Affine<S>,
        recon_head: Affine<S>,
    ) -> Result<Self> {
        let hidden = feature_extractor.outputs();
        if context == 0 || !feature_extractor.inputs().is_multiple_of(context) {
            return Err(Error::shape(
                "EncoderModel::from_parts",
                format!("extractor inputs divisible by context {context}"),
                feature_extractor.inputs(),
            ));
        }
        let dims = ModelDims {
            frame_dim: feature_extractor.inputs() / context,
            context,
            hidden,
            encoder_layers: encoder.len(),
            vocab: projection.outputs(),
        };
        dims.validate()?;
        for (i, l) in encoder.iter().enumerate() {
            if l.inputs() != hidden || l.outputs() != hidden {
                return Err(Error::shape(
                    "EncoderModel::from_parts",
                    format!("encoder layer {i} {hidden}x{hidden}"),
                    format!("{}x{}", l.inputs(), l.outputs()),
                ));
            }
        }
        if projection.inputs() != hidden || recon_head.inputs() != hidden {
            return Err(Error::shape(
                "EncoderModel::from_parts",
                format!("heads with {hidden} inputs"),
                format!("{} / {}", projection.inputs(), recon_head.inputs()),
            ));
        }
        if recon_head.outputs() != dims.frame_dim {
            return Err(Error::shape(
                "EncoderModel::from_parts",
                format!("recon head with {} outputs", dims.frame_dim),
                recon_head.outputs(),
            ));
        }
        Ok(EncoderModel {
            dims,
            activation,
            dropout_p,
            mask_embedding: vec![S::zero(); dims.frame_dim],
            feature_extractor,
            encoder,
            projection,
            recon_head,
            revision: next_revision(),
        })
    }

    pub fn dims(&self) -> ModelDims {
        self.dims
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn dropout_p(&self) -> f64 {
        self.dropout_p
    }

    pub fn set_dropout_p(&mut self, p: f64) -> Result<()> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout probability must be in [0, 1), got {p}")));
        }
        self.dropout_p = p;
        self.revision = next_revision();
        Ok(())
    }

    pub fn mask_embedding(&self) -> &[S] {
        &self.mask_embedding
    }

    pub fn feature_extractor(&self) -> &Affine<S> {
        &self.feature_extractor
    }

    pub fn encoder_layers(&self) -> &[Affine<S>] {
        &self.encoder
    }

    pub fn projection(&self) -> &Affine<S> {
        &self.projection
    }

    pub fn recon_head(&self) -> &Affine<S> {
        &self.recon_head
    }

    /// Swaps in a freshly initialized projection for a new vocabulary size.
    pub fn reset_projection(&mut self, vocab: usize, seed: u64) -> Result<()> {
        if vocab < 2 {
            return Err(Error::Config(format!("vocabulary of size {vocab}")));
        }
        let mut rng = SeededRng::derived(seed, "projection-init");
        self.projection = Affine::init(self.dims.hidden, vocab, &mut rng);
        self.dims.vocab = vocab;
        self.revision = next_revision();
        Ok(())
    }

    /// Parameter block table in flat-vector order.
    pub fn layout(&self) -> Vec<BlockInfo> {
        let d = self.dims;
        let block = |name: String, group, rows, cols| BlockInfo {
            name,
            group,
            rows,
            cols,
        };
        let mut out = vec![
            block("mask_embedding".into(), ParamGroup::FeatureExtractor, 1, d.frame_dim),
            block(
                "feature_extractor.weight".into(),
                ParamGroup::FeatureExtractor,
                d.context * d.frame_dim,
                d.hidden,
            ),
            block(
                "feature_extractor.bias".into(),
                ParamGroup::FeatureExtractor,
                1,
                d.hidden,
            ),
        ];
        for i in 0..d.encoder_layers {
            out.push(block(
                format!("encoder.{i}.weight"),
                ParamGroup::Encoder,
                d.hidden,
                d.hidden,
            ));
            out.push(block(format!("encoder.{i}.bias"), ParamGroup::Encoder, 1, d.hidden));
        }
        out.push(block(
            "projection.weight".into(),
            ParamGroup::Projection,
            d.hidden,
            d.vocab,
        ));
        out.push(block("projection.bias".into(), ParamGroup::Projection, 1, d.vocab));
        out.push(block(
            "recon_head.weight".into(),
            ParamGroup::ReconHead,
            d.hidden,
            d.frame_dim,
        ));
        out.push(block("recon_head.bias".into(), ParamGroup::ReconHead, 1, d.frame_dim));
        out
    }

    pub fn param_count(&self) -> usize {
        self.layout().iter().map(BlockInfo::len).sum()
    }

    fn blocks(&self) -> Vec<&[S]> {
        let mut out: Vec<&[S]> = vec![
            &self.mask_embedding,
            self.feature_extractor.weight.as_slice(),
            &self.feature_extractor.bias,
        ];
        for l in &self.encoder {
            out.push(l.weight.as_slice());
            out.push(&l.bias);
        }
        out.push(self.projection.weight.as_slice());
        out.push(&self.projection.bias);
        out.push(self.recon_head.weight.as_slice());
        out.push(&self.recon_head.bias);
        out
    }

    fn blocks_mut(&mut self) -> Vec<&mut [S]> {
        let mut out: Vec<&mut [S]> = vec![
            &mut self.mask_embedding,
            self.feature_extractor.weight.as_mut_slice(),
            &mut self.feature_extractor.bias,
        ];
        for l in &mut self.encoder {
            out.push(l.weight.as_mut_slice());
            out.push(&mut l.bias);
        }
        out.push(self.projection.weight.as_mut_slice());
        out.push(&mut self.projection.bias);
        out.push(self.recon_head.weight.as_mut_slice());
        out.push(&mut self.recon_head.bias);
        out
    }

    /// All parameters, concatenated in [`layout`](Self::layout) order.
    pub fn params(&self) -> Vec<S> {
        self.blocks().concat()
    }

    pub fn set_params(&mut self, flat: &[S]) -> Result<()> {
        let n = self.param_count();
        if flat.len() != n {
            return Err(Error::shape("set_params", n, flat.len()));
        }
        let mut offset = 0;
        for b in self.blocks_mut() {
            let len = b.len();
            b.copy_from_slice(&flat[offset..offset + len]);
            offset += len;
        }
        self.revision = next_revision();
        Ok(())
    }

    pub fn group_params(&self, group: ParamGroup) -> Vec<S> {
        self.layout()
            .iter()
            .zip(self.blocks())
            .filter(|(info, _)| info.group == group)
            .flat_map(|(_, b)| b.iter().copied())
            .collect()
    }

    pub fn cast<T: Scalar>(&self) -> EncoderModel<T> {
        let affine = |a: &Affine<S>| Affine {
            weight: a.weight.cast(),
            bias: a.bias.iter().map(|&x| T::lit(x.as_f64())).collect(),
        };
        EncoderModel {
            dims: self.dims,
            activation: self.activation,
            dropout_p: self.dropout_p,
            mask_embedding: self.mask_embedding.iter().map(|&x| T::lit(x.as_f64())).collect(),
            feature_extractor: affine(&self.feature_extractor),
            encoder: self.encoder.iter().map(affine).collect(),
            projection: affine(&self.projection),
            recon_head: affine(&self.recon_head),
            revision: next_revision(),
        }
    }

    /// Stacks each frame with its neighbours; out-of-range frames are zero.
    fn window(&self, frames: &Matrix<S>, time_mask: Option<&[bool]>) -> Matrix<S> {
        let d = self.dims.frame_dim;
        let c = self.dims.context;
        let half = c / 2;
        let t_len = frames.rows();
        let mut w = Matrix::zeros(t_len, c * d);
        for t in 0..t_len {
            let row = w.row_mut(t);
            for k in 0..c {
                let src = t as isize + k as isize - half as isize;
                if src < 0 || src >= t_len as isize {
                    continue;
                }
                let src = src as usize;
                let dst = &mut row[k * d..(k + 1) * d];
                if time_mask.is_some_and(|m| m[src]) {
                    dst.copy_from_slice(&self.mask_embedding);
                } else {
                    dst.copy_from_slice(frames.row(src));
                }
            }
        }
        w
    }

    /// CTC logits `T × |V|`.
    pub fn forward(&self, frames: &Matrix<S>, mode: ForwardMode) -> Result<(Matrix<S>, ForwardCache<S>)> {
        self.forward_with(frames, None, mode, Head::Projection)
    }

    /// Forward pass with optional time masking and a choice of output head.
    pub fn forward_with(
        &self,
        frames: &Matrix<S>,
        time_mask: Option<&[bool]>,
        mode: ForwardMode,
        head: Head,
    ) -> Result<(Matrix<S>, ForwardCache<S>)> {
        if frames.cols() != self.dims.frame_dim {
            return Err(Error::shape(
                "forward",
                format!("T x {} frames", self.dims.frame_dim),
                format!("{}x{}", frames.rows(), frames.cols()),
            ));
        }
        if frames.rows() == 0 {
            return Err(Error::shape("forward", "at least one frame", "0 frames"));
        }
        if let Some(m) = time_mask {
            if m.len() != frames.rows() {
                return Err(Error::shape("forward", frames.rows(), format!("mask of {}", m.len())));
            }
        }
        let window = self.window(frames, time_mask);
        let mut x = self.feature_extractor.apply(&window)?;

        let mut rng = match mode {
            ForwardMode::Stochastic { seed } if self.dropout_p > 0.0 => Some(SeededRng::new(seed)),
            _ => None,
        };
        let keep_scale = S::lit(1.0 / (1.0 - self.dropout_p));

        let mut layer_inputs = Vec::with_capacity(self.encoder.len());
        let mut activations = Vec::with_capacity(self.encoder.len());
        let mut dropout_scales = Vec::with_capacity(self.encoder.len());
        for layer in &self.encoder {
            let mut a = layer.apply(&x)?;
            for v in a.as_mut_slice() {
                *v = self.activation.apply(*v);
            }
            let mut out = a.clone();
            let scales = rng.as_mut().map(|rng| {
                let scales: Vec<S> = (0..a.as_slice().len())
                    .map(|_| {
                        if rng.bernoulli(self.dropout_p) {
                            S::zero()
                        } else {
                            keep_scale
                        }
                    })
                    .collect();
                for (o, &s) in out.as_mut_slice().iter_mut().zip(&scales) {
                    *o *= s;
                }
                scales
            });
            layer_inputs.push(x);
            activations.push(a);
            dropout_scales.push(scales);
            x = out;
        }

        let y = match head {
            Head::Projection => self.projection.apply(&x)?,
            Head::Reconstruction => self.recon_head.apply(&x)?,
        };
        let cache = ForwardCache {
            revision: self.revision,
            head,
            frames: frames.rows(),
            time_mask: time_mask.map(<[bool]>::to_vec),
            window,
            layer_inputs,
            activations,
            dropout_scales,
            top: x,
        };
        Ok((y, cache))
    }

    /// Gradient of a scalar loss with respect to all parameters, given its
    /// gradient with respect to the head output. Entries for groups outside
    /// `trainable` are exactly zero.
    pub fn backward(
        &self,
        cache: &ForwardCache<S>,
        output_grad: &Matrix<S>,
        trainable: TrainableMask,
    ) -> Result<Vec<S>> {
        if cache.revision != self.revision {
            return Err(Error::StaleCache);
        }
        let head = match cache.head {
            Head::Projection => &self.projection,
            Head::Reconstruction => &self.recon_head,
        };
        if output_grad.shape() != (cache.frames, head.outputs()) {
            return Err(Error::shape(
                "backward",
                format!("{}x{}", cache.frames, head.outputs()),
                format!("{}x{}", output_grad.rows(), output_grad.cols()),
            ));
        }

        let layout = self.layout();
        let mut grads: Vec<Vec<S>> = layout.iter().map(|b| vec![S::zero(); b.len()]).collect();
        let n_enc = self.encoder.len();
        // Block indices: 0 mask, 1-2 extractor, then 2 per encoder layer, then heads.
        let proj_idx = 3 + 2 * n_enc;
        let recon_idx = proj_idx + 2;
        let head_idx = match cache.head {
            Head::Projection => proj_idx,
            Head::Reconstruction => recon_idx,
        };
        let head_group = layout[head_idx].group;

        if trainable.includes(head_group) {
            let mut gw = Matrix::zeros(head.inputs(), head.outputs());
            cache.top.add_transpose_matmul(output_grad, &mut gw)?;
            grads[head_idx] = gw.into_vec();
            output_grad.add_column_sums(&mut grads[head_idx + 1]);
        }

        let need_encoder = trainable.encoder || trainable.feature_extractor;
        if !need_encoder {
            return Ok(grads.concat());
        }

        let mut d_top = output_grad.matmul_transpose(&head.weight)?;
        for l in (0..n_enc).rev() {
            if let Some(scales) = &cache.dropout_scales[l] {
                for (g, &s) in d_top.as_mut_slice().iter_mut().zip(scales) {
                    *g *= s;
                }
            }
            let act = &cache.activations[l];
            for (g, &a) in d_top.as_mut_slice().iter_mut().zip(act.as_slice()) {
                *g *= self.activation.derivative_from_output(a);
            }
            let w_idx = 3 + 2 * l;
            if trainable.encoder {
                let layer = &self.encoder[l];
                let mut gw = Matrix::zeros(layer.inputs(), layer.outputs());
                cache.layer_inputs[l].add_transpose_matmul(&d_top, &mut gw)?;
                grads[w_idx] = gw.into_vec();
                d_top.add_column_sums(&mut grads[w_idx + 1]);
            }
            if l > 0 || trainable.feature_extractor {
                d_top = d_top.matmul_transpose(&self.encoder[l].weight)?;
            }
        }

        if trainable.feature_extractor {
            let fe = &self.feature_extractor;
            let mut gw = Matrix::zeros(fe.inputs(), fe.outputs());
            cache.window.add_transpose_matmul(&d_top, &mut gw)?;
            grads[1] = gw.into_vec();
            d_top.add_column_sums(&mut grads[2]);

            if let Some(mask) = &cache.time_mask {
                if mask.iter().any(|&m| m) {
                    let d_window = d_top.matmul_transpose(&fe.weight)?;
                    let d = self.dims.frame_dim;
                    let half = self.dims.context / 2;
                    let t_len = cache.frames;
                    for r in 0..t_len {
                        for k in 0..self.dims.context {
                            let src = r as isize + k as isize - half as isize;
                            if src < 0 || src >= t_len as isize || !mask[src as usize] {
                                continue;
                            }
                            let part = &d_window.row(r)[k * d..(k + 1) * d];
                            for (g, &v) in grads[0].iter_mut().zip(part) {
                                *g += v;
                            }
                        }
                    }
                }
            }
        }
        Ok(grads.concat())
    }
}
