//! Numerical substrate: matrices, the encoder network, Adam and seeded randomness.

mod adam;
mod checkpoint;
mod matrix;
mod model;
mod rng;

pub use adam::{Adam, BETA1, BETA2, EPSILON};
pub use checkpoint::{CheckpointMeta, ModelCheckpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use matrix::Matrix;
pub use model::{
    Activation, Affine, BlockInfo, EncoderModel, ForwardCache, ForwardMode, Head, ModelDims, ParamGroup, TrainableMask,
};
pub use rng::{derive_seed, fnv1a, SeededRng};
