//! Cross-lingual CTC transfer with dropout-uncertainty self-training.
//!
//! A small dropout-bearing encoder is pre-trained on unlabeled source-language
//! frames, fine-tuned with CTC on a few labeled target utterances, then
//! improved over several teacher/student rounds. In each round the teacher
//! decodes every unlabeled utterance once with dropout off and several times
//! with dropout on; an utterance is kept as a pseudo-label only when all
//! stochastic decodes stay within a relative edit distance of the
//! deterministic one.

pub mod ctc;
pub mod dust;
pub mod error;
pub mod experiment;
pub mod numkit;
pub mod scalar;
pub mod store;
pub mod synth;
pub mod textdist;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Double-precision matrix, the default for all training code.
pub type Matrix = numkit::Matrix<f64>;
/// Double-precision encoder.
pub type Model = numkit::EncoderModel<f64>;
pub type Lattice = ctc::LogProbLattice<f64>;
pub type Hypothesis = ctc::Hypothesis<f64>;
pub type Adam = numkit::Adam<f64>;
