use std::path::PathBuf;

use thiserror::Error;

use crate::numkit::ModelCheckpoint;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: expected {expected}, got {got}")]
    Shape {
        op: &'static str,
        expected: String,
        got: String,
    },

    #[error("activation cache is stale: model changed since the forward pass")]
    StaleCache,

    #[error("non-finite gradient in parameter block {block}")]
    NonFiniteGradient { block: usize },

    #[error("infeasible alignment: target of {target_len} symbols needs {required} frames, lattice has {frames}")]
    InfeasibleAlignment {
        target_len: usize,
        required: usize,
        frames: usize,
    },

    #[error("CTC target is empty")]
    EmptyTarget,

    #[error("symbol {0:?} is not in the alphabet")]
    UnknownSymbol(char),

    #[error("alphabet mismatch: {0}")]
    AlphabetMismatch(String),

    #[error("total reference length is zero")]
    EmptyReference,

    #[error("recovery undefined: baseline and topline error rates are both {0}")]
    RecoveryUndefined(f64),

    #[error("learning-rate schedule is undefined at step 0")]
    StepZero,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("cannot place {requested} prototypes with separation {min_separation} in {dim} dimensions")]
    PrototypeSeparation {
        requested: usize,
        dim: usize,
        min_separation: f64,
    },

    #[error("training diverged at epoch {epoch} (non-finite loss)")]
    Diverged {
        epoch: usize,
        last_finite: Box<ModelCheckpoint>,
    },

    #[error("{}: format error at byte {offset}: {msg}", path.display())]
    Format { path: PathBuf, offset: u64, msg: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("inconsistent experiment directory: {0}")]
    Inconsistent(String),

    #[error("missing prerequisite stage `{stage}`; run `dust {producer}` first")]
    MissingStage { stage: String, producer: String },
}

impl Error {
    pub(crate) fn shape(op: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        Error::Shape {
            op,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, offset: u64, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            offset,
            msg: msg.into(),
        }
    }
}
