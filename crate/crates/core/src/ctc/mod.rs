//! Connectionist Temporal Classification: loss, gradient and decoding.
//!
//! Label `0` is the blank; alphabet symbol `i` is label `i + 1`.

mod decode;
mod loss;

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use decode::{beam_search, greedy_decode};
pub use loss::ctc_loss_and_grad;

use crate::error::{Error, Result};
use crate::numkit::Matrix;
use crate::scalar::{log_sum_exp, Scalar};

pub const BLANK: u32 = 0;

/// Output character inventory. The blank is implicit at index 0.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "AlphabetRepr", into = "AlphabetRepr")]
pub struct Alphabet {
    symbols: Vec<char>,
    separator: char,
}

#[derive(Serialize, Deserialize)]
struct AlphabetRepr {
    symbols: String,
    separator: char,
}

impl TryFrom<AlphabetRepr> for Alphabet {
    type Error = Error;

    fn try_from(r: AlphabetRepr) -> Result<Self> {
        Alphabet::new(r.symbols.chars().collect(), r.separator)
    }
}

impl From<Alphabet> for AlphabetRepr {
    fn from(a: Alphabet) -> Self {
        AlphabetRepr {
            symbols: a.symbols.iter().collect(),
            separator: a.separator,
        }
    }
}

impl fmt::Debug for Alphabet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s: String = self.symbols.iter().collect();
        write!(f, "Alphabet({s:?}, sep={:?})", self.separator)
    }
}

impl Alphabet {
    /// `symbols` must be unique and contain `separator`.
    pub fn new(symbols: Vec<char>, separator: char) -> Result<Self> {
        let mut seen = HashSet::new();
        for &c in &symbols {
            if !seen.insert(c) {
                return Err(Error::AlphabetMismatch(format!("duplicate symbol {c:?}")));
            }
        }
        if !seen.contains(&separator) {
            return Err(Error::AlphabetMismatch(format!(
                "separator {separator:?} missing from symbols"
            )));
        }
        Ok(Alphabet { symbols, separator })
    }

    /// Letters of `letters` plus a trailing space separator.
    pub fn with_space(letters: &str) -> Result<Self> {
        let mut symbols: Vec<char> = letters.chars().collect();
        symbols.push(' ');
        Self::new(symbols, ' ')
    }

    pub fn symbols(&self) -> &[char] {
        &self.symbols
    }

    pub fn separator(&self) -> char {
        self.separator
    }

    /// `|V|`: symbols plus blank.
    pub fn vocab_size(&self) -> usize {
        self.symbols.len() + 1
    }

    pub fn label_of(&self, c: char) -> Result<u32> {
        self.symbols
            .iter()
            .position(|&s| s == c)
            .map(|i| i as u32 + 1)
            .ok_or(Error::UnknownSymbol(c))
    }

    pub fn symbol_of(&self, label: u32) -> Option<char> {
        if label == BLANK {
            return None;
        }
        self.symbols.get(label as usize - 1).copied()
    }

    pub fn encode(&self, text: &str) -> Result<Vec<u32>> {
        text.chars().map(|c| self.label_of(c)).collect()
    }

    pub fn decode(&self, labels: &[u32]) -> String {
        labels.iter().filter_map(|&l| self.symbol_of(l)).collect()
    }
}

/// Per-frame log-probabilities over `|V|` labels.
#[derive(Clone, Debug, PartialEq)]
pub struct LogProbLattice<S> {
    entries: Matrix<S>,
}

impl<S: Scalar> LogProbLattice<S> {
    /// Row-wise log-softmax of unnormalized logits.
    pub fn from_logits(logits: &Matrix<S>) -> Self {
        LogProbLattice {
            entries: logits.log_softmax_rows(),
        }
    }

    /// Validates that each row log-sum-exps to zero.
    pub fn from_log_probs(entries: Matrix<S>) -> Result<Self> {
        let tol = (S::epsilon() * S::lit(64.0)).max(S::lit(1e-9));
        for t in 0..entries.rows() {
            let lse = log_sum_exp(entries.row(t));
            if lse.is_nan() || lse.abs() > tol {
                return Err(Error::shape(
                    "LogProbLattice",
                    "rows normalized in log space",
                    format!("row {t} log-sum-exp {lse}"),
                ));
            }
        }
        Ok(LogProbLattice { entries })
    }

    pub fn frames(&self) -> usize {
        self.entries.rows()
    }

    pub fn vocab_size(&self) -> usize {
        self.entries.cols()
    }

    pub fn entries(&self) -> &Matrix<S> {
        &self.entries
    }

    #[inline]
    pub fn at(&self, t: usize, label: u32) -> S {
        self.entries.get(t, label as usize)
    }
}

/// A decoded labeling (blank-free) with its log-probability.
#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis<S = f64> {
    pub tokens: Vec<u32>,
    pub score: S,
}

/// Collapses repeats, then strips blanks.
pub fn collapse(alignment: &[u32]) -> Vec<u32> {
    let mut out = Vec::new();
    let mut prev = None;
    for &l in alignment {
        if Some(l) != prev && l != BLANK {
            out.push(l);
        }
        prev = Some(l);
    }
    out
}
