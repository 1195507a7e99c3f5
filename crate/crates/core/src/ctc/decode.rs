use std::cmp::Ordering;
use std::collections::HashMap;

use super::{Hypothesis, LogProbLattice, BLANK};
use crate::scalar::{log_add, Scalar};

/// Per-frame argmax (lowest label on ties), repeats collapsed, blanks removed.
pub fn greedy_decode<S: Scalar>(lattice: &LogProbLattice<S>) -> Hypothesis<S> {
    let mut tokens = Vec::new();
    let mut score = S::zero();
    let mut prev = None;
    for t in 0..lattice.frames() {
        let row = lattice.entries().row(t);
        let (best, &lp) = row
            .iter()
            .enumerate()
            .fold((0, &row[0]), |acc, (k, v)| if *v > *acc.1 { (k, v) } else { acc });
        score += lp;
        let label = best as u32;
        if Some(label) != prev && label != BLANK {
            tokens.push(label);
        }
        prev = Some(label);
    }
    Hypothesis { tokens, score }
}

#[derive(Clone, Copy)]
struct PrefixScore<S> {
    /// Ends in blank.
    blank: S,
    /// Ends in the last symbol of the prefix.
    non_blank: S,
}

impl<S: Scalar> PrefixScore<S> {
    fn empty() -> Self {
        PrefixScore {
            blank: S::neg_infinity(),
            non_blank: S::neg_infinity(),
        }
    }

    fn total(&self) -> S {
        log_add(self.blank, self.non_blank)
    }
}

/// Highest score first; equal scores ordered lexicographically by tokens.
fn rank<S: Scalar>(a: &(Vec<u32>, S), b: &(Vec<u32>, S)) -> Ordering {
    b.1.partial_cmp(&a.1)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.0.cmp(&b.0))
}

/// CTC prefix beam search. Returns up to `beam_width` labelings ranked by
/// their merged (blank + non-blank) log-probability.
pub fn beam_search<S: Scalar>(lattice: &LogProbLattice<S>, beam_width: usize) -> Vec<Hypothesis<S>> {
    let width = beam_width.max(1);
    let v = lattice.vocab_size() as u32;
    let mut beams: Vec<(Vec<u32>, PrefixScore<S>)> = vec![(
        Vec::new(),
        PrefixScore {
            blank: S::zero(),
            non_blank: S::neg_infinity(),
        },
    )];

    for t in 0..lattice.frames() {
        let mut next: HashMap<Vec<u32>, PrefixScore<S>> = HashMap::with_capacity(beams.len() * v as usize);
        let p_blank = lattice.at(t, BLANK);
        for (prefix, score) in &beams {
            let total = score.total();
            let entry = next.entry(prefix.clone()).or_insert_with(PrefixScore::empty);
            entry.blank = log_add(entry.blank, total + p_blank);
            let last = prefix.last().copied();
            if let Some(last) = last {
                entry.non_blank = log_add(entry.non_blank, score.non_blank + lattice.at(t, last));
            }
            for c in 1..v {
                let p = lattice.at(t, c);
                let mut extended = Vec::with_capacity(prefix.len() + 1);
                extended.extend_from_slice(prefix);
                extended.push(c);
                let entry = next.entry(extended).or_insert_with(PrefixScore::empty);
                // A repeated symbol only extends the prefix after a blank.
                let from = if Some(c) == last { score.blank } else { total };
                entry.non_blank = log_add(entry.non_blank, from + p);
            }
        }
        let mut ranked: Vec<(Vec<u32>, S, PrefixScore<S>)> = next.into_iter().map(|(k, s)| (k, s.total(), s)).collect();
        ranked.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(Ordering::Equal)
                .then_with(|| a.0.cmp(&b.0))
        });
        ranked.retain(|r| r.1 != S::neg_infinity());
        ranked.truncate(width);
        beams = ranked.into_iter().map(|(k, _, s)| (k, s)).collect();
    }

    let mut out: Vec<(Vec<u32>, S)> = beams.into_iter().map(|(k, s)| (k, s.total())).collect();
    out.sort_by(rank);
    out.into_iter()
        .map(|(tokens, score)| Hypothesis { tokens, score })
        .collect()
}
