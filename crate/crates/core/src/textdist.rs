//! Edit distance, WER/CER and error-rate recovery.

use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};

/// Levenshtein distance with unit costs.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut curr = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        curr[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            curr[j + 1] = sub.min(prev[j + 1] + 1).min(curr[j] + 1);
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[b.len()]
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditCounts {
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
}

impl EditCounts {
    pub fn total(&self) -> usize {
        self.substitutions + self.insertions + self.deletions
    }

    fn add(&mut self, o: EditCounts) {
        self.substitutions += o.substitutions;
        self.insertions += o.insertions;
        self.deletions += o.deletions;
    }
}

/// Minimal edit script turning `reference` into `hypothesis`, broken down by
/// operation. Ties prefer substitution, then deletion, then insertion.
pub fn align_counts<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> EditCounts {
    let (n, m) = (reference.len(), hypothesis.len());
    let mut dp = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in dp.iter_mut().enumerate() {
        row[0] = i;
    }
    for (j, cell) in dp[0].iter_mut().enumerate() {
        *cell = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = dp[i - 1][j - 1] + usize::from(reference[i - 1] != hypothesis[j - 1]);
            dp[i][j] = sub.min(dp[i - 1][j] + 1).min(dp[i][j - 1] + 1);
        }
    }
    let mut counts = EditCounts::default();
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 {
            let same = reference[i - 1] == hypothesis[j - 1];
            if dp[i][j] == dp[i - 1][j - 1] + usize::from(!same) {
                if !same {
                    counts.substitutions += 1;
                }
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && dp[i][j] == dp[i - 1][j] + 1 {
            counts.deletions += 1;
            i -= 1;
        } else {
            counts.insertions += 1;
            j -= 1;
        }
    }
    counts
}

fn two_decimals<S: Serializer>(x: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_f64((x * 100.0).round() / 100.0)
}

/// Corpus-level error rates (pooled edits over pooled reference length).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(serialize_with = "two_decimals")]
    pub wer: f64,
    #[serde(serialize_with = "two_decimals")]
    pub cer: f64,
    /// Word-level breakdown.
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
    pub char_edits: EditCounts,
    pub ref_words: usize,
    pub ref_chars: usize,
    pub utterance_count: usize,
}

fn words(text: &str, separator: char) -> Vec<&str> {
    text.split(separator).filter(|w| !w.is_empty()).collect()
}

/// WER over words split on `separator`; CER over every character, the
/// separator included.
pub fn wer_cer<H: AsRef<str>, R: AsRef<str>>(hyps: &[H], refs: &[R], separator: char) -> Result<EvalReport> {
    if hyps.len() != refs.len() {
        return Err(Error::shape(
            "wer_cer",
            format!("{} hypotheses", refs.len()),
            hyps.len(),
        ));
    }
    let mut word_counts = EditCounts::default();
    let mut char_counts = EditCounts::default();
    let (mut ref_words, mut ref_chars) = (0, 0);
    for (h, r) in hyps.iter().zip(refs) {
        let (h, r) = (h.as_ref(), r.as_ref());
        let rw = words(r, separator);
        word_counts.add(align_counts(&rw, &words(h, separator)));
        ref_words += rw.len();
        let rc: Vec<char> = r.chars().collect();
        let hc: Vec<char> = h.chars().collect();
        char_counts.add(align_counts(&rc, &hc));
        ref_chars += rc.len();
    }
    if ref_words == 0 || ref_chars == 0 {
        return Err(Error::EmptyReference);
    }
    Ok(EvalReport {
        wer: 100.0 * word_counts.total() as f64 / ref_words as f64,
        cer: 100.0 * char_counts.total() as f64 / ref_chars as f64,
        substitutions: word_counts.substitutions,
        insertions: word_counts.insertions,
        deletions: word_counts.deletions,
        char_edits: char_counts,
        ref_words,
        ref_chars,
        utterance_count: refs.len(),
    })
}

/// Share of the baseline-to-topline error gap closed by a model, in percent.
pub fn werr(baseline: f64, model: f64, topline: f64) -> Result<f64> {
    if baseline == topline {
        return Err(Error::RecoveryUndefined(baseline));
    }
    Ok(100.0 * (baseline - model) / (baseline - topline))
}

/// Pointwise recovery per `(baseline, model, topline)` row, then the plain mean.
pub fn mean_recovery(rows: &[(f64, f64, f64)]) -> Result<f64> {
    if rows.is_empty() {
        return Err(Error::Config("no rows to average".into()));
    }
    let mut sum = 0.0;
    for &(b, m, t) in rows {
        sum += werr(b, m, t)?;
    }
    Ok(sum / rows.len() as f64)
}
