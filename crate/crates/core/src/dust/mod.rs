//! Dropout-agreement pseudo-labeling and the teacher/student loop.

mod filter;

use std::collections::HashMap;

use log::warn;
use rayon::prelude::*;

pub use filter::{
    accepts, build_pseudoset, label_one, FilterConfig, HypothesisBundle, PseudoEntry, PseudoLabelSet, PseudoSource,
    PseudoStats,
};

use crate::ctc::{beam_search, Alphabet, LogProbLattice};
use crate::error::{Error, Result};
use crate::numkit::{ForwardMode, ModelCheckpoint};
use crate::synth::Corpus;
use crate::textdist::{wer_cer, EvalReport};
use crate::train::{finetune, FinetuneOutcome, TrainConfig, TrainingExample};

/// Top beam hypothesis (dropout off) for every utterance, in corpus order.
pub fn transcribe(model: &ModelCheckpoint, corpus: &Corpus, beam_width: usize) -> Result<Vec<String>> {
    let alphabet = model
        .alphabet()
        .ok_or_else(|| Error::AlphabetMismatch(format!("checkpoint {} has no output alphabet", model.id())))?;
    corpus
        .utterances()
        .par_iter()
        .map(|u| {
            let (logits, _) = model.model().forward(&u.frames.cast(), ForwardMode::Deterministic)?;
            let best = beam_search(&LogProbLattice::from_logits(&logits), beam_width);
            Ok(best.first().map(|h| alphabet.decode(&h.tokens)).unwrap_or_default())
        })
        .collect()
}

/// WER/CER of `model` on a labeled corpus.
pub fn evaluate(model: &ModelCheckpoint, corpus: &Corpus, beam_width: usize) -> Result<EvalReport> {
    let hyps = transcribe(model, corpus, beam_width)?;
    let sep = model.alphabet().map_or(' ', Alphabet::separator);
    wer_cer(&hyps, &corpus.transcripts(), sep)
}

/// Turns pseudo-label entries into training examples using the frames of
/// the unlabeled corpus they were decoded from.
pub fn pseudo_examples(set: &PseudoLabelSet, unlabeled: &Corpus, alphabet: &Alphabet) -> Result<Vec<TrainingExample>> {
    let by_id: HashMap<&str, _> = unlabeled.utterances().iter().map(|u| (u.id.as_str(), u)).collect();
    set.entries
        .iter()
        .map(|e| {
            let u = by_id
                .get(e.id.as_str())
                .ok_or_else(|| Error::Inconsistent(format!("pseudo-label for unknown utterance {}", e.id)))?;
            TrainingExample::new(e.id.clone(), u.frames.cast(), &e.text, alphabet)
        })
        .collect()
}

/// Inputs shared by every teacher/student round.
pub struct DustData<'a> {
    pub labeled_train: &'a [TrainingExample],
    pub labeled_valid: &'a [TrainingExample],
    pub unlabeled: &'a Corpus,
    pub alphabet: &'a Alphabet,
}

#[derive(Clone, Debug)]
pub struct DustOutcome {
    pub pseudo: PseudoLabelSet,
    pub student: FinetuneOutcome,
}

/// One round: `teacher` labels the unlabeled corpus, then a fresh copy of
/// the pre-trained `f0` is fine-tuned on the labeled data plus the accepted
/// pseudo-labels.
pub fn dust_iterate(
    f0: &ModelCheckpoint,
    teacher: &ModelCheckpoint,
    data: &DustData<'_>,
    filter: &FilterConfig,
    train_cfg: &TrainConfig,
    stage: &str,
) -> Result<DustOutcome> {
    if teacher.alphabet() != Some(data.alphabet) {
        return Err(Error::AlphabetMismatch(format!(
            "teacher {} was not trained on the target alphabet",
            teacher.id()
        )));
    }
    let (pseudo, _) = build_pseudoset(teacher, data.unlabeled, filter)?;
    if pseudo.entries.is_empty() {
        warn!("{stage}: no pseudo-labels accepted; the student sees labeled data only");
    }
    let mut train = data.labeled_train.to_vec();
    train.extend(pseudo_examples(&pseudo, data.unlabeled, data.alphabet)?);
    let student = finetune(f0, &train, data.labeled_valid, data.alphabet, train_cfg, stage)?;
    Ok(DustOutcome { pseudo, student })
}
