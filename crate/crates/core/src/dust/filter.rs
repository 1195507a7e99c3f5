use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ctc::{beam_search, Alphabet, Hypothesis, LogProbLattice};
use crate::error::{Error, Result};
use crate::numkit::{fnv1a, EncoderModel, ForwardMode, Matrix, ModelCheckpoint};
use crate::synth::{Corpus, Utterance};
use crate::textdist::{edit_distance, wer_cer};

/// Agreement filter settings. `seeds` defaults to `1..=passes`; `dropout_p`
/// defaults to the teacher's own rate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub tau: f64,
    pub passes: usize,
    pub seeds: Vec<u64>,
    pub beam_width: usize,
    pub dropout_p: Option<f64>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            tau: 0.2,
            passes: 3,
            seeds: Vec::new(),
            beam_width: 10,
            dropout_p: None,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(0.0..=1.0).contains(&self.tau) {
            return bad("tau must lie in [0, 1]");
        }
        if self.passes == 0 || self.beam_width == 0 {
            return bad("passes and beam_width must be at least 1");
        }
        if !self.seeds.is_empty() {
            if self.seeds.len() != self.passes {
                return bad("seeds must list exactly one seed per pass");
            }
            let mut s = self.seeds.clone();
            s.sort_unstable();
            s.dedup();
            if s.len() != self.passes {
                return bad("seeds must be distinct");
            }
        }
        if let Some(p) = self.dropout_p {
            if !(0.0..1.0).contains(&p) {
                return bad("dropout_p must lie in [0, 1)");
            }
        }
        Ok(())
    }

    pub fn resolved_seeds(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            (1..=self.passes as u64).collect()
        } else {
            self.seeds.clone()
        }
    }
}

/// Everything decided about one unlabeled utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct HypothesisBundle {
    pub utterance_id: String,
    pub reference: Hypothesis,
    pub sampled: Vec<Hypothesis>,
    pub distances: Vec<usize>,
    pub accepted: bool,
    /// Set when a decode pass failed; the utterance is then rejected.
    pub diagnostic: Option<String>,
}

/// The acceptance rule: every distance strictly below `tau · |reference|`,
/// and a non-empty reference.
pub fn accepts(distances: &[usize], reference_len: usize, tau: f64) -> bool {
    reference_len > 0 && distances.iter().all(|&e| (e as f64) < tau * reference_len as f64)
}

fn top1(model: &EncoderModel<f64>, frames: &Matrix<f64>, mode: ForwardMode, beam: usize) -> Result<Hypothesis> {
    let (logits, _) = model.forward(frames, mode)?;
    let lattice = LogProbLattice::from_logits(&logits);
    beam_search(&lattice, beam)
        .into_iter()
        .next()
        .ok_or_else(|| Error::Inconsistent("beam search returned no hypothesis".into()))
}

fn label_with(model: &EncoderModel<f64>, utt: &Utterance, seeds: &[u64], cfg: &FilterConfig) -> HypothesisBundle {
    let frames: Matrix<f64> = utt.frames.cast();
    let offset = fnv1a(utt.id.as_bytes());
    let run = || -> Result<(Hypothesis, Vec<Hypothesis>)> {
        if frames.rows() == 0 {
            return Err(Error::Config("utterance has no frames".into()));
        }
        let reference = top1(model, &frames, ForwardMode::Deterministic, cfg.beam_width)?;
        let sampled = seeds
            .iter()
            .map(|&s| {
                let mode = ForwardMode::Stochastic {
                    seed: s.wrapping_add(offset),
                };
                top1(model, &frames, mode, cfg.beam_width)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((reference, sampled))
    };
    match run() {
        Ok((reference, sampled)) => {
            let distances: Vec<usize> = sampled
                .iter()
                .map(|h| edit_distance(&h.tokens, &reference.tokens))
                .collect();
            let accepted = accepts(&distances, reference.tokens.len(), cfg.tau);
            HypothesisBundle {
                utterance_id: utt.id.clone(),
                reference,
                sampled,
                distances,
                accepted,
                diagnostic: None,
            }
        }
        Err(e) => HypothesisBundle {
            utterance_id: utt.id.clone(),
            reference: Hypothesis {
                tokens: Vec::new(),
                score: f64::NEG_INFINITY,
            },
            sampled: Vec::new(),
            distances: Vec::new(),
            accepted: false,
            diagnostic: Some(e.to_string()),
        },
    }
}

fn teacher_model(teacher: &ModelCheckpoint, cfg: &FilterConfig) -> Result<EncoderModel<f64>> {
    cfg.validate()?;
    let mut model = teacher.model().clone();
    if let Some(p) = cfg.dropout_p {
        model.set_dropout_p(p)?;
    }
    Ok(model)
}

fn teacher_alphabet(teacher: &ModelCheckpoint) -> Result<&Alphabet> {
    teacher
        .alphabet()
        .ok_or_else(|| Error::AlphabetMismatch(format!("checkpoint {} has no output alphabet", teacher.id())))
}

/// One deterministic and `passes` dropout decodes of `utt`, compared by
/// character edit distance (separator included).
pub fn label_one(teacher: &ModelCheckpoint, utt: &Utterance, cfg: &FilterConfig) -> Result<HypothesisBundle> {
    teacher_alphabet(teacher)?;
    let model = teacher_model(teacher, cfg)?;
    Ok(label_with(&model, utt, &cfg.resolved_seeds(), cfg))
}

/// Where a pseudo-label came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PseudoSource {
    Reference,
    Sample(usize),
}

impl Serialize for PseudoSource {
    fn serialize<Se: serde::Serializer>(&self, s: Se) -> std::result::Result<Se::Ok, Se::Error> {
        match self {
            PseudoSource::Reference => s.serialize_str("ref"),
            PseudoSource::Sample(r) => s.serialize_str(&format!("sample-{r}")),
        }
    }
}

impl<'de> Deserialize<'de> for PseudoSource {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        if s == "ref" {
            return Ok(PseudoSource::Reference);
        }
        s.strip_prefix("sample-")
            .and_then(|r| r.parse().ok())
            .map(PseudoSource::Sample)
            .ok_or_else(|| serde::de::Error::custom(format!("unknown pseudo-label source `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PseudoEntry {
    pub id: String,
    pub text: String,
    pub source: PseudoSource,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PseudoStats {
    pub tau: f64,
    #[serde(rename = "R")]
    pub passes: usize,
    pub accepted: usize,
    pub total: usize,
    /// WER (%) of accepted reference hypotheses against the hidden truth.
    pub pseudo_wer: Option<f64>,
    pub teacher: String,
    pub failed: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PseudoLabelSet {
    pub entries: Vec<PseudoEntry>,
    pub stats: PseudoStats,
    pub filter: FilterConfig,
}

impl PseudoLabelSet {
    pub fn accepted_ids(&self) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|e| e.source == PseudoSource::Reference)
            .map(|e| e.id.as_str())
            .collect()
    }
}

/// Labels every utterance of `unlabeled` (in parallel, merged in corpus
/// order) and collects the accepted ones. Returns the per-utterance bundles
/// alongside the set.
pub fn build_pseudoset(
    teacher: &ModelCheckpoint,
    unlabeled: &Corpus,
    cfg: &FilterConfig,
) -> Result<(PseudoLabelSet, Vec<HypothesisBundle>)> {
    let alphabet = teacher_alphabet(teacher)?.clone();
    let model = teacher_model(teacher, cfg)?;
    let seeds = cfg.resolved_seeds();
    if unlabeled.is_empty() {
        warn!("unlabeled corpus is empty; pseudo-label set will be empty");
    }
    let bundles: Vec<HypothesisBundle> = unlabeled
        .utterances()
        .par_iter()
        .map(|u| label_with(&model, u, &seeds, cfg))
        .collect();

    let mut entries = Vec::new();
    let mut hyps = Vec::new();
    let mut refs = Vec::new();
    for b in bundles.iter().filter(|b| b.accepted) {
        let text = alphabet.decode(&b.reference.tokens);
        if let Some(truth) = unlabeled.hidden_truth().and_then(|h| h.get(&b.utterance_id)) {
            hyps.push(text.clone());
            refs.push(truth.to_string());
        }
        entries.push(PseudoEntry {
            id: b.utterance_id.clone(),
            text,
            source: PseudoSource::Reference,
        });
        for (r, h) in b.sampled.iter().enumerate() {
            entries.push(PseudoEntry {
                id: b.utterance_id.clone(),
                text: alphabet.decode(&h.tokens),
                source: PseudoSource::Sample(r + 1),
            });
        }
    }
    let accepted = bundles.iter().filter(|b| b.accepted).count();
    let pseudo_wer = if refs.is_empty() {
        None
    } else {
        Some(wer_cer(&hyps, &refs, alphabet.separator())?.wer)
    };
    let stats = PseudoStats {
        tau: cfg.tau,
        passes: cfg.passes,
        accepted,
        total: bundles.len(),
        pseudo_wer,
        teacher: teacher.id().to_string(),
        failed: bundles.iter().filter(|b| b.diagnostic.is_some()).count(),
    };
    Ok((
        PseudoLabelSet {
            entries,
            stats,
            filter: cfg.clone(),
        },
        bundles,
    ))
}
