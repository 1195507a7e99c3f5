//! Synthetic "languages": each symbol emits a run of noisy prototype frames,
//! passed through an affine channel. Source and target languages can share a
//! fraction of their prototypes to control how well pre-training transfers.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ctc::Alphabet;
use crate::error::{Error, Result};
use crate::numkit::{derive_seed, Matrix, SeededRng};
use crate::train::TrainingExample;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LanguageConfig {
    /// Letters of the language; a space separator is appended.
    pub letters: String,
    pub frame_dim: usize,
    /// Standard deviation of prototype coordinates.
    pub prototype_scale: f64,
    /// Minimum Euclidean distance between any two prototypes.
    pub min_separation: f64,
    pub frames_per_char: (usize, usize),
    pub noise_sigma: f64,
    /// Trailing frame dimensions that carry only noise of `nuisance_sigma`;
    /// prototypes are zero there.
    pub nuisance_dims: usize,
    pub nuisance_sigma: f64,
    /// Scale of the random linear distortion `A = I + shift·G/√d`.
    pub channel_shift: f64,
    /// Length of the channel offset vector.
    pub channel_offset: f64,
    /// Fraction of symbols reusing the base language's prototypes.
    pub shared_fraction: f64,
    pub word_len: (usize, usize),
    pub words_per_utterance: (usize, usize),
}

impl Default for LanguageConfig {
    fn default() -> Self {
        LanguageConfig {
            letters: "abcdefghij".into(),
            frame_dim: 8,
            prototype_scale: 1.0,
            min_separation: 1.5,
            frames_per_char: (2, 5),
            noise_sigma: 0.3,
            nuisance_dims: 0,
            nuisance_sigma: 0.0,
            channel_shift: 0.0,
            channel_offset: 0.0,
            shared_fraction: 0.5,
            word_len: (2, 5),
            words_per_utterance: (2, 4),
        }
    }
}

impl LanguageConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.frame_dim < self.nuisance_dims + 2 {
            return bad(format!(
                "frame_dim {} leaves fewer than 2 dimensions besides {} nuisance dimensions",
                self.frame_dim, self.nuisance_dims
            ));
        }
        if self.nuisance_sigma < 0.0 {
            return bad("nuisance_sigma must be >= 0".into());
        }
        if self.letters.chars().count() < 3 || self.letters.contains(' ') {
            return bad("need at least 3 letters, space is reserved as separator".into());
        }
        let (lo, hi) = self.frames_per_char;
        if lo == 0 || lo > hi {
            return bad(format!("frames_per_char range {lo}..={hi}"));
        }
        if self.word_len.0 == 0 || self.word_len.0 > self.word_len.1 {
            return bad("word_len range".into());
        }
        if self.words_per_utterance.0 == 0 || self.words_per_utterance.0 > self.words_per_utterance.1 {
            return bad("words_per_utterance range".into());
        }
        if !(self.prototype_scale > 0.0 && self.min_separation > 0.0) {
            return bad("prototype_scale and min_separation must be positive".into());
        }
        if self.noise_sigma < 0.0 || !(0.0..=1.0).contains(&self.shared_fraction) {
            return bad("noise_sigma must be >= 0 and shared_fraction in [0, 1]".into());
        }
        Ok(())
    }
}

/// `x ↦ A·x + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelTransform {
    pub matrix: Matrix<f64>,
    pub offset: Vec<f64>,
}

impl ChannelTransform {
    pub fn identity(d: usize) -> Self {
        ChannelTransform {
            matrix: Matrix::identity(d),
            offset: vec![0.0; d],
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.offset.len())
            .map(|i| {
                let row = self.matrix.row(i);
                row.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() + self.offset[i]
            })
            .collect()
    }
}

/// First-order character model over letters; words are joined by the separator.
#[derive(Clone, Debug, PartialEq)]
pub struct TextModel {
    letters: Vec<char>,
    initial: Vec<f64>,
    transitions: Vec<Vec<f64>>,
    word_len: (usize, usize),
    words_per_utterance: (usize, usize),
}

fn peaked_distribution(n: usize, exclude: Option<usize>, rng: &mut SeededRng) -> Vec<f64> {
    let mut w: Vec<f64> = (0..n)
        .map(|j| {
            if Some(j) == exclude {
                0.0
            } else {
                0.05 + rng.uniform().powi(3)
            }
        })
        .collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);
    w
}

fn draw(dist: &[f64], rng: &mut SeededRng) -> usize {
    let u = rng.uniform();
    let mut acc = 0.0;
    for (i, &p) in dist.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    dist.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

impl TextModel {
    fn generate(letters: Vec<char>, cfg: &LanguageConfig, rng: &mut SeededRng) -> Self {
        let n = letters.len();
        let initial = peaked_distribution(n, None, rng);
        let transitions = (0..n).map(|i| peaked_distribution(n, Some(i), rng)).collect();
        TextModel {
            letters,
            initial,
            transitions,
            word_len: cfg.word_len,
            words_per_utterance: cfg.words_per_utterance,
        }
    }

    pub fn sample(&self, separator: char, rng: &mut SeededRng) -> String {
        let words = rng.range_inclusive(self.words_per_utterance.0, self.words_per_utterance.1);
        let mut out = String::new();
        for w in 0..words {
            if w > 0 {
                out.push(separator);
            }
            let len = rng.range_inclusive(self.word_len.0, self.word_len.1);
            let mut cur = draw(&self.initial, rng);
            out.push(self.letters[cur]);
            for _ in 1..len {
                cur = draw(&self.transitions[cur], rng);
                out.push(self.letters[cur]);
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LanguageSpec {
    pub alphabet: Alphabet,
    /// One prototype per alphabet symbol, in alphabet order.
    pub prototypes: Vec<Vec<f64>>,
    pub frames_per_char: (usize, usize),
    pub noise_sigma: f64,
    pub nuisance_dims: usize,
    pub nuisance_sigma: f64,
    pub channel: ChannelTransform,
    pub text: TextModel,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Builds a language from `seed`. With `base`, the first
/// `round(shared_fraction · |symbols|)` symbols reuse the base prototypes at
/// the same index; all others are drawn at least `min_separation` away from
/// every prototype of both languages.
pub fn generate_language(seed: u64, cfg: &LanguageConfig, base: Option<&LanguageSpec>) -> Result<LanguageSpec> {
    cfg.validate()?;
    let letters: Vec<char> = cfg.letters.chars().collect();
    let alphabet = Alphabet::with_space(&cfg.letters)?;
    let n = alphabet.symbols().len();
    let d = cfg.frame_dim;

    let shared = match base {
        Some(b) => {
            if b.prototypes.first().map_or(0, Vec::len) != d {
                return Err(Error::Config("base language has a different frame_dim".into()));
            }
            ((cfg.shared_fraction * n as f64).round() as usize).min(b.prototypes.len())
        }
        None => 0,
    };

    let mut rng = SeededRng::derived(seed, "prototypes");
    let mut prototypes: Vec<Vec<f64>> = Vec::with_capacity(n);
    let min_sq = cfg.min_separation * cfg.min_separation;
    let forbidden: Vec<Vec<f64>> = base.map(|b| b.prototypes.clone()).unwrap_or_default();
    for i in 0..n {
        if i < shared {
            prototypes.push(forbidden[i].clone());
            continue;
        }
        let mut placed = false;
        for _ in 0..20_000 {
            let content = d - cfg.nuisance_dims;
            let cand: Vec<f64> = (0..d)
                .map(|j| {
                    if j < content {
                        cfg.prototype_scale * rng.normal()
                    } else {
                        0.0
                    }
                })
                .collect();
            let ok = prototypes
                .iter()
                .chain(forbidden.iter())
                .all(|p| sq_dist(p, &cand) >= min_sq);
            if ok {
                prototypes.push(cand);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::PrototypeSeparation {
                requested: n,
                dim: d,
                min_separation: cfg.min_separation,
            });
        }
    }

    let mut crng = SeededRng::derived(seed, "channel");
    let scale = cfg.channel_shift / (d as f64).sqrt();
    let matrix = Matrix::from_fn(d, d, |i, j| f64::from(u8::from(i == j)) + scale * crng.normal());
    let dir: Vec<f64> = (0..d).map(|_| crng.normal()).collect();
    let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    let offset = dir.iter().map(|x| cfg.channel_offset * x / norm).collect();

    let text = TextModel::generate(letters, cfg, &mut SeededRng::derived(seed, "text"));
    Ok(LanguageSpec {
        alphabet,
        prototypes,
        frames_per_char: cfg.frames_per_char,
        noise_sigma: cfg.noise_sigma,
        nuisance_dims: cfg.nuisance_dims,
        nuisance_sigma: cfg.nuisance_sigma,
        channel: ChannelTransform { matrix, offset },
        text,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    LabeledTrain,
    LabeledValid,
    Unlabeled,
    Dev,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::LabeledTrain, Split::LabeledValid, Split::Unlabeled, Split::Dev];

    pub fn name(self) -> &'static str {
        match self {
            Split::LabeledTrain => "labeled_train",
            Split::LabeledValid => "labeled_valid",
            Split::Unlabeled => "unlabeled",
            Split::Dev => "dev",
        }
    }

    pub fn is_labeled(self) -> bool {
        !matches!(self, Split::Unlabeled)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub frames: Matrix<f32>,
    pub text: Option<String>,
}

/// Transcripts of an unlabeled split, held apart from the utterances so
/// training code cannot reach them. Used only to score pseudo-labels.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct HiddenTruth {
    entries: Vec<(String, String)>,
}

impl HiddenTruth {
    pub fn new(entries: Vec<(String, String)>) -> Self {
        HiddenTruth { entries }
    }

    pub fn get(&self, id: &str) -> Option<&str> {
        self.entries.iter().find(|(i, _)| i == id).map(|(_, t)| t.as_str())
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    split: Split,
    utterances: Vec<Utterance>,
    hidden: Option<HiddenTruth>,
}

impl Corpus {
    /// Unlabeled corpora must not carry transcripts on their utterances.
    pub fn new(split: Split, utterances: Vec<Utterance>, hidden: Option<HiddenTruth>) -> Result<Self> {
        if !split.is_labeled() {
            if let Some(u) = utterances.iter().find(|u| u.text.is_some()) {
                return Err(Error::Config(format!(
                    "unlabeled utterance {} carries a transcript",
                    u.id
                )));
            }
        } else if let Some(u) = utterances.iter().find(|u| u.text.is_none()) {
            return Err(Error::Config(format!("labeled utterance {} has no transcript", u.id)));
        }
        Ok(Corpus {
            split,
            utterances,
            hidden,
        })
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn utterances(&self) -> &[Utterance] {
        &self.utterances
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn hidden_truth(&self) -> Option<&HiddenTruth> {
        self.hidden.as_ref()
    }

    /// Supervised examples; fails on an unlabeled corpus.
    pub fn training_examples(&self, alphabet: &Alphabet) -> Result<Vec<TrainingExample>> {
        self.utterances
            .iter()
            .map(|u| {
                let text = u
                    .text
                    .as_deref()
                    .ok_or_else(|| Error::Config(format!("utterance {} has no transcript", u.id)))?;
                TrainingExample::new(u.id.clone(), u.frames.cast(), text, alphabet)
            })
            .collect()
    }

    /// Reference transcripts of a labeled split.
    pub fn transcripts(&self) -> Vec<&str> {
        self.utterances.iter().filter_map(|u| u.text.as_deref()).collect()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitBudgets {
    pub labeled_train: usize,
    pub labeled_valid: usize,
    pub unlabeled: usize,
    pub dev: usize,
}

impl SplitBudgets {
    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::LabeledTrain => self.labeled_train,
            Split::LabeledValid => self.labeled_valid,
            Split::Unlabeled => self.unlabeled,
            Split::Dev => self.dev,
        }
    }
}

/// The four splits of one synthetic language.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCorpus {
    pub labeled_train: Corpus,
    pub labeled_valid: Corpus,
    pub unlabeled: Corpus,
    pub dev: Corpus,
}

impl SyntheticCorpus {
    pub fn split(&self, split: Split) -> &Corpus {
        match split {
            Split::LabeledTrain => &self.labeled_train,
            Split::LabeledValid => &self.labeled_valid,
            Split::Unlabeled => &self.unlabeled,
            Split::Dev => &self.dev,
        }
    }
}

/// Emits one utterance for `text`.
pub fn synthesize_utterance(spec: &LanguageSpec, text: &str, rng: &mut SeededRng) -> Result<Matrix<f32>> {
    let d = spec.prototypes[0].len();
    let content = d - spec.nuisance_dims;
    let mut data = Vec::new();
    let mut rows = 0;
    for c in text.chars() {
        let proto = &spec.prototypes[spec.alphabet.label_of(c)? as usize - 1];
        let n = rng.range_inclusive(spec.frames_per_char.0, spec.frames_per_char.1);
        for _ in 0..n {
            let noisy: Vec<f64> = proto
                .iter()
                .enumerate()
                .map(|(j, p)| {
                    let sigma = if j < content {
                        spec.noise_sigma
                    } else {
                        spec.nuisance_sigma
                    };
                    p + sigma * rng.normal()
                })
                .collect();
            data.extend(spec.channel.apply(&noisy).into_iter().map(|x| x as f32));
            rows += 1;
        }
    }
    Matrix::from_vec(rows, d, data)
}

/// Generates all splits. Utterance `i` of split `s` is `{prefix}-{s}-{i:05}`
/// and depends only on `(spec, seed, id)`.
pub fn synthesize_corpus(
    spec: &LanguageSpec,
    budgets: &SplitBudgets,
    seed: u64,
    prefix: &str,
) -> Result<SyntheticCorpus> {
    let make = |split: Split| -> Result<Corpus> {
        let ids: Vec<String> = (0..budgets.get(split))
            .map(|i| format!("{prefix}-{}-{i:05}", split.name()))
            .collect();
        let generated: Vec<(Utterance, String)> = ids
            .par_iter()
            .map(|id| {
                let mut rng = SeededRng::new(derive_seed(seed, id));
                let text = spec.text.sample(spec.alphabet.separator(), &mut rng);
                let frames = synthesize_utterance(spec, &text, &mut rng)?;
                Ok((
                    Utterance {
                        id: id.clone(),
                        frames,
                        text: None,
                    },
                    text,
                ))
            })
            .collect::<Result<_>>()?;
        if split.is_labeled() {
            let utts = generated
                .into_iter()
                .map(|(mut u, t)| {
                    u.text = Some(t);
                    u
                })
                .collect();
            Corpus::new(split, utts, None)
        } else {
            let truth = generated.iter().map(|(u, t)| (u.id.clone(), t.clone())).collect();
            let utts = generated.into_iter().map(|(u, _)| u).collect();
            Corpus::new(split, utts, Some(HiddenTruth::new(truth)))
        }
    };
    Ok(SyntheticCorpus {
        labeled_train: make(Split::LabeledTrain)?,
        labeled_valid: make(Split::LabeledValid)?,
        unlabeled: make(Split::Unlabeled)?,
        dev: make(Split::Dev)?,
    })
}

/// Framewise nearest-prototype classifier with repeat collapsing: the
/// generator's own decision rule, ignoring temporal context.
pub struct NearestPrototypeDecoder {
    alphabet: Alphabet,
    emitted: Vec<Vec<f64>>,
}

impl NearestPrototypeDecoder {
    pub fn new(spec: &LanguageSpec) -> Self {
        NearestPrototypeDecoder {
            alphabet: spec.alphabet.clone(),
            emitted: spec.prototypes.iter().map(|p| spec.channel.apply(p)).collect(),
        }
    }

    pub fn decode(&self, frames: &Matrix<f32>) -> String {
        let mut labels = Vec::with_capacity(frames.rows());
        for t in 0..frames.rows() {
            let x: Vec<f64> = frames.row(t).iter().map(|&v| f64::from(v)).collect();
            let best = self
                .emitted
                .iter()
                .enumerate()
                .map(|(i, p)| (i, sq_dist(p, &x)))
                .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a })
                .0;
            labels.push(best as u32 + 1);
        }
        self.alphabet.decode(&crate::ctc::collapse(&labels))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textdist::wer_cer;

    #[test]
    fn same_seed_same_spec() {
        let cfg = LanguageConfig::default();
        assert_eq!(
            generate_language(3, &cfg, None).unwrap(),
            generate_language(3, &cfg, None).unwrap()
        );
    }

    #[test]
    fn full_sharing_differs_only_in_channel() {
        let cfg = LanguageConfig::default();
        let src = generate_language(3, &cfg, None).unwrap();
        let tgt_cfg = LanguageConfig {
            shared_fraction: 1.0,
            channel_shift: 0.3,
            channel_offset: 0.5,
            ..cfg
        };
        let tgt = generate_language(3, &tgt_cfg, Some(&src)).unwrap();
        assert_eq!(tgt.prototypes, src.prototypes);
        assert_eq!(tgt.text, src.text);
        assert_eq!(tgt.alphabet, src.alphabet);
        assert_ne!(tgt.channel, src.channel);
    }

    #[test]
    fn no_sharing_keeps_separation() {
        let cfg = LanguageConfig::default();
        let src = generate_language(3, &cfg, None).unwrap();
        let tgt = generate_language(
            4,
            &LanguageConfig {
                shared_fraction: 0.0,
                ..cfg.clone()
            },
            Some(&src),
        )
        .unwrap();
        for p in &tgt.prototypes {
            for q in &src.prototypes {
                assert!(sq_dist(p, q).sqrt() >= cfg.min_separation);
            }
        }
    }

    #[test]
    fn impossible_separation_is_an_error() {
        let cfg = LanguageConfig {
            frame_dim: 2,
            min_separation: 50.0,
            ..LanguageConfig::default()
        };
        assert!(matches!(
            generate_language(1, &cfg, None),
            Err(Error::PrototypeSeparation { .. })
        ));
    }

    #[test]
    fn exact_budgets_and_disjoint_ids() {
        let spec = generate_language(1, &LanguageConfig::default(), None).unwrap();
        let budgets = SplitBudgets {
            labeled_train: 10,
            labeled_valid: 3,
            unlabeled: 100,
            dev: 4,
        };
        let c = synthesize_corpus(&spec, &budgets, 5, "tgt").unwrap();
        assert_eq!(c.labeled_train.len(), 10);
        assert_eq!(c.unlabeled.len(), 100);
        let mut ids: Vec<&str> = Split::ALL
            .iter()
            .flat_map(|&s| c.split(s).utterances().iter().map(|u| u.id.as_str()))
            .collect();
        let n = ids.len();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), n);
        assert!(c.unlabeled.utterances().iter().all(|u| u.text.is_none()));
        assert_eq!(c.unlabeled.hidden_truth().unwrap().entries().len(), 100);
        assert!(c.unlabeled.training_examples(&spec.alphabet).is_err());
    }

    #[test]
    fn noiseless_corpus_is_decoded_exactly() {
        let cfg = LanguageConfig {
            noise_sigma: 0.0,
            frames_per_char: (1, 1),
            ..LanguageConfig::default()
        };
        let spec = generate_language(2, &cfg, None).unwrap();
        let c = synthesize_corpus(
            &spec,
            &SplitBudgets {
                dev: 30,
                ..Default::default()
            },
            9,
            "x",
        )
        .unwrap();
        let dec = NearestPrototypeDecoder::new(&spec);
        let hyps: Vec<String> = c.dev.utterances().iter().map(|u| dec.decode(&u.frames)).collect();
        let refs = c.dev.transcripts();
        assert_eq!(wer_cer(&hyps, &refs, ' ').unwrap().cer, 0.0);
    }

    #[test]
    fn channel_changes_frames_not_text() {
        let cfg = LanguageConfig::default();
        let plain = generate_language(2, &cfg, None).unwrap();
        let mut shifted = plain.clone();
        shifted.channel = generate_language(
            2,
            &LanguageConfig {
                channel_shift: 0.5,
                ..cfg
            },
            None,
        )
        .unwrap()
        .channel;
        let budgets = SplitBudgets {
            unlabeled: 5,
            ..Default::default()
        };
        let a = synthesize_corpus(&plain, &budgets, 1, "u").unwrap();
        let b = synthesize_corpus(&shifted, &budgets, 1, "u").unwrap();
        assert_eq!(a.unlabeled.hidden_truth(), b.unlabeled.hidden_truth());
        assert_ne!(a.unlabeled.utterances()[0].frames, b.unlabeled.utterances()[0].frames);
    }
}
