use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{atomic_write, read_bytes, read_features, write_features, write_json};
use crate::dust::{FilterConfig, PseudoEntry, PseudoLabelSet, PseudoStats};
use crate::error::{Error, Result};
use crate::synth::{Corpus, HiddenTruth, Split, Utterance};

pub const PSEUDO_MANIFEST: &str = "pseudo.jsonl";
pub const PSEUDO_STATS: &str = "pseudo_stats.json";

/// One manifest line. `frames` is relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub frames: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TruthEntry {
    id: String,
    text: String,
}

fn to_jsonl<T: Serialize>(items: &[T]) -> Vec<u8> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, item).expect("manifest entries serialize");
        out.push(b'\n');
    }
    out
}

fn from_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let bytes = read_bytes(path)?;
    let mut out = Vec::new();
    let mut offset = 0u64;
    for line in bytes.split_inclusive(|&b| b == b'\n') {
        let body = line.strip_suffix(b"\n").unwrap_or(line);
        if !body.iter().all(u8::is_ascii_whitespace) {
            let item = serde_json::from_slice(body).map_err(|e| Error::format(path, offset, e.to_string()))?;
            out.push(item);
        }
        offset += line.len() as u64;
    }
    Ok(out)
}

fn manifest_path(dir: &Path, split: Split) -> std::path::PathBuf {
    dir.join(format!("{}.jsonl", split.name()))
}

fn truth_path(dir: &Path, split: Split) -> std::path::PathBuf {
    dir.join(format!("{}.truth.jsonl", split.name()))
}

/// Writes `<split>.jsonl` and one `.fea` file per utterance under
/// `<split>/`. Hidden transcripts of an unlabeled split go to
/// `<split>.truth.jsonl`, never into the manifest.
pub fn write_corpus(dir: &Path, corpus: &Corpus) -> Result<()> {
    let split = corpus.split();
    let mut entries = Vec::with_capacity(corpus.len());
    for u in corpus.utterances() {
        let rel = format!("{}/{}.fea", split.name(), u.id);
        write_features(&dir.join(&rel), &u.frames)?;
        entries.push(ManifestEntry {
            id: u.id.clone(),
            frames: rel,
            text: u.text.clone(),
        });
    }
    if let Some(truth) = corpus.hidden_truth() {
        let rows: Vec<TruthEntry> = truth
            .entries()
            .iter()
            .map(|(id, text)| TruthEntry {
                id: id.clone(),
                text: text.clone(),
            })
            .collect();
        atomic_write(&truth_path(dir, split), &to_jsonl(&rows))?;
    }
    atomic_write(&manifest_path(dir, split), &to_jsonl(&entries))
}

/// Reads a split written by [`write_corpus`], validating every feature file.
/// An unlabeled manifest that carries transcripts is rejected.
pub fn read_corpus(dir: &Path, split: Split) -> Result<Corpus> {
    let path = manifest_path(dir, split);
    let entries: Vec<ManifestEntry> = from_jsonl(&path)?;
    let mut utts = Vec::with_capacity(entries.len());
    let mut dim = None;
    for e in entries {
        if !split.is_labeled() && e.text.is_some() {
            return Err(Error::format(
                &path,
                0,
                format!("unlabeled entry {} carries a transcript", e.id),
            ));
        }
        let fea = dir.join(&e.frames);
        let frames = read_features(&fea)?;
        if *dim.get_or_insert(frames.cols()) != frames.cols() {
            return Err(Error::format(
                &fea,
                12,
                "frame dimension differs from the rest of the corpus",
            ));
        }
        utts.push(Utterance {
            id: e.id,
            frames,
            text: e.text,
        });
    }
    let tp = truth_path(dir, split);
    let hidden = if !split.is_labeled() && tp.exists() {
        let rows: Vec<TruthEntry> = from_jsonl(&tp)?;
        Some(HiddenTruth::new(rows.into_iter().map(|r| (r.id, r.text)).collect()))
    } else {
        None
    };
    Corpus::new(split, utts, hidden)
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    #[serde(flatten)]
    stats: PseudoStats,
    filter: FilterConfig,
}

/// Writes `pseudo.jsonl` and `pseudo_stats.json` into `dir`.
pub fn write_pseudo_set(dir: &Path, set: &PseudoLabelSet) -> Result<()> {
    atomic_write(&dir.join(PSEUDO_MANIFEST), &to_jsonl(&set.entries))?;
    write_json(
        &dir.join(PSEUDO_STATS),
        &Sidecar {
            stats: set.stats.clone(),
            filter: set.filter.clone(),
        },
    )
}

pub fn read_pseudo_set(dir: &Path) -> Result<PseudoLabelSet> {
    let entries: Vec<PseudoEntry> = from_jsonl(&dir.join(PSEUDO_MANIFEST))?;
    let side: Sidecar = super::read_json(&dir.join(PSEUDO_STATS))?;
    Ok(PseudoLabelSet {
        entries,
        stats: side.stats,
        filter: side.filter,
    })
}
