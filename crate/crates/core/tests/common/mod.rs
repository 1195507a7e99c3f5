//! Oracles shared by the integration tests.

#![allow(dead_code)]

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use dust::ctc::{collapse, LogProbLattice};
use dust::numkit::{Matrix, SeededRng};

/// Probability of every labeling, by summing all |V|^T alignments.
pub fn labeling_marginals(lattice: &LogProbLattice<f64>) -> HashMap<Vec<u32>, f64> {
    let t_len = lattice.frames();
    let v = lattice.vocab_size() as u32;
    let mut out = HashMap::new();
    let mut path = vec![0u32; t_len];
    loop {
        let p: f64 = path
            .iter()
            .enumerate()
            .map(|(t, &k)| lattice.at(t, k))
            .sum::<f64>()
            .exp();
        *out.entry(collapse(&path)).or_insert(0.0) += p;
        let mut i = 0;
        loop {
            if i == t_len {
                return out;
            }
            path[i] += 1;
            if path[i] < v {
                break;
            }
            path[i] = 0;
            i += 1;
        }
    }
}

pub fn random_logits(rng: &mut SeededRng, t: usize, v: usize, scale: f64) -> Matrix<f64> {
    Matrix::from_fn(t, v, |_, _| scale * rng.normal())
}

/// Every file under `root` as (relative path, bytes), sorted by path.
pub fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(PathBuf, Vec<u8>)>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_path_buf();
                out.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(root, root, &mut out);
    out.sort();
    out
}
