use super::{LogProbLattice, BLANK};
use crate::error::{Error, Result};
use crate::numkit::Matrix;
use crate::scalar::{log_add, Scalar};

/// Minimum number of frames needed to emit `target`: one per symbol plus one
/// blank between each pair of equal neighbours.
pub(crate) fn required_frames(target: &[u32]) -> usize {
    target.len() + target.windows(2).filter(|w| w[0] == w[1]).count()
}

/// Negative log-likelihood of `target` and its gradient with respect to the
/// pre-softmax logits that produced `lattice`.
#[allow(clippy::needless_range_loop)]
pub fn ctc_loss_and_grad<S: Scalar>(lattice: &LogProbLattice<S>, target: &[u32]) -> Result<(S, Matrix<S>)> {
    if target.is_empty() {
        return Err(Error::EmptyTarget);
    }
    let v = lattice.vocab_size();
    if let Some(&bad) = target.iter().find(|&&l| l == BLANK || l as usize >= v) {
        return Err(Error::shape("ctc_loss", format!("labels in 1..{v}"), bad));
    }
    let t_len = lattice.frames();
    let required = required_frames(target);
    if t_len < required {
        return Err(Error::InfeasibleAlignment {
            target_len: target.len(),
            required,
            frames: t_len,
        });
    }

    // Blank-interleaved label sequence.
    let s_len = 2 * target.len() + 1;
    let ext: Vec<u32> = (0..s_len)
        .map(|s| if s % 2 == 0 { BLANK } else { target[s / 2] })
        .collect();
    let can_skip = |s: usize| s >= 2 && ext[s] != BLANK && ext[s] != ext[s - 2];

    let ninf = S::neg_infinity();
    let mut alpha = Matrix::from_fn(t_len, s_len, |_, _| ninf);
    alpha.set(0, 0, lattice.at(0, ext[0]));
    alpha.set(0, 1, lattice.at(0, ext[1]));
    for t in 1..t_len {
        for s in 0..s_len {
            let mut acc = alpha.get(t - 1, s);
            if s >= 1 {
                acc = log_add(acc, alpha.get(t - 1, s - 1));
            }
            if can_skip(s) {
                acc = log_add(acc, alpha.get(t - 1, s - 2));
            }
            if acc != ninf {
                alpha.set(t, s, acc + lattice.at(t, ext[s]));
            }
        }
    }

    let mut beta = Matrix::from_fn(t_len, s_len, |_, _| ninf);
    let last = t_len - 1;
    beta.set(last, s_len - 1, lattice.at(last, ext[s_len - 1]));
    beta.set(last, s_len - 2, lattice.at(last, ext[s_len - 2]));
    for t in (0..last).rev() {
        for s in 0..s_len {
            let mut acc = beta.get(t + 1, s);
            if s + 1 < s_len {
                acc = log_add(acc, beta.get(t + 1, s + 1));
            }
            if s + 2 < s_len && can_skip(s + 2) {
                acc = log_add(acc, beta.get(t + 1, s + 2));
            }
            if acc != ninf {
                beta.set(t, s, acc + lattice.at(t, ext[s]));
            }
        }
    }

    let log_p = log_add(alpha.get(last, s_len - 1), alpha.get(last, s_len - 2));
    if log_p == ninf {
        return Err(Error::InfeasibleAlignment {
            target_len: target.len(),
            required,
            frames: t_len,
        });
    }

    // Occupancy γ_t(k) = Σ_{s: ext[s]=k} α_t(s) β_t(s) / y_t(k) / p.
    let mut grad = Matrix::zeros(t_len, v);
    let mut occupancy = vec![ninf; v];
    for t in 0..t_len {
        occupancy.iter_mut().for_each(|o| *o = ninf);
        for s in 0..s_len {
            let ab = alpha.get(t, s) + beta.get(t, s);
            if ab != ninf {
                let k = ext[s] as usize;
                occupancy[k] = log_add(occupancy[k], ab);
            }
        }
        for (k, &occ) in occupancy.iter().enumerate() {
            let lp = lattice.at(t, k as u32);
            let posterior = if occ == ninf {
                S::zero()
            } else {
                (occ - lp - log_p).exp()
            };
            grad.set(t, k, lp.exp() - posterior);
        }
    }
    Ok((-log_p, grad))
}
