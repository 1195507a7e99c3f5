use crate::error::{Error, Result};

/// Greedily packs utterances (in `order`) into batches whose total frame
/// count stays within `frame_budget`. Utterances are never split.
pub fn pack_batches(order: &[usize], lengths: &[usize], frame_budget: usize) -> Result<Vec<Vec<usize>>> {
    let mut batches = Vec::new();
    let mut current = Vec::new();
    let mut used = 0;
    for &i in order {
        let len = lengths[i];
        if len > frame_budget {
            return Err(Error::Config(format!(
                "utterance {i} has {len} frames, more than the batch budget of {frame_budget}"
            )));
        }
        if used + len > frame_budget && !current.is_empty() {
            batches.push(std::mem::take(&mut current));
            used = 0;
        }
        current.push(i);
        used += len;
    }
    if !current.is_empty() {
        batches.push(current);
    }
    Ok(batches)
}

/// Optimizer updates in one epoch of `micro_batches` with accumulation `g`.
pub fn updates_per_epoch(micro_batches: usize, g: usize) -> usize {
    micro_batches.div_ceil(g)
}
