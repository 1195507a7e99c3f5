use crate::error::{Error, Result};
use crate::numkit::{Matrix, SeededRng};
use crate::scalar::Scalar;

/// Per-frame probability of starting a span such that a frame away from the
/// edges is covered with probability `target_fraction`:
/// `1 - (1 - q)^span = target_fraction`.
pub fn span_start_probability(span: usize, target_fraction: f64) -> f64 {
    1.0 - (1.0 - target_fraction).powf(1.0 / span as f64)
}

/// Samples span starts independently at each admissible frame (`0..=T-span`)
/// and marks every covered frame. Spans may overlap.
pub fn sample_time_mask(frames: usize, span: usize, target_fraction: f64, rng: &mut SeededRng) -> Result<Vec<bool>> {
    if span == 0 {
        return Err(Error::Config("mask span must be >= 1".into()));
    }
    if !(0.0..1.0).contains(&target_fraction) {
        return Err(Error::Config(format!(
            "mask fraction must be in [0, 1), got {target_fraction}"
        )));
    }
    if frames < span {
        return Err(Error::shape("time mask", format!("at least {span} frames"), frames));
    }
    let q = span_start_probability(span, target_fraction);
    let mut mask = vec![false; frames];
    for start in 0..=frames - span {
        if rng.bernoulli(q) {
            mask[start..start + span].iter_mut().for_each(|m| *m = true);
        }
    }
    Ok(mask)
}

/// Replaces masked frames with `fill` and returns the mask alongside.
pub fn apply_time_mask<S: Scalar>(
    frames: &Matrix<S>,
    span: usize,
    target_fraction: f64,
    rng: &mut SeededRng,
    fill: &[S],
) -> Result<(Matrix<S>, Vec<bool>)> {
    if fill.len() != frames.cols() {
        return Err(Error::shape("time mask fill", frames.cols(), fill.len()));
    }
    let mask = sample_time_mask(frames.rows(), span, target_fraction, rng)?;
    let mut out = frames.clone();
    for (t, &m) in mask.iter().enumerate() {
        if m {
            out.row_mut(t).copy_from_slice(fill);
        }
    }
    Ok((out, mask))
}
