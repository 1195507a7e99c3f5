use crate::error::{Error, Result};

/// Inverse-square-root schedule with linear warmup:
/// `max_lr · √warmup · min(step^-½, step · warmup^-1.5)`.
pub fn lr_at(step: u64, max_lr: f64, warmup_steps: u64) -> Result<f64> {
    if step == 0 {
        return Err(Error::StepZero);
    }
    if warmup_steps == 0 {
        return Err(Error::Config("warmup_steps must be >= 1".into()));
    }
    let s = step as f64;
    let w = warmup_steps as f64;
    Ok(max_lr * w.sqrt() * s.powf(-0.5).min(s * w.powf(-1.5)))
}
