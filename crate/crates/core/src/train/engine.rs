use log::debug;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::batch::pack_batches;
use super::schedule::lr_at;
use super::TrainConfig;
use crate::error::{Error, Result};
use crate::numkit::{derive_seed, Adam, EncoderModel, SeededRng, TrainableMask};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: Option<f64>,
    /// Optimizer updates completed by the end of this epoch.
    pub updates: u64,
    pub micro_batches: usize,
    pub skipped: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: Option<usize>,
    pub updates: u64,
}

/// Per-example loss and gradient; `None` when the example is skipped.
pub(crate) type ExampleResult = Result<Option<(f64, Vec<f64>)>>;

/// Shared optimization loop. `example_grad(model, index, seed, trainable)`
/// evaluates one example; `validate(model)` scores the model after each epoch
/// (lower is better) and the best-scoring parameters are restored at the end.
pub(crate) fn run<G, V>(
    model: &mut EncoderModel<f64>,
    cfg: &TrainConfig,
    lengths: &[usize],
    phase: impl Fn(u64) -> TrainableMask,
    example_grad: G,
    mut validate: Option<V>,
) -> Result<TrainLog>
where
    G: Fn(&EncoderModel<f64>, usize, u64, TrainableMask) -> ExampleResult + Sync,
    V: FnMut(&EncoderModel<f64>) -> Result<f64>,
{
    cfg.validate()?;
    let layout = model.layout();
    let mut adam = Adam::new(layout.iter().map(|b| b.len()).collect());
    let n_params = model.param_count();
    let mut log = TrainLog::default();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut last_finite = model.params();

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..lengths.len()).collect();
        SeededRng::derived(cfg.seed, &format!("shuffle/{epoch}")).shuffle(&mut order);
        let batches = pack_batches(&order, lengths, cfg.frame_budget_per_batch)?;

        let mut acc = vec![0.0; n_params];
        let mut acc_count = 0usize;
        let mut in_window = 0usize;
        let mut epoch_loss = 0.0;
        let mut epoch_count = 0usize;
        let mut skipped = 0usize;

        for (b, batch) in batches.iter().enumerate() {
            let trainable = phase(log.updates + 1);
            let results: Vec<ExampleResult> = batch
                .par_iter()
                .map(|&i| {
                    let seed = derive_seed(cfg.seed, &format!("example/{epoch}/{i}"));
                    example_grad(model, i, seed, trainable)
                })
                .collect();
            for r in results {
                match r? {
                    Some((loss, grad)) => {
                        if !loss.is_finite() {
                            return Err(diverged(model, epoch, &last_finite));
                        }
                        epoch_loss += loss;
                        epoch_count += 1;
                        acc_count += 1;
                        for (a, g) in acc.iter_mut().zip(&grad) {
                            *a += g;
                        }
                    }
                    None => skipped += 1,
                }
            }
            in_window += 1;
            let epoch_end = b + 1 == batches.len();
            if in_window == cfg.grad_accumulation || epoch_end {
                if acc_count > 0 {
                    let scale = 1.0 / acc_count as f64;
                    acc.iter_mut().for_each(|a| *a *= scale);
                    let step = log.updates + 1;
                    let lr = lr_at(step, cfg.max_lr, cfg.warmup_steps)?;
                    let mut params = model.params();
                    match adam.step(&mut params, &acc, lr) {
                        Ok(()) => {}
                        Err(Error::NonFiniteGradient { .. }) => {
                            return Err(diverged(model, epoch, &last_finite));
                        }
                        Err(e) => return Err(e),
                    }
                    if params.iter().any(|p| !p.is_finite()) {
                        return Err(diverged(model, epoch, &last_finite));
                    }
                    model.set_params(&params)?;
                    log.updates = step;
                }
                acc.iter_mut().for_each(|a| *a = 0.0);
                acc_count = 0;
                in_window = 0;
            }
        }
        last_finite = model.params();

        let train_loss = if epoch_count > 0 {
            epoch_loss / epoch_count as f64
        } else {
            0.0
        };
        let valid_loss = match validate.as_mut() {
            Some(v) => {
                let l = v(model)?;
                if l.is_finite() && best.as_ref().is_none_or(|(b, _)| l < *b) {
                    best = Some((l, model.params()));
                    log.best_epoch = Some(epoch);
                }
                Some(l)
            }
            None => None,
        };
        debug!(
            "epoch {epoch}: train {train_loss:.4} valid {valid_loss:?} updates {}",
            log.updates
        );
        log.epochs.push(EpochStats {
            epoch,
            train_loss,
            valid_loss,
            updates: log.updates,
            micro_batches: batches.len(),
            skipped,
        });
    }
    if let Some((_, params)) = best {
        model.set_params(&params)?;
    }
    Ok(log)
}

fn diverged(model: &EncoderModel<f64>, epoch: usize, last_finite: &[f64]) -> Error {
    let mut m = model.clone();
    if m.set_params(last_finite).is_err() {
        return Error::Config("divergence recovery failed".into());
    }
    match crate::numkit::ModelCheckpoint::new(m, "diverged", None, 0, None) {
        Ok(ck) => Error::Diverged {
            epoch,
            last_finite: Box::new(ck),
        },
        Err(e) => e,
    }
}
