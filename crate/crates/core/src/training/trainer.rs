//! Mini-batch training with per-epoch validation and learning-rate decay.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Mode, StatUpdate};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::params::ParamSet;
use crate::pipeline::augment::augment_sample;
use crate::pipeline::sample::Sample;
use crate::pipeline::two_stage::{binarize, probabilities};
use crate::tensor::{cst, Real, Tensor};
use crate::training::metrics::{dice_score, Metrics};
use crate::training::optim::Sgd;
use crate::training::schedule::{lr_on_validation, TrainConfig, TrainState};

/// Which mask of a [`Sample`] the network learns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    La,
    Scar,
}

impl Target {
    pub fn mask(self, s: &Sample) -> Result<&Tensor> {
        let m = match self {
            Target::La => s.la_mask.as_ref(),
            Target::Scar => s.scar_mask.as_ref(),
        };
        m.ok_or_else(|| Error::Malformed(format!("sample {} has no {self:?} mask", s.meta.seed)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_dice: f64,
    /// Learning rate after this epoch's validation.
    pub lr: f64,
    pub steps: usize,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    pub state: TrainState,
    pub steps: usize,
}

/// Number of mini-batches an epoch over `n` slices takes.
pub fn batches_per_epoch(n: usize, batch_size: usize) -> usize {
    n.div_ceil(batch_size)
}

fn stack_batch(samples: &[&Sample], target: Target) -> Result<(Tensor, Tensor)> {
    let images: Vec<Tensor> = samples.iter().map(|s| s.image.clone()).collect();
    let masks = samples
        .iter()
        .map(|s| {
            let m = target.mask(s)?;
            m.clone().reshape(&[1, s.height(), s.width()])
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((Tensor::stack(&images)?, Tensor::stack(&masks)?))
}

pub fn apply_stat_updates<T: Real>(params: &mut ParamSet<T>, updates: Vec<StatUpdate<T>>, momentum: f64) {
    let m = cst::<T>(momentum);
    let keep = T::one() - m;
    for u in updates {
        for (r, &b) in params.get_mut(u.running_mean).data_mut().iter_mut().zip(&u.stats.mean) {
            *r = keep * *r + m * b;
        }
        for (r, &b) in params.get_mut(u.running_var).data_mut().iter_mut().zip(&u.stats.var) {
            *r = keep * *r + m * b;
        }
    }
}

/// One forward/backward/update on a batch; returns the loss.
pub fn train_step(
    model: &mut Model,
    opt: &mut Sgd<f32>,
    images: &Tensor,
    masks: &Tensor,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<f64> {
    let (loss, grads, updates) = {
        let mut g = Graph::new(model.params(), Mode::Train);
        let x = g.input(images.clone());
        let logits = model.forward(&mut g, x)?;
        let loss = g.composite_loss(logits, masks, cfg.loss)?;
        let value = g.value(loss).data()[0] as f64;
        let grads = g.backward(loss, None).into_param_grads(model.params());
        (value, grads, g.take_stat_updates())
    };
    if !loss.is_finite() {
        return Err(Error::NonFiniteGradient("loss".into()));
    }
    opt.step(model.params_mut(), &grads, lr)?;
    apply_stat_updates(model.params_mut(), updates, cfg.bn_momentum);
    Ok(loss)
}

/// Per-slice Dice of thresholded inference-mode predictions.
pub fn evaluate(model: &Model, samples: &[Sample], target: Target, batch_size: usize) -> Result<Metrics> {
    let mut per_slice = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let (images, masks) = stack_batch(&refs, target)?;
        let logits = model.predict(&images)?;
        let pred = binarize(&probabilities(&logits), 0.5);
        for b in 0..chunk.len() {
            per_slice.push(dice_score(&pred.batch_item(b), &masks.batch_item(b))?);
        }
    }
    Ok(Metrics::from_slices(per_slice))
}

/// Trains `model` in place. The result depends only on the initial
/// parameters, the sample order and `cfg.seed`.
pub fn train_loop(
    model: &mut Model,
    train: &[Sample],
    val: &[Sample],
    target: Target,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let expanded: Vec<Sample>;
    let train: &[Sample] = if cfg.augment {
        expanded = train.iter().flat_map(|s| augment_sample(s, &mut rng)).collect();
        &expanded
    } else {
        train
    };
    let mut state = TrainState::new(cfg);
    let mut opt = Sgd::new(cfg.momentum);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut steps = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();
    'epochs: for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            if cfg.max_steps.is_some_and(|m| steps >= m) {
                break;
            }
            let refs: Vec<&Sample> = chunk.iter().map(|&i| &train[i]).collect();
            let (images, masks) = stack_batch(&refs, target)?;
            loss_sum += train_step(model, &mut opt, &images, &masks, state.lr, cfg)?;
            batches += 1;
            steps += 1;
        }
        let val_dice = evaluate(model, val, target, cfg.batch_size)?.mean;
        state = lr_on_validation(&state, val_dice, cfg);
        state.epoch = epoch;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / batches.max(1) as f64,
            val_dice,
            lr: state.lr,
            steps,
        };
        log::info!(
            "epoch {epoch}: loss {:.4} val dice {:.4} lr {:.2e}",
            record.train_loss,
            record.val_dice,
            record.lr
        );
        history.push(record);
        if cfg.max_steps.is_some_and(|m| steps >= m) {
            break 'epochs;
        }
    }
    Ok(TrainOutcome { history, state, steps })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batch_count() {
        assert_eq!(batches_per_epoch(40, 8), 5);
        assert_eq!(batches_per_epoch(41, 8), 6);
    }
}
