use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::training::loss::LossWeights;

/// When to decay the learning rate after a validation pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecayPolicy {
    /// Decay every time the best validation Dice is strictly improved
    /// (the first validation only sets the baseline).
    Record,
    /// Decay after `patience` validations without improvement.
    Plateau,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub initial_lr: f64,
    pub decay_factor: f64,
    pub decay_policy: DecayPolicy,
    pub patience: usize,
    pub momentum: f64,
    pub seed: u64,
    pub loss: LossWeights,
    /// Stop after this many optimizer steps, if set.
    pub max_steps: Option<usize>,
    /// Expand the training set with four rotated/shifted copies per slice.
    pub augment: bool,
    /// Fraction of batch statistics folded into the running
    /// normalization statistics each step.
    pub bn_momentum: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 8,
            initial_lr: 1e-4,
            decay_factor: 0.1,
            decay_policy: DecayPolicy::Record,
            patience: 2,
            momentum: 0.0,
            seed: 0,
            loss: LossWeights::default(),
            max_steps: None,
            augment: false,
            bn_momentum: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.decay_factor > 0.0 && self.decay_factor < 1.0) {
            return bad("decay_factor must lie in (0, 1)");
        }
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return bad("initial_lr must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) {
            return bad("bn_momentum must lie in [0, 1]");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub epoch: usize,
    pub lr: f64,
    pub best_dice: Option<f64>,
    /// Validations since the last improvement.
    pub stale: usize,
    pub seed: u64,
}

impl TrainState {
    pub fn new(cfg: &TrainConfig) -> Self {
        Self { epoch: 0, lr: cfg.initial_lr, best_dice: None, stale: 0, seed: cfg.seed }
    }
}

pub fn lr_on_validation(state: &TrainState, val_dice: f64, cfg: &TrainConfig) -> TrainState {
    let mut next = state.clone();
    let improved = match state.best_dice {
        None => {
            next.best_dice = Some(val_dice);
            next.stale = 0;
            return next;
        }
        Some(best) => val_dice > best,
    };
    if improved {
        next.best_dice = Some(val_dice);
        next.stale = 0;
    } else {
        next.stale += 1;
    }
    let decay = match cfg.decay_policy {
        DecayPolicy::Record => improved,
        DecayPolicy::Plateau => !improved && next.stale >= cfg.patience.max(1),
    };
    if decay {
        next.lr *= cfg.decay_factor;
        if cfg.decay_policy == DecayPolicy::Plateau {
            next.stale = 0;
        }
    }
    next
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_policy_examples() {
        let cfg = TrainConfig::default();
        let s = TrainState { best_dice: Some(0.80), ..TrainState::new(&cfg) };
        let up = lr_on_validation(&s, 0.85, &cfg);
        assert!((up.lr - 1e-5).abs() < 1e-20);
        assert_eq!(up.best_dice, Some(0.85));
        let down = lr_on_validation(&s, 0.79, &cfg);
        assert_eq!(down.lr, 1e-4);
        let first = lr_on_validation(&TrainState::new(&cfg), 0.5, &cfg);
        assert_eq!((first.lr, first.best_dice), (1e-4, Some(0.5)));
    }

    #[test]
    fn plateau_waits_for_patience() {
        let cfg = TrainConfig { decay_policy: DecayPolicy::Plateau, patience: 2, ..Default::default() };
        let mut s = lr_on_validation(&TrainState::new(&cfg), 0.5, &cfg);
        s = lr_on_validation(&s, 0.6, &cfg);
        assert_eq!(s.lr, 1e-4);
        s = lr_on_validation(&s, 0.55, &cfg);
        assert_eq!(s.lr, 1e-4);
        s = lr_on_validation(&s, 0.55, &cfg);
        assert!((s.lr - 1e-5).abs() < 1e-20);
    }
}
