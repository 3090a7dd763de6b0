//! Weighted sum of binary cross-entropy and soft Dice on sigmoid outputs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::activation::sigmoid;
use crate::tensor::{cst, Real, Tensor};

/// Additive smoothing in the soft Dice ratio.
pub const DICE_SMOOTHING: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub bce: f64,
    pub dice: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { bce: 0.5, dice: 0.5 }
    }
}

fn items(dims: &[usize]) -> usize {
    if dims.len() >= 3 {
        dims[0]
    } else {
        1
    }
}

/// Loss value and its gradient w.r.t. `logits`. Dice is computed per
/// leading-axis item (for rank ≥ 3) and averaged.
pub fn composite_loss_with_grad<T: Real>(
    logits: &Tensor<T>,
    gt: &Tensor<T>,
    w: LossWeights,
) -> Result<(T, Tensor<T>)> {
    if logits.len() != gt.len() || items(logits.dims()) != items(gt.dims()) {
        return Err(Error::ShapeMismatch(format!("logits {:?} vs target {:?}", logits.dims(), gt.dims())));
    }
    let total = logits.len();
    let batch = items(logits.dims());
    let per = total / batch;
    let (lb, ld) = (cst::<T>(w.bce), cst::<T>(w.dice));
    let smooth = cst::<T>(DICE_SMOOTHING);
    let two = cst::<T>(2.0);
    let inv_total = cst::<T>(1.0 / total as f64);
    let inv_batch = cst::<T>(1.0 / batch as f64);

    let z = logits.data();
    let y = gt.data();
    let p: Vec<T> = z.iter().map(|&v| sigmoid(v)).collect();

    let mut bce = T::zero();
    for (&zi, &yi) in z.iter().zip(y) {
        bce += zi.max(T::zero()) - zi * yi + (-zi.abs()).exp().ln_1p();
    }
    bce = bce * inv_total;

    let mut grad = vec![T::zero(); total];
    let mut dice_sum = T::zero();
    for b in 0..batch {
        let r = b * per..(b + 1) * per;
        let inter: T = p[r.clone()].iter().zip(&y[r.clone()]).map(|(&a, &t)| a * t).sum();
        let denom: T = p[r.clone()].iter().copied().sum::<T>() + y[r.clone()].iter().copied().sum::<T>() + smooth;
        let num = two * inter + smooth;
        dice_sum += num / denom;
        let d2 = denom * denom;
        for k in r {
            let ddice_dp = (two * y[k] * denom - num) / d2;
            // dice term chains through the sigmoid; the BCE term is direct in z
            grad[k] = -ld * inv_batch * ddice_dp * p[k] * (T::one() - p[k]) + lb * inv_total * (p[k] - y[k]);
        }
    }
    let loss = lb * bce + ld * (T::one() - dice_sum * inv_batch);
    Ok((loss, Tensor::raw(logits.dims().to_vec(), grad)))
}

pub fn composite_loss<T: Real>(logits: &Tensor<T>, gt: &Tensor<T>, w: LossWeights) -> Result<T> {
    composite_loss_with_grad(logits, gt, w).map(|(l, _)| l)
}
