use serde::Serialize;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `2|P ∩ G| / (|P| + |G|)` over nonzero pixels; two empty masks score 1.
pub fn dice_score(pred: &Tensor, gt: &Tensor) -> Result<f64> {
    if pred.dims() != gt.dims() {
        return Err(Error::ShapeMismatch(format!("prediction {:?} vs target {:?}", pred.dims(), gt.dims())));
    }
    let (mut p, mut g, mut both) = (0u64, 0u64, 0u64);
    for (&a, &b) in pred.data().iter().zip(gt.data()) {
        let (a, b) = (a != 0.0, b != 0.0);
        p += a as u64;
        g += b as u64;
        both += (a && b) as u64;
    }
    if p + g == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * both as f64 / (p + g) as f64)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Metrics {
    pub per_slice: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl Metrics {
    pub fn from_slices(per_slice: Vec<f64>) -> Self {
        let n = per_slice.len().max(1) as f64;
        let mean = per_slice.iter().sum::<f64>() / n;
        let var = per_slice.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n;
        Self { per_slice, mean, std: var.sqrt() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(bits: &[u8]) -> Tensor {
        Tensor::from_fn(&[bits.len()], |i| bits[i] as f32)
    }

    #[test]
    fn examples() {
        let a = mask(&[1, 1, 0, 0]);
        assert_eq!(dice_score(&a, &a).unwrap(), 1.0);
        assert_eq!(dice_score(&a, &mask(&[0, 0, 1, 1])).unwrap(), 0.0);
        let p = mask(&[1, 1, 1, 0, 0, 0, 0]);
        let g = mask(&[0, 1, 1, 1, 1, 1, 0]);
        assert_eq!(dice_score(&p, &g).unwrap(), 0.5);
        assert_eq!(dice_score(&mask(&[0, 0]), &mask(&[0, 0])).unwrap(), 1.0);
        assert!(dice_score(&a, &mask(&[1])).is_err());
    }
}
