//! Channel layer normalization (per token) and 2-D batch normalization
//! (per channel), both with a learnable affine `gamma`, `beta`.

use crate::error::{Error, Result};
use crate::tensor::{cst, Real, Tensor};

pub const EPS: f64 = 1e-5;

pub struct NormCache<T> {
    xhat: Vec<T>,
    /// One entry per normalization group.
    inv_std: Vec<T>,
}

fn check_affine<T: Real>(c: usize, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<()> {
    if gamma.len() != c || beta.len() != c {
        return Err(Error::ShapeMismatch(format!(
            "affine params {:?}/{:?} for {} channels",
            gamma.dims(),
            beta.dims(),
            c
        )));
    }
    Ok(())
}

/// Normalizes each spatial position of `[b, c, h, w]` across its channels.
pub fn layer_norm<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
) -> Result<(Tensor<T>, NormCache<T>)> {
    let [b, c, h, w] = x.dims4()?;
    check_affine(c, gamma, beta)?;
    let n = h * w;
    let eps = cst::<T>(EPS);
    let inv_c = cst::<T>(1.0 / c as f64);
    let mut xhat = vec![T::zero(); x.len()];
    let mut out = vec![T::zero(); x.len()];
    let mut inv_std = Vec::with_capacity(b * n);
    for bi in 0..b {
        let base = bi * c * n;
        for pos in 0..n {
            let idx = |ch: usize| base + ch * n + pos;
            let mean = (0..c).map(|ch| x.data()[idx(ch)]).sum::<T>() * inv_c;
            let var = (0..c)
                .map(|ch| {
                    let d = x.data()[idx(ch)] - mean;
                    d * d
                })
                .sum::<T>()
                * inv_c;
            let is = T::one() / (var + eps).sqrt();
            for ch in 0..c {
                let k = idx(ch);
                let xh = (x.data()[k] - mean) * is;
                xhat[k] = xh;
                out[k] = gamma.data()[ch] * xh + beta.data()[ch];
            }
            inv_std.push(is);
        }
    }
    Ok((Tensor::raw(x.dims().to_vec(), out), NormCache { xhat, inv_std }))
}

pub struct NormGrads<T> {
    pub input: Option<Tensor<T>>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

pub fn layer_norm_backward<T: Real>(
    dims: &[usize],
    gamma: &Tensor<T>,
    cache: &NormCache<T>,
    dout: &Tensor<T>,
    need_input: bool,
) -> NormGrads<T> {
    let (b, c, n) = (dims[0], dims[1], dims[2] * dims[3]);
    let inv_c = cst::<T>(1.0 / c as f64);
    let mut dg = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    let mut dx = vec![T::zero(); if need_input { dout.len() } else { 0 }];
    for bi in 0..b {
        let base = bi * c * n;
        for pos in 0..n {
            let mut mean_d = T::zero();
            let mut mean_dx = T::zero();
            for ch in 0..c {
                let k = base + ch * n + pos;
                let g = dout.data()[k];
                dg[ch] += g * cache.xhat[k];
                dbeta[ch] += g;
                let dxh = g * gamma.data()[ch];
                mean_d += dxh;
                mean_dx += dxh * cache.xhat[k];
            }
            if need_input {
                mean_d *= inv_c;
                mean_dx *= inv_c;
                let is = cache.inv_std[bi * n + pos];
                for ch in 0..c {
                    let k = base + ch * n + pos;
                    let dxh = dout.data()[k] * gamma.data()[ch];
                    dx[k] = is * (dxh - mean_d - cache.xhat[k] * mean_dx);
                }
            }
        }
    }
    NormGrads {
        input: need_input.then(|| Tensor::raw(dims.to_vec(), dx)),
        gamma: Tensor::raw(vec![c], dg),
        beta: Tensor::raw(vec![c], dbeta),
    }
}

/// Batch statistics observed in training mode, for running-average updates.
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Unbiased variance.
    pub var: Vec<T>,
}

/// Batch normalization. With `running = Some((mean, var))` the stored
/// statistics are used (inference); otherwise batch statistics.
pub fn batch_norm<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running: Option<(&Tensor<T>, &Tensor<T>)>,
) -> Result<(Tensor<T>, NormCache<T>, Option<BatchStats<T>>)> {
    let [b, c, h, w] = x.dims4()?;
    check_affine(c, gamma, beta)?;
    let n = h * w;
    let count = b * n;
    let eps = cst::<T>(EPS);
    let mut xhat = vec![T::zero(); x.len()];
    let mut out = vec![T::zero(); x.len()];
    let mut inv_std = Vec::with_capacity(c);
    let mut stats = BatchStats { mean: Vec::with_capacity(c), var: Vec::with_capacity(c) };
    for ch in 0..c {
        let planes = (0..b).map(|bi| &x.data()[(bi * c + ch) * n..(bi * c + ch + 1) * n]);
        let (mean, var) = match running {
            Some((rm, rv)) => (rm.data()[ch], rv.data()[ch]),
            None => {
                let m = planes.clone().flatten().copied().sum::<T>() / cst::<T>(count as f64);
                let ss = planes.clone().flatten().map(|&v| (v - m) * (v - m)).sum::<T>();
                stats.mean.push(m);
                let unbiased = if count > 1 { ss / cst::<T>((count - 1) as f64) } else { T::zero() };
                stats.var.push(unbiased);
                (m, ss / cst::<T>(count as f64))
            }
        };
        let is = T::one() / (var + eps).sqrt();
        for bi in 0..b {
            let range = (bi * c + ch) * n..(bi * c + ch + 1) * n;
            for k in range {
                let xh = (x.data()[k] - mean) * is;
                xhat[k] = xh;
                out[k] = gamma.data()[ch] * xh + beta.data()[ch];
            }
        }
        inv_std.push(is);
    }
    let stats = running.is_none().then_some(stats);
    Ok((Tensor::raw(x.dims().to_vec(), out), NormCache { xhat, inv_std }, stats))
}

/// `batch_stats` selects the training-mode derivative (statistics depend on
/// the input) versus the inference-mode affine map.
pub fn batch_norm_backward<T: Real>(
    dims: &[usize],
    gamma: &Tensor<T>,
    cache: &NormCache<T>,
    batch_stats: bool,
    dout: &Tensor<T>,
    need_input: bool,
) -> NormGrads<T> {
    let (b, c, n) = (dims[0], dims[1], dims[2] * dims[3]);
    let inv_count = cst::<T>(1.0 / (b * n) as f64);
    let mut dg = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    let mut dx = vec![T::zero(); if need_input { dout.len() } else { 0 }];
    for ch in 0..c {
        let mut sum_d = T::zero();
        let mut sum_dx = T::zero();
        for bi in 0..b {
            for k in (bi * c + ch) * n..(bi * c + ch + 1) * n {
                let g = dout.data()[k];
                dg[ch] += g * cache.xhat[k];
                dbeta[ch] += g;
                let dxh = g * gamma.data()[ch];
                sum_d += dxh;
                sum_dx += dxh * cache.xhat[k];
            }
        }
        if !need_input {
            continue;
        }
        let is = cache.inv_std[ch];
        let (mean_d, mean_dx) = (sum_d * inv_count, sum_dx * inv_count);
        for bi in 0..b {
            for k in (bi * c + ch) * n..(bi * c + ch + 1) * n {
                let dxh = dout.data()[k] * gamma.data()[ch];
                dx[k] = if batch_stats {
                    is * (dxh - mean_d - cache.xhat[k] * mean_dx)
                } else {
                    is * dxh
                };
            }
        }
    }
    NormGrads {
        input: need_input.then(|| Tensor::raw(dims.to_vec(), dx)),
        gamma: Tensor::raw(vec![c], dg),
        beta: Tensor::raw(vec![c], dbeta),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layer_norm_zero_mean_unit_variance_per_token() {
        let x = Tensor::<f64>::from_fn(&[1, 4, 1, 3], |i| (i * i) as f64);
        let g = Tensor::full(&[4], 1.0);
        let b = Tensor::zeros(&[4]);
        let (y, _) = layer_norm(&x, &g, &b).unwrap();
        for pos in 0..3 {
            let col: Vec<f64> = (0..4).map(|c| y.data()[c * 3 + pos]).collect();
            let mean: f64 = col.iter().sum::<f64>() / 4.0;
            let var: f64 = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn batch_norm_inference_with_unit_stats_is_affine() {
        let x = Tensor::<f64>::from_fn(&[2, 2, 2, 2], |i| i as f64);
        let g = Tensor::full(&[2], 2.0);
        let b = Tensor::full(&[2], 1.0);
        let (rm, rv) = (Tensor::zeros(&[2]), Tensor::full(&[2], 1.0));
        let (y, _, stats) = batch_norm(&x, &g, &b, Some((&rm, &rv))).unwrap();
        assert!(stats.is_none());
        let s = 2.0 / (1.0 + EPS).sqrt();
        for (a, v) in y.data().iter().zip(x.data()) {
            assert!((a - (v * s + 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn batch_norm_reports_unbiased_variance() {
        let x = Tensor::<f64>::new(&[2, 1, 1, 1], vec![1.0, 3.0]).unwrap();
        let (_, _, stats) =
            batch_norm(&x, &Tensor::full(&[1], 1.0), &Tensor::zeros(&[1]), None).unwrap();
        let stats = stats.unwrap();
        assert_eq!(stats.mean, vec![2.0]);
        assert_eq!(stats.var, vec![2.0]);
    }
}
