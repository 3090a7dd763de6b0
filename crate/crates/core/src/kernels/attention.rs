//! Multi-head scaled dot-product self-attention over the `h*w` spatial
//! tokens of a feature map. Projections are bias-free `c x c` matrices
//! applied as `y = W x` per token.

use crate::error::{Error, Result};
use crate::tensor::{cst, Real, Tensor};

/// Activations kept from the forward pass, one entry per batch item.
pub struct AttentionCache<T> {
    q: Vec<Vec<T>>,
    k: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    /// `heads` row-stochastic `n x n` matrices, concatenated.
    attn: Vec<Vec<T>>,
    mixed: Vec<Vec<T>>,
}

pub struct AttentionWeights<'a, T> {
    pub w_q: &'a Tensor<T>,
    pub w_k: &'a Tensor<T>,
    pub w_v: &'a Tensor<T>,
    pub w_o: &'a Tensor<T>,
}

fn softmax_rows<T: Real>(m: &mut [T], n: usize) {
    for row in m.chunks_mut(n) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

pub(crate) fn check_heads(channels: usize, heads: usize) -> Result<()> {
    if heads == 0 || channels % heads != 0 {
        return Err(Error::HeadMismatch { channels, heads });
    }
    Ok(())
}

pub fn mhsa<T: Real>(
    x: &Tensor<T>,
    p: &AttentionWeights<'_, T>,
    heads: usize,
) -> Result<(Tensor<T>, AttentionCache<T>)> {
    let [batch, c, h, w] = x.dims4()?;
    check_heads(c, heads)?;
    for m in [p.w_q, p.w_k, p.w_v, p.w_o] {
        if m.dims() != [c, c] {
            return Err(Error::HeadMismatch { channels: c, heads });
        }
    }
    let n = h * w;
    let d = c / heads;
    let scale = T::one() / cst::<T>(d as f64).sqrt();
    let mut out = vec![T::zero(); x.len()];
    let mut cache = AttentionCache { q: vec![], k: vec![], v: vec![], attn: vec![], mixed: vec![] };
    for bi in 0..batch {
        let xs = &x.data()[bi * c * n..(bi + 1) * c * n];
        let project = |wm: &Tensor<T>| {
            let mut r = vec![T::zero(); c * n];
            T::gemm(c, c, n, T::one(), wm.data(), false, xs, false, T::zero(), &mut r);
            r
        };
        let (q, k, v) = (project(p.w_q), project(p.w_k), project(p.w_v));
        let mut attn = vec![T::zero(); heads * n * n];
        let mut mixed = vec![T::zero(); c * n];
        for hd in 0..heads {
            let rows = hd * d * n..(hd + 1) * d * n;
            let a = &mut attn[hd * n * n..(hd + 1) * n * n];
            T::gemm(n, d, n, scale, &q[rows.clone()], true, &k[rows.clone()], false, T::zero(), a);
            softmax_rows(a, n);
            T::gemm(d, n, n, T::one(), &v[rows.clone()], false, a, true, T::zero(), &mut mixed[rows]);
        }
        let o = &mut out[bi * c * n..(bi + 1) * c * n];
        T::gemm(c, c, n, T::one(), p.w_o.data(), false, &mixed, false, T::zero(), o);
        cache.q.push(q);
        cache.k.push(k);
        cache.v.push(v);
        cache.attn.push(attn);
        cache.mixed.push(mixed);
    }
    Ok((Tensor::raw(x.dims().to_vec(), out), cache))
}

pub struct AttentionGrads<T> {
    pub input: Option<Tensor<T>>,
    pub w_q: Tensor<T>,
    pub w_k: Tensor<T>,
    pub w_v: Tensor<T>,
    pub w_o: Tensor<T>,
}

pub fn mhsa_backward<T: Real>(
    x: &Tensor<T>,
    p: &AttentionWeights<'_, T>,
    heads: usize,
    cache: &AttentionCache<T>,
    dout: &Tensor<T>,
    need_input: bool,
) -> AttentionGrads<T> {
    let [batch, c, h, w] = x.dims4().unwrap();
    let n = h * w;
    let d = c / heads;
    let scale = T::one() / cst::<T>(d as f64).sqrt();
    let mut gq = vec![T::zero(); c * c];
    let mut gk = vec![T::zero(); c * c];
    let mut gv = vec![T::zero(); c * c];
    let mut go = vec![T::zero(); c * c];
    let mut dx = vec![T::zero(); if need_input { x.len() } else { 0 }];
    let mut dmixed = vec![T::zero(); c * n];
    let mut dq = vec![T::zero(); c * n];
    let mut dk = vec![T::zero(); c * n];
    let mut dv = vec![T::zero(); c * n];
    let mut ds = vec![T::zero(); n * n];
    for bi in 0..batch {
        let xs = &x.data()[bi * c * n..(bi + 1) * c * n];
        let dy = &dout.data()[bi * c * n..(bi + 1) * c * n];
        let (q, k, v) = (&cache.q[bi], &cache.k[bi], &cache.v[bi]);
        let (attn, mixed) = (&cache.attn[bi], &cache.mixed[bi]);
        T::gemm(c, n, c, T::one(), dy, false, mixed, true, T::one(), &mut go);
        T::gemm(c, c, n, T::one(), p.w_o.data(), true, dy, false, T::zero(), &mut dmixed);
        for hd in 0..heads {
            let rows = hd * d * n..(hd + 1) * d * n;
            let a = &attn[hd * n * n..(hd + 1) * n * n];
            let dm = &dmixed[rows.clone()];
            T::gemm(d, n, n, T::one(), dm, false, a, false, T::zero(), &mut dv[rows.clone()]);
            // dA = dM^T V, then softmax Jacobian row by row
            T::gemm(n, d, n, T::one(), dm, true, &v[rows.clone()], false, T::zero(), &mut ds);
            for (srow, arow) in ds.chunks_mut(n).zip(a.chunks(n)) {
                let dot: T = srow.iter().zip(arow).map(|(&g, &p)| g * p).sum();
                for (g, &p) in srow.iter_mut().zip(arow) {
                    *g = p * (*g - dot);
                }
            }
            T::gemm(d, n, n, scale, &k[rows.clone()], false, &ds, true, T::zero(), &mut dq[rows.clone()]);
            T::gemm(d, n, n, scale, &q[rows.clone()], false, &ds, false, T::zero(), &mut dk[rows]);
        }
        for (g, dproj) in [(&mut gq, &dq), (&mut gk, &dk), (&mut gv, &dv)] {
            T::gemm(c, n, c, T::one(), dproj, false, xs, true, T::one(), g);
        }
        if need_input {
            let dxs = &mut dx[bi * c * n..(bi + 1) * c * n];
            for (wm, dproj) in [(p.w_q, &dq), (p.w_k, &dk), (p.w_v, &dv)] {
                T::gemm(c, c, n, T::one(), wm.data(), true, dproj, false, T::one(), dxs);
            }
        }
    }
    let mat = |v| Tensor::raw(vec![c, c], v);
    AttentionGrads {
        input: need_input.then(|| Tensor::raw(x.dims().to_vec(), dx)),
        w_q: mat(gq),
        w_k: mat(gk),
        w_v: mat(gv),
        w_o: mat(go),
    }
}
