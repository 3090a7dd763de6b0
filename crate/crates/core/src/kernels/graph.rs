//! Graph convolution over spatial positions. Every pixel of a `[c, h, w]`
//! feature map is a node carrying its `c`-vector; edges come from the
//! feature Gram matrix.
//!
//! Adjacency: `A = softmax_rows(X Xᵀ / √c)`, symmetrized as `(A + Aᵀ)/2`.
//! Propagation: `P = D̂^{-1/2} (A_sym + I) D̂^{-1/2}`, layer `ReLU(P H W)`.

use crate::error::{Error, Result};
use crate::tensor::{cst, Real, Tensor};

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

/// Row-softmaxed Gram matrix of channel-major features `f` (`c x n`).
fn row_softmax_gram<T: Real>(f: &[T], c: usize, n: usize) -> Vec<T> {
    let scale = T::one() / cst::<T>(c as f64).sqrt();
    let mut a = vec![T::zero(); n * n];
    T::gemm(n, c, n, scale, f, true, f, false, T::zero(), &mut a);
    softmax_rows(&mut a, n);
    a
}

fn symmetrize<T: Real>(a: &[T], n: usize) -> Vec<T> {
    let half = cst::<T>(0.5);
    let mut s = vec![T::zero(); n * n];
    for i in 0..n {
        for j in i..n {
            let v = (a[i * n + j] + a[j * n + i]) * half;
            s[i * n + j] = v;
            s[j * n + i] = v;
        }
    }
    s
}

/// Returns `(P, r)` with `r_i = deg_i^{-1/2}`; `a_sym` must be symmetric.
fn propagation<T: Real>(a_sym: &[T], n: usize) -> (Vec<T>, Vec<T>) {
    let r: Vec<T> = (0..n)
        .map(|i| {
            let deg: T = T::one() + a_sym[i * n..(i + 1) * n].iter().copied().sum::<T>();
            T::one() / deg.sqrt()
        })
        .collect();
    let mut p = vec![T::zero(); n * n];
    for i in 0..n {
        for j in i..n {
            let hat = a_sym[i * n + j] + if i == j { T::one() } else { T::zero() };
            let v = r[i] * hat * r[j];
            p[i * n + j] = v;
            p[j * n + i] = v;
        }
    }
    (p, r)
}

fn flatten_nodes<T: Real>(f: &Tensor<T>) -> Result<(usize, usize)> {
    match f.dims() {
        [c, h, w] => Ok((*c, h * w)),
        d => Err(Error::ShapeMismatch(format!("expected [c, h, w], got {:?}", d))),
    }
}

/// Row-stochastic adjacency before symmetrization, `[n, n]`.
pub fn gram_softmax<T: Real>(f: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, n) = flatten_nodes(f)?;
    Ok(Tensor::raw(vec![n, n], row_softmax_gram(f.data(), c, n)))
}

/// Symmetric Gram adjacency `(A + Aᵀ)/2` of a `[c, h, w]` feature map.
pub fn gram_adjacency<T: Real>(f: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, n) = flatten_nodes(f)?;
    let a = row_softmax_gram(f.data(), c, n);
    Ok(Tensor::raw(vec![n, n], symmetrize(&a, n)))
}

/// Self-loop symmetric normalization `D̂^{-1/2} (A + I) D̂^{-1/2}`.
pub fn normalize_adjacency<T: Real>(a_sym: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, m] = a_sym.dims2()?;
    if n != m {
        return Err(Error::ShapeMismatch(format!("adjacency {:?} is not square", a_sym.dims())));
    }
    if let Some(&v) = a_sym.data().iter().find(|v| **v < T::zero()) {
        return Err(Error::NegativeAdjacency(v.to_f64().unwrap()));
    }
    let (p, _) = propagation(a_sym.data(), n);
    Ok(Tensor::raw(vec![n, n], p))
}

/// One graph convolution `ReLU(P H W)`, `P: [n,n]`, `H: [n,c]`, `W: [c,c']`.
pub fn gcn_layer<T: Real>(p: &Tensor<T>, h: &Tensor<T>, w: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, n2] = p.dims2()?;
    let [hn, c] = h.dims2()?;
    let [wc, co] = w.dims2()?;
    if n != n2 || hn != n || wc != c {
        return Err(Error::ShapeMismatch(format!(
            "gcn layer P {:?}, H {:?}, W {:?}",
            p.dims(),
            h.dims(),
            w.dims()
        )));
    }
    let mut hw = vec![T::zero(); n * co];
    T::gemm(n, c, co, T::one(), h.data(), false, w.data(), false, T::zero(), &mut hw);
    let mut out = vec![T::zero(); n * co];
    T::gemm(n, n, co, T::one(), p.data(), false, &hw, false, T::zero(), &mut out);
    for v in &mut out {
        *v = v.max(T::zero());
    }
    Ok(Tensor::raw(vec![n, co], out))
}

struct BridgeItem<T> {
    /// `order[k]` is the pixel placed at node `k`.
    order: Vec<usize>,
    /// Features gathered into node order, channel-major `c x n`.
    xs: Vec<T>,
    attn: Vec<T>,
    prop: Vec<T>,
    r: Vec<T>,
    a_sym: Vec<T>,
    m1: Vec<T>,
    z1: Vec<T>,
    h1: Vec<T>,
    m2: Vec<T>,
    z2: Vec<T>,
}

pub struct BridgeCache<T> {
    items: Vec<BridgeItem<T>>,
}

/// Pixels sorted by their feature vectors. Running the graph in this
/// canonical order makes the bridge exactly equivariant to any spatial
/// permutation, since every reduction over nodes then sees its terms in
/// the same sequence.
fn canonical_order<T: Real>(fs: &[T], c: usize, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        (0..c)
            .map(|ch| fs[ch * n + i].to_f64().unwrap().total_cmp(&fs[ch * n + j].to_f64().unwrap()))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    order
}

/// `f + reshape(ReLU(P · ReLU(P X W1) · W2))` for every batch item.
pub fn gcn_bridge<T: Real>(
    f: &Tensor<T>,
    w1: &Tensor<T>,
    w2: &Tensor<T>,
) -> Result<(Tensor<T>, BridgeCache<T>)> {
    let [batch, c, h, w] = f.dims4()?;
    for m in [w1, w2] {
        if m.dims() != [c, c] {
            return Err(Error::ShapeMismatch(format!("bridge weight {:?} for {} channels", m.dims(), c)));
        }
    }
    let n = h * w;
    let mut out = f.data().to_vec();
    let mut items = Vec::with_capacity(batch);
    for bi in 0..batch {
        let fs = &f.data()[bi * c * n..(bi + 1) * c * n];
        let order = canonical_order(fs, c, n);
        let mut xs = vec![T::zero(); c * n];
        for ch in 0..c {
            for (k, &node) in order.iter().enumerate() {
                xs[ch * n + k] = fs[ch * n + node];
            }
        }
        let attn = row_softmax_gram(&xs, c, n);
        let a_sym = symmetrize(&attn, n);
        let (prop, r) = propagation(&a_sym, n);
        let mut m1 = vec![T::zero(); n * c];
        T::gemm(n, c, c, T::one(), &xs, true, w1.data(), false, T::zero(), &mut m1);
        let mut z1 = vec![T::zero(); n * c];
        T::gemm(n, n, c, T::one(), &prop, false, &m1, false, T::zero(), &mut z1);
        let h1: Vec<T> = z1.iter().map(|v| v.max(T::zero())).collect();
        let mut m2 = vec![T::zero(); n * c];
        T::gemm(n, c, c, T::one(), &h1, false, w2.data(), false, T::zero(), &mut m2);
        let mut z2 = vec![T::zero(); n * c];
        T::gemm(n, n, c, T::one(), &prop, false, &m2, false, T::zero(), &mut z2);
        let o = &mut out[bi * c * n..(bi + 1) * c * n];
        for (k, &node) in order.iter().enumerate() {
            for ch in 0..c {
                o[ch * n + node] += z2[k * c + ch].max(T::zero());
            }
        }
        items.push(BridgeItem { order, xs, attn, prop, r, a_sym, m1, z1, h1, m2, z2 });
    }
    Ok((Tensor::raw(f.dims().to_vec(), out), BridgeCache { items }))
}

pub struct BridgeGrads<T> {
    pub input: Option<Tensor<T>>,
    pub w1: Tensor<T>,
    pub w2: Tensor<T>,
}

pub fn gcn_bridge_backward<T: Real>(
    f: &Tensor<T>,
    w1: &Tensor<T>,
    w2: &Tensor<T>,
    cache: &BridgeCache<T>,
    dout: &Tensor<T>,
    need_input: bool,
) -> BridgeGrads<T> {
    let [_, c, h, w] = f.dims4().unwrap();
    let n = h * w;
    let zero = T::zero();
    let mut gw1 = vec![zero; c * c];
    let mut gw2 = vec![zero; c * c];
    let mut df = if need_input { dout.data().to_vec() } else { Vec::new() };
    let mut dz = vec![zero; n * c];
    let mut dm = vec![zero; n * c];
    let mut dh1 = vec![zero; n * c];
    let mut dx = vec![zero; n * c];
    let mut dp = vec![zero; n * n];
    for (bi, it) in cache.items.iter().enumerate() {
        let fs = &it.xs;
        let dy = &dout.data()[bi * c * n..(bi + 1) * c * n];
        // second layer
        for (node, &pix) in it.order.iter().enumerate() {
            for ch in 0..c {
                let k = node * c + ch;
                dz[k] = if it.z2[k] > zero { dy[ch * n + pix] } else { zero };
            }
        }
        T::gemm(n, c, n, T::one(), &dz, false, &it.m2, true, T::zero(), &mut dp);
        T::gemm(n, n, c, T::one(), &it.prop, true, &dz, false, T::zero(), &mut dm);
        T::gemm(c, n, c, T::one(), &it.h1, true, &dm, false, T::one(), &mut gw2);
        T::gemm(n, c, c, T::one(), &dm, false, w2.data(), true, T::zero(), &mut dh1);
        // first layer
        for (k, g) in dz.iter_mut().enumerate() {
            *g = if it.z1[k] > zero { dh1[k] } else { zero };
        }
        T::gemm(n, c, n, T::one(), &dz, false, &it.m1, true, T::one(), &mut dp);
        T::gemm(n, n, c, T::one(), &it.prop, true, &dz, false, T::zero(), &mut dm);
        T::gemm(c, n, c, T::one(), fs, false, &dm, false, T::one(), &mut gw1);
        if !need_input {
            continue;
        }
        T::gemm(n, c, c, T::one(), &dm, false, w1.data(), true, T::zero(), &mut dx);

        // propagation matrix -> symmetric adjacency
        let neg_half = cst::<T>(-0.5);
        let mut dhat = vec![zero; n * n];
        let mut ddeg = vec![zero; n];
        for i in 0..n {
            let mut dr = zero;
            for j in 0..n {
                let hat = it.a_sym[i * n + j] + if i == j { T::one() } else { zero };
                dhat[i * n + j] = dp[i * n + j] * it.r[i] * it.r[j];
                dr += (dp[i * n + j] + dp[j * n + i]) * hat * it.r[j];
            }
            let ri = it.r[i];
            ddeg[i] = dr * neg_half * ri * ri * ri;
        }
        for i in 0..n {
            for j in 0..n {
                dhat[i * n + j] += ddeg[i];
            }
        }
        // symmetrization, then softmax Jacobian
        let half = cst::<T>(0.5);
        let mut ds = vec![zero; n * n];
        for i in 0..n {
            let arow = &it.attn[i * n..(i + 1) * n];
            let mut dot = zero;
            for j in 0..n {
                let da = (dhat[i * n + j] + dhat[j * n + i]) * half;
                ds[i * n + j] = da;
                dot += da * arow[j];
            }
            for j in 0..n {
                ds[i * n + j] = arow[j] * (ds[i * n + j] - dot);
            }
        }
        let scale = T::one() / cst::<T>(c as f64).sqrt();
        // dX += scale (dS + dSᵀ) X, with X = fsᵀ
        T::gemm(n, n, c, scale, &ds, false, fs, true, T::one(), &mut dx);
        T::gemm(n, n, c, scale, &ds, true, fs, true, T::one(), &mut dx);
        let dfs = &mut df[bi * c * n..(bi + 1) * c * n];
        for (node, &pix) in it.order.iter().enumerate() {
            for ch in 0..c {
                dfs[ch * n + pix] += dx[node * c + ch];
            }
        }
    }
    BridgeGrads {
        input: need_input.then(|| Tensor::raw(f.dims().to_vec(), df)),
        w1: Tensor::raw(vec![c, c], gw1),
        w2: Tensor::raw(vec![c, c], gw2),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_features_give_uniform_adjacency() {
        let f = Tensor::<f64>::zeros(&[3, 2, 2]);
        let a = gram_adjacency(&f).unwrap();
        assert!(a.data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn singleton_graph() {
        let f = Tensor::<f64>::new(&[2, 1, 1], vec![0.3, -0.7]).unwrap();
        assert_eq!(gram_adjacency(&f).unwrap().data(), &[1.0]);
    }

    #[test]
    fn empty_graph_normalizes_to_identity() {
        let p = normalize_adjacency(&Tensor::<f64>::zeros(&[4, 4])).unwrap();
        assert_eq!(p, Tensor::eye(4));
    }

    #[test]
    fn two_node_closed_form() {
        let a = Tensor::<f64>::new(&[2, 2], vec![0., 1., 1., 0.]).unwrap();
        let p = normalize_adjacency(&a).unwrap();
        assert!(p.data().iter().all(|v| (v - 0.5).abs() < 1e-15));
    }

    #[test]
    fn negative_entries_rejected() {
        let a = Tensor::<f64>::new(&[2, 2], vec![0., -1., -1., 0.]).unwrap();
        assert!(matches!(normalize_adjacency(&a), Err(Error::NegativeAdjacency(_))));
    }

    #[test]
    fn gcn_layer_identity_and_zero_weights() {
        let h = Tensor::<f64>::new(&[2, 2], vec![1., -2., -3., 4.]).unwrap();
        let eye = Tensor::eye(2);
        assert_eq!(gcn_layer(&eye, &h, &eye).unwrap().data(), &[1., 0., 0., 4.]);
        let zero = Tensor::zeros(&[2, 2]);
        assert!(gcn_layer(&eye, &h, &zero).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(gcn_layer(&eye, &h, &Tensor::zeros(&[3, 2])).is_err());
    }
}
