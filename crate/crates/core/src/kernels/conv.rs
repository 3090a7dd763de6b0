//! Dense 2-D convolution, transposed convolution and max pooling, each with
//! its reverse-mode derivative. Convolutions lower to `im2col` + GEMM.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Sliding-window geometry over a `[c, h, w]` image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Window {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Window {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.pad - self.kernel) / self.stride + 1
    }

    fn rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    fn positions(&self) -> usize {
        self.out_height() * self.out_width()
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Unfolds `img` into a `[c*k*k, oh*ow]` column matrix; out-of-image taps are 0.
pub fn im2col<T: Real>(img: &[T], g: &Window, cols: &mut [T]) {
    let (oh, ow) = (g.out_height(), g.out_width());
    let k = g.kernel;
    for c in 0..g.channels {
        let plane = &img[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let dst = &mut cols[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let line = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= g.height as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.width as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates columns back into `img`.
pub fn col2im<T: Real>(cols: &[T], g: &Window, img: &mut [T]) {
    let (oh, ow) = (g.out_height(), g.out_width());
    let k = g.kernel;
    for c in 0..g.channels {
        let plane = &mut img[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let src = &cols[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let line = &mut plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.width as isize {
                            line[ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

fn check_weight<T: Real>(x: &[usize; 4], w: &Tensor<T>, in_axis: usize) -> Result<[usize; 4]> {
    let wd = w.dims4()?;
    if wd[in_axis] != x[1] || wd[2] != wd[3] {
        return Err(Error::ShapeMismatch(format!(
            "weight {:?} incompatible with input channels {}",
            wd, x[1]
        )));
    }
    Ok(wd)
}

fn check_bias<T: Real>(b: Option<&Tensor<T>>, n: usize) -> Result<()> {
    if let Some(b) = b {
        if b.len() != n {
            return Err(Error::ShapeMismatch(format!("bias of length {} for {} channels", b.len(), n)));
        }
    }
    Ok(())
}

pub fn conv2d<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let xd = x.dims4()?;
    let [co, ci, k, _] = check_weight(&xd, w, 1)?;
    check_bias(b, co)?;
    let [batch, _, h, wd] = xd;
    if h + 2 * pad < k || wd + 2 * pad < k {
        return Err(Error::ShapeMismatch(format!("input {:?} smaller than kernel {}", xd, k)));
    }
    let g = Window { channels: ci, height: h, width: wd, kernel: k, stride, pad };
    let (oh, ow) = (g.out_height(), g.out_width());
    let np = oh * ow;
    let mut out = vec![T::zero(); batch * co * np];
    let mut cols = vec![T::zero(); if g.is_pointwise() { 0 } else { g.rows() * np }];
    for bi in 0..batch {
        let img = &x.data()[bi * ci * h * wd..(bi + 1) * ci * h * wd];
        let colref: &[T] = if g.is_pointwise() {
            img
        } else {
            im2col(img, &g, &mut cols);
            &cols
        };
        let o = &mut out[bi * co * np..(bi + 1) * co * np];
        if let Some(b) = b {
            for (c, chunk) in o.chunks_mut(np).enumerate() {
                chunk.fill(b.data()[c]);
            }
        }
        let beta = if b.is_some() { T::one() } else { T::zero() };
        T::gemm(co, g.rows(), np, T::one(), w.data(), false, colref, false, beta, o);
    }
    Ok(Tensor::raw(vec![batch, co, oh, ow], out))
}

pub struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

pub fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    with_bias: bool,
    stride: usize,
    pad: usize,
    dout: &Tensor<T>,
    need_input: bool,
) -> ConvGrads<T> {
    let [batch, ci, h, wd] = x.dims4().expect("rank-4 input");
    let co = w.dims()[0];
    let k = w.dims()[2];
    let g = Window { channels: ci, height: h, width: wd, kernel: k, stride, pad };
    let np = g.positions();
    let rows = g.rows();
    let mut dw = vec![T::zero(); co * rows];
    let mut db = vec![T::zero(); if with_bias { co } else { 0 }];
    let mut dx = vec![T::zero(); if need_input { x.len() } else { 0 }];
    let mut cols = vec![T::zero(); if g.is_pointwise() { 0 } else { rows * np }];
    let mut dcols = vec![T::zero(); if need_input { rows * np } else { 0 }];
    for bi in 0..batch {
        let img = &x.data()[bi * ci * h * wd..(bi + 1) * ci * h * wd];
        let d = &dout.data()[bi * co * np..(bi + 1) * co * np];
        let colref: &[T] = if g.is_pointwise() {
            img
        } else {
            im2col(img, &g, &mut cols);
            &cols
        };
        T::gemm(co, np, rows, T::one(), d, false, colref, true, T::one(), &mut dw);
        if with_bias {
            for (c, chunk) in d.chunks(np).enumerate() {
                db[c] += chunk.iter().copied().sum::<T>();
            }
        }
        if need_input {
            let dimg = &mut dx[bi * ci * h * wd..(bi + 1) * ci * h * wd];
            if g.is_pointwise() {
                T::gemm(rows, co, np, T::one(), w.data(), true, d, false, T::one(), dimg);
            } else {
                T::gemm(rows, co, np, T::one(), w.data(), true, d, false, T::zero(), &mut dcols);
                col2im(&dcols, &g, dimg);
            }
        }
    }
    ConvGrads {
        input: need_input.then(|| Tensor::raw(x.dims().to_vec(), dx)),
        weight: Tensor::raw(w.dims().to_vec(), dw),
        bias: with_bias.then(|| Tensor::raw(vec![co], db)),
    }
}

/// Transposed convolution; `w` is laid out `[c_in, c_out, k, k]`.
/// Output side is `(h - 1) * stride - 2 * pad + k`.
pub fn conv_transpose2d<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let xd = x.dims4()?;
    let [_, co, k, _] = check_weight(&xd, w, 0)?;
    check_bias(b, co)?;
    let [batch, ci, h, wd] = xd;
    if (h - 1) * stride + k <= 2 * pad || (wd - 1) * stride + k <= 2 * pad {
        return Err(Error::ShapeMismatch("transposed convolution output is empty".into()));
    }
    let oh = (h - 1) * stride + k - 2 * pad;
    let ow = (wd - 1) * stride + k - 2 * pad;
    let g = Window { channels: co, height: oh, width: ow, kernel: k, stride, pad };
    let np = h * wd;
    let rows = g.rows();
    let mut cols = vec![T::zero(); rows * np];
    let mut out = vec![T::zero(); batch * co * oh * ow];
    for bi in 0..batch {
        let img = &x.data()[bi * ci * np..(bi + 1) * ci * np];
        T::gemm(rows, ci, np, T::one(), w.data(), true, img, false, T::zero(), &mut cols);
        let o = &mut out[bi * co * oh * ow..(bi + 1) * co * oh * ow];
        if let Some(b) = b {
            for (c, chunk) in o.chunks_mut(oh * ow).enumerate() {
                chunk.fill(b.data()[c]);
            }
        }
        col2im(&cols, &g, o);
    }
    Ok(Tensor::raw(vec![batch, co, oh, ow], out))
}

pub fn conv_transpose2d_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    with_bias: bool,
    stride: usize,
    pad: usize,
    dout: &Tensor<T>,
    need_input: bool,
) -> ConvGrads<T> {
    let [batch, ci, h, wd] = x.dims4().expect("rank-4 input");
    let [_, co, oh, ow] = dout.dims4().expect("rank-4 output");
    let k = w.dims()[2];
    let g = Window { channels: co, height: oh, width: ow, kernel: k, stride, pad };
    let np = h * wd;
    let rows = g.rows();
    let mut dcols = vec![T::zero(); rows * np];
    let mut dw = vec![T::zero(); ci * rows];
    let mut db = vec![T::zero(); if with_bias { co } else { 0 }];
    let mut dx = vec![T::zero(); if need_input { x.len() } else { 0 }];
    for bi in 0..batch {
        let d = &dout.data()[bi * co * oh * ow..(bi + 1) * co * oh * ow];
        im2col(d, &g, &mut dcols);
        let img = &x.data()[bi * ci * np..(bi + 1) * ci * np];
        T::gemm(ci, np, rows, T::one(), img, false, &dcols, true, T::one(), &mut dw);
        if need_input {
            let dimg = &mut dx[bi * ci * np..(bi + 1) * ci * np];
            T::gemm(ci, rows, np, T::one(), w.data(), false, &dcols, false, T::zero(), dimg);
        }
        if with_bias {
            for (c, chunk) in d.chunks(oh * ow).enumerate() {
                db[c] += chunk.iter().copied().sum::<T>();
            }
        }
    }
    ConvGrads {
        input: need_input.then(|| Tensor::raw(x.dims().to_vec(), dx)),
        weight: Tensor::raw(w.dims().to_vec(), dw),
        bias: with_bias.then(|| Tensor::raw(vec![co], db)),
    }
}

/// 2x2 max pooling with stride 2. Returns the pooled tensor and the flat
/// argmax index of every output element.
pub fn max_pool2<T: Real>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let [b, c, h, w] = x.dims4()?;
    if h % 2 != 0 {
        return Err(Error::OddSpatialDim(h));
    }
    if w % 2 != 0 {
        return Err(Error::OddSpatialDim(w));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(b * c * oh * ow);
    let mut arg = Vec::with_capacity(out.capacity());
    for plane in 0..b * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if x.data()[idx] > x.data()[best] {
                        best = idx;
                    }
                }
                out.push(x.data()[best]);
                arg.push(best);
            }
        }
    }
    Ok((Tensor::raw(vec![b, c, oh, ow], out), arg))
}

pub fn max_pool2_backward<T: Real>(input_dims: &[usize], argmax: &[usize], dout: &Tensor<T>) -> Tensor<T> {
    let mut dx = Tensor::zeros(input_dims);
    for (&i, &g) in argmax.iter().zip(dout.data()) {
        dx.data_mut()[i] += g;
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, dims: &[usize]) -> Tensor<f64> {
        Tensor::from_fn(dims, |_| rng.random_range(-1.0..1.0))
    }

    /// Direct sliding-window convolution.
    fn direct_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64], stride: usize, pad: usize) -> Tensor<f64> {
        let [bn, ci, h, wd] = x.dims4().unwrap();
        let [co, _, k, _] = w.dims4().unwrap();
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (wd + 2 * pad - k) / stride + 1;
        let mut out = Tensor::zeros(&[bn, co, oh, ow]);
        for n in 0..bn {
            for o in 0..co {
                for y in 0..oh {
                    for xx in 0..ow {
                        let mut s = b[o];
                        for c in 0..ci {
                            for i in 0..k {
                                for j in 0..k {
                                    let iy = (y * stride + i) as isize - pad as isize;
                                    let ix = (xx * stride + j) as isize - pad as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                        s += x.at4(n, c, iy as usize, ix as usize)
                                            * w.at4(o, c, i, j);
                                    }
                                }
                            }
                        }
                        out.data_mut()[((n * co + o) * oh + y) * ow + xx] = s;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_direct_windows() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &(k, s, p) in &[(3, 1, 1), (3, 2, 1), (2, 2, 0), (1, 1, 0)] {
            let x = rand_tensor(&mut rng, &[2, 3, 6, 6]);
            let w = rand_tensor(&mut rng, &[4, 3, k, k]);
            let b = rand_tensor(&mut rng, &[4]);
            let got = conv2d(&x, &w, Some(&b), s, p).unwrap();
            let want = direct_conv(&x, &w, b.data(), s, p);
            assert_eq!(got.dims(), want.dims());
            assert!(got.max_abs_diff(&want) < 1e-12);
        }
    }

    #[test]
    fn transposed_conv_equals_zero_insertion_then_conv() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = rand_tensor(&mut rng, &[1, 2, 2, 2]);
        for &(k, s) in &[(2usize, 2usize), (3, 2), (3, 1)] {
            let w = rand_tensor(&mut rng, &[2, 3, k, k]);
            let got = conv_transpose2d(&x, &w, None, s, 0).unwrap();
            // insert s-1 zeros between inputs, pad by k-1, convolve with the
            // spatially flipped, in/out-swapped kernel
            let [_, ci, h, wd] = x.dims4().unwrap();
            let (uh, uw) = ((h - 1) * s + 1, (wd - 1) * s + 1);
            let mut up = Tensor::zeros(&[1, ci, uh, uw]);
            for c in 0..ci {
                for y in 0..h {
                    for xx in 0..wd {
                        up.data_mut()[(c * uh + y * s) * uw + xx * s] = x.at4(0, c, y, xx);
                    }
                }
            }
            let flipped = Tensor::from_fn(&[3, 2, k, k], |i| {
                let j = i % k;
                let r = (i / k) % k;
                let c = (i / (k * k)) % 2;
                let o = i / (2 * k * k);
                w.at4(c, o, k - 1 - r, k - 1 - j)
            });
            let want = direct_conv(&up, &flipped, &[0.0; 3], 1, k - 1);
            assert_eq!(got.dims(), want.dims());
            assert!(got.max_abs_diff(&want) < 1e-6);
        }
    }

    #[test]
    fn max_pool_picks_maximum() {
        let x = Tensor::<f64>::new(&[1, 1, 2, 4], vec![1., 5., 2., 0., 3., 4., 9., 1.]).unwrap();
        let (y, arg) = max_pool2(&x).unwrap();
        assert_eq!(y.data(), &[5., 9.]);
        assert_eq!(arg, vec![1, 6]);
        let dx = max_pool2_backward(x.dims(), &arg, &Tensor::new(&[1, 1, 1, 2], vec![1., 2.]).unwrap());
        assert_eq!(dx.data(), &[0., 1., 0., 0., 0., 0., 2., 0.]);
    }
}
