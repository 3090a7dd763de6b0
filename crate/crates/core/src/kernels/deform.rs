//! Deformable convolution: every kernel tap is displaced by a learned
//! fractional offset and read with bilinear interpolation. Samples outside
//! the image read as zero.
//!
//! Offsets are `[b, 2*k*k, h, w]`; channel `2t` holds the row offset and
//! `2t+1` the column offset of tap `t = ki*k + kj`. Stride is 1 and padding
//! `k/2`, so the output keeps the input size.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// One bilinear read: up to four in-bounds corners with their weights.
struct Sample<T> {
    corners: [Option<usize>; 4],
    weights: [T; 4],
    ly: T,
    lx: T,
}

fn bilinear_plan<T: Real>(py: T, px: T, h: usize, w: usize) -> Sample<T> {
    let y0f = py.floor();
    let x0f = px.floor();
    let ly = py - y0f;
    let lx = px - x0f;
    let y0 = y0f.to_isize().unwrap_or(isize::MIN / 2);
    let x0 = x0f.to_isize().unwrap_or(isize::MIN / 2);
    let one = T::one();
    let at = |y: isize, x: isize| {
        (y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w).then(|| y as usize * w + x as usize)
    };
    Sample {
        corners: [at(y0, x0), at(y0, x0 + 1), at(y0 + 1, x0), at(y0 + 1, x0 + 1)],
        weights: [(one - ly) * (one - lx), (one - ly) * lx, ly * (one - lx), ly * lx],
        ly,
        lx,
    }
}

impl<T: Real> Sample<T> {
    fn read(&self, plane: &[T]) -> T {
        let mut v = T::zero();
        for (c, &wt) in self.corners.iter().zip(&self.weights) {
            if let Some(i) = c {
                v += wt * plane[*i];
            }
        }
        v
    }

    fn corner(&self, plane: &[T], i: usize) -> T {
        self.corners[i].map_or(T::zero(), |j| plane[j])
    }

    /// Partial derivatives of the interpolated value w.r.t. the row and
    /// column sampling coordinates.
    fn slopes(&self, plane: &[T]) -> (T, T) {
        let one = T::one();
        let v00 = self.corner(plane, 0);
        let v01 = self.corner(plane, 1);
        let v10 = self.corner(plane, 2);
        let v11 = self.corner(plane, 3);
        let dy = (one - self.lx) * (v10 - v00) + self.lx * (v11 - v01);
        let dx = (one - self.ly) * (v01 - v00) + self.ly * (v11 - v10);
        (dy, dx)
    }
}

/// Bilinear read of `plane` (`h x w`) at fractional `(py, px)`, zero outside.
pub fn bilinear_sample<T: Real>(plane: &[T], h: usize, w: usize, py: T, px: T) -> T {
    bilinear_plan(py, px, h, w).read(plane)
}

struct Geometry {
    channels: usize,
    height: usize,
    width: usize,
    kernel: usize,
}

impl Geometry {
    fn taps(&self) -> usize {
        self.kernel * self.kernel
    }

    fn positions(&self) -> usize {
        self.height * self.width
    }

    fn plan<T: Real>(&self, offsets: &[T], tap: usize, pos: usize) -> Sample<T> {
        let np = self.positions();
        let pad = (self.kernel / 2) as isize;
        let (y, x) = ((pos / self.width) as isize, (pos % self.width) as isize);
        let (ki, kj) = ((tap / self.kernel) as isize, (tap % self.kernel) as isize);
        let dy = offsets[2 * tap * np + pos];
        let dx = offsets[(2 * tap + 1) * np + pos];
        let py = T::from_isize(y + ki - pad).unwrap() + dy;
        let px = T::from_isize(x + kj - pad).unwrap() + dx;
        bilinear_plan(py, px, self.height, self.width)
    }

    /// Deformed `[c*k*k, h*w]` column matrix for one image.
    fn columns<T: Real>(&self, img: &[T], offsets: &[T], cols: &mut [T]) {
        let np = self.positions();
        let kk = self.taps();
        for tap in 0..kk {
            for pos in 0..np {
                let s = self.plan(offsets, tap, pos);
                for c in 0..self.channels {
                    let plane = &img[c * np..(c + 1) * np];
                    cols[(c * kk + tap) * np + pos] = s.read(plane);
                }
            }
        }
    }
}

fn check<T: Real>(x: &Tensor<T>, offsets: &Tensor<T>, w: &Tensor<T>) -> Result<Geometry> {
    let [b, ci, h, wd] = x.dims4()?;
    let [_, wci, k, k2] = w.dims4()?;
    if wci != ci || k != k2 || k % 2 == 0 {
        return Err(Error::ShapeMismatch(format!("deformable kernel {:?} for input {:?}", w.dims(), x.dims())));
    }
    if offsets.dims() != [b, 2 * k * k, h, wd] {
        return Err(Error::ShapeMismatch(format!(
            "offsets {:?}, expected {:?}",
            offsets.dims(),
            [b, 2 * k * k, h, wd]
        )));
    }
    Ok(Geometry { channels: ci, height: h, width: wd, kernel: k })
}

pub fn deform_conv2d<T: Real>(
    x: &Tensor<T>,
    offsets: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let g = check(x, offsets, w)?;
    let [batch, ci, h, wd] = x.dims4()?;
    let co = w.dims()[0];
    if let Some(b) = b {
        if b.len() != co {
            return Err(Error::ShapeMismatch(format!("bias length {} for {} channels", b.len(), co)));
        }
    }
    let np = h * wd;
    let rows = ci * g.taps();
    let ochan = 2 * g.taps();
    let mut cols = vec![T::zero(); rows * np];
    let mut out = vec![T::zero(); batch * co * np];
    for bi in 0..batch {
        let img = &x.data()[bi * ci * np..(bi + 1) * ci * np];
        let off = &offsets.data()[bi * ochan * np..(bi + 1) * ochan * np];
        g.columns(img, off, &mut cols);
        let o = &mut out[bi * co * np..(bi + 1) * co * np];
        if let Some(b) = b {
            for (c, chunk) in o.chunks_mut(np).enumerate() {
                chunk.fill(b.data()[c]);
            }
        }
        let beta = if b.is_some() { T::one() } else { T::zero() };
        T::gemm(co, rows, np, T::one(), w.data(), false, &cols, false, beta, o);
    }
    Ok(Tensor::raw(vec![batch, co, h, wd], out))
}

pub struct DeformGrads<T> {
    pub input: Option<Tensor<T>>,
    pub offsets: Option<Tensor<T>>,
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

pub fn deform_conv2d_backward<T: Real>(
    x: &Tensor<T>,
    offsets: &Tensor<T>,
    w: &Tensor<T>,
    with_bias: bool,
    dout: &Tensor<T>,
    need_input: bool,
    need_offsets: bool,
) -> DeformGrads<T> {
    let g = check(x, offsets, w).expect("validated in forward");
    let [batch, ci, h, wd] = x.dims4().unwrap();
    let co = w.dims()[0];
    let np = h * wd;
    let kk = g.taps();
    let rows = ci * kk;
    let ochan = 2 * kk;
    let mut cols = vec![T::zero(); rows * np];
    let mut dcols = vec![T::zero(); rows * np];
    let mut dw = vec![T::zero(); co * rows];
    let mut db = vec![T::zero(); if with_bias { co } else { 0 }];
    let mut dx = vec![T::zero(); if need_input { x.len() } else { 0 }];
    let mut doff = vec![T::zero(); if need_offsets { offsets.len() } else { 0 }];
    for bi in 0..batch {
        let img = &x.data()[bi * ci * np..(bi + 1) * ci * np];
        let off = &offsets.data()[bi * ochan * np..(bi + 1) * ochan * np];
        let d = &dout.data()[bi * co * np..(bi + 1) * co * np];
        g.columns(img, off, &mut cols);
        T::gemm(co, np, rows, T::one(), d, false, &cols, true, T::one(), &mut dw);
        if with_bias {
            for (c, chunk) in d.chunks(np).enumerate() {
                db[c] += chunk.iter().copied().sum::<T>();
            }
        }
        if !(need_input || need_offsets) {
            continue;
        }
        T::gemm(rows, co, np, T::one(), w.data(), true, d, false, T::zero(), &mut dcols);
        for tap in 0..kk {
            for pos in 0..np {
                let s = g.plan(off, tap, pos);
                let (mut gy, mut gx) = (T::zero(), T::zero());
                for c in 0..ci {
                    let gcol = dcols[(c * kk + tap) * np + pos];
                    if need_input {
                        let dplane = &mut dx[(bi * ci + c) * np..(bi * ci + c + 1) * np];
                        for (corner, &wt) in s.corners.iter().zip(&s.weights) {
                            if let Some(i) = corner {
                                dplane[*i] += wt * gcol;
                            }
                        }
                    }
                    if need_offsets {
                        let (sy, sx) = s.slopes(&img[c * np..(c + 1) * np]);
                        gy += gcol * sy;
                        gx += gcol * sx;
                    }
                }
                if need_offsets {
                    doff[(bi * ochan + 2 * tap) * np + pos] += gy;
                    doff[(bi * ochan + 2 * tap + 1) * np + pos] += gx;
                }
            }
        }
    }
    DeformGrads {
        input: need_input.then(|| Tensor::raw(x.dims().to_vec(), dx)),
        offsets: need_offsets.then(|| Tensor::raw(offsets.dims().to_vec(), doff)),
        weight: Tensor::raw(w.dims().to_vec(), dw),
        bias: with_bias.then(|| Tensor::raw(vec![co], db)),
    }
}
