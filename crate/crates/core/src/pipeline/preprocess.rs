//! Intensity and geometry normalization of single `[H, W]` planes.

use crate::error::{Error, Result};
use crate::pipeline::sample::Sample;
use crate::tensor::Tensor;

/// Fraction of the global maximum at or below which a border row or column
/// counts as black.
pub const MARGIN_THRESHOLD: f32 = 0.02;

pub(crate) fn plane_dims(img: &Tensor) -> Result<[usize; 2]> {
    img.dims2()
}

/// Trims leading and trailing rows/columns whose maximum is at most
/// [`MARGIN_THRESHOLD`] of the global maximum. Returns the crop and the
/// `(row, col)` offset of its top-left corner.
pub fn crop_black_margins(img: &Tensor) -> Result<(Tensor, (usize, usize))> {
    let [h, w] = plane_dims(img)?;
    img.check_finite()?;
    let max = img.data().iter().copied().fold(0.0f32, f32::max);
    let threshold = MARGIN_THRESHOLD * max;
    let row_on = |r: usize| (0..w).any(|c| img.at2(r, c) > threshold);
    let col_on = |c: usize| (0..h).any(|r| img.at2(r, c) > threshold);
    let top = (0..h).find(|&r| row_on(r)).ok_or(Error::AllBlackImage)?;
    let bottom = (0..h).rev().find(|&r| row_on(r)).expect("a bright row exists");
    let left = (0..w).find(|&c| col_on(c)).expect("a bright column exists");
    let right = (0..w).rev().find(|&c| col_on(c)).expect("a bright column exists");
    let (ch, cw) = (bottom - top + 1, right - left + 1);
    let out = Tensor::from_fn(&[ch, cw], |i| img.at2(top + i / cw, left + i % cw));
    Ok((out, (top, left)))
}

/// Source sample position and interpolation weight along one axis, using
/// the half-pixel (align-corners = false) convention.
fn bilinear_axis(t: usize, src: usize, dst: usize) -> (usize, usize, f32) {
    let scale = src as f64 / dst as f64;
    let s = ((t as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
    let i0 = s.floor() as usize;
    let i1 = (i0 + 1).min(src - 1);
    (i0, i1, (s - i0 as f64) as f32)
}

fn nearest_axis(t: usize, src: usize, dst: usize) -> usize {
    let scale = src as f64 / dst as f64;
    (((t as f64 + 0.5) * scale).floor() as usize).min(src - 1)
}

pub fn resize_bilinear(img: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let [h, w] = plane_dims(img)?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::ZeroTargetSize);
    }
    let rows: Vec<_> = (0..out_h).map(|t| bilinear_axis(t, h, out_h)).collect();
    let cols: Vec<_> = (0..out_w).map(|t| bilinear_axis(t, w, out_w)).collect();
    let mut out = Vec::with_capacity(out_h * out_w);
    for &(r0, r1, fy) in &rows {
        for &(c0, c1, fx) in &cols {
            let top = img.at2(r0, c0) * (1.0 - fx) + img.at2(r0, c1) * fx;
            let bot = img.at2(r1, c0) * (1.0 - fx) + img.at2(r1, c1) * fx;
            out.push(top * (1.0 - fy) + bot * fy);
        }
    }
    Tensor::from_parts(&[out_h, out_w], out)
}

/// Nearest-neighbour resize; keeps label values intact.
pub fn resize_nearest(img: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let [h, w] = plane_dims(img)?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::ZeroTargetSize);
    }
    let rows: Vec<_> = (0..out_h).map(|t| nearest_axis(t, h, out_h)).collect();
    let cols: Vec<_> = (0..out_w).map(|t| nearest_axis(t, w, out_w)).collect();
    Ok(Tensor::from_fn(&[out_h, out_w], |i| img.at2(rows[i / out_w], cols[i % out_w])))
}

/// Affine rescale to `[0, 1]`; a constant image maps to zeros.
pub fn minmax_normalize(img: &Tensor) -> Tensor {
    let (lo, hi) = img
        .data()
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    if !(range > 0.0) {
        return Tensor::zeros(img.dims());
    }
    img.map(|v| ((v - lo) / range).clamp(0.0, 1.0))
}

/// Margin crop, resize to `size x size` and min-max normalization, with
/// masks cropped and resized alongside.
pub fn prepare_sample(s: &Sample, size: usize) -> Result<Sample> {
    let (plane, (top, left)) = crop_black_margins(&s.plane())?;
    let [h, w] = plane.dims2()?;
    let co_crop = |m: &Tensor| -> Result<Tensor> {
        let cw = m.dims2()?[1];
        let crop = Tensor::from_fn(&[h, w], |i| m.data()[(top + i / w) * cw + left + i % w]);
        resize_nearest(&crop, size, size)
    };
    let image = minmax_normalize(&resize_bilinear(&plane, size, size)?).reshape(&[1, size, size])?;
    Sample::new(
        image,
        s.la_mask.as_ref().map(co_crop).transpose()?,
        s.scar_mask.as_ref().map(co_crop).transpose()?,
        s.meta.clone(),
    )
}
