use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Margin added around the predicted atrium on every side, in pixels.
pub const DEFAULT_TOLERANCE: usize = 30;

/// Inclusive pixel rectangle inside an `orig_h x orig_w` frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Roi {
    pub x_min: usize,
    pub y_min: usize,
    pub x_max: usize,
    pub y_max: usize,
    pub tolerance: usize,
    pub orig_h: usize,
    pub orig_w: usize,
}

impl Roi {
    pub fn height(&self) -> usize {
        self.y_max - self.y_min + 1
    }

    pub fn width(&self) -> usize {
        self.x_max - self.x_min + 1
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        (self.y_min..=self.y_max).contains(&y) && (self.x_min..=self.x_max).contains(&x)
    }

    pub fn full_frame(h: usize, w: usize) -> Self {
        Self { x_min: 0, y_min: 0, x_max: w - 1, y_max: h - 1, tolerance: 0, orig_h: h, orig_w: w }
    }

    fn check(&self, h: usize, w: usize) -> Result<()> {
        if self.x_min > self.x_max || self.y_min > self.y_max || self.x_max >= w || self.y_max >= h {
            return Err(Error::RoiOutOfBounds(format!("{self:?} in {h}x{w}")));
        }
        Ok(())
    }
}

/// Bounding box of the nonzero pixels grown by `tolerance` and clamped to
/// the frame.
pub fn compute_roi(la_mask: &Tensor, tolerance: usize) -> Result<Roi> {
    let [h, w] = la_mask.dims2()?;
    let mut bbox: Option<(usize, usize, usize, usize)> = None;
    for (i, &v) in la_mask.data().iter().enumerate() {
        if v != 0.0 {
            let (y, x) = (i / w, i % w);
            bbox = Some(match bbox {
                None => (x, y, x, y),
                Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
            });
        }
    }
    let (x0, y0, x1, y1) = bbox.ok_or(Error::EmptyMask)?;
    Ok(Roi {
        x_min: x0.saturating_sub(tolerance),
        y_min: y0.saturating_sub(tolerance),
        x_max: (x1 + tolerance).min(w - 1),
        y_max: (y1 + tolerance).min(h - 1),
        tolerance,
        orig_h: h,
        orig_w: w,
    })
}

pub fn crop_to_roi(img: &Tensor, roi: &Roi) -> Result<Tensor> {
    let [h, w] = img.dims2()?;
    roi.check(h, w)?;
    let cw = roi.width();
    Ok(Tensor::from_fn(&[roi.height(), cw], |i| img.at2(roi.y_min + i / cw, roi.x_min + i % cw)))
}

/// Places `patch` at the ROI inside a zero canvas of the original size.
pub fn restore_zero_pad(patch: &Tensor, roi: &Roi) -> Result<Tensor> {
    let dims = patch.dims2()?;
    if dims != [roi.height(), roi.width()] {
        return Err(Error::PatchRoiMismatch { patch: patch.dims().to_vec(), roi: (roi.height(), roi.width()) });
    }
    roi.check(roi.orig_h, roi.orig_w)?;
    let mut out = Tensor::zeros(&[roi.orig_h, roi.orig_w]);
    let cw = roi.width();
    for (i, &v) in patch.data().iter().enumerate() {
        let (y, x) = (roi.y_min + i / cw, roi.x_min + i % cw);
        out.data_mut()[y * roi.orig_w + x] = v;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point_mask(h: usize, w: usize, pts: &[(usize, usize)]) -> Tensor {
        let mut m = Tensor::zeros(&[h, w]);
        for &(y, x) in pts {
            m.data_mut()[y * w + x] = 1.0;
        }
        m
    }

    #[test]
    fn tolerance_box() {
        let m = point_mask(224, 224, &[(50, 40), (90, 80)]);
        let r = compute_roi(&m, 30).unwrap();
        assert_eq!((r.x_min, r.y_min, r.x_max, r.y_max), (10, 20, 110, 120));
        let r = compute_roi(&point_mask(224, 224, &[(100, 100)]), 30).unwrap();
        assert_eq!((r.x_min, r.y_min, r.x_max, r.y_max), (70, 70, 130, 130));
        let r = compute_roi(&point_mask(224, 224, &[(0, 0)]), 30).unwrap();
        assert_eq!((r.x_min, r.y_min), (0, 0));
        assert!(matches!(compute_roi(&Tensor::zeros(&[4, 4]), 30), Err(Error::EmptyMask)));
    }

    #[test]
    fn crop_guards() {
        let img = Tensor::from_fn(&[4, 5], |i| i as f32);
        assert_eq!(crop_to_roi(&img, &Roi::full_frame(4, 5)).unwrap(), img);
        let one = Roi { x_min: 2, y_min: 1, x_max: 2, y_max: 1, tolerance: 0, orig_h: 4, orig_w: 5 };
        assert_eq!(crop_to_roi(&img, &one).unwrap().data(), &[7.0]);
        let bad = Roi { x_max: 5, ..one };
        assert!(matches!(crop_to_roi(&img, &bad), Err(Error::RoiOutOfBounds(_))));
        assert!(matches!(restore_zero_pad(&img, &one), Err(Error::PatchRoiMismatch { .. })));
    }
}
