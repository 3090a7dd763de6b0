//! Random rotation plus integer translation, applied identically to an
//! image and its masks.

use rand::Rng;

use crate::pipeline::sample::Sample;
use crate::tensor::Tensor;

/// Augmented copies produced per input sample.
pub const AUGMENT_COPIES: usize = 4;
/// Rotation angles are drawn from `[0, MAX_ANGLE_DEG]`.
pub const MAX_ANGLE_DEG: f64 = 180.0;
/// Shifts satisfy `|d| < MAX_SHIFT_FRACTION * width`.
pub const MAX_SHIFT_FRACTION: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transform {
    pub angle_deg: f64,
    pub dx: i64,
    pub dy: i64,
}

impl Transform {
    pub const IDENTITY: Transform = Transform { angle_deg: 0.0, dx: 0, dy: 0 };

    /// Largest shift magnitude strictly below `0.1 * width`.
    pub fn max_shift(width: usize) -> i64 {
        (MAX_SHIFT_FRACTION * width as f64).ceil() as i64 - 1
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R, width: usize) -> Self {
        let m = Self::max_shift(width).max(0);
        Self {
            angle_deg: rng.random_range(0.0..=MAX_ANGLE_DEG),
            dx: rng.random_range(-m..=m),
            dy: rng.random_range(-m..=m),
        }
    }

    /// Source coordinate `(y, x)` read by output pixel `(y, x)`: the output
    /// is the input rotated about the image centre, then shifted.
    fn source(&self, y: usize, x: usize, h: usize, w: usize) -> (f64, f64) {
        let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
        let (sin, cos) = self.angle_deg.to_radians().sin_cos();
        let ry = y as f64 - self.dy as f64 - cy;
        let rx = x as f64 - self.dx as f64 - cx;
        (cos * ry - sin * rx + cy, sin * ry + cos * rx + cx)
    }

    pub fn apply_bilinear(&self, img: &Tensor) -> Tensor {
        let [h, w] = img.dims2().expect("plane");
        let px = |r: i64, c: i64| {
            if r < 0 || c < 0 || r >= h as i64 || c >= w as i64 {
                0.0
            } else {
                img.at2(r as usize, c as usize)
            }
        };
        Tensor::from_fn(&[h, w], |i| {
            let (sy, sx) = self.source(i / w, i % w, h, w);
            let (y0, x0) = (sy.floor(), sx.floor());
            let (fy, fx) = ((sy - y0) as f32, (sx - x0) as f32);
            let (y0, x0) = (y0 as i64, x0 as i64);
            let top = px(y0, x0) * (1.0 - fx) + px(y0, x0 + 1) * fx;
            let bot = px(y0 + 1, x0) * (1.0 - fx) + px(y0 + 1, x0 + 1) * fx;
            top * (1.0 - fy) + bot * fy
        })
    }

    pub fn apply_nearest(&self, img: &Tensor) -> Tensor {
        let [h, w] = img.dims2().expect("plane");
        Tensor::from_fn(&[h, w], |i| {
            let (sy, sx) = self.source(i / w, i % w, h, w);
            let (r, c) = (sy.round(), sx.round());
            if r < 0.0 || c < 0.0 || r >= h as f64 || c >= w as f64 {
                0.0
            } else {
                img.at2(r as usize, c as usize)
            }
        })
    }

    pub fn apply(&self, s: &Sample) -> Sample {
        let image = self.apply_bilinear(&s.plane()).reshape(&[1, s.height(), s.width()]).expect("same size");
        Sample {
            image,
            la_mask: s.la_mask.as_ref().map(|m| self.apply_nearest(m)),
            scar_mask: s.scar_mask.as_ref().map(|m| self.apply_nearest(m)),
            meta: s.meta.clone(),
        }
    }
}

/// Four randomly rotated and shifted copies of `s`.
pub fn augment_sample<R: Rng + ?Sized>(s: &Sample, rng: &mut R) -> Vec<Sample> {
    (0..AUGMENT_COPIES).map(|_| Transform::random(rng, s.width()).apply(s)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::sample::SampleMeta;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> Sample {
        let img = Tensor::from_fn(&[1, 6, 8], |i| (i % 7) as f32 / 7.0);
        let mask = Tensor::from_fn(&[6, 8], |i| if i % 3 == 0 { 1.0 } else { 0.0 });
        Sample::new(img, Some(mask), None, SampleMeta::default()).unwrap()
    }

    #[test]
    fn identity_leaves_sample_unchanged() {
        let s = sample();
        assert_eq!(Transform::IDENTITY.apply(&s), s);
    }

    #[test]
    fn four_copies_with_binary_masks() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = augment_sample(&sample(), &mut rng);
        assert_eq!(out.len(), 4);
        for s in out {
            assert!(s.la_mask.unwrap().data().iter().all(|&v| v == 0.0 || v == 1.0));
        }
    }

    #[test]
    fn shift_bound_for_224() {
        assert_eq!(Transform::max_shift(224), 22);
        assert_eq!(Transform::max_shift(220), 21);
    }
}
