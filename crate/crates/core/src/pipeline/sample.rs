use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub seed: u64,
    pub style: String,
    /// Size before any resizing, as `(height, width)`.
    pub original_size: (usize, usize),
}

/// One slice: a `[1, H, W]` image in `[0, 1]` with optional `[H, W]`
/// binary masks.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: Tensor,
    pub la_mask: Option<Tensor>,
    pub scar_mask: Option<Tensor>,
    pub meta: SampleMeta,
}

pub(crate) fn is_binary(t: &Tensor) -> bool {
    t.data().iter().all(|&v| v == 0.0 || v == 1.0)
}

impl Sample {
    pub fn new(image: Tensor, la_mask: Option<Tensor>, scar_mask: Option<Tensor>, meta: SampleMeta) -> Result<Self> {
        let [h, w] = match image.dims() {
            &[1, h, w] => [h, w],
            &[h, w] => [h, w],
            d => return Err(Error::ShapeMismatch(format!("image must be [1, H, W], got {d:?}"))),
        };
        let image = image.reshape(&[1, h, w])?;
        for mask in la_mask.iter().chain(scar_mask.iter()) {
            if mask.dims() != [h, w] {
                return Err(Error::ShapeMismatch(format!("mask {:?} for image {h}x{w}", mask.dims())));
            }
            if !is_binary(mask) {
                return Err(Error::Malformed("mask values must be 0 or 1".into()));
            }
        }
        Ok(Self { image, la_mask, scar_mask, meta })
    }

    pub fn height(&self) -> usize {
        self.image.dims()[1]
    }

    pub fn width(&self) -> usize {
        self.image.dims()[2]
    }

    /// The image as a single `[H, W]` plane.
    pub fn plane(&self) -> Tensor {
        self.image.clone().reshape(&[self.height(), self.width()]).expect("same element count")
    }
}
