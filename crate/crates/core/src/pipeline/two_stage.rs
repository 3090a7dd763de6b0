//! Coarse-to-fine inference: segment the atrium on the whole frame, crop a
//! tolerance box around it, segment scar inside the crop, and paste the
//! result back into an empty frame.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::kernels::activation::sigmoid;
use crate::model::Model;
use crate::pipeline::preprocess::{resize_bilinear, resize_nearest};
use crate::pipeline::sample::Sample;
use crate::pipeline::roi::{compute_roi, crop_to_roi, restore_zero_pad, Roi, DEFAULT_TOLERANCE};
use crate::tensor::Tensor;

/// Anything that maps an `[H, W]` image plane to per-pixel logits.
pub trait Segmenter {
    fn logits(&self, image: &Tensor) -> Result<Tensor>;
}

impl Segmenter for Model<f32> {
    fn logits(&self, image: &Tensor) -> Result<Tensor> {
        let [h, w] = image.dims2()?;
        let out = self.predict(&image.clone().reshape(&[1, 1, h, w])?)?;
        out.reshape(&[h, w])
    }
}

impl<F: Fn(&Tensor) -> Result<Tensor>> Segmenter for F {
    fn logits(&self, image: &Tensor) -> Result<Tensor> {
        self(image)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TwoStageConfig {
    pub threshold: f32,
    pub tolerance: usize,
    /// Side of the square patch fed to the scar model.
    pub scar_input: usize,
}

impl Default for TwoStageConfig {
    fn default() -> Self {
        Self { threshold: 0.5, tolerance: DEFAULT_TOLERANCE, scar_input: 96 }
    }
}

#[derive(Clone, Debug)]
pub struct TwoStageOutput {
    pub la_mask: Tensor,
    pub scar_mask: Tensor,
    pub roi: Option<Roi>,
    /// The resized crop handed to the scar model.
    pub patch: Option<Tensor>,
    /// Set when the atrium prediction was empty and scar was skipped.
    pub empty_la: bool,
}

pub fn probabilities(logits: &Tensor) -> Tensor {
    logits.map(sigmoid)
}

pub fn binarize(probs: &Tensor, threshold: f32) -> Tensor {
    probs.map(|p| if p > threshold { 1.0 } else { 0.0 })
}

/// Crop of `image` under `roi`, resized to `side x side`.
pub fn roi_patch(image: &Tensor, roi: &Roi, side: usize) -> Result<Tensor> {
    resize_bilinear(&crop_to_roi(image, roi)?, side, side)
}

/// Scar-model training example: image and scar mask cropped to `roi` and
/// resized to `side x side`.
pub fn roi_sample(s: &Sample, roi: &Roi, side: usize) -> Result<Sample> {
    let image = roi_patch(&s.plane(), roi, side)?.reshape(&[1, side, side])?;
    let crop = |m: &Tensor| resize_nearest(&crop_to_roi(m, roi)?, side, side);
    Sample::new(
        image,
        s.la_mask.as_ref().map(crop).transpose()?,
        s.scar_mask.as_ref().map(crop).transpose()?,
        s.meta.clone(),
    )
}

pub fn two_stage_predict(
    image: &Tensor,
    lapm: &dyn Segmenter,
    spm: &dyn Segmenter,
    cfg: &TwoStageConfig,
) -> Result<TwoStageOutput> {
    let [h, w] = image.dims2()?;
    let la_mask = binarize(&probabilities(&lapm.logits(image)?), cfg.threshold);
    let roi = match compute_roi(&la_mask, cfg.tolerance) {
        Ok(roi) => roi,
        Err(_) => {
            log::warn!("atrium prediction is empty; scar stage skipped");
            return Ok(TwoStageOutput {
                la_mask,
                scar_mask: Tensor::zeros(&[h, w]),
                roi: None,
                patch: None,
                empty_la: true,
            });
        }
    };
    let patch = roi_patch(image, &roi, cfg.scar_input)?;
    let probs = probabilities(&spm.logits(&patch)?);
    let back = resize_bilinear(&probs, roi.height(), roi.width())?;
    let scar_mask = restore_zero_pad(&binarize(&back, cfg.threshold), &roi)?;
    Ok(TwoStageOutput { la_mask, scar_mask, roi: Some(roi), patch: Some(patch), empty_la: false })
}
