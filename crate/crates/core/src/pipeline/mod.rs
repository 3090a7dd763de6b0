//! Preprocessing, augmentation and the two-stage atrium/scar procedure.

pub mod augment;
pub mod preprocess;
pub mod roi;
pub mod sample;
pub mod two_stage;

pub use augment::{augment_sample, Transform};
pub use preprocess::{crop_black_margins, minmax_normalize, prepare_sample, resize_bilinear, resize_nearest};
pub use roi::{compute_roi, crop_to_roi, restore_zero_pad, Roi};
pub use sample::{Sample, SampleMeta};
pub use two_stage::{roi_sample, two_stage_predict, Segmenter, TwoStageConfig, TwoStageOutput};
