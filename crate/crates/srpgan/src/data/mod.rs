//! Data pipeline: 8-bit RGB image container and codec glue, separable
//! bicubic resampling with antialiased downscaling, LR/HR pair construction,
//! random patch extraction, and the three training augmentations.

mod augment;
mod image_plane;
mod patches;
mod resample;

pub use augment::{
    adjust_brightness, adjust_saturation, augment, rotate180, rotate90, AugmentConfig,
};
pub use image_plane::{batch_to_tensor, ImagePlane};
pub use patches::{load_images, sample_patches, DatasetManifest};
pub use resample::{
    bicubic_pair, cubic_kernel, make_pair, resample_bicubic, resample_weights, CUBIC_A,
};

/// Quantize a [0,255]-domain float to u8: round half up, clamp.
pub(crate) fn quantize_u8(v: f64) -> u8 {
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}
