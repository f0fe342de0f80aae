//! Training-time augmentations: random rotation (90 or 180 degrees),
//! brightness scaling, and saturation scaling, applied to HR patches before
//! pair construction.

use crate::data::image_plane::ImagePlane;
use crate::data::quantize_u8;
use crate::tensor::RngStream;

/// Probabilities and ranges of the three augmentations. Each augmentation
/// fires independently with its probability; brightness multiplies all
/// samples by `b ~ U(brightness.0, brightness.1)`, saturation blends each
/// pixel between its BT.601 gray value and itself by
/// `s ~ U(saturation.0, saturation.1)`.
#[derive(Debug, Clone, Copy)]
pub struct AugmentConfig {
    pub prob_rotate: f64,
    pub prob_brightness: f64,
    pub prob_saturation: f64,
    pub brightness: (f64, f64),
    pub saturation: (f64, f64),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            prob_rotate: 0.5,
            prob_brightness: 0.5,
            prob_saturation: 0.5,
            brightness: (0.8, 1.2),
            saturation: (0.7, 1.3),
        }
    }
}

/// Rotate 90 degrees clockwise. Output is `height x width`.
pub fn rotate90(img: &ImagePlane) -> ImagePlane {
    let (w, h) = (img.width(), img.height());
    let mut out = ImagePlane::filled(h, w, [0, 0, 0]).expect("positive dims");
    for y in 0..w {
        for x in 0..h {
            for c in 0..3 {
                out.set(x, y, c, img.at(y, h - 1 - x, c));
            }
        }
    }
    out
}

/// Rotate 180 degrees (an involution).
pub fn rotate180(img: &ImagePlane) -> ImagePlane {
    let (w, h) = (img.width(), img.height());
    let mut out = ImagePlane::filled(w, h, [0, 0, 0]).expect("positive dims");
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                out.set(x, y, c, img.at(w - 1 - x, h - 1 - y, c));
            }
        }
    }
    out
}

/// Multiply every sample by `b`, rounding half up and clamping to [0,255].
pub fn adjust_brightness(img: &ImagePlane, b: f64) -> ImagePlane {
    let (w, h) = (img.width(), img.height());
    let mut out = img.clone();
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                out.set(x, y, c, quantize_u8(f64::from(img.at(x, y, c)) * b));
            }
        }
    }
    out
}

/// Blend each pixel between its BT.601 gray value
/// (`0.299 R + 0.587 G + 0.114 B`) and itself:
/// `out = gray + s * (rgb - gray)`, clamped to [0,255].
/// `s = 0` yields grayscale, `s = 1` the identity.
pub fn adjust_saturation(img: &ImagePlane, s: f64) -> ImagePlane {
    let (w, h) = (img.width(), img.height());
    let mut out = img.clone();
    for y in 0..h {
        for x in 0..w {
            let r = f64::from(img.at(x, y, 0));
            let g = f64::from(img.at(x, y, 1));
            let b = f64::from(img.at(x, y, 2));
            let gray = 0.299 * r + 0.587 * g + 0.114 * b;
            for (c, v) in [r, g, b].into_iter().enumerate() {
                out.set(x, y, c, quantize_u8(gray + s * (v - gray)));
            }
        }
    }
    out
}

/// Apply the three augmentations with independent probabilities.
///
/// Exactly six random draws are consumed per call in a fixed order (rotate
/// flag, angle choice, brightness flag and factor, saturation flag and
/// factor) whether or not each augmentation fires, so parallel prefetchers
/// can pre-draw per-patch randomness in order and stay deterministic. On
/// non-square patches a drawn 90-degree rotation falls back to 180 degrees
/// so the patch dimensions stay fixed within a batch.
pub fn augment(patch: &ImagePlane, stream: &mut RngStream, cfg: &AugmentConfig) -> ImagePlane {
    let rotate = stream.next_f64() < cfg.prob_rotate;
    let quarter_turn = stream.next_below(2) == 0;
    let brighten = stream.next_f64() < cfg.prob_brightness;
    let b = stream.next_range(cfg.brightness.0, cfg.brightness.1);
    let saturate = stream.next_f64() < cfg.prob_saturation;
    let s = stream.next_range(cfg.saturation.0, cfg.saturation.1);

    let mut out = if rotate {
        if quarter_turn && patch.width() == patch.height() {
            rotate90(patch)
        } else {
            rotate180(patch)
        }
    } else {
        patch.clone()
    };
    if brighten {
        out = adjust_brightness(&out, b);
    }
    if saturate {
        out = adjust_saturation(&out, s);
    }
    out
}
