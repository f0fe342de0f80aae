//! Separable bicubic resampling (Keys kernel, a = -0.5) with antialiased
//! downscaling, plus construction of the (bicubic-upscaled, ground-truth)
//! training pair.

use crate::data::image_plane::ImagePlane;
use crate::data::quantize_u8;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Default Keys kernel parameter.
pub const CUBIC_A: f64 = -0.5;

/// Keys cubic convolution kernel.
///
/// `(a+2)|x|^3 - (a+3)|x|^2 + 1` for `|x| <= 1`,
/// `a|x|^3 - 5a|x|^2 + 8a|x| - 4a` for `1 < |x| < 2`, zero beyond.
pub fn cubic_kernel(x: f64, a: f64) -> f64 {
    let x = x.abs();
    if x <= 1.0 {
        ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        (((a * x) - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a
    } else {
        0.0
    }
}

/// Filter taps for one resampling axis.
///
/// For each output index the result holds the first contributing source
/// index (possibly out of range; samples are clamped to the border when the
/// taps are applied) and the normalized weights over consecutive source
/// samples. Output centers map to source coordinates via
/// `(i + 0.5) * in/out - 0.5`. When minifying with `antialias` set, the
/// kernel support is stretched by the scale ratio and the weights are
/// renormalized to sum to one.
pub fn resample_weights(in_size: usize, out_size: usize, antialias: bool) -> Vec<(isize, Vec<f64>)> {
    assert!(in_size >= 1 && out_size >= 1, "sizes must be >= 1");
    let ratio = in_size as f64 / out_size as f64;
    let stretch = if antialias && ratio > 1.0 { ratio } else { 1.0 };
    let radius = 2.0 * stretch;
    (0..out_size)
        .map(|i| {
            let center = (i as f64 + 0.5) * ratio - 0.5;
            let lo = (center - radius).ceil() as isize;
            let hi = (center + radius).floor() as isize;
            let mut weights: Vec<f64> = (lo..=hi)
                .map(|j| cubic_kernel((j as f64 - center) / stretch, CUBIC_A))
                .collect();
            let sum: f64 = weights.iter().sum();
            for w in &mut weights {
                *w /= sum;
            }
            (lo, weights)
        })
        .collect()
}

/// Resample to `out_w` x `out_h` with the separable cubic kernel.
///
/// Horizontal then vertical pass, per channel, in f64 throughout; border
/// samples are replicated; the result is quantized (round half up, clamp)
/// only once at the end. `antialias` stretches the kernel on whichever axes
/// shrink; it has no effect on axes that grow.
pub fn resample_bicubic(img: &ImagePlane, out_w: usize, out_h: usize, antialias: bool) -> ImagePlane {
    assert!(out_w >= 1 && out_h >= 1, "output dimensions must be >= 1");
    let (in_w, in_h) = (img.width(), img.height());
    let wx = resample_weights(in_w, out_w, antialias);
    let wy = resample_weights(in_h, out_h, antialias);
    let mut out_data = vec![0u8; 3 * out_w * out_h];
    let mut mid = vec![0.0f64; in_h * out_w];
    for c in 0..3 {
        for y in 0..in_h {
            let row = &mut mid[y * out_w..(y + 1) * out_w];
            for (x, (lo, taps)) in wx.iter().enumerate() {
                let mut acc = 0.0;
                for (k, &w) in taps.iter().enumerate() {
                    let j = (lo + k as isize).clamp(0, in_w as isize - 1) as usize;
                    acc += w * f64::from(img.at(j, y, c));
                }
                row[x] = acc;
            }
        }
        for (yo, (lo, taps)) in wy.iter().enumerate() {
            for x in 0..out_w {
                let mut acc = 0.0;
                for (k, &w) in taps.iter().enumerate() {
                    let j = (lo + k as isize).clamp(0, in_h as isize - 1) as usize;
                    acc += w * mid[j * out_w + x];
                }
                out_data[3 * (yo * out_w + x) + c] = quantize_u8(acc);
            }
        }
    }
    ImagePlane::from_raw(out_w, out_h, out_data).expect("validated dims")
}

/// Image-domain training pair: ground truth `y` (the input cropped to
/// scale-divisible dimensions) and its bicubic reconstruction `z`
/// (antialiased downscale by `s`, then upscale back).
///
/// Indivisible dimensions are cropped to the largest divisible region at the
/// top-left corner. An image smaller than `s` in either dimension is an
/// error.
pub fn bicubic_pair(hr: &ImagePlane, s: usize) -> Result<(ImagePlane, ImagePlane)> {
    if s == 0 {
        return Err(Error::InvalidParameter("scale must be >= 1".into()));
    }
    let w = (hr.width() / s) * s;
    let h = (hr.height() / s) * s;
    if w == 0 || h == 0 {
        return Err(Error::Data(format!(
            "image {}x{} is smaller than scale {s}",
            hr.width(),
            hr.height()
        )));
    }
    let y = if w == hr.width() && h == hr.height() {
        hr.clone()
    } else {
        hr.crop(0, 0, w, h)?
    };
    let lr = resample_bicubic(&y, w / s, h / s, true);
    let z = resample_bicubic(&lr, w, h, false);
    Ok((z, y))
}

/// Tensor-domain training pair `(z, y)`, both `[1,3,H,W]` in `[0,1]`.
///
/// `y` is the input divided by 255 (cropped to scale-divisible dimensions);
/// `z` is the bicubic down-then-up reconstruction divided by 255. At `s = 1`
/// the resampling is the identity and `z == y` exactly.
pub fn make_pair<E: Scalar>(hr: &ImagePlane, s: usize) -> Result<(Tensor<E>, Tensor<E>)> {
    let (z, y) = bicubic_pair(hr, s)?;
    Ok((z.to_tensor(), y.to_tensor()))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Kernel values at the landmark points of the a = -0.5 member:
    /// interpolation property at integers and 0.5625 at the half sample.
    #[test]
    fn kernel_landmarks() {
        assert_eq!(cubic_kernel(0.0, CUBIC_A), 1.0);
        assert_eq!(cubic_kernel(1.0, CUBIC_A), 0.0);
        assert_eq!(cubic_kernel(-1.0, CUBIC_A), 0.0);
        assert_eq!(cubic_kernel(2.0, CUBIC_A), 0.0);
        assert_eq!(cubic_kernel(-2.0, CUBIC_A), 0.0);
        assert!((cubic_kernel(0.5, CUBIC_A) - 0.5625).abs() < 1e-15);
        assert!((cubic_kernel(-0.5, CUBIC_A) - 0.5625).abs() < 1e-15);
        assert_eq!(cubic_kernel(2.5, CUBIC_A), 0.0);
        // Continuity across the |x| = 1 and |x| = 2 joins.
        assert!((cubic_kernel(1.0 - 1e-9, CUBIC_A) - cubic_kernel(1.0 + 1e-9, CUBIC_A)).abs() < 1e-8);
        assert!(cubic_kernel(2.0 - 1e-9, CUBIC_A).abs() < 1e-8);
    }

    /// Filter taps sum to one at every output position, with and without
    /// antialiasing, for integer and non-integer ratios.
    #[test]
    fn weights_are_a_partition_of_unity() {
        for &(in_size, out_size, antialias) in &[
            (8usize, 16usize, false),
            (16, 8, true),
            (16, 8, false),
            (11, 4, true),
            (7, 13, false),
            (5, 5, true),
            (640, 480, true),
        ] {
            for (i, (_, taps)) in resample_weights(in_size, out_size, antialias)
                .iter()
                .enumerate()
            {
                let sum: f64 = taps.iter().sum();
                assert!(
                    (sum - 1.0).abs() < 1e-6,
                    "weights at output {i} of {in_size}->{out_size} sum to {sum}"
                );
            }
        }
    }

    /// At equal input and output size the taps collapse to the identity:
    /// weight one on the matching source sample.
    #[test]
    fn identity_ratio_weights() {
        for (i, (lo, taps)) in resample_weights(9, 9, true).iter().enumerate() {
            for (k, &w) in taps.iter().enumerate() {
                let j = lo + k as isize;
                let expect = if j == i as isize { 1.0 } else { 0.0 };
                assert!((w - expect).abs() < 1e-12, "tap {j} of output {i} is {w}");
            }
        }
    }

    /// A constant image stays exactly constant at any output size.
    #[test]
    fn constant_image_stays_constant() {
        let img = ImagePlane::filled(13, 9, [37, 201, 99]).unwrap();
        for &(w, h, aa) in &[(26usize, 18usize, false), (5, 3, true), (17, 4, true)] {
            let out = resample_bicubic(&img, w, h, aa);
            for y in 0..h {
                for x in 0..w {
                    assert_eq!(
                        [out.at(x, y, 0), out.at(x, y, 1), out.at(x, y, 2)],
                        [37, 201, 99]
                    );
                }
            }
        }
    }

    /// Upscaling a linear horizontal ramp by 2 reproduces the ramp at the
    /// mapped positions within one 8-bit level: output centers sit at source
    /// coordinates x - 0.25 and x + 0.25, where the cubic kernel is exact on
    /// linear signals, so out[2x] = 4x - 1 and out[2x+1] = 4x + 1 away from
    /// the clamped border.
    #[test]
    fn upscale_preserves_linear_ramp() {
        let w = 32usize;
        let mut img = ImagePlane::filled(w, 6, [0, 0, 0]).unwrap();
        for y in 0..6 {
            for x in 0..w {
                for c in 0..3 {
                    img.set(x, y, c, (4 * x) as u8);
                }
            }
        }
        let up = resample_bicubic(&img, 2 * w, 6, false);
        for x in 2..=w - 2 {
            let even = f64::from(up.at(2 * x, 3, 0));
            let odd = f64::from(up.at(2 * x + 1, 3, 1));
            assert!(
                (even - (4.0 * x as f64 - 1.0)).abs() <= 1.0,
                "even sample at {x}: {even}"
            );
            assert!(
                (odd - (4.0 * x as f64 + 1.0)).abs() <= 1.0,
                "odd sample at {x}: {odd}"
            );
        }
    }

    /// Pair construction contract: y is hr/255, shapes match the input, and
    /// scale 1 is exactly the identity (z == y).
    #[test]
    fn make_pair_shapes_and_identity_scale() {
        let mut img = ImagePlane::filled(16, 12, [0, 0, 0]).unwrap();
        for y in 0..12 {
            for x in 0..16 {
                for c in 0..3 {
                    img.set(x, y, c, ((x * 16 + y * 3 + c * 40) % 256) as u8);
                }
            }
        }
        let (z, y) = make_pair::<f32>(&img, 4).unwrap();
        assert_eq!(z.dims(), &[1, 3, 12, 16]);
        assert_eq!(y.dims(), &[1, 3, 12, 16]);
        assert_eq!(y.data(), img.to_tensor::<f32>().data());

        let (z1, y1) = make_pair::<f32>(&img, 1).unwrap();
        assert_eq!(z1.data(), y1.data(), "scale 1 resampling must be identity");
    }

    /// Indivisible dimensions crop to the largest divisible region; images
    /// smaller than the scale are rejected.
    #[test]
    fn make_pair_crops_indivisible() {
        let img = ImagePlane::filled(130, 127, [50, 60, 70]).unwrap();
        let (z, y) = make_pair::<f32>(&img, 4).unwrap();
        assert_eq!(z.dims(), &[1, 3, 124, 128]);
        assert_eq!(y.dims(), &[1, 3, 124, 128]);

        let tiny = ImagePlane::filled(3, 8, [0, 0, 0]).unwrap();
        assert!(make_pair::<f32>(&tiny, 4).is_err());
        assert!(make_pair::<f32>(&img, 0).is_err());
    }

    /// Down-then-up is a smoothing round trip: it cannot create variance.
    #[test]
    fn down_up_contracts_variance() {
        let mut img = ImagePlane::filled(64, 64, [0, 0, 0]).unwrap();
        for y in 0..64 {
            for x in 0..64 {
                let v = 128.0
                    + 60.0
                        * (2.0 * std::f64::consts::PI * x as f64 / 17.0).sin()
                        * (2.0 * std::f64::consts::PI * y as f64 / 13.0).sin()
                    + 40.0 * (2.0 * std::f64::consts::PI * x as f64 / 7.0).sin();
                for c in 0..3 {
                    img.set(x, y, c, quantize_u8(v + c as f64 * 5.0));
                }
            }
        }
        let (z, y) = make_pair::<f64>(&img, 4).unwrap();
        let var = |t: &Tensor<f64>| {
            let n = t.len() as f64;
            let mean: f64 = t.data().iter().sum::<f64>() / n;
            t.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
        };
        let (vz, vy) = (var(&z), var(&y));
        assert!(
            vz <= vy + 1e-6,
            "variance grew through down-up: {vz} > {vy}"
        );
        assert!(vz > 0.0, "reconstruction should not be constant");
    }

    /// Downscale output is bounded by the input range (no ringing past the
    /// clamp) and antialiased downscale of a checkerboard lands near mid-gray.
    #[test]
    fn antialiased_downscale_averages_checkerboard() {
        let mut img = ImagePlane::filled(32, 32, [0, 0, 0]).unwrap();
        for y in 0..32 {
            for x in 0..32 {
                let v = if (x + y) % 2 == 0 { 255 } else { 0 };
                for c in 0..3 {
                    img.set(x, y, c, v);
                }
            }
        }
        let down = resample_bicubic(&img, 8, 8, true);
        for y in 0..8 {
            for x in 0..8 {
                let v = f64::from(down.at(x, y, 0));
                assert!(
                    (v - 127.5).abs() <= 16.0,
                    "checkerboard downscale at ({x},{y}) = {v}, expected near mid-gray"
                );
            }
        }
    }
}
