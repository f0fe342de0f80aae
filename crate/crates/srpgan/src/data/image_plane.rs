//! `ImagePlane`: an 8-bit RGB image in interleaved row-major layout, plus the
//! conversions between images and `[N,3,H,W]` tensors in `[0,1]`.

use std::path::Path;

use crate::data::quantize_u8;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// 8-bit RGB image, interleaved row-major (`data[3 * (y * width + x) + c]`).
///
/// All pipeline stages (resampling, patching, augmentation) operate on this
/// type; tensors enter the picture only at the model boundary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImagePlane {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl ImagePlane {
    /// Build from raw interleaved RGB samples (`len == 3 * width * height`).
    pub fn from_raw(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Data(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if data.len() != 3 * width * height {
            return Err(Error::Data(format!(
                "raw buffer length {} does not match 3*{width}*{height}",
                data.len()
            )));
        }
        Ok(ImagePlane {
            width,
            height,
            data,
        })
    }

    /// Solid-color image.
    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self> {
        let mut data = Vec::with_capacity(3 * width * height);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Self::from_raw(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    /// Sample at (x, y), channel c in {0:R, 1:G, 2:B}.
    pub fn at(&self, x: usize, y: usize, c: usize) -> u8 {
        debug_assert!(x < self.width && y < self.height && c < 3);
        self.data[3 * (y * self.width + x) + c]
    }

    pub fn set(&mut self, x: usize, y: usize, c: usize, v: u8) {
        debug_assert!(x < self.width && y < self.height && c < 3);
        self.data[3 * (y * self.width + x) + c] = v;
    }

    /// Decode an image file (PNG, JPEG, or BMP). Any alpha channel is
    /// dropped; grayscale inputs are expanded to three identical channels.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let rgb = image::open(path.as_ref())?.to_rgb8();
        let (w, h) = (rgb.width() as usize, rgb.height() as usize);
        Self::from_raw(w, h, rgb.into_raw())
    }

    /// Encode as PNG (8-bit RGB) regardless of the path's extension.
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let buf: image::RgbImage =
            image::ImageBuffer::from_raw(self.width as u32, self.height as u32, self.data.clone())
                .expect("buffer length is validated at construction");
        buf.save_with_format(path.as_ref(), image::ImageFormat::Png)?;
        Ok(())
    }

    /// Copy out the `w` x `h` rectangle whose top-left corner is (x0, y0).
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self> {
        if w == 0 || h == 0 || x0 + w > self.width || y0 + h > self.height {
            return Err(Error::Data(format!(
                "crop {w}x{h}+{x0}+{y0} exceeds image {}x{}",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(3 * w * h);
        for y in y0..y0 + h {
            let row = 3 * (y * self.width + x0);
            data.extend_from_slice(&self.data[row..row + 3 * w]);
        }
        Self::from_raw(w, h, data)
    }

    /// Grow to `new_w` x `new_h` by replicating the right and bottom edges
    /// (used to reach size divisibility for inference; the padding is
    /// cropped away afterwards).
    pub fn pad_replicate(&self, new_w: usize, new_h: usize) -> Result<Self> {
        if new_w < self.width || new_h < self.height {
            return Err(Error::Data(format!(
                "pad target {new_w}x{new_h} smaller than image {}x{}",
                self.width, self.height
            )));
        }
        let mut out = ImagePlane::filled(new_w, new_h, [0, 0, 0])?;
        for y in 0..new_h {
            let sy = y.min(self.height - 1);
            for x in 0..new_w {
                let sx = x.min(self.width - 1);
                for c in 0..3 {
                    out.set(x, y, c, self.at(sx, sy, c));
                }
            }
        }
        Ok(out)
    }

    /// Convert to a `[1,3,H,W]` tensor with samples divided by 255.
    pub fn to_tensor<E: Scalar>(&self) -> Tensor<E> {
        batch_to_tensor(std::slice::from_ref(self))
    }

    /// Quantize batch element `n` of a `[N,3,H,W]` tensor back to 8-bit RGB:
    /// samples are scaled by 255, rounded half-up, and clamped to [0,255].
    pub fn from_tensor<E: Scalar>(t: &Tensor<E>, n: usize) -> Result<Self> {
        let (nn, c, h, w) = t.dims4();
        if c != 3 {
            return Err(Error::Data(format!(
                "expected a 3-channel tensor, got {c} channels"
            )));
        }
        if n >= nn {
            return Err(Error::Data(format!(
                "batch index {n} out of range for batch of {nn}"
            )));
        }
        let mut data = vec![0u8; 3 * w * h];
        for ch in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    let v = t.at(n, ch, y, x).into_f64() * 255.0;
                    data[3 * (y * w + x) + ch] = quantize_u8(v);
                }
            }
        }
        Self::from_raw(w, h, data)
    }
}

/// Stack equally sized images into a `[N,3,H,W]` tensor scaled to `[0,1]`.
///
/// Panics if `planes` is empty or the images disagree in size; callers
/// validate batch composition before converting.
pub fn batch_to_tensor<E: Scalar>(planes: &[ImagePlane]) -> Tensor<E> {
    assert!(!planes.is_empty(), "cannot build a tensor from zero images");
    let (w, h) = (planes[0].width, planes[0].height);
    let n = planes.len();
    let mut t = Tensor::zeros(&[n, 3, h, w]).expect("positive dims");
    for (i, p) in planes.iter().enumerate() {
        assert!(
            p.width == w && p.height == h,
            "batch images must share dimensions"
        );
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    *t.at_mut(i, c, y, x) = E::from_f64(f64::from(p.at(x, y, c)) / 255.0);
                }
            }
        }
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    fn checkered(w: usize, h: usize) -> ImagePlane {
        let mut img = ImagePlane::filled(w, h, [0, 0, 0]).unwrap();
        for y in 0..h {
            for x in 0..w {
                let v = (((x + y) % 2) * 255) as u8;
                img.set(x, y, 0, v);
                img.set(x, y, 1, v / 2);
                img.set(x, y, 2, 255 - v);
            }
        }
        img
    }

    /// Round trip plane -> tensor -> plane is bit-exact: division by 255
    /// followed by scale-and-round recovers every 8-bit level.
    #[test]
    fn tensor_round_trip_is_exact() {
        let img = checkered(7, 5);
        let t = img.to_tensor::<f32>();
        assert_eq!(t.dims(), &[1, 3, 5, 7]);
        let back = ImagePlane::from_tensor(&t, 0).unwrap();
        assert_eq!(img, back);
    }

    /// Tensor values lie in [0,1] and index as (channel, row, column).
    #[test]
    fn tensor_layout_and_range() {
        let mut img = ImagePlane::filled(4, 3, [10, 20, 30]).unwrap();
        img.set(2, 1, 0, 255);
        let t = img.to_tensor::<f64>();
        for &v in t.data() {
            assert!((0.0..=1.0).contains(&v));
        }
        assert_eq!(t.at(0, 0, 1, 2), 1.0);
        assert_eq!(t.at(0, 1, 1, 2), 20.0 / 255.0);
        assert_eq!(t.at(0, 2, 0, 0), 30.0 / 255.0);
    }

    /// from_tensor clamps out-of-range samples instead of wrapping.
    #[test]
    fn from_tensor_clamps() {
        let t =
            Tensor::<f32>::from_vec(&[1, 3, 1, 2], vec![-0.5, 1.5, 0.5, 0.998, 1.0, 0.25]).unwrap();
        let img = ImagePlane::from_tensor(&t, 0).unwrap();
        assert_eq!(img.at(0, 0, 0), 0); // clamped below
        assert_eq!(img.at(1, 0, 0), 255); // clamped above
        assert_eq!(img.at(0, 0, 1), 128); // 0.5 * 255 = 127.5 rounds half up
        assert_eq!(img.at(1, 0, 1), 254); // 0.998 * 255 = 254.49 rounds down
        assert_eq!(img.at(0, 0, 2), 255);
        assert_eq!(img.at(1, 0, 2), 64); // 0.25 * 255 = 63.75
    }

    /// PNG save/load round trip preserves every sample.
    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.png");
        let img = checkered(9, 6);
        img.save_png(&path).unwrap();
        let back = ImagePlane::load(&path).unwrap();
        assert_eq!(img, back);
    }

    /// Alpha channels are stripped on load.
    #[test]
    fn load_strips_alpha() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rgba.png");
        let rgba = image::RgbaImage::from_fn(3, 2, |x, y| {
            image::Rgba([x as u8 * 10, y as u8 * 20, 7, 128])
        });
        rgba.save_with_format(&path, image::ImageFormat::Png).unwrap();
        let img = ImagePlane::load(&path).unwrap();
        assert_eq!((img.width(), img.height()), (3, 2));
        assert_eq!(img.at(2, 1, 0), 20);
        assert_eq!(img.at(2, 1, 1), 20);
        assert_eq!(img.at(2, 1, 2), 7);
    }

    /// Replicate padding copies the interior verbatim and extends the last
    /// row/column; cropping back recovers the original.
    #[test]
    fn pad_replicate_extends_edges() {
        let img = checkered(5, 4);
        let p = img.pad_replicate(8, 6).unwrap();
        assert_eq!((p.width(), p.height()), (8, 6));
        assert_eq!(p.crop(0, 0, 5, 4).unwrap(), img);
        for x in 5..8 {
            for c in 0..3 {
                assert_eq!(p.at(x, 1, c), img.at(4, 1, c));
            }
        }
        for y in 4..6 {
            for c in 0..3 {
                assert_eq!(p.at(7, y, c), img.at(4, 3, c));
            }
        }
        assert!(img.pad_replicate(3, 10).is_err());
        assert_eq!(img.pad_replicate(5, 4).unwrap(), img);
    }

    #[test]
    fn crop_extracts_rectangle() {
        let img = checkered(8, 8);
        let c = img.crop(2, 3, 4, 2).unwrap();
        assert_eq!((c.width(), c.height()), (4, 2));
        for y in 0..2 {
            for x in 0..4 {
                for ch in 0..3 {
                    assert_eq!(c.at(x, y, ch), img.at(x + 2, y + 3, ch));
                }
            }
        }
        assert!(img.crop(6, 0, 4, 4).is_err());
        assert!(img.crop(0, 0, 0, 4).is_err());
    }
}
