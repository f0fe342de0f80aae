//! PSNR and SSIM with the standard benchmark protocol: BT.601 luma
//! conversion, border shaving equal to the scale factor, peak 1.0 on [0,1]
//! planes.

use crate::data::ImagePlane;
use crate::error::{Error, Result};

/// Which channel representation metrics are computed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalChannel {
    /// Y of ITU-R BT.601: `Y = (16 + 65.481 R + 128.553 G + 24.966 B) / 255`
    /// on [0,1] inputs, giving Y in [16/255, 235/255].
    Luma601,
    /// PSNR over all three channels jointly; SSIM averaged per channel.
    RgbMean,
}

/// Evaluation protocol: channel representation plus the number of pixels
/// shaved from each border before computing metrics.
#[derive(Debug, Clone, Copy)]
pub struct EvalProtocol {
    pub channel: EvalChannel,
    pub shave: usize,
}

impl EvalProtocol {
    /// The benchmark default: luma channel, shave = scale factor.
    pub fn for_scale(scale: usize) -> Self {
        EvalProtocol {
            channel: EvalChannel::Luma601,
            shave: scale,
        }
    }

    /// Shave must leave a positive interior: `shave < min(W,H)/2`.
    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        if 2 * self.shave >= width.min(height) {
            return Err(Error::InvalidParameter(format!(
                "shave {} too large for {width}x{height} image",
                self.shave
            )));
        }
        Ok(())
    }
}

/// Single-channel f64 raster on [0,1], row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Plane {
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Plane {
        assert!(width >= 1 && height >= 1, "plane dims must be >= 1");
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Plane {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn at(&self, x: usize, y: usize) -> f64 {
        debug_assert!(x < self.width && y < self.height);
        self.data[y * self.width + x]
    }

    /// Remove `n` pixels from every border.
    pub fn shave(&self, n: usize) -> Result<Plane> {
        if 2 * n >= self.width.min(self.height) {
            return Err(Error::InvalidParameter(format!(
                "shave {n} too large for {}x{} plane",
                self.width, self.height
            )));
        }
        Ok(Plane::from_fn(
            self.width - 2 * n,
            self.height - 2 * n,
            |x, y| self.at(x + n, y + n),
        ))
    }
}

/// BT.601 luma plane of an 8-bit RGB image, values in [16/255, 235/255].
pub fn luma_601(img: &ImagePlane) -> Plane {
    Plane::from_fn(img.width(), img.height(), |x, y| {
        let r = f64::from(img.at(x, y, 0)) / 255.0;
        let g = f64::from(img.at(x, y, 1)) / 255.0;
        let b = f64::from(img.at(x, y, 2)) / 255.0;
        (16.0 + 65.481 * r + 128.553 * g + 24.966 * b) / 255.0
    })
}

/// The three [0,1] channel planes of an 8-bit RGB image.
pub fn rgb_planes(img: &ImagePlane) -> [Plane; 3] {
    [0, 1, 2].map(|c| {
        Plane::from_fn(img.width(), img.height(), |x, y| {
            f64::from(img.at(x, y, c)) / 255.0
        })
    })
}

fn check_same_shape(a: &Plane, b: &Plane) -> Result<()> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::shape_mismatch(
            "metric planes",
            &[a.height, a.width],
            &[b.height, b.width],
        ));
    }
    Ok(())
}

/// Mean squared error between equal-shaped planes.
pub fn mse(a: &Plane, b: &Plane) -> Result<f64> {
    check_same_shape(a, b)?;
    let n = a.data.len() as f64;
    let sum: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum();
    Ok(sum / n)
}

/// Peak signal-to-noise ratio in dB: `10 log10(peak^2 / MSE)`.
/// Identical inputs give the +infinity sentinel (formatted as "inf").
pub fn psnr(a: &Plane, b: &Plane, peak: f64) -> Result<f64> {
    if peak <= 0.0 {
        return Err(Error::InvalidParameter(format!("peak must be > 0, got {peak}")));
    }
    let e = mse(a, b)?;
    if e == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * ((peak * peak) / e).log10())
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;

/// Normalized 1D Gaussian window; the separable 2D window sums to 1.
fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in &mut w {
        *v /= sum;
    }
    w
}

/// Separable valid-region Gaussian filter of a `width x height` field.
/// Output is `(width - 10) x (height - 10)`.
fn gaussian_filter_valid(field: &[f64], width: usize, height: usize, win: &[f64]) -> Vec<f64> {
    let out_w = width - (SSIM_WINDOW - 1);
    let out_h = height - (SSIM_WINDOW - 1);
    let mut tmp = vec![0.0f64; height * out_w];
    for y in 0..height {
        for xo in 0..out_w {
            let mut acc = 0.0;
            for (k, &w) in win.iter().enumerate() {
                acc += w * field[y * width + xo + k];
            }
            tmp[y * out_w + xo] = acc;
        }
    }
    let mut out = vec![0.0f64; out_h * out_w];
    for yo in 0..out_h {
        for xo in 0..out_w {
            let mut acc = 0.0;
            for (k, &w) in win.iter().enumerate() {
                acc += w * tmp[(yo + k) * out_w + xo];
            }
            out[yo * out_w + xo] = acc;
        }
    }
    out
}

/// Structural similarity: mean over the SSIM map computed with
/// an 11x11 Gaussian window (sigma 1.5), `C1 = (0.01 peak)^2`,
/// `C2 = (0.03 peak)^2`, valid-region convolution. Every subexpression is
/// symmetric in (a, b), so `ssim(a,b) == ssim(b,a)` bit-identically.
pub fn ssim(a: &Plane, b: &Plane, peak: f64) -> Result<f64> {
    if peak <= 0.0 {
        return Err(Error::InvalidParameter(format!("peak must be > 0, got {peak}")));
    }
    check_same_shape(a, b)?;
    if a.width < SSIM_WINDOW || a.height < SSIM_WINDOW {
        return Err(Error::Data(format!(
            "image {}x{} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window",
            a.width, a.height
        )));
    }
    let c1 = (0.01 * peak) * (0.01 * peak);
    let c2 = (0.03 * peak) * (0.03 * peak);
    let win = gaussian_window();
    let (w, h) = (a.width, a.height);
    let mut aa = vec![0.0f64; w * h];
    let mut bb = vec![0.0f64; w * h];
    let mut ab = vec![0.0f64; w * h];
    for i in 0..w * h {
        aa[i] = a.data[i] * a.data[i];
        bb[i] = b.data[i] * b.data[i];
        ab[i] = a.data[i] * b.data[i];
    }
    let mu_a = gaussian_filter_valid(&a.data, w, h, &win);
    let mu_b = gaussian_filter_valid(&b.data, w, h, &win);
    let e_aa = gaussian_filter_valid(&aa, w, h, &win);
    let e_bb = gaussian_filter_valid(&bb, w, h, &win);
    let e_ab = gaussian_filter_valid(&ab, w, h, &win);
    let mut sum = 0.0f64;
    for i in 0..mu_a.len() {
        let (m1, m2) = (mu_a[i], mu_b[i]);
        let var1 = e_aa[i] - m1 * m1;
        let var2 = e_bb[i] - m2 * m2;
        let cov = e_ab[i] - m1 * m2;
        let num = (2.0 * (m1 * m2) + c1) * (2.0 * cov + c2);
        let den = (m1 * m1 + m2 * m2 + c1) * (var1 + var2 + c2);
        sum += num / den;
    }
    Ok(sum / mu_a.len() as f64)
}

/// PSNR and SSIM of one image pair.
#[derive(Debug, Clone, Copy)]
pub struct EvalResult {
    pub psnr_db: f64,
    pub ssim: f64,
}

/// Evaluate a candidate against a reference under the protocol: convert to
/// the protocol's channel planes, shave borders, then compute PSNR and SSIM
/// with peak 1.0.
pub fn evaluate_pair(
    candidate: &ImagePlane,
    reference: &ImagePlane,
    proto: &EvalProtocol,
) -> Result<EvalResult> {
    if candidate.width() != reference.width() || candidate.height() != reference.height() {
        return Err(Error::shape_mismatch(
            "evaluation images",
            &[candidate.height(), candidate.width()],
            &[reference.height(), reference.width()],
        ));
    }
    proto.validate(candidate.width(), candidate.height())?;
    match proto.channel {
        EvalChannel::Luma601 => {
            let a = luma_601(candidate).shave(proto.shave)?;
            let b = luma_601(reference).shave(proto.shave)?;
            Ok(EvalResult {
                psnr_db: psnr(&a, &b, 1.0)?,
                ssim: ssim(&a, &b, 1.0)?,
            })
        }
        EvalChannel::RgbMean => {
            let ap = rgb_planes(candidate);
            let bp = rgb_planes(reference);
            let mut mse_sum = 0.0;
            let mut ssim_sum = 0.0;
            for (a, b) in ap.iter().zip(&bp) {
                let (a, b) = (a.shave(proto.shave)?, b.shave(proto.shave)?);
                mse_sum += mse(&a, &b)?;
                ssim_sum += ssim(&a, &b, 1.0)?;
            }
            let m = mse_sum / 3.0;
            let psnr_db = if m == 0.0 {
                f64::INFINITY
            } else {
                10.0 * (1.0 / m).log10()
            };
            Ok(EvalResult {
                psnr_db,
                ssim: ssim_sum / 3.0,
            })
        }
    }
}
