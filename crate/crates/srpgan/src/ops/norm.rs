//! Instance normalization: per-sample, per-channel spatial standardization,
//! no learned affine term.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const INSTANCE_NORM_EPS: f64 = 1e-5;

/// Per-plane moments saved by the forward pass for backward.
#[derive(Clone, Debug)]
pub struct InstanceNormMoments {
    /// Spatial mean per (n, c) plane.
    pub mean: Vec<f64>,
    /// 1 / sqrt(biased_variance + eps) per (n, c) plane.
    pub inv_std: Vec<f64>,
    pub eps: f64,
}

fn check_input<E: Scalar>(x: &Tensor<E>, eps: f64) -> Result<(usize, usize, usize, usize)> {
    if eps <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "instance_norm eps must be > 0, got {eps}"
        )));
    }
    if x.rank() != 4 {
        return Err(Error::InvalidParameter(format!(
            "instance_norm requires rank-4 input, got rank {}",
            x.rank()
        )));
    }
    Ok(x.dims4())
}

/// y = (x - mean) / sqrt(var + eps), mean/var taken over H*W per (n, c),
/// variance biased (divide by H*W). Moments accumulate in f64.
pub fn instance_norm_fwd<E: Scalar>(
    x: &Tensor<E>,
    eps: f64,
) -> Result<(Tensor<E>, InstanceNormMoments)> {
    let (n, c, h, w) = check_input(x, eps)?;
    let plane = h * w;
    let mut out = Tensor::zeros(&[n, c, h, w])?;
    let mut mean = vec![0.0f64; n * c];
    let mut inv_std = vec![0.0f64; n * c];

    let xdat = x.data();
    out.data_mut()
        .par_chunks_mut(plane)
        .zip(mean.par_iter_mut())
        .zip(inv_std.par_iter_mut())
        .enumerate()
        .for_each(|(nc, ((oplane, m), is))| {
            let xp = &xdat[nc * plane..(nc + 1) * plane];
            let mut sum = 0.0f64;
            let mut sumsq = 0.0f64;
            for v in xp {
                let f = v.into_f64();
                sum += f;
                sumsq += f * f;
            }
            let mu = sum / plane as f64;
            let var = (sumsq / plane as f64 - mu * mu).max(0.0);
            let s = 1.0 / (var + eps).sqrt();
            *m = mu;
            *is = s;
            for (o, v) in oplane.iter_mut().zip(xp) {
                *o = E::from_f64((v.into_f64() - mu) * s);
            }
        });

    Ok((
        out,
        InstanceNormMoments {
            mean,
            inv_std,
            eps,
        },
    ))
}

/// Forward without keeping moments.
pub fn instance_norm<E: Scalar>(x: &Tensor<E>, eps: f64) -> Result<Tensor<E>> {
    Ok(instance_norm_fwd(x, eps)?.0)
}

/// Backward through the standardization, mean and variance all together:
/// with y = (x - mu)*s and g the upstream gradient,
/// dL/dx_i = s * (g_i - mean(g) - y_i * mean(g .* y)) per plane.
pub fn instance_norm_backward<E: Scalar>(
    x: &Tensor<E>,
    moments: &InstanceNormMoments,
    grad_out: &Tensor<E>,
) -> Result<Tensor<E>> {
    let (n, c, h, w) = check_input(x, moments.eps)?;
    if grad_out.dims() != x.dims() {
        return Err(Error::shape_mismatch(
            "instance_norm grad_out",
            grad_out.dims(),
            x.dims(),
        ));
    }
    if moments.mean.len() != n * c {
        return Err(Error::InvalidParameter(format!(
            "instance_norm moments cover {} planes, input has {}",
            moments.mean.len(),
            n * c
        )));
    }
    let plane = h * w;
    let mut gx = Tensor::zeros(&[n, c, h, w])?;
    let xdat = x.data();
    let gdat = grad_out.data();

    gx.data_mut()
        .par_chunks_mut(plane)
        .enumerate()
        .for_each(|(nc, gxplane)| {
            let xp = &xdat[nc * plane..(nc + 1) * plane];
            let gp = &gdat[nc * plane..(nc + 1) * plane];
            let mu = moments.mean[nc];
            let s = moments.inv_std[nc];
            let mut gsum = 0.0f64;
            let mut gysum = 0.0f64;
            for (xv, gv) in xp.iter().zip(gp) {
                let y = (xv.into_f64() - mu) * s;
                let g = gv.into_f64();
                gsum += g;
                gysum += g * y;
            }
            let gmean = gsum / plane as f64;
            let gymean = gysum / plane as f64;
            for ((gx, xv), gv) in gxplane.iter_mut().zip(xp).zip(gp) {
                let y = (xv.into_f64() - mu) * s;
                *gx = E::from_f64(s * (gv.into_f64() - gmean - y * gymean));
            }
        });

    Ok(gx)
}
