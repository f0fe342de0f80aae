//! Convolution and transposed convolution, forward and backward.
//!
//! Layout: activations (N, C, H, W); conv weights (C_out, C_in, k, k);
//! transposed-conv weights (C_in, C_out, k, k). Both ops zero-pad.
//!
//! The production configurations are pinned by the layer specs (conv: 3x3,
//! pad 1, stride 1 or 2; tconv: 4x4, stride 2, pad 1 — output exactly 2x the
//! input extent). The `*_raw` entry points accept a general kernel size so
//! the adjoint identity between the two ops can be checked directly: a
//! transposed conv is the exact adjoint of a 4x4/s2/p1 conv sharing its
//! weight array.
//!
//! The transposed conv is computed in gather form (each output element sums
//! its contributors) rather than scatter form, so parallel workers never
//! write the same element and results are bit-deterministic for any thread
//! count.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ops::Wants;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const CONV_KERNEL: usize = 3;
pub const CONV_PADDING: usize = 1;
pub const TCONV_KERNEL: usize = 4;
pub const TCONV_STRIDE: usize = 2;
pub const TCONV_PADDING: usize = 1;

/// 3x3 convolution spec: padding 1; stride 1 or 2.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: usize,
}

impl Conv2dSpec {
    pub fn validate(&self) -> Result<()> {
        if self.stride != 1 && self.stride != 2 {
            return Err(Error::InvalidParameter(format!(
                "conv2d stride must be 1 or 2, got {}",
                self.stride
            )));
        }
        Ok(())
    }
}

/// 4x4 transposed convolution spec: stride 2, padding 1 (all fixed).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TConv2dSpec;

pub struct ConvGrads<E> {
    pub input: Option<Tensor<E>>,
    pub weight: Option<Tensor<E>>,
    pub bias: Option<Tensor<E>>,
}

fn expect_rank4<E: Scalar>(t: &Tensor<E>, what: &str) -> Result<(usize, usize, usize, usize)> {
    if t.rank() != 4 {
        return Err(Error::InvalidParameter(format!(
            "{what} must be rank 4, got rank {}",
            t.rank()
        )));
    }
    Ok(t.dims4())
}

/// Zero-padded copy of an NCHW tensor (`pad` on each spatial side).
fn pad_nchw<E: Scalar>(x: &Tensor<E>, pad: usize) -> Tensor<E> {
    let (n, c, h, w) = x.dims4();
    let (hp, wp) = (h + 2 * pad, w + 2 * pad);
    let mut out = Tensor::zeros(&[n, c, hp, wp]).expect("padded shape");
    let src = x.data();
    let dst = out.data_mut();
    for nc in 0..n * c {
        for i in 0..h {
            let s = nc * h * w + i * w;
            let d = nc * hp * wp + (i + pad) * wp + pad;
            dst[d..d + w].copy_from_slice(&src[s..s + w]);
        }
    }
    out
}

/// Inverse of `pad_nchw`: drop a `pad`-wide border.
fn unpad_nchw<E: Scalar>(xp: &Tensor<E>, pad: usize) -> Tensor<E> {
    let (n, c, hp, wp) = xp.dims4();
    let (h, w) = (hp - 2 * pad, wp - 2 * pad);
    let mut out = Tensor::zeros(&[n, c, h, w]).expect("unpadded shape");
    let src = xp.data();
    let dst = out.data_mut();
    for nc in 0..n * c {
        for i in 0..h {
            let s = nc * hp * wp + (i + pad) * wp + pad;
            let d = nc * h * w + i * w;
            dst[d..d + w].copy_from_slice(&src[s..s + w]);
        }
    }
    out
}

fn check_conv_args<E: Scalar>(
    x: &Tensor<E>,
    weight: &Tensor<E>,
    bias: Option<&Tensor<E>>,
    k: usize,
    stride: usize,
    pad: usize,
) -> Result<(usize, usize, usize, usize, usize, usize, usize)> {
    let (n, c, h, w) = expect_rank4(x, "conv input")?;
    let (co, ci, kh, kw) = expect_rank4(weight, "conv weight")?;
    if ci != c || kh != k || kw != k {
        return Err(Error::shape_mismatch(
            format!("conv2d weight (out, in, {k}, {k}) vs input channels"),
            weight.dims(),
            x.dims(),
        ));
    }
    if let Some(b) = bias {
        if b.dims() != [co] {
            return Err(Error::shape_mismatch("conv2d bias", b.dims(), &[co]));
        }
    }
    let span = h + 2 * pad;
    if span < k || (w + 2 * pad) < k {
        return Err(Error::InvalidParameter(format!(
            "conv2d input {h}x{w} too small for kernel {k} with padding {pad}"
        )));
    }
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (w + 2 * pad - k) / stride + 1;
    Ok((n, c, h, w, co, ho, wo))
}

/// General correlation: out[n,o,i,j] = bias[o] + sum_{c,u,v} w[o,c,u,v] *
/// x_pad[n,c,i*s+u, j*s+v].
pub fn conv2d_raw<E: Scalar>(
    x: &Tensor<E>,
    weight: &Tensor<E>,
    bias: Option<&Tensor<E>>,
    k: usize,
    stride: usize,
    pad: usize,
) -> Result<Tensor<E>> {
    let (n, c, _h, _w, co, ho, wo) = check_conv_args(x, weight, bias, k, stride, pad)?;
    let xp = pad_nchw(x, pad);
    let (_, _, _hp, wp) = xp.dims4();
    let xp_plane = xp.dims4().2 * wp;
    let mut out = Tensor::zeros(&[n, co, ho, wo])?;
    let wdat = weight.data();
    let xdat = xp.data();

    out.data_mut()
        .par_chunks_mut(ho * wo)
        .enumerate()
        .for_each(|(idx, oplane)| {
            let (ni, o) = (idx / co, idx % co);
            if let Some(b) = bias {
                oplane.fill(b.data()[o]);
            }
            for ci in 0..c {
                let xplane = &xdat[(ni * c + ci) * xp_plane..(ni * c + ci + 1) * xp_plane];
                let wbase = (o * c + ci) * k * k;
                for u in 0..k {
                    for v in 0..k {
                        let wv = wdat[wbase + u * k + v];
                        for i in 0..ho {
                            let xrow = &xplane[(i * stride + u) * wp..(i * stride + u + 1) * wp];
                            let orow = &mut oplane[i * wo..(i + 1) * wo];
                            if stride == 1 {
                                for (ov, &xv) in orow.iter_mut().zip(&xrow[v..v + wo]) {
                                    *ov = *ov + wv * xv;
                                }
                            } else {
                                for (ov, &xv) in
                                    orow.iter_mut().zip(xrow[v..].iter().step_by(stride))
                                {
                                    *ov = *ov + wv * xv;
                                }
                            }
                        }
                    }
                }
            }
        });
    Ok(out)
}

/// Gradients of `conv2d_raw` for the requested operands.
pub fn conv2d_raw_backward<E: Scalar>(
    x: &Tensor<E>,
    weight: &Tensor<E>,
    grad_out: &Tensor<E>,
    k: usize,
    stride: usize,
    pad: usize,
    wants: Wants,
) -> Result<ConvGrads<E>> {
    let (n, c, h, w, co, ho, wo) = check_conv_args(x, weight, None, k, stride, pad)?;
    if grad_out.dims() != [n, co, ho, wo] {
        return Err(Error::shape_mismatch(
            "conv2d grad_out",
            grad_out.dims(),
            &[n, co, ho, wo],
        ));
    }
    let gdat = grad_out.data();
    let wdat = weight.data();
    let gplane = ho * wo;

    let grad_bias = if wants.params {
        let mut gb = Tensor::zeros(&[co])?;
        gb.data_mut()
            .par_iter_mut()
            .enumerate()
            .for_each(|(o, gbo)| {
                let mut acc = E::zero();
                for ni in 0..n {
                    for gv in &gdat[(ni * co + o) * gplane..(ni * co + o + 1) * gplane] {
                        acc = acc + *gv;
                    }
                }
                *gbo = acc;
            });
        Some(gb)
    } else {
        None
    };

    let (grad_weight, grad_input);
    let xp = pad_nchw(x, pad);
    let (_, _, hp, wp) = xp.dims4();
    let xp_plane = hp * wp;
    let xdat = xp.data();

    grad_weight = if wants.params {
        // gw[o,c,u,v] = sum_{n,i,j} g[n,o,i,j] * xp[n,c,i*s+u,j*s+v]
        let mut gw = Tensor::zeros(weight.dims())?;
        gw.data_mut()
            .par_chunks_mut(c * k * k)
            .enumerate()
            .for_each(|(o, gwo)| {
                for ni in 0..n {
                    let gp = &gdat[(ni * co + o) * gplane..(ni * co + o + 1) * gplane];
                    for ci in 0..c {
                        let xplane = &xdat[(ni * c + ci) * xp_plane..(ni * c + ci + 1) * xp_plane];
                        for u in 0..k {
                            for v in 0..k {
                                let mut acc = E::zero();
                                for i in 0..ho {
                                    let xrow = &xplane
                                        [(i * stride + u) * wp..(i * stride + u + 1) * wp];
                                    let grow = &gp[i * wo..(i + 1) * wo];
                                    if stride == 1 {
                                        for (&gv, &xv) in grow.iter().zip(&xrow[v..v + wo]) {
                                            acc = acc + gv * xv;
                                        }
                                    } else {
                                        for (&gv, &xv) in
                                            grow.iter().zip(xrow[v..].iter().step_by(stride))
                                        {
                                            acc = acc + gv * xv;
                                        }
                                    }
                                }
                                gwo[ci * k * k + u * k + v] = gwo[ci * k * k + u * k + v] + acc;
                            }
                        }
                    }
                }
            });
        Some(gw)
    } else {
        None
    };

    grad_input = if wants.input {
        // gxp[n,c,i*s+u,j*s+v] += w[o,c,u,v] * g[n,o,i,j], then crop padding.
        let mut gxp = Tensor::zeros(&[n, c, hp, wp])?;
        gxp.data_mut()
            .par_chunks_mut(xp_plane)
            .enumerate()
            .for_each(|(idx, gxplane)| {
                let (ni, ci) = (idx / c, idx % c);
                for o in 0..co {
                    let gp = &gdat[(ni * co + o) * gplane..(ni * co + o + 1) * gplane];
                    let wbase = (o * c + ci) * k * k;
                    for u in 0..k {
                        for v in 0..k {
                            let wv = wdat[wbase + u * k + v];
                            for i in 0..ho {
                                let grow = &gp[i * wo..(i + 1) * wo];
                                let gxrow = &mut gxplane
                                    [(i * stride + u) * wp..(i * stride + u + 1) * wp];
                                if stride == 1 {
                                    for (gx, &gv) in gxrow[v..v + wo].iter_mut().zip(grow) {
                                        *gx = *gx + wv * gv;
                                    }
                                } else {
                                    for (gx, &gv) in
                                        gxrow[v..].iter_mut().step_by(stride).zip(grow)
                                    {
                                        *gx = *gx + wv * gv;
                                    }
                                }
                            }
                        }
                    }
                }
            });
        Some(unpad_nchw(&gxp, pad))
    } else {
        None
    };

    let _ = (h, w);
    Ok(ConvGrads {
        input: grad_input,
        weight: grad_weight,
        bias: grad_bias,
    })
}

/// 3x3 convolution, padding 1, stride per spec. Output (H + 2 - 3)/s + 1.
pub fn conv2d<E: Scalar>(
    x: &Tensor<E>,
    weight: &Tensor<E>,
    bias: &Tensor<E>,
    spec: Conv2dSpec,
) -> Result<Tensor<E>> {
    spec.validate()?;
    conv2d_raw(x, weight, Some(bias), CONV_KERNEL, spec.stride, CONV_PADDING)
}

pub fn conv2d_backward<E: Scalar>(
    x: &Tensor<E>,
    weight: &Tensor<E>,
    spec: Conv2dSpec,
    grad_out: &Tensor<E>,
    wants: Wants,
) -> Result<ConvGrads<E>> {
    spec.validate()?;
    conv2d_raw_backward(x, weight, grad_out, CONV_KERNEL, spec.stride, CONV_PADDING, wants)
}

fn check_tconv_args<E: Scalar>(
    x: &Tensor<E>,
    weight: &Tensor<E>,
    bias: Option<&Tensor<E>>,
) -> Result<(usize, usize, usize, usize, usize)> {
    let (n, c, h, w) = expect_rank4(x, "tconv input")?;
    let (ci, co, kh, kw) = expect_rank4(weight, "tconv weight")?;
    if ci != c || kh != TCONV_KERNEL || kw != TCONV_KERNEL {
        return Err(Error::shape_mismatch(
            "conv2d_transpose weight (in, out, 4, 4) vs input channels",
            weight.dims(),
            x.dims(),
        ));
    }
    if let Some(b) = bias {
        if b.dims() != [co] {
            return Err(Error::shape_mismatch("conv2d_transpose bias", b.dims(), &[co]));
        }
    }
    let _ = w;
    let _ = h;
    Ok((n, c, h, w, co))
}

/// Transposed convolution, 4x4 kernel, stride 2, padding 1: output is exactly
/// (2H, 2W). Gather form: out[n,o,p,q] sums x[n,c,i,j]*w[c,o,u,v] over the
/// (u,i) with 2i+u = p+1 and (v,j) with 2j+v = q+1 (at most two of each).
pub fn conv2d_transpose<E: Scalar>(
    x: &Tensor<E>,
    weight: &Tensor<E>,
    bias: &Tensor<E>,
    _spec: TConv2dSpec,
) -> Result<Tensor<E>> {
    let (n, c, h, w, co) = check_tconv_args(x, weight, Some(bias))?;
    let (ho, wo) = (2 * h, 2 * w);
    let k = TCONV_KERNEL;
    let s = TCONV_STRIDE;
    let pad = TCONV_PADDING;
    let mut out = Tensor::zeros(&[n, co, ho, wo])?;
    let xdat = x.data();
    let wdat = weight.data();
    let xplane_len = h * w;

    out.data_mut()
        .par_chunks_mut(ho * wo)
        .enumerate()
        .for_each(|(idx, oplane)| {
            let (ni, o) = (idx / co, idx % co);
            oplane.fill(bias.data()[o]);
            for ci in 0..c {
                let xplane = &xdat[(ni * c + ci) * xplane_len..(ni * c + ci + 1) * xplane_len];
                let wbase = (ci * co + o) * k * k;
                for u in 0..k {
                    for v in 0..k {
                        let wv = wdat[wbase + u * k + v];
                        // Output rows receiving (u, i): p = i*s + u - pad.
                        for i in 0..h {
                            let p = (i * s + u) as isize - pad as isize;
                            if p < 0 || p >= ho as isize {
                                continue;
                            }
                            let orow = &mut oplane[p as usize * wo..(p as usize + 1) * wo];
                            let xrow = &xplane[i * w..(i + 1) * w];
                            // Columns: q = j*s + v - pad.
                            let (j0, q0) = if v >= pad { (0, v - pad) } else { (1, v + s - pad) };
                            if j0 >= w || q0 >= wo {
                                continue;
                            }
                            for (ov, &xv) in
                                orow[q0..].iter_mut().step_by(s).zip(xrow[j0..].iter())
                            {
                                *ov = *ov + wv * xv;
                            }
                        }
                    }
                }
            }
        });
    Ok(out)
}

pub fn conv2d_transpose_backward<E: Scalar>(
    x: &Tensor<E>,
    weight: &Tensor<E>,
    grad_out: &Tensor<E>,
    _spec: TConv2dSpec,
    wants: Wants,
) -> Result<ConvGrads<E>> {
    let (n, c, h, w, co) = check_tconv_args(x, weight, None)?;
    let (ho, wo) = (2 * h, 2 * w);
    if grad_out.dims() != [n, co, ho, wo] {
        return Err(Error::shape_mismatch(
            "conv2d_transpose grad_out",
            grad_out.dims(),
            &[n, co, ho, wo],
        ));
    }
    let k = TCONV_KERNEL;
    let s = TCONV_STRIDE;
    let pad = TCONV_PADDING;
    let gplane = ho * wo;
    let gdat = grad_out.data();
    let wdat = weight.data();

    let grad_bias = if wants.params {
        let mut gb = Tensor::zeros(&[co])?;
        gb.data_mut()
            .par_iter_mut()
            .enumerate()
            .for_each(|(o, gbo)| {
                let mut acc = E::zero();
                for ni in 0..n {
                    for gv in &gdat[(ni * co + o) * gplane..(ni * co + o + 1) * gplane] {
                        acc = acc + *gv;
                    }
                }
                *gbo = acc;
            });
        Some(gb)
    } else {
        None
    };

    // Both remaining grads read the upstream gradient padded back to "full"
    // coordinates: gp[p+pad][q+pad] = g[p][q], i.e. zero-pad by `pad`.
    let gp = pad_nchw(grad_out, pad);
    let (_, _, hgp, wgp) = gp.dims4();
    let gp_plane = hgp * wgp;
    let gpdat = gp.data();
    let xdat = x.data();
    let xplane_len = h * w;

    // gx[n,c,i,j] = sum_{o,u,v} w[c,o,u,v] * gp[n,o,i*s+u,j*s+v]  (a plain
    // stride-2 correlation of the upstream gradient with the same weight).
    let grad_input = if wants.input {
        let mut gx = Tensor::zeros(&[n, c, h, w])?;
        gx.data_mut()
            .par_chunks_mut(xplane_len)
            .enumerate()
            .for_each(|(idx, gxplane)| {
                let (ni, ci) = (idx / c, idx % c);
                for o in 0..co {
                    let gpl = &gpdat[(ni * co + o) * gp_plane..(ni * co + o + 1) * gp_plane];
                    let wbase = (ci * co + o) * k * k;
                    for u in 0..k {
                        for v in 0..k {
                            let wv = wdat[wbase + u * k + v];
                            for i in 0..h {
                                let grow = &gpl[(i * s + u) * wgp..(i * s + u + 1) * wgp];
                                let gxrow = &mut gxplane[i * w..(i + 1) * w];
                                for (gx, &gv) in
                                    gxrow.iter_mut().zip(grow[v..].iter().step_by(s))
                                {
                                    *gx = *gx + wv * gv;
                                }
                            }
                        }
                    }
                }
            });
        Some(gx)
    } else {
        None
    };

    // gw[c,o,u,v] = sum_{n,i,j} x[n,c,i,j] * gp[n,o,i*s+u,j*s+v]
    let grad_weight = if wants.params {
        let mut gw = Tensor::zeros(weight.dims())?;
        gw.data_mut()
            .par_chunks_mut(co * k * k)
            .enumerate()
            .for_each(|(ci, gwc)| {
                for ni in 0..n {
                    let xplane = &xdat[(ni * c + ci) * xplane_len..(ni * c + ci + 1) * xplane_len];
                    for o in 0..co {
                        let gpl = &gpdat[(ni * co + o) * gp_plane..(ni * co + o + 1) * gp_plane];
                        for u in 0..k {
                            for v in 0..k {
                                let mut acc = E::zero();
                                for i in 0..h {
                                    let xrow = &xplane[i * w..(i + 1) * w];
                                    let grow = &gpl[(i * s + u) * wgp..(i * s + u + 1) * wgp];
                                    for (&xv, &gv) in
                                        xrow.iter().zip(grow[v..].iter().step_by(s))
                                    {
                                        acc = acc + xv * gv;
                                    }
                                }
                                gwc[o * k * k + u * k + v] = gwc[o * k * k + u * k + v] + acc;
                            }
                        }
                    }
                }
            });
        Some(gw)
    } else {
        None
    };

    Ok(ConvGrads {
        input: grad_input,
        weight: grad_weight,
        bias: grad_bias,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{dot, rng_uniform, RngStream};

    /// Direct six-loop correlation with explicit bounds checks standing in
    /// for zero padding; shares no code with the production kernel.
    fn conv_oracle(
        x: &Tensor<f64>,
        w: &Tensor<f64>,
        b: Option<&Tensor<f64>>,
        k: usize,
        s: usize,
        pad: usize,
    ) -> Tensor<f64> {
        let (n, c, h, ww) = x.dims4();
        let (co, _, _, _) = w.dims4();
        let ho = (h + 2 * pad - k) / s + 1;
        let wo = (ww + 2 * pad - k) / s + 1;
        let mut out = Tensor::<f64>::zeros(&[n, co, ho, wo]).unwrap();
        for ni in 0..n {
            for o in 0..co {
                for i in 0..ho {
                    for j in 0..wo {
                        let mut acc = b.map_or(0.0, |b| b.data()[o]);
                        for ci in 0..c {
                            for u in 0..k {
                                for v in 0..k {
                                    let r = (i * s + u) as isize - pad as isize;
                                    let q = (j * s + v) as isize - pad as isize;
                                    if r >= 0 && (r as usize) < h && q >= 0 && (q as usize) < ww {
                                        acc += x.at(ni, ci, r as usize, q as usize)
                                            * w.at(o, ci, u, v);
                                    }
                                }
                            }
                        }
                        *out.at_mut(ni, o, i, j) = acc;
                    }
                }
            }
        }
        out
    }

    /// Scatter-add form of the transposed conv: paint x[n,c,i,j] * kernel
    /// into a full canvas, then crop the padding ring.
    fn tconv_oracle(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
        let (n, c, h, ww) = x.dims4();
        let (_, co, _, _) = w.dims4();
        let (k, s, pad) = (TCONV_KERNEL, TCONV_STRIDE, TCONV_PADDING);
        let (hf, wf) = ((h - 1) * s + k, (ww - 1) * s + k);
        let mut full = Tensor::<f64>::zeros(&[n, co, hf, wf]).unwrap();
        for ni in 0..n {
            for ci in 0..c {
                for o in 0..co {
                    for i in 0..h {
                        for j in 0..ww {
                            for u in 0..k {
                                for v in 0..k {
                                    *full.at_mut(ni, o, i * s + u, j * s + v) +=
                                        x.at(ni, ci, i, j) * w.at(ci, o, u, v);
                                }
                            }
                        }
                    }
                }
            }
        }
        let (ho, wo) = (hf - 2 * pad, wf - 2 * pad);
        let mut out = Tensor::<f64>::zeros(&[n, co, ho, wo]).unwrap();
        for ni in 0..n {
            for o in 0..co {
                for i in 0..ho {
                    for j in 0..wo {
                        *out.at_mut(ni, o, i, j) =
                            full.at(ni, o, i + pad, j + pad) + b.data()[o];
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_all_ones_stride2_matches_oracle_and_padding_truncation() {
        let x = Tensor::<f64>::filled(&[1, 1, 4, 4], 1.0).unwrap();
        let w = Tensor::<f64>::filled(&[1, 1, 3, 3], 1.0).unwrap();
        let b = Tensor::<f64>::zeros(&[1]).unwrap();
        let out = conv2d(&x, &w, &b, Conv2dSpec { stride: 2 }).unwrap();
        assert_eq!(out.dims(), &[1, 1, 2, 2]);
        // Corner windows lose the zero-padded ring; the oracle agrees.
        assert_eq!(out.data(), &[4.0, 6.0, 6.0, 9.0]);
        let oracle = conv_oracle(&x, &w, Some(&b), 3, 2, 1);
        assert_eq!(out.data(), oracle.data());
    }

    #[test]
    fn conv_identity_kernel_is_identity() {
        let mut s = RngStream::new(1);
        let x = rng_uniform::<f64>(&mut s, &[2, 3, 5, 5], -1.0, 1.0).unwrap();
        // Delta kernel: center 1 on the diagonal channel pairs.
        let mut w = Tensor::<f64>::zeros(&[3, 3, 3, 3]).unwrap();
        for c in 0..3 {
            *w.at_mut(c, c, 1, 1) = 1.0;
        }
        let b = Tensor::<f64>::zeros(&[3]).unwrap();
        let out = conv2d(&x, &w, &b, Conv2dSpec { stride: 1 }).unwrap();
        assert_eq!(out.dims(), x.dims());
        for (a, b) in out.data().iter().zip(x.data()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn conv_matches_oracle_on_random_cases() {
        for seed in 0..10u64 {
            let mut s = RngStream::new(seed);
            let stride = 1 + (seed % 2) as usize;
            let n = 1 + (seed % 2) as usize;
            let (h, w) = (3 + (seed % 4) as usize, 3 + (seed % 5) as usize);
            let x = rng_uniform::<f64>(&mut s, &[n, 3, h, w], -1.0, 1.0).unwrap();
            let wt = rng_uniform::<f64>(&mut s, &[4, 3, 3, 3], -1.0, 1.0).unwrap();
            let b = rng_uniform::<f64>(&mut s, &[4], -1.0, 1.0).unwrap();
            let got = conv2d(&x, &wt, &b, Conv2dSpec { stride }).unwrap();
            let want = conv_oracle(&x, &wt, Some(&b), 3, stride, 1);
            assert_eq!(got.dims(), want.dims());
            for (g, w) in got.data().iter().zip(want.data()) {
                assert!((g - w).abs() < 1e-12, "seed {seed}: {g} vs {w}");
            }
        }
    }

    #[test]
    fn conv_output_extent_follows_floor_rule() {
        let b = Tensor::<f64>::zeros(&[1]).unwrap();
        let w = Tensor::<f64>::zeros(&[1, 1, 3, 3]).unwrap();
        for (h, s, expect) in [(4, 2, 2), (5, 2, 3), (64, 2, 32), (64, 1, 64), (3, 2, 2)] {
            let x = Tensor::<f64>::zeros(&[1, 1, h, h]).unwrap();
            let out = conv2d(&x, &w, &b, Conv2dSpec { stride: s }).unwrap();
            assert_eq!(out.dims()[2], expect, "h={h} s={s}");
        }
    }

    #[test]
    fn conv_rejects_channel_mismatch_naming_both_shapes() {
        let x = Tensor::<f64>::zeros(&[1, 3, 4, 4]).unwrap();
        let w = Tensor::<f64>::zeros(&[2, 4, 3, 3]).unwrap();
        let b = Tensor::<f64>::zeros(&[2]).unwrap();
        let err = conv2d(&x, &w, &b, Conv2dSpec { stride: 1 }).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 4, 3, 3]") && msg.contains("[1, 3, 4, 4]"), "{msg}");
    }

    #[test]
    fn conv_rejects_bad_stride() {
        assert!(Conv2dSpec { stride: 3 }.validate().is_err());
        assert!(Conv2dSpec { stride: 0 }.validate().is_err());
    }

    #[test]
    fn tconv_unit_input_reads_kernel_center_window() {
        let x = Tensor::<f64>::filled(&[1, 1, 1, 1], 1.0).unwrap();
        let mut w = Tensor::<f64>::zeros(&[1, 1, 4, 4]).unwrap();
        for u in 0..4 {
            for v in 0..4 {
                *w.at_mut(0, 0, u, v) = (u * 4 + v) as f64;
            }
        }
        let b = Tensor::<f64>::zeros(&[1]).unwrap();
        let out = conv2d_transpose(&x, &w, &b, TConv2dSpec).unwrap();
        assert_eq!(out.dims(), &[1, 1, 2, 2]);
        // Cropping one ring of the 4x4 canvas leaves the center 2x2: rows
        // 1..3, cols 1..3 of the kernel.
        assert_eq!(
            out.data(),
            &[w.at(0, 0, 1, 1), w.at(0, 0, 1, 2), w.at(0, 0, 2, 1), w.at(0, 0, 2, 2)]
        );
    }

    #[test]
    fn tconv_matches_scatter_oracle_and_doubles_extent() {
        for seed in 0..10u64 {
            let mut s = RngStream::new(100 + seed);
            let n = 1 + (seed % 2) as usize;
            let (h, w) = (2 + (seed % 4) as usize, 2 + (seed % 3) as usize);
            let x = rng_uniform::<f64>(&mut s, &[n, 3, h, w], -1.0, 1.0).unwrap();
            let wt = rng_uniform::<f64>(&mut s, &[3, 2, 4, 4], -1.0, 1.0).unwrap();
            let b = rng_uniform::<f64>(&mut s, &[2], -1.0, 1.0).unwrap();
            let got = conv2d_transpose(&x, &wt, &b, TConv2dSpec).unwrap();
            assert_eq!(got.dims(), &[n, 2, 2 * h, 2 * w]);
            let want = tconv_oracle(&x, &wt, &b);
            for (g, w) in got.data().iter().zip(want.data()) {
                assert!((g - w).abs() < 1e-12, "seed {seed}: {g} vs {w}");
            }
        }
    }

    #[test]
    fn tconv_is_exact_adjoint_of_conv_sharing_the_weight() {
        // <tconv(x; W), y> == <x, conv(y; W)> where the same (C_in, C_out,
        // 4, 4) array is read as a conv weight (C_out', C_in', 4, 4) with the
        // channel axes swapping roles; both ops use stride 2, padding 1.
        for seed in 0..8u64 {
            let mut s = RngStream::new(200 + seed);
            let (ci, co) = (2 + (seed % 2) as usize, 3);
            let (h, w) = (2 + (seed % 5) as usize, 2 + (seed % 4) as usize);
            let x = rng_uniform::<f64>(&mut s, &[2, ci, h, w], -1.0, 1.0).unwrap();
            let wt = rng_uniform::<f64>(&mut s, &[ci, co, 4, 4], -1.0, 1.0).unwrap();
            let zb = Tensor::<f64>::zeros(&[co]).unwrap();
            let up = conv2d_transpose(&x, &wt, &zb, TConv2dSpec).unwrap();
            let y = rng_uniform::<f64>(&mut s, up.dims(), -1.0, 1.0).unwrap();
            let down = conv2d_raw(&y, &wt, None, TCONV_KERNEL, TCONV_STRIDE, TCONV_PADDING)
                .unwrap();
            let lhs = dot(&up, &y).unwrap();
            let rhs = dot(&x, &down).unwrap();
            let rel = (lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1e-12);
            assert!(rel < 1e-12, "seed {seed}: <Ax,y>={lhs} <x,A'y>={rhs}");
        }
    }

    #[test]
    fn tconv_adjoint_holds_at_f32_to_1e5() {
        let mut s = RngStream::new(300);
        let x = rng_uniform::<f32>(&mut s, &[1, 3, 8, 8], -1.0, 1.0).unwrap();
        let wt = rng_uniform::<f32>(&mut s, &[3, 2, 4, 4], -1.0, 1.0).unwrap();
        let zb = Tensor::<f32>::zeros(&[2]).unwrap();
        let up = conv2d_transpose(&x, &wt, &zb, TConv2dSpec).unwrap();
        let y = rng_uniform::<f32>(&mut s, up.dims(), -1.0, 1.0).unwrap();
        let down =
            conv2d_raw(&y, &wt, None, TCONV_KERNEL, TCONV_STRIDE, TCONV_PADDING).unwrap();
        let lhs = dot(&up, &y).unwrap();
        let rhs = dot(&x, &down).unwrap();
        let rel = (lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1e-12);
        assert!(rel < 1e-5, "<Ax,y>={lhs} <x,A'y>={rhs} rel={rel}");
    }

    #[test]
    fn conv_backward_shapes_match_operands() {
        let mut s = RngStream::new(9);
        let x = rng_uniform::<f64>(&mut s, &[2, 3, 6, 6], -1.0, 1.0).unwrap();
        let wt = rng_uniform::<f64>(&mut s, &[4, 3, 3, 3], -1.0, 1.0).unwrap();
        let b = rng_uniform::<f64>(&mut s, &[4], -1.0, 1.0).unwrap();
        let spec = Conv2dSpec { stride: 2 };
        let out = conv2d(&x, &wt, &b, spec).unwrap();
        let g = rng_uniform::<f64>(&mut s, out.dims(), -1.0, 1.0).unwrap();
        let grads = conv2d_backward(&x, &wt, spec, &g, crate::ops::Wants::ALL).unwrap();
        assert_eq!(grads.input.unwrap().dims(), x.dims());
        assert_eq!(grads.weight.unwrap().dims(), wt.dims());
        assert_eq!(grads.bias.unwrap().dims(), b.dims());
        let partial = conv2d_backward(&x, &wt, spec, &g, crate::ops::Wants::INPUT_ONLY).unwrap();
        assert!(partial.weight.is_none() && partial.bias.is_none());
    }
}
