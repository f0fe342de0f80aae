//! Channel-axis concatenation (the U-Net skip join) and its inverse split.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// [a | b] along the channel axis; batch and spatial extents must match.
pub fn concat_channels<E: Scalar>(a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
    let (na, ca, ha, wa) = a.dims4();
    let (nb, cb, hb, wb) = b.dims4();
    if a.rank() != 4 || b.rank() != 4 || na != nb || ha != hb || wa != wb {
        return Err(Error::shape_mismatch(
            "concat_channels batch/spatial extents",
            a.dims(),
            b.dims(),
        ));
    }
    let mut out = Tensor::zeros(&[na, ca + cb, ha, wa])?;
    let plane = ha * wa;
    let (ablk, bblk) = (ca * plane, cb * plane);
    let dst = out.data_mut();
    for n in 0..na {
        let obase = n * (ablk + bblk);
        dst[obase..obase + ablk].copy_from_slice(&a.data()[n * ablk..(n + 1) * ablk]);
        dst[obase + ablk..obase + ablk + bblk]
            .copy_from_slice(&b.data()[n * bblk..(n + 1) * bblk]);
    }
    Ok(out)
}

/// Split along the channel axis after `c_first` channels; the exact inverse
/// of `concat_channels` and also the backward of it (gradients pass through
/// untouched to each operand).
pub fn split_channels<E: Scalar>(
    x: &Tensor<E>,
    c_first: usize,
) -> Result<(Tensor<E>, Tensor<E>)> {
    let (n, c, h, w) = x.dims4();
    if x.rank() != 4 || c_first == 0 || c_first >= c {
        return Err(Error::InvalidParameter(format!(
            "split_channels at {c_first} invalid for shape {:?}",
            x.dims()
        )));
    }
    let c_rest = c - c_first;
    let mut a = Tensor::zeros(&[n, c_first, h, w])?;
    let mut b = Tensor::zeros(&[n, c_rest, h, w])?;
    let plane = h * w;
    let (ablk, bblk) = (c_first * plane, c_rest * plane);
    for ni in 0..n {
        let xbase = ni * (ablk + bblk);
        a.data_mut()[ni * ablk..(ni + 1) * ablk]
            .copy_from_slice(&x.data()[xbase..xbase + ablk]);
        b.data_mut()[ni * bblk..(ni + 1) * bblk]
            .copy_from_slice(&x.data()[xbase + ablk..xbase + ablk + bblk]);
    }
    Ok((a, b))
}

/// Backward of `concat_channels`: route the gradient slice to each operand.
pub fn concat_channels_backward<E: Scalar>(
    grad_out: &Tensor<E>,
    c_first: usize,
) -> Result<(Tensor<E>, Tensor<E>)> {
    split_channels(grad_out, c_first)
}
