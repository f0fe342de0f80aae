//! Dense NCHW tensors, the deterministic sample stream, and the seeded
//! initializers built on it.
//!
//! Tensors are rank 1..=4, contiguous, row-major with the last axis fastest.
//! A tensor may carry a paired gradient buffer of identical extent; model
//! parameters always do, activations never do.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<E> {
    dims: Vec<usize>,
    data: Vec<E>,
    grad: Option<Vec<E>>,
}

fn check_dims(dims: &[usize]) -> Result<()> {
    if dims.is_empty() || dims.len() > 4 {
        return Err(Error::UnsupportedRank(dims.len()));
    }
    if dims.iter().any(|&d| d == 0) {
        return Err(Error::ZeroExtentShape(dims.to_vec()));
    }
    Ok(())
}

impl<E: Scalar> Tensor<E> {
    pub fn zeros(dims: &[usize]) -> Result<Self> {
        check_dims(dims)?;
        let len = dims.iter().product();
        Ok(Tensor {
            dims: dims.to_vec(),
            data: vec![E::zero(); len],
            grad: None,
        })
    }

    pub fn filled(dims: &[usize], value: E) -> Result<Self> {
        let mut t = Self::zeros(dims)?;
        t.data.fill(value);
        Ok(t)
    }

    pub fn from_vec(dims: &[usize], data: Vec<E>) -> Result<Self> {
        check_dims(dims)?;
        let expect: usize = dims.iter().product();
        if data.len() != expect {
            return Err(Error::InvalidParameter(format!(
                "data length {} does not match shape {:?} (= {} elements)",
                data.len(),
                dims,
                expect
            )));
        }
        Ok(Tensor {
            dims: dims.to_vec(),
            data,
            grad: None,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        false // zero extents are rejected at construction
    }

    /// Extents as (n, c, h, w), padding leading axes with 1 for rank < 4.
    pub fn dims4(&self) -> (usize, usize, usize, usize) {
        let mut d = [1usize; 4];
        let off = 4 - self.dims.len();
        for (i, &x) in self.dims.iter().enumerate() {
            d[off + i] = x;
        }
        (d[0], d[1], d[2], d[3])
    }

    pub fn data(&self) -> &[E] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [E] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<E> {
        self.data
    }

    #[inline(always)]
    pub fn index4(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        let (_, cc, hh, ww) = self.dims4();
        ((n * cc + c) * hh + h) * ww + w
    }

    #[inline(always)]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> E {
        self.data[self.index4(n, c, h, w)]
    }

    #[inline(always)]
    pub fn at_mut(&mut self, n: usize, c: usize, h: usize, w: usize) -> &mut E {
        let i = self.index4(n, c, h, w);
        &mut self.data[i]
    }

    pub fn same_shape(&self, other: &Tensor<E>) -> bool {
        self.dims == other.dims
    }

    /// Allocate the paired gradient buffer (zeroed) if not present.
    pub fn ensure_grad(&mut self) {
        if self.grad.is_none() {
            self.grad = Some(vec![E::zero(); self.data.len()]);
        }
    }

    pub fn has_grad(&self) -> bool {
        self.grad.is_some()
    }

    pub fn grad(&self) -> Option<&[E]> {
        self.grad.as_deref()
    }

    /// Gradient buffer; call `ensure_grad` first. Panics when absent so that
    /// a missing buffer is a programming error, not a silent no-op.
    pub fn grad_mut(&mut self) -> &mut [E] {
        self.grad
            .as_deref_mut()
            .expect("gradient buffer not allocated; call ensure_grad first")
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_deref_mut() {
            g.fill(E::zero());
        }
    }

    /// Value and gradient buffers together, for in-place updates that read
    /// the gradient while writing the values.
    pub fn data_and_grad_mut(&mut self) -> (&mut [E], Option<&[E]>) {
        (&mut self.data, self.grad.as_deref())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map<F: Fn(E) -> E>(&self, f: F) -> Tensor<E> {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
            grad: None,
        }
    }

    /// Elementwise `self += other` (shapes must match).
    pub fn add_assign(&mut self, other: &Tensor<E>) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::shape_mismatch("add_assign", &self.dims, &other.dims));
        }
        for (a, &b) in self.data.iter_mut().zip(other.data.iter()) {
            *a = *a + b;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: E) {
        for v in self.data.iter_mut() {
            *v = *v * s;
        }
    }

    /// Cast element type, mapping the value buffer only (gradients dropped).
    pub fn cast<F: Scalar>(&self) -> Tensor<F> {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|v| F::from_f64(v.into_f64())).collect(),
            grad: None,
        }
    }
}

// ---------------------------------------------------------------------------
// Deterministic sample stream
// ---------------------------------------------------------------------------

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline(always)]
fn mix64(mut z: u64) -> u64 {
    z ^= z >> 30;
    z = z.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z ^= z >> 27;
    z = z.wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Counter-based deterministic stream: draw `i` under seed `s` is a pure
/// function of `(s, i)`, so sampling a tensor advances the counter by exactly
/// the element count and any consumer can be replayed. Statistical quality is
/// splitmix64 — fine for initialization and augmentation, not cryptographic.
/// Determinism is guaranteed within this implementation only.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RngStream {
    seed: u64,
    counter: u64,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream { seed, counter: 0 }
    }

    /// Derive an independent child stream; the parent state is not consumed.
    pub fn split(&self, stream_id: u64) -> RngStream {
        RngStream {
            seed: mix64(mix64(self.seed ^ GAMMA) ^ stream_id.wrapping_mul(GAMMA)),
            counter: 0,
        }
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.seed.wrapping_add(self.counter.wrapping_mul(GAMMA)))
    }

    /// Uniform in [0, 1) with 53 random mantissa bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn next_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in [0, n).
    pub fn next_below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.next_f64() * n as f64) as usize).min(n - 1)
    }

    /// Standard normal via Box-Muller; consumes exactly two draws.
    pub fn next_normal(&mut self) -> f64 {
        let u1 = self.next_f64().max(f64::MIN_POSITIVE); // avoid ln(0)
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }
}

// ---------------------------------------------------------------------------
// Seeded tensor constructors
// ---------------------------------------------------------------------------

/// Tensor of uniform samples in [lo, hi). Advances the stream by exactly
/// `product(dims)` draws.
pub fn rng_uniform<E: Scalar>(
    stream: &mut RngStream,
    dims: &[usize],
    lo: f64,
    hi: f64,
) -> Result<Tensor<E>> {
    if !(lo < hi) {
        return Err(Error::InvalidParameter(format!(
            "rng_uniform requires lo < hi, got [{lo}, {hi})"
        )));
    }
    check_dims(dims)?;
    let len: usize = dims.iter().product();
    let data = (0..len)
        .map(|_| E::from_f64(stream.next_range(lo, hi)))
        .collect();
    Tensor::from_vec(dims, data)
}

/// Glorot/Xavier uniform: [-a, a] with a = sqrt(6 / (fan_in + fan_out)).
pub fn xavier_init<E: Scalar>(
    stream: &mut RngStream,
    dims: &[usize],
    fan_in: usize,
    fan_out: usize,
) -> Result<Tensor<E>> {
    if fan_in == 0 || fan_out == 0 {
        return Err(Error::InvalidParameter(format!(
            "xavier_init fans must be positive, got fan_in={fan_in} fan_out={fan_out}"
        )));
    }
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    rng_uniform(stream, dims, -a, a)
}

/// He normal: zero-mean normal with std sqrt(2 / fan_in). Consumes exactly
/// `2 * product(dims)` draws.
pub fn he_normal_init<E: Scalar>(
    stream: &mut RngStream,
    dims: &[usize],
    fan_in: usize,
) -> Result<Tensor<E>> {
    if fan_in == 0 {
        return Err(Error::InvalidParameter(
            "he_normal_init fan_in must be positive".to_string(),
        ));
    }
    check_dims(dims)?;
    let std = (2.0 / fan_in as f64).sqrt();
    let len: usize = dims.iter().product();
    let data = (0..len)
        .map(|_| E::from_f64(std * stream.next_normal()))
        .collect();
    Tensor::from_vec(dims, data)
}

// ---------------------------------------------------------------------------
// Mean reduction
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceAxes {
    /// Mean over every element; result shape [1].
    All,
    /// Mean over H and W per (n, c); result shape [n, c, 1, 1]. Rank-4 input only.
    Spatial,
}

/// Mean reduction with f64 accumulation.
pub fn reduce_mean<E: Scalar>(x: &Tensor<E>, axes: ReduceAxes) -> Result<Tensor<E>> {
    match axes {
        ReduceAxes::All => {
            let m = mean_all(x);
            Tensor::from_vec(&[1], vec![E::from_f64(m)])
        }
        ReduceAxes::Spatial => {
            if x.rank() != 4 {
                return Err(Error::InvalidParameter(format!(
                    "spatial reduce_mean requires rank-4 input, got rank {}",
                    x.rank()
                )));
            }
            let (n, c, h, w) = x.dims4();
            let plane = h * w;
            let mut out = Vec::with_capacity(n * c);
            for nc in 0..n * c {
                let s: f64 = x.data()[nc * plane..(nc + 1) * plane]
                    .iter()
                    .map(|v| v.into_f64())
                    .sum();
                out.push(E::from_f64(s / plane as f64));
            }
            Tensor::from_vec(&[n, c, 1, 1], out)
        }
    }
}

/// Gradient of `reduce_mean` w.r.t. its input: each element receives
/// upstream / count for its reduction group.
pub fn reduce_mean_backward<E: Scalar>(
    x_dims: &[usize],
    axes: ReduceAxes,
    grad_out: &Tensor<E>,
) -> Result<Tensor<E>> {
    let mut gx = Tensor::<E>::zeros(x_dims)?;
    match axes {
        ReduceAxes::All => {
            let count: usize = x_dims.iter().product();
            if grad_out.len() != 1 {
                return Err(Error::shape_mismatch(
                    "reduce_mean_backward(all) upstream",
                    grad_out.dims(),
                    &[1],
                ));
            }
            let g = grad_out.data()[0].into_f64() / count as f64;
            gx.data_mut().fill(E::from_f64(g));
        }
        ReduceAxes::Spatial => {
            let (n, c, h, w) = gx.dims4();
            if grad_out.dims() != [n, c, 1, 1] {
                return Err(Error::shape_mismatch(
                    "reduce_mean_backward(spatial) upstream",
                    grad_out.dims(),
                    &[n, c, 1, 1],
                ));
            }
            let plane = h * w;
            for nc in 0..n * c {
                let g = E::from_f64(grad_out.data()[nc].into_f64() / plane as f64);
                gx.data_mut()[nc * plane..(nc + 1) * plane].fill(g);
            }
        }
    }
    Ok(gx)
}

/// Mean of all elements as f64 (f64 accumulation regardless of E).
pub fn mean_all<E: Scalar>(x: &Tensor<E>) -> f64 {
    let s: f64 = x.data().iter().map(|v| v.into_f64()).sum();
    s / x.len() as f64
}

/// Inner product of two same-shaped tensors, f64 accumulation.
pub fn dot<E: Scalar>(a: &Tensor<E>, b: &Tensor<E>) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::shape_mismatch("dot", a.dims(), b.dims()));
    }
    Ok(a.data()
        .iter()
        .zip(b.data().iter())
        .map(|(x, y)| x.into_f64() * y.into_f64())
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn element_round_trip_is_bit_exact() {
        let mut t = Tensor::<f32>::zeros(&[2, 3, 4, 4]).unwrap();
        let v = 0.123_456_79_f32;
        *t.at_mut(1, 2, 3, 0) = v;
        assert_eq!(t.at(1, 2, 3, 0).to_bits(), v.to_bits());
    }

    #[test]
    fn zero_extent_shape_is_rejected() {
        assert!(matches!(
            Tensor::<f32>::zeros(&[2, 0, 4, 4]),
            Err(Error::ZeroExtentShape(_))
        ));
        let mut s = RngStream::new(1);
        assert!(rng_uniform::<f32>(&mut s, &[0], 0.0, 1.0).is_err());
    }

    #[test]
    fn rank_bounds_are_enforced() {
        assert!(Tensor::<f32>::zeros(&[]).is_err());
        assert!(Tensor::<f32>::zeros(&[1, 1, 1, 1, 1]).is_err());
        assert!(Tensor::<f32>::zeros(&[3]).is_ok());
    }

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor::<f32>::from_vec(&[2, 2], vec![0.0; 5]).is_err());
    }

    #[test]
    fn dims4_pads_leading_axes() {
        let t = Tensor::<f32>::zeros(&[7]).unwrap();
        assert_eq!(t.dims4(), (1, 1, 1, 7));
        let t = Tensor::<f32>::zeros(&[2, 3, 4, 5]).unwrap();
        assert_eq!(t.dims4(), (2, 3, 4, 5));
    }

    #[test]
    fn stream_same_seed_same_sequence() {
        let mut a = RngStream::new(42);
        let mut b = RngStream::new(42);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        let mut c = RngStream::new(43);
        let first: Vec<u64> = (0..8).map(|_| RngStream::new(42).next_u64()).collect();
        assert!(first.iter().all(|&v| v == first[0]));
        assert_ne!(RngStream::new(42).next_u64(), c.next_u64());
    }

    #[test]
    fn stream_mean_near_half_over_1e6_draws() {
        let mut s = RngStream::new(7);
        let n = 1_000_000;
        let mean: f64 = (0..n).map(|_| s.next_f64()).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn stream_counter_advances_by_element_count() {
        let mut s = RngStream::new(3);
        let _ = rng_uniform::<f32>(&mut s, &[2, 3, 4, 5], 0.0, 1.0).unwrap();
        assert_eq!(s.counter(), 120);
        let _ = he_normal_init::<f32>(&mut s, &[5], 9).unwrap();
        assert_eq!(s.counter(), 120 + 10); // two draws per normal sample
    }

    #[test]
    fn split_streams_differ_from_parent_and_each_other() {
        let parent = RngStream::new(9);
        let mut a = parent.split(0);
        let mut b = parent.split(1);
        let mut p = parent.clone();
        let (va, vb, vp) = (a.next_u64(), b.next_u64(), p.next_u64());
        assert_ne!(va, vb);
        assert_ne!(va, vp);
        assert_ne!(vb, vp);
    }

    #[test]
    fn rng_uniform_respects_bounds_and_rejects_empty_range() {
        let mut s = RngStream::new(11);
        let t = rng_uniform::<f64>(&mut s, &[1000], -2.0, 3.0).unwrap();
        assert!(t.data().iter().all(|&v| (-2.0..3.0).contains(&v)));
        assert!(rng_uniform::<f64>(&mut s, &[4], 1.0, 1.0).is_err());
    }

    #[test]
    fn xavier_bound_for_symmetric_fans() {
        // fan_in = fan_out = 3 gives a = sqrt(6/6) = 1.
        let mut s = RngStream::new(5);
        let t = xavier_init::<f64>(&mut s, &[10_000], 3, 3).unwrap();
        assert!(t.data().iter().all(|&v| (-1.0..=1.0).contains(&v)));
    }

    #[test]
    fn xavier_variance_matches_uniform_moment() {
        // Var of U[-a, a] is a^2/3; check within 5% over 1e5 draws.
        let mut s = RngStream::new(6);
        let (fan_in, fan_out) = (48, 96);
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let t = xavier_init::<f64>(&mut s, &[100_000], fan_in, fan_out).unwrap();
        let mean = mean_all(&t);
        let var: f64 =
            t.data().iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / t.len() as f64;
        let expect = a * a / 3.0;
        assert!(
            (var - expect).abs() / expect < 0.05,
            "var {var} vs expected {expect}"
        );
    }

    #[test]
    fn he_normal_moments() {
        let mut s = RngStream::new(12);
        let fan_in = 72;
        let t = he_normal_init::<f64>(&mut s, &[100_000], fan_in).unwrap();
        let mean = mean_all(&t);
        let var: f64 =
            t.data().iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / t.len() as f64;
        let expect = 2.0 / fan_in as f64;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!(
            (var - expect).abs() / expect < 0.05,
            "var {var} vs expected {expect}"
        );
    }

    #[test]
    fn reduce_mean_all_matches_sum() {
        let t = Tensor::<f32>::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 6.0]).unwrap();
        let m = reduce_mean(&t, ReduceAxes::All).unwrap();
        assert_eq!(m.dims(), &[1]);
        assert!((m.data()[0] - 3.0).abs() < 1e-7);
    }

    #[test]
    fn reduce_mean_spatial_shapes_and_values() {
        let t = Tensor::<f64>::from_vec(
            &[1, 2, 2, 2],
            vec![1.0, 2.0, 3.0, 4.0, 10.0, 20.0, 30.0, 40.0],
        )
        .unwrap();
        let m = reduce_mean(&t, ReduceAxes::Spatial).unwrap();
        assert_eq!(m.dims(), &[1, 2, 1, 1]);
        assert_eq!(m.data(), &[2.5, 25.0]);
    }

    #[test]
    fn reduce_mean_gradient_matches_central_fd() {
        // d mean / d x_i is exactly 1/count; verify against central differences
        // in f64 on a random 2x3x4x4 tensor, rel err < 1e-6.
        let mut s = RngStream::new(33);
        let x = rng_uniform::<f64>(&mut s, &[2, 3, 4, 4], -1.0, 1.0).unwrap();
        let upstream = Tensor::<f64>::from_vec(&[1], vec![1.0]).unwrap();
        let g = reduce_mean_backward(x.dims(), ReduceAxes::All, &upstream).unwrap();
        let h = 1e-3;
        for probe in [0usize, 17, 43, 95] {
            let mut xp = x.clone();
            xp.data_mut()[probe] += h;
            let fp = mean_all(&xp);
            xp.data_mut()[probe] -= 2.0 * h;
            let fm = mean_all(&xp);
            let fd = (fp - fm) / (2.0 * h);
            let an = g.data()[probe];
            let rel = (an - fd).abs() / fd.abs().max(1e-12);
            assert!(rel < 1e-6, "probe {probe}: analytic {an} fd {fd}");
        }
    }

    #[test]
    fn reduce_mean_spatial_gradient_matches_fd() {
        let mut s = RngStream::new(34);
        let x = rng_uniform::<f64>(&mut s, &[2, 3, 4, 4], -1.0, 1.0).unwrap();
        // Project the spatial means with fixed weights to get a scalar.
        let wts = rng_uniform::<f64>(&mut s, &[2, 3, 1, 1], -1.0, 1.0).unwrap();
        let loss = |t: &Tensor<f64>| -> f64 {
            let m = reduce_mean(t, ReduceAxes::Spatial).unwrap();
            dot(&m, &wts).unwrap()
        };
        let g = reduce_mean_backward(x.dims(), ReduceAxes::Spatial, &wts).unwrap();
        let h = 1e-3;
        for probe in [3usize, 21, 60, 90] {
            let mut xp = x.clone();
            xp.data_mut()[probe] += h;
            let fp = loss(&xp);
            xp.data_mut()[probe] -= 2.0 * h;
            let fm = loss(&xp);
            let fd = (fp - fm) / (2.0 * h);
            let an = g.data()[probe];
            let rel = (an - fd).abs() / fd.abs().max(1e-12);
            assert!(rel < 1e-6, "probe {probe}: analytic {an} fd {fd}");
        }
    }

    #[test]
    fn cast_round_trip_preserves_f32_values() {
        let mut s = RngStream::new(77);
        let t = rng_uniform::<f32>(&mut s, &[64], -1.0, 1.0).unwrap();
        let back: Tensor<f32> = t.cast::<f64>().cast::<f32>();
        assert_eq!(t.data(), back.data());
    }
}
