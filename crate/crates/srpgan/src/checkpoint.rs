//! Binary checkpoint format.
//!
//! Layout (all integers little-endian):
//! `"SRPG"` magic, format version (u32), tensor count (u32), then per
//! tensor: name length (u32), UTF-8 name, rank (u32), dims (u64 each), raw
//! f32 data; finally a CRC32 of every preceding byte.
//!
//! A training checkpoint holds generator parameters under `g.*`,
//! discriminator parameters under `d.*`, ADAM first/second moments under
//! `adam_g.<param>.m` / `.v` (same for `adam_d`), the step counters
//! `adam_g.t` / `adam_d.t`, the trainer `iteration`, and the model plans as
//! one-element `meta.*` tensors so inference can rebuild the architecture
//! without a config file.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Discriminator, DiscriminatorPlan, Generator, GeneratorPlan};
use crate::optim::{AdamState, Trainer};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"SRPG";
pub const FORMAT_VERSION: u32 = 1;

/// One stored tensor: dimensions plus raw f32 samples.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorEntry {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

/// An ordered name -> tensor map with a fixed binary encoding. Iteration
/// (and therefore the encoded byte stream) is sorted by name, so identical
/// states encode to identical bytes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    tensors: BTreeMap<String, TensorEntry>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn get(&self, name: &str) -> Option<&TensorEntry> {
        self.tensors.get(name)
    }

    pub fn insert(&mut self, name: &str, dims: Vec<usize>, data: Vec<f32>) -> Result<()> {
        let count: usize = dims.iter().product();
        if dims.is_empty() || count != data.len() {
            return Err(Error::InvalidParameter(format!(
                "tensor '{name}': dims {dims:?} do not describe {} samples",
                data.len()
            )));
        }
        self.tensors.insert(name.to_string(), TensorEntry { dims, data });
        Ok(())
    }

    pub fn insert_tensor<E: Scalar>(&mut self, name: &str, t: &Tensor<E>) {
        let data = t.data().iter().map(|v| v.into_f64() as f32).collect();
        self.insert(name, t.dims().to_vec(), data)
            .expect("tensor dims are consistent by construction");
    }

    pub fn insert_scalar(&mut self, name: &str, v: f64) {
        self.insert(name, vec![1], vec![v as f32])
            .expect("one-element tensor is consistent");
    }

    /// Read back a one-element tensor written by [`Self::insert_scalar`].
    pub fn scalar(&self, name: &str) -> Result<f64> {
        let e = self
            .get(name)
            .ok_or_else(|| Error::CheckpointFormat(format!("missing scalar '{name}'")))?;
        if e.data.len() != 1 {
            return Err(Error::CheckpointFormat(format!(
                "'{name}' holds {} values, expected 1",
                e.data.len()
            )));
        }
        Ok(f64::from(e.data[0]))
    }

    /// Rebuild a `Tensor<E>` from a stored entry, checking the shape.
    pub fn tensor<E: Scalar>(&self, name: &str, dims: &[usize]) -> Result<Tensor<E>> {
        let e = self
            .get(name)
            .ok_or_else(|| Error::CheckpointFormat(format!("missing tensor '{name}'")))?;
        if e.dims != dims {
            return Err(Error::shape_mismatch(name, &e.dims, dims));
        }
        Tensor::from_vec(dims, e.data.iter().map(|&v| E::from_f64(f64::from(v))).collect())
    }

    /// Encode: header, sorted tensors, trailing CRC32.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, e) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(e.dims.len() as u32).to_le_bytes());
            for &d in &e.dims {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in &e.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    /// Decode, verifying the CRC first and then the structure.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 4 + 4 + 4 {
            return Err(Error::CheckpointFormat(format!(
                "file too short ({} bytes)",
                bytes.len()
            )));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4-byte tail"));
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(Error::ChecksumMismatch { stored, computed });
        }
        let mut cur = Cursor { buf: body, pos: 0 };
        let magic = cur.take(4)?;
        if magic != MAGIC {
            return Err(Error::CheckpointFormat(format!(
                "bad magic {magic:?}, expected {MAGIC:?}"
            )));
        }
        let version = cur.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::CheckpointFormat(format!(
                "unsupported format version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let count = cur.u32()? as usize;
        let mut tensors = BTreeMap::new();
        for _ in 0..count {
            let name_len = cur.u32()? as usize;
            let name = String::from_utf8(cur.take(name_len)?.to_vec())
                .map_err(|e| Error::CheckpointFormat(format!("tensor name not UTF-8: {e}")))?;
            let rank = cur.u32()? as usize;
            if rank == 0 || rank > 8 {
                return Err(Error::CheckpointFormat(format!(
                    "tensor '{name}': rank {rank} out of range 1..=8"
                )));
            }
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(cur.u64()? as usize);
            }
            let elems: usize = dims.iter().product();
            if elems == 0 || elems > (1 << 30) {
                return Err(Error::CheckpointFormat(format!(
                    "tensor '{name}': implausible element count {elems}"
                )));
            }
            let raw = cur.take(4 * elems)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
                .collect();
            if tensors.insert(name.clone(), TensorEntry { dims, data }).is_some() {
                return Err(Error::CheckpointFormat(format!("duplicate tensor '{name}'")));
            }
        }
        if cur.pos != body.len() {
            return Err(Error::CheckpointFormat(format!(
                "{} trailing bytes after the last tensor",
                body.len() - cur.pos
            )));
        }
        Ok(Checkpoint { tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path.as_ref())?;
        f.write_all(&self.to_bytes())?;
        f.sync_all()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path.as_ref())?)
    }

    /// Snapshot a full training state.
    pub fn from_trainer<E: Scalar>(trainer: &Trainer<E>) -> Checkpoint {
        let mut ck = Checkpoint::new();
        trainer
            .generator
            .visit_params(&mut |name, t| ck.insert_tensor(&format!("g.{name}"), t));
        trainer
            .discriminator
            .visit_params(&mut |name, t| ck.insert_tensor(&format!("d.{name}"), t));
        trainer.adam_g.visit_moments(&mut |name, m, v| {
            ck.insert_tensor(&format!("adam_g.{name}.m"), m);
            ck.insert_tensor(&format!("adam_g.{name}.v"), v);
        });
        trainer.adam_d.visit_moments(&mut |name, m, v| {
            ck.insert_tensor(&format!("adam_d.{name}.m"), m);
            ck.insert_tensor(&format!("adam_d.{name}.v"), v);
        });
        ck.insert_scalar("adam_g.t", trainer.adam_g.t() as f64);
        ck.insert_scalar("adam_d.t", trainer.adam_d.t() as f64);
        ck.insert_scalar("iteration", trainer.iteration() as f64);
        let gp = &trainer.generator.plan;
        ck.insert_scalar("meta.g.n_half", gp.n_half as f64);
        ck.insert_scalar("meta.g.base_channels", gp.base_channels as f64);
        let dp = &trainer.discriminator.plan;
        ck.insert_scalar("meta.d.layers", dp.layers as f64);
        ck.insert_scalar("meta.d.base_channels", dp.base_channels as f64);
        ck.insert_scalar("meta.d.conditional", if dp.conditional { 1.0 } else { 0.0 });
        ck
    }

    /// Generator plan stored in the `meta.*` tensors.
    pub fn generator_plan(&self) -> Result<GeneratorPlan> {
        let mut plan = GeneratorPlan::full();
        plan.n_half = self.scalar("meta.g.n_half")? as usize;
        plan.base_channels = self.scalar("meta.g.base_channels")? as usize;
        plan.validate()?;
        Ok(plan)
    }

    /// Discriminator plan stored in the `meta.*` tensors.
    pub fn discriminator_plan(&self) -> Result<DiscriminatorPlan> {
        let mut plan = DiscriminatorPlan::full();
        plan.layers = self.scalar("meta.d.layers")? as usize;
        plan.base_channels = self.scalar("meta.d.base_channels")? as usize;
        plan.conditional = self.scalar("meta.d.conditional")? != 0.0;
        plan.validate()?;
        Ok(plan)
    }

    /// Overwrite one model component's parameters from entries under
    /// `prefix` (e.g. `"g."`). Every parameter must be present with the
    /// right shape; all offending tensors are listed in one error.
    fn apply_params<E: Scalar>(
        &self,
        prefix: &str,
        visit: &mut dyn FnMut(&mut dyn FnMut(&str, &mut Tensor<E>)),
    ) -> Result<()> {
        let mut offenders: Vec<String> = Vec::new();
        visit(&mut |name, param| {
            let full = format!("{prefix}{name}");
            match self.tensors.get(&full) {
                None => offenders.push(format!("missing {full}")),
                Some(e) if e.dims != param.dims() => offenders.push(format!(
                    "shape mismatch {full}: checkpoint {:?} vs model {:?}",
                    e.dims,
                    param.dims()
                )),
                Some(e) => {
                    for (dst, &src) in param.data_mut().iter_mut().zip(&e.data) {
                        *dst = E::from_f64(f64::from(src));
                    }
                    param.ensure_grad();
                }
            }
        });
        if offenders.is_empty() {
            Ok(())
        } else {
            Err(Error::CheckpointFormat(format!(
                "checkpoint does not match the model: {}",
                offenders.join("; ")
            )))
        }
    }

    /// Load generator weights (`g.*`) into an already-built generator.
    pub fn apply_to_generator<E: Scalar>(&self, g: &mut Generator<E>) -> Result<()> {
        self.apply_params("g.", &mut |f| g.visit_params_mut(f))
    }

    /// Load discriminator weights (`d.*`) into an already-built model.
    pub fn apply_to_discriminator<E: Scalar>(&self, d: &mut Discriminator<E>) -> Result<()> {
        self.apply_params("d.", &mut |f| d.visit_params_mut(f))
    }

    /// Restore a full training state: both models, both ADAM states, the
    /// step counters, and the iteration counter.
    pub fn apply_to_trainer<E: Scalar>(&self, trainer: &mut Trainer<E>) -> Result<()> {
        self.apply_to_generator(&mut trainer.generator)?;
        self.apply_to_discriminator(&mut trainer.discriminator)?;
        let mut g_shapes: Vec<(String, Vec<usize>)> = Vec::new();
        trainer
            .generator
            .visit_params(&mut |name, t| g_shapes.push((name.to_string(), t.dims().to_vec())));
        let mut d_shapes: Vec<(String, Vec<usize>)> = Vec::new();
        trainer
            .discriminator
            .visit_params(&mut |name, t| d_shapes.push((name.to_string(), t.dims().to_vec())));
        self.apply_adam("adam_g", &g_shapes, &mut trainer.adam_g)?;
        self.apply_adam("adam_d", &d_shapes, &mut trainer.adam_d)?;
        trainer.set_iteration(self.scalar("iteration")? as u64);
        Ok(())
    }

    fn apply_adam<E: Scalar>(
        &self,
        prefix: &str,
        params: &[(String, Vec<usize>)],
        adam: &mut AdamState<E>,
    ) -> Result<()> {
        for (name, dims) in params {
            let m = self.tensor::<E>(&format!("{prefix}.{name}.m"), dims)?;
            let v = self.tensor::<E>(&format!("{prefix}.{name}.v"), dims)?;
            adam.insert_moments(name, m, v)?;
        }
        adam.set_t(self.scalar(&format!("{prefix}.t"))? as u64);
        Ok(())
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::CheckpointFormat(format!(
                "truncated: wanted {n} bytes at offset {}, file body is {}",
                self.pos,
                self.buf.len()
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
