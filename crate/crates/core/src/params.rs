//! Named parameter tensors, gradient buffers and the binary blob format used
//! by checkpoints.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Optimizer group. Encoder parameters and everything else get separate
/// learning rates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Encoder,
    Head,
}

#[derive(Debug, Clone)]
pub struct Param<F> {
    pub name: String,
    pub value: Tensor<F>,
    pub group: ParamGroup,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore<F> {
    params: Vec<Param<F>>,
}

const BLOB_MAGIC: &[u8; 8] = b"MGCRPRM1";

impl<F: Scalar> ParamStore<F> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<F>, group: ParamGroup) -> ParamId {
        let name = name.into();
        debug_assert!(
            self.params.iter().all(|p| p.name != name),
            "duplicate parameter name {name}"
        );
        self.params.push(Param { name, value, group });
        ParamId(self.params.len() - 1)
    }

    #[inline]
    pub fn get(&self, id: ParamId) -> &Tensor<F> {
        &self.params[id.0].value
    }

    #[inline]
    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        &mut self.params[id.0].value
    }

    pub fn param(&self, id: ParamId) -> &Param<F> {
        &self.params[id.0]
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<F>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Param<F>)> {
        self.params.iter_mut().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.data().len()).sum()
    }

    /// Serializes names, shapes, groups and raw values.
    ///
    /// Values are written at the store's own precision so a save/load cycle
    /// is bit-exact.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.num_scalars() * std::mem::size_of::<F>());
        out.extend_from_slice(BLOB_MAGIC);
        write_str(&mut out, F::NAME);
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for p in &self.params {
            write_str(&mut out, &p.name);
            out.push(match p.group {
                ParamGroup::Encoder => 0,
                ParamGroup::Head => 1,
            });
            out.extend_from_slice(&(p.value.rows() as u64).to_le_bytes());
            out.extend_from_slice(&(p.value.cols() as u64).to_le_bytes());
            for &v in p.value.data() {
                v.write_le(&mut out);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != BLOB_MAGIC {
            return Err(Error::Checkpoint("bad parameter blob magic".into()));
        }
        let dtype = r.string()?;
        if dtype != F::NAME {
            return Err(Error::Checkpoint(format!(
                "parameter blob holds {dtype}, expected {}",
                F::NAME
            )));
        }
        let count = r.u64()? as usize;
        let width = std::mem::size_of::<F>();
        let mut params = Vec::with_capacity(count);
        for _ in 0..count {
            let name = r.string()?;
            let group = match r.take(1)?[0] {
                0 => ParamGroup::Encoder,
                1 => ParamGroup::Head,
                g => return Err(Error::Checkpoint(format!("unknown parameter group {g}"))),
            };
            let rows = r.u64()? as usize;
            let cols = r.u64()? as usize;
            let raw = r.take(rows * cols * width)?;
            let data = raw
                .chunks_exact(width)
                .map(|c| {
                    if width == 4 {
                        F::of(f32::from_le_bytes(c.try_into().unwrap()) as f64)
                    } else {
                        F::of(f64::from_le_bytes(c.try_into().unwrap()))
                    }
                })
                .collect();
            params.push(Param {
                name,
                value: Tensor::from_vec(rows, cols, data),
                group,
            });
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes in parameter blob".into()));
        }
        Ok(Self { params })
    }

    /// SHA-256 of the serialized store.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }

    /// Copies values from `other`, which must have an identical layout.
    pub fn load_values_from(&mut self, other: &Self) -> Result<()> {
        if self.params.len() != other.params.len() {
            return Err(Error::Checkpoint(format!(
                "parameter count mismatch: {} vs {}",
                self.params.len(),
                other.params.len()
            )));
        }
        for (dst, src) in self.params.iter_mut().zip(&other.params) {
            if dst.name != src.name || dst.value.shape() != src.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter layout mismatch at {} {:?} vs {} {:?}",
                    dst.name,
                    dst.value.shape(),
                    src.name,
                    src.value.shape()
                )));
            }
            dst.value = src.value.clone();
        }
        Ok(())
    }
}

fn write_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated parameter blob".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let len = u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize;
        String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| Error::Checkpoint("non-UTF-8 name in parameter blob".into()))
    }
}

/// Gradient buffers aligned with a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Gradients<F> {
    grads: Vec<Option<Tensor<F>>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn new(store: &ParamStore<F>) -> Self {
        Self {
            grads: vec![None; store.len()],
        }
    }

    pub fn accumulate(&mut self, id: ParamId, g: &Tensor<F>) {
        match &mut self.grads[id.0] {
            Some(acc) => acc.add_assign(g),
            slot @ None => *slot = Some(g.clone()),
        }
    }

    pub(crate) fn slot_mut(&mut self, id: ParamId, shape: (usize, usize)) -> &mut Tensor<F> {
        self.grads[id.0].get_or_insert_with(|| Tensor::zeros(shape.0, shape.1))
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor<F>> {
        self.grads[id.0].as_ref()
    }

    pub fn merge(&mut self, other: &Self) {
        for (i, g) in other.grads.iter().enumerate() {
            if let Some(g) = g {
                self.accumulate(ParamId(i), g);
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().flatten().all(Tensor::is_finite)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blob_round_trip_is_bit_exact() {
        let mut s = ParamStore::<f32>::new();
        s.add("w", Tensor::from_vec(2, 2, vec![0.1, -2.5, 1e-30, 7.0]), ParamGroup::Encoder);
        s.add("b", Tensor::from_vec(1, 3, vec![0.3, 0.0, -0.0]), ParamGroup::Head);
        let bytes = s.to_bytes();
        let back = ParamStore::<f32>::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.fingerprint(), s.fingerprint());
    }

    #[test]
    fn blob_rejects_wrong_precision() {
        let mut s = ParamStore::<f32>::new();
        s.add("w", Tensor::zeros(1, 1), ParamGroup::Head);
        assert!(ParamStore::<f64>::from_bytes(&s.to_bytes()).is_err());
        assert!(ParamStore::<f32>::from_bytes(&s.to_bytes()[..10]).is_err());
    }
}
