//! Named parameter tensors with gradient buffers, and the checkpoint format.
//!
//! Checkpoint layout (all integers and floats little-endian):
//!
//! ```text
//! "GCSP" | version: u8 | count: u32
//! count × ( name_len: u32 | name: utf-8 | rank: u32 | dims: u64 × rank | values: f64 × Π dims )
//! ```

use std::path::Path;

use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"GCSP";
pub const CHECKPOINT_VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    /// Metadata tensors ride along in checkpoints but are never updated.
    pub trainable: bool,
}

impl Tensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, values: Vec<f64>, trainable: bool) -> Result<Self> {
        let name = name.into();
        let n: usize = shape.iter().product();
        if n != values.len() {
            return Err(Error::Shape(format!(
                "tensor {name} has shape {shape:?} but {} values",
                values.len()
            )));
        }
        Ok(Tensor {
            name,
            shape,
            values,
            trainable,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    tensors: Vec<Tensor>,
    grads: Vec<Vec<f64>>,
}

impl ParamStore {
    pub fn new(tensors: Vec<Tensor>) -> Result<Self> {
        for (i, t) in tensors.iter().enumerate() {
            if tensors[..i].iter().any(|u| u.name == t.name) {
                return Err(Error::Checkpoint(format!("duplicate tensor {}", t.name)));
            }
            if let Some(j) = t.values.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite { index: j });
            }
        }
        let grads = tensors.iter().map(|t| vec![0.0; t.values.len()]).collect();
        Ok(ParamStore { tensors, grads })
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.tensors.iter().position(|t| t.name == name)
    }

    pub fn values_mut(&mut self, index: usize) -> &mut [f64] {
        &mut self.tensors[index].values
    }

    pub fn grad(&self, index: usize) -> &[f64] {
        &self.grads[index]
    }

    pub fn grad_mut(&mut self, index: usize) -> &mut [f64] {
        &mut self.grads[index]
    }

    pub(crate) fn parts_mut(&mut self) -> (&mut [Tensor], &mut [Vec<f64>]) {
        (&mut self.tensors, &mut self.grads)
    }

    /// Number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.tensors
            .iter()
            .filter(|t| t.trainable)
            .map(|t| t.values.len())
            .sum()
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Add `grads` (one buffer per tensor, in store order) into the buffers.
    pub fn accumulate(&mut self, grads: &[Vec<f64>]) -> Result<()> {
        if grads.len() != self.grads.len() {
            return Err(Error::Shape(format!(
                "{} gradient buffers for {} tensors",
                grads.len(),
                self.grads.len()
            )));
        }
        for (i, (dst, src)) in self.grads.iter_mut().zip(grads).enumerate() {
            if dst.len() != src.len() {
                return Err(Error::Shape(format!(
                    "gradient for {} has wrong size",
                    self.tensors[i].name
                )));
            }
            dst.iter_mut().zip(src).for_each(|(a, b)| *a += b);
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.push(CHECKPOINT_VERSION);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for &d in &t.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in &t.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Tensors whose name starts with `meta.` load as non-trainable.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic, not a GCSP checkpoint".into()));
        }
        let version = r.take(1)?[0];
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let count = r.u32()? as usize;
        let mut tensors = Vec::new();
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Checkpoint("tensor name is not utf-8".into()))?
                .to_string();
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank.min(8));
            for _ in 0..rank {
                shape.push(r.u64()? as usize);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .filter(|&n| n <= bytes.len() / 8)
                .ok_or_else(|| Error::Checkpoint(format!("tensor {name} has implausible shape {shape:?}")))?;
            let values = r
                .take(n * 8)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let trainable = !name.starts_with("meta.");
            tensors.push(Tensor::new(name, shape, values, trainable)?);
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        ParamStore::new(tensors)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
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
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore {
        ParamStore::new(vec![
            Tensor::new("meta.patch", vec![2], vec![4.0, 4.0], false).unwrap(),
            Tensor::new("w", vec![2, 3], vec![1.0, -2.5, 3.0, 0.0, 1e-300, -7.0], true).unwrap(),
            Tensor::new("b", vec![0], vec![], true).unwrap(),
        ])
        .unwrap()
    }

    #[test]
    fn byte_round_trip() {
        let s = store();
        let bytes = s.to_bytes();
        assert_eq!(&bytes[..5], b"GCSP\x01");
        assert_eq!(ParamStore::from_bytes(&bytes).unwrap(), s);
    }

    #[test]
    fn rejects_damage() {
        let mut bytes = store().to_bytes();
        assert!(matches!(
            ParamStore::from_bytes(&bytes[..bytes.len() - 3]),
            Err(Error::Checkpoint(_))
        ));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(ParamStore::from_bytes(&extra).is_err());
        bytes[0] = b'X';
        let err = ParamStore::from_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("magic"));
    }

    #[test]
    fn shapes_and_names_checked() {
        assert!(Tensor::new("x", vec![2, 2], vec![0.0; 3], true).is_err());
        let t = Tensor::new("x", vec![1], vec![0.0], true).unwrap();
        assert!(ParamStore::new(vec![t.clone(), t]).is_err());
    }

    #[test]
    fn accumulate_and_clear() {
        let mut s = store();
        s.accumulate(&[vec![0.0; 2], vec![1.0; 6], vec![]]).unwrap();
        s.accumulate(&[vec![0.0; 2], vec![0.5; 6], vec![]]).unwrap();
        assert_eq!(s.grad(1), &[1.5; 6]);
        s.zero_grad();
        assert_eq!(s.grad(1), &[0.0; 6]);
        assert!(s.accumulate(&[vec![0.0; 2]]).is_err());
        assert_eq!(s.trainable_count(), 6);
    }
}
