//! Flat binary weight container shared by every trained model.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic    b"FNVW"
//! version  u16
//! kind     u8            model kind
//! variant  u32           model-specific flags
//! n_meta   u32, meta f64 × n_meta
//! n_tensor u32, then per tensor: ndim u8, dims u32 × ndim
//! payload  f64 × Σ prod(dims), tensors in order, row-major
//! ```

use std::path::Path;

use crate::codec::Reader;
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"FNVW";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Encoder = 1,
    Isomap = 2,
    Imitator = 3,
    WayNet = 4,
    Worker = 5,
}

impl ModelKind {
    fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            1 => ModelKind::Encoder,
            2 => ModelKind::Isomap,
            3 => ModelKind::Imitator,
            4 => ModelKind::WayNet,
            5 => ModelKind::Worker,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<u32>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<u32>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().map(|&d| d as usize).product::<usize>(), data.len());
        Self { shape, data }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightFile {
    pub kind: ModelKind,
    pub variant: u32,
    pub meta: Vec<f64>,
    pub tensors: Vec<Tensor>,
}

impl WeightFile {
    pub fn new(kind: ModelKind, variant: u32, meta: Vec<f64>, tensors: Vec<Tensor>) -> Self {
        Self {
            kind,
            variant,
            meta,
            tensors,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.kind as u8);
        out.extend_from_slice(&self.variant.to_le_bytes());
        out.extend_from_slice(&(self.meta.len() as u32).to_le_bytes());
        for m in &self.meta {
            out.extend_from_slice(&m.to_le_bytes());
        }
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            out.push(t.shape.len() as u8);
            for d in &t.shape {
                out.extend_from_slice(&d.to_le_bytes());
            }
        }
        for t in &self.tensors {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "weight file");
        if r.take(4)? != MAGIC {
            return Err(Error::format("bad weight file magic"));
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(Error::format(format!("unsupported weight file version {version}")));
        }
        let kind = ModelKind::from_u8(r.u8()?).ok_or_else(|| Error::format("unknown model kind"))?;
        let variant = r.u32()?;
        let n_meta = r.u32()? as usize;
        let meta = (0..n_meta).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let n_tensors = r.u32()? as usize;
        let mut shapes = Vec::with_capacity(n_tensors);
        for _ in 0..n_tensors {
            let ndim = r.u8()? as usize;
            shapes.push((0..ndim).map(|_| r.u32()).collect::<Result<Vec<_>>>()?);
        }
        let mut tensors = Vec::with_capacity(n_tensors);
        for shape in shapes {
            let n: usize = shape.iter().map(|&d| d as usize).product();
            let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::format("tensor too large"))?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.push(Tensor { shape, data });
        }
        if r.remaining() != 0 {
            return Err(Error::format("trailing bytes after weight payload"));
        }
        Ok(Self {
            kind,
            variant,
            meta,
            tensors,
        })
    }

    pub fn expect_kind(self, kind: ModelKind) -> Result<Self> {
        if self.kind != kind {
            return Err(Error::format(format!("expected {kind:?} weights, found {:?}", self.kind)));
        }
        Ok(self)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn bytes_round_trip_bit_exact(
            variant in any::<u32>(),
            meta in proptest::collection::vec(any::<f64>(), 0..4),
            data in proptest::collection::vec(any::<f64>(), 0..24),
        ) {
            let n = data.len();
            let file = WeightFile::new(ModelKind::WayNet, variant, meta.clone(), vec![
                Tensor::new(vec![n as u32], data.clone()),
                Tensor::new(vec![1, 1], vec![0.5]),
            ]);
            let back = WeightFile::from_bytes(&file.to_bytes()).unwrap();
            prop_assert_eq!(back.variant, variant);
            let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(&back.meta), bits(&meta));
            prop_assert_eq!(bits(&back.tensors[0].data), bits(&data));
            prop_assert_eq!(back.to_bytes(), file.to_bytes());
        }
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let file = WeightFile::new(ModelKind::Encoder, 0, vec![1.0], vec![Tensor::new(vec![2], vec![1.0, 2.0])]);
        let bytes = file.to_bytes();
        assert!(WeightFile::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(WeightFile::from_bytes(&bad).is_err());
        let mut long = bytes.clone();
        long.push(0);
        assert!(WeightFile::from_bytes(&long).is_err());
        assert!(WeightFile::from_bytes(&bytes).unwrap().expect_kind(ModelKind::Worker).is_err());
    }
}
