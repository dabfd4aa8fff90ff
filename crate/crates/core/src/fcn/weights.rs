//! HSWT named-tensor container.
//!
//! ```text
//! "HSWT" | u16 version = 1 | u16 tensor_count
//! per tensor: u16 name_len | name (UTF-8) | u8 dtype | u8 ndim | u32 dims[ndim] | payload
//! u16 meta_count | per entry: u16 key_len | key | u16 value_len | value
//! ```
//!
//! Everything is little-endian. dtype 0 = f32, 1 = i8, 2 = i32. Tensor and
//! metadata order is preserved, so read-then-write is byte-identical.

use std::fs;
use std::path::Path;

use indexmap::IndexMap;

use crate::error::{bail, Result};
use crate::hypercube::pgm::write_atomic;

const MAGIC: &[u8; 4] = b"HSWT";
const VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    I8,
    I32,
}

impl DType {
    fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::I8 => 1,
            DType::I32 => 2,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => DType::F32,
            1 => DType::I8,
            2 => DType::I32,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            DType::F32 | DType::I32 => 4,
            DType::I8 => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    I8(Vec<i8>),
    I32(Vec<i32>),
}

impl TensorData {
    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::I8(_) => DType::I8,
            TensorData::I32(_) => DType::I32,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::I8(v) => v.len(),
            TensorData::I32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<u32>,
    pub data: TensorData,
}

impl Tensor {
    pub fn new(dims: Vec<u32>, data: TensorData) -> Result<Self> {
        let n: u64 = dims.iter().map(|&d| d as u64).product();
        if n != data.len() as u64 {
            bail!(Data, "tensor dims {dims:?} do not match payload of {}", data.len());
        }
        if dims.len() > u8::MAX as usize {
            bail!(Data, "tensor rank {} too large", dims.len());
        }
        Ok(Self { dims, data })
    }

    pub fn f32(dims: &[usize], data: Vec<f32>) -> Result<Self> {
        Self::new(dims.iter().map(|&d| d as u32).collect(), TensorData::F32(data))
    }

    pub fn dims_usize(&self) -> Vec<usize> {
        self.dims.iter().map(|&d| d as usize).collect()
    }
}

/// Ordered named tensors plus string metadata.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightStore {
    tensors: IndexMap<String, Tensor>,
    pub metadata: IndexMap<String, String>,
}

impl WeightStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a tensor; names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.tensors.contains_key(&name) {
            bail!(Data, "duplicate tensor name {name:?}");
        }
        self.tensors.insert(name, tensor);
        Ok(())
    }

    /// Inserts or replaces a tensor in place.
    pub fn set(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.tensors.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor> {
        self.tensors.shift_remove(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata.get(key).map(String::as_str)
    }

    pub fn set_meta(&mut self, key: impl Into<String>, value: impl ToString) {
        self.metadata.insert(key.into(), value.to_string());
    }

    fn lookup(&self, name: &str, dims: &[usize]) -> Result<&Tensor> {
        let t = self
            .tensors
            .get(name)
            .ok_or_else(|| crate::Error::Weight(format!("missing tensor {name:?}")))?;
        let got = t.dims_usize();
        // 1×1 kernels may be stored as plain [out, in] matrices
        let matrix_ok = dims.len() == 4
            && dims[2] == 1
            && dims[3] == 1
            && got.len() == 2
            && got[..] == dims[..2];
        if got != dims && !matrix_ok {
            bail!(Weight, "tensor {name:?} has dims {got:?}, expected {dims:?}");
        }
        Ok(t)
    }

    pub fn f32_tensor(&self, name: &str, dims: &[usize]) -> Result<&[f32]> {
        match &self.lookup(name, dims)?.data {
            TensorData::F32(v) => Ok(v),
            other => bail!(Weight, "tensor {name:?} is {:?}, expected f32", other.dtype()),
        }
    }

    pub fn i8_tensor(&self, name: &str, dims: &[usize]) -> Result<&[i8]> {
        match &self.lookup(name, dims)?.data {
            TensorData::I8(v) => Ok(v),
            other => bail!(Weight, "tensor {name:?} is {:?}, expected i8", other.dtype()),
        }
    }

    pub fn i32_tensor(&self, name: &str, dims: &[usize]) -> Result<&[i32]> {
        match &self.lookup(name, dims)?.data {
            TensorData::I32(v) => Ok(v),
            other => bail!(Weight, "tensor {name:?} is {:?}, expected i32", other.dtype()),
        }
    }

    /// True when any tensor holds integer data.
    pub fn is_quantized(&self) -> bool {
        self.tensors
            .values()
            .any(|t| t.data.dtype() != DType::F32)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) -> Result<()> {
    let len = u16::try_from(s.len())
        .map_err(|_| crate::Error::Format(format!("string of {} bytes too long", s.len())))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

pub fn write_weights(store: &WeightStore) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let count = u16::try_from(store.tensors.len())
        .map_err(|_| crate::Error::Format("too many tensors".into()))?;
    out.extend_from_slice(&count.to_le_bytes());
    for (name, t) in &store.tensors {
        put_str(&mut out, name)?;
        out.push(t.data.dtype().code());
        out.push(t.dims.len() as u8);
        for d in &t.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        match &t.data {
            TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::I8(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::I32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
    }
    let meta = u16::try_from(store.metadata.len())
        .map_err(|_| crate::Error::Format("too many metadata entries".into()))?;
    out.extend_from_slice(&meta.to_le_bytes());
    for (k, v) in &store.metadata {
        put_str(&mut out, k)?;
        put_str(&mut out, v)?;
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| crate::Error::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u16()? as usize;
        String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| crate::Error::Format("invalid UTF-8 string".into()))
    }
}

pub fn read_weights(bytes: &[u8]) -> Result<WeightStore> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4)? != MAGIC {
        bail!(Format, "bad HSWT magic");
    }
    let version = cur.u16()?;
    if version != VERSION {
        bail!(Format, "unsupported HSWT version {version}");
    }
    let count = cur.u16()?;
    let mut store = WeightStore::new();
    for _ in 0..count {
        let name = cur.string()?;
        let code = cur.u8()?;
        let dtype = DType::from_code(code)
            .ok_or_else(|| crate::Error::Format(format!("unknown dtype code {code}")))?;
        let ndim = cur.u8()? as usize;
        let dims = (0..ndim).map(|_| cur.u32()).collect::<Result<Vec<_>>>()?;
        let n = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
            .and_then(|n| n.checked_mul(dtype.size()))
            .ok_or_else(|| crate::Error::Format(format!("tensor {name:?} dims overflow")))?;
        let raw = cur.take(n)?;
        let data = match dtype {
            DType::F32 => TensorData::F32(
                raw.chunks_exact(4)
                    .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                    .collect(),
            ),
            DType::I8 => TensorData::I8(raw.iter().map(|&b| b as i8).collect()),
            DType::I32 => TensorData::I32(
                raw.chunks_exact(4)
                    .map(|b| i32::from_le_bytes(b.try_into().unwrap()))
                    .collect(),
            ),
        };
        if store.contains(&name) {
            bail!(Format, "duplicate tensor name {name:?}");
        }
        store.tensors.insert(name, Tensor { dims, data });
    }
    let meta = cur.u16()?;
    for _ in 0..meta {
        let k = cur.string()?;
        let v = cur.string()?;
        if store.metadata.insert(k.clone(), v).is_some() {
            bail!(Format, "duplicate metadata key {k:?}");
        }
    }
    if cur.pos != bytes.len() {
        bail!(Format, "{} trailing bytes after HSWT metadata", bytes.len() - cur.pos);
    }
    Ok(store)
}

pub fn save_weights(store: &WeightStore, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &write_weights(store)?)
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<WeightStore> {
    read_weights(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> WeightStore {
        let mut s = WeightStore::new();
        s.insert("a.w", Tensor::f32(&[2, 3], vec![1.0, -2.0, 3.5, 0.0, f32::MIN, 7.25]).unwrap())
            .unwrap();
        s.insert("a.q", Tensor::new(vec![3], TensorData::I8(vec![-128, 0, 127])).unwrap())
            .unwrap();
        s.insert("a.b", Tensor::new(vec![1], TensorData::I32(vec![-70000])).unwrap())
            .unwrap();
        s.set_meta("qf.a.q", 6);
        s.set_meta("arch", "unet");
        s
    }

    #[test]
    fn roundtrip_is_byte_identical() {
        let s = sample();
        let bytes = write_weights(&s).unwrap();
        let back = read_weights(&bytes).unwrap();
        assert_eq!(back, s);
        assert_eq!(write_weights(&back).unwrap(), bytes);
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut s = WeightStore::new();
        s.insert("x", Tensor::f32(&[1], vec![1.0]).unwrap()).unwrap();
        assert!(s.insert("x", Tensor::f32(&[1], vec![2.0]).unwrap()).is_err());
        // forge a file with the same tensor twice
        let mut bytes = b"HSWT".to_vec();
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.extend_from_slice(&2u16.to_le_bytes());
        for _ in 0..2 {
            bytes.extend_from_slice(&1u16.to_le_bytes());
            bytes.push(b'x');
            bytes.extend_from_slice(&[0, 1]);
            bytes.extend_from_slice(&1u32.to_le_bytes());
            bytes.extend_from_slice(&1f32.to_le_bytes());
        }
        bytes.extend_from_slice(&0u16.to_le_bytes());
        assert!(matches!(read_weights(&bytes), Err(crate::Error::Format(_))));
    }

    #[test]
    fn bad_header_and_truncation() {
        let bytes = write_weights(&sample()).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(read_weights(&bad), Err(crate::Error::Format(_))));
        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(matches!(read_weights(&v2), Err(crate::Error::Format(_))));
        for cut in [3, 9, 20, bytes.len() - 1] {
            assert!(matches!(read_weights(&bytes[..cut]), Err(crate::Error::Format(_))));
        }
        let mut extra = bytes;
        extra.push(0);
        assert!(read_weights(&extra).is_err());
    }

    #[test]
    fn lookup_checks_shape_and_dtype() {
        let s = sample();
        assert!(s.f32_tensor("a.w", &[2, 3]).is_ok());
        assert!(matches!(s.f32_tensor("a.w", &[3, 2]), Err(crate::Error::Weight(_))));
        assert!(matches!(s.f32_tensor("a.q", &[3]), Err(crate::Error::Weight(_))));
        assert!(matches!(s.f32_tensor("nope", &[1]), Err(crate::Error::Weight(_))));
        // 1×1 kernels accept a matrix layout
        assert!(s.f32_tensor("a.w", &[2, 3, 1, 1]).is_ok());
        assert!(s.is_quantized());
    }

    proptest! {
        #[test]
        fn random_stores_roundtrip(
            tensors in proptest::collection::vec(
                (proptest::collection::vec(1u32..4, 0..4), any::<u64>()), 0..6),
            meta in proptest::collection::vec(("[a-z.]{1,8}", "[ -~]{0,12}"), 0..4)
        ) {
            let mut s = WeightStore::new();
            for (i, (dims, seed)) in tensors.iter().enumerate() {
                let n: u32 = dims.iter().product();
                let data = match seed % 3 {
                    0 => TensorData::F32((0..n).map(|k| f32::from_bits((*seed as u32) ^ k.wrapping_mul(2654435761))).collect()),
                    1 => TensorData::I8((0..n).map(|k| (seed.wrapping_add(k as u64)) as i8).collect()),
                    _ => TensorData::I32((0..n).map(|k| (seed.wrapping_mul(k as u64 + 1)) as i32).collect()),
                };
                s.insert(format!("t{i}"), Tensor::new(dims.clone(), data).unwrap()).unwrap();
            }
            for (k, v) in meta {
                s.set_meta(k, v);
            }
            let bytes = write_weights(&s).unwrap();
            let back = read_weights(&bytes).unwrap();
            prop_assert_eq!(write_weights(&back).unwrap(), bytes);
        }
    }
}
