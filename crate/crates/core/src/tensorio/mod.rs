//! Tensor container (CTNS), model manifests, and labeled datasets.
//!
//! CTNS layout, all integers little-endian:
//!
//! ```text
//! 0..4   magic "CTNS"
//! 4..6   version u16 = 1
//! 6      dtype u8 (0 = f32, 1 = i32, 2 = u8)
//! 7      rank u8 (1..=4)
//! 8..    rank x u32 dims
//! ..     payload, row-major
//! ```

mod dataset;
mod model;

use std::fs;
use std::path::Path;

pub use dataset::{load_dataset, Dataset};
pub use model::{load_model, write_model, Layer, LayerDef, LayerKind, Model, Weights};

use crate::error::{Error, Result};

pub const CTNS_MAGIC: &[u8; 4] = b"CTNS";
pub const CTNS_VERSION: u16 = 1;
pub const MAX_RANK: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32 = 0,
    I32 = 1,
    U8 = 2,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::F32 | DType::I32 => 4,
            DType::U8 => 1,
        }
    }

    fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(DType::F32),
            1 => Ok(DType::I32),
            2 => Ok(DType::U8),
            other => Err(Error::Unsupported {
                field: "dtype",
                value: other as u64,
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    I32(Vec<i32>),
    U8(Vec<u8>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::I32(v) => v.len(),
            TensorData::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::I32(_) => DType::I32,
            TensorData::U8(_) => DType::U8,
        }
    }
}

/// A dense row-major tensor of rank 1 to 4.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: TensorData,
}

pub(crate) fn check_dims(dims: &[usize]) -> Result<usize> {
    if dims.is_empty() || dims.len() > MAX_RANK {
        return Err(Error::InvalidTensor(format!(
            "rank {} outside 1..={MAX_RANK}",
            dims.len()
        )));
    }
    if let Some(d) = dims.iter().find(|&&d| d == 0 || d > u32::MAX as usize) {
        return Err(Error::InvalidTensor(format!("dimension {d} out of range")));
    }
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::InvalidTensor("element count overflows".into()))
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: TensorData) -> Result<Self> {
        let count = check_dims(&dims)?;
        if count != data.len() {
            return Err(Error::InvalidTensor(format!(
                "dims {dims:?} hold {count} elements but data has {}",
                data.len()
            )));
        }
        Ok(Tensor { dims, data })
    }

    pub fn from_f32(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        Self::new(dims, TensorData::F32(data))
    }

    pub fn from_i32(dims: Vec<usize>, data: Vec<i32>) -> Result<Self> {
        Self::new(dims, TensorData::I32(data))
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
        self.data.is_empty()
    }

    pub fn dtype(&self) -> DType {
        self.data.dtype()
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn as_f32(&self) -> Option<&[f32]> {
        match &self.data {
            TensorData::F32(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_f32_mut(&mut self) -> Option<&mut [f32]> {
        match &mut self.data {
            TensorData::F32(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_i32(&self) -> Option<&[i32]> {
        match &self.data {
            TensorData::I32(v) => Some(v),
            _ => None,
        }
    }

    /// Values widened to f64 regardless of dtype.
    pub fn to_f64_vec(&self) -> Vec<f64> {
        match &self.data {
            TensorData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            TensorData::I32(v) => v.iter().map(|&x| x as f64).collect(),
            TensorData::U8(v) => v.iter().map(|&x| x as f64).collect(),
        }
    }

    /// Equality on the raw bit patterns, so NaN payloads compare equal.
    pub fn bit_eq(&self, other: &Tensor) -> bool {
        self.dims == other.dims
            && match (&self.data, &other.data) {
                (TensorData::F32(a), TensorData::F32(b)) => a
                    .iter()
                    .map(|x| x.to_bits())
                    .eq(b.iter().map(|x| x.to_bits())),
                (a, b) => a == b,
            }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 4 * self.rank() + self.len() * self.dtype().size());
        out.extend_from_slice(CTNS_MAGIC);
        out.extend_from_slice(&CTNS_VERSION.to_le_bytes());
        out.push(self.dtype() as u8);
        out.push(self.rank() as u8);
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        match &self.data {
            TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::I32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::U8(v) => out.extend_from_slice(v),
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        let (dims, dtype) = read_header(&mut r, CTNS_MAGIC, true)?;
        let count = check_dims(&dims)?;
        let payload = r.take("payload", count * dtype.size())?;
        if r.remaining() > 0 {
            return Err(Error::TrailingBytes {
                found: r.remaining(),
            });
        }
        let data = match dtype {
            DType::F32 => TensorData::F32(
                payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            DType::I32 => TensorData::I32(
                payload
                    .chunks_exact(4)
                    .map(|c| i32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            DType::U8 => TensorData::U8(payload.to_vec()),
        };
        Tensor::new(dims, data)
    }
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Tensor::from_bytes(&bytes)
}

pub fn write_tensor(t: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, t.to_bytes()).map_err(|e| Error::io(path, e))
}

/// Cursor over a byte slice that reports which field ran short.
pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        ByteReader { bytes, pos: 0 }
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub(crate) fn take(&mut self, field: &'static str, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Truncated {
                field,
                expected: n,
                found: self.remaining(),
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub(crate) fn u8(&mut self, field: &'static str) -> Result<u8> {
        Ok(self.take(field, 1)?[0])
    }

    pub(crate) fn u16(&mut self, field: &'static str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(field, 2)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self, field: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(field, 4)?.try_into().unwrap()))
    }
}

/// Reads magic, version, dtype byte, rank and dims. When `typed` is false
/// the dtype byte is returned as F32 without interpretation.
pub(crate) fn read_header(
    r: &mut ByteReader<'_>,
    magic: &[u8; 4],
    typed: bool,
) -> Result<(Vec<usize>, DType)> {
    let found = r.take("magic", 4)?;
    if found != magic {
        return Err(Error::BadMagic {
            expected: String::from_utf8_lossy(magic).into_owned(),
            found: String::from_utf8_lossy(found).into_owned(),
        });
    }
    let version = r.u16("version")?;
    if version != CTNS_VERSION {
        return Err(Error::Unsupported {
            field: "version",
            value: version as u64,
        });
    }
    let dtype_code = r.u8("dtype")?;
    let dtype = if typed {
        DType::from_code(dtype_code)?
    } else {
        DType::F32
    };
    let rank = r.u8("rank")? as usize;
    if rank == 0 || rank > MAX_RANK {
        return Err(Error::Unsupported {
            field: "rank",
            value: rank as u64,
        });
    }
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        dims.push(r.u32("dims")? as usize);
    }
    Ok((dims, dtype))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reads_back_2x2_f32() {
        let t = Tensor::from_f32(vec![2, 2], vec![1.0, -2.0, 3.5, 0.25]).unwrap();
        let back = Tensor::from_bytes(&t.to_bytes()).unwrap();
        assert_eq!(back.rank(), 2);
        assert_eq!(back.len(), 4);
        assert_eq!(back, t);
    }

    #[test]
    fn single_element_file_is_16_bytes() {
        // 4 magic + 2 version + 1 dtype + 1 rank + 4 dim + 4 payload
        let t = Tensor::from_f32(vec![1], vec![7.0]).unwrap();
        assert_eq!(t.to_bytes().len(), 16);
    }

    #[test]
    fn six_f32_values_give_24_payload_bytes() {
        let t = Tensor::from_f32(vec![2, 3], vec![0.0; 6]).unwrap();
        let header = 8 + 4 * 2;
        assert_eq!(t.to_bytes().len() - header, 24);
    }

    #[test]
    fn empty_dims_rejected() {
        assert!(matches!(
            Tensor::from_f32(vec![], vec![]),
            Err(Error::InvalidTensor(_))
        ));
        assert!(Tensor::from_f32(vec![1, 1, 1, 1, 1], vec![0.0]).is_err());
        assert!(Tensor::from_f32(vec![0], vec![]).is_err());
    }

    #[test]
    fn short_payload_is_truncation() {
        let t = Tensor::from_f32(vec![8], vec![0.5; 8]).unwrap();
        let mut bytes = t.to_bytes();
        // rewrite dims to 3x3 in place of 8: needs rank 2
        bytes[7] = 2;
        let mut patched = bytes[..8].to_vec();
        patched.extend_from_slice(&3u32.to_le_bytes());
        patched.extend_from_slice(&3u32.to_le_bytes());
        patched.extend_from_slice(&bytes[12..]);
        match Tensor::from_bytes(&patched) {
            Err(Error::Truncated { field, expected, found }) => {
                assert_eq!(field, "payload");
                assert_eq!(expected, 36);
                assert_eq!(found, 32);
            }
            other => panic!("expected truncation, got {other:?}"),
        }
    }

    #[test]
    fn header_errors_name_the_field() {
        let t = Tensor::from_i32(vec![2], vec![1, 2]).unwrap();
        let mut bad = t.to_bytes();
        bad[0] = b'X';
        assert!(matches!(Tensor::from_bytes(&bad), Err(Error::BadMagic { .. })));

        let mut bad = t.to_bytes();
        bad[6] = 9;
        assert!(matches!(
            Tensor::from_bytes(&bad),
            Err(Error::Unsupported { field: "dtype", value: 9 })
        ));

        let mut bad = t.to_bytes();
        bad[7] = 5;
        assert!(matches!(
            Tensor::from_bytes(&bad),
            Err(Error::Unsupported { field: "rank", value: 5 })
        ));

        let mut extra = t.to_bytes();
        extra.push(0);
        assert!(matches!(
            Tensor::from_bytes(&extra),
            Err(Error::TrailingBytes { found: 1 })
        ));
    }

    #[test]
    fn file_round_trip_and_missing_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.ctns");
        let t = Tensor::new(vec![3], TensorData::U8(vec![1, 2, 255])).unwrap();
        write_tensor(&t, &path).unwrap();
        assert_eq!(read_tensor(&path).unwrap(), t);
        assert!(matches!(
            read_tensor(dir.path().join("nope.ctns")),
            Err(Error::MissingFile(_))
        ));
    }

    fn arb_tensor() -> impl Strategy<Value = Tensor> {
        (prop::collection::vec(1usize..6, 1..=4), 0u8..3)
            .prop_flat_map(|(dims, dtype)| {
                let n: usize = dims.iter().product();
                let data = match dtype {
                    0 => prop::collection::vec(any::<u32>(), n)
                        .prop_map(|v| TensorData::F32(v.into_iter().map(f32::from_bits).collect()))
                        .boxed(),
                    1 => prop::collection::vec(any::<i32>(), n)
                        .prop_map(TensorData::I32)
                        .boxed(),
                    _ => prop::collection::vec(any::<u8>(), n)
                        .prop_map(TensorData::U8)
                        .boxed(),
                };
                (Just(dims), data)
            })
            .prop_map(|(dims, data)| Tensor::new(dims, data).unwrap())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]
        #[test]
        fn serialization_round_trip_is_identity(t in arb_tensor()) {
            let back = Tensor::from_bytes(&t.to_bytes()).unwrap();
            prop_assert!(back.bit_eq(&t));
        }
    }
}
