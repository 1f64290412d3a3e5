//! Quantized weight tensors and the CQNT container.
//!
//! CQNT layout, integers little-endian:
//!
//! ```text
//! 0..4   magic "CQNT"
//! 4..6   version u16 = 1
//! 6      reserved, 0
//! 7      rank u8 (1..=4)
//! 8..    rank x u32 dims
//! ..     u32 byte length L, then L bytes of FormatSpec JSON
//! ..     packed codes, ceil(count * bit_width / 8) bytes
//! ```

use std::fs;
use std::path::Path;

use super::{pack_tensor, packed_len, unpack_tensor, EncodedWeight, FormatSpec};
use crate::error::{Error, Result};
use crate::tensorio::{check_dims, read_header, ByteReader, CTNS_VERSION};

pub const CQNT_MAGIC: &[u8; 4] = b"CQNT";

/// A weight tensor stored as ELP_BSD codes plus the format that decodes them.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTensor {
    dims: Vec<usize>,
    format: FormatSpec,
    codes: Vec<EncodedWeight>,
}

impl QuantizedTensor {
    pub fn new(dims: Vec<usize>, format: FormatSpec, codes: Vec<EncodedWeight>) -> Result<Self> {
        let count = check_dims(&dims)?;
        if count != codes.len() {
            return Err(Error::InvalidTensor(format!(
                "dims {dims:?} hold {count} weights but {} codes given",
                codes.len()
            )));
        }
        for &c in &codes {
            format.terms(c)?;
        }
        Ok(QuantizedTensor { dims, format, codes })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn format(&self) -> &FormatSpec {
        &self.format
    }

    pub fn codes(&self) -> &[EncodedWeight] {
        &self.codes
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn decode_all(&self) -> Vec<f64> {
        self.codes
            .iter()
            .map(|&c| self.format.decode(c).expect("codes validated at construction"))
            .collect()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let json = serde_json::to_vec(&self.format)?;
        let payload = pack_tensor(&self.codes, &self.format)?;
        let mut out = Vec::with_capacity(12 + 4 * self.dims.len() + json.len() + payload.len());
        out.extend_from_slice(CQNT_MAGIC);
        out.extend_from_slice(&CTNS_VERSION.to_le_bytes());
        out.push(0);
        out.push(self.dims.len() as u8);
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        let (dims, _) = read_header(&mut r, CQNT_MAGIC, false)?;
        let count = check_dims(&dims)?;
        let json_len = r.u32("format length")? as usize;
        let format: FormatSpec = serde_json::from_slice(r.take("format json", json_len)?)?;
        let payload = r.take("packed codes", packed_len(count, format.bit_width()))?;
        if r.remaining() > 0 {
            return Err(Error::TrailingBytes {
                found: r.remaining(),
            });
        }
        let codes = unpack_tensor(payload, count, &format)?;
        Self::new(dims, format, codes)
    }
}

pub fn read_quantized(path: impl AsRef<Path>) -> Result<QuantizedTensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    QuantizedTensor::from_bytes(&bytes)
}

pub fn write_quantized(q: &QuantizedTensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, q.to_bytes()?).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cqnt_round_trip_keeps_scale_exact() {
        let f = FormatSpec::single_signed(0..8, 0.1 / 3.0).unwrap();
        let codes: Vec<_> = (0..18u16).map(|i| EncodedWeight(i % 16)).collect();
        let q = QuantizedTensor::new(vec![2, 1, 3, 3], f, codes).unwrap();
        let bytes = q.to_bytes().unwrap();
        let back = QuantizedTensor::from_bytes(&bytes).unwrap();
        assert_eq!(back, q);
        assert_eq!(back.format().scale().to_bits(), (0.1f64 / 3.0).to_bits());

        assert!(matches!(
            QuantizedTensor::from_bytes(&bytes[..bytes.len() - 1]),
            Err(Error::Truncated { field: "packed codes", .. })
        ));
    }

    #[test]
    fn rejects_invalid_codes() {
        let f = FormatSpec::single_signed([0, 1, 2], 1.0).unwrap();
        assert!(QuantizedTensor::new(vec![1], f, vec![EncodedWeight(3)]).is_err());
    }
}
