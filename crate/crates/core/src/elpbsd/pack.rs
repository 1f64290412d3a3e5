use super::{EncodedWeight, FormatSpec};
use crate::error::{Error, Result};

/// Bytes needed for `count` codes of `bits` bits each.
pub fn packed_len(count: usize, bits: u32) -> usize {
    (count * bits as usize).div_ceil(8)
}

/// Concatenates codes MSB-first with no per-weight padding; the final byte
/// is zero-padded.
pub fn pack_tensor(codes: &[EncodedWeight], spec: &FormatSpec) -> Result<Vec<u8>> {
    let bits = spec.bit_width();
    let mut out = Vec::with_capacity(packed_len(codes.len(), bits));
    let mut acc: u32 = 0;
    let mut held: u32 = 0;
    for &c in codes {
        if (c.0 as u32) >> bits != 0 {
            return Err(Error::InvalidArgument(format!(
                "code {:#x} wider than {bits} bits",
                c.0
            )));
        }
        acc = (acc << bits) | c.0 as u32;
        held += bits;
        while held >= 8 {
            held -= 8;
            out.push((acc >> held) as u8);
        }
        acc &= (1 << held) - 1;
    }
    if held > 0 {
        out.push((acc << (8 - held)) as u8);
    }
    Ok(out)
}

pub fn unpack_tensor(bytes: &[u8], count: usize, spec: &FormatSpec) -> Result<Vec<EncodedWeight>> {
    let bits = spec.bit_width();
    let need = packed_len(count, bits);
    if bytes.len() < need {
        return Err(Error::Truncated {
            field: "packed codes",
            expected: need,
            found: bytes.len(),
        });
    }
    let mut out = Vec::with_capacity(count);
    let mut acc: u32 = 0;
    let mut held: u32 = 0;
    let mut next = bytes.iter();
    let mask = (1u32 << bits) - 1;
    for _ in 0..count {
        while held < bits {
            acc = (acc << 8) | *next.next().unwrap() as u32;
            held += 8;
        }
        held -= bits;
        out.push(EncodedWeight(((acc >> held) & mask) as u16));
        acc &= (1 << held) - 1;
    }
    Ok(out)
}
