//! "UGT1" tensor files.
//!
//! ```text
//! magic  b"UGT1"
//! u8     dtype (0 = f32, 1 = u8)
//! u8     rank
//! u8 x2  zero padding
//! u32    dims[rank], little-endian
//! ...    row-major payload, little-endian
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"UGT1";
const HEADER_LEN: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    F32 = 0,
    U8 = 1,
}

impl Dtype {
    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Dtype::F32),
            1 => Ok(Dtype::U8),
            t => Err(Error::UnknownDtype(t)),
        }
    }

    fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::U8 => 1,
        }
    }
}

/// Serializes `t`. With [`Dtype::U8`] every value must be an integer in
/// `0..=255`.
pub fn encode(t: &Tensor, dtype: Dtype) -> Result<Vec<u8>> {
    let rank = u8::try_from(t.rank()).map_err(|_| Error::Malformed(format!("rank {} too large", t.rank())))?;
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * t.rank() + dtype.width() * t.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&[dtype as u8, rank, 0, 0]);
    for &d in t.dims() {
        let d = u32::try_from(d).map_err(|_| Error::Malformed(format!("dimension {d} too large")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    match dtype {
        Dtype::F32 => {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Dtype::U8 => {
            for &v in t.data() {
                if !(0.0..=255.0).contains(&v) || v.fract() != 0.0 {
                    return Err(Error::Malformed(format!("{v} is not a byte value")));
                }
                out.push(v as u8);
            }
        }
    }
    Ok(out)
}

fn take<'a>(bytes: &mut &'a [u8], n: usize, what: &str) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(Error::TruncatedFile(format!("{what}: need {n} bytes, have {}", bytes.len())));
    }
    let (head, tail) = bytes.split_at(n);
    *bytes = tail;
    Ok(head)
}

/// Parses one tensor from the front of `bytes`, advancing the slice.
pub fn decode_prefix(bytes: &mut &[u8]) -> Result<(Tensor, Dtype)> {
    let magic: [u8; 4] = take(bytes, 4, "magic")?.try_into().expect("4 bytes");
    if magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let head = take(bytes, 4, "header")?;
    let dtype = Dtype::from_tag(head[0])?;
    let rank = head[1] as usize;
    if rank == 0 {
        return Err(Error::Malformed("rank must be at least 1".into()));
    }
    let dims: Vec<usize> = take(bytes, 4 * rank, "dims")?
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")) as usize)
        .collect();
    let n = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
    let n = n.ok_or_else(|| Error::Malformed(format!("dims {dims:?} overflow")))?;
    let payload = take(bytes, n.saturating_mul(dtype.width()), "payload")?;
    let data: Vec<f32> = match dtype {
        Dtype::F32 => payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect(),
        Dtype::U8 => payload.iter().map(|&b| b as f32).collect(),
    };
    Ok((Tensor::new(&dims, data)?, dtype))
}

/// Parses a complete file image; trailing bytes are rejected.
pub fn decode(mut bytes: &[u8]) -> Result<(Tensor, Dtype)> {
    let out = decode_prefix(&mut bytes)?;
    if !bytes.is_empty() {
        return Err(Error::Malformed(format!("{} trailing bytes", bytes.len())));
    }
    Ok(out)
}

pub fn write_tensor(path: impl AsRef<Path>, t: &Tensor, dtype: Dtype) -> Result<()> {
    fs::write(path, encode(t, dtype)?)?;
    Ok(())
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    Ok(decode(&fs::read(path)?)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_arithmetic() {
        let t = Tensor::from_fn(&[3, 2], |i| i as f32 * 0.5);
        let bytes = encode(&t, Dtype::F32).unwrap();
        assert_eq!(bytes.len(), 4 + 1 + 1 + 2 + 8 + 24);
        assert_eq!(decode(&bytes).unwrap(), (t, Dtype::F32));
    }

    #[test]
    fn guards() {
        let t = Tensor::from_fn(&[2, 2], |i| (i % 2) as f32);
        let mut bytes = encode(&t, Dtype::U8).unwrap();
        assert!(matches!(decode(&bytes[..bytes.len() - 1]), Err(Error::TruncatedFile(_))));
        bytes[4] = 9;
        assert!(matches!(decode(&bytes), Err(Error::UnknownDtype(9))));
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode(&bytes), Err(Error::BadMagic(m)) if &m == b"XXXX"));
        assert!(encode(&Tensor::full(&[1], 0.5), Dtype::U8).is_err());
    }
}
