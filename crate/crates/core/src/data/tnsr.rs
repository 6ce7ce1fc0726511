use std::path::Path;

use crate::data::codec::{put_tensor, put_u16, seal, unseal, Reader};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

pub const TNSR_MAGIC: &[u8; 4] = b"TNSR";
pub const TNSR_VERSION: u16 = 1;

/// `"TNSR", u16 version, u8 dtype, u8 rank, u32 dims, payload, u32 CRC32`,
/// all little-endian. The CRC covers every preceding byte.
pub fn encode_tensor<T: Element>(t: &Tensor<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * t.rank() + t.numel() * T::DTYPE.size());
    out.extend_from_slice(TNSR_MAGIC);
    put_u16(&mut out, TNSR_VERSION);
    put_tensor(&mut out, t);
    seal(&mut out);
    out
}

pub fn decode_tensor<T: Element>(bytes: &[u8]) -> Result<Tensor<T>> {
    if bytes.len() < 4 || &bytes[..4] != TNSR_MAGIC {
        return Err(Error::Format("tensor file: bad magic".into()));
    }
    let body = unseal(bytes, "tensor file")?;
    let mut r = Reader::new(&body[4..], "tensor file");
    let version = r.u16()?;
    if version != TNSR_VERSION {
        return Err(Error::Version {
            found: version as u32,
            expected: TNSR_VERSION as u32,
        });
    }
    let t = r.tensor()?;
    if !r.is_empty() {
        return Err(Error::Format("tensor file: trailing bytes".into()));
    }
    Ok(t)
}

pub fn write_tensor<T: Element>(path: impl AsRef<Path>, t: &Tensor<T>) -> Result<()> {
    std::fs::write(path, encode_tensor(t))?;
    Ok(())
}

pub fn read_tensor<T: Element>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    decode_tensor(&std::fs::read(path)?)
}
