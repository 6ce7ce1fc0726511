//! Little-endian primitives shared by the tensor and checkpoint formats.

use crate::error::{Error, Result};
use crate::tensor::{DType, Element, Tensor};

pub(crate) fn put_u16(out: &mut Vec<u8>, v: u16) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

/// `dtype tag, rank, u32 dims, payload`.
pub(crate) fn put_tensor<T: Element>(out: &mut Vec<u8>, t: &Tensor<T>) {
    out.push(T::DTYPE.tag());
    out.push(t.rank() as u8);
    for &d in t.shape() {
        put_u32(out, d as u32);
    }
    out.reserve(t.numel() * T::DTYPE.size());
    for &v in t.data() {
        v.write_le(out);
    }
}

/// Appends the CRC32 of everything written so far.
pub(crate) fn seal(out: &mut Vec<u8>) {
    let crc = crc32fast::hash(out);
    put_u32(out, crc);
}

/// Splits off and verifies a trailing CRC32, returning the covered bytes.
pub(crate) fn unseal<'a>(bytes: &'a [u8], what: &str) -> Result<&'a [u8]> {
    if bytes.len() < 4 {
        return Err(Error::Format(format!("{what}: truncated")));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    if crc32fast::hash(body) != stored {
        return Err(Error::Format(format!("{what}: checksum mismatch")));
    }
    Ok(body)
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'a str,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8], what: &'a str) -> Self {
        Self { buf, pos: 0, what }
    }

    pub(crate) fn is_empty(&self) -> bool {
        self.pos == self.buf.len()
    }

    pub(crate) fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format(format!("{}: truncated", self.what)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes(1)?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.bytes(2)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }

    pub(crate) fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.bytes(n)?.to_vec()).map_err(|_| Error::Format(format!("{}: invalid UTF-8", self.what)))
    }

    /// Reads a tensor record whose dtype must be `T`.
    pub(crate) fn tensor<T: Element>(&mut self) -> Result<Tensor<T>> {
        let tag = self.u8()?;
        let dtype = DType::from_tag(tag).ok_or_else(|| Error::Format(format!("{}: unknown dtype tag {tag}", self.what)))?;
        if dtype != T::DTYPE {
            return Err(Error::Format(format!(
                "{}: stored dtype {dtype:?}, requested {:?}",
                self.what,
                T::DTYPE
            )));
        }
        let rank = self.u8()? as usize;
        let shape = (0..rank).map(|_| Ok(self.u32()? as usize)).collect::<Result<Vec<_>>>()?;
        let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let bytes = numel
            .and_then(|n| n.checked_mul(dtype.size()))
            .ok_or_else(|| Error::Format(format!("{}: dims overflow", self.what)))?;
        let payload = self.bytes(bytes)?;
        let data = payload.chunks_exact(dtype.size()).map(T::read_le).collect();
        Tensor::from_vec(&shape, data).map_err(|e| Error::Format(format!("{}: {e}", self.what)))
    }
}
