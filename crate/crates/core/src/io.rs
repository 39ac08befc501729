//! Little-endian primitives shared by the binary container formats.

use std::io::{self, Read, Write};

use crate::error::{Error, Result};

pub(crate) fn write_u8(w: &mut impl Write, v: u8) -> io::Result<()> {
    w.write_all(&[v])
}

pub(crate) fn write_u16(w: &mut impl Write, v: u16) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub(crate) fn write_u32(w: &mut impl Write, v: u32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub(crate) fn write_u64(w: &mut impl Write, v: u64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub(crate) fn write_f32s(w: &mut impl Write, values: &[f32]) -> io::Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 4);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)
}

/// Narrows a length to the u32 used by the headers.
pub(crate) fn len_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::invalid(format!("{what} {v} does not fit in u32")))
}

/// Reads exactly `buf.len()` bytes, mapping a short read to `short`.
pub(crate) fn read_exact_or(r: &mut impl Read, buf: &mut [u8], short: impl FnOnce() -> Error) -> Result<()> {
    match r.read_exact(buf) {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => Err(short()),
        Err(e) => Err(e.into()),
    }
}

fn header_eof() -> Error {
    Error::CorruptHeader("unexpected end of header".into())
}

pub(crate) fn read_magic(r: &mut impl Read, expected: &[u8; 8]) -> Result<()> {
    let mut magic = [0u8; 8];
    read_exact_or(r, &mut magic, header_eof)?;
    if &magic != expected {
        return Err(Error::CorruptHeader(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&magic),
            String::from_utf8_lossy(expected)
        )));
    }
    Ok(())
}

pub(crate) fn read_u8(r: &mut impl Read) -> Result<u8> {
    let mut b = [0u8; 1];
    read_exact_or(r, &mut b, header_eof)?;
    Ok(b[0])
}

pub(crate) fn read_u16(r: &mut impl Read) -> Result<u16> {
    let mut b = [0u8; 2];
    read_exact_or(r, &mut b, header_eof)?;
    Ok(u16::from_le_bytes(b))
}

pub(crate) fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact_or(r, &mut b, header_eof)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact_or(r, &mut b, header_eof)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_f64(r: &mut impl Read) -> Result<f64> {
    Ok(f64::from_bits(read_u64(r)?))
}

/// Reads `n` little-endian f32 values; a short read is a truncated payload.
pub(crate) fn read_f32s(r: &mut impl Read, n: usize) -> Result<Vec<f32>> {
    let mut buf = vec![0u8; n * 4];
    let expected = buf.len() as u64;
    read_exact_or(r, &mut buf, || Error::TruncatedPayload { expected, actual: 0 })?;
    Ok(buf.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}
