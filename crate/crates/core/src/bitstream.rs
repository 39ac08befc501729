//! Fixed-width packing of code streams.
//!
//! Stream layout (little-endian header, 39 bytes):
//!
//! ```text
//! magic "RESQST01" | u16 version | u8 flags | u32 K | u32 N | u32 D | u64 T | f64 F
//! ```
//!
//! `flags` bit 0 marks `F` as present, bit 1 selects the unpacked debug
//! payload (one little-endian u32 per code). The packed payload stores every
//! code in exactly `log2 K` bits, most significant bit first, frame-major
//! then stage-major, zero-padded to a byte boundary.

use crate::error::{Error, Result};
use crate::io;

pub const MAGIC: &[u8; 8] = b"RESQST01";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 39;

const FLAG_FRAME_RATE: u8 = 0b01;
const FLAG_UNPACKED: u8 = 0b10;

/// `N * log2(K) * F` bits per second.
pub fn bitrate(n_stages: usize, k: usize, frame_rate: f64) -> Result<f64> {
    if k < 2 {
        return Err(Error::InvalidK(k));
    }
    if !(frame_rate > 0.0 && frame_rate.is_finite()) {
        return Err(Error::invalid(format!("frame rate {frame_rate} must be positive")));
    }
    Ok(n_stages as f64 * (k as f64).log2() * frame_rate)
}

/// Bits per code for a power-of-two codebook size.
pub fn code_bits(k: usize) -> Result<u32> {
    if k < 2 {
        return Err(Error::InvalidK(k));
    }
    if !k.is_power_of_two() {
        return Err(Error::NonPowerOfTwoK(k));
    }
    Ok(k.trailing_zeros())
}

/// `T x N` code matrix plus the metadata needed to decode it.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeStream {
    pub k: usize,
    pub n_stages: usize,
    pub dim: usize,
    pub frame_rate: Option<f64>,
    /// Frame-major, `T * N` entries.
    pub codes: Vec<u32>,
}

impl CodeStream {
    pub fn new(k: usize, n_stages: usize, dim: usize) -> Self {
        CodeStream {
            k,
            n_stages,
            dim,
            frame_rate: None,
            codes: Vec::new(),
        }
    }

    pub fn frames(&self) -> usize {
        self.codes.len().checked_div(self.n_stages).unwrap_or(0)
    }

    pub fn frame(&self, t: usize) -> &[u32] {
        &self.codes[t * self.n_stages..(t + 1) * self.n_stages]
    }

    pub fn push(&mut self, codes: &[u32]) -> Result<()> {
        if codes.len() != self.n_stages {
            return Err(Error::LengthMismatch {
                left: codes.len(),
                right: self.n_stages,
            });
        }
        self.codes.extend_from_slice(codes);
        Ok(())
    }

    /// Payload size of the packed form in bits, before byte padding.
    pub fn payload_bits(&self) -> Result<u64> {
        Ok(self.codes.len() as u64 * code_bits(self.k)? as u64)
    }

    /// Bits per second of the packed payload over `T / F` seconds.
    pub fn measured_bitrate(&self) -> Option<f64> {
        let f = self.frame_rate?;
        let t = self.frames();
        if t == 0 {
            return None;
        }
        let bytes = (self.payload_bits().ok()?).div_ceil(8);
        Some(bytes as f64 * 8.0 / (t as f64 / f))
    }

    fn validate(&self) -> Result<()> {
        if self.n_stages == 0 {
            return Err(Error::invalid("stream needs at least one stage"));
        }
        if !self.codes.len().is_multiple_of(self.n_stages) {
            return Err(Error::LengthMismatch {
                left: self.codes.len(),
                right: self.n_stages,
            });
        }
        if let Some(pos) = self.codes.iter().position(|&c| c as usize >= self.k) {
            return Err(Error::IndexOutOfRange {
                stage: pos % self.n_stages,
                index: self.codes[pos] as u64,
                k: self.k,
            });
        }
        Ok(())
    }

    fn header(&self, flags: u8) -> Result<Vec<u8>> {
        let mut h = Vec::with_capacity(HEADER_LEN);
        h.extend_from_slice(MAGIC);
        io::write_u16(&mut h, VERSION)?;
        let flags = flags | if self.frame_rate.is_some() { FLAG_FRAME_RATE } else { 0 };
        io::write_u8(&mut h, flags)?;
        io::write_u32(&mut h, io::len_u32(self.k, "codebook size")?)?;
        io::write_u32(&mut h, io::len_u32(self.n_stages, "stage count")?)?;
        io::write_u32(&mut h, io::len_u32(self.dim, "dimension")?)?;
        io::write_u64(&mut h, self.frames() as u64)?;
        io::write_u64(&mut h, self.frame_rate.unwrap_or(0.0).to_bits())?;
        debug_assert_eq!(h.len(), HEADER_LEN);
        Ok(h)
    }
}

/// Serializes `stream` with `log2 K` bits per code.
pub fn pack(stream: &CodeStream) -> Result<Vec<u8>> {
    let bits = code_bits(stream.k)?;
    stream.validate()?;
    let mut out = stream.header(0)?;
    let payload_len = (stream.codes.len() as u64 * bits as u64).div_ceil(8) as usize;
    out.reserve(payload_len);
    let mut acc: u64 = 0;
    let mut filled: u32 = 0;
    for &c in &stream.codes {
        acc = (acc << bits) | c as u64;
        filled += bits;
        while filled >= 8 {
            filled -= 8;
            out.push((acc >> filled) as u8);
        }
        acc &= (1u64 << filled) - 1;
    }
    if filled > 0 {
        out.push((acc << (8 - filled)) as u8);
    }
    debug_assert_eq!(out.len(), HEADER_LEN + payload_len);
    Ok(out)
}

/// Serializes `stream` with one u32 per code; accepts any codebook size.
pub fn pack_unpacked(stream: &CodeStream) -> Result<Vec<u8>> {
    if stream.k == 0 {
        return Err(Error::InvalidK(0));
    }
    stream.validate()?;
    let mut out = stream.header(FLAG_UNPACKED)?;
    for &c in &stream.codes {
        out.extend_from_slice(&c.to_le_bytes());
    }
    Ok(out)
}

/// Parses a stream written by [`pack`] or [`pack_unpacked`].
pub fn unpack(bytes: &[u8]) -> Result<CodeStream> {
    if bytes.len() < HEADER_LEN {
        if bytes.len() >= 8 && &bytes[..8] != MAGIC {
            return Err(Error::CorruptHeader("bad stream magic".into()));
        }
        return Err(Error::CorruptHeader(format!(
            "stream header needs {HEADER_LEN} bytes, got {}",
            bytes.len()
        )));
    }
    let mut r = bytes;
    io::read_magic(&mut r, MAGIC)?;
    let version = io::read_u16(&mut r)?;
    if version != VERSION {
        return Err(Error::VersionUnsupported(version));
    }
    let flags = io::read_u8(&mut r)?;
    if flags & !(FLAG_FRAME_RATE | FLAG_UNPACKED) != 0 {
        return Err(Error::CorruptHeader(format!("unknown stream flags {flags:#04b}")));
    }
    let k = io::read_u32(&mut r)? as usize;
    let n_stages = io::read_u32(&mut r)? as usize;
    let dim = io::read_u32(&mut r)? as usize;
    let frames = io::read_u64(&mut r)?;
    let f = io::read_f64(&mut r)?;
    if n_stages == 0 {
        return Err(Error::CorruptHeader("stream with zero stages".into()));
    }
    let frame_rate = if flags & FLAG_FRAME_RATE != 0 {
        if !(f > 0.0 && f.is_finite()) {
            return Err(Error::CorruptHeader(format!("frame rate {f}")));
        }
        Some(f)
    } else {
        None
    };
    let count = frames
        .checked_mul(n_stages as u64)
        .ok_or_else(|| Error::CorruptHeader("code count overflows".into()))?;
    let payload = r;

    let codes = if flags & FLAG_UNPACKED != 0 {
        if k == 0 {
            return Err(Error::CorruptHeader("K=0".into()));
        }
        let expected = count
            .checked_mul(4)
            .ok_or_else(|| Error::CorruptHeader("payload size overflows".into()))?;
        check_len(payload, expected)?;
        payload
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect::<Vec<_>>()
    } else {
        let bits = code_bits(k).map_err(|e| Error::CorruptHeader(e.to_string()))?;
        let expected = count
            .checked_mul(bits as u64)
            .ok_or_else(|| Error::CorruptHeader("payload size overflows".into()))?
            .div_ceil(8);
        check_len(payload, expected)?;
        let mut codes = Vec::with_capacity(count as usize);
        let mask = (1u64 << bits) - 1;
        let mut acc: u64 = 0;
        let mut filled: u32 = 0;
        let mut bytes = payload.iter();
        for _ in 0..count {
            while filled < bits {
                acc = (acc << 8) | *bytes.next().expect("length checked") as u64;
                filled += 8;
            }
            filled -= bits;
            codes.push(((acc >> filled) & mask) as u32);
            acc &= (1u64 << filled) - 1;
        }
        codes
    };
    let stream = CodeStream {
        k,
        n_stages,
        dim,
        frame_rate,
        codes,
    };
    stream.validate().map_err(|e| Error::CorruptHeader(e.to_string()))?;
    Ok(stream)
}

fn check_len(payload: &[u8], expected: u64) -> Result<()> {
    let actual = payload.len() as u64;
    if actual < expected {
        return Err(Error::TruncatedPayload { expected, actual });
    }
    if actual > expected {
        return Err(Error::CorruptHeader(format!("{} trailing bytes after payload", actual - expected)));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bitrate_formula() {
        assert_eq!(bitrate(8, 1024, 100.0).unwrap(), 8000.0);
        assert_eq!(bitrate(1, 2, 1.0).unwrap(), 1.0);
        assert!((bitrate(16, 1024, 97.66).unwrap() - 15625.6).abs() < 1e-9);
        assert!(matches!(bitrate(4, 1, 10.0), Err(Error::InvalidK(1))));
    }

    #[test]
    fn nibble_layout() {
        let mut s = CodeStream::new(16, 2, 4);
        s.push(&[3, 10]).unwrap();
        let bytes = pack(&s).unwrap();
        assert_eq!(&bytes[HEADER_LEN..], &[0x3A]);
    }

    #[test]
    fn ten_bit_codes_pad_to_bytes() {
        let mut s = CodeStream::new(1024, 2, 4);
        s.push(&[1023, 0]).unwrap();
        s.push(&[512, 1]).unwrap();
        let bytes = pack(&s).unwrap();
        assert_eq!(bytes.len() - HEADER_LEN, 5);
        assert_eq!(&bytes[HEADER_LEN..], &[0xFF, 0xC0, 0x08, 0x00, 0x01]);
        assert_eq!(unpack(&bytes).unwrap(), s);
    }

    #[test]
    fn empty_stream_is_header_only() {
        let s = CodeStream::new(16, 3, 8);
        let bytes = pack(&s).unwrap();
        assert_eq!(bytes.len(), HEADER_LEN);
        assert_eq!(unpack(&bytes).unwrap(), s);
    }

    #[test]
    fn header_layout() {
        let mut s = CodeStream::new(4, 1, 7);
        s.frame_rate = Some(50.0);
        s.push(&[2]).unwrap();
        let b = pack(&s).unwrap();
        assert_eq!(&b[..8], b"RESQST01");
        assert_eq!(&b[8..10], &1u16.to_le_bytes());
        assert_eq!(b[10], 0b01);
        assert_eq!(&b[11..15], &4u32.to_le_bytes());
        assert_eq!(&b[15..19], &1u32.to_le_bytes());
        assert_eq!(&b[19..23], &7u32.to_le_bytes());
        assert_eq!(&b[23..31], &1u64.to_le_bytes());
        assert_eq!(&b[31..39], &50.0f64.to_le_bytes());
        assert_eq!(b[39], 0b1000_0000);
    }

    #[test]
    fn error_contracts() {
        let mut s = CodeStream::new(16, 2, 4);
        s.push(&[3, 10]).unwrap();
        s.push(&[1, 2]).unwrap();
        let bytes = pack(&s).unwrap();
        assert!(matches!(
            unpack(&bytes[..bytes.len() - 1]),
            Err(Error::TruncatedPayload { expected: 2, actual: 1 })
        ));
        let mut bad = bytes.clone();
        bad[1] = b'X';
        assert!(matches!(unpack(&bad), Err(Error::CorruptHeader(_))));
        let mut v2 = bytes.clone();
        v2[8] = 2;
        assert!(matches!(unpack(&v2), Err(Error::VersionUnsupported(2))));
        assert!(matches!(pack(&CodeStream { k: 12, ..s.clone() }), Err(Error::NonPowerOfTwoK(12))));
        let mut oob = CodeStream::new(16, 2, 4);
        oob.codes = vec![3, 16];
        assert!(matches!(
            pack(&oob),
            Err(Error::IndexOutOfRange {
                stage: 1,
                index: 16,
                k: 16
            })
        ));
    }

    #[test]
    fn unpacked_debug_format_takes_any_k() {
        let mut s = CodeStream::new(12, 2, 4);
        s.push(&[11, 0]).unwrap();
        let bytes = pack_unpacked(&s).unwrap();
        assert_eq!(bytes.len(), HEADER_LEN + 8);
        assert_eq!(unpack(&bytes).unwrap(), s);
    }
}
