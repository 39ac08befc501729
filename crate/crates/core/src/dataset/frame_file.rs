//! Frame file format.
//!
//! ```text
//! magic "RESQFR01" | u32 D | u64 count | count * D little-endian f32
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::frame::{Frame, FrameSet};
use crate::io;

pub const MAGIC: &[u8; 8] = b"RESQFR01";
const HEADER_LEN: u64 = 20;

/// Streaming reader over the frames of a frame file.
pub struct FrameReader<R> {
    inner: R,
    dim: usize,
    count: u64,
    next: u64,
    buf: Vec<u8>,
    failed: bool,
}

impl FrameReader<BufReader<File>> {
    /// Opens `path`, checking the header against the file size.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let file = File::open(path)?;
        let size = file.metadata()?.len();
        let reader = FrameReader::new(BufReader::new(file))?;
        let expected = reader.payload_len();
        let actual = size.saturating_sub(HEADER_LEN);
        if actual < expected {
            return Err(Error::TruncatedPayload { expected, actual });
        }
        if actual > expected {
            return Err(Error::CorruptHeader(format!("{} trailing bytes after payload", actual - expected)));
        }
        Ok(reader)
    }
}

impl<R: Read> FrameReader<R> {
    /// Parses the header from `inner`; frames are read lazily.
    pub fn new(mut inner: R) -> Result<Self> {
        io::read_magic(&mut inner, MAGIC)?;
        let dim = io::read_u32(&mut inner)? as usize;
        let count = io::read_u64(&mut inner)?;
        if dim == 0 && count > 0 {
            return Err(Error::CorruptHeader("frames of dimension 0".into()));
        }
        Ok(FrameReader {
            inner,
            dim,
            count,
            next: 0,
            buf: vec![0; dim * 4],
            failed: false,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Frame count announced by the header.
    pub fn frame_count(&self) -> u64 {
        self.count
    }

    fn payload_len(&self) -> u64 {
        self.count.saturating_mul(self.dim as u64 * 4)
    }

    fn read_one(&mut self) -> Result<Frame> {
        let index = self.next;
        let expected = self.payload_len();
        let done = index * self.dim as u64 * 4;
        let buf = &mut self.buf;
        io::read_exact_or(&mut self.inner, buf, || Error::TruncatedPayload { expected, actual: done })?;
        let values: Vec<f32> = buf.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue { frame: index });
        }
        Frame::new(values)
    }

    /// Reads every remaining frame into memory.
    pub fn read_all(self) -> Result<FrameSet> {
        let dim = self.dim;
        let mut set = FrameSet::with_capacity(dim, (self.count - self.next).min(1 << 24) as usize);
        for frame in self {
            set.push(&frame?)?;
        }
        Ok(set)
    }
}

impl<R: Read> Iterator for FrameReader<R> {
    type Item = Result<Frame>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed || self.next >= self.count {
            return None;
        }
        let out = self.read_one();
        self.next += 1;
        if out.is_err() {
            self.failed = true;
        }
        Some(out)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = if self.failed { 0 } else { (self.count - self.next) as usize };
        (0, Some(left))
    }
}

/// Opens a frame file as a stream of validated frames.
pub fn load_frames(path: impl AsRef<Path>) -> Result<FrameReader<BufReader<File>>> {
    FrameReader::open(path)
}

/// Loads a whole frame file.
pub fn read_frames(path: impl AsRef<Path>) -> Result<FrameSet> {
    FrameReader::open(path)?.read_all()
}

/// Incremental frame file writer; the count is patched in on [`finish`](Self::finish).
pub struct FrameWriter<W: Write + Seek> {
    inner: W,
    dim: usize,
    count: u64,
}

impl<W: Write + Seek> FrameWriter<W> {
    pub fn new(mut inner: W, dim: usize) -> Result<Self> {
        inner.write_all(MAGIC)?;
        io::write_u32(&mut inner, io::len_u32(dim, "dimension")?)?;
        io::write_u64(&mut inner, 0)?;
        Ok(FrameWriter { inner, dim, count: 0 })
    }

    pub fn push(&mut self, frame: &[f32]) -> Result<()> {
        if frame.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: frame.len(),
            });
        }
        if frame.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue { frame: self.count });
        }
        io::write_f32s(&mut self.inner, frame)?;
        self.count += 1;
        Ok(())
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    /// Writes the final count into the header and returns the sink.
    pub fn finish(mut self) -> Result<W> {
        self.inner.seek(SeekFrom::Start(12))?;
        io::write_u64(&mut self.inner, self.count)?;
        self.inner.seek(SeekFrom::End(0))?;
        self.inner.flush()?;
        Ok(self.inner)
    }
}

/// Serializes a frame set.
pub fn write_frames(w: &mut impl Write, frames: &FrameSet) -> Result<()> {
    w.write_all(MAGIC)?;
    io::write_u32(w, io::len_u32(frames.dim(), "dimension")?)?;
    io::write_u64(w, frames.len() as u64)?;
    io::write_f32s(w, frames.as_flat())?;
    Ok(())
}

/// Element type of a headerless raw blob.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RawDtype {
    F32,
    F64,
}

/// Converts a headerless little-endian blob of `dim`-sized frames into a
/// frame file and returns the frame count. `f64` input is narrowed to `f32`.
pub fn import_raw<R: Read, W: Write + Seek>(input: R, out: W, dim: usize, dtype: RawDtype) -> Result<u64> {
    if dim == 0 {
        return Err(Error::invalid("dimension must be positive"));
    }
    if dtype == RawDtype::F64 {
        log::warn!("narrowing f64 input to f32");
    }
    let width = match dtype {
        RawDtype::F32 => 4,
        RawDtype::F64 => 8,
    };
    let mut input = BufReader::new(input);
    let mut writer = FrameWriter::new(BufWriter::new(out), dim)?;
    let mut raw = vec![0u8; dim * width];
    let mut frame = vec![0f32; dim];
    loop {
        let got = read_full(&mut input, &mut raw)?;
        if got == 0 {
            break;
        }
        if got < raw.len() {
            let consumed = writer.count() * raw.len() as u64 + got as u64;
            return Err(Error::TruncatedPayload {
                expected: consumed.div_ceil(raw.len() as u64) * raw.len() as u64,
                actual: consumed,
            });
        }
        for (v, c) in frame.iter_mut().zip(raw.chunks_exact(width)) {
            *v = match dtype {
                RawDtype::F32 => f32::from_le_bytes([c[0], c[1], c[2], c[3]]),
                RawDtype::F64 => f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]]) as f32,
            };
        }
        writer.push(&frame)?;
    }
    let count = writer.count();
    writer.finish()?.into_inner().map_err(|e| e.into_error())?;
    Ok(count)
}

fn read_full(r: &mut impl Read, buf: &mut [u8]) -> Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(filled)
}
