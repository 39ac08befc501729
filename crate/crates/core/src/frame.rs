//! Latent frames and dense frame collections.

use std::ops::Deref;

use crate::error::{Error, Result};

/// A single D-dimensional latent vector with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame(Vec<f32>);

impl Frame {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue { frame: 0 });
        }
        Ok(Frame(values))
    }

    pub fn zeros(dim: usize) -> Self {
        Frame(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }
}

impl Deref for Frame {
    type Target = [f32];

    fn deref(&self) -> &[f32] {
        &self.0
    }
}

/// Row-major collection of frames sharing one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSet {
    dim: usize,
    data: Vec<f32>,
}

impl FrameSet {
    pub fn new(dim: usize) -> Self {
        FrameSet { dim, data: Vec::new() }
    }

    pub fn with_capacity(dim: usize, frames: usize) -> Self {
        FrameSet {
            dim,
            data: Vec::with_capacity(dim * frames),
        }
    }

    /// Wraps a flat row-major buffer, validating its length and finiteness.
    pub fn from_flat(dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("frame dimension must be positive"));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(Error::LengthMismatch {
                left: data.len(),
                right: dim,
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue { frame: (pos / dim) as u64 });
        }
        Ok(FrameSet { dim, data })
    }

    pub fn from_rows<I, R>(dim: usize, rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = R>,
        R: AsRef<[f32]>,
    {
        let mut set = FrameSet::new(dim);
        for row in rows {
            set.push(row.as_ref())?;
        }
        Ok(set)
    }

    pub fn push(&mut self, row: &[f32]) -> Result<()> {
        if row.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: row.len(),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue { frame: self.len() as u64 });
        }
        self.data.extend_from_slice(row);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.data.chunks_exact(self.dim.max(1))
    }

    pub fn as_flat(&self) -> &[f32] {
        &self.data
    }

    pub fn into_flat(self) -> Vec<f32> {
        self.data
    }

    /// Copies the selected rows, in the given order, into a new set.
    pub fn select(&self, indices: &[usize]) -> FrameSet {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        FrameSet { dim: self.dim, data }
    }

    pub fn slice(&self, range: std::ops::Range<usize>) -> FrameSet {
        FrameSet {
            dim: self.dim,
            data: self.data[range.start * self.dim..range.end * self.dim].to_vec(),
        }
    }
}
