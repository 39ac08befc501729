//! Codebooks, nearest-entry assignment and per-cluster spread statistics.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::frame::FrameSet;
use crate::io;
use crate::par;

/// Lower bound applied to every per-cluster standard deviation.
pub const SIGMA_FLOOR: f32 = 1e-6;

const MAGIC: &[u8; 8] = b"RESQCB1\0";
const FLAG_SCALES: u8 = 0b01;
const FLAG_NULL: u8 = 0b10;

/// K centroids in R^D, optionally with per-cluster scale vectors and a
/// reserved all-zero entry.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    k: usize,
    dim: usize,
    entries: Vec<f32>,
    scales: Option<Vec<f32>>,
    null_index: Option<usize>,
}

/// Nearest-entry selection for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub code: usize,
    /// `x - entries[code]`, before any rescaling.
    pub residual: Vec<f32>,
}

impl Codebook {
    /// Builds a codebook from a flat `K x D` row-major centroid buffer.
    pub fn new(dim: usize, entries: Vec<f32>) -> Result<Self> {
        if dim == 0 || entries.is_empty() || !entries.len().is_multiple_of(dim) {
            return Err(Error::invalid(format!(
                "codebook needs K >= 1 rows of dimension {dim}, got {} values",
                entries.len()
            )));
        }
        if let Some(pos) = entries.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue { frame: (pos / dim) as u64 });
        }
        Ok(Codebook {
            k: entries.len() / dim,
            dim,
            entries,
            scales: None,
            null_index: None,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entry(&self, k: usize) -> &[f32] {
        &self.entries[k * self.dim..(k + 1) * self.dim]
    }

    pub fn entries(&self) -> &[f32] {
        &self.entries
    }

    pub fn scale(&self, k: usize) -> Option<&[f32]> {
        self.scales.as_ref().map(|s| &s[k * self.dim..(k + 1) * self.dim])
    }

    pub fn scales(&self) -> Option<&[f32]> {
        self.scales.as_deref()
    }

    pub fn null_index(&self) -> Option<usize> {
        self.null_index
    }

    /// Attaches per-cluster scales. Entries below [`SIGMA_FLOOR`] are rejected.
    pub fn with_scales(mut self, scales: Vec<f32>) -> Result<Self> {
        if scales.len() != self.entries.len() {
            return Err(Error::LengthMismatch {
                left: scales.len(),
                right: self.entries.len(),
            });
        }
        if scales.iter().any(|s| !(s.is_finite() && *s >= SIGMA_FLOOR)) {
            return Err(Error::invalid("scales must be finite and >= SIGMA_FLOOR"));
        }
        self.scales = Some(scales);
        if let Some(null) = self.null_index {
            self.set_null(null);
        }
        Ok(self)
    }

    pub fn without_scales(mut self) -> Self {
        self.scales = None;
        self
    }

    /// Reserves entry `idx` as the null vector: zero centroid, unit scale.
    pub fn set_null(&mut self, idx: usize) {
        assert!(idx < self.k, "null index {idx} out of range");
        let dim = self.dim;
        self.entries[idx * dim..(idx + 1) * dim].fill(0.0);
        if let Some(scales) = self.scales.as_mut() {
            scales[idx * dim..(idx + 1) * dim].fill(1.0);
        }
        self.null_index = Some(idx);
    }

    /// Overwrites the smallest-norm centroid (lowest index on ties) with the
    /// null vector and returns its index.
    pub fn set_null_smallest_norm(&mut self) -> usize {
        let mut best = (0, f64::INFINITY);
        for k in 0..self.k {
            let norm: f64 = self.entry(k).iter().map(|&v| (v as f64) * (v as f64)).sum();
            if norm < best.1 {
                best = (k, norm);
            }
        }
        self.set_null(best.0);
        best.0
    }

    /// Index and squared distance of the entry nearest to `r`.
    /// Ties go to the lowest index.
    pub fn nearest(&self, r: &[f64]) -> (usize, f64) {
        debug_assert_eq!(r.len(), self.dim);
        let mut best = (0, f64::INFINITY);
        for (k, c) in self.entries.chunks_exact(self.dim).enumerate() {
            let d = sq_dist(r, c);
            if d < best.1 {
                best = (k, d);
            }
        }
        best
    }

    /// Like [`Codebook::nearest`] but the distance is `sum((s * (r - c))^2)`.
    pub fn nearest_scaled(&self, r: &[f64], s: &[f64]) -> (usize, f64) {
        debug_assert_eq!(r.len(), self.dim);
        let mut best = (0, f64::INFINITY);
        for (k, c) in self.entries.chunks_exact(self.dim).enumerate() {
            let d = sq_dist_scaled(r, c, s);
            if d < best.1 {
                best = (k, d);
            }
        }
        best
    }

    pub(crate) fn nearest_f32(&self, x: &[f32]) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (k, c) in self.entries.chunks_exact(self.dim).enumerate() {
            let d: f64 = x
                .iter()
                .zip(c)
                .map(|(&a, &b)| {
                    let t = a as f64 - b as f64;
                    t * t
                })
                .sum();
            if d < best.1 {
                best = (k, d);
            }
        }
        best
    }

    pub(crate) fn entry_mut(&mut self, k: usize) -> &mut [f32] {
        &mut self.entries[k * self.dim..(k + 1) * self.dim]
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        io::write_u32(w, io::len_u32(self.k, "codebook size")?)?;
        io::write_u32(w, io::len_u32(self.dim, "dimension")?)?;
        let mut flags = 0;
        if self.scales.is_some() {
            flags |= FLAG_SCALES;
        }
        if self.null_index.is_some() {
            flags |= FLAG_NULL;
        }
        io::write_u8(w, flags)?;
        if let Some(null) = self.null_index {
            io::write_u32(w, null as u32)?;
        }
        io::write_f32s(w, &self.entries)?;
        if let Some(scales) = &self.scales {
            io::write_f32s(w, scales)?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        io::read_magic(r, MAGIC)?;
        let k = io::read_u32(r)? as usize;
        let dim = io::read_u32(r)? as usize;
        let flags = io::read_u8(r)?;
        if k == 0 || dim == 0 {
            return Err(Error::CorruptHeader(format!("codebook K={k}, D={dim}")));
        }
        if flags & !(FLAG_SCALES | FLAG_NULL) != 0 {
            return Err(Error::CorruptHeader(format!("unknown codebook flags {flags:#04b}")));
        }
        let null_index = if flags & FLAG_NULL != 0 {
            let idx = io::read_u32(r)? as usize;
            if idx >= k {
                return Err(Error::CorruptHeader(format!("null index {idx} >= K={k}")));
            }
            Some(idx)
        } else {
            None
        };
        let entries = io::read_f32s(r, k * dim)?;
        let mut cb = Codebook::new(dim, entries)?;
        if flags & FLAG_SCALES != 0 {
            cb = cb.with_scales(io::read_f32s(r, k * dim)?)?;
        }
        if let Some(null) = null_index {
            if cb.entry(null).iter().any(|&v| v != 0.0) {
                return Err(Error::CorruptHeader("null entry is not the zero vector".into()));
            }
            cb.null_index = Some(null);
        }
        Ok(cb)
    }
}

#[inline]
pub(crate) fn sq_dist(r: &[f64], c: &[f32]) -> f64 {
    r.iter()
        .zip(c)
        .map(|(&a, &b)| {
            let t = a - b as f64;
            t * t
        })
        .sum()
}

#[inline]
pub(crate) fn sq_dist_scaled(r: &[f64], c: &[f32], s: &[f64]) -> f64 {
    r.iter()
        .zip(c)
        .zip(s)
        .map(|((&a, &b), &w)| {
            let t = w * (a - b as f64);
            t * t
        })
        .sum()
}

/// Selects the nearest entry to `x`, ties to the lowest index.
pub fn assign(codebook: &Codebook, x: &[f32]) -> Result<Assignment> {
    if x.len() != codebook.dim {
        return Err(Error::DimensionMismatch {
            expected: codebook.dim,
            actual: x.len(),
        });
    }
    let (code, _) = codebook.nearest_f32(x);
    let residual = x.iter().zip(codebook.entry(code)).map(|(a, b)| a - b).collect();
    Ok(Assignment { code, residual })
}

/// Fills per-cluster scales from the residuals of nearest-entry assignment.
pub fn cluster_stats(frames: &FrameSet, codebook: &Codebook) -> Result<Codebook> {
    if frames.is_empty() {
        return Err(Error::EmptyInput);
    }
    if frames.dim() != codebook.dim {
        return Err(Error::DimensionMismatch {
            expected: codebook.dim,
            actual: frames.dim(),
        });
    }
    let codes = par::map_indices(frames.len(), |i| codebook.nearest_f32(frames.row(i)).0);
    cluster_stats_with_codes(frames, &codes, codebook)
}

/// Fills per-cluster scales given an explicit cluster for every frame.
///
/// `scales[k][d]` is the population standard deviation of dimension `d` of
/// `x - entries[k]` over the frames in cluster `k`, floored at
/// [`SIGMA_FLOOR`]. Clusters with fewer than two members and the null entry
/// get unit scales.
pub fn cluster_stats_with_codes(frames: &FrameSet, codes: &[usize], codebook: &Codebook) -> Result<Codebook> {
    if frames.is_empty() {
        return Err(Error::EmptyInput);
    }
    if frames.len() != codes.len() {
        return Err(Error::LengthMismatch {
            left: frames.len(),
            right: codes.len(),
        });
    }
    let (k, dim) = (codebook.k, codebook.dim);
    let mut counts = vec![0usize; k];
    let mut sums = vec![0f64; k * dim];
    for (x, &c) in frames.iter().zip(codes) {
        counts[c] += 1;
        for (d, (&xv, &cv)) in x.iter().zip(codebook.entry(c)).enumerate() {
            sums[c * dim + d] += xv as f64 - cv as f64;
        }
    }
    let means: Vec<f64> = sums
        .iter()
        .enumerate()
        .map(|(i, s)| if counts[i / dim] > 0 { s / counts[i / dim] as f64 } else { 0.0 })
        .collect();
    let mut sq = vec![0f64; k * dim];
    for (x, &c) in frames.iter().zip(codes) {
        for (d, (&xv, &cv)) in x.iter().zip(codebook.entry(c)).enumerate() {
            let t = (xv as f64 - cv as f64) - means[c * dim + d];
            sq[c * dim + d] += t * t;
        }
    }
    let mut scales = vec![1.0f32; k * dim];
    for c in 0..k {
        if counts[c] < 2 || codebook.null_index == Some(c) {
            continue;
        }
        for d in 0..dim {
            let sd = (sq[c * dim + d] / counts[c] as f64).sqrt() as f32;
            scales[c * dim + d] = sd.max(SIGMA_FLOOR);
        }
    }
    codebook.clone().with_scales(scales)
}
