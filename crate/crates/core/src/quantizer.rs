//! Common surface of the trained quantizers.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::codes::CodeVector;
use crate::error::{Error, Result};
use crate::frame::FrameSet;
use crate::io;
use crate::par;
use crate::qinco::QincoModel;
use crate::rvq::RvqModel;

/// A multi-stage quantizer mapping D-dimensional frames to N code indices.
pub trait Quantizer: Sync {
    fn dim(&self) -> usize;
    fn n_stages(&self) -> usize;
    fn codebook_size(&self) -> usize;

    fn encode(&self, x: &[f32]) -> Result<CodeVector>;

    /// Reconstructions after each of the N stages, in f64.
    fn decode_prefixes(&self, codes: &[u32]) -> Result<Vec<Vec<f64>>>;

    fn decode(&self, codes: &[u32]) -> Result<Vec<f32>> {
        let prefixes = self.decode_prefixes(codes)?;
        Ok(prefixes.last().map(|x| x.iter().map(|&v| v as f32).collect()).unwrap_or_default())
    }

    /// Encodes every frame; output order matches input order.
    fn encode_all(&self, frames: &FrameSet) -> Result<Vec<CodeVector>> {
        if frames.dim() != self.dim() && !frames.is_empty() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: frames.dim(),
            });
        }
        par::try_map_indices(frames.len(), |i| self.encode(frames.row(i)))
    }

    fn decode_all(&self, codes: &[CodeVector]) -> Result<FrameSet> {
        let rows = par::try_map_indices(codes.len(), |i| self.decode(&codes[i]))?;
        let mut out = FrameSet::with_capacity(self.dim(), rows.len());
        for row in rows {
            out.push(&row)?;
        }
        Ok(out)
    }
}

/// Mean squared reconstruction error after each stage:
/// `curve[n] = mean_x || x - x_hat_{n+1}(x) ||^2`.
pub fn stage_mse_curve<Q: Quantizer + ?Sized>(q: &Q, frames: &FrameSet) -> Result<Vec<f64>> {
    if frames.is_empty() {
        return Err(Error::EmptyInput);
    }
    if frames.dim() != q.dim() {
        return Err(Error::DimensionMismatch {
            expected: q.dim(),
            actual: frames.dim(),
        });
    }
    let per_frame = par::try_map_indices(frames.len(), |i| {
        let x = frames.row(i);
        let codes = q.encode(x)?;
        let prefixes = q.decode_prefixes(&codes)?;
        Ok::<_, Error>(prefixes.iter().map(|p| sq_err(x, p)).collect::<Vec<f64>>())
    })?;
    let mut curve = vec![0.0; q.n_stages()];
    for errs in &per_frame {
        for (acc, e) in curve.iter_mut().zip(errs) {
            *acc += e;
        }
    }
    let m = frames.len() as f64;
    Ok(curve.into_iter().map(|v| v / m).collect())
}

pub(crate) fn sq_err(x: &[f32], x_hat: &[f64]) -> f64 {
    x.iter()
        .zip(x_hat)
        .map(|(&a, &b)| {
            let t = a as f64 - b;
            t * t
        })
        .sum()
}

/// A quantizer loaded from disk, dispatching on the container magic.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyModel {
    Rvq(RvqModel),
    Qinco(QincoModel),
}

impl AnyModel {
    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        io::read_exact_or(r, &mut magic, || Error::CorruptHeader("unexpected end of header".into()))?;
        match &magic {
            b"RESQRVQ1" => Ok(AnyModel::Rvq(RvqModel::read_body(r)?)),
            b"RESQQNC1" => Ok(AnyModel::Qinco(QincoModel::read_body(r)?)),
            other => Err(Error::CorruptHeader(format!(
                "unknown model magic {:?}",
                String::from_utf8_lossy(other)
            ))),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        match self {
            AnyModel::Rvq(m) => m.write_to(w),
            AnyModel::Qinco(m) => m.write_to(w),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn as_quantizer(&self) -> &dyn Quantizer {
        match self {
            AnyModel::Rvq(m) => m,
            AnyModel::Qinco(m) => m,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            AnyModel::Rvq(m) => match m.variant() {
                crate::rvq::Variant::Plain => "rvq",
                crate::rvq::Variant::Improved => "irvq",
            },
            AnyModel::Qinco(_) => "qinco",
        }
    }
}
