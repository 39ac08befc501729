//! Conventional residual vector quantization and its scale-standardized
//! variant.
//!
//! Every stage after the first reserves its smallest-norm centroid as a null
//! (zero) entry, so selecting it leaves the reconstruction unchanged and the
//! per-frame error can never grow with depth.
//!
//! In the [`Variant::Improved`] model each cluster also carries a per-dimension
//! standard deviation `sigma`. After stage `n` selects centroid `c` the residual
//! is re-standardized, `r_{n+1} = (r_n - c) / sigma_c`, and the decoder undoes
//! this with cumulative scales: `x_hat = sum_n s_n * c_n` where `s_1 = 1` and
//! `s_{n+1} = s_n * sigma_{c_n}`.

use std::io::{Read, Write};

use crate::codebook::{cluster_stats_with_codes, Codebook};
use crate::codes::CodeVector;
use crate::error::{Error, Result};
use crate::frame::FrameSet;
use crate::io;
use crate::kmeans::{kmeans_fit, KMeansConfig};
use crate::par;
use crate::quantizer::{stage_mse_curve, Quantizer};

const MAGIC: &[u8; 8] = b"RESQRVQ1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Plain,
    Improved,
}

/// How an [`Variant::Improved`] stage picks its centroid.
///
/// Both rules walk the same standardized residual recursion; they differ only
/// in the distance used for the per-stage argmin. Plain models ignore this.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StageSearch {
    /// Minimize the reconstruction error in the original space,
    /// `|| s_n * (r_n - c) ||^2`. This keeps the null entry a guaranteed
    /// non-increase of the per-frame error.
    #[default]
    Reconstruction,
    /// Minimize `|| r_n - c ||^2` on the standardized residual itself.
    Standardized,
}

/// Codes plus the encoder's final residual bookkeeping. The reconstruction
/// error of the encoded frame is `sum((scale * residual)^2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodeTrace {
    pub codes: CodeVector,
    /// Final (standardized, for Improved) residual.
    pub residual: Vec<f64>,
    /// Cumulative scale mapping `residual` back to the original space.
    pub scale: Vec<f64>,
}

impl EncodeTrace {
    pub fn error(&self) -> f64 {
        self.residual
            .iter()
            .zip(&self.scale)
            .map(|(r, s)| {
                let t = s * r;
                t * t
            })
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RvqModel {
    variant: Variant,
    codebooks: Vec<Codebook>,
    search: StageSearch,
}

impl RvqModel {
    pub fn from_codebooks(variant: Variant, codebooks: Vec<Codebook>) -> Result<Self> {
        let first = codebooks.first().ok_or(Error::EmptyInput)?;
        let (k, dim) = (first.k(), first.dim());
        for (n, cb) in codebooks.iter().enumerate() {
            if cb.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: cb.dim(),
                });
            }
            if cb.k() != k {
                return Err(Error::invalid(format!("stage {n} has K={}, expected {k}", cb.k())));
            }
            if n > 0 && cb.null_index().is_none() {
                return Err(Error::invalid(format!("stage {n} has no null entry")));
            }
            match variant {
                Variant::Plain if cb.scales().is_some() => return Err(Error::invalid(format!("plain model stage {n} carries scales"))),
                Variant::Improved if cb.scales().is_none() => {
                    return Err(Error::invalid(format!("improved model stage {n} has no scales")))
                }
                _ => {}
            }
        }
        Ok(RvqModel {
            variant,
            codebooks,
            search: StageSearch::default(),
        })
    }

    /// Sets the search rule used by [`Quantizer::encode`].
    pub fn with_search(mut self, search: StageSearch) -> Self {
        self.search = search;
        self
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn search(&self) -> StageSearch {
        self.search
    }

    pub fn codebooks(&self) -> &[Codebook] {
        &self.codebooks
    }

    /// Plain model over the same centroids, dropping any scales.
    pub fn to_plain(&self) -> RvqModel {
        RvqModel {
            variant: Variant::Plain,
            codebooks: self.codebooks.iter().cloned().map(Codebook::without_scales).collect(),
            search: self.search,
        }
    }

    pub fn encode_with(&self, x: &[f32], search: StageSearch) -> Result<CodeVector> {
        self.encode_traced(x, search).map(|t| t.codes)
    }

    pub fn encode_traced(&self, x: &[f32], search: StageSearch) -> Result<EncodeTrace> {
        self.check_dim(x.len())?;
        let mut r: Vec<f64> = x.iter().map(|&v| v as f64).collect();
        let mut s = vec![1.0f64; x.len()];
        let codes = self
            .codebooks
            .iter()
            .map(|cb| stage_step(cb, self.variant, search, &mut r, &mut s) as u32)
            .collect();
        Ok(EncodeTrace {
            codes: CodeVector::new(codes),
            residual: r,
            scale: s,
        })
    }

    fn check_dim(&self, actual: usize) -> Result<()> {
        if actual != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual,
            });
        }
        Ok(())
    }

    /// Per-stage MSE of prefix reconstructions over `frames`.
    pub fn eval(&self, frames: &FrameSet) -> Result<Vec<f64>> {
        stage_mse_curve(self, frames)
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        io::write_u8(
            w,
            match self.variant {
                Variant::Plain => 0,
                Variant::Improved => 1,
            },
        )?;
        io::write_u32(w, io::len_u32(self.codebooks.len(), "stage count")?)?;
        for cb in &self.codebooks {
            cb.write_to(w)?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        io::read_magic(r, MAGIC)?;
        Self::read_body(r)
    }

    pub(crate) fn read_body(r: &mut impl Read) -> Result<Self> {
        let variant = match io::read_u8(r)? {
            0 => Variant::Plain,
            1 => Variant::Improved,
            v => return Err(Error::CorruptHeader(format!("unknown rvq variant {v}"))),
        };
        let n = io::read_u32(r)? as usize;
        if n == 0 {
            return Err(Error::CorruptHeader("rvq model with zero stages".into()));
        }
        let codebooks = (0..n).map(|_| Codebook::read_from(r)).collect::<Result<Vec<_>>>()?;
        RvqModel::from_codebooks(variant, codebooks).map_err(|e| Error::CorruptHeader(e.to_string()))
    }
}

/// One encoder stage: selects a centroid for residual `r` and advances the
/// residual recursion in place. Returns the selected index.
fn stage_step(cb: &Codebook, variant: Variant, search: StageSearch, r: &mut [f64], s: &mut [f64]) -> usize {
    match variant {
        Variant::Plain => {
            let (k, _) = cb.nearest(r);
            for (rv, &c) in r.iter_mut().zip(cb.entry(k)) {
                *rv -= c as f64;
            }
            k
        }
        Variant::Improved => {
            let (k, _) = match search {
                StageSearch::Reconstruction => cb.nearest_scaled(r, s),
                StageSearch::Standardized => cb.nearest(r),
            };
            let sigma = cb.scale(k).expect("improved codebooks carry scales");
            for ((rv, sv), (&c, &sg)) in r.iter_mut().zip(s.iter_mut()).zip(cb.entry(k).iter().zip(sigma)) {
                *rv = (*rv - c as f64) / sg as f64;
                *sv *= sg as f64;
            }
            k
        }
    }
}

impl Quantizer for RvqModel {
    fn dim(&self) -> usize {
        self.codebooks[0].dim()
    }

    fn n_stages(&self) -> usize {
        self.codebooks.len()
    }

    fn codebook_size(&self) -> usize {
        self.codebooks[0].k()
    }

    fn encode(&self, x: &[f32]) -> Result<CodeVector> {
        self.encode_with(x, self.search)
    }

    fn decode_prefixes(&self, codes: &[u32]) -> Result<Vec<Vec<f64>>> {
        if codes.len() != self.codebooks.len() {
            return Err(Error::LengthMismatch {
                left: codes.len(),
                right: self.codebooks.len(),
            });
        }
        let dim = self.dim();
        let mut x_hat = vec![0.0f64; dim];
        let mut s = vec![1.0f64; dim];
        let mut prefixes = Vec::with_capacity(codes.len());
        for (stage, (cb, &code)) in self.codebooks.iter().zip(codes).enumerate() {
            let k = code as usize;
            if k >= cb.k() {
                return Err(Error::IndexOutOfRange {
                    stage,
                    index: code as u64,
                    k: cb.k(),
                });
            }
            for ((xv, sv), &c) in x_hat.iter_mut().zip(&s).zip(cb.entry(k)) {
                *xv += sv * c as f64;
            }
            if self.variant == Variant::Improved {
                for (sv, &sg) in s.iter_mut().zip(cb.scale(k).unwrap()) {
                    *sv *= sg as f64;
                }
            }
            prefixes.push(x_hat.clone());
        }
        Ok(prefixes)
    }
}

/// Trains a plain RVQ: stage `n` is fitted on the residuals of stages `1..n`.
pub fn rvq_train(frames: &FrameSet, n_stages: usize, cfg: &KMeansConfig) -> Result<RvqModel> {
    train(frames, n_stages, cfg, Variant::Plain, StageSearch::default())
}

/// Trains the scale-standardized RVQ with the default search rule.
pub fn irvq_train(frames: &FrameSet, n_stages: usize, cfg: &KMeansConfig) -> Result<RvqModel> {
    irvq_train_with(frames, n_stages, cfg, StageSearch::default())
}

pub fn irvq_train_with(frames: &FrameSet, n_stages: usize, cfg: &KMeansConfig, search: StageSearch) -> Result<RvqModel> {
    train(frames, n_stages, cfg, Variant::Improved, search)
}

fn train(frames: &FrameSet, n_stages: usize, cfg: &KMeansConfig, variant: Variant, search: StageSearch) -> Result<RvqModel> {
    if frames.is_empty() {
        return Err(Error::EmptyInput);
    }
    if n_stages == 0 {
        return Err(Error::invalid("need at least one codebook"));
    }
    let dim = frames.dim();
    let m = frames.len();
    let mut r: Vec<f64> = frames.as_flat().iter().map(|&v| v as f64).collect();
    let mut s = vec![1.0f64; r.len()];
    let mut codebooks = Vec::with_capacity(n_stages);

    for stage in 0..n_stages {
        let input = FrameSet::from_flat(dim, r.iter().map(|&v| v as f32).collect())?;
        let stage_cfg = cfg.clone().with_seed(cfg.seed.wrapping_add(stage as u64));
        let mut cb = fit_stage(&input, &stage_cfg, stage)?;
        if stage > 0 {
            cb.set_null_smallest_norm();
        }
        if variant == Variant::Improved {
            let codes = par::map_indices(m, |i| {
                let (ri, si) = (&r[i * dim..(i + 1) * dim], &s[i * dim..(i + 1) * dim]);
                match search {
                    StageSearch::Reconstruction => cb.nearest_scaled(ri, si).0,
                    StageSearch::Standardized => cb.nearest(ri).0,
                }
            });
            cb = cluster_stats_with_codes(&input, &codes, &cb)?;
        }
        for (ri, si) in r.chunks_exact_mut(dim).zip(s.chunks_exact_mut(dim)) {
            stage_step(&cb, variant, search, ri, si);
        }
        log::debug!("stage {} fitted ({} frames, K={})", stage + 1, m, cb.k());
        codebooks.push(cb);
    }
    Ok(RvqModel::from_codebooks(variant, codebooks)?.with_search(search))
}

/// Fits one stage codebook. Later stages whose residuals have collapsed to
/// fewer than K distinct points take those points directly, padded with
/// zero vectors.
fn fit_stage(input: &FrameSet, cfg: &KMeansConfig, stage: usize) -> Result<Codebook> {
    match kmeans_fit(input, cfg) {
        Err(Error::DegenerateData { .. }) if stage > 0 => {
            let mut seen = std::collections::HashSet::new();
            let mut entries = Vec::with_capacity(cfg.k * input.dim());
            for row in input.iter() {
                let key: Vec<u32> = row.iter().map(|v| (v + 0.0).to_bits()).collect();
                if seen.insert(key) {
                    entries.extend_from_slice(row);
                }
            }
            entries.resize(cfg.k * input.dim(), 0.0);
            Codebook::new(input.dim(), entries)
        }
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plain_two_stage() -> RvqModel {
        let c1 = Codebook::new(2, vec![0.0, 0.0, 4.0, 0.0, 0.0, 4.0, 4.0, 4.0]).unwrap();
        let mut c2 = Codebook::new(2, vec![0.5, 0.0, 0.0, 0.0, 0.0, 0.5, -0.5, -0.5]).unwrap();
        c2.set_null(1);
        RvqModel::from_codebooks(Variant::Plain, vec![c1, c2]).unwrap()
    }

    #[test]
    fn decode_is_additive() {
        let m = plain_two_stage();
        assert_eq!(m.decode(&CodeVector::new(vec![3, 2])).unwrap(), vec![4.0, 4.5]);
        assert_eq!(m.decode(&CodeVector::new(vec![2, 1])).unwrap(), vec![0.0, 4.0]);
    }

    #[test]
    fn first_stage_centroid_codes_null_afterwards() {
        let m = plain_two_stage();
        let codes = m.encode(&[4.0, 0.0]).unwrap();
        assert_eq!(&*codes, &[1, 1]);
        assert_eq!(m.decode(&codes).unwrap(), vec![4.0, 0.0]);
    }

    #[test]
    fn out_of_range_code() {
        let m = plain_two_stage();
        assert!(matches!(
            m.decode(&CodeVector::new(vec![0, 9])),
            Err(Error::IndexOutOfRange { stage: 1, index: 9, k: 4 })
        ));
    }

    #[test]
    fn encode_rejects_dim() {
        assert!(matches!(
            plain_two_stage().encode(&[1.0]),
            Err(Error::DimensionMismatch { expected: 2, actual: 1 })
        ));
    }

    #[test]
    fn invariants_enforced_on_construction() {
        let c1 = Codebook::new(1, vec![0.0, 1.0]).unwrap();
        let c2 = Codebook::new(1, vec![0.5, 1.0]).unwrap();
        assert!(RvqModel::from_codebooks(Variant::Plain, vec![c1.clone(), c2]).is_err());
        assert!(RvqModel::from_codebooks(Variant::Improved, vec![c1]).is_err());
    }

    #[test]
    fn grid_data_stays_exact() {
        let frames = FrameSet::from_flat(1, (0..64).map(|i| (i % 4) as f32).collect()).unwrap();
        let m = rvq_train(&frames, 2, &KMeansConfig::new(4).with_seed(1)).unwrap();
        let curve = m.eval(&frames).unwrap();
        assert_eq!(curve, vec![0.0, 0.0]);
        let null = m.codebooks()[1].null_index().unwrap() as u32;
        for x in frames.iter() {
            assert_eq!(m.encode(x).unwrap()[1], null);
        }
    }

    #[test]
    fn model_roundtrip() {
        let frames = FrameSet::from_flat(2, (0..200).map(|i| ((i * 7919) % 97) as f32 * 0.1).collect()).unwrap();
        let m = irvq_train(&frames, 3, &KMeansConfig::new(4).with_max_iters(20)).unwrap();
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..8], b"RESQRVQ1");
        assert_eq!(buf[8], 1);
        assert_eq!(RvqModel::read_from(&mut buf.as_slice()).unwrap(), m);
    }
}
