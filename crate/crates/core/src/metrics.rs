//! Reconstruction error and codebook usage.

use crate::codes::CodeVector;
use crate::error::{Error, Result};
use crate::frame::FrameSet;
use crate::quantizer::{stage_mse_curve, Quantizer};

/// Mean over frames of the squared L2 reconstruction error.
pub fn mse(original: &FrameSet, reconstructed: &FrameSet) -> Result<f64> {
    if original.len() != reconstructed.len() {
        return Err(Error::LengthMismatch {
            left: original.len(),
            right: reconstructed.len(),
        });
    }
    if original.dim() != reconstructed.dim() {
        return Err(Error::DimensionMismatch {
            expected: original.dim(),
            actual: reconstructed.dim(),
        });
    }
    if original.is_empty() {
        return Err(Error::EmptyInput);
    }
    let total: f64 = original
        .as_flat()
        .iter()
        .zip(reconstructed.as_flat())
        .map(|(&a, &b)| {
            let t = a as f64 - b as f64;
            t * t
        })
        .sum();
    Ok(total / original.len() as f64)
}

/// Per-stage usage counts of every code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeHistogram {
    k: usize,
    counts: Vec<Vec<u64>>,
    total: u64,
}

impl CodeHistogram {
    pub fn new(n_stages: usize, k: usize) -> Self {
        CodeHistogram {
            k,
            counts: vec![vec![0; k]; n_stages],
            total: 0,
        }
    }

    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let k = counts.first().map_or(0, |c| c.len());
        let total = counts.first().map_or(0, |c| c.iter().sum());
        for c in &counts {
            if c.len() != k {
                return Err(Error::LengthMismatch { left: c.len(), right: k });
            }
            if c.iter().sum::<u64>() != total {
                return Err(Error::invalid("every stage must count the same frames"));
            }
        }
        Ok(CodeHistogram { k, counts, total })
    }

    pub fn from_codes(n_stages: usize, k: usize, codes: &[CodeVector]) -> Result<Self> {
        let mut h = CodeHistogram::new(n_stages, k);
        for c in codes {
            h.add(c)?;
        }
        Ok(h)
    }

    pub fn add(&mut self, codes: &[u32]) -> Result<()> {
        if codes.len() != self.counts.len() {
            return Err(Error::LengthMismatch {
                left: codes.len(),
                right: self.counts.len(),
            });
        }
        if let Some((stage, &c)) = codes.iter().enumerate().find(|(_, &c)| c as usize >= self.k) {
            return Err(Error::IndexOutOfRange {
                stage,
                index: c as u64,
                k: self.k,
            });
        }
        for (stage, &c) in codes.iter().enumerate() {
            self.counts[stage][c as usize] += 1;
        }
        self.total += 1;
        Ok(())
    }

    /// Adds the counts of `other`, which must have the same shape.
    pub fn merge(&mut self, other: &CodeHistogram) -> Result<()> {
        if other.k != self.k || other.counts.len() != self.counts.len() {
            return Err(Error::invalid("histogram shapes differ"));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        self.total += other.total;
        Ok(())
    }

    pub fn counts(&self, stage: usize) -> &[u64] {
        &self.counts[stage]
    }

    pub fn n_stages(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.total
    }
}

/// `exp(H)` of the code usage distribution of one stage, with `0 ln 0 = 0`.
/// Lies in `[1, K]`.
pub fn perplexity(hist: &CodeHistogram, stage: usize) -> Result<f64> {
    let counts = hist
        .counts
        .get(stage)
        .ok_or_else(|| Error::invalid(format!("stage {stage} out of range")))?;
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::EmptyHistogram { stage });
    }
    let total = total as f64;
    let entropy: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.ln()
        })
        .sum();
    Ok(entropy.exp())
}

/// Per-stage perplexity of the codes `q` assigns to `frames`.
pub fn perplexity_curve<Q: Quantizer + ?Sized>(q: &Q, frames: &FrameSet) -> Result<Vec<f64>> {
    if frames.is_empty() {
        return Err(Error::EmptyInput);
    }
    let codes = q.encode_all(frames)?;
    let hist = CodeHistogram::from_codes(q.n_stages(), q.codebook_size(), &codes)?;
    (0..q.n_stages()).map(|s| perplexity(&hist, s)).collect()
}

/// Single-number perplexity of a model: the mean over stages.
pub fn aggregate_perplexity(curve: &[f64]) -> f64 {
    curve.iter().sum::<f64>() / curve.len().max(1) as f64
}

/// Full evaluation of a quantizer on a frame set.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub frames: usize,
    pub codebook_size: usize,
    /// MSE of the full reconstruction (equals the last stage MSE).
    pub mse: f64,
    pub stage_mse: Vec<f64>,
    pub stage_perplexity: Vec<f64>,
    pub perplexity: f64,
}

impl EvalReport {
    /// Line records `metric stage value`; stage 0 marks whole-model values.
    pub fn records(&self) -> Vec<(&'static str, usize, f64)> {
        let mut out = vec![("mse", 0, self.mse)];
        for (n, &v) in self.stage_mse.iter().enumerate() {
            out.push(("stage_mse", n + 1, v));
        }
        for (n, &v) in self.stage_perplexity.iter().enumerate() {
            out.push(("perplexity", n + 1, v));
        }
        out.push(("perplexity", 0, self.perplexity));
        out
    }

    /// Two-column `stage,perplexity` table.
    pub fn perplexity_csv(&self) -> String {
        let mut s = String::from("stage,perplexity\n");
        for (n, v) in self.stage_perplexity.iter().enumerate() {
            s.push_str(&format!("{},{}\n", n + 1, v));
        }
        s
    }
}

pub fn evaluate<Q: Quantizer + ?Sized>(q: &Q, frames: &FrameSet) -> Result<EvalReport> {
    let stage_mse = stage_mse_curve(q, frames)?;
    let stage_perplexity = perplexity_curve(q, frames)?;
    Ok(EvalReport {
        frames: frames.len(),
        codebook_size: q.codebook_size(),
        mse: *stage_mse.last().unwrap(),
        perplexity: aggregate_perplexity(&stage_perplexity),
        stage_mse,
        stage_perplexity,
    })
}
