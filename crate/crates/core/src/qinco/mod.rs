//! Residual quantization with implicit neural codebooks.
//!
//! Stage 1 selects directly from its base codebook. Every later stage `n`
//! adapts each base centroid `c_bar` to the current partial reconstruction
//! with a [`StageNet`], `c = f_n(x_hat_n, c_bar)`, picks the candidate that
//! minimizes `|| x - (x_hat_n + c) ||^2` and updates
//! `x_hat_{n+1} = x_hat_n + c`. Decoding replays the same recursion.
//!
//! Training minimizes `sum_n mean || x - x_hat_{n+1} ||^2` with code
//! selections held fixed, back-propagating through the whole sequential chain.

mod gradcheck;
pub mod net;
mod train;

use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use gradcheck::{gradient_check, GradCheckReport, GradSample, GRAD_CHECK_ABS_FLOOR};
pub use net::{Affine, Real, StageNet};
pub use train::{qinco_train_step, QincoTrainer, StepReport, TrainConfig};

use crate::codebook::Codebook;
use crate::codes::CodeVector;
use crate::error::{Error, Result};
use crate::frame::FrameSet;
use crate::io;
use crate::par;
use crate::quantizer::Quantizer;
use crate::rvq::{RvqModel, Variant};

const MAGIC: &[u8; 8] = b"RESQQNC1";

/// Frames encoded per parallel work item.
const ENCODE_CHUNK: usize = 16;

/// Base codebooks and per-stage networks in a given precision.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Network<T> {
    pub dim: usize,
    pub k: usize,
    /// Per stage, `K x D` row-major.
    pub base: Vec<Vec<T>>,
    /// Networks for stages `2..=N`.
    pub stages: Vec<StageNet<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QincoModel {
    codebooks: Vec<Codebook>,
    blocks: usize,
    hidden: usize,
    net: Network<f32>,
}

/// Loss value with its per-stage breakdown.
#[derive(Debug, Clone, PartialEq)]
pub struct Loss {
    pub total: f64,
    pub per_stage: Vec<f64>,
}

impl QincoModel {
    /// Wraps the codebooks of a plain RVQ with freshly initialized networks
    /// whose output projections are zero, so the initial model encodes and
    /// decodes exactly like the base RVQ.
    pub fn init(base: &RvqModel, blocks: usize, hidden: usize, seed: u64) -> Result<Self> {
        if base.variant() != Variant::Plain {
            return Err(Error::invalid("implicit codebooks start from a plain RVQ"));
        }
        if hidden == 0 {
            return Err(Error::invalid("hidden width must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = base.dim();
        let stages = (1..base.n_stages())
            .map(|_| StageNet::init(dim, hidden, blocks, &mut rng))
            .collect();
        Ok(Self::from_parts(base.codebooks().to_vec(), blocks, hidden, stages))
    }

    fn from_parts(codebooks: Vec<Codebook>, blocks: usize, hidden: usize, stages: Vec<StageNet<f32>>) -> Self {
        let net = Network {
            dim: codebooks[0].dim(),
            k: codebooks[0].k(),
            base: codebooks.iter().map(|cb| cb.entries().to_vec()).collect(),
            stages,
        };
        QincoModel {
            codebooks,
            blocks,
            hidden,
            net,
        }
    }

    pub fn codebooks(&self) -> &[Codebook] {
        &self.codebooks
    }

    pub fn blocks(&self) -> usize {
        self.blocks
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    /// Networks of stages `2..=N`.
    pub fn stages(&self) -> &[StageNet<f32>] {
        &self.net.stages
    }

    pub fn stages_mut(&mut self) -> &mut [StageNet<f32>] {
        &mut self.net.stages
    }

    pub(crate) fn network(&self) -> &Network<f32> {
        &self.net
    }

    /// Parameters per stage network.
    pub fn stage_param_count(&self) -> usize {
        self.net.stages.first().map_or(0, |s| s.param_count())
    }

    /// The plain RVQ over the base codebooks.
    pub fn base_model(&self) -> RvqModel {
        RvqModel::from_codebooks(Variant::Plain, self.codebooks.clone()).expect("base codebooks were validated")
    }

    /// Codes and final reconstructions for a batch of frames.
    pub fn encode_batch(&self, frames: &FrameSet) -> Result<(Vec<CodeVector>, FrameSet)> {
        self.check_dim(frames.dim())?;
        let out = encode_frames(&self.net, frames);
        let codes = out
            .codes
            .chunks_exact(self.n_stages())
            .map(|c| CodeVector::new(c.to_vec()))
            .collect();
        Ok((codes, FrameSet::from_flat(self.net.dim, out.x_hat)?))
    }

    /// Training objective on `batch`, with codes chosen by the current model.
    pub fn loss(&self, batch: &FrameSet) -> Result<Loss> {
        if batch.is_empty() {
            return Err(Error::EmptyInput);
        }
        self.check_dim(batch.dim())?;
        let codes = encode_frames(&self.net, batch).codes;
        let x: Vec<f32> = batch.as_flat().to_vec();
        let (total, per_stage) = loss_with_codes(&self.net, &x, &codes);
        Ok(Loss { total, per_stage })
    }

    fn check_dim(&self, actual: usize) -> Result<()> {
        if actual != self.net.dim {
            return Err(Error::DimensionMismatch {
                expected: self.net.dim,
                actual,
            });
        }
        Ok(())
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        for v in [self.n_stages(), self.net.k, self.net.dim, self.blocks, self.hidden] {
            io::write_u32(w, io::len_u32(v, "model header field")?)?;
        }
        for cb in &self.codebooks {
            cb.write_to(w)?;
        }
        for (s, net) in self.net.stages.iter().enumerate() {
            for (name, shape, data) in net.tensors() {
                let name = format!("stage{}.{name}", s + 2);
                io::write_u32(w, name.len() as u32)?;
                w.write_all(name.as_bytes())?;
                io::write_u32(w, shape.len() as u32)?;
                for d in &shape {
                    io::write_u32(w, *d as u32)?;
                }
                io::write_f32s(w, data)?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        io::read_magic(r, MAGIC)?;
        Self::read_body(r)
    }

    pub(crate) fn read_body(r: &mut impl Read) -> Result<Self> {
        let n = io::read_u32(r)? as usize;
        let k = io::read_u32(r)? as usize;
        let dim = io::read_u32(r)? as usize;
        let blocks = io::read_u32(r)? as usize;
        let hidden = io::read_u32(r)? as usize;
        if n == 0 || k == 0 || dim == 0 || hidden == 0 {
            return Err(Error::CorruptHeader(format!("qinco header N={n} K={k} D={dim} d_h={hidden}")));
        }
        let codebooks = (0..n).map(|_| Codebook::read_from(r)).collect::<Result<Vec<_>>>()?;
        RvqModel::from_codebooks(Variant::Plain, codebooks.clone()).map_err(|e| Error::CorruptHeader(e.to_string()))?;
        if codebooks[0].k() != k || codebooks[0].dim() != dim {
            return Err(Error::CorruptHeader("codebook shape disagrees with header".into()));
        }
        let mut stages = Vec::with_capacity(n - 1);
        for s in 0..n - 1 {
            let mut net = StageNet::<f32>::zeros(dim, hidden, blocks);
            let expected: Vec<(String, Vec<usize>)> = net
                .tensors()
                .into_iter()
                .map(|(name, shape, _)| (format!("stage{}.{name}", s + 2), shape))
                .collect();
            for ((name, shape), slot) in expected.into_iter().zip(net.tensors_mut()) {
                let name_len = io::read_u32(r)? as usize;
                if name_len > 256 {
                    return Err(Error::CorruptHeader(format!("tensor name length {name_len}")));
                }
                let mut buf = vec![0u8; name_len];
                io::read_exact_or(r, &mut buf, || Error::CorruptHeader("truncated tensor name".into()))?;
                if buf != name.as_bytes() {
                    return Err(Error::CorruptHeader(format!(
                        "expected tensor {name}, found {}",
                        String::from_utf8_lossy(&buf)
                    )));
                }
                let rank = io::read_u32(r)? as usize;
                let dims = (0..rank).map(|_| io::read_u32(r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
                if dims != shape {
                    return Err(Error::CorruptHeader(format!(
                        "tensor {name} has shape {dims:?}, expected {shape:?}"
                    )));
                }
                let data = io::read_f32s(r, slot.len())?;
                if data.iter().any(|v| !v.is_finite()) {
                    return Err(Error::CorruptHeader(format!("tensor {name} holds non-finite values")));
                }
                slot.copy_from_slice(&data);
            }
            stages.push(net);
        }
        Ok(Self::from_parts(codebooks, blocks, hidden, stages))
    }
}

/// Builds an initialized model from a plain RVQ base.
pub fn qinco_init(base: &RvqModel, blocks: usize, hidden: usize, seed: u64) -> Result<QincoModel> {
    QincoModel::init(base, blocks, hidden, seed)
}

impl<T: Real> Network<T> {
    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            dim: self.dim,
            k: self.k,
            base: self
                .base
                .iter()
                .map(|b| b.iter().map(|&v| U::from_f64(v.to_f64())).collect())
                .collect(),
            stages: self.stages.iter().map(|s| s.cast()).collect(),
        }
    }

    fn n_stages(&self) -> usize {
        self.base.len()
    }
}

pub(crate) struct EncodeOutput<T> {
    /// `B x N`, row-major.
    pub codes: Vec<u32>,
    /// Final reconstructions, `B x D`.
    pub x_hat: Vec<T>,
}

/// Encodes every frame of `frames`, fanning out over chunks of frames.
pub(crate) fn encode_frames<T: Real>(net: &Network<T>, frames: &FrameSet) -> EncodeOutput<T> {
    let parts = par::map_chunks(frames.len(), ENCODE_CHUNK, |range| {
        let x = &frames.as_flat()[range.start * net.dim..range.end * net.dim];
        encode_chunk(net, x)
    });
    let mut out = EncodeOutput {
        codes: Vec::with_capacity(frames.len() * net.n_stages()),
        x_hat: Vec::with_capacity(frames.len() * net.dim),
    };
    for p in parts {
        out.codes.extend(p.codes);
        out.x_hat.extend(p.x_hat);
    }
    out
}

/// Greedy sequential encode of a block of frames (`x` is `B x D`).
///
/// Distances are taken in f64 on a residual tracked by running subtraction,
/// which makes the zero-network model select exactly the plain-RVQ codes.
fn encode_chunk<T: Real>(net: &Network<T>, x: &[f32]) -> EncodeOutput<T> {
    let (dim, k) = (net.dim, net.k);
    let rows = x.len() / dim;
    let n = net.n_stages();
    let mut r: Vec<f64> = x.iter().map(|&v| v as f64).collect();
    let mut x_hat = vec![T::zero(); rows * dim];
    let mut codes = vec![0u32; rows * n];

    for stage in 0..n {
        let base = &net.base[stage];
        let cands;
        let cands: &[T] = if stage == 0 {
            base
        } else {
            cands = net.stages[stage - 1].candidates(&x_hat, base);
            &cands
        };
        for b in 0..rows {
            let rb = &mut r[b * dim..(b + 1) * dim];
            let block = if stage == 0 {
                cands
            } else {
                &cands[b * k * dim..(b + 1) * k * dim]
            };
            let mut best = (0usize, f64::INFINITY);
            for (j, c) in block.chunks_exact(dim).enumerate() {
                let d: f64 = rb
                    .iter()
                    .zip(c)
                    .map(|(&a, &cv)| {
                        let t = a - cv.to_f64();
                        t * t
                    })
                    .sum();
                if d < best.1 {
                    best = (j, d);
                }
            }
            let c = &block[best.0 * dim..(best.0 + 1) * dim];
            for ((rv, xv), &cv) in rb.iter_mut().zip(&mut x_hat[b * dim..(b + 1) * dim]).zip(c) {
                *rv -= cv.to_f64();
                *xv += cv;
            }
            codes[b * n + stage] = best.0 as u32;
        }
    }
    EncodeOutput { codes, x_hat }
}

/// Replays the decode recursion for one code vector, returning `x_hat` after
/// every stage.
fn decode_prefixes<T: Real>(net: &Network<T>, codes: &[u32]) -> Result<Vec<Vec<T>>> {
    let dim = net.dim;
    if codes.len() != net.n_stages() {
        return Err(Error::LengthMismatch {
            left: codes.len(),
            right: net.n_stages(),
        });
    }
    let mut x_hat = vec![T::zero(); dim];
    let mut out = Vec::with_capacity(codes.len());
    for (stage, &code) in codes.iter().enumerate() {
        let k = code as usize;
        if k >= net.k {
            return Err(Error::IndexOutOfRange {
                stage,
                index: code as u64,
                k: net.k,
            });
        }
        let c_bar = &net.base[stage][k * dim..(k + 1) * dim];
        let c = if stage == 0 {
            c_bar.to_vec()
        } else {
            net.stages[stage - 1].forward(&x_hat, c_bar)
        };
        for (xv, cv) in x_hat.iter_mut().zip(c) {
            *xv += cv;
        }
        out.push(x_hat.clone());
    }
    Ok(out)
}

/// Objective for frames `x` (`B x D`) under fixed `codes` (`B x N`):
/// returns the total and per-stage `mean_b || x - x_hat_{n+1} ||^2`.
pub(crate) fn loss_with_codes<T: Real>(net: &Network<T>, x: &[f32], codes: &[u32]) -> (f64, Vec<f64>) {
    let (per_stage, _) = forward_fixed(net, x, codes, false);
    (per_stage.iter().sum(), per_stage)
}

struct Trajectory<T> {
    /// `x_hat_{n+1}` after each stage, `B x D` each.
    x_hats: Vec<Vec<T>>,
    caches: Vec<net::Cache<T>>,
}

fn gather_base<T: Real>(net: &Network<T>, stage: usize, codes: &[u32], rows: usize) -> Vec<T> {
    let (dim, n) = (net.dim, net.n_stages());
    let mut c_bar = Vec::with_capacity(rows * dim);
    for b in 0..rows {
        let k = codes[b * n + stage] as usize;
        c_bar.extend_from_slice(&net.base[stage][k * dim..(k + 1) * dim]);
    }
    c_bar
}

fn forward_fixed<T: Real>(net: &Network<T>, x: &[f32], codes: &[u32], keep: bool) -> (Vec<f64>, Trajectory<T>) {
    let dim = net.dim;
    let rows = x.len() / dim;
    let n = net.n_stages();
    let mut traj = Trajectory {
        x_hats: Vec::with_capacity(n),
        caches: Vec::new(),
    };
    let mut per_stage = Vec::with_capacity(n);
    let mut x_hat = gather_base(net, 0, codes, rows);
    per_stage.push(mean_sq_err(x, &x_hat, rows));
    for stage in 1..n {
        let c_bar = gather_base(net, stage, codes, rows);
        let stage_net = &net.stages[stage - 1];
        let (c, cache) = stage_net.forward_cached(&x_hat, &c_bar);
        let next: Vec<T> = x_hat.iter().zip(&c).map(|(&a, &b)| a + b).collect();
        per_stage.push(mean_sq_err(x, &next, rows));
        if keep {
            traj.x_hats.push(std::mem::replace(&mut x_hat, next));
            traj.caches.push(cache);
        } else {
            x_hat = next;
        }
    }
    traj.x_hats.push(x_hat);
    (per_stage, traj)
}

fn mean_sq_err<T: Real>(x: &[f32], x_hat: &[T], rows: usize) -> f64 {
    let total: f64 = x
        .iter()
        .zip(x_hat)
        .map(|(&a, &b)| {
            let t = (T::from_f32(a) - b).to_f64();
            t * t
        })
        .sum();
    total / rows as f64
}

/// Loss and reverse-mode gradients of every stage network under fixed codes.
pub(crate) fn loss_and_grad<T: Real>(net: &Network<T>, x: &[f32], codes: &[u32]) -> (f64, Vec<f64>, Vec<StageNet<T>>) {
    let dim = net.dim;
    let rows = x.len() / dim;
    let (per_stage, traj) = forward_fixed(net, x, codes, true);
    let mut grads: Vec<StageNet<T>> = net.stages.iter().map(|s| s.zeros_like()).collect();
    let scale = T::from_f64(2.0 / rows as f64);
    let x_t: Vec<T> = x.iter().map(|&v| T::from_f32(v)).collect();
    let err_grad = |x_hat: &[T]| -> Vec<T> { x_hat.iter().zip(&x_t).map(|(&a, &b)| scale * (a - b)).collect() };

    // g holds dL/dx_hat_{n+1} for the stage being unwound.
    let mut g = err_grad(traj.x_hats.last().unwrap());
    for stage in (1..net.n_stages()).rev() {
        let input = &traj.x_hats[stage - 1];
        let g_in = net.stages[stage - 1].backward(&traj.caches[stage - 1], &g, &mut grads[stage - 1]);
        let own = err_grad(input);
        for ((gv, &a), &b) in g.iter_mut().zip(&g_in).zip(&own) {
            *gv = *gv + a + b;
        }
    }
    (per_stage.iter().sum(), per_stage, grads)
}

impl Quantizer for QincoModel {
    fn dim(&self) -> usize {
        self.net.dim
    }

    fn n_stages(&self) -> usize {
        self.codebooks.len()
    }

    fn codebook_size(&self) -> usize {
        self.net.k
    }

    fn encode(&self, x: &[f32]) -> Result<CodeVector> {
        self.check_dim(x.len())?;
        Ok(CodeVector::new(encode_chunk(&self.net, x).codes))
    }

    fn encode_all(&self, frames: &FrameSet) -> Result<Vec<CodeVector>> {
        if frames.is_empty() {
            return Ok(Vec::new());
        }
        self.encode_batch(frames).map(|(codes, _)| codes)
    }

    fn decode_prefixes(&self, codes: &[u32]) -> Result<Vec<Vec<f64>>> {
        Ok(decode_prefixes(&self.net, codes)?
            .into_iter()
            .map(|p| p.into_iter().map(|v| v as f64).collect())
            .collect())
    }

    fn decode(&self, codes: &[u32]) -> Result<Vec<f32>> {
        Ok(decode_prefixes(&self.net, codes)?.pop().unwrap_or_default())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kmeans::KMeansConfig;
    use crate::rvq::rvq_train;

    fn toy_base(n: usize) -> (RvqModel, FrameSet) {
        let data: Vec<f32> = (0..600).map(|i| (((i * 7919) % 211) as f32 / 211.0 - 0.5) * 4.0).collect();
        let frames = FrameSet::from_flat(3, data).unwrap();
        let base = rvq_train(&frames, n, &KMeansConfig::new(8).with_max_iters(60)).unwrap();
        (base, frames)
    }

    #[test]
    fn init_requires_plain_base() {
        let (_, frames) = toy_base(2);
        let irvq = crate::rvq::irvq_train(&frames, 2, &KMeansConfig::new(8).with_max_iters(10)).unwrap();
        assert!(QincoModel::init(&irvq, 1, 4, 0).is_err());
    }

    #[test]
    fn single_stage_has_no_networks() {
        let (base, frames) = toy_base(1);
        let model = QincoModel::init(&base, 2, 8, 0).unwrap();
        assert!(model.stages().is_empty());
        for x in frames.iter().take(50) {
            let codes = model.encode(x).unwrap();
            assert_eq!(codes, base.encode(x).unwrap());
            assert_eq!(model.decode(&codes).unwrap(), base.codebooks()[0].entry(codes[0] as usize).to_vec());
        }
    }

    #[test]
    fn representable_batch_has_zero_loss() {
        let (base, _) = toy_base(2);
        let model = QincoModel::init(&base, 1, 4, 0).unwrap();
        let rows: Vec<Vec<f32>> = (0..4).map(|k| base.codebooks()[0].entry(k).to_vec()).collect();
        let batch = FrameSet::from_rows(3, rows).unwrap();
        let loss = model.loss(&batch).unwrap();
        assert_eq!(loss.total, 0.0);
    }

    #[test]
    fn empty_batch_loss_rejected() {
        let (base, _) = toy_base(2);
        let model = QincoModel::init(&base, 1, 4, 0).unwrap();
        assert!(matches!(model.loss(&FrameSet::new(3)), Err(Error::EmptyInput)));
    }

    #[test]
    fn decode_rejects_bad_codes() {
        let (base, _) = toy_base(2);
        let model = QincoModel::init(&base, 1, 4, 0).unwrap();
        assert!(matches!(
            model.decode(&[0, 8]),
            Err(Error::IndexOutOfRange { stage: 1, index: 8, k: 8 })
        ));
        assert!(matches!(model.decode(&[0]), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn serialization_roundtrip() {
        let (base, _) = toy_base(3);
        let mut model = QincoModel::init(&base, 2, 6, 4).unwrap();
        model.stages_mut()[1].out_proj.bias[0] = 0.125;
        let mut buf = Vec::new();
        model.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..8], b"RESQQNC1");
        let back = QincoModel::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back, model);
        buf.truncate(buf.len() - 3);
        assert!(QincoModel::read_from(&mut buf.as_slice()).is_err());
    }
}
