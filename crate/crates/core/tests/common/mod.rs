//! Shared fixtures and independent reference implementations.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use resq::{Codebook, FrameSet, RvqModel, StageSearch, Variant};

pub fn gaussian_frames(n: usize, dim: usize, seed: u64) -> FrameSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..n * dim).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
    FrameSet::from_flat(dim, data).unwrap()
}

/// Frames drawn around `centers` with isotropic noise `sigma`.
pub fn blobs(centers: &[Vec<f32>], sigma: f32, per_blob: usize, seed: u64) -> FrameSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = centers[0].len();
    let mut out = FrameSet::new(dim);
    for i in 0..per_blob * centers.len() {
        let c = &centers[i % centers.len()];
        let row: Vec<f32> = c.iter().map(|&m| m + sigma * rng.sample::<f32, _>(StandardNormal)).collect();
        out.push(&row).unwrap();
    }
    out
}

pub fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn to64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

/// Index of the smallest value, first one on ties.
pub fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v < values[best] {
            best = i;
        }
    }
    best
}

/// Full-batch Lloyd iterations from `init` until assignments stop changing.
pub fn lloyd(frames: &FrameSet, init: &[Vec<f64>], max_rounds: usize) -> Vec<Vec<f64>> {
    let mut centers = init.to_vec();
    let mut prev: Vec<usize> = Vec::new();
    for _ in 0..max_rounds {
        let codes: Vec<usize> = frames
            .iter()
            .map(|x| {
                let x = to64(x);
                argmin(&centers.iter().map(|c| sq(&x, c)).collect::<Vec<_>>())
            })
            .collect();
        if codes == prev {
            break;
        }
        let dim = frames.dim();
        let mut sums = vec![vec![0.0; dim]; centers.len()];
        let mut counts = vec![0usize; centers.len()];
        for (x, &c) in frames.iter().zip(&codes) {
            counts[c] += 1;
            for (s, &v) in sums[c].iter_mut().zip(x) {
                *s += v as f64;
            }
        }
        for (k, c) in centers.iter_mut().enumerate() {
            if counts[k] > 0 {
                *c = sums[k].iter().map(|s| s / counts[k] as f64).collect();
            }
        }
        prev = codes;
    }
    centers
}

fn entries(cb: &Codebook) -> Vec<Vec<f64>> {
    (0..cb.k()).map(|k| to64(cb.entry(k))).collect()
}

/// Greedy residual encoding written directly from the recursions:
///
/// * plain: `k_n = argmin || r_n - c ||^2`, `r_{n+1} = r_n - c_{k_n}`;
/// * standardized search: `k_n = argmin || r_n - c ||^2`,
///   `r_{n+1} = (r_n - c_{k_n}) / sigma_{k_n}`;
/// * reconstruction search: `k_n = argmin || x - (x_hat_n + s_n * c) ||^2`
///   with `x_hat_{n+1} = x_hat_n + s_n * c_{k_n}`, `s_{n+1} = s_n * sigma_{k_n}`.
pub fn literal_rvq_encode(model: &RvqModel, x: &[f32], search: StageSearch) -> Vec<u32> {
    let x = to64(x);
    let dim = x.len();
    let mut codes = Vec::new();
    match (model.variant(), search) {
        (Variant::Plain, _) | (Variant::Improved, StageSearch::Standardized) => {
            let mut r = x.clone();
            for cb in model.codebooks() {
                let cs = entries(cb);
                let k = argmin(&cs.iter().map(|c| sq(&r, c)).collect::<Vec<_>>());
                for d in 0..dim {
                    r[d] -= cs[k][d];
                    if model.variant() == Variant::Improved {
                        r[d] /= cb.scale(k).unwrap()[d] as f64;
                    }
                }
                codes.push(k as u32);
            }
        }
        (Variant::Improved, StageSearch::Reconstruction) => {
            let mut x_hat = vec![0.0; dim];
            let mut s = vec![1.0; dim];
            for cb in model.codebooks() {
                let cs = entries(cb);
                let dists: Vec<f64> = cs
                    .iter()
                    .map(|c| (0..dim).map(|d| (x[d] - x_hat[d] - s[d] * c[d]).powi(2)).sum())
                    .collect();
                let k = argmin(&dists);
                for d in 0..dim {
                    x_hat[d] += s[d] * cs[k][d];
                    s[d] *= cb.scale(k).unwrap()[d] as f64;
                }
                codes.push(k as u32);
            }
        }
    }
    codes
}

/// Reconstruction after every stage, from the additive / cumulative-scale
/// decode definitions.
pub fn literal_rvq_prefixes(model: &RvqModel, codes: &[u32]) -> Vec<Vec<f64>> {
    let dim = model.codebooks()[0].dim();
    let mut x_hat = vec![0.0; dim];
    let mut s = vec![1.0; dim];
    let mut out = Vec::new();
    for (cb, &k) in model.codebooks().iter().zip(codes) {
        let c = cb.entry(k as usize);
        for d in 0..dim {
            x_hat[d] += s[d] * c[d] as f64;
        }
        if let Some(sig) = cb.scale(k as usize) {
            for d in 0..dim {
                s[d] *= sig[d] as f64;
            }
        }
        out.push(x_hat.clone());
    }
    out
}
