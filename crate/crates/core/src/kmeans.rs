//! Mini-batch k-means codebook fitting.
//!
//! Centroids are seeded with k-means++ on the first mini-batch and refined
//! with per-sample learning rates `1 / count` (Sculley's update), which makes
//! each centroid the running mean of the samples it has absorbed. A centroid
//! that receives no samples for a full epoch is re-seeded onto the batch point
//! farthest from its assigned centroid.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codebook::Codebook;
use crate::error::{Error, Result};
use crate::frame::FrameSet;
use crate::par;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansConfig {
    pub k: usize,
    pub batch_size: usize,
    /// Number of mini-batch updates.
    pub max_iters: usize,
    pub seed: u64,
    /// Objective checkpoints are recorded every this many iterations.
    pub checkpoint_every: usize,
}

impl KMeansConfig {
    /// Defaults: batch size three times the codebook size, 1000 updates.
    pub fn new(k: usize) -> Self {
        KMeansConfig {
            k,
            batch_size: 3 * k,
            max_iters: 1000,
            seed: 0,
            checkpoint_every: 100,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_max_iters(mut self, iters: usize) -> Self {
        self.max_iters = iters;
        self
    }
}

/// Objective trace of a fit: `(iteration, mean squared distance)` on a fixed
/// validation sample.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KMeansReport {
    pub checkpoints: Vec<(usize, f64)>,
    pub reseeded: usize,
}

pub fn kmeans_fit(frames: &FrameSet, cfg: &KMeansConfig) -> Result<Codebook> {
    kmeans_fit_with_report(frames, cfg).map(|(cb, _)| cb)
}

pub fn kmeans_fit_with_report(frames: &FrameSet, cfg: &KMeansConfig) -> Result<(Codebook, KMeansReport)> {
    let n = frames.len();
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    if cfg.k == 0 {
        return Err(Error::invalid("k must be positive"));
    }
    if cfg.batch_size < cfg.k {
        return Err(Error::invalid(format!("batch size {} smaller than k={}", cfg.batch_size, cfg.k)));
    }
    let distinct = count_distinct(frames, cfg.k);
    if distinct < cfg.k {
        return Err(Error::DegenerateData { distinct, k: cfg.k });
    }

    let dim = frames.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let val: Vec<usize> = if n <= 4 * cfg.batch_size {
        (0..n).collect()
    } else {
        (0..4 * cfg.batch_size).map(|_| rng.random_range(0..n)).collect()
    };
    let first_batch: Vec<usize> = (0..cfg.batch_size).map(|_| rng.random_range(0..n)).collect();
    let mut codebook = kmeans_pp(frames, &first_batch, cfg.k, &mut rng)?;

    let epoch_iters = n.div_ceil(cfg.batch_size).max(1);
    let mut counts = vec![0u64; cfg.k];
    let mut last_hit = vec![0usize; cfg.k];
    let mut report = KMeansReport::default();
    report.checkpoints.push((0, objective(frames, &val, &codebook)));

    let mut batch = first_batch;
    for iter in 1..=cfg.max_iters {
        if iter > 1 {
            for slot in batch.iter_mut() {
                *slot = rng.random_range(0..n);
            }
        }
        let assigned = par::map_indices(batch.len(), |j| codebook.nearest_f32(frames.row(batch[j])));
        for (&i, &(c, _)) in batch.iter().zip(&assigned) {
            counts[c] += 1;
            last_hit[c] = iter;
            let eta = 1.0 / counts[c] as f32;
            for (m, &x) in codebook.entry_mut(c).iter_mut().zip(frames.row(i)) {
                *m += eta * (x - *m);
            }
        }

        let dead: Vec<usize> = (0..cfg.k).filter(|&c| iter - last_hit[c] >= epoch_iters).collect();
        if !dead.is_empty() {
            let mut far: Vec<(usize, f64)> = batch
                .iter()
                .zip(&assigned)
                .map(|(&i, &(_, d))| (i, d))
                .filter(|&(_, d)| d > 0.0)
                .collect();
            far.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            far.dedup_by_key(|p| p.0);
            for (c, (i, _)) in dead.into_iter().zip(far) {
                codebook.entry_mut(c).copy_from_slice(frames.row(i));
                counts[c] = 0;
                last_hit[c] = iter;
                report.reseeded += 1;
            }
        }

        if iter % cfg.checkpoint_every.max(1) == 0 || iter == cfg.max_iters {
            report.checkpoints.push((iter, objective(frames, &val, &codebook)));
        }
    }
    debug_assert_eq!(codebook.dim(), dim);
    Ok((codebook, report))
}

/// Counts distinct frames, stopping early once `limit` is reached.
fn count_distinct(frames: &FrameSet, limit: usize) -> usize {
    let mut seen: HashSet<Vec<u32>> = HashSet::new();
    for row in frames.iter() {
        seen.insert(row.iter().map(|v| (v + 0.0).to_bits()).collect());
        if seen.len() >= limit {
            break;
        }
    }
    seen.len()
}

/// k-means++ seeding over the distinct frames of `batch`, topped up with
/// distinct frames in data order when the batch has fewer than `k`.
fn kmeans_pp(frames: &FrameSet, batch: &[usize], k: usize, rng: &mut ChaCha8Rng) -> Result<Codebook> {
    let mut seen: HashSet<Vec<u32>> = HashSet::new();
    let mut pool = Vec::new();
    let key = |i: usize| -> Vec<u32> { frames.row(i).iter().map(|v| (v + 0.0).to_bits()).collect() };
    for &i in batch {
        if seen.insert(key(i)) {
            pool.push(i);
        }
    }
    if pool.len() < k {
        for i in 0..frames.len() {
            if seen.insert(key(i)) {
                pool.push(i);
                if pool.len() >= k {
                    break;
                }
            }
        }
    }

    let dim = frames.dim();
    let mut entries = Vec::with_capacity(k * dim);
    let first = pool[rng.random_range(0..pool.len())];
    entries.extend_from_slice(frames.row(first));
    let mut d2: Vec<f64> = pool.iter().map(|&i| dist(frames.row(i), frames.row(first))).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = None;
            for (j, &w) in d2.iter().enumerate() {
                acc += w;
                if w > 0.0 && acc > target {
                    chosen = Some(j);
                    break;
                }
            }
            // rounding at the tail: fall back to the last positive weight
            chosen.unwrap_or_else(|| d2.iter().rposition(|&w| w > 0.0).unwrap())
        } else {
            return Err(Error::DegenerateData {
                distinct: entries.len() / dim,
                k,
            });
        };
        let c = pool[pick];
        entries.extend_from_slice(frames.row(c));
        for (j, &i) in pool.iter().enumerate() {
            d2[j] = d2[j].min(dist(frames.row(i), frames.row(c)));
        }
    }
    Codebook::new(dim, entries)
}

fn dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let t = x as f64 - y as f64;
            t * t
        })
        .sum()
}

fn objective(frames: &FrameSet, idx: &[usize], cb: &Codebook) -> f64 {
    let d = par::map_indices(idx.len(), |j| cb.nearest_f32(frames.row(idx[j])).1);
    d.iter().sum::<f64>() / idx.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_input() {
        let cfg = KMeansConfig::new(2);
        assert!(matches!(kmeans_fit(&FrameSet::new(3), &cfg), Err(Error::EmptyInput)));
    }

    #[test]
    fn too_few_distinct_frames() {
        let frames = FrameSet::from_rows(1, [[1.0], [1.0], [2.0], [2.0]]).unwrap();
        let err = kmeans_fit(&frames, &KMeansConfig::new(3)).unwrap_err();
        assert!(matches!(err, Error::DegenerateData { distinct: 2, k: 3 }));
    }

    #[test]
    fn batch_smaller_than_k_rejected() {
        let frames = FrameSet::from_rows(1, [[1.0], [2.0], [3.0]]).unwrap();
        let mut cfg = KMeansConfig::new(3);
        cfg.batch_size = 2;
        assert!(matches!(kmeans_fit(&frames, &cfg), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn k_distinct_points_are_recovered_exactly() {
        let rows = [[0.5f32, -1.0], [3.0, 2.0], [-4.0, 7.5], [9.0, 9.0], [0.0, 0.25]];
        let frames = FrameSet::from_rows(2, rows).unwrap();
        let (cb, report) = kmeans_fit_with_report(&frames, &KMeansConfig::new(5).with_seed(3)).unwrap();
        let mut got: Vec<Vec<f32>> = (0..5).map(|k| cb.entry(k).to_vec()).collect();
        let mut want: Vec<Vec<f32>> = rows.iter().map(|r| r.to_vec()).collect();
        got.sort_by(|a, b| a.partial_cmp(b).unwrap());
        want.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(got, want);
        assert_eq!(report.checkpoints.last().unwrap().1, 0.0);
    }

    #[test]
    fn deterministic_for_seed() {
        let frames = FrameSet::from_flat(2, (0..400).map(|i| ((i * 37) % 101) as f32 * 0.1).collect()).unwrap();
        let cfg = KMeansConfig::new(8).with_seed(11).with_max_iters(50);
        assert_eq!(kmeans_fit(&frames, &cfg).unwrap(), kmeans_fit(&frames, &cfg).unwrap());
        let other = kmeans_fit(&frames, &cfg.clone().with_seed(12)).unwrap();
        assert_ne!(kmeans_fit(&frames, &cfg).unwrap(), other);
    }
}
