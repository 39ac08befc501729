//! Uniform subsampling and shuffling of frame streams.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::frame::FrameSet;

/// Keeps a uniform random subset of at most `count` items from `items`
/// in a single pass.
pub fn reservoir_sample<T, I, R>(items: I, count: usize, rng: &mut R) -> Vec<T>
where
    I: IntoIterator<Item = T>,
    R: Rng + ?Sized,
{
    let mut reservoir = Vec::with_capacity(count.min(1 << 20));
    if count == 0 {
        return reservoir;
    }
    for (seen, item) in items.into_iter().enumerate() {
        if seen < count {
            reservoir.push(item);
        } else {
            let j = rng.random_range(0..=seen);
            if j < count {
                reservoir[j] = item;
            }
        }
    }
    reservoir
}

/// Uniform sample of `min(count, available)` frames from a stream, returned
/// in a seeded random order.
pub fn sample_shuffle<I, F>(frames: I, count: usize, seed: u64) -> Result<FrameSet>
where
    I: IntoIterator<Item = Result<F>>,
    F: AsRef<[f32]>,
{
    if count == 0 {
        return Err(Error::invalid("sample count must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut first_error = None;
    let stream = frames.into_iter().map_while(|f| match f {
        Ok(f) => Some(f),
        Err(e) => {
            first_error = Some(e);
            None
        }
    });
    let mut picked = reservoir_sample(stream, count, &mut rng);
    if let Some(e) = first_error {
        return Err(e);
    }
    if picked.is_empty() {
        return Err(Error::EmptyInput);
    }
    picked.shuffle(&mut rng);
    let dim = picked[0].as_ref().len();
    let mut set = FrameSet::with_capacity(dim, picked.len());
    for f in &picked {
        set.push(f.as_ref())?;
    }
    Ok(set)
}
