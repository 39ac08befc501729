//! Central finite-difference verification of the training gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{encode_frames, loss_and_grad, loss_with_codes, QincoModel};
use crate::error::{Error, Result};
use crate::frame::FrameSet;

/// Gradient magnitudes below this are compared in absolute terms:
/// the relative error is `|a - n| / max(|a|, |n|, GRAD_CHECK_ABS_FLOOR)`.
pub const GRAD_CHECK_ABS_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradSample {
    /// 1-based quantization stage owning the parameter.
    pub stage: usize,
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub mean_rel_error: f64,
    pub samples: Vec<GradSample>,
}

/// Compares reverse-mode gradients against `(L(p + h) - L(p - h)) / 2h` on
/// `samples` parameters drawn uniformly over all stage networks. Everything
/// runs in f64 and the codes are selected once, by the f32 model, then
/// frozen.
pub fn gradient_check(model: &QincoModel, batch: &FrameSet, samples: usize, h: f64, seed: u64) -> Result<GradCheckReport> {
    if batch.is_empty() {
        return Err(Error::EmptyInput);
    }
    let net32 = model.network();
    let codes = encode_frames(net32, batch).codes;
    let mut net = net32.cast::<f64>();
    let x = batch.as_flat();
    let (_, _, grads) = loss_and_grad(&net, x, &codes);

    // (stage, tensor index, tensor name, tensor length)
    let mut layout = Vec::new();
    for (s, stage) in net.stages.iter().enumerate() {
        for (t, (name, _, data)) in stage.tensors().into_iter().enumerate() {
            layout.push((s, t, name, data.len()));
        }
    }
    let total: usize = layout.iter().map(|l| l.3).sum();
    if total == 0 {
        return Ok(GradCheckReport {
            max_rel_error: 0.0,
            mean_rel_error: 0.0,
            samples: Vec::new(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(samples);
    for _ in 0..samples {
        let mut flat = rng.random_range(0..total);
        let (s, t, name, _) = layout
            .iter()
            .find(|l| {
                if flat < l.3 {
                    true
                } else {
                    flat -= l.3;
                    false
                }
            })
            .expect("flat index within layout");
        let (s, t, index) = (*s, *t, flat);
        let analytic = grads[s].tensors()[t].2[index];

        let original = net.stages[s].tensors_mut()[t][index];
        net.stages[s].tensors_mut()[t][index] = original + h;
        let (plus, _) = loss_with_codes(&net, x, &codes);
        net.stages[s].tensors_mut()[t][index] = original - h;
        let (minus, _) = loss_with_codes(&net, x, &codes);
        net.stages[s].tensors_mut()[t][index] = original;

        let numeric = (plus - minus) / (2.0 * h);
        let rel_error = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_CHECK_ABS_FLOOR);
        out.push(GradSample {
            stage: s + 2,
            tensor: name.clone(),
            index,
            analytic,
            numeric,
            rel_error,
        });
    }
    let max_rel_error = out.iter().map(|g| g.rel_error).fold(0.0, f64::max);
    let mean_rel_error = out.iter().map(|g| g.rel_error).sum::<f64>() / out.len().max(1) as f64;
    Ok(GradCheckReport {
        max_rel_error,
        mean_rel_error,
        samples: out,
    })
}
