use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{encode_frames, loss_and_grad, QincoModel, StageNet};
use crate::error::{Error, Result};
use crate::frame::FrameSet;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f32,
    pub batch_size: usize,
    pub steps: u64,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    /// Global L2 norm the gradient is clipped to.
    pub clip_norm: f32,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            batch_size: 256,
            steps: 1000,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!("learning rate {} must be >= 0", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::invalid("moment coefficients must lie in [0, 1)"));
        }
        if self.clip_norm.is_nan() || self.clip_norm <= 0.0 {
            return Err(Error::invalid("clip norm must be positive"));
        }
        Ok(())
    }
}

/// Outcome of one optimizer step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub step: u64,
    pub loss: f64,
    pub per_stage: Vec<f64>,
    /// Gradient norm before clipping.
    pub grad_norm: f64,
}

/// Adam state over every stage network.
#[derive(Debug, Clone)]
pub struct QincoTrainer {
    model: QincoModel,
    config: TrainConfig,
    first: Vec<StageNet<f32>>,
    second: Vec<StageNet<f32>>,
    step: u64,
    rng: ChaCha8Rng,
}

impl QincoTrainer {
    pub fn new(model: QincoModel, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let first: Vec<_> = model.stages().iter().map(|s| s.zeros_like()).collect();
        let second = first.clone();
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(QincoTrainer {
            model,
            config,
            first,
            second,
            step: 0,
            rng,
        })
    }

    pub fn model(&self) -> &QincoModel {
        &self.model
    }

    pub fn into_model(self) -> QincoModel {
        self.model
    }

    pub fn steps_done(&self) -> u64 {
        self.step
    }

    /// One update on `batch`. Codes are re-selected with the current
    /// parameters, then held fixed while the loss is differentiated.
    ///
    /// A non-finite loss or gradient aborts the step and leaves every
    /// parameter untouched.
    pub fn step(&mut self, batch: &FrameSet) -> Result<StepReport> {
        if batch.is_empty() {
            return Err(Error::EmptyInput);
        }
        if batch.dim() != self.model.network().dim {
            return Err(Error::DimensionMismatch {
                expected: self.model.network().dim,
                actual: batch.dim(),
            });
        }
        let net = self.model.network();
        let codes = encode_frames(net, batch).codes;
        let (loss, per_stage, grads) = loss_and_grad(net, batch.as_flat(), &codes);
        let step = self.step + 1;

        let mut sq = 0.0f64;
        for g in &grads {
            for t in g.tensors() {
                sq += t.2.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>();
            }
        }
        let grad_norm = sq.sqrt();
        if !loss.is_finite() || !grad_norm.is_finite() {
            return Err(Error::NonFiniteLoss { step });
        }
        let clip = if grad_norm > self.config.clip_norm as f64 {
            (self.config.clip_norm as f64 / grad_norm) as f32
        } else {
            1.0
        };

        let c = &self.config;
        let bias1 = 1.0 - (c.beta1 as f64).powi(step as i32);
        let bias2 = 1.0 - (c.beta2 as f64).powi(step as i32);
        let (lr, b1, b2, eps) = (c.learning_rate, c.beta1, c.beta2, c.eps);
        for (((net, g), m), v) in self
            .model
            .stages_mut()
            .iter_mut()
            .zip(&grads)
            .zip(self.first.iter_mut())
            .zip(self.second.iter_mut())
        {
            let g_tensors = g.tensors();
            for (((p, (_, _, gt)), mt), vt) in net
                .tensors_mut()
                .into_iter()
                .zip(g_tensors)
                .zip(m.tensors_mut())
                .zip(v.tensors_mut())
            {
                for (((pv, &gv), mv), vv) in p.iter_mut().zip(gt).zip(mt.iter_mut()).zip(vt.iter_mut()) {
                    let gv = gv * clip;
                    *mv = b1 * *mv + (1.0 - b1) * gv;
                    *vv = b2 * *vv + (1.0 - b2) * gv * gv;
                    let m_hat = *mv / bias1 as f32;
                    let v_hat = *vv / bias2 as f32;
                    *pv -= lr * (m_hat / (v_hat.sqrt() + eps));
                }
            }
        }
        self.step = step;
        Ok(StepReport {
            step,
            loss,
            per_stage,
            grad_norm,
        })
    }

    /// Draws a mini-batch from `frames` with the trainer's seeded generator.
    pub fn sample_batch(&mut self, frames: &FrameSet) -> FrameSet {
        let n = frames.len();
        let idx: Vec<usize> = (0..self.config.batch_size.min(n.max(1)))
            .map(|_| self.rng.random_range(0..n))
            .collect();
        frames.select(&idx)
    }

    /// Runs `config.steps` updates on batches sampled from `frames`, calling
    /// `on_step` after each.
    pub fn fit(&mut self, frames: &FrameSet, mut on_step: impl FnMut(&StepReport)) -> Result<()> {
        if frames.is_empty() {
            return Err(Error::EmptyInput);
        }
        for _ in 0..self.config.steps {
            let batch = self.sample_batch(frames);
            let report = self.step(&batch)?;
            on_step(&report);
        }
        Ok(())
    }
}

/// Single optimizer step from fresh optimizer state.
pub fn qinco_train_step(model: QincoModel, batch: &FrameSet, config: &TrainConfig) -> Result<(QincoModel, StepReport)> {
    let mut trainer = QincoTrainer::new(model, config.clone())?;
    let report = trainer.step(batch)?;
    Ok((trainer.into_model(), report))
}
