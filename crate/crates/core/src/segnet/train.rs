//! Adam training loop and argmax prediction.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::input::prepare_input;
use super::layers::Tensor;
use super::loss::{loss_tensor, LossWeights};
use super::network::{backward, forward_tensor, Gradients, NetworkParams};
use super::ArchSpec;
use crate::error::{Error, Result};
use crate::rng;
use crate::volume::Volume;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 coefficient added to weight (not bias) gradients.
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub loss_weights: LossWeights,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            batch_size: 1,
            epochs: 20,
            loss_weights: LossWeights::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::param(format!("learning_rate must be > 0, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::param("batch_size must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::param("Adam betas must lie in [0, 1)"));
        }
        if !(self.eps > 0.0) || self.weight_decay < 0.0 {
            return Err(Error::param("eps must be > 0 and weight_decay >= 0"));
        }
        Ok(())
    }
}

/// One prepared training case: encoder input plus per-pixel class indices.
#[derive(Debug, Clone)]
pub struct Sample {
    pub input: Tensor,
    pub labels: Vec<usize>,
}

impl Sample {
    /// `labels` holds contiguous class indices (already remapped).
    pub fn new(arch: &ArchSpec, image: &Volume, labels: &Volume) -> Result<Self> {
        if labels.dims() != image.dims() || labels.channels() != 1 {
            return Err(Error::structure(format!(
                "label grid {:?}x{} does not match image {:?}",
                labels.dims(),
                labels.channels(),
                image.dims()
            )));
        }
        let labels = labels
            .data()
            .iter()
            .map(|&v| {
                if v >= 0.0 && v.fract() == 0.0 && (v as usize) < arch.num_classes {
                    Ok(v as usize)
                } else {
                    Err(Error::data(format!("label {v} is not a class index below {}", arch.num_classes)))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Sample {
            input: prepare_input(arch, image)?,
            labels,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub mean_ce: f64,
    pub mean_se: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    pub steps: usize,
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    fn new(p: &NetworkParams) -> Self {
        let z = Gradients::zeros_like(p).tensors;
        Adam {
            m: z.clone(),
            v: z,
            t: 0,
        }
    }

    fn step(&mut self, p: &mut NetworkParams, g: &Gradients, c: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - c.beta1.powi(self.t);
        let c2 = 1.0 - c.beta2.powi(self.t);
        for (((t, g), m), v) in p.tensors.iter_mut().zip(&g.tensors).zip(&mut self.m).zip(&mut self.v) {
            let decay = if t.name.ends_with(".weight") { c.weight_decay } else { 0.0 };
            for (((w, &gi), mi), vi) in t.data.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                let gi = gi + decay * *w;
                *mi = c.beta1 * *mi + (1.0 - c.beta1) * gi;
                *vi = c.beta2 * *vi + (1.0 - c.beta2) * gi * gi;
                *w -= c.learning_rate * (*mi / c1) / ((*vi / c2).sqrt() + c.eps);
            }
        }
    }
}

/// Trains from already prepared samples. Parameters are initialised from
/// `derive_seed(seed, 0)`, the epoch shuffles come from stream 1 and every
/// forward pass gets its own dropout seed from stream `2 + step`.
pub fn train_prepared(cfg: &TrainConfig, arch: &ArchSpec, samples: &[Sample]) -> Result<(NetworkParams, TrainLog)> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::param("training set is empty"));
    }
    let mut params = NetworkParams::init(arch, rng::derive_seed(cfg.seed, 0))?;
    let mut adam = Adam::new(&params);
    let mut shuffle = rng::seeded(rng::derive_seed(cfg.seed, 1));
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut log = TrainLog::default();
    let mut pass = 0u64;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle);
        let (mut total, mut ce, mut se) = (0.0, 0.0, 0.0);
        for batch in order.chunks(cfg.batch_size) {
            let mut g = Gradients::zeros_like(&params);
            for &i in batch {
                let s = &samples[i];
                let out = forward_tensor(&params, &s.input, true, rng::derive_seed(cfg.seed, 2 + pass))?;
                pass += 1;
                let l = loss_tensor(&out.probs, &s.labels, out.presence_logits.as_deref(), cfg.loss_weights)?;
                if !l.total.is_finite() {
                    return Err(Error::Diverged {
                        step: log.steps,
                        loss: l.total,
                    });
                }
                total += l.total;
                ce += l.ce;
                se += l.se;
                let gi = backward(&params, &out.cache, &s.labels, cfg.loss_weights)?;
                g.add_scaled(&gi, 1.0 / batch.len() as f64);
            }
            adam.step(&mut params, &g, cfg);
            log.steps += 1;
        }
        let n = samples.len() as f64;
        log.epochs.push(EpochLog {
            epoch,
            mean_loss: total / n,
            mean_ce: ce / n,
            mean_se: se / n,
        });
    }
    Ok((params, log))
}

/// Prepares `(image, class-index labels)` pairs and trains.
pub fn train(cfg: &TrainConfig, arch: &ArchSpec, data: &[(Volume, Volume)]) -> Result<(NetworkParams, TrainLog)> {
    use rayon::prelude::*;
    let samples = data
        .par_iter()
        .map(|(x, y)| Sample::new(arch, x, y))
        .collect::<Result<Vec<_>>>()?;
    train_prepared(cfg, arch, &samples)
}

/// Per-pixel argmax of `probs`; ties go to the lower class index.
pub(crate) fn argmax(probs: &Tensor) -> Vec<usize> {
    let plane = probs.plane();
    (0..plane)
        .map(|p| {
            (1..probs.channels).fold(0, |best, c| {
                if probs.data[c * plane + p] > probs.data[best * plane + p] {
                    c
                } else {
                    best
                }
            })
        })
        .collect()
}

pub fn predict_tensor(params: &NetworkParams, input: &Tensor) -> Result<Vec<usize>> {
    Ok(argmax(&forward_tensor(params, input, false, 0)?.probs))
}

/// Class-index label volume on the grid of `x`.
pub fn predict(params: &NetworkParams, x: &Volume) -> Result<Volume> {
    let labels = predict_tensor(params, &prepare_input(&params.arch, x)?)?;
    Volume::from_vec(x.dims(), 1, labels.into_iter().map(|l| l as f64).collect())?.with_spacing(x.spacing())
}
