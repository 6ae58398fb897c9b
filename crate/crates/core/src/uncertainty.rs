//! Predictive uncertainty: MC dropout, deep ensembles and test-time
//! augmentation, each reduced to a per-class mean and variance map.

use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::segnet::{forward, NetworkParams};
use crate::volume::{strides, Volume};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UqMethod {
    Mcdo,
    Ensemble,
    Tta,
    Combined,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UqResult {
    pub mean_prob: Volume,
    /// Population variance across samples (0 when there is one sample).
    pub variance: Volume,
    pub n_samples: usize,
    pub method: UqMethod,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UqSummary {
    pub method: UqMethod,
    pub n_samples: usize,
    pub mean_variance: f64,
    /// Predictive entropy `-sum_c p ln p` averaged over pixels.
    pub mean_entropy: f64,
}

impl UqResult {
    pub fn summary(&self) -> UqSummary {
        let m = &self.mean_prob;
        let plane = m.spatial_len();
        let entropy: f64 = (0..plane)
            .map(|p| {
                (0..m.channels())
                    .map(|c| m.channel(c)[p])
                    .filter(|&v| v > 0.0)
                    .map(|v| -v * v.ln())
                    .sum::<f64>()
            })
            .sum();
        UqSummary {
            method: self.method,
            n_samples: self.n_samples,
            mean_variance: self.variance.data().iter().sum::<f64>() / self.variance.len() as f64,
            mean_entropy: entropy / plane as f64,
        }
    }
}

/// Elementwise mean and population variance. Values at each element are
/// sorted before the Welford pass, so the result does not depend on the
/// order of `samples`.
fn aggregate(samples: &[Volume], method: UqMethod) -> Result<UqResult> {
    let first = samples
        .first()
        .ok_or_else(|| Error::param("need at least one sample"))?;
    if samples.iter().any(|s| !s.same_shape(first)) {
        return Err(Error::structure("samples have differing shapes"));
    }
    let n = first.len();
    let (mean, var): (Vec<f64>, Vec<f64>) = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut vals: Vec<f64> = samples.iter().map(|s| s.data()[i]).collect();
            vals.sort_by(f64::total_cmp);
            let (mut m, mut m2) = (0.0, 0.0);
            for (k, &v) in vals.iter().enumerate() {
                let d = v - m;
                m += d / (k + 1) as f64;
                m2 += d * (v - m);
            }
            (m, m2 / vals.len() as f64)
        })
        .unzip();
    let wrap = |d: Vec<f64>| Volume::from_vec(first.dims(), first.channels(), d)?.with_spacing(first.spacing());
    Ok(UqResult {
        mean_prob: wrap(mean)?,
        variance: wrap(var)?,
        n_samples: samples.len(),
        method,
    })
}

fn probabilities(p: &NetworkParams, x: &Volume, stochastic: bool, seed: u64) -> Result<Volume> {
    forward(p, x, stochastic, seed).map(|(v, _)| v)
}

/// `n_samples` stochastic passes; sample `k` draws its dropout masks from
/// `derive_seed(seed, k)`.
pub fn mc_dropout_predict(p: &NetworkParams, x: &Volume, n_samples: usize, seed: u64) -> Result<UqResult> {
    if n_samples == 0 {
        return Err(Error::param("n_samples must be >= 1"));
    }
    let samples = (0..n_samples as u64)
        .into_par_iter()
        .map(|k| probabilities(p, x, true, rng::derive_seed(seed, k)))
        .collect::<Result<Vec<_>>>()?;
    aggregate(&samples, UqMethod::Mcdo)
}

pub fn ensemble_predict(members: &[NetworkParams], x: &Volume) -> Result<UqResult> {
    let first = members
        .first()
        .ok_or_else(|| Error::param("ensemble is empty"))?;
    if let Some(m) = members.iter().find(|m| m.arch != first.arch) {
        return Err(Error::structure(format!(
            "ensemble mixes architectures (member with init seed {} differs)",
            m.init_seed
        )));
    }
    let samples = members
        .par_iter()
        .map(|m| probabilities(m, x, false, 0))
        .collect::<Result<Vec<_>>>()?;
    aggregate(&samples, UqMethod::Ensemble)
}

/// Invertible grid transform used for test-time augmentation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transform {
    Identity,
    /// Reverse one spatial axis.
    Flip(usize),
    /// `k` quarter turns in the plane of the last two spatial axes.
    Rot90(u8),
}

impl FromStr for Transform {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Transform::Identity),
            "rot90" => Ok(Transform::Rot90(1)),
            "rot180" => Ok(Transform::Rot90(2)),
            "rot270" => Ok(Transform::Rot90(3)),
            _ => s
                .strip_prefix("flip")
                .and_then(|a| a.parse().ok())
                .map(Transform::Flip)
                .ok_or_else(|| Error::param(format!("unknown transform {s:?}"))),
        }
    }
}

impl Transform {
    pub fn inverse(self) -> Transform {
        match self {
            Transform::Rot90(k) => Transform::Rot90((4 - k % 4) % 4),
            t => t,
        }
    }

    /// Identity plus one flip per spatial axis.
    pub fn default_set(ndim: usize) -> Vec<Transform> {
        std::iter::once(Transform::Identity)
            .chain((0..ndim).map(Transform::Flip))
            .collect()
    }

    fn check(self, dims: &[usize]) -> Result<()> {
        match self {
            Transform::Flip(a) if a >= dims.len() => Err(Error::param(format!(
                "flip axis {a} out of range for {} axes",
                dims.len()
            ))),
            Transform::Rot90(k) if k % 2 == 1 && (dims.len() < 2 || dims[dims.len() - 1] != dims[dims.len() - 2]) => {
                Err(Error::param(format!("quarter turn of non-square plane {dims:?} is not invertible")))
            }
            _ => Ok(()),
        }
    }

    /// Source coordinate read by output coordinate `p`.
    fn source(self, p: &mut [usize], dims: &[usize]) {
        let k = p.len();
        match self {
            Transform::Identity => {}
            Transform::Flip(a) => p[a] = dims[a] - 1 - p[a],
            Transform::Rot90(q) if q % 2 == 0 => {
                if q % 4 == 2 {
                    p[k - 2] = dims[k - 2] - 1 - p[k - 2];
                    p[k - 1] = dims[k - 1] - 1 - p[k - 1];
                }
            }
            Transform::Rot90(q) => {
                // square plane, checked by `check`
                for _ in 0..q % 4 {
                    let (i, j) = (p[k - 2], p[k - 1]);
                    p[k - 2] = j;
                    p[k - 1] = dims[k - 2] - 1 - i;
                }
            }
        }
    }

    pub fn apply(self, v: &Volume) -> Result<Volume> {
        self.check(v.dims())?;
        let dims = v.dims();
        let st = strides(dims);
        let plane = v.spatial_len();
        let map: Vec<usize> = (0..plane)
            .map(|i| {
                let mut p: Vec<usize> = st.iter().zip(dims).map(|(s, n)| (i / s) % n).collect();
                self.source(&mut p, dims);
                p.iter().zip(&st).map(|(a, s)| a * s).sum()
            })
            .collect();
        let mut out = v.clone();
        for c in 0..v.channels() {
            let src = v.channel(c);
            out.channel_mut(c).iter_mut().zip(&map).for_each(|(o, &j)| *o = src[j]);
        }
        Ok(out)
    }
}

pub fn tta_predict(p: &NetworkParams, x: &Volume, transforms: &[Transform]) -> Result<UqResult> {
    combined_predict(p, x, transforms, 1, None).map(|r| UqResult {
        method: UqMethod::Tta,
        ..r
    })
}

/// MC dropout under every transform: sample `k` of transform `t` uses seed
/// `derive_seed(seed, t * n + k)`. Without a seed the passes are
/// deterministic.
fn combined_predict(
    p: &NetworkParams,
    x: &Volume,
    transforms: &[Transform],
    n: usize,
    seed: Option<u64>,
) -> Result<UqResult> {
    if transforms.is_empty() || n == 0 {
        return Err(Error::param("need >= 1 transform and >= 1 sample"));
    }
    for t in transforms {
        t.check(x.dims())?;
    }
    let jobs: Vec<(usize, usize)> = (0..transforms.len()).flat_map(|t| (0..n).map(move |k| (t, k))).collect();
    let samples = jobs
        .par_iter()
        .map(|&(t, k)| {
            let tr = transforms[t];
            let xt = tr.apply(x)?;
            let probs = match seed {
                Some(s) => probabilities(p, &xt, true, rng::derive_seed(s, (t * n + k) as u64))?,
                None => probabilities(p, &xt, false, 0)?,
            };
            tr.inverse().apply(&probs)
        })
        .collect::<Result<Vec<_>>>()?;
    aggregate(&samples, UqMethod::Combined)
}

pub fn combined_uq(p: &NetworkParams, x: &Volume, transforms: &[Transform], n_samples: usize, seed: u64) -> Result<UqResult> {
    combined_predict(p, x, transforms, n_samples, Some(seed))
}
