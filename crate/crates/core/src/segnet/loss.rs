//! Pixelwise cross-entropy plus the class-presence (SE) term.

use serde::{Deserialize, Serialize};

use super::layers::Tensor;
use crate::error::{Error, Result};
use crate::volume::Volume;

/// Probability clamp used by both terms.
pub const EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub ce: f64,
    pub se: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { ce: 1.0, se: 0.2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub ce: f64,
    pub se: f64,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Per-class presence targets: 1 when any pixel carries the class.
pub(crate) fn presence(labels: &[usize], classes: usize) -> Vec<f64> {
    let mut t = vec![0.0; classes];
    for &l in labels {
        t[l] = 1.0;
    }
    t
}

fn check(probs: &Tensor, labels: &[usize], logits: Option<&[f64]>) -> Result<()> {
    if labels.len() != probs.plane() {
        return Err(Error::structure(format!(
            "{} labels for {} pixels",
            labels.len(),
            probs.plane()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= probs.channels) {
        return Err(Error::Data(format!(
            "class index {bad} outside 0..{}",
            probs.channels
        )));
    }
    if let Some(z) = logits {
        if z.len() != probs.channels {
            return Err(Error::structure(format!(
                "{} presence logits for {} classes",
                z.len(),
                probs.channels
            )));
        }
    }
    Ok(())
}

/// `w.ce * CE + w.se * SE`. CE is the mean over pixels of `-ln p[label]`,
/// which for two classes is exactly the binary form
/// `-(1/N) sum y ln p + (1 - y) ln(1 - p)`. SE is the binary cross-entropy
/// between `sigmoid(logits)` and class presence, averaged over classes.
pub fn loss_tensor(
    probs: &Tensor,
    labels: &[usize],
    presence_logits: Option<&[f64]>,
    w: LossWeights,
) -> Result<LossBreakdown> {
    check(probs, labels, presence_logits)?;
    let plane = probs.plane();
    let ce = labels
        .iter()
        .enumerate()
        .map(|(p, &l)| -probs.data[l * plane + p].clamp(EPS, 1.0 - EPS).ln())
        .sum::<f64>()
        / plane as f64;
    let se = match presence_logits {
        Some(z) => {
            let t = presence(labels, probs.channels);
            z.iter()
                .zip(&t)
                .map(|(&zi, &ti)| {
                    let s = sigmoid(zi).clamp(EPS, 1.0 - EPS);
                    -(ti * s.ln() + (1.0 - ti) * (1.0 - s).ln())
                })
                .sum::<f64>()
                / z.len() as f64
        }
        None => 0.0,
    };
    Ok(LossBreakdown {
        total: w.ce * ce + w.se * se,
        ce,
        se,
    })
}

/// Gradients of the weighted loss with respect to the head logits and the
/// presence logits. Clamped probabilities contribute zero gradient.
pub(crate) fn loss_grads(
    probs: &Tensor,
    labels: &[usize],
    presence_logits: Option<&[f64]>,
    w: LossWeights,
) -> (Tensor, Option<Vec<f64>>) {
    let plane = probs.plane();
    let k = probs.channels;
    let mut g = Tensor::zeros(k, probs.shape);
    let scale = w.ce / plane as f64;
    if scale != 0.0 {
        for (p, &l) in labels.iter().enumerate() {
            let py = probs.data[l * plane + p];
            if !(EPS..=1.0 - EPS).contains(&py) {
                continue;
            }
            for c in 0..k {
                let d = if c == l { 1.0 } else { 0.0 };
                g.data[c * plane + p] = scale * (probs.data[c * plane + p] - d);
            }
        }
    }
    let gse = presence_logits.map(|z| {
        let t = presence(labels, k);
        z.iter()
            .zip(&t)
            .map(|(&zi, &ti)| {
                let s = sigmoid(zi);
                if w.se == 0.0 || !(EPS..=1.0 - EPS).contains(&s) {
                    0.0
                } else {
                    w.se * (s - ti) / k as f64
                }
            })
            .collect()
    });
    (g, gse)
}

/// [`loss_tensor`] on volumes: `probs` holds one channel per class and
/// `labels` integer class indices.
pub fn loss(
    probs: &Volume,
    labels: &Volume,
    presence_logits: Option<&[f64]>,
    w: LossWeights,
) -> Result<LossBreakdown> {
    if probs.dims() != labels.dims() || labels.channels() != 1 {
        return Err(Error::structure(format!(
            "probabilities {:?} and labels {:?}x{} do not match",
            probs.dims(),
            labels.dims(),
            labels.channels()
        )));
    }
    let idx = labels
        .data()
        .iter()
        .map(|&v| {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::Data(format!("label {v} is not a class index")))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    loss_tensor(&Tensor::from_volume(probs)?, &idx, presence_logits, w)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn onehot(labels: &[usize], k: usize) -> Tensor {
        let n = labels.len();
        let mut t = Tensor::zeros(k, [1, 1, n]);
        for (p, &l) in labels.iter().enumerate() {
            t.data[l * n + p] = 1.0;
        }
        t
    }

    #[test]
    fn perfect_prediction_is_near_zero() {
        let labels = [0, 1, 1, 0, 2];
        let l = loss_tensor(&onehot(&labels, 3), &labels, None, LossWeights { ce: 1.0, se: 0.0 }).unwrap();
        assert!(l.total <= 2e-7, "{}", l.total);
    }

    #[test]
    fn half_probabilities_give_ln2() {
        let labels = [0, 1, 1, 0];
        let p = Tensor::from_data(2, [1, 2, 2], vec![0.5; 8]).unwrap();
        let l = loss_tensor(&p, &labels, None, LossWeights { ce: 1.0, se: 0.0 }).unwrap();
        assert!((l.total - std::f64::consts::LN_2).abs() < 1e-12);
        // binary form with y = label, p = probability of class 1
        let binary = -labels
            .iter()
            .map(|&y| {
                let y = y as f64;
                y * 0.5f64.ln() + (1.0 - y) * 0.5f64.ln()
            })
            .sum::<f64>()
            / 4.0;
        assert_eq!(l.ce, binary);
    }

    #[test]
    fn saturated_presence_term() {
        let labels = [0, 1, 2];
        let l = loss_tensor(
            &onehot(&labels, 3),
            &labels,
            Some(&[40.0, 40.0, 40.0]),
            LossWeights { ce: 0.0, se: 1.0 },
        )
        .unwrap();
        assert!(l.se <= 2e-7);
    }

    #[test]
    fn zero_weights_give_zero_gradients() {
        let labels = [0, 1, 1];
        let p = Tensor::from_data(2, [1, 1, 3], vec![0.3, 0.6, 0.2, 0.7, 0.4, 0.8]).unwrap();
        let (g, gs) = loss_grads(&p, &labels, Some(&[0.1, -0.3]), LossWeights { ce: 0.0, se: 0.0 });
        assert!(g.data.iter().all(|&v| v == 0.0));
        assert!(gs.unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_and_label_errors() {
        let p = Tensor::from_data(2, [1, 1, 2], vec![0.5; 4]).unwrap();
        assert!(loss_tensor(&p, &[0], None, LossWeights::default()).is_err());
        assert!(loss_tensor(&p, &[0, 2], None, LossWeights::default()).is_err());
        assert!(loss_tensor(&p, &[0, 1], Some(&[0.0]), LossWeights::default()).is_err());
    }
}
