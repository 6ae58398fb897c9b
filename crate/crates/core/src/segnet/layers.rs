//! Dense feature tensors and the layer kernels used by the network, each with
//! its hand-written backward pass.
//!
//! Tensors are `[channels, depth, height, width]`; 2-D data uses depth 1 and
//! kernels of depth 1.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::volume::Volume;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub channels: usize,
    pub shape: [usize; 3],
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(channels: usize, shape: [usize; 3]) -> Self {
        Tensor {
            channels,
            shape,
            data: vec![0.0; channels * shape[0] * shape[1] * shape[2]],
        }
    }

    pub fn from_data(channels: usize, shape: [usize; 3], data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * shape.iter().product::<usize>() {
            return Err(Error::structure(format!(
                "tensor data length {} does not fit {channels}x{shape:?}",
                data.len()
            )));
        }
        Ok(Tensor {
            channels,
            shape,
            data,
        })
    }

    /// Volume with 2 or 3 spatial axes as a tensor.
    pub fn from_volume(v: &Volume) -> Result<Self> {
        let shape = match v.dims() {
            [h, w] => [1, *h, *w],
            [d, h, w] => [*d, *h, *w],
            other => {
                return Err(Error::structure(format!(
                    "network inputs need 2 or 3 spatial axes, got {other:?}"
                )))
            }
        };
        Tensor::from_data(v.channels(), shape, v.data().to_vec())
    }

    pub fn to_volume(&self, ndim: usize) -> Volume {
        let dims: Vec<usize> = if ndim == 2 {
            vec![self.shape[1], self.shape[2]]
        } else {
            self.shape.to_vec()
        };
        Volume::from_vec(&dims, self.channels, self.data.clone()).expect("tensor shape")
    }

    pub fn plane(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let p = self.plane();
        &self.data[c * p..(c + 1) * p]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Shape of one convolution: `cout x cin x kd x k x k` weights, same padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub kd: usize,
}

impl ConvShape {
    pub fn weight_len(&self) -> usize {
        self.cout * self.cin * self.kd * self.k * self.k
    }

    pub fn weight_dims(&self) -> Vec<usize> {
        vec![self.cout, self.cin, self.kd, self.k, self.k]
    }

    pub fn fan_in(&self) -> usize {
        self.cin * self.kd * self.k * self.k
    }
}

/// Valid output range `[lo, hi)` for a tap at offset `off` on an axis of
/// length `n`, so that `i + off` stays inside the axis.
#[inline]
fn valid(n: usize, off: isize) -> (usize, usize) {
    let lo = (-off).max(0) as usize;
    let hi = (n as isize - off.max(0)).max(0) as usize;
    (lo.min(hi), hi)
}

/// Calls `f(out_offset, in_offset, len)` for every contiguous row segment
/// touched by the tap `(dz, dy, dx)`.
#[inline]
fn for_tap_rows(shape: [usize; 3], off: [isize; 3], mut f: impl FnMut(usize, usize, usize)) {
    let [d, h, w] = shape;
    let (z0, z1) = valid(d, off[0]);
    let (y0, y1) = valid(h, off[1]);
    let (x0, x1) = valid(w, off[2]);
    if x1 <= x0 {
        return;
    }
    for z in z0..z1 {
        let zi = (z as isize + off[0]) as usize;
        for y in y0..y1 {
            let yi = (y as isize + off[1]) as usize;
            let o = (z * h + y) * w + x0;
            let i = (zi * h + yi) * w + (x0 as isize + off[2]) as usize;
            f(o, i, x1 - x0);
        }
    }
}

fn tap_offsets(s: &ConvShape) -> Vec<[isize; 3]> {
    let pz = (s.kd / 2) as isize;
    let p = (s.k / 2) as isize;
    let mut v = Vec::with_capacity(s.kd * s.k * s.k);
    for dz in 0..s.kd as isize {
        for dy in 0..s.k as isize {
            for dx in 0..s.k as isize {
                v.push([dz - pz, dy - p, dx - p]);
            }
        }
    }
    v
}

/// Same-padded convolution (cross-correlation) with bias.
pub fn conv_forward(x: &Tensor, w: &[f64], b: &[f64], s: &ConvShape) -> Tensor {
    debug_assert_eq!(x.channels, s.cin);
    let plane = x.plane();
    let taps = tap_offsets(s);
    let mut out = Tensor::zeros(s.cout, x.shape);
    for o in 0..s.cout {
        let dst = &mut out.data[o * plane..(o + 1) * plane];
        dst.fill(b[o]);
        for i in 0..s.cin {
            let src = x.channel(i);
            let wbase = (o * s.cin + i) * taps.len();
            for (t, off) in taps.iter().enumerate() {
                let wv = w[wbase + t];
                for_tap_rows(x.shape, *off, |oo, ii, n| {
                    for (d, s) in dst[oo..oo + n].iter_mut().zip(&src[ii..ii + n]) {
                        *d += wv * s;
                    }
                });
            }
        }
    }
    out
}

/// Accumulates weight and bias gradients into `gw`, `gb`; returns the input
/// gradient when `need_input` is set.
pub fn conv_backward(
    x: &Tensor,
    w: &[f64],
    gout: &Tensor,
    s: &ConvShape,
    gw: &mut [f64],
    gb: &mut [f64],
    need_input: bool,
) -> Option<Tensor> {
    let plane = x.plane();
    let taps = tap_offsets(s);
    let mut gx = need_input.then(|| Tensor::zeros(s.cin, x.shape));
    for o in 0..s.cout {
        let go = gout.channel(o);
        gb[o] += go.iter().sum::<f64>();
        for i in 0..s.cin {
            let src = x.channel(i);
            let wbase = (o * s.cin + i) * taps.len();
            for (t, off) in taps.iter().enumerate() {
                let mut acc = 0.0;
                for_tap_rows(x.shape, *off, |oo, ii, n| {
                    acc += go[oo..oo + n]
                        .iter()
                        .zip(&src[ii..ii + n])
                        .map(|(a, b)| a * b)
                        .sum::<f64>();
                });
                gw[wbase + t] += acc;
                if let Some(gx) = gx.as_mut() {
                    let wv = w[wbase + t];
                    let dst = &mut gx.data[i * plane..(i + 1) * plane];
                    for_tap_rows(x.shape, *off, |oo, ii, n| {
                        for (d, g) in dst[ii..ii + n].iter_mut().zip(&go[oo..oo + n]) {
                            *d += wv * g;
                        }
                    });
                }
            }
        }
    }
    gx
}

pub fn relu_inplace(t: &mut Tensor) {
    t.data.iter_mut().for_each(|v| *v = v.max(0.0));
}

/// Gradient through a ReLU given its output.
pub fn relu_backward(out: &Tensor, g: &mut Tensor) {
    for (gv, &o) in g.data.iter_mut().zip(&out.data) {
        if o <= 0.0 {
            *gv = 0.0;
        }
    }
}

/// Pool factors per axis: depth is pooled only for 3-D data.
pub fn pool_factors(ndim: usize) -> [usize; 3] {
    if ndim == 3 {
        [2, 2, 2]
    } else {
        [1, 2, 2]
    }
}

/// Max pooling; returns the pooled tensor and the flat source index of every
/// output (first maximum wins).
pub fn maxpool_forward(x: &Tensor, f: [usize; 3]) -> (Tensor, Vec<usize>) {
    let [d, h, w] = x.shape;
    let os = [d / f[0], h / f[1], w / f[2]];
    let mut out = Tensor::zeros(x.channels, os);
    let mut arg = vec![0usize; out.data.len()];
    let oplane = out.plane();
    let iplane = x.plane();
    for c in 0..x.channels {
        for z in 0..os[0] {
            for y in 0..os[1] {
                for xx in 0..os[2] {
                    let mut best = f64::NEG_INFINITY;
                    let mut bi = 0;
                    for dz in 0..f[0] {
                        for dy in 0..f[1] {
                            for dx in 0..f[2] {
                                let idx = c * iplane
                                    + ((z * f[0] + dz) * h + y * f[1] + dy) * w
                                    + xx * f[2]
                                    + dx;
                                if x.data[idx] > best {
                                    best = x.data[idx];
                                    bi = idx;
                                }
                            }
                        }
                    }
                    let o = c * oplane + (z * os[1] + y) * os[2] + xx;
                    out.data[o] = best;
                    arg[o] = bi;
                }
            }
        }
    }
    (out, arg)
}

pub fn maxpool_backward(g: &Tensor, arg: &[usize], input_shape: [usize; 3]) -> Tensor {
    let mut gx = Tensor::zeros(g.channels, input_shape);
    for (gv, &i) in g.data.iter().zip(arg) {
        gx.data[i] += gv;
    }
    gx
}

/// Nearest-neighbor upsampling by per-axis factors.
pub fn upsample_forward(x: &Tensor, f: [usize; 3]) -> Tensor {
    let [d, h, w] = x.shape;
    let os = [d * f[0], h * f[1], w * f[2]];
    let mut out = Tensor::zeros(x.channels, os);
    let oplane = out.plane();
    for c in 0..x.channels {
        let src = x.channel(c);
        let dst = &mut out.data[c * oplane..(c + 1) * oplane];
        for z in 0..os[0] {
            for y in 0..os[1] {
                let srow = &src[((z / f[0]) * h + y / f[1]) * w..][..w];
                let drow = &mut dst[(z * os[1] + y) * os[2]..][..os[2]];
                for (xx, v) in drow.iter_mut().enumerate() {
                    *v = srow[xx / f[2]];
                }
            }
        }
    }
    out
}

pub fn upsample_backward(g: &Tensor, f: [usize; 3]) -> Tensor {
    let [d, h, w] = g.shape;
    let is = [d / f[0], h / f[1], w / f[2]];
    let mut gx = Tensor::zeros(g.channels, is);
    let iplane = gx.plane();
    for c in 0..g.channels {
        let src = g.channel(c);
        let dst = &mut gx.data[c * iplane..(c + 1) * iplane];
        for z in 0..d {
            for y in 0..h {
                let base = ((z / f[0]) * is[1] + y / f[1]) * is[2];
                for xx in 0..w {
                    dst[base + xx / f[2]] += src[(z * h + y) * w + xx];
                }
            }
        }
    }
    gx
}

/// Channel concatenation `[a, b]`.
pub fn concat(a: &Tensor, b: &Tensor) -> Tensor {
    debug_assert_eq!(a.shape, b.shape);
    let mut data = Vec::with_capacity(a.data.len() + b.data.len());
    data.extend_from_slice(&a.data);
    data.extend_from_slice(&b.data);
    Tensor {
        channels: a.channels + b.channels,
        shape: a.shape,
        data,
    }
}

/// Splits a channel gradient back into the two concatenated parts.
pub fn split(g: Tensor, first: usize) -> (Tensor, Tensor) {
    let at = first * g.plane();
    let mut a = g.data;
    let b = a.split_off(at);
    (
        Tensor {
            channels: first,
            shape: g.shape,
            data: a,
        },
        Tensor {
            channels: g.channels - first,
            shape: g.shape,
            data: b,
        },
    )
}

/// Inverted dropout mask: each entry is 0 with probability `rate`, else
/// `1 / (1 - rate)`.
pub fn dropout_mask(len: usize, rate: f64, rng: &mut SeededRng) -> Vec<f64> {
    let keep = 1.0 / (1.0 - rate);
    (0..len)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect()
}

pub fn apply_mask(t: &mut Tensor, mask: &[f64]) {
    t.data.iter_mut().zip(mask).for_each(|(v, m)| *v *= m);
}

/// Per-pixel softmax over channels.
pub fn softmax(logits: &Tensor) -> Tensor {
    let plane = logits.plane();
    let k = logits.channels;
    let mut out = Tensor::zeros(k, logits.shape);
    for p in 0..plane {
        let mut m = f64::NEG_INFINITY;
        for c in 0..k {
            m = m.max(logits.data[c * plane + p]);
        }
        let mut s = 0.0;
        for c in 0..k {
            let e = (logits.data[c * plane + p] - m).exp();
            out.data[c * plane + p] = e;
            s += e;
        }
        for c in 0..k {
            out.data[c * plane + p] /= s;
        }
    }
    out
}
