//! Parameters, forward pass with cache, and the matching backward pass.

use std::hash::{Hash, Hasher};

use rand::Rng;

use super::input::{prepare_input, unpack_subbands, unpack_subbands_adjoint};
use super::layers::{
    apply_mask, concat, conv_backward, conv_forward, dropout_mask, maxpool_backward, maxpool_forward,
    pool_factors, relu_backward, relu_inplace, softmax, split, upsample_backward, upsample_forward,
    ConvShape, Tensor,
};
use super::loss::{loss_grads, LossWeights};
use super::ArchSpec;
use crate::error::{Error, Result};
use crate::rng::{self, SeededRng};
use crate::volume::Volume;
use crate::wavelet::{dwt_inverse, dwt_inverse_adjoint, Subbands};

#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Index of a convolution's weight tensor; the bias follows it.
#[derive(Debug, Clone, Copy)]
struct ConvSlot {
    shape: ConvShape,
    weight: usize,
}

#[derive(Debug, Clone)]
struct Layout {
    enc: Vec<[ConvSlot; 2]>,
    bottleneck: [ConvSlot; 2],
    /// Indexed by stage, like `enc`.
    dec: Vec<[ConvSlot; 2]>,
    wave_out: Option<ConvSlot>,
    head: ConvSlot,
    /// Weight index of the presence head (`classes x bottleneck channels`).
    se: Option<usize>,
    tensors: Vec<(String, Vec<usize>)>,
}

impl Layout {
    fn new(arch: &ArchSpec) -> Layout {
        let mut tensors = Vec::new();
        let kd = if arch.ndim == 3 { arch.kernel_size } else { 1 };
        let mut add = |name: String, cin: usize, cout: usize, k: usize, kd: usize| {
            let shape = ConvShape { cin, cout, k, kd };
            let weight = tensors.len();
            tensors.push((format!("{name}.weight"), shape.weight_dims()));
            tensors.push((format!("{name}.bias"), vec![cout]));
            ConvSlot { shape, weight }
        };
        let k = arch.kernel_size;
        let mut enc = Vec::new();
        let mut cin = arch.encoder_in_channels();
        for s in 0..arch.depth {
            let f = arch.stage_filters(s);
            enc.push([
                add(format!("enc{s}.conv1"), cin, f, k, kd),
                add(format!("enc{s}.conv2"), f, f, k, kd),
            ]);
            cin = f;
        }
        let fb = arch.stage_filters(arch.depth);
        let bottleneck = [
            add("bottleneck.conv1".into(), cin, fb, k, kd),
            add("bottleneck.conv2".into(), fb, fb, k, kd),
        ];
        let mut dec_rev = Vec::new();
        let mut below = fb;
        for s in (0..arch.depth).rev() {
            let f = arch.stage_filters(s);
            dec_rev.push([
                add(format!("dec{s}.conv1"), below + f, f, k, kd),
                add(format!("dec{s}.conv2"), f, f, k, kd),
            ]);
            below = f;
        }
        dec_rev.reverse();
        let mut head_in = arch.base_filters;
        let wave_out = (arch.wavelet_levels > 0).then(|| {
            head_in = arch.wave_groups();
            add(
                "wave_out".into(),
                arch.base_filters,
                arch.wave_groups() * arch.bands_per_channel(),
                1,
                1,
            )
        });
        let head = add("head".into(), head_in, arch.num_classes, 1, 1);
        let se = arch.se_head.then(|| {
            let i = tensors.len();
            tensors.push(("se.weight".into(), vec![arch.num_classes, fb]));
            tensors.push(("se.bias".into(), vec![arch.num_classes]));
            i
        });
        Layout {
            enc,
            bottleneck,
            dec: dec_rev,
            wave_out,
            head,
            se,
            tensors,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub arch: ArchSpec,
    pub init_seed: u64,
    pub tensors: Vec<ParamTensor>,
}

impl NetworkParams {
    /// Weights uniform in `±sqrt(6 / fan_in)`, biases zero.
    pub fn init(arch: &ArchSpec, init_seed: u64) -> Result<Self> {
        arch.validate()?;
        let layout = Layout::new(arch);
        let mut r = rng::seeded(init_seed);
        let tensors = layout
            .tensors
            .iter()
            .map(|(name, shape)| {
                let n: usize = shape.iter().product();
                let data = if name.ends_with(".bias") {
                    vec![0.0; n]
                } else {
                    let fan_in: usize = shape[1..].iter().product();
                    let a = (6.0 / fan_in as f64).sqrt();
                    (0..n).map(|_| r.random_range(-a..a)).collect()
                };
                ParamTensor {
                    name: name.clone(),
                    shape: shape.clone(),
                    data,
                }
            })
            .collect();
        Ok(NetworkParams {
            arch: arch.clone(),
            init_seed,
            tensors,
        })
    }

    /// Parameters with the given tensors, checked against the arch layout.
    pub fn from_tensors(arch: &ArchSpec, init_seed: u64, tensors: Vec<ParamTensor>) -> Result<Self> {
        arch.validate()?;
        let layout = Layout::new(arch);
        if layout.tensors.len() != tensors.len() {
            return Err(Error::structure(format!(
                "arch needs {} tensors, got {}",
                layout.tensors.len(),
                tensors.len()
            )));
        }
        for ((name, shape), t) in layout.tensors.iter().zip(&tensors) {
            if *name != t.name || *shape != t.shape || t.data.len() != shape.iter().product::<usize>() {
                return Err(Error::structure(format!(
                    "tensor {} {:?} does not match expected {name} {shape:?}",
                    t.name, t.shape
                )));
            }
        }
        Ok(NetworkParams {
            arch: arch.clone(),
            init_seed,
            tensors,
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    fn w(&self, slot: ConvSlot) -> (&[f64], &[f64]) {
        (&self.tensors[slot.weight].data, &self.tensors[slot.weight + 1].data)
    }
}

/// Gradients aligned with [`NetworkParams::tensors`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(p: &NetworkParams) -> Self {
        Gradients {
            tensors: p.tensors.iter().map(|t| vec![0.0; t.data.len()]).collect(),
        }
    }

    pub fn add_scaled(&mut self, other: &Gradients, s: f64) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += s * y);
        }
    }
}

#[derive(Debug, Clone)]
struct StageCache {
    input: Tensor,
    a1: Tensor,
    a2: Tensor,
    mask: Option<Vec<f64>>,
}

/// Intermediates recorded by [`forward_tensor`] for [`backward`].
#[derive(Debug, Clone)]
pub struct Cache {
    arch: ArchSpec,
    enc: Vec<StageCache>,
    pool_args: Vec<Vec<usize>>,
    bottleneck: StageCache,
    dec: Vec<StageCache>,
    wave_in: Option<Tensor>,
    wave_template: Option<Subbands>,
    head_in: Tensor,
    pooled: Option<Vec<f64>>,
    pub probs: Tensor,
    pub presence_logits: Option<Vec<f64>>,
}

impl Cache {
    /// Hash of every ReLU on/off state and max-pool winner. Two passes with
    /// equal signatures lie on the same smooth piece of the network.
    pub fn kink_signature(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        let stages = self.enc.iter().chain(std::iter::once(&self.bottleneck)).chain(&self.dec);
        for s in stages {
            for t in [&s.a1, &s.a2] {
                for v in &t.data {
                    (*v > 0.0).hash(&mut h);
                }
            }
        }
        self.pool_args.hash(&mut h);
        h.finish()
    }
}

pub struct ForwardOutput {
    pub probs: Tensor,
    pub presence_logits: Option<Vec<f64>>,
    pub cache: Cache,
}

fn finite(t: &Tensor, stage: &str) -> Result<()> {
    if t.all_finite() {
        Ok(())
    } else {
        Err(Error::Numeric {
            stage: stage.to_string(),
        })
    }
}

fn stage_forward(
    p: &NetworkParams,
    slots: &[ConvSlot; 2],
    x: Tensor,
    drop: Option<(f64, &mut SeededRng)>,
    tag: &str,
) -> Result<(Tensor, StageCache)> {
    let (w1, b1) = p.w(slots[0]);
    let mut a1 = conv_forward(&x, w1, b1, &slots[0].shape);
    relu_inplace(&mut a1);
    let (w2, b2) = p.w(slots[1]);
    let mut a2 = conv_forward(&a1, w2, b2, &slots[1].shape);
    relu_inplace(&mut a2);
    finite(&a2, tag)?;
    let mut out = a2.clone();
    let mask = drop.map(|(rate, r)| {
        let m = dropout_mask(out.data.len(), rate, r);
        apply_mask(&mut out, &m);
        m
    });
    Ok((
        out,
        StageCache {
            input: x,
            a1,
            a2,
            mask,
        },
    ))
}

fn stage_backward(
    p: &NetworkParams,
    g: &mut Gradients,
    slots: &[ConvSlot; 2],
    c: &StageCache,
    mut gout: Tensor,
    need_input: bool,
) -> Option<Tensor> {
    if let Some(m) = &c.mask {
        apply_mask(&mut gout, m);
    }
    relu_backward(&c.a2, &mut gout);
    let (w2, _) = p.w(slots[1]);
    let (gw, gb) = pair_mut(&mut g.tensors, slots[1].weight);
    let mut g1 = conv_backward(&c.a1, w2, &gout, &slots[1].shape, gw, gb, true).expect("input grad");
    relu_backward(&c.a1, &mut g1);
    let (w1, _) = p.w(slots[0]);
    let (gw, gb) = pair_mut(&mut g.tensors, slots[0].weight);
    conv_backward(&c.input, w1, &g1, &slots[0].shape, gw, gb, need_input)
}

fn pair_mut(t: &mut [Vec<f64>], i: usize) -> (&mut [f64], &mut [f64]) {
    let (a, b) = t.split_at_mut(i + 1);
    (&mut a[i], &mut b[0])
}

fn full_dims(arch: &ArchSpec, grid: [usize; 3]) -> Vec<usize> {
    let f = arch.grid_factor();
    let g: Vec<usize> = if arch.ndim == 3 {
        grid.to_vec()
    } else {
        grid[1..].to_vec()
    };
    g.iter().map(|n| n * f).collect()
}

/// Forward pass on a prepared encoder input. With `stochastic` set and a
/// nonzero dropout rate, masks are drawn from `seed` in layer order.
pub fn forward_tensor(p: &NetworkParams, input: &Tensor, stochastic: bool, seed: u64) -> Result<ForwardOutput> {
    let arch = &p.arch;
    if input.channels != arch.encoder_in_channels() {
        return Err(Error::structure(format!(
            "encoder input has {} channels, arch expects {}",
            input.channels,
            arch.encoder_in_channels()
        )));
    }
    arch.check_dims(&full_dims(arch, input.shape))?;
    let layout = Layout::new(arch);
    let mut r = rng::seeded(seed);
    let use_drop = stochastic && arch.dropout_rate > 0.0;
    let rate = arch.dropout_rate;
    let pf = pool_factors(arch.ndim);

    let mut h = input.clone();
    let mut skips = Vec::with_capacity(arch.depth);
    let mut enc = Vec::with_capacity(arch.depth);
    let mut pool_args = Vec::with_capacity(arch.depth);
    for (s, slots) in layout.enc.iter().enumerate() {
        let (out, c) = stage_forward(p, slots, h, use_drop.then_some((rate, &mut r)), &format!("encoder{s}"))?;
        let (pooled, arg) = maxpool_forward(&out, pf);
        skips.push(out);
        enc.push(c);
        pool_args.push(arg);
        h = pooled;
    }
    let (b, bottleneck) = stage_forward(p, &layout.bottleneck, h, None, "bottleneck")?;

    let (pooled, presence_logits) = match layout.se {
        Some(i) => {
            let plane = b.plane() as f64;
            let pooled: Vec<f64> = (0..b.channels)
                .map(|c| b.channel(c).iter().sum::<f64>() / plane)
                .collect();
            let w = &p.tensors[i].data;
            let bias = &p.tensors[i + 1].data;
            let logits = (0..arch.num_classes)
                .map(|k| {
                    bias[k]
                        + w[k * b.channels..(k + 1) * b.channels]
                            .iter()
                            .zip(&pooled)
                            .map(|(a, x)| a * x)
                            .sum::<f64>()
                })
                .collect();
            (Some(pooled), Some(logits))
        }
        None => (None, None),
    };

    let mut h = b;
    let mut dec: Vec<Option<StageCache>> = vec![None; arch.depth];
    for s in (0..arch.depth).rev() {
        let u = upsample_forward(&h, pf);
        let c = concat(&u, &skips[s]);
        let (out, cache) =
            stage_forward(p, &layout.dec[s], c, use_drop.then_some((rate, &mut r)), &format!("decoder{s}"))?;
        dec[s] = Some(cache);
        h = out;
    }

    let (head_in, wave_in, wave_template) = match layout.wave_out {
        Some(slot) => {
            let (w, bias) = p.w(slot);
            let packed = conv_forward(&h, w, bias, &slot.shape);
            let sub = unpack_subbands(&packed, &arch.wavelet, arch.wavelet_levels, &full_dims(arch, input.shape))?;
            let y = Tensor::from_volume(&dwt_inverse(&sub)?)?;
            finite(&y, "inverse_dwt")?;
            (y, Some(h), Some(sub))
        }
        None => (h, None, None),
    };
    let (w, bias) = p.w(layout.head);
    let logits = conv_forward(&head_in, w, bias, &layout.head.shape);
    finite(&logits, "head")?;
    let probs = softmax(&logits);
    finite(&probs, "softmax")?;

    let cache = Cache {
        arch: arch.clone(),
        enc,
        pool_args,
        bottleneck,
        dec: dec.into_iter().map(|c| c.expect("decoder stage")).collect(),
        wave_in,
        wave_template,
        head_in,
        pooled,
        probs: probs.clone(),
        presence_logits: presence_logits.clone(),
    };
    Ok(ForwardOutput {
        probs,
        presence_logits,
        cache,
    })
}

/// Prepares `x` and runs [`forward_tensor`]; returns per-class probabilities
/// on the input grid.
pub fn forward(p: &NetworkParams, x: &Volume, stochastic: bool, seed: u64) -> Result<(Volume, Cache)> {
    let input = prepare_input(&p.arch, x)?;
    let out = forward_tensor(p, &input, stochastic, seed)?;
    let v = out.probs.to_volume(p.arch.ndim).with_spacing(x.spacing())?;
    Ok((v, out.cache))
}

/// Gradients of the weighted loss for the pass recorded in `cache`.
/// `labels` holds one class index per output pixel.
pub fn backward(p: &NetworkParams, cache: &Cache, labels: &[usize], weights: LossWeights) -> Result<Gradients> {
    if cache.arch != p.arch {
        return Err(Error::structure("cache was produced by a different architecture"));
    }
    if labels.len() != cache.probs.plane() {
        return Err(Error::structure(format!(
            "{} labels for a {}-pixel output",
            labels.len(),
            cache.probs.plane()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= p.arch.num_classes) {
        return Err(Error::Data(format!("class index {bad} out of range")));
    }
    let arch = &p.arch;
    let layout = Layout::new(arch);
    let mut g = Gradients::zeros_like(p);
    let pf = pool_factors(arch.ndim);
    let (glogits, gse) = loss_grads(&cache.probs, labels, cache.presence_logits.as_deref(), weights);

    let (w, _) = p.w(layout.head);
    let (gw, gb) = pair_mut(&mut g.tensors, layout.head.weight);
    let ghead = conv_backward(&cache.head_in, w, &glogits, &layout.head.shape, gw, gb, true).expect("input grad");

    let mut gh = match (layout.wave_out, &cache.wave_in, &cache.wave_template) {
        (Some(slot), Some(win), Some(tpl)) => {
            let gsub = dwt_inverse_adjoint(&ghead.to_volume(arch.ndim), &arch.wavelet, tpl)?;
            let gpacked = unpack_subbands_adjoint(&gsub)?;
            let (w, _) = p.w(slot);
            let (gw, gb) = pair_mut(&mut g.tensors, slot.weight);
            conv_backward(win, w, &gpacked, &slot.shape, gw, gb, true).expect("input grad")
        }
        (None, _, _) => ghead,
        _ => return Err(Error::structure("cache lacks the wavelet output stage")),
    };

    let mut skip_grads = Vec::with_capacity(arch.depth);
    for s in 0..arch.depth {
        let gc = stage_backward(p, &mut g, &layout.dec[s], &cache.dec[s], gh, true).expect("input grad");
        let up_channels = gc.channels - arch.stage_filters(s);
        let (gu, gskip) = split(gc, up_channels);
        skip_grads.push(gskip);
        gh = upsample_backward(&gu, pf);
    }

    if let (Some(i), Some(gz), Some(pooled)) = (layout.se, gse, &cache.pooled) {
        let fb = pooled.len();
        let plane = gh.plane();
        for (k, gzk) in gz.iter().enumerate() {
            for c in 0..fb {
                g.tensors[i][k * fb + c] += gzk * pooled[c];
                let wkc = p.tensors[i].data[k * fb + c];
                let share = gzk * wkc / plane as f64;
                gh.data[c * plane..(c + 1) * plane].iter_mut().for_each(|v| *v += share);
            }
            g.tensors[i + 1][k] += gzk;
        }
    }
    gh = stage_backward(p, &mut g, &layout.bottleneck, &cache.bottleneck, gh, true).expect("input grad");

    for s in (0..arch.depth).rev() {
        let mut gd = maxpool_backward(&gh, &cache.pool_args[s], cache.enc[s].a2.shape);
        gd.data.iter_mut().zip(&skip_grads[s].data).for_each(|(a, b)| *a += b);
        match stage_backward(p, &mut g, &layout.enc[s], &cache.enc[s], gd, s > 0) {
            Some(t) => gh = t,
            None => break,
        }
    }
    Ok(g)
}
