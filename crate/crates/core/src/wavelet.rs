//! Orthonormal discrete wavelet transforms and dyadic scattering stacks.
//!
//! The DWT path keeps the L2 (orthonormal) convention so that the periodic
//! transform preserves energy and inverts exactly. The scattering path uses
//! L1-normalized dilated wavelets `2^{-j} psi(2^{-j} t)`, realized à trous by
//! dilating the half-amplitude filter pair, so that the modulus of an fBm
//! response grows as `2^{jH}`.
//!
//! Sub-band orientation codes: bit `a` of the code is set when axis `a` was
//! high-pass filtered. Code 0 is the approximation; detail band `k` of a level
//! (zero-based) has code `k + 1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::Volume;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Haar,
    Db2,
    Db4,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    #[default]
    Periodic,
    /// Half-sample symmetric extension. The DWT becomes slightly expansive
    /// (`floor((n + taps - 1) / 2)` coefficients per axis) and still inverts
    /// exactly.
    Symmetric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaveletSpec {
    pub family: Family,
    #[serde(default)]
    pub boundary: Boundary,
}

impl WaveletSpec {
    pub fn new(family: Family, boundary: Boundary) -> Self {
        WaveletSpec { family, boundary }
    }

    pub fn periodic(family: Family) -> Self {
        Self::new(family, Boundary::Periodic)
    }

    pub fn symmetric(family: Family) -> Self {
        Self::new(family, Boundary::Symmetric)
    }

    /// Orthonormal low-pass analysis filter (coefficients sum to sqrt 2).
    pub fn lowpass(&self) -> Vec<f64> {
        match self.family {
            Family::Haar => vec![std::f64::consts::FRAC_1_SQRT_2; 2],
            Family::Db2 => {
                let s3 = 3f64.sqrt();
                let d = 4.0 * 2f64.sqrt();
                vec![(1.0 + s3) / d, (3.0 + s3) / d, (3.0 - s3) / d, (1.0 - s3) / d]
            }
            Family::Db4 => vec![
                0.230_377_813_308_896_5,
                0.714_846_570_552_915_6,
                0.630_880_767_929_858_9,
                -0.027_983_769_416_859_854,
                -0.187_034_811_719_093_08,
                0.030_841_381_835_560_764,
                0.032_883_011_666_885_2,
                -0.010_597_401_785_069_032,
            ],
        }
    }

    /// Quadrature-mirror high-pass partner, `g[k] = (-1)^k h[F-1-k]`.
    pub fn highpass(&self) -> Vec<f64> {
        let h = self.lowpass();
        let f = h.len();
        (0..f)
            .map(|k| if k % 2 == 0 { h[f - 1 - k] } else { -h[f - 1 - k] })
            .collect()
    }

    pub fn taps(&self) -> usize {
        self.lowpass().len()
    }

    /// Number of coefficients one analysis step produces from `n` samples.
    pub fn coeff_len(&self, n: usize) -> usize {
        match self.boundary {
            Boundary::Periodic => n.div_ceil(2),
            Boundary::Symmetric => (n + self.taps() - 1) / 2,
        }
    }
}

/// One multilevel decomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct Subbands {
    pub approx: Volume,
    /// `details[l][k]`: level `l + 1` (finest first), orientation code `k + 1`.
    pub details: Vec<Vec<Volume>>,
    pub spec: WaveletSpec,
    pub levels: usize,
    /// Spatial dims of the signal entering each level (`level_dims[0]` is the
    /// original input).
    pub level_dims: Vec<Vec<usize>>,
}

impl Subbands {
    pub fn coefficient_count(&self) -> usize {
        self.approx.len() + self.details.iter().flatten().map(Volume::len).sum::<usize>()
    }

    pub fn energy(&self) -> f64 {
        let sq = |v: &Volume| v.data().iter().map(|x| x * x).sum::<f64>();
        sq(&self.approx) + self.details.iter().flatten().map(sq).sum::<f64>()
    }
}

/// Orientation-averaged modulus responses `|X * psi_j|` for `j = 1..=scales`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScatterStack {
    pub coeffs: Vec<Volume>,
    pub scales: usize,
    pub spec: WaveletSpec,
}

// ---------------------------------------------------------------------------
// 1-D kernels

fn reflect(p: i64, n: usize) -> usize {
    let period = 2 * n as i64;
    let r = p.rem_euclid(period) as usize;
    if r < n {
        r
    } else {
        2 * n - 1 - r
    }
}

struct Bank {
    lo: Vec<f64>,
    hi: Vec<f64>,
    boundary: Boundary,
}

impl Bank {
    fn new(spec: &WaveletSpec) -> Self {
        Bank {
            lo: spec.lowpass(),
            hi: spec.highpass(),
            boundary: spec.boundary,
        }
    }

    fn out_len(&self, n: usize) -> usize {
        match self.boundary {
            Boundary::Periodic => n.div_ceil(2),
            Boundary::Symmetric => (n + self.lo.len() - 1) / 2,
        }
    }

    /// Analysis: `a[i] = sum_j lo[j] x(2i + 1 - j)` with boundary extension.
    fn analyze(&self, x: &[f64], lo: &mut [f64], hi: &mut [f64]) {
        let n = x.len();
        let npad = n + n % 2;
        for i in 0..lo.len() {
            let mut sa = 0.0;
            let mut sd = 0.0;
            for j in 0..self.lo.len() {
                let p = 2 * i as i64 + 1 - j as i64;
                let v = match self.boundary {
                    Boundary::Periodic => x[(p.rem_euclid(npad as i64) as usize).min(n - 1)],
                    Boundary::Symmetric => x[reflect(p, n)],
                };
                sa += self.lo[j] * v;
                sd += self.hi[j] * v;
            }
            lo[i] = sa;
            hi[i] = sd;
        }
    }

    /// Exact inverse of [`Bank::analyze`] for a signal of length `x.len()`.
    fn synthesize(&self, lo: &[f64], hi: &[f64], x: &mut [f64]) {
        let n = x.len();
        let npad = n + n % 2;
        let mut buf = vec![0.0; npad];
        for i in 0..lo.len() {
            for j in 0..self.lo.len() {
                let p = 2 * i as i64 + 1 - j as i64;
                let q = match self.boundary {
                    Boundary::Periodic => p.rem_euclid(npad as i64) as usize,
                    Boundary::Symmetric => {
                        if p < 0 || p >= n as i64 {
                            continue;
                        }
                        p as usize
                    }
                };
                buf[q] += self.lo[j] * lo[i] + self.hi[j] * hi[i];
            }
        }
        x.copy_from_slice(&buf[..n]);
    }

    /// Transpose of [`Bank::synthesize`].
    fn synthesize_adjoint(&self, xbar: &[f64], lo: &mut [f64], hi: &mut [f64]) {
        let n = xbar.len();
        let npad = n + n % 2;
        for i in 0..lo.len() {
            let mut sa = 0.0;
            let mut sd = 0.0;
            for j in 0..self.lo.len() {
                let p = 2 * i as i64 + 1 - j as i64;
                let q = match self.boundary {
                    Boundary::Periodic => p.rem_euclid(npad as i64) as usize,
                    Boundary::Symmetric => {
                        if p < 0 {
                            continue;
                        }
                        p as usize
                    }
                };
                if q >= n {
                    continue;
                }
                sa += self.lo[j] * xbar[q];
                sd += self.hi[j] * xbar[q];
            }
            lo[i] = sa;
            hi[i] = sd;
        }
    }
}

// ---------------------------------------------------------------------------
// separable n-D plumbing

/// Geometry of the lines along one axis of a channel-major buffer.
struct Lines {
    outer: usize,
    inner: usize,
}

impl Lines {
    fn new(dims: &[usize], channels: usize, axis: usize) -> Self {
        Lines {
            outer: channels * dims[..axis].iter().product::<usize>(),
            inner: dims[axis + 1..].iter().product(),
        }
    }
}

fn gather(src: &[f64], base: usize, step: usize, out: &mut [f64]) {
    for (k, v) in out.iter_mut().enumerate() {
        *v = src[base + k * step];
    }
}

fn scatter_into(dst: &mut [f64], base: usize, step: usize, line: &[f64]) {
    for (k, v) in line.iter().enumerate() {
        dst[base + k * step] = *v;
    }
}

/// Splits `data` along `axis` into low and high halves.
fn split_axis(
    data: &[f64],
    dims: &[usize],
    channels: usize,
    axis: usize,
    bank: &Bank,
) -> (Vec<f64>, Vec<f64>, Vec<usize>) {
    let n = dims[axis];
    let m = bank.out_len(n);
    let g = Lines::new(dims, channels, axis);
    let mut out_dims = dims.to_vec();
    out_dims[axis] = m;
    let mut lo = vec![0.0; g.outer * m * g.inner];
    let mut hi = vec![0.0; g.outer * m * g.inner];
    let mut line = vec![0.0; n];
    let mut la = vec![0.0; m];
    let mut ld = vec![0.0; m];
    for o in 0..g.outer {
        for r in 0..g.inner {
            gather(data, o * n * g.inner + r, g.inner, &mut line);
            bank.analyze(&line, &mut la, &mut ld);
            scatter_into(&mut lo, o * m * g.inner + r, g.inner, &la);
            scatter_into(&mut hi, o * m * g.inner + r, g.inner, &ld);
        }
    }
    (lo, hi, out_dims)
}

/// Merges low and high halves along `axis` back into a length-`n` axis.
fn merge_axis(
    lo: &[f64],
    hi: &[f64],
    dims: &[usize],
    channels: usize,
    axis: usize,
    n: usize,
    bank: &Bank,
) -> Vec<f64> {
    let m = dims[axis];
    let g = Lines::new(dims, channels, axis);
    let mut out = vec![0.0; g.outer * n * g.inner];
    let mut la = vec![0.0; m];
    let mut ld = vec![0.0; m];
    let mut line = vec![0.0; n];
    for o in 0..g.outer {
        for r in 0..g.inner {
            gather(lo, o * m * g.inner + r, g.inner, &mut la);
            gather(hi, o * m * g.inner + r, g.inner, &mut ld);
            bank.synthesize(&la, &ld, &mut line);
            scatter_into(&mut out, o * n * g.inner + r, g.inner, &line);
        }
    }
    out
}

fn merge_axis_adjoint(
    xbar: &[f64],
    dims: &[usize],
    channels: usize,
    axis: usize,
    m: usize,
    bank: &Bank,
) -> (Vec<f64>, Vec<f64>) {
    let n = dims[axis];
    let g = Lines::new(dims, channels, axis);
    let mut lo = vec![0.0; g.outer * m * g.inner];
    let mut hi = vec![0.0; g.outer * m * g.inner];
    let mut line = vec![0.0; n];
    let mut la = vec![0.0; m];
    let mut ld = vec![0.0; m];
    for o in 0..g.outer {
        for r in 0..g.inner {
            gather(xbar, o * n * g.inner + r, g.inner, &mut line);
            bank.synthesize_adjoint(&line, &mut la, &mut ld);
            scatter_into(&mut lo, o * m * g.inner + r, g.inner, &la);
            scatter_into(&mut hi, o * m * g.inner + r, g.inner, &ld);
        }
    }
    (lo, hi)
}

/// One analysis level: returns `2^d` bands indexed by orientation code.
fn analyze_level(
    data: &[f64],
    dims: &[usize],
    channels: usize,
    bank: &Bank,
) -> (Vec<Vec<f64>>, Vec<usize>) {
    let d = dims.len();
    let mut bands = vec![data.to_vec()];
    let mut cur_dims = dims.to_vec();
    for axis in 0..d {
        let mut next = vec![Vec::new(); bands.len() * 2];
        let mut next_dims = cur_dims.clone();
        for (code, band) in bands.iter().enumerate() {
            let (lo, hi, od) = split_axis(band, &cur_dims, channels, axis, bank);
            next[code] = lo;
            next[code | (1 << axis)] = hi;
            next_dims = od;
        }
        bands = next;
        cur_dims = next_dims;
    }
    (bands, cur_dims)
}

/// Inverse of [`analyze_level`].
fn synthesize_level(
    mut bands: Vec<Vec<f64>>,
    coeff_dims: &[usize],
    out_dims: &[usize],
    channels: usize,
    bank: &Bank,
) -> Vec<f64> {
    let d = coeff_dims.len();
    let mut cur_dims = coeff_dims.to_vec();
    for axis in (0..d).rev() {
        let half = bands.len() / 2;
        let mut next = Vec::with_capacity(half);
        for code in 0..half {
            next.push(merge_axis(
                &bands[code],
                &bands[code | (1 << axis)],
                &cur_dims,
                channels,
                axis,
                out_dims[axis],
                bank,
            ));
        }
        // axes are undone last to first, so `axis` is the top bit of every code
        cur_dims[axis] = out_dims[axis];
        bands = next;
    }
    bands.pop().expect("one band left")
}

/// Transpose of [`synthesize_level`].
fn synthesize_level_adjoint(
    xbar: &[f64],
    coeff_dims: &[usize],
    out_dims: &[usize],
    channels: usize,
    bank: &Bank,
) -> Vec<Vec<f64>> {
    let d = coeff_dims.len();
    let mut bands = vec![xbar.to_vec()];
    let mut cur_dims = out_dims.to_vec();
    for axis in 0..d {
        let mut next = vec![Vec::new(); bands.len() * 2];
        for (code, band) in bands.iter().enumerate() {
            let (lo, hi) =
                merge_axis_adjoint(band, &cur_dims, channels, axis, coeff_dims[axis], bank);
            next[code] = lo;
            next[code | (1 << axis)] = hi;
        }
        cur_dims[axis] = coeff_dims[axis];
        bands = next;
    }
    bands
}

fn vol(dims: &[usize], channels: usize, data: Vec<f64>) -> Volume {
    Volume::from_vec(dims, channels, data).expect("internal shape bookkeeping")
}

// ---------------------------------------------------------------------------
// public DWT

/// Multilevel forward DWT of every channel of `x`.
pub fn dwt_forward(x: &Volume, spec: &WaveletSpec, levels: usize) -> Result<Subbands> {
    if levels == 0 {
        return Err(Error::param("levels must be >= 1"));
    }
    let need = 1usize << levels;
    if let Some(d) = x.dims().iter().find(|&&d| d < need) {
        return Err(Error::param(format!(
            "dim {d} too small for {levels} levels (needs >= {need})"
        )));
    }
    let bank = Bank::new(spec);
    let channels = x.channels();
    let mut data = x.data().to_vec();
    let mut dims = x.dims().to_vec();
    let mut details = Vec::with_capacity(levels);
    let mut level_dims = Vec::with_capacity(levels);
    for _ in 0..levels {
        level_dims.push(dims.clone());
        let (mut bands, cdims) = analyze_level(&data, &dims, channels, &bank);
        let approx = std::mem::take(&mut bands[0]);
        details.push(
            bands
                .into_iter()
                .skip(1)
                .map(|b| vol(&cdims, channels, b))
                .collect(),
        );
        data = approx;
        dims = cdims;
    }
    Ok(Subbands {
        approx: vol(&dims, channels, data),
        details,
        spec: *spec,
        levels,
        level_dims,
    })
}

fn check_structure(s: &Subbands) -> Result<()> {
    if s.levels == 0 || s.details.len() != s.levels || s.level_dims.len() != s.levels {
        return Err(Error::structure(format!(
            "subbands declare {} levels but hold {} detail levels and {} level shapes",
            s.levels,
            s.details.len(),
            s.level_dims.len()
        )));
    }
    let d = s.approx.ndim();
    let channels = s.approx.channels();
    let nbands = (1 << d) - 1;
    for (l, ld) in s.level_dims.iter().enumerate() {
        if ld.len() != d {
            return Err(Error::structure(format!("level {} shape rank mismatch", l + 1)));
        }
        let cdims: Vec<usize> = ld.iter().map(|&n| s.spec.coeff_len(n)).collect();
        if s.details[l].len() != nbands {
            return Err(Error::structure(format!(
                "level {} holds {} detail bands, expected {}",
                l + 1,
                s.details[l].len(),
                nbands
            )));
        }
        for (k, b) in s.details[l].iter().enumerate() {
            if b.dims() != cdims.as_slice() || b.channels() != channels {
                return Err(Error::structure(format!(
                    "level {} band {} has dims {:?}, expected {:?}",
                    l + 1,
                    k + 1,
                    b.dims(),
                    cdims
                )));
            }
        }
        let next: &[usize] = if l + 1 < s.levels {
            &s.level_dims[l + 1]
        } else {
            s.approx.dims()
        };
        if next != cdims.as_slice() {
            return Err(Error::structure(format!(
                "level {} output dims {:?} do not match next level input {:?}",
                l + 1,
                cdims,
                next
            )));
        }
    }
    Ok(())
}

/// Exact inverse of [`dwt_forward`].
pub fn dwt_inverse(s: &Subbands) -> Result<Volume> {
    check_structure(s)?;
    let bank = Bank::new(&s.spec);
    let channels = s.approx.channels();
    let mut data = s.approx.data().to_vec();
    for l in (0..s.levels).rev() {
        let cdims = s.details[l][0].dims().to_vec();
        let mut bands = Vec::with_capacity(s.details[l].len() + 1);
        bands.push(data);
        bands.extend(s.details[l].iter().map(|b| b.data().to_vec()));
        data = synthesize_level(bands, &cdims, &s.level_dims[l], channels, &bank);
    }
    let mut out = vol(&s.level_dims[0], channels, data);
    if s.approx.spacing().len() == out.ndim() {
        out = out.with_spacing(s.approx.spacing())?;
    }
    Ok(out)
}

/// Transpose of [`dwt_inverse`]: maps a gradient on the reconstructed signal
/// back onto the coefficients. Equals [`dwt_forward`] for periodic
/// boundaries on even dims.
pub fn dwt_inverse_adjoint(
    grad: &Volume,
    spec: &WaveletSpec,
    template: &Subbands,
) -> Result<Subbands> {
    check_structure(template)?;
    if grad.dims() != template.level_dims[0].as_slice() {
        return Err(Error::structure("gradient dims differ from template input"));
    }
    let bank = Bank::new(spec);
    let channels = grad.channels();
    let mut data = grad.data().to_vec();
    let mut details = Vec::with_capacity(template.levels);
    let mut cdims = Vec::new();
    for l in 0..template.levels {
        cdims = template.details[l][0].dims().to_vec();
        let mut bands =
            synthesize_level_adjoint(&data, &cdims, &template.level_dims[l], channels, &bank);
        data = std::mem::take(&mut bands[0]);
        details.push(
            bands
                .into_iter()
                .skip(1)
                .map(|b| vol(&cdims, channels, b))
                .collect(),
        );
    }
    Ok(Subbands {
        approx: vol(&cdims, channels, data),
        details,
        spec: *spec,
        levels: template.levels,
        level_dims: template.level_dims.clone(),
    })
}

// ---------------------------------------------------------------------------
// scattering

/// Undecimated filtering along `axis` with `filt` dilated by `dil`.
fn atrous_axis(
    data: &[f64],
    dims: &[usize],
    channels: usize,
    axis: usize,
    filt: &[f64],
    dil: usize,
    boundary: Boundary,
) -> Vec<f64> {
    let n = dims[axis];
    let g = Lines::new(dims, channels, axis);
    let center = ((filt.len() - 1) / 2) as i64;
    let mut out = vec![0.0; data.len()];
    let mut line = vec![0.0; n];
    for o in 0..g.outer {
        for r in 0..g.inner {
            let base = o * n * g.inner + r;
            gather(data, base, g.inner, &mut line);
            for m in 0..n {
                let mut acc = 0.0;
                for (k, &f) in filt.iter().enumerate() {
                    let p = m as i64 + (center - k as i64) * dil as i64;
                    let idx = match boundary {
                        Boundary::Periodic => p.rem_euclid(n as i64) as usize,
                        Boundary::Symmetric => reflect(p, n),
                    };
                    acc += f * line[idx];
                }
                out[base + m * g.inner] = acc;
            }
        }
    }
    out
}

fn check_scales(x: &Volume, j: usize) -> Result<()> {
    if j < 1 {
        return Err(Error::param("at least one scale is required"));
    }
    let need = 1usize << j;
    if let Some(d) = x.dims().iter().find(|&&d| d < need) {
        return Err(Error::param(format!(
            "dim {d} too small for {j} dyadic scales (needs >= {need})"
        )));
    }
    Ok(())
}

/// Signed responses `X * psi_j` per scale and per axis orientation
/// (high-pass along one axis, low-pass along the others), `j = 1..=scales`.
/// Returned as `[scale - 1][axis]`.
pub fn scatter_signed(x: &Volume, spec: &WaveletSpec, scales: usize) -> Result<Vec<Vec<Volume>>> {
    check_scales(x, scales)?;
    let half = std::f64::consts::FRAC_1_SQRT_2;
    let lo: Vec<f64> = spec.lowpass().iter().map(|v| v * half).collect();
    let hi: Vec<f64> = spec.highpass().iter().map(|v| v * half).collect();
    let dims = x.dims().to_vec();
    let channels = x.channels();
    let d = dims.len();
    let mut approx = x.data().to_vec();
    let mut out = Vec::with_capacity(scales);
    for j in 1..=scales {
        let dil = 1usize << (j - 1);
        let mut per_axis = Vec::with_capacity(d);
        for hp_axis in 0..d {
            let mut buf = approx.clone();
            for axis in 0..d {
                let f = if axis == hp_axis { &hi } else { &lo };
                buf = atrous_axis(&buf, &dims, channels, axis, f, dil, spec.boundary);
            }
            per_axis.push(vol(&dims, channels, buf));
        }
        out.push(per_axis);
        if j < scales {
            for axis in 0..d {
                approx = atrous_axis(&approx, &dims, channels, axis, &lo, dil, spec.boundary);
            }
        }
    }
    Ok(out)
}

/// Mean over orientations of `|map(c)|`, in fixed orientation order.
pub(crate) fn orientation_average(bands: &[Volume], map: impl Fn(f64) -> f64) -> Volume {
    let first = &bands[0];
    let inv = 1.0 / bands.len() as f64;
    let mut acc = vec![0.0; first.len()];
    for b in bands {
        for (a, &v) in acc.iter_mut().zip(b.data()) {
            *a += map(v).abs();
        }
    }
    acc.iter_mut().for_each(|a| *a *= inv);
    vol(first.dims(), first.channels(), acc)
}

/// Stack of orientation-averaged moduli `|X * psi_j|`, `j = 1..=scales`.
pub fn scatter(x: &Volume, spec: &WaveletSpec, scales: usize) -> Result<ScatterStack> {
    if scales < 2 {
        return Err(Error::param("scatter needs at least 2 scales"));
    }
    let signed = scatter_signed(x, spec, scales)?;
    Ok(ScatterStack {
        coeffs: signed.iter().map(|b| orientation_average(b, |v| v)).collect(),
        scales,
        spec: *spec,
    })
}

/// Empirical q-th moment of a grid: `(1/N) sum |v|^q`.
pub fn grid_moment(values: &[f64], q: f64) -> f64 {
    let n = values.len() as f64;
    let s: f64 = if q == 1.0 {
        values.iter().map(|v| v.abs()).sum()
    } else if q == 2.0 {
        values.iter().map(|v| v * v).sum()
    } else {
        values.iter().map(|v| v.abs().powf(q)).sum()
    };
    s / n
}

/// Empirical q-th moment of the scale-`j` responses (1-based `j`).
pub fn scattering_moment(stack: &ScatterStack, j: usize, q: f64) -> Result<f64> {
    if j < 1 || j > stack.scales || j > stack.coeffs.len() {
        return Err(Error::param(format!(
            "scale {j} outside 1..={}",
            stack.scales
        )));
    }
    if !(q > 0.0 && q.is_finite()) {
        return Err(Error::param(format!("moment order must be positive, got {q}")));
    }
    Ok(grid_moment(stack.coeffs[j - 1].data(), q))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    const FAMILIES: [Family; 3] = [Family::Haar, Family::Db2, Family::Db4];

    fn random(dims: &[usize], channels: usize, seed: u64) -> Volume {
        let n = dims.iter().product::<usize>() * channels;
        let mut r = rng::seeded(seed);
        Volume::from_vec(dims, channels, rng::normals(&mut r, n)).unwrap()
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        let den: f64 = b.iter().map(|y| y * y).sum();
        (num / den).sqrt()
    }

    #[test]
    fn filters_are_orthonormal() {
        for fam in FAMILIES {
            let spec = WaveletSpec::periodic(fam);
            let h = spec.lowpass();
            let g = spec.highpass();
            let sum: f64 = h.iter().sum();
            assert!((sum - 2f64.sqrt()).abs() < 1e-14, "{fam:?} sum {sum}");
            for shift in (0..h.len()).step_by(2) {
                let hh: f64 = (0..h.len() - shift).map(|k| h[k] * h[k + shift]).sum();
                let hg: f64 = (0..h.len() - shift).map(|k| h[k] * g[k + shift]).sum();
                let expect = if shift == 0 { 1.0 } else { 0.0 };
                assert!((hh - expect).abs() < 1e-14, "{fam:?} shift {shift}: {hh}");
                assert!(hg.abs() < 1e-14);
            }
        }
    }

    #[test]
    fn haar_example() {
        let x = Volume::from_vec(&[8], 1, vec![1., 1., 1., 1., 2., 2., 2., 2.]).unwrap();
        let s = dwt_forward(&x, &WaveletSpec::periodic(Family::Haar), 1).unwrap();
        let r2 = 2f64.sqrt();
        let expect = [r2, r2, 2.0 * r2, 2.0 * r2];
        for (a, e) in s.approx.data().iter().zip(expect) {
            assert!((a - e).abs() < 1e-15);
        }
        assert!(s.details[0][0].data().iter().all(|&d| d == 0.0));
    }

    #[test]
    fn haar_pairs_by_hand() {
        let x = Volume::from_vec(&[4], 1, vec![3.0, 1.0, -2.0, 5.0]).unwrap();
        let s = dwt_forward(&x, &WaveletSpec::periodic(Family::Haar), 1).unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let a = s.approx.data();
        let d = s.details[0][0].data();
        assert!((a[0] - 4.0 * r).abs() < 1e-15 && (a[1] - 3.0 * r).abs() < 1e-15);
        // detail sign convention: (x[2i+1] - x[2i]) / sqrt 2
        assert!((d[0] + 2.0 * r).abs() < 1e-15 && (d[1] - 7.0 * r).abs() < 1e-15);
    }

    #[test]
    fn constant_input_has_zero_details() {
        for fam in FAMILIES {
            for bnd in [Boundary::Periodic, Boundary::Symmetric] {
                let x = Volume::filled(&[32, 16], 1, 3.25);
                let s = dwt_forward(&x, &WaveletSpec::new(fam, bnd), 3).unwrap();
                for band in s.details.iter().flatten() {
                    assert!(band.max_abs() < 1e-12, "{fam:?} {bnd:?}");
                }
            }
        }
    }

    #[test]
    fn energy_and_reconstruction_2d() {
        let x = random(&[64, 64], 1, 11);
        let e0: f64 = x.data().iter().map(|v| v * v).sum();
        for fam in FAMILIES {
            let s = dwt_forward(&x, &WaveletSpec::periodic(fam), 3).unwrap();
            assert_eq!(s.coefficient_count(), x.len());
            assert!((s.energy() - e0).abs() / e0 < 1e-9);
            let y = dwt_inverse(&s).unwrap();
            assert!(rel_err(y.data(), x.data()) < 1e-9);
        }
    }

    #[test]
    fn symmetric_and_odd_dims_reconstruct() {
        for fam in FAMILIES {
            for (dims, bnd) in [
                (vec![37], Boundary::Symmetric),
                (vec![37], Boundary::Periodic),
                (vec![20, 13], Boundary::Symmetric),
                (vec![20, 13], Boundary::Periodic),
                (vec![9, 10, 8], Boundary::Symmetric),
            ] {
                let x = random(&dims, 2, 5);
                let s = dwt_forward(&x, &WaveletSpec::new(fam, bnd), 2).unwrap();
                assert!(s.coefficient_count() >= x.len());
                let y = dwt_inverse(&s).unwrap();
                assert_eq!(y.dims(), x.dims());
                assert!(rel_err(y.data(), x.data()) < 1e-9, "{fam:?} {bnd:?} {dims:?}");
            }
        }
    }

    #[test]
    fn detail_dims_follow_ceil_rule() {
        let x = random(&[40, 24], 1, 3);
        let s = dwt_forward(&x, &WaveletSpec::periodic(Family::Db2), 3).unwrap();
        for (l, level) in s.details.iter().enumerate() {
            let f = 1usize << (l + 1);
            for b in level {
                assert_eq!(b.dims(), &[40usize.div_ceil(f), 24usize.div_ceil(f)]);
            }
        }
    }

    #[test]
    fn zero_subbands_give_zero_volume() {
        let x = random(&[16, 16], 1, 1);
        let mut s = dwt_forward(&x, &WaveletSpec::periodic(Family::Db4), 2).unwrap();
        s.approx.data_mut().fill(0.0);
        s.details.iter_mut().flatten().for_each(|b| b.data_mut().fill(0.0));
        assert!(dwt_inverse(&s).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zeroed_details_keep_constant_field() {
        let x = Volume::filled(&[16, 16], 1, -1.5);
        let mut s = dwt_forward(&x, &WaveletSpec::periodic(Family::Haar), 3).unwrap();
        s.details.iter_mut().flatten().for_each(|b| b.data_mut().fill(0.0));
        let y = dwt_inverse(&s).unwrap();
        assert!(y.data().iter().all(|&v| (v + 1.5).abs() < 1e-14));
    }

    #[test]
    fn shift_covariance() {
        let n = 64;
        let levels = 2;
        let x = random(&[n], 1, 8);
        let shift = 1 << levels;
        let shifted: Vec<f64> = (0..n).map(|i| x.data()[(i + n - shift) % n]).collect();
        let xs = Volume::from_vec(&[n], 1, shifted).unwrap();
        let spec = WaveletSpec::periodic(Family::Db2);
        let a = dwt_forward(&x, &spec, levels).unwrap().approx;
        let b = dwt_forward(&xs, &spec, levels).unwrap().approx;
        let m = a.len();
        for i in 0..m {
            assert!((b.data()[(i + 1) % m] - a.data()[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn structure_errors() {
        let x = random(&[16, 16], 1, 2);
        assert!(dwt_forward(&x, &WaveletSpec::periodic(Family::Haar), 0).is_err());
        assert!(matches!(
            dwt_forward(&x, &WaveletSpec::periodic(Family::Haar), 5),
            Err(Error::Param(_))
        ));
        let mut s = dwt_forward(&x, &WaveletSpec::periodic(Family::Haar), 2).unwrap();
        s.details[1].pop();
        assert!(matches!(dwt_inverse(&s), Err(Error::Structure(_))));
        let mut s = dwt_forward(&x, &WaveletSpec::periodic(Family::Haar), 2).unwrap();
        s.approx = Volume::zeros(&[3, 4], 1);
        assert!(matches!(dwt_inverse(&s), Err(Error::Structure(_))));
    }

    #[test]
    fn inverse_adjoint_matches_dot_products() {
        for fam in FAMILIES {
            for (dims, bnd) in [
                (vec![16, 12], Boundary::Periodic),
                (vec![15, 12], Boundary::Periodic),
                (vec![16, 11], Boundary::Symmetric),
            ] {
                let spec = WaveletSpec::new(fam, bnd);
                let x = random(&dims, 2, 1);
                let mut c = dwt_forward(&x, &spec, 2).unwrap();
                // random coefficients
                let mut r = rng::seeded(77);
                for v in c.approx.data_mut() {
                    *v = rng::normal(&mut r);
                }
                for b in c.details.iter_mut().flatten() {
                    for v in b.data_mut() {
                        *v = rng::normal(&mut r);
                    }
                }
                let y = random(&dims, 2, 9);
                let lhs: f64 = dwt_inverse(&c)
                    .unwrap()
                    .data()
                    .iter()
                    .zip(y.data())
                    .map(|(a, b)| a * b)
                    .sum();
                let adj = dwt_inverse_adjoint(&y, &spec, &c).unwrap();
                let dot = |a: &Volume, b: &Volume| -> f64 {
                    a.data().iter().zip(b.data()).map(|(u, v)| u * v).sum()
                };
                let rhs = dot(&c.approx, &adj.approx)
                    + c.details
                        .iter()
                        .flatten()
                        .zip(adj.details.iter().flatten())
                        .map(|(u, v)| dot(u, v))
                        .sum::<f64>();
                assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0), "{fam:?} {bnd:?}");
            }
        }
    }

    #[test]
    fn scatter_zero_and_homogeneity() {
        let spec = WaveletSpec::periodic(Family::Db2);
        let z = Volume::zeros(&[64], 1);
        let s = scatter(&z, &spec, 3).unwrap();
        assert!(s.coeffs.iter().all(|c| c.data().iter().all(|&v| v == 0.0)));

        let x = random(&[32, 32], 1, 4);
        let c = 4.0; // power of two keeps the scaling exact in floating point
        let a = scatter(&x, &spec, 3).unwrap();
        let b = scatter(&x.scaled(c), &spec, 3).unwrap();
        for (u, v) in a.coeffs.iter().zip(&b.coeffs) {
            assert!(u.data().iter().all(|&p| p >= 0.0));
            for (p, q) in u.data().iter().zip(v.data()) {
                assert_eq!(p * c, *q);
            }
        }
        let c = 2.7;
        let b = scatter(&x.scaled(c), &spec, 3).unwrap();
        for (u, v) in a.coeffs.iter().zip(&b.coeffs) {
            for (p, q) in u.data().iter().zip(v.data()) {
                assert!((p * c - q).abs() <= 1e-12 * q.abs().max(1.0));
            }
        }
    }

    #[test]
    fn scatter_rejects_bad_scales() {
        let x = random(&[16], 1, 1);
        let spec = WaveletSpec::periodic(Family::Haar);
        assert!(scatter(&x, &spec, 1).is_err());
        assert!(scatter(&x, &spec, 5).is_err());
        assert!(scatter(&x, &spec, 4).is_ok());
    }

    #[test]
    fn white_noise_scattering_decays_as_minus_half() {
        let spec = WaveletSpec::periodic(Family::Db2);
        let mut logs = [0.0; 4];
        for seed in 0..20 {
            let x = random(&[4096], 1, 1000 + seed);
            let st = scatter(&x, &spec, 4).unwrap();
            for j in 1..=4 {
                logs[j - 1] += scattering_moment(&st, j, 1.0).unwrap().log2() / 20.0;
            }
        }
        let js = [1.0, 2.0, 3.0, 4.0];
        let slope = ols_slope(&js, &logs);
        assert!((slope + 0.5).abs() <= 0.1, "slope {slope}");
    }

    fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
        sxy / sxx
    }

    #[test]
    fn moment_examples() {
        let spec = WaveletSpec::periodic(Family::Haar);
        let ones = ScatterStack {
            coeffs: vec![Volume::filled(&[8, 8], 1, 1.0), Volume::zeros(&[8, 8], 1)],
            scales: 2,
            spec,
        };
        assert_eq!(scattering_moment(&ones, 1, 1.0).unwrap(), 1.0);
        assert_eq!(scattering_moment(&ones, 2, 1.7).unwrap(), 0.0);
        assert!(scattering_moment(&ones, 0, 1.0).is_err());
        assert!(scattering_moment(&ones, 3, 1.0).is_err());
        assert!(scattering_moment(&ones, 1, 0.0).is_err());

        // q = 2 against a naive double loop
        let g = random(&[32, 32], 1, 21).map(f64::abs);
        let stack = ScatterStack {
            coeffs: vec![g.clone(), g.clone()],
            scales: 2,
            spec,
        };
        let mut naive = 0.0;
        for r in 0..32 {
            for c in 0..32 {
                let v = g.data()[r * 32 + c];
                naive += v * v;
            }
        }
        naive /= 1024.0;
        assert!((scattering_moment(&stack, 1, 2.0).unwrap() - naive).abs() < 1e-12);
    }

    #[test]
    fn moment_monotone_in_q_for_unit_interval() {
        let g = random(&[16, 16], 1, 2).map(|v| v.abs().min(1.0));
        let st = ScatterStack {
            coeffs: vec![g.clone(), g],
            scales: 2,
            spec: WaveletSpec::periodic(Family::Haar),
        };
        assert!(scattering_moment(&st, 1, 2.0).unwrap() <= scattering_moment(&st, 1, 1.0).unwrap());
    }
}
