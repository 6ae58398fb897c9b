//! Hurst exponent and fractal dimension estimation.
//!
//! The estimator regresses `log2` of the empirical scattering moments against
//! the dyadic scale index: `log2 E|X * psi_j|^q / q ≈ H j + c`, so the OLS
//! slope is the Hurst exponent and `FD = n + 1 - H`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::Volume;
use crate::wavelet::{grid_moment, orientation_average, scatter, scatter_signed, WaveletSpec};

/// Relative response level below which a scale counts as empty.
const DEGENERATE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HurstEstimate {
    pub hurst: f64,
    pub fd: f64,
    pub euclid_dim: usize,
    /// `(j, log2(moment) / q)` for every regressed scale.
    pub log_moments: Vec<(usize, f64)>,
    pub slope_stderr: f64,
    pub scales_used: (usize, usize),
    pub q: f64,
}

/// Inclusive dyadic scale range used by the regression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scales {
    pub j_min: usize,
    pub j_max: usize,
}

impl Scales {
    pub fn new(j_min: usize, j_max: usize) -> Self {
        Scales { j_min, j_max }
    }

    /// `1 ..= floor(log2(window)) - 1`.
    pub fn for_window(window: usize) -> Self {
        let l = usize::BITS - 1 - window.max(1).leading_zeros();
        Scales::new(1, (l as usize).saturating_sub(1))
    }

    fn validate(&self) -> Result<()> {
        if self.j_min < 1 || self.j_max < self.j_min + 2 {
            return Err(Error::param(format!(
                "scale range {}..={} must start at >= 1 and span at least 3 scales",
                self.j_min, self.j_max
            )));
        }
        Ok(())
    }
}

/// Regression weighting across scales.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    #[default]
    Uniform,
    /// Weight `2^{-j d}`: proportional to the number of independent
    /// coefficients at scale `j`, favoring the finest scales.
    InverseVariance,
}

/// `FD = n + 1 - H`.
pub fn fractal_dimension(hurst: f64, euclid_dim: usize) -> Result<f64> {
    if !(hurst > 0.0 && hurst < 1.0) {
        return Err(Error::param(format!("hurst {hurst} outside (0, 1)")));
    }
    if !(1..=3).contains(&euclid_dim) {
        return Err(Error::param(format!(
            "euclidean dimension {euclid_dim} outside 1..=3"
        )));
    }
    Ok(fd_of(hurst, euclid_dim))
}

#[inline]
fn fd_of(hurst: f64, euclid_dim: usize) -> f64 {
    euclid_dim as f64 + 1.0 - hurst
}

fn check_q(q: f64) -> Result<()> {
    if !(q > 0.0 && q.is_finite()) {
        return Err(Error::param(format!("moment order must be positive, got {q}")));
    }
    Ok(())
}

/// Weighted least squares of `y` on `x`; returns (slope, stderr).
fn fit_line(x: &[f64], y: &[f64], w: &[f64]) -> (f64, f64) {
    let sw: f64 = w.iter().sum();
    let mx = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let my = y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for i in 0..x.len() {
        sxy += w[i] * (x[i] - mx) * (y[i] - my);
        sxx += w[i] * (x[i] - mx) * (x[i] - mx);
    }
    let slope = sxy / sxx;
    let icpt = my - slope * mx;
    let ssr: f64 = (0..x.len())
        .map(|i| w[i] * (y[i] - icpt - slope * x[i]).powi(2))
        .sum();
    // weights normalized to mean 1 for the residual variance
    let dof = (x.len() - 2) as f64;
    let var = ssr / sw * x.len() as f64 / dof;
    let stderr = (var / (sxx / sw * x.len() as f64)).sqrt();
    (slope, stderr)
}

/// Shared tail of the plain and pooled estimators: moments per scale, then
/// the log-log regression.
fn regress(
    grids: &[Volume],
    scales: Scales,
    q: f64,
    euclid_dim: usize,
    amplitude: f64,
    weighting: Weighting,
) -> Result<HurstEstimate> {
    let mut js = Vec::new();
    let mut ys = Vec::new();
    let mut ws = Vec::new();
    for j in scales.j_min..=scales.j_max {
        let m = grid_moment(grids[j - 1].data(), q);
        let level = if q == 1.0 { m } else { m.powf(1.0 / q) };
        if !(level > DEGENERATE_TOL * amplitude) || !level.is_finite() {
            return Err(Error::Degenerate(format!(
                "scale {j} has vanishing response (moment {m:e})"
            )));
        }
        js.push(j as f64);
        ys.push(if q == 1.0 { m.log2() } else { m.log2() / q });
        ws.push(match weighting {
            Weighting::Uniform => 1.0,
            Weighting::InverseVariance => (-(j as f64) * euclid_dim as f64).exp2(),
        });
    }
    let (hurst, stderr) = fit_line(&js, &ys, &ws);
    Ok(HurstEstimate {
        hurst,
        fd: fd_of(hurst, euclid_dim),
        euclid_dim,
        log_moments: js.iter().map(|&j| j as usize).zip(ys).collect(),
        slope_stderr: stderr,
        scales_used: (scales.j_min, scales.j_max),
        q,
    })
}

fn amplitude(x: &Volume) -> Result<f64> {
    let a = x.max_abs();
    if !a.is_finite() {
        return Err(Error::Numeric {
            stage: "hurst input".into(),
        });
    }
    if a == 0.0 {
        return Err(Error::Degenerate("input is identically zero".into()));
    }
    Ok(a)
}

/// Scattering-moment Hurst estimate over `scales`.
pub fn estimate_hurst(x: &Volume, spec: &WaveletSpec, scales: Scales, q: f64) -> Result<HurstEstimate> {
    estimate_hurst_weighted(x, spec, scales, q, Weighting::Uniform)
}

pub fn estimate_hurst_weighted(
    x: &Volume,
    spec: &WaveletSpec,
    scales: Scales,
    q: f64,
    weighting: Weighting,
) -> Result<HurstEstimate> {
    scales.validate()?;
    check_q(q)?;
    let amp = amplitude(x)?;
    let stack = scatter(x, spec, scales.j_max)?;
    regress(&stack.coeffs, scales, q, x.ndim(), amp, weighting)
}

// ---------------------------------------------------------------------------
// pooled estimator

/// Pointwise nonlinearity applied to the signed wavelet responses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Nonlinearity {
    Modulus,
    Relu,
    /// `sqrt(v^2)`; numerically the modulus.
    SquareSqrt,
    Identity,
}

impl Nonlinearity {
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Nonlinearity::Modulus => v.abs(),
            Nonlinearity::Relu => v.max(0.0),
            Nonlinearity::SquareSqrt => (v * v).sqrt(),
            Nonlinearity::Identity => v,
        }
    }

    /// Lipschitz constant of the map.
    pub fn lipschitz(self) -> f64 {
        1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    Mean,
    Max,
    Identity,
}

impl Pooling {
    /// Non-overlapping `factor`-wide pooling along every spatial axis.
    /// Trailing samples that do not fill a block are dropped.
    pub fn apply(self, x: &Volume, factor: usize) -> Result<Volume> {
        self.apply_dilated(x, factor, 1)
    }

    /// Pooling over blocks of `factor` samples spaced `dilation` apart, so a
    /// grid sampled at dilation `2^{j-1}` is pooled over `factor` of its own
    /// effective samples. Each input sample lands in at most one block.
    pub fn apply_dilated(self, x: &Volume, factor: usize, dilation: usize) -> Result<Volume> {
        if factor == 0 || dilation == 0 {
            return Err(Error::param("pool factor and dilation must be >= 1"));
        }
        if self == Pooling::Identity || factor == 1 {
            return Ok(x.clone());
        }
        let dims = x.dims();
        let span = factor * dilation;
        let out_dims: Vec<usize> = dims.iter().map(|d| d / span * dilation).collect();
        if out_dims.contains(&0) {
            return Err(Error::param(format!(
                "pool span {span} larger than dims {dims:?}"
            )));
        }
        let st_in = x.strides();
        let mut out = Volume::zeros(&out_dims, x.channels());
        let st_out = out.strides();
        let block = factor.pow(dims.len() as u32);
        for c in 0..x.channels() {
            let src = x.channel(c);
            let dst = out.channel_mut(c);
            for (o, slot) in dst.iter_mut().enumerate() {
                let mut base = 0;
                for a in 0..dims.len() {
                    let u = (o / st_out[a]) % out_dims[a];
                    base += (u / dilation * span + u % dilation) * st_in[a];
                }
                let mut acc = match self {
                    Pooling::Max => f64::NEG_INFINITY,
                    _ => 0.0,
                };
                for b in 0..block {
                    let mut off = base;
                    let mut rem = b;
                    for a in (0..dims.len()).rev() {
                        off += (rem % factor) * dilation * st_in[a];
                        rem /= factor;
                    }
                    let v = src[off];
                    match self {
                        Pooling::Max => acc = acc.max(v),
                        _ => acc += v,
                    }
                }
                *slot = match self {
                    Pooling::Mean => acc / block as f64,
                    _ => acc,
                };
            }
        }
        Ok(out)
    }

    pub fn lipschitz(self) -> f64 {
        1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolSpec {
    pub nonlinearity: Nonlinearity,
    pub pooling: Pooling,
    pub factor: usize,
}

impl PoolSpec {
    pub fn new(nonlinearity: Nonlinearity, pooling: Pooling, factor: usize) -> Self {
        PoolSpec {
            nonlinearity,
            pooling,
            factor,
        }
    }

    pub fn identity() -> Self {
        Self::new(Nonlinearity::Identity, Pooling::Identity, 1)
    }
}

/// Hurst estimate from pooled, nonlinearly mapped wavelet responses:
/// each scale's grid is `S^{d/2} P(|M(X * psi_j)|)` before the moment.
/// Pooling at scale `j` is dilated by `2^{j-1}` to match the sampling of the
/// undecimated responses; plain pooling of fine scales inflates max-pooled
/// levels there and flattens the slope.
/// The `S^{d/2}` factor is the same at every scale and leaves the slope
/// unchanged.
pub fn pooled_hurst(
    x: &Volume,
    spec: &WaveletSpec,
    scales: Scales,
    q: f64,
    pool: PoolSpec,
) -> Result<HurstEstimate> {
    scales.validate()?;
    check_q(q)?;
    if pool.factor == 0 {
        return Err(Error::param("pool factor must be >= 1"));
    }
    let amp = amplitude(x)?;
    let d = x.ndim();
    let prefactor = (pool.factor as f64).powf(d as f64 / 2.0);
    let signed = scatter_signed(x, spec, scales.j_max)?;
    let mut grids = Vec::with_capacity(signed.len());
    for (j, bands) in signed.iter().enumerate() {
        let m = orientation_average(bands, |v| pool.nonlinearity.apply(v));
        let mut p = pool.pooling.apply_dilated(&m, pool.factor, 1 << j)?;
        p.data_mut().iter_mut().for_each(|v| *v *= prefactor);
        grids.push(p);
    }
    regress(&grids, scales, q, d, amp * prefactor, Weighting::Uniform)
}

// ---------------------------------------------------------------------------
// FD maps

/// Dense FD channel plus bookkeeping about degenerate windows.
#[derive(Debug, Clone, PartialEq)]
pub struct FdMap {
    pub map: Volume,
    /// Windows that fell back to the global estimate.
    pub fallback_windows: usize,
    /// Set when even the global estimate was degenerate and the map holds the
    /// sentinel `FD = n` everywhere it fell back.
    pub sentinel: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FdMapParams {
    pub window: usize,
    pub stride: usize,
    pub spec: WaveletSpec,
    pub scales: Scales,
    pub q: f64,
}

impl FdMapParams {
    /// Default scale range for `window` and first-order moments.
    pub fn new(window: usize, stride: usize, spec: WaveletSpec) -> Self {
        FdMapParams {
            window,
            stride,
            spec,
            scales: Scales::for_window(window),
            q: 1.0,
        }
    }
}

/// Global estimate, or the sentinel `FD = n` with `sentinel = true` when the
/// input is degenerate.
fn global_fd(x: &Volume, p: &FdMapParams) -> Result<(f64, bool)> {
    match estimate_hurst(x, &p.spec, p.scales, p.q) {
        Ok(e) => Ok((e.fd, false)),
        Err(Error::Degenerate(_)) => Ok((x.ndim() as f64, true)),
        Err(e) => Err(e),
    }
}

/// Single global FD broadcast over the input grid.
pub fn fd_scalar_map(x: &Volume, p: &FdMapParams) -> Result<FdMap> {
    let (fd, sentinel) = global_fd(x, p)?;
    let mut map = Volume::filled(x.dims(), 1, fd);
    map = map.with_spacing(x.spacing())?;
    Ok(FdMap {
        map,
        fallback_windows: 0,
        sentinel,
    })
}

fn window_starts(dim: usize, window: usize, stride: usize) -> Vec<usize> {
    (0..=(dim - window) / stride).map(|k| k * stride).collect()
}

fn crop(x: &Volume, start: &[usize], size: usize) -> Volume {
    let dims = x.dims();
    let d = dims.len();
    let st = x.strides();
    let wdims = vec![size; d];
    let n: usize = wdims.iter().product();
    let mut data = Vec::with_capacity(n * x.channels());
    for c in 0..x.channels() {
        let src = x.channel(c);
        for i in 0..n {
            let mut off = 0;
            let mut rem = i;
            for a in (0..d).rev() {
                off += (start[a] + rem % size) * st[a];
                rem /= size;
            }
            data.push(src[off]);
        }
    }
    Volume::from_vec(&wdims, x.channels(), data).expect("window shape")
}

/// Sliding-window FD map on the input grid.
///
/// Windows of side `window` are placed every `stride` samples; each window's
/// FD is assigned to its center and the strided grid is multilinearly
/// interpolated (clamped at the edges) back to the input grid. Degenerate
/// windows take the global FD.
pub fn fd_map(x: &Volume, p: &FdMapParams) -> Result<FdMap> {
    if p.stride == 0 {
        return Err(Error::param("stride must be >= 1"));
    }
    if !p.window.is_power_of_two() || p.window < (1 << p.scales.j_max) {
        return Err(Error::param(format!(
            "window {} must be a power of two >= 2^{}",
            p.window, p.scales.j_max
        )));
    }
    if let Some(d) = x.dims().iter().find(|&&d| d < p.window) {
        return Err(Error::param(format!(
            "window {} larger than image dim {d}",
            p.window
        )));
    }
    p.scales.validate()?;
    check_q(p.q)?;

    let dims = x.dims().to_vec();
    let d = dims.len();
    let starts: Vec<Vec<usize>> = dims
        .iter()
        .map(|&n| window_starts(n, p.window, p.stride))
        .collect();
    let counts: Vec<usize> = starts.iter().map(Vec::len).collect();
    let nwin: usize = counts.iter().product();
    let cst = crate::volume::strides(&counts);

    let results: Vec<Result<Option<f64>>> = (0..nwin)
        .into_par_iter()
        .map(|w| {
            let start: Vec<usize> = (0..d).map(|a| starts[a][(w / cst[a]) % counts[a]]).collect();
            let win = crop(x, &start, p.window);
            match estimate_hurst(&win, &p.spec, p.scales, p.q) {
                Ok(e) => Ok(Some(e.fd)),
                Err(Error::Degenerate(_)) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect();

    let mut grid = Vec::with_capacity(nwin);
    let mut missing = 0;
    for r in results {
        match r? {
            Some(v) => grid.push(Some(v)),
            None => {
                missing += 1;
                grid.push(None);
            }
        }
    }
    let mut sentinel = false;
    let grid: Vec<f64> = if missing > 0 {
        let (g, s) = global_fd(x, p)?;
        sentinel = s;
        grid.into_iter().map(|v| v.unwrap_or(g)).collect()
    } else {
        grid.into_iter().map(|v| v.expect("filled")).collect()
    };

    // multilinear interpolation of window centers onto the input grid
    let half = (p.window as f64 - 1.0) / 2.0;
    let axis_weights: Vec<Vec<(usize, usize, f64)>> = (0..d)
        .map(|a| {
            (0..dims[a])
                .map(|u| {
                    let t = ((u as f64 - half) / p.stride as f64).clamp(0.0, (counts[a] - 1) as f64);
                    let i0 = t.floor() as usize;
                    let i1 = (i0 + 1).min(counts[a] - 1);
                    (i0, i1, t - i0 as f64)
                })
                .collect()
        })
        .collect();
    let total: usize = dims.iter().product();
    let st = crate::volume::strides(&dims);
    let mut out = vec![0.0; total];
    for (idx, slot) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            let mut off = 0;
            for a in 0..d {
                let (i0, i1, f) = axis_weights[a][(idx / st[a]) % dims[a]];
                if corner >> a & 1 == 1 {
                    w *= f;
                    off += i1 * cst[a];
                } else {
                    w *= 1.0 - f;
                    off += i0 * cst[a];
                }
            }
            if w != 0.0 {
                acc += w * grid[off];
            }
        }
        *slot = acc;
    }
    let map = Volume::from_vec(&dims, 1, out)?.with_spacing(x.spacing())?;
    Ok(FdMap {
        map,
        fallback_windows: missing,
        sentinel,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fbm::{synth_fbm, FbmSpec};
    use crate::rng;
    use crate::wavelet::Family;

    #[test]
    fn fd_arithmetic() {
        assert_eq!(fractal_dimension(0.5, 2).unwrap(), 2.5);
        assert!((fractal_dimension(0.2, 2).unwrap() - 2.8).abs() < 1e-15);
        let near = fractal_dimension(1.0 - 1e-12, 3).unwrap();
        assert!((near - 3.0).abs() < 1e-11 && near > 3.0);
        assert!(fractal_dimension(1.0, 2).is_err());
        assert!(fractal_dimension(0.0, 2).is_err());
        assert!(fractal_dimension(0.5, 4).is_err());
    }

    #[test]
    fn scale_defaults() {
        assert_eq!(Scales::for_window(64), Scales::new(1, 5));
        assert_eq!(Scales::for_window(16), Scales::new(1, 3));
    }

    #[test]
    fn constant_input_is_degenerate() {
        let spec = WaveletSpec::periodic(Family::Db2);
        for v in [0.0, 4.2] {
            let x = Volume::filled(&[256], 1, v);
            assert!(matches!(
                estimate_hurst(&x, &spec, Scales::new(1, 4), 1.0),
                Err(Error::Degenerate(_))
            ));
        }
    }

    #[test]
    fn too_few_scales_is_param_error() {
        let x = synth_fbm(&FbmSpec::new(0.5, &[256], 1)).unwrap();
        let spec = WaveletSpec::periodic(Family::Db2);
        assert!(matches!(
            estimate_hurst(&x, &spec, Scales::new(1, 2), 1.0),
            Err(Error::Param(_))
        ));
        assert!(matches!(
            estimate_hurst(&x, &spec, Scales::new(0, 3), 1.0),
            Err(Error::Param(_))
        ));
        assert!(estimate_hurst(&x, &spec, Scales::new(1, 3), -1.0).is_err());
    }

    #[test]
    fn amplitude_invariance() {
        let spec = WaveletSpec::symmetric(Family::Db2);
        let x = synth_fbm(&FbmSpec::new(0.6, &[2048], 7)).unwrap();
        let a = estimate_hurst(&x, &spec, Scales::new(1, 5), 1.0).unwrap();
        let b = estimate_hurst(&x.scaled(10.0), &spec, Scales::new(1, 5), 1.0).unwrap();
        assert!((a.hurst - b.hurst).abs() < 1e-12, "{} {}", a.hurst, b.hurst);
        assert_eq!(a.fd, a.euclid_dim as f64 + 1.0 - a.hurst);
    }

    #[test]
    fn pooled_identity_matches_plain_bitwise() {
        let spec = WaveletSpec::periodic(Family::Db2);
        let x = synth_fbm(&FbmSpec::new(0.4, &[64, 64], 3)).unwrap();
        let s = Scales::new(1, 4);
        let a = estimate_hurst(&x, &spec, s, 1.0).unwrap();
        let b = pooled_hurst(&x, &spec, s, 1.0, PoolSpec::identity()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn pooling_shapes_and_values() {
        let x = Volume::from_vec(&[4, 4], 1, (0..16).map(f64::from).collect()).unwrap();
        let m = Pooling::Max.apply(&x, 2).unwrap();
        assert_eq!(m.data(), &[5.0, 7.0, 13.0, 15.0]);
        let a = Pooling::Mean.apply(&x, 2).unwrap();
        assert_eq!(a.data(), &[2.5, 4.5, 10.5, 12.5]);
        assert!(Pooling::Mean.apply(&x, 5).is_err());
        assert_eq!(Pooling::Identity.apply(&x, 2).unwrap(), x);
        let y = Volume::from_vec(&[8], 1, vec![1.0, 2.0, 5.0, 0.0, 3.0, 9.0, 4.0, 4.0]).unwrap();
        let d = Pooling::Max.apply_dilated(&y, 2, 2).unwrap();
        assert_eq!(d.data(), &[5.0, 2.0, 4.0, 9.0]);
    }

    fn l2(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
    }

    #[test]
    fn lipschitz_certificates() {
        let mut r = rng::seeded(99);
        let mut violations = 0;
        for _ in 0..1000 {
            let a = rng::normals(&mut r, 64);
            let b = rng::normals(&mut r, 64);
            let din = l2(&a, &b);
            for nl in [Nonlinearity::Modulus, Nonlinearity::Relu, Nonlinearity::SquareSqrt] {
                let ma: Vec<f64> = a.iter().map(|&v| nl.apply(v)).collect();
                let mb: Vec<f64> = b.iter().map(|&v| nl.apply(v)).collect();
                if l2(&ma, &mb) > nl.lipschitz() * din {
                    violations += 1;
                }
            }
            let va = Volume::from_vec(&[8, 8], 1, a.clone()).unwrap();
            let vb = Volume::from_vec(&[8, 8], 1, b.clone()).unwrap();
            for p in [Pooling::Mean, Pooling::Max] {
                let pa = p.apply(&va, 2).unwrap();
                let pb = p.apply(&vb, 2).unwrap();
                if l2(pa.data(), pb.data()) > p.lipschitz() * din {
                    violations += 1;
                }
            }
        }
        assert_eq!(violations, 0);
    }

    #[test]
    fn fd_map_shape_and_constant_sentinel() {
        let p = FdMapParams::new(16, 8, WaveletSpec::symmetric(Family::Db2));
        let x = Volume::filled(&[48, 40], 1, 1.0);
        let m = fd_map(&x, &p).unwrap();
        assert_eq!(m.map.dims(), x.dims());
        assert!(m.sentinel);
        assert!(m.fallback_windows > 0);
        assert!(m.map.data().iter().all(|&v| v == 2.0));

        let y = synth_fbm(&FbmSpec::new(0.5, &[48, 40], 1)).unwrap();
        let m = fd_map(&y, &p).unwrap();
        assert_eq!(m.map.dims(), y.dims());
        assert!(!m.sentinel);
        assert!(m.map.all_finite());
    }

    #[test]
    fn fd_map_parameter_errors() {
        let x = synth_fbm(&FbmSpec::new(0.5, &[32, 32], 1)).unwrap();
        let spec = WaveletSpec::periodic(Family::Haar);
        assert!(fd_map(&x, &FdMapParams::new(64, 8, spec)).is_err());
        assert!(fd_map(&x, &FdMapParams::new(16, 0, spec)).is_err());
        assert!(fd_map(&x, &FdMapParams::new(12, 4, spec)).is_err());
        let mut p = FdMapParams::new(8, 4, spec);
        p.scales = Scales::new(1, 4);
        assert!(fd_map(&x, &p).is_err());
    }

    #[test]
    fn fd_map_matches_serial_evaluation() {
        let x = synth_fbm(&FbmSpec::new(0.3, &[32, 32], 4)).unwrap();
        let p = FdMapParams::new(16, 8, WaveletSpec::symmetric(Family::Haar));
        let m = fd_map(&x, &p).unwrap();
        // window (0, 0) center is 7.5: voxel 7 and 8 straddle it
        let w = crop(&x, &[0, 0], 16);
        let e = estimate_hurst(&w, &p.spec, p.scales, 1.0).unwrap();
        assert_eq!(m.map.data()[0], e.fd);
    }

    fn mean_estimate(h: f64, dims: &[usize], spec: WaveletSpec, s: Scales, seeds: u64) -> f64 {
        (0..seeds)
            .map(|seed| {
                let x = synth_fbm(&FbmSpec::new(h, dims, seed)).unwrap();
                estimate_hurst(&x, &spec, s, 1.0).unwrap().hurst
            })
            .sum::<f64>()
            / seeds as f64
    }

    /// Structure-function estimate: slope of log2 Var(increment at lag 2^k)
    /// over k, halved.
    fn increment_variance_hurst(x: &[f64]) -> f64 {
        let pts: Vec<(f64, f64)> = (0..6)
            .map(|k| {
                let lag = 1usize << k;
                let inc: Vec<f64> = x.windows(lag + 1).map(|w| w[lag] - w[0]).collect();
                (k as f64, crate::volume::mean_var(&inc).1.log2())
            })
            .collect();
        let (xs, ys): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
        fit_line(&xs, &ys, &[1.0; 6]).0 / 2.0
    }

    #[test]
    fn recovers_h07_in_1d() {
        let spec = WaveletSpec::periodic(Family::Db2);
        let mut wave = 0.0;
        let mut sf = 0.0;
        for seed in 0..20 {
            let x = synth_fbm(&FbmSpec::new(0.7, &[8192], seed)).unwrap();
            wave += estimate_hurst(&x, &spec, Scales::new(1, 5), 1.0).unwrap().hurst;
            sf += increment_variance_hurst(x.data());
        }
        wave /= 20.0;
        sf /= 20.0;
        assert!((wave - 0.7).abs() <= 0.05, "wavelet {wave}");
        assert!((sf - 0.7).abs() <= 0.05, "structure function {sf}");
        assert!((wave - sf).abs() <= 0.05);
    }

    #[test]
    fn pooled_variants_recover_h07() {
        let spec = WaveletSpec::periodic(Family::Db2);
        let s = Scales::new(1, 5);
        let mut mean_pool = 0.0;
        let mut max_pool = 0.0;
        for seed in 0..20 {
            let x = synth_fbm(&FbmSpec::new(0.7, &[8192], seed)).unwrap();
            let a = pooled_hurst(&x, &spec, s, 1.0, PoolSpec::new(Nonlinearity::Modulus, Pooling::Mean, 2)).unwrap();
            let b = pooled_hurst(&x, &spec, s, 1.0, PoolSpec::new(Nonlinearity::Relu, Pooling::Max, 2)).unwrap();
            assert!(b.hurst.is_finite());
            assert_eq!(a.fd, 2.0 - a.hurst);
            mean_pool += a.hurst;
            max_pool += b.hurst;
        }
        mean_pool /= 20.0;
        max_pool /= 20.0;
        assert!((mean_pool - 0.7).abs() <= 0.07, "mean pool {mean_pool}");
        assert!((max_pool - 0.7).abs() <= 0.15, "max pool {max_pool}");
    }

    #[test]
    fn recovery_is_monotone() {
        let spec = WaveletSpec::symmetric(Family::Db2);
        let means: Vec<f64> = [0.2, 0.35, 0.5, 0.65, 0.8]
            .iter()
            .map(|&h| mean_estimate(h, &[4096], spec, Scales::new(3, 8), 20))
            .collect();
        assert!(means.windows(2).all(|w| w[0] < w[1]), "{means:?}");
    }

    #[test]
    fn homogeneous_fd_map_statistics() {
        let p = FdMapParams::new(64, 32, WaveletSpec::periodic(Family::Db2));
        let (mut mean, mut sd) = (0.0, 0.0);
        for seed in 0..10 {
            let x = synth_fbm(&FbmSpec::new(0.5, &[256, 256], seed)).unwrap();
            let m = fd_map(&x, &p).unwrap();
            let (mu, var) = crate::volume::mean_var(m.map.data());
            mean += mu / 10.0;
            sd += var.sqrt() / 10.0;
        }
        assert!((mean - 2.5).abs() <= 0.1, "mean {mean}");
        assert!(sd < 0.15, "sd {sd}");
    }

    #[test]
    fn rough_disk_has_higher_fd_than_background() {
        let n = 128;
        let p = FdMapParams::new(16, 8, WaveletSpec::periodic(Family::Db2));
        for seed in 0..10 {
            let bg = synth_fbm(&FbmSpec::new(0.8, &[n, n], 2 * seed).normalized()).unwrap();
            let fg = synth_fbm(&FbmSpec::new(0.3, &[n, n], 2 * seed + 1).normalized()).unwrap();
            let c = n as f64 / 2.0;
            let r = n as f64 / 4.0;
            let inside = |i: usize| {
                let (y, x) = ((i / n) as f64 + 0.5, (i % n) as f64 + 0.5);
                (y - c).hypot(x - c) < r
            };
            let data: Vec<f64> = (0..n * n)
                .map(|i| if inside(i) { fg.data()[i] } else { bg.data()[i] })
                .collect();
            let x = Volume::from_vec(&[n, n], 1, data).unwrap();
            let m = fd_map(&x, &p).unwrap();
            let (mut fi, mut ni, mut fo, mut no) = (0.0, 0, 0.0, 0);
            for (i, &v) in m.map.data().iter().enumerate() {
                let (y, xx) = ((i / n) as f64 + 0.5, (i % n) as f64 + 0.5);
                let d = (y - c).hypot(xx - c);
                if d < r - 12.0 {
                    fi += v;
                    ni += 1;
                } else if d > r + 12.0 {
                    fo += v;
                    no += 1;
                }
            }
            assert!(fi / ni as f64 > fo / no as f64, "seed {seed}");
        }
    }

    #[test]
    fn scalar_map_broadcasts_global_fd() {
        let x = synth_fbm(&FbmSpec::new(0.5, &[64, 64], 2)).unwrap();
        let p = FdMapParams::new(32, 16, WaveletSpec::periodic(Family::Db2));
        let m = fd_scalar_map(&x, &p).unwrap();
        let e = estimate_hurst(&x, &p.spec, p.scales, 1.0).unwrap();
        assert!(m.map.data().iter().all(|&v| v == e.fd));
    }

    #[test]
    fn weighted_fit_stays_close() {
        let x = synth_fbm(&FbmSpec::new(0.5, &[128, 128], 5)).unwrap();
        let spec = WaveletSpec::periodic(Family::Db2);
        let a = estimate_hurst(&x, &spec, Scales::new(1, 5), 1.0).unwrap();
        let b = estimate_hurst_weighted(&x, &spec, Scales::new(1, 5), 1.0, Weighting::InverseVariance).unwrap();
        assert!((a.hurst - b.hurst).abs() < 0.1);
        assert_eq!(b.fd, 3.0 - b.hurst);
    }

    proptest::proptest! {
        #[test]
        fn fd_identity_is_exact(h in 0.01f64..0.99, seed in 0u64..1000) {
            let x = synth_fbm(&FbmSpec::new(h, &[64], seed)).unwrap();
            let e = estimate_hurst(&x, &WaveletSpec::periodic(Family::Haar), Scales::new(1, 3), 1.0).unwrap();
            proptest::prop_assert_eq!(e.fd - (e.euclid_dim as f64 + 1.0 - e.hurst), 0.0);
        }
    }
}
