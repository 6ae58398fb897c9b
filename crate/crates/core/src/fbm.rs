//! Fractional Brownian motion synthesis.
//!
//! 1-D series use circulant embedding of the exact fractional Gaussian noise
//! covariance (Davies-Harte / Dietrich-Newsam) followed by a cumulative sum.
//! 2-D and 3-D fields use spectral synthesis: white Gaussian noise is shaped
//! in the Fourier domain by `|f|^{-(2H+d)/2}` with the zero-frequency bin
//! removed, which keeps the spectrum Hermitian and the field real.

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::{fft_nd, signed_freq};
use crate::rng;
use crate::volume::{mean_var, Volume};

/// Smallest accepted extent along any axis.
pub const MIN_DIM: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FbmSpec {
    pub hurst: f64,
    pub dims: Vec<usize>,
    pub seed: u64,
    #[serde(default)]
    pub normalize: bool,
}

impl FbmSpec {
    pub fn new(hurst: f64, dims: &[usize], seed: u64) -> Self {
        FbmSpec {
            hurst,
            dims: dims.to_vec(),
            seed,
            normalize: false,
        }
    }

    pub fn normalized(mut self) -> Self {
        self.normalize = true;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.hurst > 0.0 && self.hurst < 1.0) {
            return Err(Error::param(format!(
                "hurst must lie strictly inside (0, 1), got {}",
                self.hurst
            )));
        }
        if self.dims.is_empty() || self.dims.len() > 3 {
            return Err(Error::param(format!(
                "fBm supports 1 to 3 dims, got {}",
                self.dims.len()
            )));
        }
        if let Some(d) = self.dims.iter().find(|&&d| d < MIN_DIM) {
            return Err(Error::param(format!(
                "every fBm dim must be >= {MIN_DIM}, got {d}"
            )));
        }
        Ok(())
    }
}

/// Synthesizes a realization of any supported dimensionality.
pub fn synth_fbm(spec: &FbmSpec) -> Result<Volume> {
    spec.validate()?;
    if spec.dims.len() == 1 {
        synth_fbm_1d(spec)
    } else {
        synth_fbm_nd(spec)
    }
}

/// Autocovariance of unit-variance fractional Gaussian noise at lag `k`.
pub fn fgn_autocovariance(hurst: f64, k: usize) -> f64 {
    let k = k as f64;
    let h2 = 2.0 * hurst;
    0.5 * ((k + 1.0).powf(h2) - 2.0 * k.powf(h2) + (k - 1.0).abs().powf(h2))
}

/// Exact fractional Gaussian noise of length `m` by circulant embedding.
fn fgn(hurst: f64, m: usize, rng: &mut rng::SeededRng) -> Vec<f64> {
    let size = 2 * m;
    let mut row: Vec<Complex64> = Vec::with_capacity(size);
    for k in 0..=m {
        row.push(Complex64::new(fgn_autocovariance(hurst, k), 0.0));
    }
    for k in (1..m).rev() {
        row.push(Complex64::new(fgn_autocovariance(hurst, k), 0.0));
    }
    fft_nd(&mut row, &[size], false);

    // The fGn embedding is nonnegative definite for every H in (0,1);
    // clamp round-off below zero.
    let scale = 1.0 / size as f64;
    let mut w: Vec<Complex64> = row
        .iter()
        .map(|ev| {
            let amp = (ev.re.max(0.0) * scale).sqrt();
            let z = Complex64::new(rng::normal(rng), rng::normal(rng));
            z * amp
        })
        .collect();
    fft_nd(&mut w, &[size], false);
    w.iter().take(m).map(|c| c.re).collect()
}

/// 1-D fBm series of length `dims[0]` starting at zero before centering.
pub fn synth_fbm_1d(spec: &FbmSpec) -> Result<Volume> {
    spec.validate()?;
    if spec.dims.len() != 1 {
        return Err(Error::param("synth_fbm_1d needs exactly one dim"));
    }
    let n = spec.dims[0];
    let mut rng = rng::seeded(spec.seed);
    let noise = fgn(spec.hurst, n - 1, &mut rng);
    let mut series = Vec::with_capacity(n);
    let mut acc = 0.0;
    series.push(acc);
    for g in noise {
        acc += g;
        series.push(acc);
    }
    post_process(&mut series, spec.normalize);
    Volume::from_vec(&spec.dims, 1, series)
}

/// Isotropic 2-D or 3-D fBm field with power spectrum `|f|^{-(2H+d)}`.
pub fn synth_fbm_nd(spec: &FbmSpec) -> Result<Volume> {
    spec.validate()?;
    let d = spec.dims.len();
    if !(2..=3).contains(&d) {
        return Err(Error::param("synth_fbm_nd needs 2 or 3 dims"));
    }
    let total: usize = spec.dims.iter().product();
    let mut rng = rng::seeded(spec.seed);
    let mut buf: Vec<Complex64> = (0..total)
        .map(|_| Complex64::new(rng::normal(&mut rng), 0.0))
        .collect();
    fft_nd(&mut buf, &spec.dims, false);

    let exponent = -(2.0 * spec.hurst + d as f64) / 2.0;
    let st = crate::volume::strides(&spec.dims);
    for (idx, c) in buf.iter_mut().enumerate() {
        let mut f2 = 0.0;
        for a in 0..d {
            let k = (idx / st[a]) % spec.dims[a];
            let f = signed_freq(k, spec.dims[a]) as f64 / spec.dims[a] as f64;
            f2 += f * f;
        }
        if f2 == 0.0 {
            *c = Complex64::new(0.0, 0.0);
        } else {
            *c *= f2.sqrt().powf(exponent);
        }
    }
    fft_nd(&mut buf, &spec.dims, true);
    let inv = 1.0 / total as f64;
    let mut field: Vec<f64> = buf.iter().map(|c| c.re * inv).collect();
    post_process(&mut field, spec.normalize);
    Volume::from_vec(&spec.dims, 1, field)
}

fn post_process(xs: &mut [f64], normalize: bool) {
    let (mean, var) = mean_var(xs);
    xs.iter_mut().for_each(|v| *v -= mean);
    if normalize && var > 0.0 {
        // second pass removes the residual mean left by rounding
        let (m2, v2) = mean_var(xs);
        let sd = v2.sqrt();
        xs.iter_mut().for_each(|v| *v = (*v - m2) / sd);
    }
}
