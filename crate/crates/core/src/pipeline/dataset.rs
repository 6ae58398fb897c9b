//! Two-texture synthetic segmentation cases: a rough fBm ellipse blended into
//! a smoother fBm background.

use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::volume_file::{load_volume, save_volume, VolumeFile};
use crate::error::{Error, Result};
use crate::fbm::{synth_fbm, FbmSpec};
use crate::rng;
use crate::volume::Volume;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSpec {
    pub hurst_bg: f64,
    pub hurst_fg: f64,
    pub dims: Vec<usize>,
    pub channels: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub min_fraction: f64,
    pub max_fraction: f64,
    /// Width in voxels of the linear blend across the ellipse edge.
    pub blend_width: f64,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            hurst_bg: 0.8,
            hurst_fg: 0.3,
            dims: vec![64, 64],
            channels: 1,
            n_train: 200,
            n_test: 50,
            min_fraction: 0.05,
            max_fraction: 0.4,
            blend_width: 2.0,
            seed: 0,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.hurst_bg == self.hurst_fg {
            return Err(Error::param("foreground and background Hurst exponents must differ"));
        }
        if !(2..=3).contains(&self.dims.len()) {
            return Err(Error::param(format!("dataset dims must be 2-D or 3-D, got {:?}", self.dims)));
        }
        if self.channels == 0 || self.n_train + self.n_test == 0 {
            return Err(Error::param("need >= 1 channel and >= 1 case"));
        }
        if !(0.0 < self.min_fraction && self.min_fraction < self.max_fraction && self.max_fraction < 1.0) {
            return Err(Error::param(format!(
                "foreground fraction range [{}, {}] must satisfy 0 < min < max < 1",
                self.min_fraction, self.max_fraction
            )));
        }
        if !(self.blend_width >= 0.0) {
            return Err(Error::param("blend_width must be >= 0"));
        }
        FbmSpec::new(self.hurst_bg, &self.dims, 0).validate()?;
        FbmSpec::new(self.hurst_fg, &self.dims, 0).validate()
    }
}

/// Ellipse (ellipsoid in 3-D) rotated by `angle` in the plane of the last
/// two axes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub center: Vec<f64>,
    pub semi_axes: Vec<f64>,
    pub angle: f64,
}

impl Ellipse {
    fn sample(dims: &[usize], r: &mut rng::SeededRng) -> Ellipse {
        let center = dims.iter().map(|&n| n as f64 * r.random_range(0.3..0.7)).collect();
        let semi_axes = dims.iter().map(|&n| n as f64 * r.random_range(0.1..0.4)).collect();
        Ellipse {
            center,
            semi_axes,
            angle: r.random_range(0.0..std::f64::consts::PI),
        }
    }

    /// Approximate signed distance to the boundary, positive inside.
    fn depth(&self, p: &[f64]) -> f64 {
        let mut u: Vec<f64> = p.iter().zip(&self.center).map(|(a, c)| a - c).collect();
        let k = u.len();
        let (s, c) = self.angle.sin_cos();
        let (a, b) = (u[k - 2], u[k - 1]);
        u[k - 2] = c * a + s * b;
        u[k - 1] = -s * a + c * b;
        let rho = u.iter().zip(&self.semi_axes).map(|(x, r)| (x / r).powi(2)).sum::<f64>().sqrt();
        if rho < 1e-12 {
            return f64::INFINITY;
        }
        let grad = u.iter().zip(&self.semi_axes).map(|(x, r)| (x / (r * r)).powi(2)).sum::<f64>().sqrt() / rho;
        (1.0 - rho) / grad
    }
}

#[derive(Debug, Clone)]
pub struct Case {
    pub image: Volume,
    pub mask: Volume,
    pub ellipse: Ellipse,
    pub fraction: f64,
}

fn coords(index: usize, dims: &[usize]) -> Vec<f64> {
    let mut rem = index;
    let mut out = vec![0.0; dims.len()];
    for (o, &n) in out.iter_mut().zip(dims).rev() {
        *o = (rem % n) as f64;
        rem /= n;
    }
    out
}

/// Case `index` of the dataset; training cases use indices `0..n_train`,
/// test cases follow.
pub fn make_case(spec: &DatasetSpec, index: usize) -> Result<Case> {
    spec.validate()?;
    let case_seed = rng::derive_seed(spec.seed, index as u64);
    let mut r = rng::seeded(rng::derive_seed(case_seed, 0));
    let n: usize = spec.dims.iter().product();
    let (ellipse, depth, fraction) = (0..1000)
        .find_map(|_| {
            let e = Ellipse::sample(&spec.dims, &mut r);
            let depth: Vec<f64> = (0..n).map(|i| e.depth(&coords(i, &spec.dims))).collect();
            let frac = depth.iter().filter(|&&d| d >= 0.0).count() as f64 / n as f64;
            (spec.min_fraction..=spec.max_fraction)
                .contains(&frac)
                .then_some((e, depth, frac))
        })
        .ok_or_else(|| Error::param("could not place an ellipse within the foreground fraction range"))?;
    let weight: Vec<f64> = depth
        .iter()
        .map(|&d| {
            if spec.blend_width == 0.0 {
                f64::from(u8::from(d >= 0.0))
            } else {
                (0.5 + d / spec.blend_width).clamp(0.0, 1.0)
            }
        })
        .collect();
    let mut data = Vec::with_capacity(n * spec.channels);
    for c in 0..spec.channels as u64 {
        let bg = synth_fbm(&FbmSpec::new(spec.hurst_bg, &spec.dims, rng::derive_seed(case_seed, 1 + 2 * c)).normalized())?;
        let fg = synth_fbm(&FbmSpec::new(spec.hurst_fg, &spec.dims, rng::derive_seed(case_seed, 2 + 2 * c)).normalized())?;
        data.extend(
            bg.data()
                .iter()
                .zip(fg.data())
                .zip(&weight)
                .map(|((b, f), w)| (1.0 - w) * b + w * f),
        );
    }
    let mask = depth.iter().map(|&d| f64::from(u8::from(d >= 0.0))).collect();
    Ok(Case {
        image: Volume::from_vec(&spec.dims, spec.channels, data)?,
        mask: Volume::from_vec(&spec.dims, 1, mask)?,
        ellipse,
        fraction,
    })
}

/// Which part of the dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn dir(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

pub fn generate(spec: &DatasetSpec, split: Split) -> Result<Vec<Case>> {
    let range = match split {
        Split::Train => 0..spec.n_train,
        Split::Test => spec.n_train..spec.n_train + spec.n_test,
    };
    range.into_par_iter().map(|i| make_case(spec, i)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub spec: DatasetSpec,
    pub train: Vec<String>,
    pub test: Vec<String>,
}

pub const MANIFEST: &str = "manifest.json";

pub fn image_path(dir: &Path, split: Split, case: &str) -> PathBuf {
    dir.join(split.dir()).join(format!("{case}_image.vol"))
}

pub fn label_path(dir: &Path, split: Split, case: &str) -> PathBuf {
    dir.join(split.dir()).join(format!("{case}_label.vol"))
}

/// Writes every case under `dir/{train,test}/` plus `manifest.json`.
pub fn write_dataset(spec: &DatasetSpec, dir: &Path) -> Result<Manifest> {
    spec.validate()?;
    let mut names = [Vec::new(), Vec::new()];
    for (k, split) in [Split::Train, Split::Test].into_iter().enumerate() {
        let offset = if split == Split::Train { 0 } else { spec.n_train };
        for (i, case) in generate(spec, split)?.into_iter().enumerate() {
            let name = format!("case_{:04}", offset + i);
            save_volume(&VolumeFile::image(case.image), &image_path(dir, split, &name))?;
            save_volume(&VolumeFile::labels(case.mask)?, &label_path(dir, split, &name))?;
            names[k].push(name);
        }
    }
    let [train, test] = names;
    let manifest = Manifest {
        format_version: 1,
        spec: spec.clone(),
        train,
        test,
    };
    let json = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::data(format!("manifest: {e}")))?;
    crate::io::write_atomic(&dir.join(MANIFEST), &json)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    serde_json::from_slice(&crate::io::read_file(&path)?)
        .map_err(|e| Error::data(format!("{}: {e}", path.display())))
}

/// Loads `(image, mask)` pairs of one split.
pub fn read_split(dir: &Path, split: Split) -> Result<Vec<(String, Volume, Volume)>> {
    let m = read_manifest(dir)?;
    let names = match split {
        Split::Train => m.train,
        Split::Test => m.test,
    };
    names
        .into_par_iter()
        .map(|name| {
            let x = load_volume(&image_path(dir, split, &name))?.volume;
            let y = load_volume(&label_path(dir, split, &name))?.volume;
            Ok((name, x, y))
        })
        .collect()
}
