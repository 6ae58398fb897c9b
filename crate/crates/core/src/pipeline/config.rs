//! Run configuration: one strict TOML file with a block per concern.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::dataset::DatasetSpec;
use crate::error::{Error, Result};
use crate::fbm::FbmSpec;
use crate::fractal::Scales;
use crate::segnet::{ArchSpec, TrainConfig};
use crate::wavelet::{Boundary, Family, WaveletSpec};

pub const CONFIG_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HurstSettings {
    pub wavelet: WaveletSpec,
    pub j_min: usize,
    pub j_max: usize,
    pub q: f64,
}

impl Default for HurstSettings {
    fn default() -> Self {
        HurstSettings {
            wavelet: WaveletSpec::new(Family::Db2, Boundary::Periodic),
            j_min: 1,
            j_max: 5,
            q: 1.0,
        }
    }
}

impl HurstSettings {
    pub fn scales(&self) -> Scales {
        Scales::new(self.j_min, self.j_max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FdMapSettings {
    pub window: usize,
    pub stride: usize,
    pub wavelet: WaveletSpec,
    pub q: f64,
}

impl Default for FdMapSettings {
    fn default() -> Self {
        FdMapSettings {
            window: 16,
            stride: 8,
            wavelet: WaveletSpec::new(Family::Db2, Boundary::Symmetric),
            q: 1.0,
        }
    }
}

/// Steps applied to every image before it reaches the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessSettings {
    pub normalize: bool,
    /// Centered crop target; predictions are re-embedded into the source grid.
    pub crop: Option<Vec<usize>>,
}

impl Default for PreprocessSettings {
    fn default() -> Self {
        PreprocessSettings {
            normalize: true,
            crop: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UqSettings {
    pub method: crate::uncertainty::UqMethod,
    pub n_samples: usize,
    /// Transform names (`identity`, `flip<axis>`, `rot90`, `rot180`,
    /// `rot270`); empty means identity plus one flip per axis.
    pub transforms: Vec<String>,
}

impl Default for UqSettings {
    fn default() -> Self {
        UqSettings {
            method: crate::uncertainty::UqMethod::Mcdo,
            n_samples: 16,
            transforms: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Dataset directory written by `dataset`.
    pub dataset: Option<PathBuf>,
    /// Checkpoint(s) read by `predict` and `uq`.
    pub checkpoints: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub format_version: u32,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub arch: ArchSpec,
    pub train: TrainConfig,
    pub fbm: FbmSpec,
    pub dataset: DatasetSpec,
    pub hurst: HurstSettings,
    pub fdmap: FdMapSettings,
    pub preprocess: PreprocessSettings,
    pub uq: UqSettings,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            format_version: CONFIG_FORMAT_VERSION,
            seed: 0,
            out: None,
            arch: ArchSpec::default(),
            train: TrainConfig::default(),
            fbm: FbmSpec::new(0.7, &[256, 256], 0).normalized(),
            dataset: DatasetSpec::default(),
            hurst: HurstSettings::default(),
            fdmap: FdMapSettings::default(),
            preprocess: PreprocessSettings::default(),
            uq: UqSettings::default(),
            paths: Paths::default(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let c: RunConfig = toml::from_str(text).map_err(|e| Error::data(format!("config: {e}")))?;
        if c.format_version != CONFIG_FORMAT_VERSION {
            return Err(Error::data(format!(
                "config: format_version {} unsupported (expected {CONFIG_FORMAT_VERSION})",
                c.format_version
            )));
        }
        Ok(c)
    }

    /// Relative paths inside the file resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut c = Self::parse(&text).map_err(|e| match e {
            Error::Data(m) => Error::data(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        c.out.as_mut().map(fix);
        c.paths.dataset.as_mut().map(fix);
        c.paths.checkpoints.iter_mut().for_each(fix);
        Ok(c)
    }

    /// Applies `--seed` to every seeded block.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.train.seed = seed;
        self.fbm.seed = seed;
        self.dataset.seed = seed;
        self
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::data(format!("config: {e}")))
    }
}
