//! Wavelet/fractal U-Net segmentation network with hand-written backward
//! pass, Adam training and checkpoints.
//!
//! Data flow: the image is decomposed by a multilevel DWT, the subbands are
//! packed at half resolution together with a fractal-dimension channel, the
//! U-Net runs on that grid, and an inverse-DWT output stage lifts the decoder
//! features back to the input resolution before the softmax head.

mod checkpoint;
mod input;
pub mod layers;
mod loss;
mod network;
mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fractal::Scales;
use crate::wavelet::{Boundary, Family, WaveletSpec};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_VERSION};
pub use input::{
    brats_to_class, class_to_brats, pack_subbands, prepare_input, unpack_subbands, unpack_subbands_adjoint,
};
pub use layers::Tensor;
pub use loss::{loss, loss_tensor, LossBreakdown, LossWeights, EPS};
pub use network::{backward, forward, forward_tensor, Cache, ForwardOutput, Gradients, NetworkParams, ParamTensor};
pub use train::{predict, predict_tensor, train, train_prepared, EpochLog, Sample, TrainConfig, TrainLog};

/// How the fractal-dimension channel is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FdMode {
    /// Sliding-window map.
    #[default]
    Dense,
    /// One global value broadcast over the grid.
    Scalar,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FdSettings {
    pub window: usize,
    pub stride: usize,
    pub wavelet: WaveletSpec,
    #[serde(default)]
    pub mode: FdMode,
}

impl Default for FdSettings {
    fn default() -> Self {
        FdSettings {
            window: 16,
            stride: 8,
            wavelet: WaveletSpec::new(Family::Db2, Boundary::Symmetric),
            mode: FdMode::Dense,
        }
    }
}

impl FdSettings {
    pub fn scales(&self) -> Scales {
        Scales::for_window(self.window)
    }
}

fn default_ndim() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchSpec {
    pub in_channels: usize,
    pub num_classes: usize,
    pub depth: usize,
    pub base_filters: usize,
    pub kernel_size: usize,
    pub wavelet: WaveletSpec,
    pub wavelet_levels: usize,
    pub fd_channel: bool,
    pub dropout_rate: f64,
    pub se_head: bool,
    /// Spatial dimensionality of the inputs (2 or 3).
    #[serde(default = "default_ndim")]
    pub ndim: usize,
    #[serde(default)]
    pub fd: FdSettings,
}

impl Default for ArchSpec {
    fn default() -> Self {
        ArchSpec {
            in_channels: 1,
            num_classes: 2,
            depth: 2,
            base_filters: 8,
            kernel_size: 3,
            wavelet: WaveletSpec::periodic(Family::Haar),
            wavelet_levels: 1,
            fd_channel: true,
            dropout_rate: 0.1,
            se_head: false,
            ndim: 2,
            fd: FdSettings::default(),
        }
    }
}

impl ArchSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Param(m));
        if self.depth < 1 {
            return bad("depth must be >= 1".into());
        }
        if self.base_filters < 4 {
            return bad(format!("base_filters must be >= 4, got {}", self.base_filters));
        }
        if self.kernel_size.is_multiple_of(2) {
            return bad(format!("kernel_size must be odd, got {}", self.kernel_size));
        }
        if self.in_channels == 0 || self.num_classes < 2 {
            return bad("need >= 1 input channel and >= 2 classes".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        if !(2..=3).contains(&self.ndim) {
            return bad(format!("ndim must be 2 or 3, got {}", self.ndim));
        }
        if self.wavelet_levels > 0 && self.wavelet.boundary != Boundary::Periodic {
            return bad("the network's DWT stages need the periodic boundary".into());
        }
        if self.fd.stride == 0 || !self.fd.window.is_power_of_two() || self.fd.window < 8 {
            return bad(format!(
                "fd window {} must be a power of two >= 8 and stride >= 1",
                self.fd.window
            ));
        }
        Ok(())
    }

    /// Subband channels per modality: one approximation plus `2^d - 1`
    /// details per level.
    pub fn bands_per_channel(&self) -> usize {
        1 + ((1 << self.ndim) - 1) * self.wavelet_levels
    }

    pub fn encoder_in_channels(&self) -> usize {
        self.in_channels * self.bands_per_channel() + usize::from(self.fd_channel)
    }

    /// Downsampling from the input grid to the grid the U-Net runs on.
    pub fn grid_factor(&self) -> usize {
        if self.wavelet_levels > 0 {
            2
        } else {
            1
        }
    }

    pub fn stage_filters(&self, stage: usize) -> usize {
        self.base_filters << stage
    }

    /// Width of the inverse-wavelet output stage (channel groups).
    pub fn wave_groups(&self) -> usize {
        self.base_filters
    }

    /// Checks the divisibility rules for one input grid.
    pub fn check_dims(&self, dims: &[usize]) -> Result<()> {
        if dims.len() != self.ndim {
            return Err(Error::structure(format!(
                "input has {} spatial axes, arch expects {}",
                dims.len(),
                self.ndim
            )));
        }
        let wave = 1usize << self.wavelet_levels;
        let pool = 1usize << self.depth;
        for &n in dims {
            if n % wave != 0 {
                return Err(Error::structure(format!(
                    "stage dwt: dim {n} not divisible by 2^{}",
                    self.wavelet_levels
                )));
            }
            let g = n / self.grid_factor();
            if !g.is_multiple_of(pool) {
                return Err(Error::structure(format!(
                    "stage encoder: network grid dim {g} not divisible by 2^{} (depth)",
                    self.depth
                )));
            }
        }
        Ok(())
    }
}

/// Expected tensor shape at one stage of the network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageShape {
    pub stage: String,
    pub channels: usize,
    pub dims: Vec<usize>,
}

/// Per-stage channel counts and grid dims for an input of `dims`.
pub fn shape_audit(arch: &ArchSpec, dims: &[usize]) -> Result<Vec<StageShape>> {
    arch.validate()?;
    arch.check_dims(dims)?;
    let mut out = Vec::new();
    let mut push = |stage: String, channels: usize, dims: Vec<usize>| {
        out.push(StageShape {
            stage,
            channels,
            dims,
        })
    };
    let pf = layers::pool_factors(arch.ndim);
    let pool = |d: &[usize]| -> Vec<usize> {
        d.iter()
            .zip(&pf[3 - d.len()..])
            .map(|(n, f)| n / f)
            .collect()
    };
    push("input".into(), arch.in_channels, dims.to_vec());
    let mut grid: Vec<usize> = dims.iter().map(|n| n / arch.grid_factor()).collect();
    push("encoder_input".into(), arch.encoder_in_channels(), grid.clone());
    let mut grids = Vec::new();
    for s in 0..arch.depth {
        push(format!("encoder{s}"), arch.stage_filters(s), grid.clone());
        grids.push(grid.clone());
        grid = pool(&grid);
    }
    push("bottleneck".into(), arch.stage_filters(arch.depth), grid);
    for s in (0..arch.depth).rev() {
        push(format!("decoder{s}"), arch.stage_filters(s), grids[s].clone());
    }
    if arch.wavelet_levels > 0 {
        push(
            "wave_out".into(),
            arch.wave_groups() * arch.bands_per_channel(),
            grids[0].clone(),
        );
        push("inverse_dwt".into(), arch.wave_groups(), dims.to_vec());
    }
    push("head".into(), arch.num_classes, dims.to_vec());
    if arch.se_head {
        push("se_head".into(), arch.num_classes, vec![1]);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn audit_counts_subband_channels() {
        let arch = ArchSpec {
            in_channels: 2,
            depth: 2,
            wavelet_levels: 1,
            fd_channel: true,
            ..ArchSpec::default()
        };
        let t = shape_audit(&arch, &[64, 64]).unwrap();
        let enc = t.iter().find(|s| s.stage == "encoder_input").unwrap();
        assert_eq!(enc.channels, 9);
        assert_eq!(enc.dims, vec![32, 32]);
        let head = t.iter().find(|s| s.stage == "head").unwrap();
        assert_eq!((head.channels, head.dims.clone()), (2, vec![64, 64]));
        let b = t.iter().find(|s| s.stage == "bottleneck").unwrap();
        assert_eq!(b.dims, vec![8, 8]);
    }

    #[test]
    fn audit_rejects_bad_arch() {
        let arch = ArchSpec {
            depth: 6,
            ..ArchSpec::default()
        };
        assert!(matches!(shape_audit(&arch, &[64, 64]), Err(Error::Structure(_))));
        let arch = ArchSpec {
            kernel_size: 4,
            ..ArchSpec::default()
        };
        assert!(shape_audit(&arch, &[64, 64]).is_err());
        let arch = ArchSpec::default();
        assert!(shape_audit(&arch, &[64, 64, 64]).is_err());
    }

    #[test]
    fn three_d_channel_count() {
        let arch = ArchSpec {
            ndim: 3,
            in_channels: 4,
            wavelet_levels: 1,
            depth: 1,
            ..ArchSpec::default()
        };
        assert_eq!(arch.encoder_in_channels(), 4 * 8 + 1);
        assert!(shape_audit(&arch, &[16, 16, 16]).is_ok());
    }

    #[test]
    fn arch_toml_round_trip() {
        let arch = ArchSpec::default();
        let s = toml::to_string(&arch).unwrap();
        let back: ArchSpec = toml::from_str(&s).unwrap();
        assert_eq!(arch, back);
        assert!(toml::from_str::<ArchSpec>(&format!("{s}\nbogus = 1\n")).is_err());
    }
}
