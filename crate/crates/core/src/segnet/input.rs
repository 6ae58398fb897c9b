//! Network input assembly (subband packing plus FD channel), the inverse
//! packing used by the output stage, and label remapping.

use super::layers::Tensor;
use super::{ArchSpec, FdMode};
use crate::error::{Error, Result};
use crate::fractal::{fd_map, fd_scalar_map, FdMapParams, Pooling};
use crate::volume::Volume;
use crate::wavelet::{dwt_forward, Subbands, WaveletSpec};

/// BraTS label value to contiguous class index.
pub fn brats_to_class(label: u8) -> Result<usize> {
    match label {
        0 => Ok(0),
        1 => Ok(1),
        2 => Ok(2),
        4 => Ok(3),
        other => Err(Error::Data(format!(
            "label value {other} outside the valid set {{0, 1, 2, 4}}"
        ))),
    }
}

pub fn class_to_brats(class: usize) -> Result<u8> {
    match class {
        0 => Ok(0),
        1 => Ok(1),
        2 => Ok(2),
        3 => Ok(4),
        other => Err(Error::Data(format!("class index {other} has no BraTS label"))),
    }
}

fn factors(ndim: usize, f: usize) -> [usize; 3] {
    if ndim == 3 {
        [f, f, f]
    } else {
        [1, f, f]
    }
}

/// Channel `c * P + b` holds band `b` of modality `c`: band 0 is the coarsest
/// approximation, then the details of level 1, level 2, ... Coarser levels are
/// nearest-upsampled to the level-1 grid.
pub fn pack_subbands(s: &Subbands) -> Result<Tensor> {
    let ndim = s.approx.ndim();
    let channels = s.approx.channels();
    let per_level = s.details.first().map_or(0, Vec::len);
    let bands = 1 + per_level * s.levels;
    let mut parts: Vec<(Tensor, usize)> = Vec::with_capacity(bands);
    parts.push((Tensor::from_volume(&s.approx)?, s.levels));
    for (l, level) in s.details.iter().enumerate() {
        for b in level {
            parts.push((Tensor::from_volume(b)?, l + 1));
        }
    }
    let grid = Tensor::from_volume(&s.details[0][0])?.shape;
    let plane: usize = grid.iter().product();
    let mut out = Tensor::zeros(channels * bands, grid);
    for (b, (t, level)) in parts.iter().enumerate() {
        let up = super::layers::upsample_forward(t, factors(ndim, 1 << (level - 1)));
        for c in 0..channels {
            out.data[(c * bands + b) * plane..][..plane].copy_from_slice(up.channel(c));
        }
    }
    Ok(out)
}

fn avg_pool(t: &Tensor, f: [usize; 3]) -> Tensor {
    if f == [1, 1, 1] {
        return t.clone();
    }
    let n = f.iter().product::<usize>() as f64;
    let mut s = super::layers::upsample_backward(t, f);
    s.data.iter_mut().for_each(|v| *v /= n);
    s
}

fn avg_pool_adjoint(g: &Tensor, f: [usize; 3]) -> Tensor {
    if f == [1, 1, 1] {
        return g.clone();
    }
    let n = f.iter().product::<usize>() as f64;
    let mut u = super::layers::upsample_forward(g, f);
    u.data.iter_mut().for_each(|v| *v /= n);
    u
}

fn select(t: &Tensor, groups: usize, bands: usize, band: usize) -> Tensor {
    let plane = t.plane();
    let mut data = Vec::with_capacity(groups * plane);
    for g in 0..groups {
        data.extend_from_slice(t.channel(g * bands + band));
    }
    Tensor {
        channels: groups,
        shape: t.shape,
        data,
    }
}

fn level_dims(full: &[usize], levels: usize) -> Vec<Vec<usize>> {
    (0..levels)
        .map(|l| full.iter().map(|n| n >> l).collect())
        .collect()
}

/// Inverse of [`pack_subbands`]: coarse bands are average-pooled back to
/// their native grids. `full_dims` is the signal grid before the DWT.
pub fn unpack_subbands(
    t: &Tensor,
    spec: &WaveletSpec,
    levels: usize,
    full_dims: &[usize],
) -> Result<Subbands> {
    let ndim = full_dims.len();
    let per_level = (1 << ndim) - 1;
    let bands = 1 + per_level * levels;
    if !t.channels.is_multiple_of(bands) {
        return Err(Error::structure(format!(
            "{} channels do not split into groups of {bands} subbands",
            t.channels
        )));
    }
    let groups = t.channels / bands;
    let to_vol = |x: Tensor| x.to_volume(ndim);
    let approx = to_vol(avg_pool(&select(t, groups, bands, 0), factors(ndim, 1 << (levels - 1))));
    let mut details = Vec::with_capacity(levels);
    for l in 0..levels {
        let f = factors(ndim, 1 << l);
        details.push(
            (0..per_level)
                .map(|k| to_vol(avg_pool(&select(t, groups, bands, 1 + l * per_level + k), f)))
                .collect(),
        );
    }
    Ok(Subbands {
        approx,
        details,
        spec: *spec,
        levels,
        level_dims: level_dims(full_dims, levels),
    })
}

/// Transpose of [`unpack_subbands`].
pub fn unpack_subbands_adjoint(g: &Subbands) -> Result<Tensor> {
    let ndim = g.approx.ndim();
    let groups = g.approx.channels();
    let per_level = (1 << ndim) - 1;
    let bands = 1 + per_level * g.levels;
    let mut parts = Vec::with_capacity(bands);
    parts.push(avg_pool_adjoint(
        &Tensor::from_volume(&g.approx)?,
        factors(ndim, 1 << (g.levels - 1)),
    ));
    for (l, level) in g.details.iter().enumerate() {
        for b in level {
            parts.push(avg_pool_adjoint(&Tensor::from_volume(b)?, factors(ndim, 1 << l)));
        }
    }
    let shape = parts[0].shape;
    let plane = parts[0].plane();
    let mut out = Tensor::zeros(groups * bands, shape);
    for (b, p) in parts.iter().enumerate() {
        for c in 0..groups {
            out.data[(c * bands + b) * plane..][..plane].copy_from_slice(p.channel(c));
        }
    }
    Ok(out)
}

/// FD channel on the network grid, centered as `FD - n - 0.5`.
fn fd_channel(arch: &ArchSpec, x: &Volume) -> Result<Volume> {
    let s = &arch.fd;
    let min_dim = x.dims().iter().copied().min().unwrap_or(0);
    if min_dim < s.window {
        return Err(Error::param(format!(
            "fd window {} larger than image dim {min_dim}",
            s.window
        )));
    }
    let params = FdMapParams::new(s.window, s.stride, s.wavelet);
    let map = match s.mode {
        FdMode::Dense => fd_map(x, &params)?,
        FdMode::Scalar => fd_scalar_map(x, &params)?,
    };
    let pooled = Pooling::Mean.apply(&map.map, arch.grid_factor())?;
    let center = arch.ndim as f64 + 0.5;
    Ok(pooled.map(|v| v - center))
}

/// Builds the encoder input for one image.
pub fn prepare_input(arch: &ArchSpec, x: &Volume) -> Result<Tensor> {
    arch.validate()?;
    if x.channels() != arch.in_channels {
        return Err(Error::structure(format!(
            "input has {} channels, arch expects {}",
            x.channels(),
            arch.in_channels
        )));
    }
    arch.check_dims(x.dims())?;
    if !x.all_finite() {
        return Err(Error::Numeric {
            stage: "input".into(),
        });
    }
    let mut t = if arch.wavelet_levels > 0 {
        pack_subbands(&dwt_forward(x, &arch.wavelet, arch.wavelet_levels)?)?
    } else {
        Tensor::from_volume(x)?
    };
    if arch.fd_channel {
        let fd = fd_channel(arch, x)?;
        t.data.extend_from_slice(fd.data());
        t.channels += 1;
    }
    Ok(t)
}
