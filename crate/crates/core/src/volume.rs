//! Dense scalar grids shared by every stage of the pipeline.
//!
//! A [`Volume`] holds `channels` copies of a spatial grid with 1 to 3 axes.
//! Storage is channel-major and row-major within a channel (last axis
//! fastest), in `f64`.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: Vec<usize>,
    channels: usize,
    spacing: Vec<f64>,
    data: Vec<f64>,
}

impl Volume {
    /// Zero-filled volume with unit spacing.
    pub fn zeros(dims: &[usize], channels: usize) -> Self {
        let n = dims.iter().product::<usize>() * channels;
        Volume {
            dims: dims.to_vec(),
            channels,
            spacing: vec![1.0; dims.len()],
            data: vec![0.0; n],
        }
    }

    pub fn filled(dims: &[usize], channels: usize, value: f64) -> Self {
        let mut v = Self::zeros(dims, channels);
        v.data.fill(value);
        v
    }

    pub fn from_vec(dims: &[usize], channels: usize, data: Vec<f64>) -> Result<Self> {
        if dims.is_empty() || dims.len() > 3 {
            return Err(Error::structure(format!(
                "volumes have 1 to 3 spatial axes, got {}",
                dims.len()
            )));
        }
        if channels == 0 || dims.contains(&0) {
            return Err(Error::structure("volume dims and channels must be nonzero"));
        }
        let expect = dims.iter().product::<usize>() * channels;
        if data.len() != expect {
            return Err(Error::structure(format!(
                "data length {} does not match dims {:?} x {} channels",
                data.len(),
                dims,
                channels
            )));
        }
        Ok(Volume {
            dims: dims.to_vec(),
            channels,
            spacing: vec![1.0; dims.len()],
            data,
        })
    }

    /// Stacks single-channel grids of identical shape into one volume.
    pub fn stack(parts: &[&Volume]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::structure("cannot stack zero volumes"))?;
        let mut data = Vec::new();
        let mut channels = 0;
        for p in parts {
            if p.dims != first.dims {
                return Err(Error::structure(format!(
                    "cannot stack dims {:?} with {:?}",
                    p.dims, first.dims
                )));
            }
            data.extend_from_slice(&p.data);
            channels += p.channels;
        }
        let mut v = Volume::from_vec(&first.dims, channels, data)?;
        v.spacing = first.spacing.clone();
        Ok(v)
    }

    pub fn with_spacing(mut self, spacing: &[f64]) -> Result<Self> {
        if spacing.len() != self.dims.len() || spacing.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::param(format!(
                "spacing {:?} must hold one positive value per axis",
                spacing
            )));
        }
        self.spacing = spacing.to_vec();
        Ok(self)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn spatial_len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.spatial_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.spatial_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    /// Copy of one channel as a single-channel volume.
    pub fn channel_volume(&self, c: usize) -> Volume {
        Volume {
            dims: self.dims.clone(),
            channels: 1,
            spacing: self.spacing.clone(),
            data: self.channel(c).to_vec(),
        }
    }

    /// Row-major strides of the spatial grid.
    pub fn strides(&self) -> Vec<usize> {
        strides(&self.dims)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Volume {
        Volume {
            dims: self.dims.clone(),
            channels: self.channels,
            spacing: self.spacing.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scaled(&self, c: f64) -> Volume {
        self.map(|v| v * c)
    }

    pub fn same_shape(&self, other: &Volume) -> bool {
        self.dims == other.dims && self.channels == other.channels
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

pub(crate) fn strides(dims: &[usize]) -> Vec<usize> {
    let mut s = vec![1; dims.len()];
    for a in (0..dims.len().saturating_sub(1)).rev() {
        s[a] = s[a + 1] * dims[a + 1];
    }
    s
}

/// Sample mean and population variance.
pub(crate) fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var)
}
