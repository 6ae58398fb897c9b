//! On-disk volumes: a raw little-endian payload at `path` and a JSON header
//! at `path.json`.
//!
//! Payload order is channel-major, then row-major over the spatial axes with
//! the last axis fastest. Images and probabilities are stored as f32, label
//! masks as u8.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_file, write_atomic};
use crate::volume::Volume;

pub const VOLUME_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    U8,
}

impl Dtype {
    pub fn tag(self) -> &'static str {
        match self {
            Dtype::F32 => "f32",
            Dtype::U8 => "u8",
        }
    }

    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::U8 => 1,
        }
    }

    fn parse(tag: &str) -> Option<Dtype> {
        match tag {
            "f32" => Some(Dtype::F32),
            "u8" => Some(Dtype::U8),
            _ => None,
        }
    }
}

/// Where a cropped volume sits inside its source grid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CropInfo {
    pub offsets: Vec<usize>,
    pub source_dims: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format_version: u32,
    dims: Vec<usize>,
    axis_order: Vec<String>,
    spacing: Vec<f64>,
    dtype: String,
    channel_names: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    crop: Option<CropInfo>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VolumeFile {
    pub volume: Volume,
    pub dtype: Dtype,
    pub channel_names: Vec<String>,
    pub crop: Option<CropInfo>,
}

fn axis_order(ndim: usize) -> Vec<String> {
    std::iter::once("channel")
        .chain(["x", "y", "z"].into_iter().take(ndim))
        .map(String::from)
        .collect()
}

impl VolumeFile {
    pub fn image(volume: Volume) -> Self {
        let channel_names = (0..volume.channels()).map(|c| format!("channel{c}")).collect();
        VolumeFile {
            volume,
            dtype: Dtype::F32,
            channel_names,
            crop: None,
        }
    }

    /// Integer-valued single-channel mask stored as u8.
    pub fn labels(volume: Volume) -> Result<Self> {
        if let Some(v) = volume.data().iter().find(|v| !(v.fract() == 0.0 && (0.0..=255.0).contains(*v))) {
            return Err(Error::data(format!("label value {v} does not fit the u8 dtype")));
        }
        Ok(VolumeFile {
            channel_names: vec!["label".into(); volume.channels()],
            volume,
            dtype: Dtype::U8,
            crop: None,
        })
    }

    pub fn with_names(mut self, names: Vec<String>) -> Self {
        self.channel_names = names;
        self
    }

    pub fn with_crop(mut self, crop: Option<CropInfo>) -> Self {
        self.crop = crop;
        self
    }
}

pub fn header_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn save_volume(f: &VolumeFile, path: &Path) -> Result<()> {
    let v = &f.volume;
    if f.channel_names.len() != v.channels() {
        return Err(Error::data(format!(
            "channel_names has {} entries for {} channels",
            f.channel_names.len(),
            v.channels()
        )));
    }
    let payload: Vec<u8> = match f.dtype {
        Dtype::F32 => v.data().iter().flat_map(|&x| (x as f32).to_le_bytes()).collect(),
        Dtype::U8 => v
            .data()
            .iter()
            .map(|&x| {
                if x.fract() == 0.0 && (0.0..=255.0).contains(&x) {
                    Ok(x as u8)
                } else {
                    Err(Error::data(format!("value {x} does not fit the u8 dtype")))
                }
            })
            .collect::<Result<_>>()?,
    };
    let header = Header {
        format_version: VOLUME_FORMAT_VERSION,
        dims: v.dims().to_vec(),
        axis_order: axis_order(v.ndim()),
        spacing: v.spacing().to_vec(),
        dtype: f.dtype.tag().into(),
        channel_names: f.channel_names.clone(),
        crop: f.crop.clone(),
    };
    let json = serde_json::to_vec_pretty(&header).map_err(|e| Error::data(format!("header: {e}")))?;
    write_atomic(path, &payload)?;
    write_atomic(&header_path(path), &json)
}

pub fn load_volume(path: &Path) -> Result<VolumeFile> {
    let hp = header_path(path);
    if !hp.exists() {
        return Err(Error::data(format!("{}: missing header sidecar {}", path.display(), hp.display())));
    }
    let field = |msg: String| Error::data(format!("{}: {msg}", hp.display()));
    let h: Header = serde_json::from_slice(&read_file(&hp)?).map_err(|e| field(format!("{e}")))?;
    if h.format_version != VOLUME_FORMAT_VERSION {
        return Err(field(format!(
            "format_version {} unsupported (expected {VOLUME_FORMAT_VERSION})",
            h.format_version
        )));
    }
    let dtype = Dtype::parse(&h.dtype).ok_or_else(|| field(format!("dtype: unknown tag {:?}", h.dtype)))?;
    if h.axis_order != axis_order(h.dims.len()) {
        return Err(field(format!("axis_order {:?} unsupported", h.axis_order)));
    }
    let channels = h.channel_names.len();
    let payload = read_file(path)?;
    let expect = h.dims.iter().product::<usize>() * channels * dtype.size();
    if payload.len() != expect {
        return Err(Error::data(format!(
            "{}: payload length {} does not match dims {:?} x {channels} channels x {} bytes = {expect}",
            path.display(),
            payload.len(),
            h.dims,
            dtype.size()
        )));
    }
    let data: Vec<f64> = match dtype {
        Dtype::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect(),
        Dtype::U8 => payload.iter().map(|&b| f64::from(b)).collect(),
    };
    let volume = Volume::from_vec(&h.dims, channels, data)
        .and_then(|v| v.with_spacing(&h.spacing))
        .map_err(|e| field(format!("dims/spacing: {e}")))?;
    Ok(VolumeFile {
        volume,
        dtype,
        channel_names: h.channel_names,
        crop: h.crop,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn random_f32(dims: &[usize], c: usize) -> Volume {
        let mut r = rng::seeded(1);
        let n = dims.iter().product::<usize>() * c;
        let data = rng::normals(&mut r, n).into_iter().map(|v| v as f32 as f64).collect();
        Volume::from_vec(dims, c, data).unwrap()
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.vol");
        let v = random_f32(&[32, 32, 4], 1).with_spacing(&[1.0, 1.0, 2.5]).unwrap();
        let f = VolumeFile::image(v).with_crop(Some(CropInfo {
            offsets: vec![1, 2, 3],
            source_dims: vec![34, 36, 10],
        }));
        save_volume(&f, &path).unwrap();
        let back = load_volume(&path).unwrap();
        assert_eq!(back, f);
        let bytes = std::fs::read(&path).unwrap();
        save_volume(&back, &path).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), bytes);
    }

    #[test]
    fn label_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("y.vol");
        let v = Volume::from_vec(&[2, 3], 1, vec![0.0, 1.0, 2.0, 4.0, 0.0, 4.0]).unwrap();
        save_volume(&VolumeFile::labels(v.clone()).unwrap(), &path).unwrap();
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 6);
        assert_eq!(load_volume(&path).unwrap().volume, v);
        assert!(VolumeFile::labels(Volume::filled(&[2, 2], 1, 0.5)).is_err());
    }

    #[test]
    fn validation_errors_name_the_problem() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.vol");
        save_volume(&VolumeFile::image(random_f32(&[8, 8], 2)), &path).unwrap();
        let full = std::fs::read(&path).unwrap();
        std::fs::write(&path, &full[..full.len() - 4]).unwrap();
        let e = load_volume(&path).unwrap_err().to_string();
        assert!(e.contains("payload length"), "{e}");

        let hp = header_path(&path);
        let h = std::fs::read_to_string(&hp).unwrap();
        std::fs::write(&hp, h.replace("\"f32\"", "\"f16\"")).unwrap();
        let e = load_volume(&path).unwrap_err().to_string();
        assert!(e.contains("dtype"), "{e}");

        std::fs::remove_file(&hp).unwrap();
        let e = load_volume(&path).unwrap_err();
        assert!(matches!(e, Error::Data(_)) && e.to_string().contains("sidecar"), "{e}");
    }
}
