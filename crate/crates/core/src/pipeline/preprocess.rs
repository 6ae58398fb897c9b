//! Intensity normalization, centered cropping and re-embedding.

use super::volume_file::CropInfo;
use crate::error::{Error, Result};
use crate::volume::{strides, Volume};

/// Per-channel zero mean and unit standard deviation over the nonzero
/// voxels; zero voxels stay zero.
pub fn normalize_volume(x: &Volume) -> Result<Volume> {
    let mut out = x.clone();
    for c in 0..x.channels() {
        let ch = out.channel_mut(c);
        let nz: Vec<f64> = ch.iter().copied().filter(|&v| v != 0.0).collect();
        if nz.is_empty() {
            return Err(Error::data(format!("channel {c} is all zero; nothing to normalize")));
        }
        let n = nz.len() as f64;
        let mean = nz.iter().sum::<f64>() / n;
        let sd = (nz.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        if !(sd > 0.0) || !sd.is_finite() {
            return Err(Error::data(format!(
                "channel {c}: nonzero voxels have zero variance ({} voxel(s))",
                nz.len()
            )));
        }
        ch.iter_mut().filter(|v| **v != 0.0).for_each(|v| *v = (*v - mean) / sd);
    }
    Ok(out)
}

/// Offsets `floor((src - dst) / 2)` per axis.
pub fn center_offsets(source: &[usize], target: &[usize]) -> Result<Vec<usize>> {
    if source.len() != target.len() {
        return Err(Error::param(format!(
            "crop target {target:?} has a different rank from {source:?}"
        )));
    }
    source
        .iter()
        .zip(target)
        .map(|(&s, &t)| {
            if t == 0 || t > s {
                Err(Error::param(format!("crop target {target:?} exceeds source {source:?}")))
            } else {
                Ok((s - t) / 2)
            }
        })
        .collect()
}

/// Linear index in the `big` grid of every voxel of a `small` box placed at
/// `offsets`.
fn box_index(small: &[usize], offsets: &[usize], big: &[usize]) -> Vec<usize> {
    let ss = strides(small);
    let bs = strides(big);
    (0..small.iter().product())
        .map(|i| {
            (0..small.len())
                .map(|a| ((i / ss[a]) % small[a] + offsets[a]) * bs[a])
                .sum()
        })
        .collect()
}

/// Centered crop to `target`; the returned [`CropInfo`] lets [`embed`] undo it.
pub fn crop_volume(x: &Volume, target: &[usize]) -> Result<(Volume, CropInfo)> {
    let offsets = center_offsets(x.dims(), target)?;
    let mut out = Volume::zeros(target, x.channels()).with_spacing(x.spacing())?;
    let map = box_index(target, &offsets, x.dims());
    for c in 0..x.channels() {
        let src = x.channel(c);
        out.channel_mut(c).iter_mut().zip(&map).for_each(|(o, &j)| *o = src[j]);
    }
    Ok((
        out,
        CropInfo {
            offsets,
            source_dims: x.dims().to_vec(),
        },
    ))
}

/// Places a cropped volume back into its source grid, zero elsewhere.
pub fn embed(x: &Volume, info: &CropInfo) -> Result<Volume> {
    let fits = info.offsets.len() == x.ndim()
        && info.source_dims.len() == x.ndim()
        && x.dims()
            .iter()
            .zip(&info.offsets)
            .zip(&info.source_dims)
            .all(|((d, o), s)| d + o <= *s);
    if !fits {
        return Err(Error::param(format!(
            "volume {:?} does not fit at offsets {:?} in {:?}",
            x.dims(),
            info.offsets,
            info.source_dims
        )));
    }
    let mut big = Volume::zeros(&info.source_dims, x.channels()).with_spacing(x.spacing())?;
    let map = box_index(x.dims(), &info.offsets, &info.source_dims);
    for c in 0..x.channels() {
        let dst = big.channel_mut(c);
        x.channel(c).iter().zip(&map).for_each(|(v, &j)| dst[j] = *v);
    }
    Ok(big)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn normalized_moments() {
        let mut r = rng::seeded(2);
        let mut data: Vec<f64> = rng::normals(&mut r, 2 * 400).iter().map(|v| 3.0 + 5.0 * v).collect();
        data[..100].fill(0.0);
        let x = Volume::from_vec(&[20, 20], 2, data).unwrap();
        let y = normalize_volume(&x).unwrap();
        for c in 0..2 {
            let nz: Vec<f64> = y.channel(c).iter().copied().filter(|&v| v != 0.0).collect();
            let m = nz.iter().sum::<f64>() / nz.len() as f64;
            let sd = (nz.iter().map(|v| (v - m).powi(2)).sum::<f64>() / nz.len() as f64).sqrt();
            assert!(m.abs() < 1e-6 && (sd - 1.0).abs() < 1e-6);
        }
        assert!(y.channel(0)[..100].iter().all(|&v| v == 0.0));
        let z = normalize_volume(&y).unwrap();
        for (a, b) in y.data().iter().zip(z.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn normalize_rejects_degenerate_channels() {
        let mut x = Volume::zeros(&[4, 4], 1);
        assert!(matches!(normalize_volume(&x), Err(Error::Data(_))));
        x.data_mut()[3] = 2.0;
        assert!(matches!(normalize_volume(&x), Err(Error::Data(_))));
    }

    #[test]
    fn brats_crop_offsets() {
        assert_eq!(center_offsets(&[240, 240, 155], &[192, 160, 128]).unwrap(), vec![24, 40, 13]);
        assert_eq!(center_offsets(&[5, 6], &[5, 6]).unwrap(), vec![0, 0]);
        assert!(matches!(center_offsets(&[5, 6], &[6, 6]), Err(Error::Param(_))));
    }

    #[test]
    fn crop_then_embed() {
        let mut r = rng::seeded(3);
        let x = Volume::from_vec(&[9, 10, 7], 2, rng::normals(&mut r, 2 * 630)).unwrap();
        let (c, info) = crop_volume(&x, &[4, 6, 7]).unwrap();
        assert_eq!(info.offsets, vec![2, 2, 0]);
        assert_eq!(c.channel(1)[0], x.channel(1)[2 * 70 + 2 * 7]);
        let back = embed(&c, &info).unwrap();
        assert_eq!(back.dims(), x.dims());
        let n = 630;
        for i in 0..n {
            let (a, b, z) = (i / 70, (i / 7) % 10, i % 7);
            let inside = (2..6).contains(&a) && (2..8).contains(&b) && z < 7;
            for ch in 0..2 {
                let v = back.channel(ch)[i];
                if inside {
                    assert_eq!(v, x.channel(ch)[i]);
                } else {
                    assert_eq!(v, 0.0);
                }
            }
        }
        let (same, info) = crop_volume(&x, x.dims()).unwrap();
        assert_eq!(same, x);
        assert_eq!(info.offsets, vec![0, 0, 0]);
    }
}
