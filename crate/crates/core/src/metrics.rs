//! Segmentation scores: Dice, HD95, NMSE and the WT/TC/ET region report.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{strides, Volume};

/// Label values allowed in BraTS-style label maps.
pub const VALID_LABELS: [u8; 4] = [0, 1, 2, 4];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Region {
    WT,
    TC,
    ET,
}

impl Region {
    pub const ALL: [Region; 3] = [Region::WT, Region::TC, Region::ET];

    pub fn labels(self) -> &'static [u8] {
        match self {
            Region::WT => &[1, 2, 4],
            Region::TC => &[1, 4],
            Region::ET => &[4],
        }
    }

    pub fn contains(self, label: u8) -> bool {
        self.labels().contains(&label)
    }
}

/// Overlap counts between a prediction and a reference mask.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Confusion {
    /// `2TP / (FP + 2TP + FN)`, or 1 when both masks are empty.
    pub fn dice(&self) -> f64 {
        let denom = self.fp + 2 * self.tp + self.fn_;
        if denom == 0 {
            1.0
        } else {
            (2 * self.tp) as f64 / denom as f64
        }
    }
}

fn check_pair(a: &Volume, b: &Volume) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::structure(format!(
            "shape mismatch: {:?}x{} vs {:?}x{}",
            a.dims(),
            a.channels(),
            b.dims(),
            b.channels()
        )));
    }
    Ok(())
}

fn mask(v: &Volume) -> Vec<bool> {
    v.data().iter().map(|&x| x != 0.0).collect()
}

pub fn confusion(pred: &Volume, gt: &Volume) -> Result<Confusion> {
    check_pair(pred, gt)?;
    let mut c = Confusion::default();
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        match (p != 0.0, g != 0.0) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => {}
        }
    }
    Ok(c)
}

/// Dice overlap of two binary masks (nonzero = foreground).
pub fn dice(pred: &Volume, gt: &Volume) -> Result<f64> {
    Ok(confusion(pred, gt)?.dice())
}

/// Foreground voxels with a face-connected background neighbor or on the
/// image edge.
pub fn boundary(mask: &[bool], dims: &[usize]) -> Vec<bool> {
    let st = strides(dims);
    let d = dims.len();
    (0..mask.len())
        .map(|i| {
            if !mask[i] {
                return false;
            }
            (0..d).any(|a| {
                let c = (i / st[a]) % dims[a];
                c == 0 || c + 1 == dims[a] || !mask[i - st[a]] || !mask[i + st[a]]
            })
        })
        .collect()
}

/// 1-D lower envelope of parabolas (Felzenszwalb-Huttenlocher) over one
/// line: `out[p] = min_q f[q] + ((p - q) s)^2`.
fn edt_line(f: &[f64], s: f64, out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k: usize = 0;
    let mut started = false;
    let s2 = s * s;
    for q in 0..n {
        if f[q].is_infinite() {
            continue;
        }
        if !started {
            v[0] = q;
            z[0] = f64::NEG_INFINITY;
            z[1] = f64::INFINITY;
            started = true;
            continue;
        }
        loop {
            let r = v[k];
            let sep = ((f[q] + s2 * (q * q) as f64) - (f[r] + s2 * (r * r) as f64))
                / (2.0 * s2 * (q as f64 - r as f64));
            // z[0] is -inf, so k never underflows
            if sep <= z[k] {
                k -= 1;
                continue;
            }
            k += 1;
            v[k] = q;
            z[k] = sep;
            z[k + 1] = f64::INFINITY;
            break;
        }
    }
    if !started {
        out.fill(f64::INFINITY);
        return;
    }
    let mut k = 0;
    for (p, slot) in out.iter_mut().enumerate() {
        while z[k + 1] < p as f64 {
            k += 1;
        }
        let dq = (p as f64 - v[k] as f64) * s;
        *slot = dq * dq + f[v[k]];
    }
}

/// Exact squared Euclidean distance from every voxel to the nearest `true`
/// voxel, with per-axis spacing. Infinite everywhere when `features` is empty.
pub fn squared_edt(features: &[bool], dims: &[usize], spacing: &[f64]) -> Vec<f64> {
    let st = strides(dims);
    let mut g: Vec<f64> = features
        .iter()
        .map(|&f| if f { 0.0 } else { f64::INFINITY })
        .collect();
    let maxn = dims.iter().copied().max().unwrap_or(0);
    let mut line = vec![0.0; maxn];
    let mut out = vec![0.0; maxn];
    let mut v = vec![0usize; maxn];
    let mut z = vec![0.0; maxn + 1];
    for a in 0..dims.len() {
        let n = dims[a];
        let total = g.len();
        for start in 0..total {
            if !(start / st[a]).is_multiple_of(n) {
                continue;
            }
            for (k, slot) in line[..n].iter_mut().enumerate() {
                *slot = g[start + k * st[a]];
            }
            edt_line(&line[..n], spacing[a], &mut out[..n], &mut v, &mut z);
            for k in 0..n {
                g[start + k * st[a]] = out[k];
            }
        }
    }
    g
}

/// Percentile in [0, 100] by linear interpolation on sorted values.
pub fn percentile(sorted: &[f64], pct: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = pct / 100.0 * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

fn diagonal(dims: &[usize], spacing: &[f64]) -> f64 {
    dims.iter()
        .zip(spacing)
        .map(|(&n, &s)| ((n - 1) as f64 * s).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn check_spacing(spacing: &[f64], d: usize) -> Result<()> {
    if spacing.len() != d || spacing.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
        return Err(Error::param(format!(
            "spacing {spacing:?} must hold {d} positive values"
        )));
    }
    Ok(())
}

/// Boundary-to-boundary distances from `from` to the nearest boundary voxel
/// of the mask described by `to_edt`.
fn directed<'a>(from: &'a [bool], to_edt: &'a [f64]) -> impl Iterator<Item = f64> + 'a {
    from.iter()
        .zip(to_edt)
        .filter(|(b, _)| **b)
        .map(|(_, d2)| d2.sqrt())
}

/// Percentile of the concatenated directed boundary distances in both
/// directions. Both empty gives 0; exactly one empty gives the image
/// diagonal.
pub fn hausdorff_percentile(pred: &Volume, gt: &Volume, spacing: &[f64], pct: f64) -> Result<f64> {
    check_pair(pred, gt)?;
    if pred.channels() != 1 {
        return Err(Error::structure("hausdorff distance needs single-channel masks"));
    }
    check_spacing(spacing, pred.ndim())?;
    let dims = pred.dims();
    let (mp, mg) = (mask(pred), mask(gt));
    let (ep, eg) = (!mp.contains(&true), !mg.contains(&true));
    if ep && eg {
        return Ok(0.0);
    }
    if ep || eg {
        return Ok(diagonal(dims, spacing));
    }
    let bp = boundary(&mp, dims);
    let bg = boundary(&mg, dims);
    let dp = squared_edt(&bp, dims, spacing);
    let dg = squared_edt(&bg, dims, spacing);
    let mut dists: Vec<f64> = directed(&bp, &dg).chain(directed(&bg, &dp)).collect();
    dists.sort_by(f64::total_cmp);
    Ok(percentile(&dists, pct))
}

pub fn hd95(pred: &Volume, gt: &Volume, spacing: &[f64]) -> Result<f64> {
    hausdorff_percentile(pred, gt, spacing, 95.0)
}

/// `sum (gt - recon)^2 / sum gt^2`.
pub fn nmse(recon: &Volume, gt: &Volume) -> Result<f64> {
    check_pair(recon, gt)?;
    let energy: f64 = gt.data().iter().map(|v| v * v).sum();
    if energy == 0.0 {
        return Err(Error::Degenerate("nmse reference is identically zero".into()));
    }
    let err: f64 = recon
        .data()
        .iter()
        .zip(gt.data())
        .map(|(r, g)| (g - r) * (g - r))
        .sum();
    Ok(err / energy)
}

/// Checks every voxel against the BraTS label set and returns them as `u8`.
pub fn label_values(v: &Volume) -> Result<Vec<u8>> {
    v.data()
        .iter()
        .map(|&x| {
            let l = x as u8;
            if x.fract() == 0.0 && x >= 0.0 && VALID_LABELS.contains(&l) && f64::from(l) == x {
                Ok(l)
            } else {
                Err(Error::Data(format!(
                    "label value {x} outside the valid set {{0, 1, 2, 4}}"
                )))
            }
        })
        .collect()
}

/// One value per region, serialized under the `WT`/`TC`/`ET` column names.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerRegion<T> {
    #[serde(rename = "WT")]
    pub wt: T,
    #[serde(rename = "TC")]
    pub tc: T,
    #[serde(rename = "ET")]
    pub et: T,
}

impl<T> PerRegion<T> {
    pub fn get(&self, r: Region) -> &T {
        match r {
            Region::WT => &self.wt,
            Region::TC => &self.tc,
            Region::ET => &self.et,
        }
    }

    pub fn from_fn(mut f: impl FnMut(Region) -> T) -> Self {
        PerRegion {
            wt: f(Region::WT),
            tc: f(Region::TC),
            et: f(Region::ET),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub case_id: Option<String>,
    pub dice: PerRegion<f64>,
    pub hd95: PerRegion<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nmse: Option<f64>,
}

fn region_mask(labels: &[u8], dims: &[usize], r: Region) -> Volume {
    let data = labels
        .iter()
        .map(|&l| if r.contains(l) { 1.0 } else { 0.0 })
        .collect();
    Volume::from_vec(dims, 1, data).expect("label grid shape")
}

/// Dice and HD95 for WT, TC and ET composed from two label maps.
pub fn region_report(pred_labels: &Volume, gt_labels: &Volume, spacing: &[f64]) -> Result<CaseReport> {
    check_pair(pred_labels, gt_labels)?;
    if pred_labels.channels() != 1 {
        return Err(Error::structure("label maps must have a single channel"));
    }
    let lp = label_values(pred_labels)?;
    let lg = label_values(gt_labels)?;
    let dims = pred_labels.dims();
    let mut dice_v = [0.0; 3];
    let mut hd_v = [0.0; 3];
    for (i, r) in Region::ALL.into_iter().enumerate() {
        let p = region_mask(&lp, dims, r);
        let g = region_mask(&lg, dims, r);
        dice_v[i] = dice(&p, &g)?;
        hd_v[i] = hd95(&p, &g, spacing)?;
    }
    Ok(CaseReport {
        case_id: None,
        dice: PerRegion::from_fn(|r| dice_v[r as usize]),
        hd95: PerRegion::from_fn(|r| hd_v[r as usize]),
        nmse: None,
    })
}

/// Summary rows for one metric and region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub mean: f64,
    pub sd: f64,
    pub median: f64,
    #[serde(rename = "25quantile")]
    pub q25: f64,
    #[serde(rename = "75quantile")]
    pub q75: f64,
}

impl Stats {
    /// Sample statistics; `sd` is 0 for a single value.
    pub fn of(values: &[f64]) -> Result<Stats> {
        if values.is_empty() {
            return Err(Error::param("cannot summarize zero cases"));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(Stats {
            mean,
            sd,
            median: percentile(&sorted, 50.0),
            q25: percentile(&sorted, 25.0),
            q75: percentile(&sorted, 75.0),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub cases: usize,
    pub dice: PerRegion<Stats>,
    pub hd95: PerRegion<Stats>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nmse: Option<Stats>,
}

pub fn summarize(reports: &[CaseReport]) -> Result<Summary> {
    if reports.is_empty() {
        return Err(Error::param("cannot summarize zero cases"));
    }
    let col = |f: &dyn Fn(&CaseReport) -> f64| reports.iter().map(f).collect::<Vec<_>>();
    let mut dice_s = Vec::new();
    let mut hd_s = Vec::new();
    for r in Region::ALL {
        dice_s.push(Stats::of(&col(&|c| *c.dice.get(r)))?);
        hd_s.push(Stats::of(&col(&|c| *c.hd95.get(r)))?);
    }
    let nmse_vals: Vec<f64> = reports.iter().filter_map(|c| c.nmse).collect();
    Ok(Summary {
        cases: reports.len(),
        dice: PerRegion::from_fn(|r| dice_s[r as usize]),
        hd95: PerRegion::from_fn(|r| hd_s[r as usize]),
        nmse: if nmse_vals.is_empty() {
            None
        } else {
            Some(Stats::of(&nmse_vals)?)
        },
    })
}

/// Aligned text table: one row per statistic, one column per metric and region.
pub fn format_table(s: &Summary) -> String {
    let mut out = format!(
        "{:<12}{:>10}{:>10}{:>10}{:>10}{:>10}{:>10}\n",
        "", "Dice WT", "Dice TC", "Dice ET", "HD95 WT", "HD95 TC", "HD95 ET"
    );
    let rows: [(&str, fn(&Stats) -> f64); 5] = [
        ("mean", |s| s.mean),
        ("sd", |s| s.sd),
        ("median", |s| s.median),
        ("25quantile", |s| s.q25),
        ("75quantile", |s| s.q75),
    ];
    for (name, f) in rows {
        out.push_str(&format!("{name:<12}"));
        for r in Region::ALL {
            out.push_str(&format!("{:>10.6}", f(s.dice.get(r))));
        }
        for r in Region::ALL {
            out.push_str(&format!("{:>10.4}", f(s.hd95.get(r))));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;
    use rand::Rng;

    fn vol(dims: &[usize], bits: &[bool]) -> Volume {
        Volume::from_vec(dims, 1, bits.iter().map(|&b| f64::from(u8::from(b))).collect()).unwrap()
    }

    fn random_mask(r: &mut rng::SeededRng, n: usize, p: f64) -> Vec<bool> {
        (0..n).map(|_| r.random::<f64>() < p).collect()
    }

    fn coords(i: usize, dims: &[usize]) -> Vec<usize> {
        let st = strides(dims);
        (0..dims.len()).map(|a| (i / st[a]) % dims[a]).collect()
    }

    fn brute_edt(features: &[bool], dims: &[usize], spacing: &[f64]) -> Vec<f64> {
        (0..features.len())
            .map(|i| {
                let ci = coords(i, dims);
                features
                    .iter()
                    .enumerate()
                    .filter(|(_, &f)| f)
                    .map(|(j, _)| {
                        let cj = coords(j, dims);
                        (0..dims.len())
                            .map(|a| ((ci[a] as f64 - cj[a] as f64) * spacing[a]).powi(2))
                            .fold(0.0, |acc, v| acc + v)
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    }

    /// Naive all-pairs HD95 on boundary voxels.
    fn brute_hd95(p: &[bool], g: &[bool], dims: &[usize]) -> f64 {
        let bp = boundary(p, dims);
        let bg = boundary(g, dims);
        let dist = |i: usize, j: usize| {
            let (a, b) = (coords(i, dims), coords(j, dims));
            a.iter()
                .zip(&b)
                .map(|(x, y)| (*x as f64 - *y as f64).powi(2))
                .sum::<f64>()
                .sqrt()
        };
        let nearest = |i: usize, set: &[bool]| {
            set.iter()
                .enumerate()
                .filter(|(_, &f)| f)
                .map(|(j, _)| dist(i, j))
                .fold(f64::INFINITY, f64::min)
        };
        let mut all: Vec<f64> = Vec::new();
        for i in 0..p.len() {
            if bp[i] {
                all.push(nearest(i, &bg));
            }
        }
        for i in 0..g.len() {
            if bg[i] {
                all.push(nearest(i, &bp));
            }
        }
        all.sort_by(f64::total_cmp);
        percentile(&all, 95.0)
    }

    #[test]
    fn dice_examples() {
        let a = vol(&[4], &[true, true, false, false]);
        let b = vol(&[4], &[false, false, true, true]);
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        assert_eq!(dice(&a, &b).unwrap(), 0.0);
        let c = Confusion { tp: 10, fp: 5, fn_: 5 };
        assert!((c.dice() - 0.666667).abs() < 1e-6);
        let z = vol(&[4], &[false; 4]);
        assert_eq!(dice(&z, &z).unwrap(), 1.0);
        assert!(matches!(dice(&a, &vol(&[2, 2], &[false; 4])), Err(Error::Structure(_))));
    }

    #[test]
    fn hd95_examples() {
        let mut p = vec![false; 16];
        let mut g = vec![false; 16];
        p[3] = true;
        g[8] = true;
        let (vp, vg) = (vol(&[16], &p), vol(&[16], &g));
        assert_eq!(hd95(&vp, &vg, &[1.0]).unwrap(), 5.0);
        assert_eq!(hd95(&vp, &vp, &[1.0]).unwrap(), 0.0);
        let z = vol(&[16], &[false; 16]);
        assert_eq!(hd95(&z, &z, &[1.0]).unwrap(), 0.0);
        assert_eq!(hd95(&z, &vg, &[2.0]).unwrap(), 30.0);
        assert!(hd95(&vp, &vg, &[0.0]).is_err());
    }

    #[test]
    fn edt_matches_brute_force() {
        let mut r = rng::seeded(5);
        for (dims, sp) in [
            (vec![37], vec![1.0]),
            (vec![9, 11], vec![1.0, 1.0]),
            (vec![6, 7, 5], vec![1.0, 1.0, 1.0]),
            (vec![8, 8], vec![0.5, 2.0]),
        ] {
            let n: usize = dims.iter().product();
            for p in [0.02, 0.2, 0.7] {
                let f = random_mask(&mut r, n, p);
                let fast = squared_edt(&f, &dims, &sp);
                let slow = brute_edt(&f, &dims, &sp);
                for (a, b) in fast.iter().zip(&slow) {
                    assert!(a == b || (a - b).abs() <= 1e-12 * b.max(1.0), "{a} vs {b}");
                }
            }
        }
        assert!(squared_edt(&[false; 4], &[4], &[1.0]).iter().all(|v| v.is_infinite()));
    }

    #[test]
    fn hd95_matches_brute_force_16_cubed() {
        let dims = [16, 16, 16];
        let mut r = rng::seeded(11);
        for _ in 0..5 {
            let p = random_mask(&mut r, 4096, 0.3);
            let g = random_mask(&mut r, 4096, 0.3);
            let fast = hd95(&vol(&dims, &p), &vol(&dims, &g), &[1.0; 3]).unwrap();
            assert_eq!(fast, brute_hd95(&p, &g, &dims));
        }
    }

    #[test]
    fn hd95_grows_with_translation() {
        let n = 32;
        let square = |off: usize| {
            let bits: Vec<bool> = (0..n * n)
                .map(|i| {
                    let (y, x) = (i / n, i % n);
                    (8..16).contains(&y) && (4 + off..12 + off).contains(&x)
                })
                .collect();
            vol(&[n, n], &bits)
        };
        let g = square(0);
        let mut last = 0.0;
        for off in 0..12 {
            let h = hd95(&square(off), &g, &[1.0, 1.0]).unwrap();
            assert!(h >= last);
            last = h;
        }
        assert_eq!(last, 11.0);
    }

    #[test]
    fn percentile_100_is_hausdorff() {
        let mut r = rng::seeded(2);
        let dims = [12, 12];
        let p = random_mask(&mut r, 144, 0.2);
        let g = random_mask(&mut r, 144, 0.2);
        let (vp, vg) = (vol(&dims, &p), vol(&dims, &g));
        let h100 = hausdorff_percentile(&vp, &vg, &[1.0, 1.0], 100.0).unwrap();
        let bp = boundary(&p, &dims);
        let bg = boundary(&g, &dims);
        let dg = squared_edt(&bg, &dims, &[1.0, 1.0]);
        let dp = squared_edt(&bp, &dims, &[1.0, 1.0]);
        let classic = directed(&bp, &dg).chain(directed(&bg, &dp)).fold(0.0, f64::max);
        assert_eq!(h100, classic);
    }

    #[test]
    fn nmse_examples() {
        let g = Volume::from_vec(&[3], 1, vec![1.0, -2.0, 3.0]).unwrap();
        assert_eq!(nmse(&g, &g).unwrap(), 0.0);
        assert_eq!(nmse(&Volume::zeros(&[3], 1), &g).unwrap(), 1.0);
        assert_eq!(nmse(&g.scaled(2.0), &g).unwrap(), 1.0);
        assert!(nmse(&g, &Volume::zeros(&[3], 1)).is_err());
    }

    fn labels(dims: &[usize], v: &[u8]) -> Volume {
        Volume::from_vec(dims, 1, v.iter().map(|&l| f64::from(l)).collect()).unwrap()
    }

    #[test]
    fn region_report_cases() {
        let dims = [8, 8, 8];
        let mut gt = vec![0u8; 512];
        for i in 100..140 {
            gt[i] = 4;
        }
        let r = region_report(&labels(&dims, &gt), &labels(&dims, &gt), &[1.0; 3]).unwrap();
        for reg in Region::ALL {
            assert_eq!(*r.dice.get(reg), 1.0);
            assert_eq!(*r.hd95.get(reg), 0.0);
        }

        let empty = labels(&dims, &[0; 512]);
        let r = region_report(&empty, &labels(&dims, &gt), &[1.0; 3]).unwrap();
        let diag = (3.0f64 * 49.0).sqrt();
        for reg in Region::ALL {
            assert_eq!(*r.dice.get(reg), 0.0);
            assert_eq!(*r.hd95.get(reg), diag);
        }

        let mut two = vec![0u8; 512];
        for i in 200..260 {
            two[i] = 2;
        }
        let mut pred = two.clone();
        pred[261] = 2;
        let r = region_report(&labels(&dims, &pred), &labels(&dims, &two), &[1.0; 3]).unwrap();
        assert_eq!(r.dice.et, 1.0);
        assert_eq!(r.dice.tc, 1.0);
        assert!(r.dice.wt < 1.0 && r.dice.wt > 0.9);

        let mut bad = gt.clone();
        bad[0] = 3;
        assert!(matches!(
            region_report(&labels(&dims, &bad), &labels(&dims, &gt), &[1.0; 3]),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn region_nesting_sanity() {
        let dims = [8, 8];
        let gt: Vec<u8> = (0..64).map(|i| [0, 1, 2, 4][i % 4]).collect();
        let only4: Vec<u8> = gt.iter().map(|&l| if l == 4 { 4 } else { 0 }).collect();
        let mut fewer = only4.clone();
        if let Some(p) = fewer.iter().position(|&l| l == 4) {
            fewer[p] = 0;
        }
        let a = region_report(&labels(&dims, &only4), &labels(&dims, &gt), &[1.0; 2]).unwrap();
        let b = region_report(&labels(&dims, &fewer), &labels(&dims, &gt), &[1.0; 2]).unwrap();
        assert!(a.dice.wt >= b.dice.wt);
    }

    #[test]
    fn summary_examples() {
        let case = |v: f64| CaseReport {
            case_id: None,
            dice: PerRegion::from_fn(|_| v),
            hd95: PerRegion::from_fn(|_| v),
            nmse: None,
        };
        let s = summarize(&[case(0.3)]).unwrap();
        assert_eq!(
            s.dice.wt,
            Stats { mean: 0.3, sd: 0.0, median: 0.3, q25: 0.3, q75: 0.3 }
        );
        let s = summarize(&[case(0.0), case(1.0)]).unwrap();
        assert_eq!(s.dice.tc.mean, 0.5);
        assert!((s.dice.tc.sd - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert_eq!(s.dice.tc.median, 0.5);
        assert!(summarize(&[]).is_err());
        let json = serde_json::to_value(&s).unwrap();
        assert!(json["dice"]["WT"]["25quantile"].is_number());
        assert!(format_table(&s).contains("75quantile"));
    }

    proptest! {
        #[test]
        fn dice_is_symmetric_and_matches_set_form(bits in proptest::collection::vec(0u8..4, 64)) {
            let a: Vec<bool> = bits.iter().map(|b| b & 1 == 1).collect();
            let b: Vec<bool> = bits.iter().map(|b| b & 2 == 2).collect();
            let (va, vb) = (vol(&[8, 8], &a), vol(&[8, 8], &b));
            let d = dice(&va, &vb).unwrap();
            prop_assert_eq!(d, dice(&vb, &va).unwrap());
            let inter = a.iter().zip(&b).filter(|(x, y)| **x && **y).count();
            let total = a.iter().filter(|x| **x).count() + b.iter().filter(|x| **x).count();
            if total > 0 {
                prop_assert!((d - 2.0 * inter as f64 / total as f64).abs() < 1e-15);
            }
            prop_assert_eq!(
                hd95(&va, &vb, &[1.0, 1.0]).unwrap(),
                hd95(&vb, &va, &[1.0, 1.0]).unwrap()
            );
        }

        #[test]
        fn quantiles_are_ordered(vals in proptest::collection::vec(-10.0f64..10.0, 1..40)) {
            let s = Stats::of(&vals).unwrap();
            prop_assert!(s.q25 <= s.median && s.median <= s.q75);
            prop_assert!(s.sd >= 0.0);
        }
    }
}
