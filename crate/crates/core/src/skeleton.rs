//! Distance transform, thinning and per-crack length/width measurement.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::morphology::{BinaryImage, LabelImage};

/// Euclidean distance from each crack pixel to the nearest background pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl DistanceMap {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }
}

const INF: f64 = 1e20;

/// 1-D squared distance transform of a sampled function (lower envelope of parabolas).
fn edt_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let mut s;
        loop {
            let p = v[k];
            s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
            // z[0] is -inf, so k never underflows.
            if s <= z[k] {
                k -= 1;
            } else {
                break;
            }
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Exact Euclidean distance transform. The image is treated as surrounded by
/// background, so border crack pixels are at distance 1.
pub fn distance_transform(f: &BinaryImage) -> DistanceMap {
    let (w, h) = (f.width(), f.height());
    let (pw, ph) = (w + 2, h + 2);
    let mut grid = vec![0.0f64; pw * ph];
    for (r, c) in f.pixels() {
        grid[(r + 1) * pw + c + 1] = INF;
    }
    let n = pw.max(ph);
    let (mut col_in, mut col_out) = (vec![0.0; n], vec![0.0; n]);
    let (mut v, mut z) = (vec![0usize; n], vec![0.0f64; n + 1]);
    for c in 0..pw {
        for r in 0..ph {
            col_in[r] = grid[r * pw + c];
        }
        edt_1d(&col_in[..ph], &mut col_out[..ph], &mut v, &mut z);
        for r in 0..ph {
            grid[r * pw + c] = col_out[r];
        }
    }
    for r in 0..ph {
        let row = &mut grid[r * pw..(r + 1) * pw];
        col_in[..pw].copy_from_slice(row);
        edt_1d(&col_in[..pw], &mut col_out[..pw], &mut v, &mut z);
        row.copy_from_slice(&col_out[..pw]);
    }
    let mut values = vec![0.0; w * h];
    for r in 0..h {
        for c in 0..w {
            values[r * w + c] = grid[(r + 1) * pw + c + 1].sqrt();
        }
    }
    DistanceMap {
        width: w,
        height: h,
        values,
    }
}

/// One-pixel-wide skeleton with the local radius at each skeleton pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonImage {
    mask: BinaryImage,
    radius: Vec<f64>,
}

impl SkeletonImage {
    pub fn mask(&self) -> &BinaryImage {
        &self.mask
    }

    /// Radius at `(row, col)`; 0 off the skeleton.
    pub fn radius(&self, row: usize, col: usize) -> f64 {
        self.radius[row * self.mask.width() + col]
    }

    pub fn radii(&self) -> &[f64] {
        &self.radius
    }
}

/// Neighbours P2..P9 clockwise from north.
fn ring(img: &BinaryImage, r: usize, c: usize) -> [bool; 8] {
    let (r, c) = (r as isize, c as isize);
    [
        img.get_or_false(r - 1, c),
        img.get_or_false(r - 1, c + 1),
        img.get_or_false(r, c + 1),
        img.get_or_false(r + 1, c + 1),
        img.get_or_false(r + 1, c),
        img.get_or_false(r + 1, c - 1),
        img.get_or_false(r, c - 1),
        img.get_or_false(r - 1, c - 1),
    ]
}

fn deletable(img: &BinaryImage, r: usize, c: usize, first: bool) -> bool {
    let p = ring(img, r, c);
    let b = p.iter().filter(|&&x| x).count();
    if !(2..=6).contains(&b) {
        return false;
    }
    let a = (0..8).filter(|&i| !p[i] && p[(i + 1) % 8]).count();
    if a != 1 {
        return false;
    }
    let (n, e, s, w) = (p[0], p[2], p[4], p[6]);
    if first {
        !(n && e && s) && !(e && s && w)
    } else {
        !(n && e && w) && !(n && s && w)
    }
}

/// Two-subiteration boundary peeling until nothing changes.
///
/// Candidates come from a snapshot, but each is re-tested against the current
/// image before removal, so every deletion is a simple-point deletion and
/// 8-connected components (including 2x2 blocks) survive.
pub fn thin(f: &BinaryImage) -> BinaryImage {
    let mut img = f.clone();
    loop {
        let mut changed = false;
        for first in [true, false] {
            let candidates: Vec<(usize, usize)> = img
                .pixels()
                .filter(|&(r, c)| deletable(&img, r, c, first))
                .collect();
            for (r, c) in candidates {
                if deletable(&img, r, c, first) {
                    img.set(r, c, false);
                    changed = true;
                }
            }
        }
        if !changed {
            return img;
        }
    }
}

pub fn skeletonize(f: &BinaryImage) -> SkeletonImage {
    let dist = distance_transform(f);
    let mask = thin(f);
    let radius = mask
        .data()
        .iter()
        .zip(dist.values())
        .map(|(&s, &d)| if s { d } else { 0.0 })
        .collect();
    SkeletonImage { mask, radius }
}

/// Discrete arc length of a skeleton: 1 per orthogonal step, sqrt(2) per
/// diagonal step. A diagonal pair is skipped when either pixel of the corner
/// between them is itself on the skeleton, since the path already runs
/// through that corner.
pub fn crack_length(pixels: &[(usize, usize)]) -> Result<f64> {
    if pixels.is_empty() {
        return Err(Error::Measurement("empty skeleton".into()));
    }
    let set: HashSet<(isize, isize)> = pixels
        .iter()
        .map(|&(r, c)| (r as isize, c as isize))
        .collect();
    let mut orth = 0usize;
    let mut diag = 0usize;
    for &(r, c) in &set {
        // Forward half-neighbourhood so every pair is seen once.
        if set.contains(&(r, c + 1)) {
            orth += 1;
        }
        if set.contains(&(r + 1, c)) {
            orth += 1;
        }
        for dc in [-1isize, 1] {
            if set.contains(&(r + 1, c + dc))
                && !set.contains(&(r + 1, c))
                && !set.contains(&(r, c + dc))
            {
                diag += 1;
            }
        }
    }
    Ok(orth as f64 + diag as f64 * std::f64::consts::SQRT_2)
}

/// `(width, degenerate)`; a zero-length crack reports its area as width.
pub fn mean_width(area_px: usize, length_px: f64) -> (f64, bool) {
    if length_px > 0.0 {
        (area_px as f64 / length_px, false)
    } else {
        (area_px as f64, true)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrackMeasurement {
    pub id: u32,
    pub area_px: usize,
    pub length_px: f64,
    pub mean_width_px: f64,
    /// Length units per pixel.
    pub calibration: f64,
    pub length_units: f64,
    pub width_units: f64,
    pub degenerate: bool,
}

pub fn measure_all(labels: &LabelImage, f: &BinaryImage, calibration: f64) -> Result<Vec<CrackMeasurement>> {
    if labels.width() != f.width() || labels.height() != f.height() {
        return Err(Error::Shape("label image and mask differ in size".into()));
    }
    if !(calibration.is_finite() && calibration > 0.0) {
        return Err(Error::Config(format!("calibration must be positive, got {calibration}")));
    }
    let skeleton = skeletonize(f);
    measure_with_skeleton(labels, &skeleton, calibration)
}

/// Same as [`measure_all`] with a precomputed skeleton.
pub fn measure_with_skeleton(
    labels: &LabelImage,
    skeleton: &SkeletonImage,
    calibration: f64,
) -> Result<Vec<CrackMeasurement>> {
    let mut per_component: Vec<Vec<(usize, usize)>> = vec![Vec::new(); labels.count()];
    for (r, c) in skeleton.mask().pixels() {
        let id = labels.get(r, c);
        if id == 0 {
            return Err(Error::Shape("skeleton pixel outside labeled foreground".into()));
        }
        per_component[id as usize - 1].push((r, c));
    }
    labels
        .stats()
        .iter()
        .zip(&per_component)
        .map(|(stats, pixels)| {
            let length_px = crack_length(pixels)?;
            let (mean_width_px, degenerate) = mean_width(stats.area, length_px);
            Ok(CrackMeasurement {
                id: stats.id,
                area_px: stats.area,
                length_px,
                mean_width_px,
                calibration,
                length_units: length_px * calibration,
                width_units: mean_width_px * calibration,
                degenerate,
            })
        })
        .collect()
}

pub fn write_measurements_json(measurements: &[CrackMeasurement], path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(measurements)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_measurements_csv(measurements: &[CrackMeasurement], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    for m in measurements {
        w.serialize(m)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    w.into_inner()
        .map_err(|e| Error::io(path, e.into_error()))?
        .flush()
        .map_err(|e| Error::io(path, e))
}
