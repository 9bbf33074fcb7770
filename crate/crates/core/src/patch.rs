//! Patch extraction for training and dense sliding-window inference.
//!
//! A network sees a 27x27x3 window and predicts the 5x5 block at its centre,
//! so the block's top-left corner sits 11 pixels inside the window's.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::morphology::BinaryImage;
use crate::nn::{Network, Tensor, OUTPUT_SIZE, OUTPUT_UNITS, PATCH_CHANNELS, PATCH_SIZE};

/// Offset from a window's top-left corner to its output block's top-left corner.
pub const BLOCK_OFFSET: usize = (PATCH_SIZE - OUTPUT_SIZE) / 2;
/// Half-width of the input window.
pub const HALF_PATCH: usize = PATCH_SIZE / 2;
const HALF_BLOCK: usize = OUTPUT_SIZE / 2;
pub const PATCH_LEN: usize = PATCH_SIZE * PATCH_SIZE * PATCH_CHANNELS;

/// An 8-bit image as decoded from disk, row-major, interleaved channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

/// Row-major, channel-interleaved image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Raster {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 || !(channels == 1 || channels == 3) {
            return Err(Error::Shape(format!(
                "raster {width}x{height}x{channels} is not a valid image"
            )));
        }
        if data.len() != width * height * channels {
            return Err(Error::Shape(format!(
                "raster {width}x{height}x{channels} needs {} values, got {}",
                width * height * channels,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn pixel(&self, row: usize, col: usize) -> &[f32] {
        let off = (row * self.width + col) * self.channels;
        &self.data[off..off + self.channels]
    }

    /// Crops a `width x height` region starting at `(top, left)`.
    pub fn crop(&self, top: usize, left: usize, width: usize, height: usize) -> Result<Self> {
        if top + height > self.height || left + width > self.width {
            return Err(Error::Bounds("crop region exceeds the raster".into()));
        }
        let mut data = Vec::with_capacity(width * height * self.channels);
        for r in top..top + height {
            let off = (r * self.width + left) * self.channels;
            data.extend_from_slice(&self.data[off..off + width * self.channels]);
        }
        Raster::new(width, height, self.channels, data)
    }
}

/// Scales 8-bit values into `[0, 1]`; grayscale is replicated to 3 channels.
pub fn normalize_image(raw: &RawImage) -> Result<Raster> {
    if raw.data.len() != raw.width * raw.height * raw.channels {
        return Err(Error::Shape(format!(
            "image {}x{}x{} has {} bytes",
            raw.width,
            raw.height,
            raw.channels,
            raw.data.len()
        )));
    }
    let data: Vec<f32> = match raw.channels {
        3 => raw.data.iter().map(|&v| v as f32 / 255.0).collect(),
        1 => raw
            .data
            .iter()
            .flat_map(|&v| [v as f32 / 255.0; 3])
            .collect(),
        c => {
            return Err(Error::Format(format!(
                "unsupported channel count {c}; expected 1 or 3"
            )))
        }
    };
    Raster::new(raw.width, raw.height, 3, data)
}

/// Mirror index without repeating the edge sample, folding as often as needed.
pub(crate) fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Pads each side independently by mirror reflection.
pub(crate) fn reflect_pad_sides(
    image: &Raster,
    top: usize,
    bottom: usize,
    left: usize,
    right: usize,
) -> Raster {
    let width = image.width + left + right;
    let height = image.height + top + bottom;
    let c = image.channels;
    let cols: Vec<usize> = (0..width)
        .map(|x| reflect_index(x as isize - left as isize, image.width))
        .collect();
    let mut data = Vec::with_capacity(width * height * c);
    for y in 0..height {
        let sy = reflect_index(y as isize - top as isize, image.height);
        let row = &image.data[sy * image.width * c..(sy + 1) * image.width * c];
        for &sx in &cols {
            data.extend_from_slice(&row[sx * c..sx * c + c]);
        }
    }
    Raster {
        width,
        height,
        channels: c,
        data,
    }
}

/// Mirror padding (`[a, b, c]` with margin 1 becomes `[b, a, b, c, b]`).
pub fn reflect_pad(image: &Raster, margin: usize) -> Result<Raster> {
    if margin >= image.width.min(image.height) {
        return Err(Error::Bounds(format!(
            "margin {margin} must be smaller than the image extent {}",
            image.width.min(image.height)
        )));
    }
    Ok(reflect_pad_sides(image, margin, margin, margin, margin))
}

/// Copies the 27x27 window whose top-left corner is `(top, left)` in `padded`.
pub(crate) fn read_window(padded: &Raster, top: usize, left: usize, out: &mut Vec<f32>) {
    let c = padded.channels;
    for r in top..top + PATCH_SIZE {
        let off = (r * padded.width + left) * c;
        out.extend_from_slice(&padded.data[off..off + PATCH_SIZE * c]);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingPolicy {
    pub max_positive_per_image: usize,
    pub negative_to_positive_ratio: f64,
    pub rng_seed: u64,
}

impl Default for SamplingPolicy {
    fn default() -> Self {
        Self {
            max_positive_per_image: 2000,
            negative_to_positive_ratio: 1.0,
            rng_seed: 0,
        }
    }
}

impl SamplingPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.max_positive_per_image == 0 {
            return Err(Error::Config("max_positive_per_image must be >= 1".into()));
        }
        if !(self.negative_to_positive_ratio > 0.0 && self.negative_to_positive_ratio.is_finite())
        {
            return Err(Error::Config("negative_to_positive_ratio must be > 0".into()));
        }
        Ok(())
    }
}

/// Patch centres chosen for one image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CenterSelection {
    pub positives: Vec<(usize, usize)>,
    pub negatives: Vec<(usize, usize)>,
    /// The mask held no crack pixels; only negatives were drawn.
    pub no_crack_warning: bool,
}

impl CenterSelection {
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.positives.iter().chain(&self.negatives).copied()
    }

    pub fn len(&self) -> usize {
        self.positives.len() + self.negatives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn draw<R: Rng + ?Sized>(pool: &[usize], amount: usize, rng: &mut R) -> Vec<usize> {
    if amount >= pool.len() {
        return pool.to_vec();
    }
    let mut picked: Vec<usize> = index::sample(rng, pool.len(), amount)
        .into_iter()
        .map(|i| pool[i])
        .collect();
    picked.sort_unstable();
    picked
}

/// Chooses crack-centred positives (uniformly capped) and a ratio-matched
/// number of background-centred negatives.
pub fn select_centers<R: Rng + ?Sized>(
    mask: &BinaryImage,
    policy: &SamplingPolicy,
    rng: &mut R,
) -> Result<CenterSelection> {
    policy.validate()?;
    let (crack, background): (Vec<usize>, Vec<usize>) =
        (0..mask.len()).partition(|&i| mask.data()[i]);
    let positives = draw(&crack, policy.max_positive_per_image, rng);
    let basis = if positives.is_empty() {
        policy.max_positive_per_image
    } else {
        positives.len()
    };
    let n_neg = (basis as f64 * policy.negative_to_positive_ratio).round() as usize;
    let negatives = draw(&background, n_neg, rng);
    let to_rc = |i: usize| (i / mask.width(), i % mask.width());
    Ok(CenterSelection {
        positives: positives.into_iter().map(to_rc).collect(),
        negatives: negatives.into_iter().map(to_rc).collect(),
        no_crack_warning: crack.is_empty(),
    })
}

/// One training example: the 27x27x3 input window and the 5x5 ground-truth
/// block around the same centre.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSample {
    pub input: Vec<f32>,
    pub label: [bool; OUTPUT_UNITS],
    pub center: (usize, usize),
}

impl PatchSample {
    pub fn target(&self) -> [f32; OUTPUT_UNITS] {
        self.label.map(|b| if b { 1.0 } else { 0.0 })
    }
}

/// An image reflect-padded by half a patch together with its mask, ready to
/// serve windows for arbitrary centres.
#[derive(Debug, Clone)]
pub struct PatchSource {
    padded: Raster,
    mask: BinaryImage,
}

impl PatchSource {
    pub fn new(image: &Raster, mask: &BinaryImage) -> Result<Self> {
        if image.width != mask.width() || image.height != mask.height() {
            return Err(Error::Shape(format!(
                "image is {}x{} but mask is {}x{}",
                image.width,
                image.height,
                mask.width(),
                mask.height()
            )));
        }
        if image.channels != PATCH_CHANNELS {
            return Err(Error::Shape("training images must have 3 channels".into()));
        }
        Ok(Self {
            padded: reflect_pad_sides(image, HALF_PATCH, HALF_PATCH, HALF_PATCH, HALF_PATCH),
            mask: mask.clone(),
        })
    }

    pub fn mask(&self) -> &BinaryImage {
        &self.mask
    }

    /// Appends the input window centred on `center` to `out`.
    pub fn write_input(&self, center: (usize, usize), out: &mut Vec<f32>) {
        read_window(&self.padded, center.0, center.1, out);
    }

    /// Ground truth of the 5x5 block centred on `center`, mirrored at borders
    /// the same way the input is.
    pub fn label(&self, center: (usize, usize)) -> [bool; OUTPUT_UNITS] {
        let mut label = [false; OUTPUT_UNITS];
        for dy in 0..OUTPUT_SIZE {
            let y = reflect_index(
                center.0 as isize + dy as isize - HALF_BLOCK as isize,
                self.mask.height(),
            );
            for dx in 0..OUTPUT_SIZE {
                let x = reflect_index(
                    center.1 as isize + dx as isize - HALF_BLOCK as isize,
                    self.mask.width(),
                );
                label[dy * OUTPUT_SIZE + dx] = self.mask.get(y, x);
            }
        }
        label
    }

    pub fn sample(&self, center: (usize, usize)) -> PatchSample {
        let mut input = Vec::with_capacity(PATCH_LEN);
        self.write_input(center, &mut input);
        PatchSample {
            input,
            label: self.label(center),
            center,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SampleSet {
    pub samples: Vec<PatchSample>,
    pub positives: usize,
    pub no_crack_warning: bool,
}

/// Materializes training patches for one image (positives first).
pub fn extract_training_samples<R: Rng + ?Sized>(
    image: &Raster,
    gt_mask: &BinaryImage,
    policy: &SamplingPolicy,
    rng: &mut R,
) -> Result<SampleSet> {
    let source = PatchSource::new(image, gt_mask)?;
    let centers = select_centers(gt_mask, policy, rng)?;
    Ok(SampleSet {
        samples: centers.iter().map(|c| source.sample(c)).collect(),
        positives: centers.positives.len(),
        no_crack_warning: centers.no_crack_warning,
    })
}

/// As [`extract_training_samples`], seeded from `policy.rng_seed`.
pub fn extract_training_samples_seeded(
    image: &Raster,
    gt_mask: &BinaryImage,
    policy: &SamplingPolicy,
) -> Result<SampleSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(policy.rng_seed);
    extract_training_samples(image, gt_mask, policy, &mut rng)
}

/// Anything that maps a batch of 27x27x3 windows to 5x5 probability blocks.
pub trait PatchPredictor: Sync {
    /// `patches` holds `count` windows back to back; returns `count * 25`
    /// probabilities in the same order.
    fn predict_patches(&self, patches: &[f32], count: usize) -> Result<Vec<f32>>;
}

/// Largest batch handed to a network at once during inference.
const INFERENCE_CHUNK: usize = 32;

impl PatchPredictor for Network<f32> {
    fn predict_patches(&self, patches: &[f32], count: usize) -> Result<Vec<f32>> {
        let mut out = Vec::with_capacity(count * OUTPUT_UNITS);
        for chunk in patches.chunks(INFERENCE_CHUNK * PATCH_LEN) {
            let n = chunk.len() / PATCH_LEN;
            let input = Tensor::from_vec(
                &[n, PATCH_SIZE, PATCH_SIZE, PATCH_CHANNELS],
                chunk.to_vec(),
            )?;
            out.extend_from_slice(self.predict(&input)?.data());
        }
        Ok(out)
    }
}

/// Adapts a per-window closure into a [`PatchPredictor`].
pub struct FnPredictor<F>(pub F);

impl<F> PatchPredictor for FnPredictor<F>
where
    F: Fn(&[f32]) -> [f32; OUTPUT_UNITS] + Sync,
{
    fn predict_patches(&self, patches: &[f32], count: usize) -> Result<Vec<f32>> {
        if patches.len() != count * PATCH_LEN {
            return Err(Error::Shape("patch buffer length mismatch".into()));
        }
        Ok(patches.chunks_exact(PATCH_LEN).flat_map(|p| (self.0)(p)).collect())
    }
}

/// Sliding-window step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stride {
    /// Every pixel receives 25 overlapping votes.
    Dense,
    /// Output blocks tile the image; one vote per pixel.
    Tiled,
}

impl Stride {
    pub fn from_step(step: usize) -> Result<Self> {
        match step {
            1 => Ok(Stride::Dense),
            5 => Ok(Stride::Tiled),
            s => Err(Error::Config(format!("stride must be 1 or 5, got {s}"))),
        }
    }

    pub fn step(self) -> usize {
        match self {
            Stride::Dense => 1,
            Stride::Tiled => OUTPUT_SIZE,
        }
    }
}

/// Per-pixel crack probability with the number of votes behind each value.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap {
    width: usize,
    height: usize,
    probs: Vec<f32>,
    votes: Vec<u16>,
}

impl ProbabilityMap {
    pub fn new(width: usize, height: usize, probs: Vec<f32>) -> Result<Self> {
        Self::with_votes(width, height, probs, vec![1; width * height])
    }

    pub fn with_votes(width: usize, height: usize, probs: Vec<f32>, votes: Vec<u16>) -> Result<Self> {
        if probs.len() != width * height || votes.len() != probs.len() {
            return Err(Error::Shape(format!(
                "probability map {width}x{height} has {} values",
                probs.len()
            )));
        }
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Numeric("probabilities must lie in [0, 1]".into()));
        }
        Ok(Self {
            width,
            height,
            probs,
            votes,
        })
    }

    pub fn filled(width: usize, height: usize, p: f32) -> Result<Self> {
        Self::new(width, height, vec![p; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn probs(&self) -> &[f32] {
        &self.probs
    }

    pub fn votes(&self) -> &[u16] {
        &self.votes
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.probs[row * self.width + col]
    }
}

/// Window placement: padding per side and the window top-left corners.
struct Placement {
    top: usize,
    bottom: usize,
    left: usize,
    right: usize,
    rows: Vec<usize>,
    cols: Vec<usize>,
    /// Original-image coordinate of the output block of the window at padded
    /// position 0.
    block_origin: isize,
}

fn placement(width: usize, height: usize, stride: Stride) -> Placement {
    match stride {
        Stride::Dense => {
            // 13 + 2 on each side so border pixels also collect 25 votes.
            let margin = HALF_PATCH + HALF_BLOCK;
            Placement {
                top: margin,
                bottom: margin,
                left: margin,
                right: margin,
                rows: (0..height + 2 * margin - PATCH_SIZE + 1).collect(),
                cols: (0..width + 2 * margin - PATCH_SIZE + 1).collect(),
                block_origin: BLOCK_OFFSET as isize - margin as isize,
            }
        }
        Stride::Tiled => {
            let margin = HALF_PATCH;
            let ext_h = height.div_ceil(OUTPUT_SIZE) * OUTPUT_SIZE;
            let ext_w = width.div_ceil(OUTPUT_SIZE) * OUTPUT_SIZE;
            Placement {
                top: margin,
                bottom: margin + ext_h - height,
                left: margin,
                right: margin + ext_w - width,
                rows: (HALF_BLOCK..ext_h).step_by(OUTPUT_SIZE).collect(),
                cols: (HALF_BLOCK..ext_w).step_by(OUTPUT_SIZE).collect(),
                block_origin: BLOCK_OFFSET as isize - margin as isize,
            }
        }
    }
}

/// Slides the 27x27 window over the mirror-padded image and averages every
/// 5x5 vote that lands on each pixel.
///
/// Window rows are evaluated in parallel; votes are summed in a fixed row-major
/// order so the result does not depend on scheduling.
pub fn infer_probability_map<P: PatchPredictor + ?Sized>(
    predictor: &P,
    image: &Raster,
    stride: Stride,
) -> Result<ProbabilityMap> {
    if image.channels != PATCH_CHANNELS {
        return Err(Error::Shape(format!(
            "inference needs a 3-channel raster, got {} channels",
            image.channels
        )));
    }
    let (w, h) = (image.width, image.height);
    let pl = placement(w, h, stride);
    let padded = reflect_pad_sides(image, pl.top, pl.bottom, pl.left, pl.right);

    let row_predictions: Vec<Vec<f32>> = pl
        .rows
        .par_iter()
        .map(|&top| {
            let mut buf = Vec::with_capacity(pl.cols.len() * PATCH_LEN);
            for &left in &pl.cols {
                read_window(&padded, top, left, &mut buf);
            }
            predictor.predict_patches(&buf, pl.cols.len())
        })
        .collect::<Result<_>>()?;

    let mut sums = vec![0.0f64; w * h];
    let mut votes = vec![0u16; w * h];
    for (&top, preds) in pl.rows.iter().zip(&row_predictions) {
        if preds.len() != pl.cols.len() * OUTPUT_UNITS {
            return Err(Error::Shape("predictor returned the wrong number of values".into()));
        }
        for (&left, block) in pl.cols.iter().zip(preds.chunks_exact(OUTPUT_UNITS)) {
            let by = top as isize + pl.block_origin;
            let bx = left as isize + pl.block_origin;
            for dy in 0..OUTPUT_SIZE {
                let y = by + dy as isize;
                if y < 0 || y >= h as isize {
                    continue;
                }
                for dx in 0..OUTPUT_SIZE {
                    let x = bx + dx as isize;
                    if x < 0 || x >= w as isize {
                        continue;
                    }
                    let i = y as usize * w + x as usize;
                    sums[i] += block[dy * OUTPUT_SIZE + dx] as f64;
                    votes[i] += 1;
                }
            }
        }
    }
    let probs = sums
        .iter()
        .zip(&votes)
        .map(|(&s, &v)| ((s / v.max(1) as f64) as f32).clamp(0.0, 1.0))
        .collect();
    ProbabilityMap::with_votes(w, h, probs, votes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gray(width: usize, height: usize, data: Vec<f32>) -> Raster {
        Raster::new(width, height, 1, data).unwrap()
    }

    fn random_raster(width: usize, height: usize, seed: u64) -> Raster {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..width * height * 3).map(|_| rng.gen::<f32>()).collect();
        Raster::new(width, height, 3, data).unwrap()
    }

    #[test]
    fn normalization() {
        let raw = RawImage {
            width: 2,
            height: 1,
            channels: 1,
            data: vec![255, 0],
        };
        let r = normalize_image(&raw).unwrap();
        assert_eq!(r.channels, 3);
        assert_eq!(r.data, vec![1.0, 1.0, 1.0, 0.0, 0.0, 0.0]);

        let raw = RawImage {
            width: 1,
            height: 1,
            channels: 4,
            data: vec![1, 2, 3, 4],
        };
        assert!(matches!(normalize_image(&raw), Err(Error::Format(_))));

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let raw = RawImage {
            width: 8,
            height: 8,
            channels: 3,
            data: (0..192).map(|_| rng.gen()).collect(),
        };
        let r = normalize_image(&raw).unwrap();
        assert!(r.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn reflect_row() {
        let row = gray(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let p = reflect_pad(&row, 1).unwrap();
        assert_eq!(p.width, 5);
        assert_eq!(&p.data[5..10], &[2.0, 1.0, 2.0, 3.0, 2.0]);
        assert_eq!(reflect_pad(&row, 0).unwrap(), row);
        assert!(matches!(reflect_pad(&row, 2), Err(Error::Bounds(_))));
    }

    #[test]
    fn pad_then_crop_is_identity() {
        let img = random_raster(17, 11, 4);
        let p = reflect_pad(&img, 6).unwrap();
        assert_eq!(p.crop(6, 6, 17, 11).unwrap(), img);
    }

    #[test]
    fn reflect_index_folds_repeatedly() {
        let seq: Vec<usize> = (-5..9).map(|i| reflect_index(i, 3)).collect();
        assert_eq!(seq, vec![1, 0, 1, 2, 1, 0, 1, 2, 1, 0, 1, 2, 1, 0]);
        assert_eq!(reflect_index(-7, 1), 0);
    }

    #[test]
    fn block_offset_geometry() {
        assert_eq!(BLOCK_OFFSET, 11);
    }

    #[test]
    fn single_crack_pixel_gives_one_of_each() {
        let img = random_raster(20, 20, 2);
        let mut mask = BinaryImage::new(20, 20);
        mask.set(7, 9, true);
        let set = extract_training_samples_seeded(&img, &mask, &SamplingPolicy::default()).unwrap();
        assert_eq!(set.samples.len(), 2);
        assert_eq!(set.positives, 1);
        assert_eq!(set.samples[0].center, (7, 9));
        assert!(set.samples[0].label[12]);
        assert!(!set.samples[1].label[12]);
        assert!(!set.no_crack_warning);
    }

    #[test]
    fn labels_match_ground_truth_windows() {
        let img = random_raster(40, 30, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut mask = BinaryImage::new(40, 30);
        for i in 0..mask.len() {
            if rng.gen_bool(0.2) {
                mask.data_mut()[i] = true;
            }
        }
        let policy = SamplingPolicy {
            max_positive_per_image: 50,
            ..Default::default()
        };
        let set = extract_training_samples(&img, &mask, &policy, &mut rng).unwrap();
        assert_eq!(set.samples.len(), 100);
        let padded = reflect_pad(&img, 13).unwrap();
        for s in &set.samples {
            let (r, c) = s.center;
            for dy in 0..5 {
                for dx in 0..5 {
                    let y = reflect_index(r as isize + dy as isize - 2, 30);
                    let x = reflect_index(c as isize + dx as isize - 2, 40);
                    assert_eq!(s.label[dy * 5 + dx], mask.get(y, x));
                }
            }
            // Window centre pixel is the source pixel at the patch centre.
            let centre = &s.input[(13 * 27 + 13) * 3..(13 * 27 + 13) * 3 + 3];
            assert_eq!(centre, img.pixel(r, c));
            let corner = &s.input[..3];
            assert_eq!(corner, padded.pixel(r, c));
        }
    }

    #[test]
    fn sampling_is_deterministic_and_handles_empty_masks() {
        let img = random_raster(30, 30, 5);
        let mut mask = BinaryImage::new(30, 30);
        for c in 3..25 {
            mask.set(15, c, true);
        }
        let policy = SamplingPolicy {
            max_positive_per_image: 10,
            negative_to_positive_ratio: 2.0,
            rng_seed: 99,
        };
        let a = extract_training_samples_seeded(&img, &mask, &policy).unwrap();
        let b = extract_training_samples_seeded(&img, &mask, &policy).unwrap();
        assert_eq!(a.samples, b.samples);
        assert_eq!(a.samples.len(), 30);

        let empty = BinaryImage::new(30, 30);
        let set = extract_training_samples_seeded(&img, &empty, &policy).unwrap();
        assert!(set.no_crack_warning);
        assert_eq!(set.positives, 0);
        assert_eq!(set.samples.len(), 20);
    }

    fn constant(p: f32) -> FnPredictor<impl Fn(&[f32]) -> [f32; 25] + Sync> {
        FnPredictor(move |_: &[f32]| [p; 25])
    }

    #[test]
    fn constant_predictor_both_strides() {
        let img = random_raster(23, 17, 6);
        for stride in [Stride::Dense, Stride::Tiled] {
            let map = infer_probability_map(&constant(0.7), &img, stride).unwrap();
            assert!(map.probs().iter().all(|&p| (p - 0.7).abs() < 1e-6));
            let expected_votes = if stride == Stride::Dense { 25 } else { 1 };
            assert!(map.votes().iter().all(|&v| v == expected_votes));
        }
        assert!(Stride::from_step(3).is_err());
    }

    /// A fixed, position-sensitive predictor: probabilities derived from the
    /// window contents so every vote differs.
    fn hashing_predictor() -> FnPredictor<impl Fn(&[f32]) -> [f32; 25] + Sync> {
        FnPredictor(|p: &[f32]| {
            let mut out = [0.0; 25];
            for (k, o) in out.iter_mut().enumerate() {
                let v: f32 = p.iter().skip(k * 7).step_by(97).take(9).sum();
                *o = (v * 0.37 + k as f32 * 0.013).fract();
            }
            out
        })
    }

    #[test]
    fn dense_map_matches_accumulation_oracle() {
        let img = random_raster(12, 12, 7);
        let pred = hashing_predictor();
        let map = infer_probability_map(&pred, &img, Stride::Dense).unwrap();

        // Oracle: for every pixel, average over all 25 windows whose output block
        // covers it, reading each window straight from the mirrored source.
        for y in 0..12isize {
            for x in 0..12isize {
                let mut sum = 0.0f64;
                for dy in 0..5isize {
                    for dx in 0..5isize {
                        let cy = y - dy + 2;
                        let cx = x - dx + 2;
                        let mut window = Vec::with_capacity(PATCH_LEN);
                        for wy in cy - 13..=cy + 13 {
                            for wx in cx - 13..=cx + 13 {
                                let sy = reflect_index(wy, 12);
                                let sx = reflect_index(wx, 12);
                                window.extend_from_slice(img.pixel(sy, sx));
                            }
                        }
                        let block = (pred.0)(&window);
                        sum += block[(dy * 5 + dx) as usize] as f64;
                    }
                }
                let expected = sum / 25.0;
                let got = map.get(y as usize, x as usize) as f64;
                assert!((got - expected).abs() < 1e-6, "({y},{x}) {got} vs {expected}");
            }
        }
    }

    #[test]
    fn shift_equivariance_with_constant_predictor() {
        let img = random_raster(20, 20, 9);
        let shifted = reflect_pad_sides(&img, 5, 0, 5, 0);
        let a = infer_probability_map(&constant(0.3), &img, Stride::Tiled).unwrap();
        let b = infer_probability_map(&constant(0.3), &shifted, Stride::Tiled).unwrap();
        for y in 0..20 {
            for x in 0..20 {
                assert_eq!(a.get(y, x), b.get(y + 5, x + 5));
            }
        }
    }

    #[test]
    fn probabilities_stay_in_unit_interval() {
        let img = random_raster(16, 9, 10);
        let map = infer_probability_map(&hashing_predictor(), &img, Stride::Dense).unwrap();
        assert!(map.probs().iter().all(|p| (0.0..=1.0).contains(p)));
    }
}
