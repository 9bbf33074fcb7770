//! Dataset directories, mask binarization and reproducible splits.
//!
//! Layout: `<root>/images/<stem>.{png,jpg,jpeg}` with `<root>/masks/<stem>.png`.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ensemble::FusionConfig;
use crate::error::{Error, Result};
use crate::imageio::{probe_image, read_raw_image};
use crate::morphology::BinaryImage;
use crate::patch::{normalize_image, Raster, RawImage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Cfd,
    AigleRn,
    Custom,
}

impl std::str::FromStr for DatasetKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cfd" => Ok(DatasetKind::Cfd),
            "aiglern" | "aigle-rn" | "aigle" => Ok(DatasetKind::AigleRn),
            "custom" => Ok(DatasetKind::Custom),
            _ => Err(Error::Config(format!(
                "unknown dataset kind {s:?}; expected cfd, aiglern or custom"
            ))),
        }
    }
}

impl DatasetKind {
    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::Cfd => "cfd",
            DatasetKind::AigleRn => "aiglern",
            DatasetKind::Custom => "custom",
        }
    }

    /// Published `(train, test)` image counts, when the corpus has one.
    pub fn default_split(self) -> Option<(usize, usize)> {
        match self {
            DatasetKind::Cfd => Some((72, 46)),
            DatasetKind::AigleRn => Some((24, 14)),
            DatasetKind::Custom => None,
        }
    }

    pub fn default_fusion(self) -> FusionConfig {
        match self {
            DatasetKind::AigleRn => FusionConfig::grayscale(),
            _ => FusionConfig::default(),
        }
    }

    /// Checks `(width, height, channels)` against the corpus.
    fn validate(self, w: usize, h: usize, c: usize) -> std::result::Result<(), String> {
        match self {
            DatasetKind::Cfd if (w, h, c) != (480, 320, 3) => {
                Err(format!("expected a 480x320 colour image, found {w}x{h} with {c} channel(s)"))
            }
            DatasetKind::AigleRn if c != 1 || h != 462 || !(w == 991 || w == 311) => Err(format!(
                "expected a 991x462 or 311x462 grayscale image, found {w}x{h} with {c} channel(s)"
            )),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub stem: String,
    pub image: PathBuf,
    pub mask: PathBuf,
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub image_size: u64,
    pub image_sha256: String,
    pub mask_size: u64,
    pub mask_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub kind: DatasetKind,
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
    pub digest: String,
}

fn hash_file(path: &Path) -> Result<(u64, String)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok((bytes.len() as u64, hex::encode(Sha256::digest(&bytes))))
}

fn is_image(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("png" | "jpg" | "jpeg")
    )
}

/// Pairs every image with its mask, sorted by file name, and validates sizes.
pub fn load_dataset(root: &Path, kind: DatasetKind) -> Result<DatasetManifest> {
    let images_dir = root.join("images");
    let masks_dir = root.join("masks");
    if !root.is_dir() {
        return Err(Error::io(
            root,
            std::io::Error::new(std::io::ErrorKind::NotFound, "dataset root does not exist"),
        ));
    }
    let mut files: Vec<PathBuf> = match std::fs::read_dir(&images_dir) {
        Ok(rd) => rd
            .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(&images_dir, err)))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .filter(|p| p.is_file() && is_image(p))
            .collect(),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(Error::io(&images_dir, e)),
    };
    files.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    if files.is_empty() {
        return Err(Error::Dataset(format!("{} contains no images", images_dir.display())));
    }

    let mut entries = Vec::with_capacity(files.len());
    let mut hasher = Sha256::new();
    for image in files {
        let stem = image
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::Dataset(format!("{} has no usable name", image.display())))?
            .to_string();
        if entries.iter().any(|e: &ManifestEntry| e.stem == stem) {
            return Err(Error::Dataset(format!("two images share the stem {stem}")));
        }
        let mask = masks_dir.join(format!("{stem}.png"));
        if !mask.is_file() {
            return Err(Error::Dataset(format!(
                "image {} has no mask (expected {})",
                image.display(),
                mask.display()
            )));
        }
        let (w, h, c) = probe_image(&image)?;
        let (mw, mh, _) = probe_image(&mask)?;
        if (w, h) != (mw, mh) {
            return Err(Error::Dataset(format!(
                "{}: image is {w}x{h} but mask is {mw}x{mh}",
                image.display()
            )));
        }
        kind.validate(w, h, c)
            .map_err(|m| Error::Dataset(format!("{}: {m}", image.display())))?;
        let (image_size, image_sha256) = hash_file(&image)?;
        let (mask_size, mask_sha256) = hash_file(&mask)?;
        for part in [stem.as_str(), &image_sha256, &mask_sha256] {
            hasher.update(part.as_bytes());
            hasher.update([0]);
        }
        entries.push(ManifestEntry {
            stem,
            image,
            mask,
            width: w,
            height: h,
            channels: c,
            image_size,
            image_sha256,
            mask_size,
            mask_sha256,
        });
    }
    Ok(DatasetManifest {
        kind,
        root: root.to_path_buf(),
        entries,
        digest: hex::encode(hasher.finalize()),
    })
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, stem: &str) -> Result<&ManifestEntry> {
        self.entries
            .iter()
            .find(|e| e.stem == stem)
            .ok_or_else(|| Error::Dataset(format!("{stem} is not in the dataset")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskStats {
    pub crack_fraction: f64,
    pub empty: bool,
}

/// Crack iff the mask value is at least 128. Colour masks must be gray.
pub fn binarize_mask(raw: &RawImage) -> Result<(BinaryImage, MaskStats)> {
    let c = raw.channels;
    if c == 0 || raw.data.len() != raw.width * raw.height * c {
        return Err(Error::Shape("mask buffer does not match its shape".into()));
    }
    let mut data = Vec::with_capacity(raw.width * raw.height);
    for px in raw.data.chunks_exact(c) {
        if px.iter().any(|&v| v != px[0]) {
            return Err(Error::Format(
                "mask has differing channel values; expected a gray mask".into(),
            ));
        }
        data.push(px[0] >= 128);
    }
    let mask = BinaryImage::from_vec(raw.width, raw.height, data)?;
    let cracks = mask.count();
    let stats = MaskStats {
        crack_fraction: cracks as f64 / mask.len().max(1) as f64,
        empty: cracks == 0,
    };
    Ok((mask, stats))
}

/// Decoded image and mask of one entry.
pub struct LoadedPair {
    pub stem: String,
    pub raw: RawImage,
    pub image: Raster,
    pub mask: BinaryImage,
    pub mask_stats: MaskStats,
}

pub fn load_pair(entry: &ManifestEntry) -> Result<LoadedPair> {
    let raw = read_raw_image(&entry.image)?;
    let image = normalize_image(&raw)?;
    let (mask, mask_stats) = binarize_mask(&read_raw_image(&entry.mask)?)
        .map_err(|e| Error::Dataset(format!("{}: {e}", entry.mask.display())))?;
    if mask.width() != image.width || mask.height() != image.height {
        return Err(Error::Dataset(format!("{}: image and mask sizes differ", entry.stem)));
    }
    Ok(LoadedPair {
        stem: entry.stem.clone(),
        raw,
        image,
        mask,
        mask_stats,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub dataset: String,
    pub seed: u64,
    pub train: Vec<String>,
    pub test: Vec<String>,
}

/// Seeded shuffle of the name-sorted stems; the first `train_count` train.
pub fn make_split(
    manifest: &DatasetManifest,
    seed: u64,
    train_count: usize,
    test_count: usize,
) -> Result<SplitSpec> {
    if train_count + test_count != manifest.len() {
        return Err(Error::Config(format!(
            "split {train_count}+{test_count} does not cover {} images",
            manifest.len()
        )));
    }
    let mut stems: Vec<String> = manifest.entries.iter().map(|e| e.stem.clone()).collect();
    stems.sort();
    stems.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = stems.split_off(train_count);
    Ok(SplitSpec {
        dataset: manifest.kind.name().to_string(),
        seed,
        train: stems,
        test,
    })
}

impl SplitSpec {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let split: SplitSpec = serde_json::from_str(&text)?;
        let overlap = split.train.iter().find(|s| split.test.contains(s));
        if let Some(s) = overlap {
            return Err(Error::Config(format!("{} lists {s} in both train and test", path.display())));
        }
        Ok(split)
    }
}
