//! Independently seeded networks fused by per-pixel averaging.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::metrics::{evaluate_dataset, Aggregation, EvalConfig, ScoreTriple};
use crate::morphology::BinaryImage;
use crate::nn::{load_params, save_params, Network, NetworkSpec, TrainConfig};
use crate::patch::{infer_probability_map, ProbabilityMap, Raster, SamplingPolicy, Stride};
use crate::training::{train_network, EpochLog, PatchDataset};

pub const DEFAULT_N_GRID: [usize; 4] = [1, 3, 5, 7];
pub const DEFAULT_T_GRID: [f64; 4] = [0.4, 0.5, 0.6, 0.7];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub member_count: usize,
    pub threshold: f64,
}

impl Default for FusionConfig {
    /// Colour imagery: three members, threshold 0.6.
    fn default() -> Self {
        Self {
            member_count: 3,
            threshold: 0.6,
        }
    }
}

impl FusionConfig {
    /// Grayscale imagery: three members, threshold 0.4.
    pub fn grayscale() -> Self {
        Self {
            member_count: 3,
            threshold: 0.4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.member_count == 0 {
            return Err(Error::Config("member_count must be at least 1".into()));
        }
        check_threshold(self.threshold)
    }
}

fn check_threshold(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Config(format!("threshold {t} outside [0, 1]")));
    }
    Ok(())
}

/// Trained members plus the settings they were trained with.
#[derive(Debug, Clone)]
pub struct EnsembleModel {
    pub members: Vec<Network<f32>>,
    pub seeds: Vec<u64>,
    pub dataset: String,
    pub train_config: TrainConfig,
    pub fusion: FusionConfig,
}

/// Per-member training outcome.
#[derive(Debug, Clone)]
pub struct MemberLog {
    pub index: usize,
    pub seed: u64,
    pub epochs: Vec<EpochLog>,
    pub patches: usize,
}

#[derive(Debug, Clone)]
pub struct EnsembleTraining<'a> {
    pub spec: &'a NetworkSpec,
    pub train_config: &'a TrainConfig,
    pub policy: &'a SamplingPolicy,
    pub members: usize,
    pub seed_base: u64,
    pub dataset: &'a str,
    pub fusion: FusionConfig,
}

/// Trains `members` networks that differ only in seed (`seed_base + i`), which
/// drives initialization, patch sampling, shuffling and dropout. Members train
/// concurrently.
pub fn train_ensemble(
    pairs: &[(Raster, BinaryImage)],
    job: &EnsembleTraining<'_>,
) -> Result<(EnsembleModel, Vec<MemberLog>)> {
    if job.members == 0 {
        return Err(Error::Config("ensemble needs at least one member".into()));
    }
    if pairs.is_empty() {
        return Err(Error::Dataset("training set is empty".into()));
    }
    job.train_config.validate()?;
    job.spec.validate()?;
    let results: Vec<Result<(Network<f32>, MemberLog)>> = (0..job.members)
        .into_par_iter()
        .map(|index| {
            let seed = job.seed_base.wrapping_add(index as u64);
            let wrap = |e: Error| Error::Member {
                index,
                seed,
                source: Box::new(e),
            };
            let policy = SamplingPolicy {
                rng_seed: seed,
                ..job.policy.clone()
            };
            let config = TrainConfig {
                rng_seed: seed,
                ..job.train_config.clone()
            };
            let data = PatchDataset::build(pairs, &policy).map_err(wrap)?;
            let (net, epochs) = train_network(job.spec, &config, &data, |e| {
                log::info!("member {index} epoch {} loss {:.5}", e.epoch, e.loss)
            })
            .map_err(wrap)?;
            Ok((
                net,
                MemberLog {
                    index,
                    seed,
                    epochs,
                    patches: data.len(),
                },
            ))
        })
        .collect();
    let mut members = Vec::with_capacity(job.members);
    let mut logs = Vec::with_capacity(job.members);
    for r in results {
        let (net, log) = r?;
        members.push(net);
        logs.push(log);
    }
    let seeds = logs.iter().map(|l| l.seed).collect();
    Ok((
        EnsembleModel {
            members,
            seeds,
            dataset: job.dataset.to_string(),
            train_config: job.train_config.clone(),
            fusion: job.fusion,
        },
        logs,
    ))
}

impl EnsembleModel {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// One probability map per member, in member order.
    pub fn member_maps(&self, image: &Raster, stride: Stride, n: usize) -> Result<Vec<ProbabilityMap>> {
        if n == 0 || n > self.members.len() {
            return Err(Error::Config(format!(
                "requested {n} members but the ensemble holds {}",
                self.members.len()
            )));
        }
        self.members[..n]
            .iter()
            .map(|m| infer_probability_map(m, image, stride))
            .collect()
    }

    /// Fused map of the first `n` members.
    pub fn predict(&self, image: &Raster, stride: Stride, n: usize) -> Result<ProbabilityMap> {
        fuse_probabilities(&self.member_maps(image, stride, n)?)
    }
}

/// Per-pixel arithmetic mean of the member maps.
pub fn fuse_probabilities(maps: &[ProbabilityMap]) -> Result<ProbabilityMap> {
    let first = maps
        .first()
        .ok_or_else(|| Error::Config("fusion needs at least one map".into()))?;
    let (w, h) = (first.width(), first.height());
    if let Some(m) = maps.iter().find(|m| m.width() != w || m.height() != h) {
        return Err(Error::Shape(format!(
            "cannot fuse a {}x{} map with a {w}x{h} map",
            m.width(),
            m.height()
        )));
    }
    let k = maps.len() as f64;
    let mut probs = vec![0.0f32; w * h];
    let mut votes = vec![0u16; w * h];
    for (i, (p, v)) in probs.iter_mut().zip(votes.iter_mut()).enumerate() {
        let sum: f64 = maps.iter().map(|m| m.probs()[i] as f64).sum();
        *p = ((sum / k) as f32).clamp(0.0, 1.0);
        *v = maps.iter().map(|m| m.votes()[i]).fold(0u16, u16::saturating_add);
    }
    ProbabilityMap::with_votes(w, h, probs, votes)
}

/// Crack wherever `p >= t`. The comparison happens at map precision so a
/// stored 0.7 meets a threshold of 0.7.
pub fn threshold_map(map: &ProbabilityMap, t: f64) -> Result<BinaryImage> {
    check_threshold(t)?;
    let t = t as f32;
    let data = map.probs().iter().map(|&p| p >= t).collect();
    BinaryImage::from_vec(map.width(), map.height(), data)
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ManifestMember {
    pub path: PathBuf,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EnsembleManifest {
    pub dataset: String,
    pub members: Vec<ManifestMember>,
    pub train_config: TrainConfig,
    pub config_digest: String,
    pub fusion: FusionConfig,
}

pub fn config_digest(config: &TrainConfig) -> Result<String> {
    let bytes = serde_json::to_vec(config)?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

/// Writes `member_<i>.crk` files into `models_dir` and the manifest to
/// `manifest_path`. Member paths in the manifest are relative to its directory
/// when possible.
pub fn save_ensemble(model: &EnsembleModel, models_dir: &Path, manifest_path: &Path) -> Result<EnsembleManifest> {
    std::fs::create_dir_all(models_dir).map_err(|e| Error::io(models_dir, e))?;
    let base = manifest_path.parent().unwrap_or(Path::new(""));
    let mut members = Vec::with_capacity(model.len());
    for (i, (net, &seed)) in model.members.iter().zip(&model.seeds).enumerate() {
        let path = models_dir.join(format!("member_{i}.crk"));
        save_params(net.spec(), net.params(), &path)?;
        let rel = path.strip_prefix(base).map(Path::to_path_buf).unwrap_or(path);
        members.push(ManifestMember { path: rel, seed });
    }
    let manifest = EnsembleManifest {
        dataset: model.dataset.clone(),
        members,
        train_config: model.train_config.clone(),
        config_digest: config_digest(&model.train_config)?,
        fusion: model.fusion,
    };
    let text = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(manifest_path, text).map_err(|e| Error::io(manifest_path, e))?;
    Ok(manifest)
}

pub fn load_ensemble(manifest_path: &Path) -> Result<EnsembleModel> {
    let text = std::fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: EnsembleManifest = serde_json::from_str(&text)?;
    if manifest.members.is_empty() {
        return Err(Error::Config(format!("{} lists no members", manifest_path.display())));
    }
    let base = manifest_path.parent().unwrap_or(Path::new(""));
    let mut members = Vec::with_capacity(manifest.members.len());
    let mut shape = None;
    for m in &manifest.members {
        let path = if m.path.is_absolute() { m.path.clone() } else { base.join(&m.path) };
        let (spec, params) = load_params(&path)?;
        let io = (spec.input_shape, spec.validate()?.last().cloned());
        if shape.get_or_insert(io.clone()) != &io {
            return Err(Error::Shape(format!("{} disagrees with the other members' shapes", path.display())));
        }
        members.push(Network::new(spec, params)?);
    }
    Ok(EnsembleModel {
        members,
        seeds: manifest.members.iter().map(|m| m.seed).collect(),
        dataset: manifest.dataset,
        train_config: manifest.train_config,
        fusion: manifest.fusion,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub dataset: String,
    pub n: usize,
    pub t: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    /// Index into `rows` of the highest F1 (first one on ties).
    pub best: usize,
}

impl SweepResult {
    pub fn best_row(&self) -> &SweepRow {
        &self.rows[self.best]
    }
}

/// One test image with the maps of every pool member, in member order.
pub struct SweepImage {
    pub name: String,
    pub member_maps: Vec<ProbabilityMap>,
    pub gt: BinaryImage,
}

/// Scores every `(n, t)` cell using the first `n` members of the pool.
pub fn sweep_maps(
    dataset: &str,
    images: &[SweepImage],
    n_grid: &[usize],
    t_grid: &[f64],
    eval: &EvalConfig,
) -> Result<SweepResult> {
    if n_grid.is_empty() || t_grid.is_empty() {
        return Err(Error::Config("sweep grids must not be empty".into()));
    }
    let pool = images.iter().map(|i| i.member_maps.len()).min().unwrap_or(0);
    if let Some(&n) = n_grid.iter().find(|&&n| n == 0 || n > pool) {
        return Err(Error::Config(format!("sweep asks for n={n} but the pool holds {pool} members")));
    }
    for &t in t_grid {
        check_threshold(t)?;
    }
    let gts: Vec<(String, BinaryImage)> = images.iter().map(|i| (i.name.clone(), i.gt.clone())).collect();
    let mut rows = Vec::with_capacity(n_grid.len() * t_grid.len());
    for &n in n_grid {
        let fused: Vec<ProbabilityMap> = images
            .iter()
            .map(|i| fuse_probabilities(&i.member_maps[..n]))
            .collect::<Result<_>>()?;
        for &t in t_grid {
            let preds: Vec<(String, BinaryImage)> = images
                .iter()
                .zip(&fused)
                .map(|(i, m)| Ok((i.name.clone(), threshold_map(m, t)?)))
                .collect::<Result<_>>()?;
            let s: ScoreTriple = evaluate_dataset(&preds, &gts, eval)?.headline();
            rows.push(SweepRow {
                dataset: dataset.to_string(),
                n,
                t,
                precision: s.precision,
                recall: s.recall,
                f1: s.f1,
            });
        }
    }
    let best = rows
        .iter()
        .enumerate()
        .fold(0, |b, (i, r)| if r.f1 > rows[b].f1 { i } else { b });
    Ok(SweepResult { rows, best })
}

/// Runs inference once per pool member and test image, then sweeps.
pub fn sweep(
    pool: &EnsembleModel,
    test: &[(String, Raster, BinaryImage)],
    stride: Stride,
    n_grid: &[usize],
    t_grid: &[f64],
    eval: &EvalConfig,
) -> Result<SweepResult> {
    let max_n = n_grid.iter().copied().max().unwrap_or(0);
    if max_n > pool.len() {
        return Err(Error::Config(format!(
            "sweep asks for n={max_n} but the pool holds {} members",
            pool.len()
        )));
    }
    let images = test
        .iter()
        .map(|(name, image, gt)| {
            Ok(SweepImage {
                name: name.clone(),
                member_maps: pool.member_maps(image, stride, max_n.max(1))?,
                gt: gt.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    sweep_maps(&pool.dataset, &images, n_grid, t_grid, eval)
}

pub fn write_sweep_csv(result: &SweepResult, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["dataset", "n", "t", "precision", "recall", "f1"])?;
    for r in &result.rows {
        w.write_record([
            r.dataset.clone(),
            r.n.to_string(),
            format!("{}", r.t),
            format!("{:.6}", r.precision),
            format!("{:.6}", r.recall),
            format!("{:.6}", r.f1),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Default evaluation used by the sweep when none is given.
pub fn default_sweep_eval() -> EvalConfig {
    EvalConfig {
        tolerance_px: 2.0,
        aggregation: Aggregation::Macro,
    }
}
