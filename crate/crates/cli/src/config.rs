//! Run configuration: built-in defaults, then a flat `key = value` file, then
//! command-line flags. The resolved result is written next to the outputs and
//! can be fed back with `--config` to reproduce a run.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crackmap::dataset::DatasetKind;
use crackmap::metrics::{Aggregation, EvalConfig};
use crackmap::morphology::{Connectivity, FilterOrder, RefineConfig};
use crackmap::nn::TrainConfig;
use crackmap::patch::{SamplingPolicy, Stride};
use crackmap::{Error, Result};

/// Which mask `evaluate` scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMask {
    /// Fused map thresholded at `threshold`.
    Threshold,
    /// Thresholded mask after closing, opening and small-component removal.
    Refined,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: DatasetKind,
    pub root: Option<PathBuf>,
    pub split: Option<PathBuf>,
    pub split_seed: u64,
    pub train_count: Option<usize>,
    pub test_count: Option<usize>,
    pub members: usize,
    pub seed: u64,
    pub gradcheck_seed: u64,
    pub train: TrainConfig,
    pub policy: SamplingPolicy,
    pub threshold: f64,
    pub stride: Stride,
    pub refine: RefineConfig,
    pub eval: EvalConfig,
    pub eval_mask: EvalMask,
    pub predictions: Option<PathBuf>,
    pub calibration: f64,
    pub manifest: Option<PathBuf>,
    pub n_grid: Vec<usize>,
    pub t_grid: Vec<f64>,
    pub out: PathBuf,
}

impl RunConfig {
    pub fn defaults(dataset: DatasetKind) -> Self {
        Self {
            dataset,
            root: None,
            split: None,
            split_seed: 0,
            train_count: None,
            test_count: None,
            members: 3,
            seed: 0,
            gradcheck_seed: crackmap::nn::GradcheckOptions::default().seed,
            train: TrainConfig::default(),
            policy: SamplingPolicy::default(),
            threshold: dataset.default_fusion().threshold,
            stride: Stride::Dense,
            refine: RefineConfig::default(),
            eval: EvalConfig::default(),
            eval_mask: EvalMask::Threshold,
            predictions: None,
            calibration: 1.0,
            manifest: None,
            n_grid: crackmap::ensemble::DEFAULT_N_GRID.to_vec(),
            t_grid: crackmap::ensemble::DEFAULT_T_GRID.to_vec(),
            out: PathBuf::from("crackmap-out"),
        }
    }

    /// Merges `file` pairs and then `flags` over the defaults for the
    /// dataset kind named last among them.
    pub fn resolve(file: Option<&Path>, flags: &[(String, String)]) -> Result<Self> {
        let mut pairs = match file {
            Some(p) => parse_file(p)?,
            None => Vec::new(),
        };
        pairs.extend(flags.iter().cloned());
        let kind = match pairs.iter().rev().find(|(k, _)| k == "dataset") {
            Some((_, v)) => v.parse()?,
            None => DatasetKind::Custom,
        };
        let mut cfg = Self::defaults(kind);
        for (k, v) in &pairs {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "dataset" => self.dataset = v.parse()?,
            "root" => self.root = Some(v.into()),
            "split" => self.split = Some(v.into()),
            "split_seed" => self.split_seed = num(key, v)?,
            "train_count" => self.train_count = Some(num(key, v)?),
            "test_count" => self.test_count = Some(num(key, v)?),
            "members" => self.members = num(key, v)?,
            "seed" => self.seed = num(key, v)?,
            "gradcheck_seed" => self.gradcheck_seed = num(key, v)?,
            "learning_rate" => self.train.learning_rate = num(key, v)?,
            "momentum" => self.train.momentum = num(key, v)?,
            "batch_size" => self.train.batch_size = num(key, v)?,
            "epochs" => self.train.epochs = num(key, v)?,
            "l2_beta" => self.train.l2_beta = num(key, v)?,
            "dropout_rate" => self.train.dropout_rate = num(key, v)?,
            "max_positive" => self.policy.max_positive_per_image = num(key, v)?,
            "negative_ratio" => self.policy.negative_to_positive_ratio = num(key, v)?,
            "threshold" => self.threshold = num(key, v)?,
            "stride" => self.stride = Stride::from_step(num(key, v)?)?,
            "filter_order" => {
                self.refine.order = match v {
                    "close_open" => FilterOrder::CloseThenOpen,
                    "open_close" => FilterOrder::OpenThenClose,
                    _ => return Err(bad(key, v, "close_open or open_close")),
                }
            }
            "se_size" => self.refine.se_size = num(key, v)?,
            "connectivity" => self.refine.connectivity = Connectivity::from_number(num(key, v)?)?,
            "min_area" => self.refine.min_area = num(key, v)?,
            "tolerance" => self.eval.tolerance_px = num(key, v)?,
            "aggregation" => self.eval.aggregation = v.parse()?,
            "eval_mask" => {
                self.eval_mask = match v {
                    "threshold" => EvalMask::Threshold,
                    "refined" => EvalMask::Refined,
                    _ => return Err(bad(key, v, "threshold or refined")),
                }
            }
            "predictions" => self.predictions = Some(v.into()),
            "calibration" => self.calibration = num(key, v)?,
            "manifest" => self.manifest = Some(v.into()),
            "n_grid" => self.n_grid = list(key, v)?,
            "t_grid" => self.t_grid = list(key, v)?,
            "out" => self.out = v.into(),
            _ => return Err(Error::Config(format!("unknown configuration key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.policy.validate()?;
        self.eval.validate()?;
        crackmap::ensemble::FusionConfig {
            member_count: self.members,
            threshold: self.threshold,
        }
        .validate()?;
        if self.refine.se_size.is_multiple_of(2) {
            return Err(Error::Config(format!("se_size must be odd, got {}", self.refine.se_size)));
        }
        if !(self.calibration > 0.0 && self.calibration.is_finite()) {
            return Err(Error::Config(format!("calibration must be positive, got {}", self.calibration)));
        }
        if self.n_grid.is_empty() || self.t_grid.is_empty() || self.n_grid.contains(&0) {
            return Err(Error::Config("sweep grids must be non-empty with n >= 1".into()));
        }
        Ok(())
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.manifest
            .clone()
            .unwrap_or_else(|| self.out.join("models").join("ensemble.json"))
    }

    pub fn root(&self) -> Result<&Path> {
        self.root
            .as_deref()
            .ok_or_else(|| Error::Config("no dataset root given (--root or root = ...)".into()))
    }

    /// `(train, test)` counts: explicit, the corpus default, or 60/40.
    pub fn split_counts(&self, total: usize) -> (usize, usize) {
        match (self.train_count, self.test_count) {
            (Some(a), Some(b)) => (a, b),
            (Some(a), None) => (a, total.saturating_sub(a)),
            (None, Some(b)) => (total.saturating_sub(b), b),
            (None, None) => match self.dataset.default_split() {
                Some(ab) if ab.0 + ab.1 == total => ab,
                _ => {
                    let train = (total * 3).div_ceil(5);
                    (train, total - train)
                }
            },
        }
    }

    /// Every key in a fixed order, one `key = value` per line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        let path = |p: &Path| p.display().to_string();
        put("dataset", self.dataset.name().into());
        if let Some(p) = &self.root {
            put("root", path(p));
        }
        if let Some(p) = &self.split {
            put("split", path(p));
        }
        put("split_seed", self.split_seed.to_string());
        if let Some(n) = self.train_count {
            put("train_count", n.to_string());
        }
        if let Some(n) = self.test_count {
            put("test_count", n.to_string());
        }
        put("members", self.members.to_string());
        put("seed", self.seed.to_string());
        put("gradcheck_seed", self.gradcheck_seed.to_string());
        put("learning_rate", self.train.learning_rate.to_string());
        put("momentum", self.train.momentum.to_string());
        put("batch_size", self.train.batch_size.to_string());
        put("epochs", self.train.epochs.to_string());
        put("l2_beta", self.train.l2_beta.to_string());
        put("dropout_rate", self.train.dropout_rate.to_string());
        put("max_positive", self.policy.max_positive_per_image.to_string());
        put("negative_ratio", self.policy.negative_to_positive_ratio.to_string());
        put("threshold", self.threshold.to_string());
        put("stride", self.stride.step().to_string());
        put(
            "filter_order",
            match self.refine.order {
                FilterOrder::CloseThenOpen => "close_open",
                FilterOrder::OpenThenClose => "open_close",
            }
            .into(),
        );
        put("se_size", self.refine.se_size.to_string());
        put(
            "connectivity",
            match self.refine.connectivity {
                Connectivity::Four => "4",
                Connectivity::Eight => "8",
            }
            .into(),
        );
        put("min_area", self.refine.min_area.to_string());
        put("tolerance", self.eval.tolerance_px.to_string());
        put(
            "aggregation",
            match self.eval.aggregation {
                Aggregation::Macro => "macro",
                Aggregation::Micro => "micro",
            }
            .into(),
        );
        put(
            "eval_mask",
            match self.eval_mask {
                EvalMask::Threshold => "threshold",
                EvalMask::Refined => "refined",
            }
            .into(),
        );
        if let Some(p) = &self.predictions {
            put("predictions", path(p));
        }
        put("calibration", self.calibration.to_string());
        put("manifest", path(&self.manifest_path()));
        put("n_grid", join(&self.n_grid));
        put("t_grid", join(&self.t_grid));
        put("out", path(&self.out));
        s
    }

    pub fn write_resolved(&self) -> Result<PathBuf> {
        let p = self.out.join("config.resolved");
        std::fs::write(&p, self.to_text()).map_err(|e| Error::io(&p, e))?;
        Ok(p)
    }
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',').map(|x| num(key, x.trim())).collect()
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn bad(key: &str, v: &str, expected: &str) -> Error {
    Error::Config(format!("{key}: expected {expected}, got {v:?}"))
}

/// `key = value` lines; `#` starts a comment.
pub fn parse_text(text: &str, origin: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("{origin}:{}: expected key = value", i + 1)))?;
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(pairs)
}

pub fn parse_file(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_text(&text, &path.display().to_string())
}
