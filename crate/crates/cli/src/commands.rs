//! One function per subcommand. Each returns the library error type; `main`
//! maps error classes to exit codes.

use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;

use crackmap::dataset::{binarize_mask, load_dataset, load_pair, make_split, DatasetManifest, LoadedPair, SplitSpec};
use crackmap::ensemble::{
    load_ensemble, save_ensemble, sweep, threshold_map, train_ensemble, write_sweep_csv, EnsembleModel,
    EnsembleTraining, FusionConfig,
};
use crackmap::imageio::{
    prediction_overlay, read_raw_image, skeleton_overlay, write_labels, write_mask, write_probability_map,
    write_rgb, ProbabilitySidecar,
};
use crackmap::metrics::{evaluate_dataset, write_eval_csv, write_eval_summary};
use crackmap::morphology::{label_components, refine, BinaryImage};
use crackmap::nn::{run_gradcheck, GradcheckOptions, NetworkSpec};
use crackmap::patch::{normalize_image, RawImage};
use crackmap::skeleton::{measure_with_skeleton, skeletonize, write_measurements_csv, write_measurements_json};
use crackmap::training::write_loss_csv;
use crackmap::{Error, Result};

use crate::config::{EvalMask, RunConfig};

pub const OUT_DIRS: [&str; 5] = ["models", "maps", "masks", "overlays", "reports"];

/// Creates the output tree and records the resolved configuration.
pub fn prepare_out(cfg: &RunConfig) -> Result<()> {
    for d in OUT_DIRS {
        let p = cfg.out.join(d);
        std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    cfg.write_resolved()?;
    Ok(())
}

fn reports(cfg: &RunConfig, name: &str) -> PathBuf {
    cfg.out.join("reports").join(name)
}

fn stem_of(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn resolve_split(cfg: &RunConfig, manifest: &DatasetManifest) -> Result<SplitSpec> {
    let split = match &cfg.split {
        Some(p) => SplitSpec::load(p)?,
        None => {
            let (train, test) = cfg.split_counts(manifest.len());
            make_split(manifest, cfg.split_seed, train, test)?
        }
    };
    for stem in split.train.iter().chain(&split.test) {
        manifest.entry(stem)?;
    }
    Ok(split)
}

fn load_pairs(manifest: &DatasetManifest, stems: &[String]) -> Result<Vec<LoadedPair>> {
    stems.par_iter().map(|s| load_pair(manifest.entry(s)?)).collect()
}

/// Dataset manifest and split, both also written under `reports/`.
fn dataset_and_split(cfg: &RunConfig) -> Result<(DatasetManifest, SplitSpec)> {
    let manifest = load_dataset(cfg.root()?, cfg.dataset)?;
    manifest.save(&reports(cfg, "dataset_manifest.json"))?;
    let split = resolve_split(cfg, &manifest)?;
    split.save(&reports(cfg, "split.json"))?;
    info!(
        "{}: {} images, {} train / {} test",
        cfg.dataset.name(),
        manifest.len(),
        split.train.len(),
        split.test.len()
    );
    Ok((manifest, split))
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    let (manifest, split) = dataset_and_split(cfg)?;
    let pairs: Vec<_> = load_pairs(&manifest, &split.train)?
        .into_iter()
        .map(|p| (p.image, p.mask))
        .collect();
    let spec = NetworkSpec::default();
    let job = EnsembleTraining {
        spec: &spec,
        train_config: &cfg.train,
        policy: &cfg.policy,
        members: cfg.members,
        seed_base: cfg.seed,
        dataset: cfg.dataset.name(),
        fusion: FusionConfig {
            member_count: cfg.members,
            threshold: cfg.threshold,
        },
    };
    let (model, logs) = train_ensemble(&pairs, &job)?;
    let manifest_path = cfg.manifest_path();
    let models_dir = manifest_path.parent().unwrap_or(Path::new(".")).to_path_buf();
    save_ensemble(&model, &models_dir, &manifest_path)?;
    let loss: Vec<_> = logs.iter().map(|l| (l.index, l.epochs.clone())).collect();
    write_loss_csv(&loss, &reports(cfg, "train_loss.csv"))?;
    for l in &logs {
        if let Some(last) = l.epochs.last() {
            info!("member {} (seed {}): {} patches, final loss {:.5}", l.index, l.seed, l.patches, last.loss);
        }
    }
    println!("trained {} members; manifest {}", model.len(), manifest_path.display());
    Ok(())
}

/// Prediction artifacts for one image.
struct Predicted {
    stem: String,
    thresholded: BinaryImage,
    refined: BinaryImage,
}

fn predict_one(cfg: &RunConfig, model: &EnsembleModel, path: &Path) -> Result<Predicted> {
    let raw = read_raw_image(path)?;
    let image = normalize_image(&raw)?;
    let map = model.predict(&image, cfg.stride, cfg.members)?;
    let stem = stem_of(path);
    let sidecar = ProbabilitySidecar {
        source: path.display().to_string(),
        model_ids: (0..cfg.members).map(|i| format!("member_{i}")).collect(),
        stride: cfg.stride.step(),
        threshold_hint: cfg.threshold,
    };
    write_probability_map(&map, &cfg.out.join("maps").join(format!("{stem}.png")), &sidecar)?;
    let thresholded = threshold_map(&map, cfg.threshold)?;
    let (refined, _) = refine(&thresholded, &cfg.refine)?;
    let masks = cfg.out.join("masks");
    write_mask(&thresholded, &masks.join(format!("{stem}.png")))?;
    write_mask(&refined, &masks.join(format!("{stem}_refined.png")))?;
    let overlay = prediction_overlay(&raw, &refined)?;
    write_rgb(&overlay, &cfg.out.join("overlays").join(format!("{stem}.png")))?;
    Ok(Predicted {
        stem,
        thresholded,
        refined,
    })
}

fn load_model(cfg: &RunConfig) -> Result<EnsembleModel> {
    let model = load_ensemble(&cfg.manifest_path())?;
    if cfg.members > model.len() {
        return Err(Error::Config(format!(
            "{} members requested but the ensemble holds {}",
            cfg.members,
            model.len()
        )));
    }
    Ok(model)
}

fn is_image(p: &Path) -> bool {
    matches!(
        p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("png" | "jpg" | "jpeg")
    )
}

/// Files as given; directories contribute their image files. Sorted by name.
pub fn expand_inputs(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for p in inputs {
        if p.is_dir() {
            for e in std::fs::read_dir(p).map_err(|e| Error::io(p, e))? {
                let f = e.map_err(|e| Error::io(p, e))?.path();
                if f.is_file() && is_image(&f) {
                    files.push(f);
                }
            }
        } else {
            files.push(p.clone());
        }
    }
    files.sort_by(|a, b| a.file_name().cmp(&b.file_name()).then_with(|| a.cmp(b)));
    Ok(files)
}

/// Per-file outcomes, reported after the whole batch ran.
pub struct BatchOutcome {
    pub done: usize,
    pub failures: Vec<(PathBuf, Error)>,
}

impl BatchOutcome {
    fn report(&self, verb: &str) {
        let total = self.done + self.failures.len();
        println!("{verb} {} of {total} file(s)", self.done);
        if !self.failures.is_empty() {
            eprintln!("{} failure(s):", self.failures.len());
            for (p, e) in &self.failures {
                eprintln!("  {}: {e}", p.display());
            }
        }
    }
}

fn run_batch<T: Send>(files: &[PathBuf], work: impl Fn(&Path) -> Result<T> + Sync) -> (Vec<T>, BatchOutcome) {
    let results: Vec<_> = files.par_iter().map(|f| work(f)).collect();
    let mut ok = Vec::new();
    let mut failures = Vec::new();
    for (f, r) in files.iter().zip(results) {
        match r {
            Ok(v) => ok.push(v),
            Err(e) => failures.push((f.clone(), e)),
        }
    }
    let done = ok.len();
    (ok, BatchOutcome { done, failures })
}

pub fn predict(cfg: &RunConfig, inputs: &[PathBuf]) -> Result<BatchOutcome> {
    let model = load_model(cfg)?;
    let files = if inputs.is_empty() {
        let (manifest, split) = dataset_and_split(cfg)?;
        split
            .test
            .iter()
            .map(|s| manifest.entry(s).map(|e| e.image.clone()))
            .collect::<Result<Vec<_>>>()?
    } else {
        expand_inputs(inputs)?
    };
    if files.is_empty() {
        return Err(Error::Config("no input images".into()));
    }
    let (_, outcome) = run_batch(&files, |f| predict_one(cfg, &model, f));
    outcome.report("predicted");
    Ok(outcome)
}

pub fn evaluate(cfg: &RunConfig) -> Result<()> {
    let (manifest, split) = dataset_and_split(cfg)?;
    let gts = load_pairs(&manifest, &split.test)?;
    let preds: Vec<(String, BinaryImage)> = match &cfg.predictions {
        Some(dir) => gts
            .par_iter()
            .map(|p| {
                let path = dir.join(format!("{}.png", p.stem));
                if !path.is_file() {
                    return Err(Error::Dataset(format!("missing prediction {}", path.display())));
                }
                Ok((p.stem.clone(), binarize_mask(&read_raw_image(&path)?)?.0))
            })
            .collect::<Result<_>>()?,
        None => {
            let model = load_model(cfg)?;
            split
                .test
                .par_iter()
                .map(|stem| {
                    let pred = predict_one(cfg, &model, &manifest.entry(stem)?.image)?;
                    let mask = match cfg.eval_mask {
                        EvalMask::Threshold => pred.thresholded,
                        EvalMask::Refined => pred.refined,
                    };
                    Ok((pred.stem, mask))
                })
                .collect::<Result<_>>()?
        }
    };
    let gt_pairs: Vec<_> = gts.into_iter().map(|p| (p.stem, p.mask)).collect();
    let scores = evaluate_dataset(&preds, &gt_pairs, &cfg.eval)?;
    write_eval_csv(&scores, &reports(cfg, "eval.csv"))?;
    write_eval_summary(&scores, &reports(cfg, "eval.json"))?;
    let h = scores.headline();
    println!(
        "{} images, tolerance {} px: precision {:.4} recall {:.4} F1 {:.4} ({:?}); micro F1 {:.4}",
        scores.per_image.len(),
        cfg.eval.tolerance_px,
        h.precision,
        h.recall,
        h.f1,
        cfg.eval.aggregation,
        scores.micro.f1
    );
    Ok(())
}

/// Measures masks as given, or images after prediction and refinement.
pub fn measure(cfg: &RunConfig, inputs: &[PathBuf], from_images: bool) -> Result<BatchOutcome> {
    let files = expand_inputs(inputs)?;
    if files.is_empty() {
        return Err(Error::Config("no input files".into()));
    }
    let model = if from_images { Some(load_model(cfg)?) } else { None };
    let (_, outcome) = run_batch(&files, |path| {
        let (mask, labels, backdrop) = match &model {
            Some(m) => {
                let pred = predict_one(cfg, m, path)?;
                let (mask, labels) = refine(&pred.thresholded, &cfg.refine)?;
                (mask, labels, read_raw_image(path)?)
            }
            None => {
                let raw = read_raw_image(path)?;
                let (mask, _) = binarize_mask(&raw)?;
                let labels = label_components(&mask, cfg.refine.connectivity);
                (mask, labels, mask_backdrop(&raw))
            }
        };
        let stem = stem_of(path);
        let skeleton = skeletonize(&mask);
        let records = measure_with_skeleton(&labels, &skeleton, cfg.calibration)?;
        if records.is_empty() {
            warn!("{}: no crack pixels; writing an empty report", path.display());
        }
        write_measurements_json(&records, &reports(cfg, &format!("{stem}_measurements.json")))?;
        write_measurements_csv(&records, &reports(cfg, &format!("{stem}_measurements.csv")))?;
        write_labels(&labels, &cfg.out.join("masks").join(format!("{stem}_labels.png")))?;
        let overlay = skeleton_overlay(&backdrop, &skeleton)?;
        write_rgb(&overlay, &cfg.out.join("overlays").join(format!("{stem}_skeleton.png")))?;
        println!("{}: {} crack(s)", path.display(), records.len());
        for r in &records {
            println!(
                "  #{} area {} px, length {:.2} ({:.2} px), mean width {:.3} ({:.3} px){}",
                r.id,
                r.area_px,
                r.length_units,
                r.length_px,
                r.width_units,
                r.mean_width_px,
                if r.degenerate { ", degenerate" } else { "" }
            );
        }
        Ok(())
    });
    outcome.report("measured");
    Ok(outcome)
}

/// Dimmed copy of the mask, so the skeleton stands out.
fn mask_backdrop(raw: &RawImage) -> RawImage {
    RawImage {
        data: raw.data.iter().map(|&v| v / 3).collect(),
        ..raw.clone()
    }
}

pub fn sweep_cmd(cfg: &RunConfig) -> Result<()> {
    let pool = load_ensemble(&cfg.manifest_path())?;
    let (manifest, split) = dataset_and_split(cfg)?;
    let test: Vec<_> = load_pairs(&manifest, &split.test)?
        .into_iter()
        .map(|p| (p.stem, p.image, p.mask))
        .collect();
    let mut result = sweep(&pool, &test, cfg.stride, &cfg.n_grid, &cfg.t_grid, &cfg.eval)?;
    for row in &mut result.rows {
        row.dataset = cfg.dataset.name().to_string();
    }
    write_sweep_csv(&result, &reports(cfg, "sweep.csv"))?;
    let best = result.best_row();
    let reference = match cfg.dataset {
        crackmap::dataset::DatasetKind::Custom => None,
        k => Some(k.default_fusion()),
    };
    let summary = serde_json::json!({
        "best": best,
        "rows": result.rows.len(),
        "reference": reference.map(|f| serde_json::json!({"n": f.member_count, "t": f.threshold})),
    });
    let p = reports(cfg, "sweep_best.json");
    std::fs::write(&p, serde_json::to_string_pretty(&summary)?).map_err(|e| Error::io(&p, e))?;
    println!("dataset,n,t,precision,recall,f1");
    for r in &result.rows {
        println!("{},{},{},{:.4},{:.4},{:.4}", r.dataset, r.n, r.t, r.precision, r.recall, r.f1);
    }
    print!("best: n={} t={} F1={:.4}", best.n, best.t, best.f1);
    match reference {
        Some(f) => println!(" (reference n={} t={})", f.member_count, f.threshold),
        None => println!(),
    }
    Ok(())
}

/// Runs the finite-difference audit; `Ok(false)` when it does not pass.
pub fn gradcheck(cfg: &RunConfig, corrupt: bool) -> Result<bool> {
    let opts = GradcheckOptions {
        seed: cfg.gradcheck_seed,
        corrupt_gradient: corrupt,
        ..Default::default()
    };
    let report = run_gradcheck(&opts)?;
    let tolerance = 1e-5;
    let passed = report.passed(tolerance);
    let summary = serde_json::json!({
        "seed": cfg.gradcheck_seed,
        "params_checked": report.params_checked,
        "kink_skipped": report.kink_skipped,
        "max_rel_error": report.max_rel_error,
        "worst_index": report.worst_index,
        "tolerance": tolerance,
        "passed": passed,
    });
    let p = reports(cfg, "gradcheck.json");
    std::fs::write(&p, serde_json::to_string_pretty(&summary)?).map_err(|e| Error::io(&p, e))?;
    println!(
        "gradcheck seed {}: max relative error {:e} over {} parameters ({} skipped at ReLU kinks): {}",
        cfg.gradcheck_seed,
        report.max_rel_error,
        report.params_checked,
        report.kink_skipped,
        if passed { "PASS" } else { "FAIL" }
    );
    Ok(passed)
}
