//! End-to-end acceptance checks. Each criterion prints one PASS, FAIL,
//! BLOCKED or DEVIATION line; the test fails if any criterion fails.
//!
//! The real-corpus criterion reads the CFD dataset from `CRACK_CFD_ROOT`
//! (`images/` + `masks/` layout). Without it the criterion is reported as
//! BLOCKED and a synthetic stand-in run is reported alongside.

// `!(x >= bound)` is deliberate: NaN must fail the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crackmap::dataset::{load_dataset, load_pair, make_split, DatasetKind};
use crackmap::ensemble::{
    fuse_probabilities, save_ensemble, sweep, sweep_maps, threshold_map, train_ensemble,
    write_sweep_csv, EnsembleModel, EnsembleTraining, FusionConfig, SweepImage, DEFAULT_N_GRID,
    DEFAULT_T_GRID,
};
use crackmap::imageio::{write_mask, write_probability_map, ProbabilitySidecar};
use crackmap::metrics::{
    compute_scores, evaluate_dataset, match_with_tolerance, write_eval_csv, write_eval_summary,
    ConfusionCounts, EvalConfig,
};
use crackmap::morphology::{
    closing, dilate, erode, label_components, opening, BinaryImage, Connectivity,
    StructuringElement,
};
use crackmap::nn::{
    run_gradcheck, GradcheckOptions, LayerSpec, Network, NetworkParams, NetworkSpec, TrainConfig,
};
use crackmap::patch::{normalize_image, ProbabilityMap, Raster, SamplingPolicy, Stride};
use crackmap::skeleton::{distance_transform, measure_all, thin};
use crackmap::synthetic::{synth_crack_image, SyntheticSpec};

use common::*;

enum Outcome {
    Pass(String),
    Fail(String),
    Blocked(String),
    /// Holds except where two requirements contradict each other; the detail
    /// says exactly what was and was not checked.
    Deviation(String),
}

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn timed(budget: Option<Duration>, f: impl FnOnce() -> Check) -> Outcome {
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f));
    let elapsed = start.elapsed();
    match result {
        Ok(Ok(detail)) => match budget {
            Some(b) if elapsed > b => Outcome::Fail(format!(
                "{detail}; took {:.1} s, budget {:.0} s",
                elapsed.as_secs_f64(),
                b.as_secs_f64()
            )),
            _ => Outcome::Pass(format!("{detail} ({:.2} s)", elapsed.as_secs_f64())),
        },
        Ok(Err(msg)) => Outcome::Fail(msg),
        Err(p) => Outcome::Fail(format!(
            "panicked: {}",
            p.downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default()
        )),
    }
}

fn gradient_fidelity() -> Check {
    let opts = GradcheckOptions::default();
    let report = run_gradcheck(&opts).map_err(|e| e.to_string())?;
    ensure!(
        report.elapsed < Duration::from_secs(10),
        "audit took {:.1} s",
        report.elapsed.as_secs_f64()
    );
    // Same audit at other seeds, reported for context only: at this step size
    // the central difference's own O(eps^2) error can exceed the bound.
    let others: Vec<String> = (0..5u64)
        .map(|seed| {
            run_gradcheck(&GradcheckOptions { seed, ..opts.clone() })
                .map(|r| format!("{seed}:{:.1e}", r.max_rel_error))
                .unwrap_or_else(|e| format!("{seed}:error {e}"))
        })
        .collect();
    ensure!(
        report.passed(1e-5),
        "seed {}: max relative error {:.3e} >= 1e-5",
        opts.seed,
        report.max_rel_error
    );
    Ok(format!(
        "seed {}: max rel error {:.2e} over {} params ({} at ReLU kinks skipped) in {:.2} s; \
         other seeds at eps={}: {}",
        opts.seed,
        report.max_rel_error,
        report.params_checked,
        report.kink_skipped,
        report.elapsed.as_secs_f64(),
        opts.epsilon,
        others.join(" ")
    ))
}

fn counts_for(p: f64, r: f64) -> ConfusionCounts {
    let tp = (p * 10_000.0).round() as usize;
    let matched = (r * 10_000.0).round() as usize;
    ConfusionCounts {
        tp,
        fp: 10_000 - tp,
        fn_: 10_000 - matched,
        matched_gt: matched,
    }
}

fn metric_arithmetic() -> Check {
    let mut parts = Vec::new();
    for (p, r, expected) in [(0.9552, 0.9521, 0.9533), (0.9302, 0.9166, 0.9238)] {
        let s = compute_scores(&counts_for(p, r));
        ensure!(
            (s.f1 - expected).abs() <= 0.0015,
            "P={p} R={r}: F1 {:.4} not within 0.0015 of {expected}",
            s.f1
        );
        parts.push(format!("F1({p},{r})={:.4}", s.f1));
    }
    Ok(parts.join(", "))
}

fn morphology_oracles() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let se = StructuringElement::default();
    let mut frame_losses = 0;
    for i in 0..200 {
        let density = rng.gen_range(0.2..0.7);
        let f = random_image(&mut rng, 32, 32, density);
        let d = dilate(&f, &se);
        let e = erode(&f, &se);
        ensure!(d == dilate_oracle(&f), "image {i}: dilation differs from oracle");
        ensure!(e == erode_oracle(&f), "image {i}: erosion differs from oracle");
        let c = closing(&f, &se);
        let o = opening(&f, &se);
        ensure!(c == erode_oracle(&dilate_oracle(&f)), "image {i}: closing differs");
        ensure!(o == dilate_oracle(&erode_oracle(&f)), "image {i}: opening differs");
        if !subset(&f, &c) {
            frame_losses += 1;
        }
        ensure!(interior_subset(&f, &c), "image {i}: closing not extensive on the interior");
        ensure!(closing(&c, &se) == c, "image {i}: closing not idempotent");
        ensure!(subset(&o, &f), "image {i}: opening not anti-extensive");
        ensure!(opening(&o, &se) == o, "image {i}: opening not idempotent");
    }
    Ok(format!(
        "200 random 32x32 images match oracles exactly; closing idempotent, opening \
         anti-extensive and idempotent on the full frame; closing extensive only away from \
         the 1-px border: with out-of-bounds as background it drops border foreground on \
         {frame_losses}/200 images"
    ))
}

/// `a` within `b`, ignoring the one-pixel frame.
fn interior_subset(a: &BinaryImage, b: &BinaryImage) -> bool {
    (1..a.height() - 1).all(|r| (1..a.width() - 1).all(|c| !a.get(r, c) || b.get(r, c)))
}

fn labeling_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(47);
    for i in 0..200 {
        let density = rng.gen_range(0.2..0.65);
        let f = random_image(&mut rng, 32, 32, density);
        for (conn, eight) in [(Connectivity::Four, false), (Connectivity::Eight, true)] {
            let labels = label_components(&f, conn);
            let (oracle, count) = flood_fill_oracle(&f, eight);
            ensure!(labels.count() == count, "image {i} {conn:?}: component count differs");
            ensure!(
                same_partition(labels.labels(), &oracle),
                "image {i} {conn:?}: partition differs from flood fill"
            );
        }
    }
    Ok("200 random images, 4- and 8-connectivity partitions equal flood fill".into())
}

fn distance_exactness() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(53);
    for i in 0..50 {
        let density = rng.gen_range(0.5..0.97);
        let f = random_image(&mut rng, 24, 24, density);
        let got = distance_transform(&f);
        ensure!(got.values() == edt_oracle(&f).as_slice(), "image {i}: distance map differs");
    }
    Ok("50 random 24x24 images equal the all-pairs oracle exactly".into())
}

fn skeleton_properties() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(59);
    for i in 0..200 {
        let f = random_blobs(&mut rng, 40, 40);
        let s = thin(&f);
        ensure!(subset(&s, &f), "blob {i}: skeleton leaves the foreground");
        ensure!(thin(&s) == s, "blob {i}: thinning not idempotent");
        let before = label_components(&f, Connectivity::Eight).count();
        let after = label_components(&s, Connectivity::Eight).count();
        ensure!(before == after, "blob {i}: {before} components became {after}");
    }

    let f = bar(70, 25, 10, 10, 50, 5);
    let m = measure_all(&label_components(&f, Connectivity::Eight), &f, 1.0).map_err(|e| e.to_string())?;
    ensure!(m.len() == 1, "bar produced {} measurements", m.len());
    let (bl, bw) = (m[0].length_px, m[0].mean_width_px);
    ensure!((45.0..=55.0).contains(&bl), "bar length {bl}");
    ensure!((4.25..=5.75).contains(&bw), "bar width {bw}");

    let mut cross = bar(60, 60, 28, 10, 40, 3);
    for r in 10..50 {
        for c in 28..31 {
            cross.set(r, c, true);
        }
    }
    let m = measure_all(&label_components(&cross, Connectivity::Eight), &cross, 1.0)
        .map_err(|e| e.to_string())?;
    ensure!(m.len() == 1, "cross produced {} measurements", m.len());
    let (cl, cw) = (m[0].length_px, m[0].mean_width_px);
    ensure!((70.0..=85.0).contains(&cl), "cross length {cl}");
    ensure!((2.5..=3.5).contains(&cw), "cross width {cw}");
    Ok(format!(
        "200 blobs ok; bar L={bl:.2} W={bw:.2}; cross L={cl:.2} W={cw:.2}"
    ))
}

fn random_map<R: Rng>(rng: &mut R, w: usize, h: usize) -> ProbabilityMap {
    ProbabilityMap::new(w, h, (0..w * h).map(|_| rng.gen_range(0.0..=1.0f32)).collect()).unwrap()
}

fn fusion_properties() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    for trial in 0..20 {
        let maps: Vec<ProbabilityMap> = (0..5).map(|_| random_map(&mut rng, 32, 24)).collect();
        let fused = fuse_probabilities(&maps).map_err(|e| e.to_string())?;
        for i in 0..32 * 24 {
            let mean = maps.iter().map(|m| m.probs()[i] as f64).sum::<f64>() / 5.0;
            ensure!(
                (fused.probs()[i] as f64 - mean).abs() <= 1e-7,
                "trial {trial}: pixel {i} differs from the mean"
            );
        }
        let mut shuffled = maps.clone();
        shuffled.reverse();
        shuffled.rotate_left(2);
        let other = fuse_probabilities(&shuffled).map_err(|e| e.to_string())?;
        ensure!(
            fused.probs().iter().zip(other.probs()).all(|(a, b)| (a - b).abs() <= 1e-7),
            "trial {trial}: fusion depends on member order"
        );
        let same = fuse_probabilities(&vec![maps[0].clone(); 3]).map_err(|e| e.to_string())?;
        ensure!(same.probs() == maps[0].probs(), "trial {trial}: identical maps changed");
        let mut prev: Option<BinaryImage> = None;
        for t in DEFAULT_T_GRID {
            let b = threshold_map(&fused, t).map_err(|e| e.to_string())?;
            if let Some(p) = &prev {
                ensure!(subset(&b, p), "trial {trial}: crack set at t={t} not nested");
            }
            prev = Some(b);
        }
    }
    Ok("mean within 1e-7, order-free, identity on copies, nested thresholds".into())
}

fn tolerance_monotonicity() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(67);
    for i in 0..50 {
        let gt = random_image(&mut rng, 32, 32, 0.08);
        let pred = random_image(&mut rng, 32, 32, 0.08);
        let mut last = (0.0, 0.0);
        for d in [0.0, 1.0, 2.0] {
            let s = compute_scores(&match_with_tolerance(&pred, &gt, d).map_err(|e| e.to_string())?);
            ensure!(
                s.precision >= last.0 && s.recall >= last.1,
                "pair {i}: scores fell when tolerance rose to {d}"
            );
            last = (s.precision, s.recall);
            let own = compute_scores(&match_with_tolerance(&gt, &gt, d).map_err(|e| e.to_string())?);
            ensure!(
                (own.precision, own.recall, own.f1) == (1.0, 1.0, 1.0),
                "pair {i}: pred = gt scored below 1 at d={d}"
            );
        }
    }
    Ok("50 random pairs monotone over d = 0, 1, 2; self-match scores 1".into())
}

struct DeskRun {
    macro_f1: f64,
    detail: String,
}

fn desk_run(
    train: &[(Raster, BinaryImage)],
    test: &[(String, Raster, BinaryImage)],
    config: &TrainConfig,
    policy: &SamplingPolicy,
    stride: Stride,
) -> Result<DeskRun, String> {
    let spec = NetworkSpec::default();
    let job = EnsembleTraining {
        spec: &spec,
        train_config: config,
        policy,
        members: 3,
        seed_base: 7,
        dataset: "cfd",
        fusion: FusionConfig::default(),
    };
    let (model, logs) = train_ensemble(train, &job).map_err(|e| e.to_string())?;
    let mut preds = Vec::new();
    let mut gts = Vec::new();
    for (name, image, gt) in test {
        let map = model.predict(image, stride, 3).map_err(|e| e.to_string())?;
        preds.push((name.clone(), threshold_map(&map, 0.6).map_err(|e| e.to_string())?));
        gts.push((name.clone(), gt.clone()));
    }
    let scores = evaluate_dataset(&preds, &gts, &EvalConfig::default()).map_err(|e| e.to_string())?;
    let patches: usize = logs.iter().map(|l| l.patches).sum();
    Ok(DeskRun {
        macro_f1: scores.macro_.f1,
        detail: format!(
            "macro P={:.3} R={:.3} F1={:.3}, micro F1={:.3}, {} patches over 3 members",
            scores.macro_.precision, scores.macro_.recall, scores.macro_.f1, scores.micro.f1, patches
        ),
    })
}

fn real_corpus(root: &Path) -> Check {
    let stride = match std::env::var("CRACK_CFD_STRIDE").ok().as_deref() {
        Some("1") => Stride::Dense,
        _ => Stride::Tiled,
    };
    let manifest = load_dataset(root, DatasetKind::Cfd).map_err(|e| e.to_string())?;
    let split = make_split(&manifest, 0, 72, 46).map_err(|e| e.to_string())?;
    let load = |stem: &String| {
        load_pair(manifest.entry(stem).map_err(|e| e.to_string())?).map_err(|e| e.to_string())
    };
    let train = split.train[..20]
        .iter()
        .map(|s| load(s).map(|p| (p.image, p.mask)))
        .collect::<Result<Vec<_>, _>>()?;
    let test = split.test[..10]
        .iter()
        .map(|s| load(s).map(|p| (p.stem, p.image, p.mask)))
        .collect::<Result<Vec<_>, _>>()?;
    let config = TrainConfig {
        epochs: 5,
        ..Default::default()
    };
    let run = desk_run(&train, &test, &config, &SamplingPolicy::default(), stride)?;
    ensure!(run.macro_f1 >= 0.70, "macro F1 {:.3} < 0.70 ({})", run.macro_f1, run.detail);
    Ok(run.detail)
}

/// Same protocol on small synthetic images. Not a substitute for the real
/// corpus; smaller batches keep the step count meaningful at this size.
fn synthetic_stand_in() -> Result<DeskRun, String> {
    let spec = SyntheticSpec {
        width: 160,
        height: 120,
        ..Default::default()
    };
    let make = |seed| {
        let (raw, mask) = synth_crack_image(&spec, seed);
        (normalize_image(&raw).unwrap(), mask)
    };
    let train: Vec<_> = (0..20).map(|i| make(1000 + i)).collect();
    let test: Vec<_> = (0..10)
        .map(|i| {
            let (img, m) = make(5000 + i);
            (format!("syn{i:02}"), img, m)
        })
        .collect();
    let config = TrainConfig {
        epochs: 5,
        batch_size: 32,
        ..Default::default()
    };
    let policy = SamplingPolicy {
        max_positive_per_image: 60,
        ..Default::default()
    };
    desk_run(&train, &test, &config, &policy, Stride::Tiled)
}

fn desk_scale() -> Outcome {
    match std::env::var_os("CRACK_CFD_ROOT") {
        Some(root) => timed(Some(Duration::from_secs(30 * 60)), || real_corpus(Path::new(&root))),
        None => {
            let start = Instant::now();
            match synthetic_stand_in() {
                Ok(run) if run.macro_f1 >= 0.70 => Outcome::Blocked(format!(
                    "CFD corpus not available (set CRACK_CFD_ROOT); synthetic stand-in: {} ({:.0} s)",
                    run.detail,
                    start.elapsed().as_secs_f64()
                )),
                Ok(run) => Outcome::Fail(format!(
                    "CFD corpus not available; synthetic stand-in fell below 0.70: {}",
                    run.detail
                )),
                Err(e) => Outcome::Fail(format!("synthetic stand-in failed: {e}")),
            }
        }
    }
}

fn tiny_pair(seed: u64) -> (Raster, BinaryImage, crackmap::patch::RawImage) {
    let spec = SyntheticSpec {
        width: 64,
        height: 48,
        ..Default::default()
    };
    let (raw, mask) = synth_crack_image(&spec, seed);
    (normalize_image(&raw).unwrap(), mask, raw)
}

fn train_and_save(dir: &Path, train: &[(Raster, BinaryImage)]) -> Result<EnsembleModel, String> {
    let spec = NetworkSpec::default();
    let config = TrainConfig {
        epochs: 1,
        batch_size: 32,
        ..Default::default()
    };
    let policy = SamplingPolicy {
        max_positive_per_image: 20,
        ..Default::default()
    };
    let job = EnsembleTraining {
        spec: &spec,
        train_config: &config,
        policy: &policy,
        members: 2,
        seed_base: 3,
        dataset: "synthetic",
        fusion: FusionConfig::default(),
    };
    let (model, _) = train_ensemble(train, &job).map_err(|e| e.to_string())?;
    save_ensemble(&model, &dir.join("models"), &dir.join("ensemble.json")).map_err(|e| e.to_string())?;
    Ok(model)
}

fn predict_and_evaluate(dir: &Path, model: &EnsembleModel, test: &[(Raster, BinaryImage, String)]) -> Result<(), String> {
    let mut preds = Vec::new();
    let mut gts = Vec::new();
    for (image, gt, name) in test {
        let map = model.predict(image, Stride::Tiled, 2).map_err(|e| e.to_string())?;
        let side = ProbabilitySidecar {
            source: name.clone(),
            model_ids: vec!["member_0".into(), "member_1".into()],
            stride: 5,
            threshold_hint: 0.6,
        };
        write_probability_map(&map, &dir.join(format!("{name}_prob.png")), &side).map_err(|e| e.to_string())?;
        let mask = threshold_map(&map, 0.6).map_err(|e| e.to_string())?;
        write_mask(&mask, &dir.join(format!("{name}_mask.png"))).map_err(|e| e.to_string())?;
        preds.push((name.clone(), mask));
        gts.push((name.clone(), gt.clone()));
    }
    let scores = evaluate_dataset(&preds, &gts, &EvalConfig::default()).map_err(|e| e.to_string())?;
    write_eval_csv(&scores, &dir.join("eval.csv")).map_err(|e| e.to_string())?;
    write_eval_summary(&scores, &dir.join("eval.json")).map_err(|e| e.to_string())
}

fn tree_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn determinism() -> Check {
    let train: Vec<_> = (0..2).map(tiny_pair).map(|(i, m, _)| (i, m)).collect();
    let test: Vec<_> = (10..12)
        .map(|s| {
            let (i, m, _) = tiny_pair(s);
            (i, m, format!("img{s}"))
        })
        .collect();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ma = train_and_save(a.path(), &train)?;
    let mb = train_and_save(b.path(), &train)?;
    let (ta, tb) = (tree_bytes(a.path()), tree_bytes(b.path()));
    ensure!(ta == tb, "model files differ between two seeded runs");
    let model_files = ta.len();
    let loaded = crackmap::ensemble::load_ensemble(&a.path().join("ensemble.json")).map_err(|e| e.to_string())?;
    for (x, y) in ma.members.iter().zip(&loaded.members) {
        ensure!(
            x.params().values().zip(y.params().values()).all(|(p, q)| p.to_bits() == q.to_bits()),
            "reloaded members differ from trained ones"
        );
    }
    let (pa, pb) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    predict_and_evaluate(pa.path(), &loaded, &test)?;
    predict_and_evaluate(pb.path(), &mb, &test)?;
    let (oa, ob) = (tree_bytes(pa.path()), tree_bytes(pb.path()));
    ensure!(oa == ob, "prediction/evaluation outputs differ");
    Ok(format!(
        "{model_files} training artifacts and {} prediction/evaluation files bit-identical",
        oa.len()
    ))
}

fn tiny_pool(k: usize) -> EnsembleModel {
    let spec = NetworkSpec {
        layers: vec![
            LayerSpec::conv(2),
            LayerSpec::Relu,
            LayerSpec::Flatten,
            LayerSpec::dense(25),
            LayerSpec::Sigmoid,
        ],
        ..NetworkSpec::default()
    };
    let members = (0..k as u64)
        .map(|s| Network::new(spec.clone(), NetworkParams::he_uniform(&spec, s).unwrap()).unwrap())
        .collect();
    EnsembleModel {
        members,
        seeds: (0..k as u64).collect(),
        dataset: "cfd".into(),
        train_config: TrainConfig::default(),
        fusion: FusionConfig::default(),
    }
}

fn sweep_shape() -> Check {
    let mut parts = Vec::new();
    let dir = tempfile::tempdir().unwrap();
    // Full path through inference with a seven-member pool of small networks.
    let pool = tiny_pool(7);
    let (image, gt, _) = tiny_pair(21);
    let test = vec![("img21".to_string(), image, gt)];
    let result = sweep(&pool, &test, Stride::Tiled, &DEFAULT_N_GRID, &DEFAULT_T_GRID, &EvalConfig::default())
        .map_err(|e| e.to_string())?;
    ensure!(result.rows.len() == 16, "inference sweep produced {} rows", result.rows.len());

    // Both corpora, from noisy copies of the ground truth.
    let mut rng = ChaCha8Rng::seed_from_u64(71);
    for (dataset, reference) in [("cfd", 0.6), ("aiglern", 0.4)] {
        let images: Vec<SweepImage> = (0..3)
            .map(|i| {
                let (_, gt, _) = tiny_pair(100 + i);
                let member_maps = (0..7)
                    .map(|_| {
                        let probs = gt
                            .data()
                            .iter()
                            .map(|&g| {
                                let base: f32 = if g { 0.7 } else { 0.2 };
                                (base + rng.gen_range(-0.3..0.3f32)).clamp(0.0, 1.0)
                            })
                            .collect();
                        ProbabilityMap::new(gt.width(), gt.height(), probs).unwrap()
                    })
                    .collect();
                SweepImage {
                    name: format!("{dataset}{i}"),
                    member_maps,
                    gt,
                }
            })
            .collect();
        let r = sweep_maps(dataset, &images, &DEFAULT_N_GRID, &DEFAULT_T_GRID, &EvalConfig::default())
            .map_err(|e| e.to_string())?;
        let path = dir.path().join(format!("{dataset}.csv"));
        write_sweep_csv(&r, &path).map_err(|e| e.to_string())?;
        let lines = std::fs::read_to_string(&path).unwrap().lines().count();
        ensure!(r.rows.len() == 16 && lines == 17, "{dataset}: {} rows, {lines} csv lines", r.rows.len());
        let best = r.best_row();
        parts.push(format!(
            "{dataset}: 16 rows, best n={} t={} F1={:.3} (reference n=3 t={reference})",
            best.n, best.t, best.f1
        ));
    }
    Ok(parts.join("; "))
}

#[test]
fn acceptance_criteria() {
    let secs = |s| Some(Duration::from_secs(s));
    type Criterion = (&'static str, Box<dyn FnOnce() -> Outcome>);
    let criteria: Vec<Criterion> = vec![
        ("gradient fidelity", Box::new(|| timed(None, gradient_fidelity))),
        ("metric arithmetic", Box::new(|| timed(None, metric_arithmetic))),
        (
            "morphology oracles",
            Box::new(move || match timed(secs(30), morphology_oracles) {
                Outcome::Pass(d) => Outcome::Deviation(d),
                other => other,
            }),
        ),
        ("labeling oracle", Box::new(move || timed(secs(30), labeling_oracle))),
        ("distance transform", Box::new(move || timed(secs(30), distance_exactness))),
        ("skeleton properties", Box::new(|| timed(None, skeleton_properties))),
        ("fusion properties", Box::new(|| timed(None, fusion_properties))),
        ("tolerance monotonicity", Box::new(|| timed(None, tolerance_monotonicity))),
        ("desk-scale end-to-end", Box::new(desk_scale)),
        ("determinism", Box::new(|| timed(None, determinism))),
        ("sweep shape", Box::new(|| timed(None, sweep_shape))),
    ];
    let mut failed = Vec::new();
    println!();
    for (i, (name, run)) in criteria.into_iter().enumerate() {
        let n = i + 1;
        let (tag, detail) = match run() {
            Outcome::Pass(d) => ("[PASS]", d),
            Outcome::Blocked(d) => ("[BLOCKED]", d),
            Outcome::Deviation(d) => ("[DEVIATION]", d),
            Outcome::Fail(d) => {
                failed.push(n);
                ("[FAIL]", d)
            }
        };
        let line = format!("{tag:<11} {n:>2} {name}: {detail}");
        println!("{line}");
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
