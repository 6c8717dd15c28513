//! Acceptance suite. Each criterion prints one PASS or FAIL line; the
//! process exits non-zero if any criterion fails.

mod common;

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use common::*;
use owr_core::clustering::{assign, KMeansParams, PatchSet};
use owr_core::embedding::{normalize_rows, SaliencyScore, SaliencyWeights};
use owr_core::inference::{
    evaluate_grids, load_model, model_from_bytes, model_to_bytes, predict, rank_superclasses,
    TrainedModel,
};
use owr_core::pipeline::{prepare_patches, select_k, train_model, TrainParams};
use owr_core::semantics::{build_semantic_matrix, ImageAssignment, NormalizationMode};
use owr_core::store::{
    read_feature_grid, write_feature_grid, ClassHierarchy, FeatureGrid, LabeledGrid,
};
use owr_core::synthetic::{planted_cluster_dataset, superclass_fixture, SuperclassFixture};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

/// Models trained anywhere in the suite, checked for column-stochasticity.
#[derive(Default)]
struct Corpus {
    models: Vec<(String, TrainedModel)>,
}

struct RandomInstance {
    model: TrainedModel,
    eval: Vec<LabeledGrid>,
}

fn random_grid(
    rng: &mut ChaCha8Rng,
    id: String,
    rows: usize,
    cols: usize,
    dim: usize,
) -> FeatureGrid {
    let data = (0..rows * cols * dim)
        .map(|_| {
            let v: f32 = rng.random_range(-1.0..1.0);
            // Keep every patch nonzero.
            if v == 0.0 {
                0.5
            } else {
                v
            }
        })
        .collect();
    FeatureGrid::new(id, rows, cols, dim, data).unwrap()
}

/// A small random problem: at most 200 training patches, dim <= 32,
/// K <= 16, G <= 8, with random ablation switches.
fn random_instance(seed: u64) -> RandomInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = 2 * rng.random_range(1..=16);
    let g = rng.random_range(1..=8usize);
    let s = rng.random_range(1..=g.min(4));
    let hierarchy = ClassHierarchy::new(
        (0..g as u32).map(|c| (c, format!("class{c}"), c % s as u32)),
        (0..s as u32).map(|i| (i, format!("super{i}"))),
    )
    .unwrap();
    let (rows, cols) = (rng.random_range(1..=4), rng.random_range(1..=4));
    let per_image = rows * cols;
    let images = (200 / per_image).clamp(2, 25);
    let known: Vec<LabeledGrid> = (0..images)
        .map(|i| LabeledGrid {
            grid: random_grid(&mut rng, format!("k{i}"), rows, cols, dim),
            class_id: rng.random_range(0..g as u32),
        })
        .collect();
    let eval: Vec<LabeledGrid> = (0..8)
        .map(|i| LabeledGrid {
            grid: random_grid(&mut rng, format!("u{i}"), rows, cols, dim),
            class_id: rng.random_range(0..g as u32),
        })
        .collect();
    let weights = [0.0, 0.3, 1.0, rng.random_range(0.0..1.0)];
    let positional_weight = weights[rng.random_range(0..4)];
    // At weight 1 every image contributes the same per_image points.
    let distinct = if positional_weight == 1.0 {
        per_image
    } else {
        images * per_image
    };
    let params = TrainParams {
        k: rng.random_range(1..=16usize.min(distinct)),
        kmeans: KMeansParams {
            batch_size_images: rng.random_range(1..=images),
            max_iters: 10,
            seed,
            tol: 1e-6,
        },
        positional_weight,
        saliency_train: rng.random(),
        saliency_eval: rng.random(),
        saliency_score: if rng.random() {
            SaliencyScore::Absolute
        } else {
            SaliencyScore::Signed
        },
        normalization: if rng.random() {
            NormalizationMode::PerCluster
        } else {
            NormalizationMode::DatasetWide
        },
    };
    let model = train_model(&known, &hierarchy, &params, |_| {}).unwrap();
    RandomInstance { model, eval }
}

fn oracle_equivalence(corpus: &mut Corpus) -> Outcome {
    let start = Instant::now();
    let instances = 60;
    let mut predictions = 0;
    for seed in 0..instances {
        let inst = random_instance(seed);
        let oracle = OracleModel::from_model(&inst.model);
        for img in &inst.eval {
            let got = predict(&img.grid, &inst.model).ok();
            let want = oracle_predict(&img.grid, &oracle);
            match (got, want) {
                (None, None) => {}
                (Some(got), Some(want)) => {
                    for (a, b) in got.class_scores.iter().zip(&want.class_scores) {
                        ensure!(
                            (a - b).abs() <= 1e-6,
                            "seed {seed}: class score {a} vs oracle {b}"
                        );
                    }
                    for (a, b) in got.superclass_scores.iter().zip(&want.superclass_scores) {
                        ensure!(
                            (a - b).abs() <= 1e-6,
                            "seed {seed}: superclass score {a} vs oracle {b}"
                        );
                    }
                    let ranking: Vec<usize> = rank_superclasses(&got.superclass_scores)
                        .into_iter()
                        .map(|s| s as usize)
                        .collect();
                    ensure!(
                        ranking == want.ranking,
                        "seed {seed}: ranking {ranking:?} vs {:?}",
                        want.ranking
                    );
                    predictions += 1;
                }
                (got, want) => {
                    return Err(format!(
                        "seed {seed}: defined {} vs oracle defined {}",
                        got.is_some(),
                        want.is_some()
                    ))
                }
            }
        }
        let ks = [1, 2, 3];
        let report = evaluate_grids(&inst.eval, &inst.model, &ks).map_err(|e| e.to_string())?;
        let (acc, n) = oracle_topk(&inst.eval, &oracle, &ks);
        ensure!(
            report.n_images == n,
            "seed {seed}: {} scored images vs oracle {n}",
            report.n_images
        );
        for (i, k) in ks.iter().enumerate() {
            let got = report.top(*k).unwrap();
            ensure!(
                (got - acc[i]).abs() <= 1e-6,
                "seed {seed}: top{k} {got} vs oracle {}",
                acc[i]
            );
        }
        corpus
            .models
            .push((format!("random instance {seed}"), inst.model));
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(10), "took {elapsed:.1?}");
    Ok(format!(
        "{instances} instances, {predictions} predictions, {elapsed:.2?}"
    ))
}

fn column_stochasticity(corpus: &Corpus) -> Outcome {
    let mut columns = 0;
    for (name, model) in &corpus.models {
        let m = model.semantics();
        let empty = m.empty_clusters();
        match m.mode() {
            NormalizationMode::PerCluster => {
                for k in 0..m.k() {
                    if empty.contains(&k) {
                        continue;
                    }
                    let sum: f64 = m.column(k).iter().map(|&v| v as f64).sum();
                    ensure!(
                        (sum - 1.0).abs() <= 1e-6,
                        "{name}: column {k} sums to {sum}"
                    );
                    columns += 1;
                }
            }
            NormalizationMode::DatasetWide => {
                let sum: f64 = m.values().iter().map(|&v| v as f64).sum();
                ensure!((sum - 1.0).abs() <= 1e-6, "{name}: matrix sums to {sum}");
            }
        }
    }
    ensure!(
        corpus.models.len() >= 50,
        "only {} models in corpus",
        corpus.models.len()
    );
    Ok(format!(
        "{} models, {columns} per-cluster columns",
        corpus.models.len()
    ))
}

fn parse_sweep_top1(csv: &str) -> Vec<f64> {
    csv.lines()
        .skip(1)
        .map(|l| l.split(',').nth(3).unwrap().parse().unwrap())
        .collect()
}

fn synthetic_recovery(tmp: &Path, corpus: &mut Corpus) -> Outcome {
    let start = Instant::now();
    let data = tmp.join("fixture");
    superclass_fixture(&SuperclassFixture::default())
        .write_to(&data)
        .unwrap();
    let run = tmp.join("recovery");
    owr_ok(&[
        "train",
        "--dataset-dir",
        path_str(&data),
        "--k",
        "24",
        "--out",
        path_str(&run),
    ]);
    owr_ok(&[
        "eval",
        "--model",
        path_str(&run.join("model.apmd")),
        "--dataset",
        path_str(&data),
    ]);
    let elapsed = start.elapsed();
    let rows = parse_eval_csv(&fs::read_to_string(run.join("eval_unknown.csv")).unwrap());
    for (scope, _, tops) in &rows {
        ensure!(
            tops.windows(2).all(|w| w[0] <= w[1]),
            "{scope}: top-k not monotone {tops:?}"
        );
    }
    let top1 = rows[0].2[0];
    corpus.models.push((
        "fixture k=24".into(),
        load_model(run.join("model.apmd")).unwrap(),
    ));
    ensure!(top1 >= 0.90, "top-1 {top1:.3} < 0.90");
    ensure!(elapsed < Duration::from_secs(60), "took {elapsed:.1?}");
    Ok(format!(
        "top-1 {top1:.3}, top-2 {:.3}, top-3 {:.3}, {elapsed:.2?}",
        rows[0].2[1], rows[0].2[2]
    ))
}

fn k_saturation(tmp: &Path, corpus: &mut Corpus) -> Outcome {
    let data = tmp.join("fixture");
    let out = tmp.join("saturation.csv");
    owr_ok(&[
        "sweep",
        "--dataset-dir",
        path_str(&data),
        "--set",
        "sweep_k=6,12,24,48,96",
        "--out",
        path_str(&out),
    ]);
    let csv = fs::read_to_string(&out).unwrap();
    ensure!(
        csv.lines().skip(1).all(|l| l.ends_with(",ok")),
        "a sweep point failed:\n{csv}"
    );
    let top1 = parse_sweep_top1(&csv);
    let peak = top1.iter().cloned().fold(f64::MIN, f64::max);
    ensure!(peak > top1[0], "no increase over K=6: {top1:?}");
    let last_delta = (top1[4] - top1[3]).abs();
    ensure!(
        last_delta < 0.01,
        "top-1 moved {last_delta:.4} between K=48 and K=96: {top1:?}"
    );
    for line in csv.lines().skip(1) {
        let tops: Vec<f64> = line
            .split(',')
            .skip(3)
            .take(3)
            .map(|v| v.parse().unwrap())
            .collect();
        ensure!(
            tops.windows(2).all(|w| w[0] <= w[1]),
            "top-k not monotone: {line}"
        );
    }
    // Dataset-wide normalization contributes to the stochasticity corpus.
    let ds = superclass_fixture(&SuperclassFixture::default());
    let params = TrainParams {
        k: 24,
        normalization: NormalizationMode::DatasetWide,
        ..Default::default()
    };
    corpus.models.push((
        "fixture dataset-wide".into(),
        train_model(&ds.known, &ds.hierarchy, &params, |_| {}).unwrap(),
    ));
    Ok(format!("top-1 over K=6,12,24,48,96: {top1:?}"))
}

fn positional_identity() -> Outcome {
    let ds = superclass_fixture(&SuperclassFixture {
        known_images_per_class: 15,
        unknown_images_per_class: 10,
        ..Default::default()
    });
    let params = TrainParams {
        k: 16,
        ..Default::default()
    };
    let model = train_model(&ds.known, &ds.hierarchy, &params, |_| {}).unwrap();
    ensure!(model.positional().weight() == 0.0, "weight not zero");

    // The path without positional information: L2-normalize and score.
    let normalized: Vec<FeatureGrid> = ds
        .known
        .iter()
        .map(|g| normalize_rows(&g.grid).unwrap())
        .collect();
    let patches = PatchSet::from_grids(&normalized).unwrap();
    let plain = owr_core::clustering::fit_kmeans(&patches, 16, &params.kmeans).unwrap();
    ensure!(
        plain.centers() == model.centroids().centers(),
        "centroids differ from plain path"
    );
    let s = model.semantics();
    for img in &ds.unknown {
        let pred = predict(&img.grid, &model).unwrap();
        let clusters = assign(normalize_rows(&img.grid).unwrap().data(), &plain).unwrap();
        let mut scores = vec![0f64; s.class_count()];
        for &k in &clusters {
            for (g, v) in scores.iter_mut().enumerate() {
                *v += 1.0 * s.value(g, k) as f64;
            }
        }
        scores.iter_mut().for_each(|v| *v /= clusters.len() as f64);
        ensure!(
            pred.class_scores
                .iter()
                .map(|v| v.to_bits())
                .eq(scores.iter().map(|v| v.to_bits())),
            "{}: weight-0 scores differ bitwise from the plain path",
            img.grid.image_id()
        );
    }

    // Weight 1 on a 3x3 grid: nine positions, nine clusters.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let hierarchy = ClassHierarchy::new(vec![(0, "a".into(), 0)], vec![(0, "s".into())]).unwrap();
    let train: Vec<LabeledGrid> = (0..10)
        .map(|i| LabeledGrid {
            grid: random_grid(&mut rng, format!("t{i}"), 3, 3, 16),
            class_id: 0,
        })
        .collect();
    let params = TrainParams {
        k: 9,
        positional_weight: 1.0,
        ..Default::default()
    };
    let model = train_model(&train, &hierarchy, &params, |_| {}).unwrap();
    let reference = model.assign_grid(&train[0].grid).unwrap();
    let distinct: std::collections::BTreeSet<usize> = reference.iter().copied().collect();
    ensure!(
        distinct.len() == 9,
        "positions share clusters: {reference:?}"
    );
    for i in 0..25 {
        let scale = rng.random_range(0.1..100.0f32);
        let mut g = random_grid(&mut rng, format!("p{i}"), 3, 3, 16);
        g = FeatureGrid::new("p", 3, 3, 16, g.data().iter().map(|v| v * scale).collect()).unwrap();
        ensure!(
            model.assign_grid(&g).unwrap() == reference,
            "assignment depends on content"
        );
    }
    Ok("weight 0 bitwise equal to plain path; weight 1 assignment fixed by position".into())
}

fn saliency_neutrality() -> Outcome {
    let ds = superclass_fixture(&SuperclassFixture {
        known_images_per_class: 15,
        ..Default::default()
    });
    let prepared = prepare_patches(&ds.known, 0.0, None).unwrap();
    let centroids =
        owr_core::clustering::fit_kmeans(&prepared.patches, 24, &KMeansParams::default()).unwrap();
    let labels = assign(prepared.patches.data(), &centroids).unwrap();
    for mode in [
        NormalizationMode::PerCluster,
        NormalizationMode::DatasetWide,
    ] {
        let build = |uniform: bool| {
            let images: Vec<ImageAssignment> = (0..prepared.patches.num_images())
                .map(|i| {
                    let r = prepared.patches.image_range(i);
                    ImageAssignment {
                        weights: uniform.then(|| SaliencyWeights::uniform(r.len())),
                        clusters: labels[r].to_vec(),
                        class_id: prepared.class_ids[i],
                    }
                })
                .collect();
            build_semantic_matrix(&images, 24, ds.hierarchy.class_count(), mode).unwrap()
        };
        let (plain, weighted) = (build(false), build(true));
        ensure!(
            plain
                .values()
                .iter()
                .map(|v| v.to_bits())
                .eq(weighted.values().iter().map(|v| v.to_bits())),
            "{mode}: values differ"
        );
        ensure!(plain.counts() == weighted.counts(), "{mode}: counts differ");
    }
    Ok("uniform weights reproduce the unweighted matrix exactly (both modes)".into())
}

fn determinism(tmp: &Path) -> Outcome {
    let data = tmp.join("fixture");
    let mut models = Vec::new();
    for (name, threads) in [("det_a", "4"), ("det_b", "1")] {
        let run = tmp.join(name);
        owr_ok(&[
            "--threads",
            threads,
            "train",
            "--dataset-dir",
            path_str(&data),
            "--k",
            "24",
            "--seed",
            "7",
            "--out",
            path_str(&run),
        ]);
        models.push(fs::read(run.join("model.apmd")).unwrap());
    }
    ensure!(models[0] == models[1], "model files differ between runs");

    let grid: Vec<usize> = (2..=10).collect();
    let mut hits = 0;
    let mut misses = Vec::new();
    for seed in 0..20 {
        let ds = planted_cluster_dataset(5, 200, 16, seed);
        let prepared = prepare_patches(&ds.known, 0.0, None).unwrap();
        let params = KMeansParams {
            seed,
            ..Default::default()
        };
        let (_, k) = select_k(&prepared, &grid, &params).unwrap();
        if k == 5 {
            hits += 1;
        } else {
            misses.push((seed, k));
        }
    }
    ensure!(
        hits >= 19,
        "elbow chose 5 on only {hits}/20 seeds, misses {misses:?}"
    );
    Ok(format!(
        "byte-identical models; elbow k=5 on {hits}/20 seeds"
    ))
}

fn format_round_trips(tmp: &Path) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for i in 0..100 {
        let (rows, cols) = (rng.random_range(1..=14), rng.random_range(1..=14));
        let dim = rng.random_range(1..=64);
        let data: Vec<f32> = (0..rows * cols * dim)
            .map(|_| f32::from_bits(rng.random::<u32>() & 0xBF7F_FFFF))
            .collect();
        let grid = FeatureGrid::new(format!("g{i}"), rows, cols, dim, data).unwrap();
        let path = tmp.join(format!("g{i}.apft"));
        write_feature_grid(&grid, &path).unwrap();
        let back = read_feature_grid(&path).unwrap();
        ensure!(
            back.data()
                .iter()
                .map(|v| v.to_bits())
                .eq(grid.data().iter().map(|v| v.to_bits())),
            "APFT payload changed"
        );
        ensure!(
            back.to_bytes().unwrap() == grid.to_bytes().unwrap(),
            "APFT bytes changed"
        );
    }
    for seed in 1000..1030 {
        let model = random_instance(seed).model;
        let bytes = model_to_bytes(&model).unwrap();
        let back = model_from_bytes(&bytes, Path::new("mem")).unwrap();
        ensure!(
            model_to_bytes(&back).unwrap() == bytes,
            "APMD bytes changed (seed {seed})"
        );
    }

    // Corrupted inputs and their exit codes.
    let data = tmp.join("corrupt_data");
    planted_cluster_dataset(3, 30, 8, 1)
        .write_to(&data)
        .unwrap();
    let run = tmp.join("corrupt_run");
    owr_ok(&[
        "train",
        "--dataset-dir",
        path_str(&data),
        "--k",
        "3",
        "--out",
        path_str(&run),
    ]);
    let model_bytes = fs::read(run.join("model.apmd")).unwrap();
    let feature = data.join("features/img0003.apft");
    let feature_bytes = fs::read(&feature).unwrap();
    let mut checks = Vec::new();

    fs::write(&feature, &feature_bytes[..feature_bytes.len() - 4]).unwrap();
    checks.push((
        "truncated APFT",
        owr(&["validate", path_str(&data)]).status.code(),
        2,
    ));
    let mut bad = feature_bytes.clone();
    bad[0] = b'Z';
    fs::write(&feature, &bad).unwrap();
    checks.push((
        "bad APFT magic",
        owr(&["validate", path_str(&data)]).status.code(),
        2,
    ));
    fs::write(&feature, &feature_bytes).unwrap();

    let model_path = tmp.join("corrupt.apmd");
    let eval = |bytes: &[u8]| {
        fs::write(&model_path, bytes).unwrap();
        owr(&[
            "eval",
            "--model",
            path_str(&model_path),
            "--dataset",
            path_str(&data),
        ])
        .status
        .code()
    };
    checks.push((
        "truncated APMD",
        eval(&model_bytes[..model_bytes.len() / 2]),
        2,
    ));
    let mut flipped = model_bytes.clone();
    flipped[30] ^= 0x10;
    checks.push(("bit-flipped APMD", eval(&flipped), 2));
    let mut version = model_bytes.clone();
    version[4] = 2;
    checks.push(("future APMD version", eval(&version), 2));
    checks.push(("intact APMD", eval(&model_bytes), 0));
    checks.push((
        "known-split eval",
        owr(&[
            "eval",
            "--model",
            path_str(&model_path),
            "--dataset",
            path_str(&data),
            "--split",
            "known",
        ])
        .status
        .code(),
        3,
    ));
    let manifest = data.join("manifest.tsv");
    let mut text = fs::read_to_string(&manifest).unwrap();
    text.push_str("leak\tfeatures/img0000.apft\t0\tunknown\n");
    fs::write(&manifest, text).unwrap();
    checks.push((
        "split contamination",
        owr(&["validate", path_str(&data)]).status.code(),
        3,
    ));

    for (name, got, want) in &checks {
        ensure!(*got == Some(*want), "{name}: exit {got:?}, expected {want}");
    }
    Ok(format!(
        "100 APFT + 30 APMD round trips, {} exit-code checks",
        checks.len()
    ))
}

fn run(name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into());
        Err(format!("panicked: {msg}"))
    });
    match result {
        Ok(detail) => {
            println!("PASS {name}: {detail}");
            true
        }
        Err(why) => {
            println!("FAIL {name}: {why}");
            false
        }
    }
}

fn main() {
    // Panics inside a criterion are reported on its FAIL line.
    std::panic::set_hook(Box::new(|_| {}));
    let tmp = tempfile::tempdir().unwrap();
    let tmp = tmp.path();
    let mut corpus = Corpus::default();
    let results = [
        run("oracle_equivalence", || oracle_equivalence(&mut corpus)),
        run("synthetic_recovery", || {
            synthetic_recovery(tmp, &mut corpus)
        }),
        run("k_saturation", || k_saturation(tmp, &mut corpus)),
        run("column_stochasticity", || column_stochasticity(&corpus)),
        run("positional_identity", positional_identity),
        run("saliency_neutrality", saliency_neutrality),
        run("determinism", || determinism(tmp)),
        run("format_round_trips", || format_round_trips(tmp)),
    ];
    let passed = results.iter().filter(|r| **r).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
