use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use log::info;
use owr_core::clustering::ElbowCurve;
use owr_core::inference::{
    evaluate, evaluate_grids, export_assignments, load_model, save_model, TrainedModel,
};
use owr_core::pipeline::{
    fit_clusters, learn_semantics, prepare_patches, select_k, PreparedPatches,
};
use owr_core::semantics::{cluster_purity_report, NormalizationMode};
use owr_core::store::{validate_dataset, Dataset, LabeledGrid, Split};
use owr_core::Error;

use crate::config::{KChoice, RunConfig};

pub const MODEL_FILE: &str = "model.apmd";
pub const CONFIG_FILE: &str = "config.txt";
pub const TRAIN_LOG: &str = "train.log";
pub const ELBOW_CSV: &str = "elbow.csv";
pub const PURITY_CSV: &str = "purity.csv";

/// Line log mirrored to a run-directory file. Contents depend only on the
/// inputs, never on timing.
struct RunLog {
    out: BufWriter<File>,
    path: PathBuf,
}

impl RunLog {
    fn create(path: PathBuf) -> Result<Self> {
        let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        Ok(Self {
            out: BufWriter::new(file),
            path,
        })
    }

    fn line(&mut self, text: impl AsRef<str>) -> Result<()> {
        info!("{}", text.as_ref());
        writeln!(self.out, "{}", text.as_ref())
            .with_context(|| format!("writing {}", self.path.display()))
    }

    fn finish(mut self) -> Result<()> {
        self.out
            .flush()
            .with_context(|| format!("writing {}", self.path.display()))
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn prepare_run_dir(dir: &Path, cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating run directory {}", dir.display()))?;
    write_file(&dir.join(CONFIG_FILE), cfg.to_text())
}

pub fn validate(dataset_dir: &Path) -> ExitCode {
    let report = validate_dataset(dataset_dir);
    for issue in &report.issues {
        match &issue.file {
            Some(file) => println!("{}: {}", file.display(), issue.error),
            None => println!("{}", issue.error),
        }
    }
    println!(
        "{} feature files checked, {} errors",
        report.files_checked,
        report.issues.len()
    );
    report
        .worst_category()
        .map_or(ExitCode::SUCCESS, crate::exit_code)
}

fn load_known(cfg: &RunConfig) -> Result<(Dataset, Vec<LabeledGrid>)> {
    let dataset = Dataset::open(cfg.dataset_dir()?).context("ingest")?;
    let known = dataset.load_split(Split::Known).context("ingest")?;
    Ok((dataset, known))
}

fn prepare(cfg: &RunConfig, known: &[LabeledGrid]) -> Result<PreparedPatches> {
    let saliency = cfg.saliency_train.then_some(cfg.saliency_score);
    prepare_patches(known, cfg.positional_weight, saliency).context("ingest")
}

fn run_elbow(
    cfg: &RunConfig,
    prepared: &PreparedPatches,
    dir: &Path,
    log: &mut RunLog,
) -> Result<usize> {
    let (curve, k) =
        select_k(prepared, &cfg.k_grid, &cfg.kmeans()).context("cluster: elbow selection")?;
    report_curve(&curve, log)?;
    write_file(&dir.join(ELBOW_CSV), curve.to_csv())?;
    log.line(format!("chosen_k={k}"))?;
    Ok(k)
}

fn report_curve(curve: &ElbowCurve, log: &mut RunLog) -> Result<()> {
    for (k, sse) in curve.points() {
        log.line(format!("elbow k={k} sse={sse:.6}"))?;
    }
    for (a, b) in curve.monotonicity_violations() {
        log.line(format!("warning: sse rises from k={a} to k={b}"))?;
    }
    Ok(())
}

fn train_prepared(
    cfg: &RunConfig,
    dataset: &Dataset,
    prepared: &PreparedPatches,
    k: usize,
    log: &mut RunLog,
) -> Result<TrainedModel> {
    let mut epoch_lines = Vec::new();
    let centroids = fit_clusters(prepared, k, &cfg.kmeans(), |s| {
        epoch_lines.push(format!(
            "epoch {} sse={:.6} max_shift={:.6e}",
            s.epoch, s.sse, s.max_shift
        ))
    })
    .with_context(|| format!("cluster: k={k}"))?;
    for line in epoch_lines {
        log.line(line)?;
    }
    log.line(format!(
        "clustering finished after {} epochs, sse={:.6}",
        centroids.iterations_run(),
        centroids.training_sse()
    ))?;
    let hierarchy = &dataset.hierarchy;
    let semantics = learn_semantics(
        prepared,
        &centroids,
        hierarchy.class_count(),
        cfg.normalization,
    )
    .context("semantics")?;
    let empty = semantics.empty_clusters();
    if !empty.is_empty() {
        log.line(format!(
            "warning: {} empty clusters: {empty:?}",
            empty.len()
        ))?;
    }
    TrainedModel::new(
        centroids,
        semantics,
        prepared.positional,
        cfg.saliency_train,
        cfg.saliency_eval,
        cfg.saliency_score,
        hierarchy.clone(),
    )
    .context("semantics")
}

pub fn train(cfg: &RunConfig, dir: &Path) -> Result<()> {
    prepare_run_dir(dir, cfg)?;
    let mut log = RunLog::create(dir.join(TRAIN_LOG))?;
    let (dataset, known) = load_known(cfg)?;
    log.line(format!(
        "ingest: {} known images, {} classes",
        known.len(),
        dataset.manifest.classes_in(Split::Known).len()
    ))?;
    let prepared = prepare(cfg, &known)?;
    log.line(format!(
        "ingest: {} patches of dim {}",
        prepared.patches.len(),
        prepared.patches.dim()
    ))?;
    let k = match cfg.k {
        KChoice::Fixed(k) => k,
        KChoice::Elbow => run_elbow(cfg, &prepared, dir, &mut log)?,
    };
    let model = train_prepared(cfg, &dataset, &prepared, k, &mut log)?;
    let purity = cluster_purity_report(model.semantics(), model.hierarchy());
    write_file(&dir.join(PURITY_CSV), purity.to_csv(model.hierarchy()))?;
    save_model(&model, dir.join(MODEL_FILE))?;
    log.line(format!("model written to {MODEL_FILE} (k={k})"))?;
    log.finish()?;
    println!("trained k={k}, model at {}", dir.join(MODEL_FILE).display());
    Ok(())
}

pub fn elbow(cfg: &RunConfig, dir: &Path) -> Result<()> {
    if cfg.k_grid.is_empty() {
        return Err(Error::Config("elbow needs a k_grid (and k = elbow)".into()).into());
    }
    prepare_run_dir(dir, cfg)?;
    let mut log = RunLog::create(dir.join("elbow.log"))?;
    let (_, known) = load_known(cfg)?;
    let prepared = prepare(cfg, &known)?;
    let k = run_elbow(cfg, &prepared, dir, &mut log)?;
    log.finish()?;
    println!("chosen_k={k}");
    Ok(())
}

fn check_model_matches(model: &TrainedModel, dataset: &Dataset) -> Result<()> {
    if model.hierarchy() != &dataset.hierarchy {
        return Err(Error::Reference(
            "the dataset's class hierarchy differs from the one the model was trained with".into(),
        )
        .into());
    }
    Ok(())
}

pub fn eval(
    model_path: &Path,
    dataset_dir: &Path,
    split: Split,
    allow_known: bool,
    ks: &[usize],
    out: Option<&Path>,
) -> Result<()> {
    let model = load_model(model_path)?;
    let dataset = Dataset::open(dataset_dir)?;
    check_model_matches(&model, &dataset)?;
    let report = evaluate(&dataset.manifest, split, &model, ks, allow_known)?;
    let dir = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| model_path.parent().unwrap_or(Path::new(".")).to_path_buf());
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let text = report.to_text(model.hierarchy());
    write_file(&dir.join(format!("eval_{split}.txt")), &text)?;
    write_file(
        &dir.join(format!("eval_{split}.csv")),
        report.to_csv(model.hierarchy()),
    )?;
    print!("{text}");
    Ok(())
}

fn variant_name(cfg: &RunConfig, weight: f32) -> String {
    let mut parts = Vec::new();
    if weight > 0.0 {
        parts.push(format!("positional_{weight}"));
    }
    if cfg.saliency_train || cfg.saliency_eval {
        parts.push("saliency".to_string());
    }
    if cfg.normalization == NormalizationMode::DatasetWide {
        parts.push("dataset_wide".to_string());
    }
    if parts.is_empty() {
        "baseline".into()
    } else {
        parts.join("+")
    }
}

/// Header of the consolidated sweep CSV.
pub const SWEEP_HEADER: &str = "k,patch_size,variant,top1,top2,top3,status";

pub fn sweep(cfg: &RunConfig, out: &Path) -> Result<()> {
    if cfg.sweep_k.is_empty() {
        return Err(Error::Config("sweep needs sweep_k".into()).into());
    }
    let weights = if cfg.sweep_positional_weight.is_empty() {
        vec![cfg.positional_weight]
    } else {
        cfg.sweep_positional_weight.clone()
    };
    let (dataset, known) = load_known(cfg)?;
    let unknown = dataset.load_split(Split::Unknown).context("ingest")?;
    let patch_size = match cfg.patch_size.as_str() {
        "auto" => known
            .first()
            .map(|g| format!("{}x{}", g.grid.grid_rows(), g.grid.grid_cols()))
            .unwrap_or_default(),
        other => other.to_string(),
    };
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    let log_path = out.with_extension("log");
    let mut log = RunLog::create(log_path)?;
    let mut csv = format!("{SWEEP_HEADER}\n");
    let mut failed = 0;
    for &weight in &weights {
        let variant = variant_name(cfg, weight);
        let point_cfg = RunConfig {
            positional_weight: weight,
            ..cfg.clone()
        };
        let prepared = prepare(&point_cfg, &known);
        for &k in &cfg.sweep_k {
            log.line(format!("sweep point k={k} variant={variant}"))?;
            let outcome = prepared
                .as_ref()
                .map_err(|e| anyhow::anyhow!("{e:#}"))
                .and_then(|p| train_prepared(&point_cfg, &dataset, p, k, &mut log))
                .and_then(|m| Ok(evaluate_grids(&unknown, &m, &[1, 2, 3])?));
            match outcome {
                Ok(r) => csv.push_str(&format!(
                    "{k},{patch_size},{variant},{:.6},{:.6},{:.6},ok\n",
                    r.top_k_accuracy[&1], r.top_k_accuracy[&2], r.top_k_accuracy[&3]
                )),
                Err(e) => {
                    failed += 1;
                    log.line(format!("failed: k={k} variant={variant}: {e:#}"))?;
                    eprintln!("sweep point k={k} variant={variant} failed: {e:#}");
                    csv.push_str(&format!("{k},{patch_size},{variant},,,,failed\n"));
                }
            }
        }
    }
    log.finish()?;
    write_file(out, &csv)?;
    print!("{csv}");
    if failed > 0 {
        eprintln!("{failed} sweep point(s) failed");
    }
    Ok(())
}

pub fn export(
    model_path: &Path,
    dataset_dir: &Path,
    split: Option<Split>,
    out: &Path,
) -> Result<()> {
    let model = load_model(model_path)?;
    let dataset = Dataset::open(dataset_dir)?;
    check_model_matches(&model, &dataset)?;
    let entries = dataset
        .manifest
        .entries()
        .iter()
        .filter(|e| split.is_none_or(|s| e.split == s));
    let rows = export_assignments(entries, &model, out)?;
    println!("{rows} patch assignments written to {}", out.display());
    Ok(())
}

pub fn model_info(path: &Path) -> Result<()> {
    let model = load_model(path)?;
    let c = model.centroids();
    let h = model.hierarchy();
    println!("format_version: {}", TrainedModel::FORMAT_VERSION);
    println!("k: {}", model.k());
    println!("dim: {}", model.dim());
    println!("classes: {}", h.class_count());
    println!("superclasses: {}", h.superclass_count());
    println!("positional_weight: {}", model.positional().weight());
    println!("saliency_train: {}", model.saliency_train());
    println!("saliency_eval: {}", model.saliency_eval());
    println!("saliency_score: {:?}", model.saliency_score());
    println!("normalization: {}", model.semantics().mode());
    println!("training_sse: {:.6}", c.training_sse());
    println!("iterations: {}", c.iterations_run());
    println!(
        "empty_clusters: {}",
        model.semantics().empty_clusters().len()
    );
    for (s, name) in h.superclass_names().iter().enumerate() {
        let members: Vec<&str> = h
            .members(s as u32)
            .into_iter()
            .map(|g| h.class_name(g))
            .collect();
        println!("superclass {s} {name}: {}", members.join(", "));
    }
    Ok(())
}
