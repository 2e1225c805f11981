use std::fs;
use std::path::{Path, PathBuf};

use hfc_core::checkpoint::write_atomic;
use hfc_core::datasets::{
    discover_subjects, prepare_synthetic, prepare_volumes, read_samples, split_fold, write_samples, DatasetManifest,
    PrepareConfig, Prepared, SegmentationSample, Splits, MANIFEST_FILE,
};
use hfc_core::evaluation::{cam, evaluate, predict_samples, write_panel, MetricsReport};
use hfc_core::training::{load_resume_state, train, train_resume, TrainConfig, BEST_FILE, HISTORY_FILE, LAST_FILE};
use hfc_core::{Checkpoint, CoreError, Model, Variant};
use serde::Serialize;

use crate::config::{config_hash, RunConfig};
use crate::error::{CliError, Result};
use crate::manifest::RunManifest;

pub const REPORT_FILE: &str = "report.jsonl";
pub const ROC_FILE: &str = "roc.csv";
pub const ABLATION_TABLE: &str = "ablation.md";
pub const ABLATION_JSON: &str = "ablation.json";
pub const CONFIG_COPY: &str = "config.toml";

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::User(format!("cannot create {}: {e}", dir.display())))
}

#[derive(Debug, Clone)]
pub struct PrepareArgs {
    pub input_dir: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub synthetic: Option<usize>,
    pub config: PrepareConfig,
}

pub fn cmd_prepare(args: &PrepareArgs) -> Result<DatasetManifest> {
    let cfg = &args.config;
    let mut run = RunManifest::begin("prepare", config_hash(cfg), cfg.seed);
    let prepared: Prepared = match (&args.input_dir, args.synthetic) {
        (Some(_), Some(_)) => return Err(CliError::User("give either --input-dir or --synthetic, not both".into())),
        (None, None) => return Err(CliError::User("one of --input-dir or --synthetic is required".into())),
        (None, Some(n)) => prepare_synthetic(n, cfg.roi_size, cfg.folds, cfg.seed)?,
        (Some(dir), None) => {
            let subjects = discover_subjects(dir)?;
            if cfg.folds > subjects.len() {
                return Err(CliError::User(format!(
                    "cannot split {} subjects into {} folds",
                    subjects.len(),
                    cfg.folds
                )));
            }
            prepare_volumes(&subjects, cfg)?
        }
    };
    if prepared.noise_shortfall > 0 {
        log::warn!(
            "{} requested noise slices could not be found in foreground-free regions",
            prepared.noise_shortfall
        );
    }
    create_dir(&args.output_dir)?;
    let samples_path = args.output_dir.join(&prepared.manifest.samples_file);
    write_samples(&samples_path, &prepared.samples)?;
    let manifest_path = args.output_dir.join(MANIFEST_FILE);
    prepared.manifest.save(&manifest_path)?;
    for fold in 0..prepared.manifest.folds {
        let subjects: Vec<_> = prepared.manifest.subjects.iter().filter(|s| s.fold == fold).collect();
        let slices: usize = subjects.iter().map(|s| s.slices + s.noise_slices).sum();
        println!("fold {fold}: {} subjects, {slices} samples", subjects.len());
    }
    run.artifacts = vec![samples_path, manifest_path];
    run.finish(&args.output_dir)?;
    Ok(prepared.manifest)
}

/// Prepared samples split into train/val/test for `fold`.
pub fn load_splits(data_dir: &Path, fold: usize, val_fraction: f64, seed: u64) -> Result<(DatasetManifest, Splits)> {
    let manifest_path = data_dir.join(MANIFEST_FILE);
    if !manifest_path.exists() {
        return Err(CliError::User(format!(
            "{} not found; run `hfcnet prepare` first",
            manifest_path.display()
        )));
    }
    let manifest = DatasetManifest::load(&manifest_path)?;
    let samples = read_samples(&data_dir.join(&manifest.samples_file))?;
    let splits = split_fold(&manifest, samples, fold, val_fraction, seed)?;
    Ok((manifest, splits))
}

#[derive(Debug, Clone)]
pub struct TrainArgs {
    pub config: RunConfig,
    pub data_dir: PathBuf,
    pub fold: usize,
    pub val_fraction: f64,
    pub out_dir: PathBuf,
    pub resume: bool,
}

pub fn cmd_train(args: &TrainArgs) -> Result<RunManifest> {
    let cfg = &args.config;
    let mut run = RunManifest::begin("train", config_hash(cfg), cfg.train.seed);
    let (manifest, splits) = load_splits(&args.data_dir, args.fold, args.val_fraction, cfg.train.seed)?;
    let model = Model::new(cfg.model.model_config(manifest.roi_size))?;
    create_dir(&args.out_dir)?;
    let mut train_cfg = cfg.train.clone();
    train_cfg.checkpoint_dir = Some(args.out_dir.clone());
    let resume = if args.resume {
        let state = load_resume_state::<f32>(&args.out_dir)?;
        if state.is_none() {
            log::warn!("nothing to resume in {}, starting fresh", args.out_dir.display());
        }
        state
    } else {
        None
    };
    log::info!(
        "training {} on {} samples ({} validation), {} parameters",
        cfg.model.variant,
        splits.train.len(),
        splits.val.len(),
        model.num_params()
    );
    let out = train_resume::<f32>(&model, &splits.train, &splits.val, &train_cfg, resume)?;
    let config_path = args.out_dir.join(CONFIG_COPY);
    write_atomic(&config_path, cfg.to_toml().as_bytes())?;
    let last = out.history.records.last();
    println!(
        "trained {} epochs; last loss {}; best selection metric {:.4}",
        out.last.epoch,
        last.map(|r| format!("{:.5}", r.train_loss)).unwrap_or_else(|| "n/a".into()),
        out.best.best_metric
    );
    run.artifacts = [BEST_FILE, LAST_FILE, HISTORY_FILE, CONFIG_COPY]
        .iter()
        .map(|f| args.out_dir.join(f))
        .collect();
    run.finish(&args.out_dir)?;
    Ok(run)
}

#[derive(Debug, Clone)]
pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub data_dir: PathBuf,
    pub split: String,
    pub fold: usize,
    pub val_fraction: f64,
    pub out_dir: PathBuf,
    pub cam: bool,
    pub threshold: f64,
}

fn check_sizes(model: &Model, samples: &[SegmentationSample]) -> Result<()> {
    let (h, w) = model.config().input_size;
    if let Some(s) = samples.iter().find(|s| (s.height, s.width) != (h, w)) {
        return Err(CoreError::Incompatible {
            module: "network".into(),
            msg: format!("model input is {h}x{w} but sample {} is {}x{}", s.id(), s.height, s.width),
        }
        .into());
    }
    Ok(())
}

pub fn cmd_eval(args: &EvalArgs) -> Result<MetricsReport> {
    let ckpt = Checkpoint::<f32>::load(&args.checkpoint)?;
    // The validation split depends on the training seed.
    let train_cfg: Option<TrainConfig> = ckpt
        .extra
        .get("train_config")
        .and_then(|t| serde_json::from_str(t).ok());
    let seed = train_cfg.as_ref().map(|c| c.seed).unwrap_or(0);
    let mut run = RunManifest::begin("eval", config_hash(&ckpt.config), seed);
    let model = Model::new(ckpt.config.clone())?;
    model.check_params(&ckpt.params)?;
    let (_, splits) = load_splits(&args.data_dir, args.fold, args.val_fraction, seed)?;
    let samples = splits.get(&args.split)?;
    check_sizes(&model, samples)?;
    let report = evaluate(&model, &ckpt.params, samples, args.threshold, 32)?;
    create_dir(&args.out_dir)?;
    let report_path = args.out_dir.join(REPORT_FILE);
    let roc_path = args.out_dir.join(ROC_FILE);
    report.write(&report_path, &roc_path)?;
    run.artifacts = vec![report_path, roc_path];
    if args.cam && !samples.is_empty() {
        let cam_dir = args.out_dir.join("cam");
        create_dir(&cam_dir)?;
        let probs = predict_samples(&model, &ckpt.params, samples, 32)?;
        for (s, p) in samples.iter().zip(&probs) {
            let heat = cam(&model, &ckpt.params, s)?;
            let path = cam_dir.join(format!("{}.png", s.id().replace(['/', '\\'], "_")));
            write_panel(&path, s, &heat, p, args.threshold)?;
            run.artifacts.push(path);
        }
    }
    match &report.aggregate {
        Some(a) => println!(
            "{} samples: DSC {:.4}  mIoU {:.4}  recall {:.4}  precision {:.4}  AUC {}",
            a.samples,
            a.dsc,
            a.miou,
            a.recall,
            a.precision,
            report.auc.map(|v| format!("{v:.4}")).unwrap_or_else(|| "n/a".into())
        ),
        None => println!("0 samples: {}", report.notice.as_deref().unwrap_or("nothing to evaluate")),
    }
    run.finish(&args.out_dir)?;
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct AblateArgs {
    pub base: RunConfig,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub rows: Vec<Variant>,
    pub seeds: Vec<u64>,
    pub fold: usize,
    pub val_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub label: String,
    pub config_hash: String,
    pub dsc: Vec<f64>,
    pub miou: Vec<f64>,
    pub dsc_mean: f64,
    pub dsc_std: f64,
    pub miou_mean: f64,
    pub miou_std: f64,
}

/// Mean and population standard deviation.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn ablation_table(rows: &[AblationRow], seeds: &[u64]) -> String {
    let mut out = format!(
        "| Row | Configuration | DSC (mean ± std) | mIoU (mean ± std) | Config hash |\n|---|---|---|---|---|\n"
    );
    for (i, r) in rows.iter().enumerate() {
        out.push_str(&format!(
            "| {} | {} | {:.4} ± {:.4} | {:.4} ± {:.4} | {} |\n",
            i + 1,
            r.label,
            r.dsc_mean,
            r.dsc_std,
            r.miou_mean,
            r.miou_std,
            &r.config_hash[..12]
        ));
    }
    let seeds: Vec<String> = seeds.iter().map(|s| s.to_string()).collect();
    out.push_str(&format!("\nSeeds: {}\n", seeds.join(", ")));
    out
}

pub fn cmd_ablate(args: &AblateArgs) -> Result<Vec<AblationRow>> {
    if args.rows.is_empty() || args.seeds.is_empty() {
        return Err(CliError::User("ablation needs at least one row and one seed".into()));
    }
    let mut run = RunManifest::begin("ablate", config_hash(&args.base), args.seeds[0]);
    create_dir(&args.out_dir)?;
    let mut rows = Vec::new();
    for &variant in &args.rows {
        let mut row_cfg = args.base.clone();
        row_cfg.model.variant = variant;
        let hash = config_hash(&row_cfg);
        let (mut dscs, mut mious) = (Vec::new(), Vec::new());
        for &seed in &args.seeds {
            let (manifest, splits) = load_splits(&args.data_dir, args.fold, args.val_fraction, seed)?;
            let mut mc = row_cfg.model.model_config(manifest.roi_size);
            mc.seed = seed;
            let model = Model::new(mc)?;
            let mut tc = row_cfg.train.clone();
            tc.seed = seed;
            tc.checkpoint_dir = None;
            log::info!("row {variant}, seed {seed}");
            let out = train::<f32>(&model, &splits.train, &splits.val, &tc)?;
            let report = evaluate(&model, &out.best.params, &splits.test, tc.threshold, 32)?;
            let agg = report.aggregate.ok_or_else(|| {
                CliError::User(format!("fold {} has no test samples", args.fold))
            })?;
            dscs.push(agg.dsc);
            mious.push(agg.miou);
        }
        let (dsc_mean, dsc_std) = mean_std(&dscs);
        let (miou_mean, miou_std) = mean_std(&mious);
        println!("{:<28} DSC {dsc_mean:.4} ± {dsc_std:.4}", variant.label());
        rows.push(AblationRow {
            variant,
            label: variant.label().into(),
            config_hash: hash,
            dsc: dscs,
            miou: mious,
            dsc_mean,
            dsc_std,
            miou_mean,
            miou_std,
        });
    }
    let table_path = args.out_dir.join(ABLATION_TABLE);
    write_atomic(&table_path, ablation_table(&rows, &args.seeds).as_bytes())?;
    let json_path = args.out_dir.join(ABLATION_JSON);
    let json = serde_json::to_string_pretty(&rows).expect("rows serialise");
    write_atomic(&json_path, json.as_bytes())?;
    run.artifacts = vec![table_path, json_path];
    run.finish(&args.out_dir)?;
    Ok(rows)
}
