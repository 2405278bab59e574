use std::ops::ControlFlow;
use std::path::{Path, PathBuf};

use glenet::geom::iou_3d;
use glenet::glenet::{
    eval_nll, kfold_uncertainty, train_with, GlenetModel, ModelConfig, PreparedSample,
};
use glenet::io::{self, DatasetRecord, DetectionRecord, MergedRecord};
use glenet::nn::checkpoint;
use glenet::postproc::{nms, variance_voting};
use glenet::probdet::{train_toy_regressor, LossMode};
use glenet::synth::{generate_scene_objects, ObjectSample};
use glenet::{rng, Box3, Detection};
use log::info;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const DATASET: &str = "dataset.jsonl";
pub const UNCERTAINTY: &str = "uncertainty.jsonl";
pub const CHECKPOINT: &str = "glenet.ckpt";
pub const LOSSES: &str = "train_losses.csv";
pub const NLL: &str = "nll.csv";
pub const VOTING: &str = "voting.csv";

/// Appends a timestamped line to the run's sidecar log, the only output
/// that differs between identical runs.
pub fn log_run(out: &Path, line: &str) -> CliResult<()> {
    use std::io::Write;
    std::fs::create_dir_all(out)?;
    let stamp = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(out.join("run.log"))?;
    writeln!(f, "{stamp} {line}")?;
    Ok(())
}

pub fn load_samples(path: &Path) -> CliResult<(Vec<DatasetRecord>, Vec<ObjectSample>)> {
    let records = io::load_dataset(path).map_err(|e| with_path(e, path))?;
    if records.is_empty() {
        return Err(CliError::data(format!("{}: dataset is empty", path.display())));
    }
    let samples = records.iter().map(|r| r.to_sample()).collect::<glenet::Result<Vec<_>>>()?;
    Ok((records, samples))
}

fn with_path(e: glenet::Error, path: &Path) -> CliError {
    let mut err = CliError::from(e);
    err.message = format!("{}: {}", path.display(), err.message);
    err
}

/// Writes CSV rows through the atomic writer.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::data(e.to_string()))?;
    Ok(io::write_atomic(path, &bytes)?)
}

/// Reads a CSV written by [`write_csv`]; `None` when the file is absent.
pub fn read_csv(path: &Path) -> CliResult<Option<(Vec<String>, Vec<Vec<String>>)>> {
    if !path.exists() {
        return Ok(None);
    }
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.iter().map(str::to_owned).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|r| r.iter().map(str::to_owned).collect()))
        .collect::<Result<Vec<Vec<String>>, _>>()?;
    Ok(Some((header, rows)))
}

fn append_csv(path: &Path, header: &[&str], row: Vec<String>) -> CliResult<()> {
    let mut rows = match read_csv(path)? {
        Some((h, rows)) if h == header => rows,
        Some(_) => return Err(CliError::data(format!("{}: unexpected header", path.display()))),
        None => Vec::new(),
    };
    rows.push(row);
    write_csv(path, header, &rows)
}

pub fn fmt(v: f64) -> String {
    format!("{v}")
}

pub fn synth(cfg: &RunConfig, out: &Path) -> CliResult<PathBuf> {
    let objects = generate_scene_objects(&cfg.synth, cfg.seed)?;
    let records: Vec<DatasetRecord> = objects.iter().map(|o| DatasetRecord::from_sample(o, None)).collect();
    let path = out.join(DATASET);
    io::save_dataset(&path, &records)?;
    info!("wrote {} objects to {}", records.len(), path.display());
    Ok(path)
}

fn checkpoint_meta(model: &ModelConfig, epoch: usize) -> serde_json::Value {
    serde_json::json!({ "model": model, "epoch": epoch })
}

pub fn load_model(path: &Path) -> CliResult<GlenetModel> {
    let (manifest, params) = checkpoint::load(path).map_err(|e| with_path(e, path))?;
    let config: ModelConfig = serde_json::from_value(manifest.meta["model"].clone())
        .map_err(|e| CliError::data(format!("{}: checkpoint model config: {e}", path.display())))?;
    Ok(GlenetModel::from_params(config, &params)?)
}

pub fn train(cfg: &RunConfig, dataset: &Path, out: &Path) -> CliResult<PathBuf> {
    let (_, samples) = load_samples(dataset)?;
    let mut model = GlenetModel::new(cfg.model.clone(), &mut rng::stream(cfg.seed, 0x1417))?;
    let ckpt_dir = out.join("checkpoints");
    let history = train_with(&mut model, &samples, &cfg.train, |m, losses| {
        let done = losses.epoch + 1;
        if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 {
            let path = ckpt_dir.join(format!("epoch_{done:04}.ckpt"));
            checkpoint::save(&path, &m.store, checkpoint_meta(&m.config, done))?;
        }
        Ok(ControlFlow::Continue(()))
    })?;
    let rows: Vec<Vec<String>> = history
        .iter()
        .map(|h| vec![h.epoch.to_string(), fmt(h.reconstruction), fmt(h.kl), fmt(h.kl_weight), fmt(h.lr)])
        .collect();
    write_csv(&out.join(LOSSES), &["epoch", "reconstruction", "kl", "kl_weight", "lr"], &rows)?;
    let path = out.join(CHECKPOINT);
    checkpoint::save(&path, &model.store, checkpoint_meta(&model.config, cfg.train.epochs))?;
    Ok(path)
}

pub fn uncertainty(cfg: &RunConfig, dataset: &Path, out: &Path) -> CliResult<PathBuf> {
    let (records, samples) = load_samples(dataset)?;
    let folds = kfold_uncertainty(&samples, &cfg.model, &cfg.train)?;
    if folds.len() != records.len() {
        return Err(CliError::data("k-fold run returned a different object count"));
    }
    let annotated: Vec<DatasetRecord> = records
        .into_iter()
        .zip(&folds)
        .map(|(mut r, f)| {
            r.uncertainty = Some(f.variance);
            r
        })
        .collect();
    let path = out.join(UNCERTAINTY);
    io::save_dataset(&path, &annotated)?;
    Ok(path)
}

pub fn eval_nll_cmd(cfg: &RunConfig, ckpt: &Path, dataset: &Path, out: &Path) -> CliResult<f64> {
    let model = load_model(ckpt)?;
    let (_, samples) = load_samples(dataset)?;
    let report = eval_nll(&model, &samples, cfg.train.samples, &mut rng::stream(cfg.seed, 0x4E11))?;
    append_csv(
        &out.join(NLL),
        &["checkpoint", "objects", "samples", "nll", "clamped"],
        vec![
            ckpt.display().to_string(),
            report.objects.to_string(),
            cfg.train.samples.to_string(),
            fmt(report.value),
            report.clamped.to_string(),
        ],
    )?;
    Ok(report.value)
}

pub fn probdet_file(mode: LossMode) -> String {
    format!("probdet_{mode}.csv")
}

pub fn detections_file(mode: LossMode) -> String {
    format!("detections_{mode}.jsonl")
}

pub fn probdet(cfg: &RunConfig, dataset: &Path, mode: LossMode, out: &Path) -> CliResult<PathBuf> {
    let (records, samples) = load_samples(dataset)?;
    let variances: Option<Vec<[f64; glenet::BOX_DIMS]>> = records.iter().map(|r| r.uncertainty).collect();
    if mode == LossMode::Glenet && variances.is_none() {
        return Err(CliError::data(format!(
            "{}: glenet mode needs every record to carry an uncertainty (run `glenet uncertainty` first)",
            dataset.display()
        )));
    }
    let (model, report) = train_toy_regressor(&samples, variances.as_deref(), mode, &cfg.regressor)?;
    let path = out.join(probdet_file(mode));
    write_csv(
        &path,
        &["mode", "seed", "held_out_mean_iou", "collapse_fraction", "final_loss"],
        &[vec![
            mode.to_string(),
            report.seed.to_string(),
            fmt(report.held_out_mean_iou),
            fmt(report.collapse_fraction),
            fmt(report.final_loss),
        ]],
    )?;
    if mode == LossMode::Huber {
        return Ok(path);
    }
    // a few resampled predictions per object give the voting step clusters
    let prep = ModelConfig { num_points: cfg.regressor.num_points, anchor: cfg.regressor.anchor, ..ModelConfig::default() };
    let mut rng = rng::stream(cfg.seed, 0xD37);
    let mut dets = Vec::new();
    for s in &samples {
        for _ in 0..cfg.detections_per_object {
            let p = PreparedSample::new(s, &prep, &mut rng)?;
            let out = model.predict(&p.cloud)?;
            let sigma = out.sigma.expect("probabilistic mode");
            let score = (-sigma.iter().sum::<f64>() / sigma.len() as f64).exp();
            dets.push(DetectionRecord::from_detection(&model.detection(&p.cloud, score)?));
        }
    }
    io::save_detections(&out.join(detections_file(mode)), &dets)?;
    Ok(path)
}

/// Mean over `boxes` of the best 3D IoU with any ground-truth box.
fn mean_best_iou(boxes: &[Box3], truth: &[Box3]) -> f64 {
    if boxes.is_empty() {
        return 0.0;
    }
    let total: f64 = boxes
        .iter()
        .map(|b| truth.iter().map(|t| iou_3d(b, t)).fold(0.0, f64::max))
        .sum();
    total / boxes.len() as f64
}

pub fn vote(cfg: &RunConfig, detections: &Path, dataset: Option<&Path>, out: &Path) -> CliResult<PathBuf> {
    let dets = io::load_detections(detections)
        .map_err(|e| with_path(e, detections))?
        .iter()
        .map(|r| r.to_detection())
        .collect::<glenet::Result<Vec<Detection>>>()?;
    let merged = variance_voting(&dets, &cfg.voting)?;
    let stem = detections.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let suffix = stem.strip_prefix("detections_").unwrap_or(&stem);
    let path = out.join(format!("merged_{suffix}.jsonl"));
    io::save_merged(&path, &merged.iter().map(MergedRecord::from_merged).collect::<Vec<_>>())?;

    let mut row = vec![
        stem.clone(),
        dets.len().to_string(),
        merged.len().to_string(),
        fmt(cfg.voting.sigma_t),
        fmt(cfg.voting.mu),
    ];
    if let Some(ds) = dataset {
        let (_, samples) = load_samples(ds)?;
        let truth: Vec<Box3> = samples.iter().map(|s| s.bbox).collect();
        let voted: Vec<Box3> = merged.iter().map(|m| m.bbox).collect();
        let kept: Vec<Box3> = nms(&dets, cfg.voting.mu.max(0.01), cfg.voting.iou).iter().map(|d| d.bbox).collect();
        row.push(fmt(mean_best_iou(&voted, &truth)));
        row.push(fmt(mean_best_iou(&kept, &truth)));
    } else {
        row.push(String::new());
        row.push(String::new());
    }
    append_csv(
        &out.join(VOTING),
        &["detections", "boxes_in", "boxes_out", "sigma_t", "mu", "voting_mean_iou", "nms_mean_iou"],
        row,
    )?;
    Ok(path)
}
