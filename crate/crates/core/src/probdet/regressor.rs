use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::loss::kl_reg_loss_log_sigma_graph;
use crate::error::{Error, Result};
use crate::geom::{decode_box, iou_3d, Anchor, BoxEncoding, OrientedBox};
use crate::glenet::{PreparedSample, Preprocessed};
use crate::nn::{sigmoid, AdamConfig, Graph, Mlp, OneCycle, OptimizerState, ParamStore, PointEncoder, Tensor, Var};
use crate::postproc::Detection;
use crate::rng;
use crate::synth::ObjectSample;
use crate::BOX_DIMS;

/// Regression objective of the toy detector head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// KL loss against zero-variance labels.
    Dirac,
    /// KL loss against labels carrying GLENet variances.
    Glenet,
    /// Plain Huber regression; no sigma is predicted.
    Huber,
}

impl std::fmt::Display for LossMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossMode::Dirac => "dirac",
            LossMode::Glenet => "glenet",
            LossMode::Huber => "huber",
        })
    }
}

impl std::str::FromStr for LossMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dirac" => Ok(Self::Dirac),
            "glenet" => Ok(Self::Glenet),
            "huber" => Ok(Self::Huber),
            other => Err(Error::config(format!("unknown loss mode {other:?} (dirac, glenet, huber)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegressorConfig {
    pub backbone_channels: Vec<usize>,
    pub head_hidden: Vec<usize>,
    pub num_points: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub peak_lr: f64,
    pub lambda: f64,
    pub huber_delta: f64,
    pub holdout_fraction: f64,
    /// Predicted sigmas below this count as collapsed.
    pub collapse_threshold: f64,
    pub seed: u64,
    pub anchor: Anchor<f64>,
}

impl Default for RegressorConfig {
    fn default() -> Self {
        Self {
            backbone_channels: vec![64, 128, 512],
            head_hidden: vec![64],
            num_points: 512,
            epochs: 60,
            batch_size: 32,
            peak_lr: 0.003,
            lambda: 0.2,
            huber_delta: 1.0,
            holdout_fraction: 0.2,
            collapse_threshold: 1e-2,
            seed: 0,
            anchor: Anchor { wa: 1.6, la: 3.9, ha: 1.56 },
        }
    }
}

/// Point-feature head emitting encoded box means, log-sigmas and a
/// direction logit.
#[derive(Debug, Clone)]
pub struct ToyRegressor {
    pub mode: LossMode,
    pub store: ParamStore,
    backbone: PointEncoder,
    head: Mlp,
    num_points: usize,
    anchor: Anchor<f64>,
}

/// One decoded prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressorOutput {
    pub bbox: OrientedBox<f64>,
    pub mean: [f64; BOX_DIMS],
    /// `None` in Huber mode.
    pub sigma: Option<[f64; BOX_DIMS]>,
}

impl ToyRegressor {
    pub fn new(mode: LossMode, cfg: &RegressorConfig, rng: &mut impl rand::Rng) -> Result<Self> {
        if cfg.backbone_channels.is_empty() || cfg.num_points == 0 {
            return Err(Error::config("regressor needs a backbone and num_points > 0"));
        }
        let mut store = ParamStore::new();
        let backbone = PointEncoder::new(&mut store, "reg.backbone", 3, &cfg.backbone_channels, rng);
        let out = match mode {
            LossMode::Huber => BOX_DIMS + 1,
            _ => 2 * BOX_DIMS + 1,
        };
        let mut dims = vec![backbone.out_dim()];
        dims.extend_from_slice(&cfg.head_hidden);
        dims.push(out);
        let head = Mlp::new(&mut store, "reg.head", &dims, false, rng);
        Ok(Self { mode, store, backbone, head, num_points: cfg.num_points, anchor: cfg.anchor })
    }

    fn forward(&self, g: &mut Graph, store: &ParamStore, points: Var) -> Result<Var> {
        let f = self.backbone.forward(g, store, points, self.num_points)?;
        self.head.forward(g, store, f)
    }

    /// `(mean, log sigma or None, logit)` column slices.
    fn split(&self, g: &mut Graph, out: Var) -> Result<(Var, Option<Var>, Var)> {
        let mean = g.slice_cols(out, 0, BOX_DIMS)?;
        match self.mode {
            LossMode::Huber => Ok((mean, None, g.slice_cols(out, BOX_DIMS, BOX_DIMS + 1)?)),
            _ => Ok((
                mean,
                Some(g.slice_cols(out, BOX_DIMS, 2 * BOX_DIMS)?),
                g.slice_cols(out, 2 * BOX_DIMS, 2 * BOX_DIMS + 1)?,
            )),
        }
    }

    pub fn predict(&self, cloud: &Preprocessed) -> Result<RegressorOutput> {
        if cloud.points.len() != self.num_points {
            return Err(Error::structural("cloud size does not match the regressor"));
        }
        let mut g = Graph::new();
        let flat: Vec<f64> = cloud.points.iter().flatten().copied().collect();
        let pts = g.constant(Tensor::matrix(self.num_points, 3, flat)?)?;
        let out = self.forward(&mut g, &self.store, pts)?;
        let (m, ls, logit) = self.split(&mut g, out)?;
        let mean: [f64; BOX_DIMS] = std::array::from_fn(|k| g.value(m).data()[k]);
        let sigma = ls.map(|ls| std::array::from_fn(|k| g.value(ls).data()[k].exp()));
        let dir = u8::from(sigmoid(g.value(logit).item()) > 0.5);
        let mut t = mean;
        t[6] = t[6].clamp(-1.0, 1.0);
        let mut bbox = decode_box(&BoxEncoding::from_offsets(t, dir), &self.anchor)?;
        bbox.cx += cloud.centroid[0];
        bbox.cy += cloud.centroid[1];
        bbox.cz += cloud.centroid[2];
        Ok(RegressorOutput { bbox, mean, sigma })
    }

    /// A detection carrying the predicted variance, for variance voting.
    pub fn detection(&self, cloud: &Preprocessed, score: f64) -> Result<Detection<f64>> {
        let out = self.predict(cloud)?;
        let sigma = out.sigma.ok_or_else(|| {
            Error::UnsupportedMode("huber-mode regressor predicts no variance; variance voting needs one".into())
        })?;
        Ok(Detection { bbox: out.bbox, score, variance: sigma.map(|s| s * s) })
    }
}

/// Held-out localisation quality and sigma statistics of one trained head.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegressorReport {
    pub mode: LossMode,
    pub seed: u64,
    pub held_out_mean_iou: f64,
    /// Fraction of predicted sigmas below the collapse threshold on the
    /// training split; zero in Huber mode.
    pub collapse_fraction: f64,
    pub final_loss: f64,
}

/// Trains a toy probabilistic regressor on a seeded `1 - holdout_fraction`
/// share of `data` and evaluates on the rest. `variances` holds per-object label
/// variances (required in Glenet mode).
pub fn train_toy_regressor(
    data: &[ObjectSample],
    variances: Option<&[[f64; BOX_DIMS]]>,
    mode: LossMode,
    cfg: &RegressorConfig,
) -> Result<(ToyRegressor, RegressorReport)> {
    if mode == LossMode::Glenet && variances.is_none() {
        return Err(Error::config("glenet mode needs label uncertainties"));
    }
    if let Some(v) = variances {
        if v.len() != data.len() {
            return Err(Error::config("one label variance per object is required"));
        }
    }
    let n_test = (data.len() as f64 * cfg.holdout_fraction).round() as usize;
    let n_train = data.len().saturating_sub(n_test);
    if n_train == 0 || n_test == 0 {
        return Err(Error::config("need non-empty training and held-out splits"));
    }
    // the corpus is ordered by kind, so split on a seeded permutation
    let mut split: Vec<usize> = (0..data.len()).collect();
    split.shuffle(&mut rng::stream(cfg.seed, 0x5B1));
    let (train_idx, test_idx) = split.split_at(n_train);
    let mut rng = rng::stream(cfg.seed, 0x2E6);
    let mut model = ToyRegressor::new(mode, cfg, &mut rng)?;
    let label_sigma: Vec<[f64; BOX_DIMS]> = match (mode, variances) {
        (LossMode::Glenet, Some(v)) => v.iter().map(|r| r.map(|x| x.max(0.0).sqrt())).collect(),
        _ => vec![[0.0; BOX_DIMS]; data.len()],
    };
    let steps = n_train.div_ceil(cfg.batch_size) * cfg.epochs;
    let adam = AdamConfig { schedule: OneCycle { peak_lr: cfg.peak_lr, ..OneCycle::default() }, ..AdamConfig::default() };
    let mut opt = OptimizerState::new(&model.store, adam, steps);
    let prep_cfg = crate::glenet::ModelConfig { num_points: cfg.num_points, anchor: cfg.anchor, ..Default::default() };
    let mut order: Vec<usize> = train_idx.to_vec();
    let mut last = f64::NAN;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let prepared: Vec<PreparedSample> = chunk
                .iter()
                .map(|&i| PreparedSample::new(&data[i], &prep_cfg, &mut rng))
                .collect::<Result<_>>()?;
            let flat: Vec<f64> = prepared.iter().flat_map(|p| p.cloud.points.iter().flatten().copied()).collect();
            let points = Tensor::matrix(chunk.len() * cfg.num_points, 3, flat)?;
            let targets = Tensor::from_rows(&prepared.iter().map(|p| p.encoding.offsets()).collect::<Vec<_>>())?;
            let sig = Tensor::from_rows(&chunk.iter().map(|&i| label_sigma[i]).collect::<Vec<_>>())?;
            let dirs = Tensor::matrix(chunk.len(), 1, prepared.iter().map(|p| f64::from(p.encoding.dir_bit)).collect())?;
            let rows = chunk.len() as f64;
            let mut store = std::mem::take(&mut model.store);
            let view = &model;
            let result = opt.minimize(&mut store, |g, s| {
                let pts = g.constant(points.clone())?;
                let out = view.forward(g, s, pts)?;
                let (mean, ls, logit) = view.split(g, out)?;
                let reg = match ls {
                    Some(ls) => kl_reg_loss_log_sigma_graph(g, mean, ls, &targets, &sig)?,
                    None => {
                        let t = g.constant(targets.clone())?;
                        let d = g.sub(mean, t)?;
                        let h = g.huber(d, cfg.huber_delta)?;
                        g.sum(h)?
                    }
                };
                let bce = g.bce_with_logits(logit, dirs.clone())?;
                let bce = g.sum(bce)?;
                let bce = g.scale(bce, cfg.lambda)?;
                let total = g.add(reg, bce)?;
                g.scale(total, 1.0 / rows)
            });
            model.store = store;
            last = result?;
        }
    }

    let mut eval_rng = rng::stream(cfg.seed, 0xE7A1);
    let mut iou_sum = 0.0;
    for obj in test_idx.iter().map(|&i| &data[i]) {
        let p = PreparedSample::new(obj, &prep_cfg, &mut eval_rng)?;
        iou_sum += iou_3d(&model.predict(&p.cloud)?.bbox, &obj.bbox);
    }
    let mut collapsed = 0usize;
    let mut dims = 0usize;
    if mode != LossMode::Huber {
        for obj in train_idx.iter().map(|&i| &data[i]) {
            let p = PreparedSample::new(obj, &prep_cfg, &mut eval_rng)?;
            let sigma = model.predict(&p.cloud)?.sigma.expect("probabilistic mode");
            collapsed += sigma.iter().filter(|s| **s < cfg.collapse_threshold).count();
            dims += BOX_DIMS;
        }
    }
    let report = RegressorReport {
        mode,
        seed: cfg.seed,
        held_out_mean_iou: iou_sum / n_test as f64,
        collapse_fraction: if dims == 0 { 0.0 } else { collapsed as f64 / dims as f64 },
        final_loss: last,
    };
    Ok((model, report))
}
