use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::uaqe::UaqeHead;
use crate::error::{Error, Result};
use crate::geom::{iou_3d, OrientedBox};
use crate::nn::{AdamConfig, Graph, Mlp, OneCycle, OptimizerState, ParamStore, Tensor, Var};
use crate::rng;
use crate::BOX_DIMS;

/// Synthetic (uncertainty, IoU) pairs for the quality-estimation comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QualityConfig {
    pub num_pairs: usize,
    pub holdout_fraction: f64,
    /// Overall localisation noise level, drawn log-uniformly per pair.
    pub sigma_range: [f64; 2],
    /// Std of the noise on the uncertainty-blind branch's input feature.
    pub feature_noise: f64,
    pub steps: usize,
    pub peak_lr: f64,
    pub seed: u64,
}

impl Default for QualityConfig {
    fn default() -> Self {
        Self {
            num_pairs: 4000,
            holdout_fraction: 0.5,
            sigma_range: [0.01, 0.4],
            feature_noise: 0.2,
            steps: 600,
            peak_lr: 0.01,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QualityPair {
    /// Per-dimension std of the prediction error in encoded-offset space.
    pub sigma: [f64; BOX_DIMS],
    /// Noisy quality cue visible to the IoU branch.
    pub feature: f64,
    pub true_iou: f64,
}

/// Perturbs a car-sized box with Gaussian errors of the drawn per-dimension
/// scale and records the resulting 3D IoU.
pub fn generate_quality_pairs(cfg: &QualityConfig, rng: &mut impl Rng) -> Vec<QualityPair> {
    let (w, l, h) = (1.6, 3.9, 1.56);
    let diag = (w * w + l * l as f64).sqrt();
    let feature_noise = Normal::new(0.0, cfg.feature_noise.max(1e-12)).expect("positive std");
    let (lo, hi) = (cfg.sigma_range[0].ln(), cfg.sigma_range[1].ln());
    (0..cfg.num_pairs)
        .map(|_| {
            let level = rng.random_range(lo..=hi).exp();
            let sigma: [f64; BOX_DIMS] = std::array::from_fn(|_| level * rng.random_range(0.5..1.5));
            let e: [f64; BOX_DIMS] = std::array::from_fn(|k| sigma[k] * rng.sample::<f64, _>(rand_distr::StandardNormal));
            let yaw = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            let gt = OrientedBox::new(0.0, 0.0, 0.0, w, l, h, yaw).expect("valid");
            let pred = OrientedBox::new(
                e[0] * diag,
                e[1] * diag,
                e[2] * h,
                w * e[3].exp(),
                l * e[4].exp(),
                h * e[5].exp(),
                yaw + e[6],
            )
            .expect("positive sizes");
            let true_iou = iou_3d(&pred, &gt);
            let feature = (true_iou + feature_noise.sample(rng)).clamp(0.0, 1.0);
            QualityPair { sigma, feature, true_iou }
        })
        .collect()
}

/// Per-bin mean absolute IoU-estimation error of both estimators.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QualityReport {
    /// `(bin lower edge, count, blind MAE, UAQE MAE)` for 0.1-wide bins.
    pub bins: Vec<(f64, usize, f64, f64)>,
    /// Pooled over true IoU in `[0.1, 0.6)`.
    pub mae_blind: f64,
    pub mae_uaqe: f64,
}

fn branch_forward(g: &mut Graph, store: &ParamStore, branch: &Mlp, feature: Var) -> Result<Var> {
    let o = branch.forward(g, store, feature)?;
    g.sigmoid(o)
}

fn fit(
    store: &mut ParamStore,
    steps: usize,
    peak_lr: f64,
    mut loss: impl FnMut(&mut Graph, &ParamStore) -> Result<Var>,
) -> Result<()> {
    let config = AdamConfig {
        schedule: OneCycle { peak_lr, ..OneCycle::default() },
        ..AdamConfig::default()
    };
    let mut opt = OptimizerState::new(store, config, steps);
    for _ in 0..steps {
        opt.minimize(store, &mut loss)?;
    }
    Ok(())
}

fn mse(g: &mut Graph, pred: Var, target: &Tensor) -> Result<Var> {
    let t = g.constant(target.clone())?;
    let d = g.sub(pred, t)?;
    let sq = g.square(d)?;
    g.mean(sq)
}

/// Trains an uncertainty-blind IoU branch and the same branch multiplied by a
/// UAQE coefficient, then compares their held-out errors.
pub fn run_quality_experiment(cfg: &QualityConfig) -> Result<QualityReport> {
    if cfg.num_pairs < 10 || !(0.0..1.0).contains(&cfg.holdout_fraction) {
        return Err(Error::config("quality experiment needs >= 10 pairs and a holdout fraction in [0, 1)"));
    }
    let mut data_rng = rng::stream(cfg.seed, 1);
    let pairs = generate_quality_pairs(cfg, &mut data_rng);
    let n_test = (cfg.num_pairs as f64 * cfg.holdout_fraction).round() as usize;
    let (test, train) = pairs.split_at(n_test);

    let feats = Tensor::matrix(train.len(), 1, train.iter().map(|p| p.feature).collect())?;
    let sigmas = Tensor::from_rows(&train.iter().map(|p| p.sigma).collect::<Vec<_>>())?;
    let target = Tensor::matrix(train.len(), 1, train.iter().map(|p| p.true_iou).collect())?;

    let mut init_rng = rng::stream(cfg.seed, 2);
    let mut blind_store = ParamStore::new();
    let blind = Mlp::new(&mut blind_store, "iou_branch", &[1, 16, 1], false, &mut init_rng);
    fit(&mut blind_store, cfg.steps, cfg.peak_lr, |g, s| {
        let x = g.constant(feats.clone())?;
        let p = branch_forward(g, s, &blind, x)?;
        mse(g, p, &target)
    })?;

    let mut init_rng = rng::stream(cfg.seed, 2);
    let mut head = UaqeHead::new(&mut init_rng);
    let branch = Mlp::new(&mut head.store, "iou_branch", &[1, 16, 1], false, &mut init_rng);
    let mut store = std::mem::take(&mut head.store);
    fit(&mut store, cfg.steps, cfg.peak_lr, |g, s| {
        let x = g.constant(feats.clone())?;
        let raw = branch_forward(g, s, &branch, x)?;
        let sx = g.constant(sigmas.clone())?;
        let c = head.forward(g, s, sx)?;
        let p = g.mul(raw, c)?;
        mse(g, p, &target)
    })?;
    head.store = store;

    let mut bins: Vec<(f64, usize, f64, f64)> = (1..6).map(|i| (i as f64 / 10.0, 0, 0.0, 0.0)).collect();
    let (mut pooled_b, mut pooled_u, mut pooled_n) = (0.0, 0.0, 0usize);
    for p in test {
        if !(0.1..0.6).contains(&p.true_iou) {
            continue;
        }
        let mut g = Graph::new();
        let x = g.constant(Tensor::scalar(p.feature))?;
        let b = branch_forward(&mut g, &blind_store, &blind, x)?;
        let blind_est = g.value(b).item();
        let raw = branch_forward(&mut g, &head.store, &branch, x)?;
        let raw = g.value(raw).item();
        let uaqe_est = raw * head.coefficient(&p.sigma)?;
        let (eb, eu) = ((blind_est - p.true_iou).abs(), (uaqe_est - p.true_iou).abs());
        let k = (((p.true_iou - 0.1) * 10.0).floor() as usize).min(4);
        bins[k].1 += 1;
        bins[k].2 += eb;
        bins[k].3 += eu;
        pooled_b += eb;
        pooled_u += eu;
        pooled_n += 1;
    }
    if pooled_n == 0 {
        return Err(Error::degenerate("no held-out pairs with true IoU in [0.1, 0.6)"));
    }
    for b in &mut bins {
        if b.1 > 0 {
            b.2 /= b.1 as f64;
            b.3 /= b.1 as f64;
        }
    }
    Ok(QualityReport {
        bins,
        mae_blind: pooled_b / pooled_n as f64,
        mae_uaqe: pooled_u / pooled_n as f64,
    })
}
