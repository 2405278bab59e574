use std::ops::ControlFlow;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::Rng;

use super::config::{KlForm, TrainConfig};
use super::model::{kl_graph, GlenetModel, PRED_OUT};
use super::preprocess::{Batch, PreparedSample};
use crate::error::{Error, Result};
use crate::nn::{sample_reparameterized, Graph, OptimizerState, ParamStore, Var};
use crate::rng;
use crate::synth::{occlusion_augment, standard_augment, standard_augment_canonical, ObjectSample};
use crate::BOX_DIMS;

/// Mean losses over one epoch.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct EpochLosses {
    pub epoch: usize,
    pub reconstruction: f64,
    pub kl: f64,
    pub kl_weight: f64,
    pub lr: f64,
}

/// KL weight at `step` of `total`: linear from 0 to 1 over the first
/// `fraction` of training, then 1.
pub fn anneal_weight(step: usize, total: usize, fraction: f64) -> f64 {
    let ramp = fraction * total.saturating_sub(1) as f64;
    if ramp <= 0.0 {
        return 1.0;
    }
    (step as f64 / ramp).min(1.0)
}

/// Reconstruction and latent-regulariser terms for a batch, on the tape.
///
/// Reconstruction is the Huber penalty on the seven offsets summed over
/// dimensions plus `lambda` times the direction cross-entropy, averaged over
/// the batch; the latent sample comes from the recognition posterior.
pub(crate) fn elbo_graph(
    model: &GlenetModel,
    g: &mut Graph,
    store: &ParamStore,
    batch: &Batch,
    cfg: &TrainConfig,
    rng: &mut impl Rng,
) -> Result<(Var, Var)> {
    let rows = batch.targets.rows();
    let pts = g.constant(batch.points.clone())?;
    let prior = model.prior(g, store, pts)?;
    let ctx = model.context(g, store, pts)?;
    let feats = g.constant(batch.box_features.clone())?;
    let (mu_q, ls_q) = model.recognition(g, store, pts, feats)?;
    let sigma_q = g.exp(ls_q)?;
    let z = sample_reparameterized(g, mu_q, sigma_q, rng)?;
    let out = model.predict(g, store, z, ctx)?;
    let offsets = g.slice_cols(out, 0, BOX_DIMS)?;
    let logit = g.slice_cols(out, BOX_DIMS, PRED_OUT)?;
    let target = g.constant(batch.targets.clone())?;
    let diff = g.sub(offsets, target)?;
    let hub = g.huber(diff, cfg.huber_delta)?;
    let hub = g.sum(hub)?;
    let rec = if cfg.lambda > 0.0 {
        let bce = g.bce_with_logits(logit, batch.dirs.clone())?;
        let bce = g.sum(bce)?;
        let bce = g.scale(bce, cfg.lambda)?;
        g.add(hub, bce)?
    } else {
        hub
    };
    let rec = g.scale(rec, 1.0 / rows as f64)?;
    let kl = kl_graph(g, prior, (mu_q, ls_q), cfg.kl_form)?;
    Ok((rec, kl))
}

/// `(L_rec, L_KL)` nodes for prepared samples, with parameters read from
/// `store` (which must match `model`'s layout).
pub fn elbo_terms(
    model: &GlenetModel,
    g: &mut Graph,
    store: &ParamStore,
    samples: &[PreparedSample],
    cfg: &TrainConfig,
    rng: &mut impl Rng,
) -> Result<(Var, Var)> {
    let refs: Vec<&PreparedSample> = samples.iter().collect();
    let batch = Batch::new(&refs, model.config.coordinates)?;
    elbo_graph(model, g, store, &batch, cfg, rng)
}

/// `(L_rec, L_KL)` for prepared samples, without updating anything.
pub fn elbo_losses(
    model: &GlenetModel,
    samples: &[PreparedSample],
    cfg: &TrainConfig,
    rng: &mut impl Rng,
) -> Result<(f64, f64)> {
    let mut g = Graph::new();
    let (rec, kl) = elbo_terms(model, &mut g, &model.store, samples, cfg, rng)?;
    Ok((g.value(rec).item(), g.value(kl).item()))
}

/// Distance kept between augmented canonical headings and the +-pi/2 wrap.
const HEADING_MARGIN: f64 = std::f64::consts::PI / 8.0;

fn augmented(
    data: &[ObjectSample],
    i: usize,
    cfg: &TrainConfig,
    rng: &mut impl Rng,
) -> Result<ObjectSample> {
    let mut s = data[i].clone();
    if cfg.occlusion_augment && data.len() > 1 && s.points.len() >= 8 && rng.random_bool(cfg.occlusion.probability) {
        let mut j = rng.random_range(0..data.len() - 1);
        if j >= i {
            j += 1;
        }
        s = occlusion_augment(&s, &data[j], &cfg.occlusion, rng)?;
    }
    if cfg.standard_augment {
        s = if cfg.canonical_heading {
            standard_augment_canonical(&s, HEADING_MARGIN, rng)
        } else {
            standard_augment(&s, rng)
        };
    }
    Ok(s)
}

/// Trains `model` in place; see [`train_with`].
pub fn train(model: &mut GlenetModel, data: &[ObjectSample], cfg: &TrainConfig) -> Result<Vec<EpochLosses>> {
    train_with(model, data, cfg, |_, _| Ok(ControlFlow::Continue(())))
}

/// Minimises `L_rec + gamma * anneal * L_KL` with Adam under the one-cycle
/// schedule, calling `on_epoch` after every epoch. Returning
/// `ControlFlow::Break` stops training early; the schedule is not rescaled.
pub fn train_with(
    model: &mut GlenetModel,
    data: &[ObjectSample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&GlenetModel, &EpochLosses) -> Result<ControlFlow<()>>,
) -> Result<Vec<EpochLosses>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::config("cannot train on an empty dataset"));
    }
    let batches_per_epoch = data.len().div_ceil(cfg.batch_size);
    let total_steps = batches_per_epoch * cfg.epochs;
    let mut opt = OptimizerState::new(&model.store, cfg.adam, total_steps);
    let mut rng = rng::stream(cfg.seed, 0x7EA1);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut rec_sum, mut kl_sum, mut weight) = (0.0, 0.0, 0.0);
        for chunk in order.chunks(cfg.batch_size) {
            let prepared: Vec<PreparedSample> = chunk
                .iter()
                .map(|&i| {
                    let s = augmented(data, i, cfg, &mut rng)?;
                    PreparedSample::new(&s, &model.config, &mut rng)
                })
                .collect::<Result<_>>()?;
            let refs: Vec<&PreparedSample> = prepared.iter().collect();
            let batch = Batch::new(&refs, model.config.coordinates)?;
            weight = cfg.gamma * anneal_weight(step, total_steps, cfg.anneal_fraction);
            let mut parts = (0.0, 0.0);
            let mut store = std::mem::take(&mut model.store);
            let model_view = &*model;
            let result = opt.minimize(&mut store, |g, s| {
                let (rec, kl) = elbo_graph(model_view, g, s, &batch, cfg, &mut rng)?;
                parts = (g.value(rec).item(), g.value(kl).item());
                if weight > 0.0 {
                    let w = g.scale(kl, weight)?;
                    g.add(rec, w)
                } else {
                    Ok(rec)
                }
            });
            model.store = store;
            result.map_err(|e| diverged(e, epoch, step, parts))?;
            rec_sum += parts.0 * chunk.len() as f64;
            kl_sum += parts.1 * chunk.len() as f64;
            step += 1;
        }
        let losses = EpochLosses {
            epoch,
            reconstruction: rec_sum / data.len() as f64,
            kl: kl_sum / data.len() as f64,
            kl_weight: weight,
            lr: opt.current_lr(),
        };
        if !losses.reconstruction.is_finite() || !losses.kl.is_finite() {
            return Err(diverged(Error::NumericFault { op: "epoch".into(), detail: "loss is not finite".into() }, epoch, step, (losses.reconstruction, losses.kl)));
        }
        info!(
            "epoch {epoch}: L_rec {:.5} L_KL {:.5} (weight {:.3}, lr {:.2e})",
            losses.reconstruction, losses.kl, losses.kl_weight, losses.lr
        );
        history.push(losses);
        if on_epoch(model, &losses)?.is_break() {
            break;
        }
    }
    debug!("trained {} steps", step);
    Ok(history)
}

fn diverged(e: Error, epoch: usize, step: usize, last: (f64, f64)) -> Error {
    match e {
        Error::NumericFault { op, detail } => Error::NumericFault {
            op,
            detail: format!("{detail}; training diverged at epoch {epoch}, step {step} (last L_rec {}, L_KL {})", last.0, last.1),
        },
        other => other,
    }
}

/// Names the `KlForm` in logs and manifests.
impl std::fmt::Display for KlForm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            KlForm::Printed => "printed",
            KlForm::Exact => "exact",
            KlForm::Elbo => "elbo",
        })
    }
}
