use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use super::config::{ModelConfig, TrainConfig};
use super::model::{repeat_row, GlenetModel};
use super::preprocess::{PreparedSample, Preprocessed};
use super::train::train;
use crate::error::{Error, Result};
use crate::geom::{decode_box, BoxEncoding, OrientedBox};
use crate::nn::{sigmoid, Graph, Tensor};
use crate::rng;
use crate::synth::ObjectSample;
use crate::BOX_DIMS;

/// Monte-Carlo label uncertainty for one object.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyEstimate {
    /// Population variance of the decoded offsets, per box dimension.
    pub variance: [f64; BOX_DIMS],
    /// The sampled offsets, one row per prior draw.
    pub offsets: Vec<[f64; BOX_DIMS]>,
    /// The sampled boxes in the input frame.
    pub boxes: Vec<OrientedBox<f64>>,
    /// Prior latent standard deviations.
    pub prior_sigma: Vec<f64>,
}

impl UncertaintyEstimate {
    pub fn total_variance(&self) -> f64 {
        self.variance.iter().sum()
    }
}

pub(crate) fn population_variance(rows: &[[f64; BOX_DIMS]]) -> [f64; BOX_DIMS] {
    // shifted by the first row so identical rows give exactly zero
    let n = rows.len() as f64;
    let base = rows[0];
    let mut mean = [0.0; BOX_DIMS];
    for r in rows {
        for k in 0..BOX_DIMS {
            mean[k] += (r[k] - base[k]) / n;
        }
    }
    let mut var = [0.0; BOX_DIMS];
    for r in rows {
        for k in 0..BOX_DIMS {
            var[k] += (r[k] - base[k] - mean[k]).powi(2) / n;
        }
    }
    var
}

/// Draws `samples` latents from the prior, decodes each, and reports the
/// spread of the decoded offsets.
pub fn infer_uncertainty(
    model: &GlenetModel,
    cloud: &Preprocessed,
    samples: usize,
    rng: &mut impl Rng,
) -> Result<UncertaintyEstimate> {
    if samples < 2 {
        return Err(Error::config("variance needs at least 2 samples"));
    }
    if cloud.points.len() != model.config.num_points {
        return Err(Error::structural(format!(
            "cloud has {} points, model expects {}",
            cloud.points.len(),
            model.config.num_points
        )));
    }
    let coords = model.config.coordinates;
    let store = &model.store;
    let mut g = Graph::new();
    let pts = g.constant(Tensor::matrix(cloud.points.len(), coords.dim(), cloud.features(coords))?)?;
    let (mu, log_sigma) = model.prior(&mut g, store, pts)?;
    let ctx = model.context(&mut g, store, pts)?;
    let mu = g.value(mu).row(0).to_vec();
    let sigma: Vec<f64> = g.value(log_sigma).row(0).iter().map(|v| v.exp()).collect();
    let latent = mu.len();
    let mut z = Vec::with_capacity(samples * latent);
    for _ in 0..samples {
        for k in 0..latent {
            let e: f64 = rng.sample(StandardNormal);
            z.push(mu[k] + sigma[k] * e);
        }
    }
    let z = g.constant(Tensor::matrix(samples, latent, z)?)?;
    let ctx = match ctx {
        Some(c) => {
            let rep = repeat_row(g.value(c), 0, samples)?;
            Some(g.constant(rep)?)
        }
        None => None,
    };
    let out = model.predict(&mut g, store, z, ctx)?;
    let out = g.value(out);
    let mut offsets = Vec::with_capacity(samples);
    let mut boxes = Vec::with_capacity(samples);
    for i in 0..samples {
        let row = out.row(i);
        let t: [f64; BOX_DIMS] = std::array::from_fn(|k| row[k]);
        offsets.push(t);
        let mut decodable = t;
        decodable[6] = decodable[6].clamp(-1.0, 1.0);
        let dir = u8::from(sigmoid(row[BOX_DIMS]) > 0.5);
        let mut b = decode_box(&BoxEncoding::from_offsets(decodable, dir), &model.config.anchor)?;
        b.cx += cloud.centroid[0];
        b.cy += cloud.centroid[1];
        b.cz += cloud.centroid[2];
        boxes.push(b);
    }
    Ok(UncertaintyEstimate {
        variance: population_variance(&offsets),
        offsets,
        boxes,
        prior_sigma: sigma,
    })
}

/// Per-object result of cross-sampled inference.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldUncertainty {
    pub index: usize,
    pub fold: usize,
    pub variance: [f64; BOX_DIMS],
}

/// Shuffled round-robin partition of `n` objects into `k` folds.
pub fn kfold_partition(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::config("need at least 2 folds"));
    }
    if n < k {
        return Err(Error::config(format!("{n} objects cannot fill {k} folds")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, 0xF01D));
    let mut folds = vec![Vec::new(); k];
    for (pos, idx) in order.into_iter().enumerate() {
        folds[pos % k].push(idx);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

/// Trains one model per fold on the other folds and estimates uncertainty for
/// the held-out fold, so no object is scored by a model that saw it.
pub fn kfold_uncertainty(
    data: &[ObjectSample],
    model_config: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<Vec<FoldUncertainty>> {
    cfg.validate()?;
    let folds = kfold_partition(data.len(), cfg.folds, cfg.seed)?;
    let per_fold: Vec<Vec<FoldUncertainty>> = folds
        .par_iter()
        .enumerate()
        .map(|(f, held_out)| {
            let train_idx: Vec<usize> = (0..data.len()).filter(|i| held_out.binary_search(i).is_err()).collect();
            assert!(
                train_idx.iter().all(|i| !held_out.contains(i)),
                "fold {f}: training and inference sets overlap"
            );
            let train_set: Vec<ObjectSample> = train_idx.iter().map(|&i| data[i].clone()).collect();
            let fold_seed = rng::child_seed(cfg.seed, f as u64);
            let mut model = GlenetModel::new(model_config.clone(), &mut rng::stream(fold_seed, 1))?;
            let fold_cfg = TrainConfig { seed: fold_seed, ..cfg.clone() };
            train(&mut model, &train_set, &fold_cfg)?;
            let mut r = rng::stream(fold_seed, 2);
            held_out
                .iter()
                .map(|&i| {
                    let prepared = PreparedSample::new(&data[i], model_config, &mut r)?;
                    let est = infer_uncertainty(&model, &prepared.cloud, cfg.samples, &mut r)?;
                    Ok(FoldUncertainty { index: i, fold: f, variance: est.variance })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let mut out: Vec<FoldUncertainty> = per_fold.into_iter().flatten().collect();
    out.sort_by_key(|u| u.index);
    Ok(out)
}

/// Evaluation of the negative log-likelihood metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NllReport {
    pub value: f64,
    pub objects: usize,
    /// Dimensions whose variance was clamped while their deviation was nonzero.
    pub clamped: usize,
}

const VARIANCE_FLOOR: f64 = 1e-12;

/// Per-object NLL of `predictions` under independent Gaussians centred on
/// `target` with per-dimension `variance`, averaged over the predictions.
///
/// Returns the value and the number of dimensions whose variance was clamped
/// up to 1e-12 while a prediction deviated from the target.
pub fn nll_from_predictions(
    target: &[f64],
    predictions: &[Vec<f64>],
    variance: &[f64],
) -> Result<(f64, usize)> {
    if predictions.is_empty() {
        return Err(Error::config("need at least one prediction"));
    }
    if variance.len() != target.len() || predictions.iter().any(|p| p.len() != target.len()) {
        return Err(Error::structural("target, predictions and variance must share a length"));
    }
    let half_ln_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
    let mut clamped = 0;
    let mut total = 0.0;
    for k in 0..target.len() {
        if variance[k] < 0.0 {
            return Err(Error::domain("variance must be non-negative"));
        }
        let deviates = predictions.iter().any(|p| p[k] != target[k]);
        let var = if variance[k] < VARIANCE_FLOOR {
            if deviates {
                clamped += 1;
            }
            VARIANCE_FLOOR
        } else {
            variance[k]
        };
        let mut dim = 0.0;
        for p in predictions {
            dim += (target[k] - p[k]).powi(2) / (2.0 * var) + 0.5 * var.ln() + half_ln_2pi;
        }
        total += dim / predictions.len() as f64;
    }
    Ok((total, clamped))
}

/// Mean NLL over `data`, each object scored from `samples` prior draws with
/// the model's own sample variance.
pub fn eval_nll(
    model: &GlenetModel,
    data: &[ObjectSample],
    samples: usize,
    rng: &mut impl Rng,
) -> Result<NllReport> {
    if data.is_empty() {
        return Err(Error::config("cannot evaluate on an empty split"));
    }
    let mut total = 0.0;
    let mut clamped = 0;
    for obj in data {
        let prepared = PreparedSample::new(obj, &model.config, rng)?;
        let est = infer_uncertainty(model, &prepared.cloud, samples, rng)?;
        let preds: Vec<Vec<f64>> = est.offsets.iter().map(|o| o.to_vec()).collect();
        let (v, c) = nll_from_predictions(&prepared.encoding.offsets(), &preds, &est.variance)?;
        if c > 0 {
            log::warn!("object {}: {c} zero-variance dimensions with nonzero deviation clamped", obj.seed);
        }
        total += v;
        clamped += c;
    }
    Ok(NllReport {
        value: total / data.len() as f64,
        objects: data.len(),
        clamped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::glenet::preprocess;

    fn small_model() -> GlenetModel {
        let cfg = ModelConfig { backbone_channels: vec![16, 32], num_points: 32, ..ModelConfig::default() };
        GlenetModel::new(cfg, &mut rng::seeded(9)).unwrap()
    }

    fn cloud(seed: u64) -> Preprocessed {
        let mut r = rng::seeded(seed);
        let pts: Vec<[f64; 3]> = (0..50).map(|_| [r.random_range(5.0..7.0), r.random_range(-1.0..1.0), r.random_range(-1.5..0.0)]).collect();
        preprocess(&pts, 32, &mut r).unwrap()
    }

    #[test]
    fn nll_closed_forms() {
        let half = 0.5 * (2.0 * std::f64::consts::PI).ln();
        let (v, c) = nll_from_predictions(&[0.3], &[vec![0.3]], &[1.0]).unwrap();
        assert!((v - half).abs() < 1e-12);
        assert_eq!(c, 0);
        let (v, _) = nll_from_predictions(&[0.0; 7], &[vec![0.0; 7]], &[1.0; 7]).unwrap();
        assert!((v - 3.5 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-9);
        let (w, _) = nll_from_predictions(&[0.0; 7], &[vec![0.0; 7]], &[3.0; 7]).unwrap();
        assert!((w - v - 3.5 * 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn nll_flags_clamped_dimensions() {
        let (_, c) = nll_from_predictions(&[0.0, 0.0], &[vec![0.1, 0.0]], &[0.0, 0.0]).unwrap();
        assert_eq!(c, 1);
        assert!(nll_from_predictions(&[0.0], &[], &[1.0]).is_err());
    }

    #[test]
    fn partition_covers_once_and_is_deterministic() {
        let f = kfold_partition(10, 2, 4).unwrap();
        assert_eq!(f[0].len(), 5);
        assert_eq!(f[1].len(), 5);
        let mut all: Vec<usize> = f.concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(f, kfold_partition(10, 2, 4).unwrap());
        assert!(kfold_partition(3, 4, 0).is_err());
        assert!(kfold_partition(3, 1, 0).is_err());
    }

    #[test]
    fn needs_two_samples() {
        let m = small_model();
        assert!(infer_uncertainty(&m, &cloud(0), 1, &mut rng::seeded(0)).is_err());
    }

    #[test]
    fn zero_prior_sigma_gives_zero_variance() {
        let mut m = small_model();
        // a huge negative log-sigma bias drives the prior spread to zero
        let w = m.store.id_of("prior.head.weight").unwrap();
        m.store.get_mut(w).data_mut().fill(0.0);
        let b = m.store.id_of("prior.head.bias").unwrap();
        let latent = m.config.latent_dim;
        m.store.get_mut(b).data_mut()[latent..].fill(-800.0);
        let est = infer_uncertainty(&m, &cloud(1), 30, &mut rng::seeded(0)).unwrap();
        assert_eq!(est.variance, [0.0; 7]);
        assert!(est.offsets.windows(2).all(|p| p[0] == p[1]));
    }

    #[test]
    fn permutation_invariant() {
        let m = small_model();
        let c = cloud(2);
        let mut shuffled = c.clone();
        shuffled.points.reverse();
        shuffled.points.swap(0, 7);
        let a = infer_uncertainty(&m, &c, 10, &mut rng::seeded(5)).unwrap();
        let b = infer_uncertainty(&m, &shuffled, 10, &mut rng::seeded(5)).unwrap();
        for k in 0..7 {
            assert!((a.variance[k] - b.variance[k]).abs() < 1e-12);
        }
    }
}
