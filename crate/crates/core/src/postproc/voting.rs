use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{IouKind, OrientedBox};
use crate::scalar::{wrap_half_turn, Real};
use crate::BOX_DIMS;

/// A scored box with a per-dimension localization variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection<T> {
    pub bbox: OrientedBox<T>,
    pub score: T,
    pub variance: [T; BOX_DIMS],
}

/// How the variance enters the merge weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceMode {
    /// Each box dimension is weighted by its own variance.
    #[default]
    PerDimension,
    /// Every dimension uses the mean of the 7 variances.
    Scalar,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VotingConfig {
    /// Temperature of the IoU weight `exp(-(1 - IoU)^2 / sigma_t)`.
    pub sigma_t: f64,
    /// Neighbours with IoU above this join the cluster.
    pub mu: f64,
    pub iou: IouKind,
    pub variance_mode: VarianceMode,
}

impl Default for VotingConfig {
    fn default() -> Self {
        Self {
            sigma_t: 0.05,
            mu: 0.01,
            iou: IouKind::Bev,
            variance_mode: VarianceMode::PerDimension,
        }
    }
}

impl VotingConfig {
    /// Profile for dense scenes (cluster threshold 0.7).
    pub fn dense() -> Self {
        Self {
            mu: 0.7,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_t > 0.0) {
            return Err(Error::config("sigma_t must be positive"));
        }
        if !(0.0..=1.0).contains(&self.mu) {
            return Err(Error::config("mu must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// One voting cluster: the merged box, the seed's score, and the input
/// indices that were consumed.
#[derive(Debug, Clone, PartialEq)]
pub struct MergedBox<T> {
    pub bbox: OrientedBox<T>,
    pub score: T,
    pub members: Vec<usize>,
}

/// `true` when `|tan(delta)| > 1`, written so it is total at `delta = pi/2`.
fn angle_gate<T: Real>(delta: T) -> bool {
    delta.sin().abs() > delta.cos().abs()
}

/// Greedy cluster-and-merge over detections.
///
/// Each round takes the highest-scoring remaining box `b'`, gathers every
/// remaining box whose IoU with `b'` exceeds `mu`, and replaces the cluster by
/// the per-dimension average weighted by `exp(-(1 - IoU)^2 / sigma_t) / var`.
/// Members whose yaw differs from `b'` by more than 45 degrees (mod 180) are
/// left out of the yaw average. Yaw is averaged as `b'` yaw plus the weighted
/// mean of the wrapped differences, which equals the plain weighted mean when
/// no difference crosses the wrap.
pub fn variance_voting<T: Real>(dets: &[Detection<T>], cfg: &VotingConfig) -> Result<Vec<MergedBox<T>>> {
    cfg.validate()?;
    for (i, d) in dets.iter().enumerate() {
        if d.variance.iter().any(|v| !(*v > T::zero()) || !v.is_finite()) {
            return Err(Error::domain(format!("detection {i} has a non-positive variance")));
        }
    }
    let sigma_t = T::lit(cfg.sigma_t);
    let mu = T::lit(cfg.mu);

    let mut remaining: Vec<usize> = (0..dets.len()).collect();
    let mut out = Vec::new();
    while !remaining.is_empty() {
        let seed = *remaining
            .iter()
            .max_by(|&&a, &&b| {
                dets[a]
                    .score
                    .partial_cmp(&dets[b].score)
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(b.cmp(&a))
            })
            .unwrap();
        let anchor = dets[seed].bbox;

        let mut members = Vec::new();
        let mut num = [T::zero(); BOX_DIMS];
        let mut den = [T::zero(); BOX_DIMS];
        for &i in &remaining {
            let iou = cfg.iou.eval(&dets[i].bbox, &anchor);
            if !(iou > mu || i == seed) {
                continue;
            }
            members.push(i);
            let miss = T::one() - iou;
            let p = (-(miss * miss) / sigma_t).exp();
            let var = dets[i].variance;
            let scalar_var = var.iter().fold(T::zero(), |a, &v| a + v) / T::lit(BOX_DIMS as f64);
            let b = dets[i].bbox.to_array();
            let delta = dets[i].bbox.r - anchor.r;
            for k in 0..BOX_DIMS {
                let c = match cfg.variance_mode {
                    VarianceMode::PerDimension => var[k],
                    VarianceMode::Scalar => scalar_var,
                };
                if k == BOX_DIMS - 1 {
                    let p_theta = if angle_gate(delta) { T::zero() } else { p };
                    num[k] = num[k] + wrap_half_turn(delta) * p_theta / c;
                    den[k] = den[k] + p_theta / c;
                } else {
                    num[k] = num[k] + b[k] * p / c;
                    den[k] = den[k] + p / c;
                }
            }
        }

        let mut merged = [T::zero(); BOX_DIMS];
        for k in 0..BOX_DIMS - 1 {
            merged[k] = num[k] / den[k];
        }
        // the seed always contributes p = 1 to the yaw sums, so den > 0
        merged[BOX_DIMS - 1] = anchor.r + num[BOX_DIMS - 1] / den[BOX_DIMS - 1];

        remaining.retain(|i| !members.contains(i));
        out.push(MergedBox {
            bbox: OrientedBox::from_array(merged)?,
            score: dets[seed].score,
            members,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn unit(cx: f64, r: f64) -> OrientedBox<f64> {
        OrientedBox::new(cx, 0.0, 0.0, 1.0, 1.0, 1.0, r).unwrap()
    }

    fn det(b: OrientedBox<f64>, score: f64, var: f64) -> Detection<f64> {
        Detection {
            bbox: b,
            score,
            variance: [var; BOX_DIMS],
        }
    }

    #[test]
    fn empty_and_single() {
        assert!(variance_voting::<f64>(&[], &VotingConfig::default()).unwrap().is_empty());
        let d = det(unit(2.0, 0.3), 0.9, 0.5);
        let out = variance_voting(&[d], &VotingConfig::default()).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].bbox, d.bbox);
        assert_eq!(out[0].members, vec![0]);
    }

    #[test]
    fn identical_boxes_merge_to_themselves() {
        let b = unit(1.0, 0.2);
        let out = variance_voting(&[det(b, 0.9, 1.0), det(b, 0.8, 1.0)], &VotingConfig::default()).unwrap();
        assert_eq!(out.len(), 1);
        for (x, y) in out[0].bbox.to_array().iter().zip(b.to_array()) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn two_box_hand_example() {
        // 2 m long boxes offset 1 m along their length overlap with IoU 1/3
        let long = |cx| OrientedBox::new(cx, 0.0, 0.0, 1.0, 2.0, 1.0, 0.0).unwrap();
        let dets = [det(long(0.0), 0.9, 1.0), det(long(1.0), 0.8, 0.25)];
        assert!((crate::geom::iou_bev(&dets[0].bbox, &dets[1].bbox) - 1.0 / 3.0).abs() < 1e-12);
        let out = variance_voting(&dets, &VotingConfig::default()).unwrap();
        let p2 = (-(2.0f64 / 3.0).powi(2) / 0.05).exp();
        assert!((p2 - 1.37913e-4).abs() < 1e-9);
        assert!((out[0].bbox.cx - 5.51347e-4).abs() < 1e-9);
        let expected = (p2 / 0.25) / (1.0 + p2 / 0.25);
        assert!((out[0].bbox.cx - expected).abs() < 1e-15);
    }

    #[test]
    fn angle_gate_excludes_perpendicular_yaw() {
        let a = unit(0.0, 0.0);
        let b = unit(0.0, FRAC_PI_2);
        let out = variance_voting(&[det(a, 0.9, 1.0), det(b, 0.5, 1.0)], &VotingConfig::default()).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].bbox.r, 0.0);
        assert!(angle_gate(FRAC_PI_2));
        assert!(!angle_gate(0.1f64));
    }

    #[test]
    fn zero_variance_rejected() {
        let d = det(unit(0.0, 0.0), 0.9, 0.0);
        assert!(matches!(
            variance_voting(&[d], &VotingConfig::default()),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn threshold_one_still_terminates() {
        let cfg = VotingConfig { mu: 1.0, ..VotingConfig::default() };
        let b = unit(0.0, 0.0);
        let out = variance_voting(&[det(b, 0.9, 1.0), det(b, 0.8, 1.0)], &cfg).unwrap();
        assert_eq!(out.len(), 2);
    }
}
