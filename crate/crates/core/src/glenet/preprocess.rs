use rand::seq::index;
use rand::Rng;

use super::config::{InputCoordinates, ModelConfig};
use crate::error::{Error, Result};
use crate::geom::{encode_box, BoxEncoding, OrientedBox};
use crate::nn::Tensor;
use crate::synth::ObjectSample;

/// A fixed-size, centroid-free cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessed {
    pub points: Vec<[f64; 3]>,
    /// The removed centroid, in the input frame.
    pub centroid: [f64; 3],
}

impl Preprocessed {
    /// Rows of per-point features for the network.
    pub fn features(&self, coords: InputCoordinates) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.points.len() * coords.dim());
        for p in &self.points {
            out.extend_from_slice(p);
            if coords == InputCoordinates::WithAbsolute {
                out.extend((0..3).map(|k| p[k] + self.centroid[k]));
            }
        }
        out
    }
}

/// Resamples to exactly `num_points` and subtracts the centroid of the kept
/// points.
///
/// Larger clouds are subsampled without replacement; smaller clouds keep every
/// point and are topped up by drawing with replacement; a cloud of exactly
/// `num_points` is kept as is.
pub fn preprocess(points: &[[f64; 3]], num_points: usize, rng: &mut impl Rng) -> Result<Preprocessed> {
    if points.is_empty() {
        return Err(Error::degenerate("cannot preprocess an empty cloud"));
    }
    if num_points == 0 {
        return Err(Error::config("num_points must be positive"));
    }
    let n = points.len();
    let chosen: Vec<[f64; 3]> = if n > num_points {
        let mut idx = index::sample(rng, n, num_points).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| points[i]).collect()
    } else {
        let mut v = points.to_vec();
        v.extend((n..num_points).map(|_| points[rng.random_range(0..n)]));
        v
    };
    let mut centroid = [0.0; 3];
    for p in &chosen {
        for k in 0..3 {
            centroid[k] += p[k];
        }
    }
    for c in &mut centroid {
        *c /= num_points as f64;
    }
    let points = chosen
        .into_iter()
        .map(|p| [p[0] - centroid[0], p[1] - centroid[1], p[2] - centroid[2]])
        .collect();
    Ok(Preprocessed { points, centroid })
}

/// A training or evaluation example in the network's frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSample {
    pub cloud: Preprocessed,
    /// Annotation translated into the centroid frame.
    pub local_box: OrientedBox<f64>,
    pub encoding: BoxEncoding<f64>,
}

impl PreparedSample {
    pub fn new(sample: &ObjectSample, config: &ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        let cloud = preprocess(&sample.points, config.num_points, rng)?;
        let mut local_box = sample.bbox;
        local_box.cx -= cloud.centroid[0];
        local_box.cy -= cloud.centroid[1];
        local_box.cz -= cloud.centroid[2];
        let encoding = encode_box(&local_box, &config.anchor);
        Ok(Self { cloud, local_box, encoding })
    }

    /// Encoded offsets followed by `cos r`, the recognition network's box input.
    pub fn box_features(&self) -> [f64; 8] {
        let t = self.encoding.offsets();
        [t[0], t[1], t[2], t[3], t[4], t[5], t[6], self.local_box.r.cos()]
    }
}

/// Stacks prepared samples into network inputs.
pub(crate) struct Batch {
    pub points: Tensor,
    pub targets: Tensor,
    pub dirs: Tensor,
    pub box_features: Tensor,
}

impl Batch {
    pub fn new(samples: &[&PreparedSample], coords: InputCoordinates) -> Result<Self> {
        let dim = coords.dim();
        let mut pts = Vec::new();
        let mut rows = 0;
        for s in samples {
            let f = s.cloud.features(coords);
            rows += f.len() / dim;
            pts.extend(f);
        }
        let targets: Vec<[f64; 7]> = samples.iter().map(|s| s.encoding.offsets()).collect();
        let feats: Vec<[f64; 8]> = samples.iter().map(|s| s.box_features()).collect();
        let dirs: Vec<f64> = samples.iter().map(|s| f64::from(s.encoding.dir_bit)).collect();
        Ok(Self {
            points: Tensor::matrix(rows, dim, pts)?,
            targets: Tensor::from_rows(&targets)?,
            dirs: Tensor::matrix(samples.len(), 1, dirs)?,
            box_features: Tensor::from_rows(&feats)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;

    fn mean(points: &[[f64; 3]]) -> [f64; 3] {
        let n = points.len() as f64;
        let mut m = [0.0; 3];
        for p in points {
            for k in 0..3 {
                m[k] += p[k] / n;
            }
        }
        m
    }

    #[test]
    fn exact_size_keeps_points_and_centers() {
        let pts: Vec<[f64; 3]> = (0..512).map(|i| [i as f64, (i * 7 % 13) as f64, 1.5]).collect();
        let out = preprocess(&pts, 512, &mut rng::seeded(0)).unwrap();
        let m = mean(&out.points);
        assert!(m.iter().all(|v| v.abs() < 1e-12));
        for (a, b) in out.points.iter().zip(&pts) {
            for k in 0..3 {
                assert!((a[k] + out.centroid[k] - b[k]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn tiny_cloud_is_repeated() {
        let pts = [[1.0, 2.0, 3.0], [4.0, 0.0, -1.0], [0.5, 0.5, 0.5]];
        let out = preprocess(&pts, 512, &mut rng::seeded(1)).unwrap();
        assert_eq!(out.points.len(), 512);
        for p in &out.points {
            let orig = [p[0] + out.centroid[0], p[1] + out.centroid[1], p[2] + out.centroid[2]];
            assert!(pts.iter().any(|q| (0..3).all(|k| (q[k] - orig[k]).abs() < 1e-12)));
        }
        assert!(preprocess(&[], 512, &mut rng::seeded(1)).is_err());
    }

    #[test]
    fn large_cloud_draws_distinct_indices_deterministically() {
        let pts: Vec<[f64; 3]> = (0..10_000).map(|i| [i as f64, 0.0, 0.0]).collect();
        let a = preprocess(&pts, 512, &mut rng::seeded(5)).unwrap();
        let b = preprocess(&pts, 512, &mut rng::seeded(5)).unwrap();
        assert_eq!(a, b);
        let mut xs: Vec<i64> = a.points.iter().map(|p| (p[0] + a.centroid[0]).round() as i64).collect();
        xs.sort_unstable();
        xs.dedup();
        assert_eq!(xs.len(), 512);
    }

    #[test]
    fn absolute_features_restore_input_frame() {
        let pts = [[1.0, 2.0, 3.0], [3.0, 2.0, 1.0]];
        let out = preprocess(&pts, 2, &mut rng::seeded(0)).unwrap();
        let f = out.features(InputCoordinates::WithAbsolute);
        assert_eq!(f.len(), 12);
        assert_eq!(&f[3..6], &[1.0, 2.0, 3.0]);
        assert_eq!(&f[0..3], &[-1.0, 0.0, 1.0]);
    }

    proptest! {
        #[test]
        fn always_exact_size_and_zero_mean(
            pts in prop::collection::vec((-50.0..50.0f64, -50.0..50.0f64, -3.0..3.0f64), 1..300),
            n in 1usize..200, seed: u64,
        ) {
            let pts: Vec<[f64; 3]> = pts.into_iter().map(|(x, y, z)| [x, y, z]).collect();
            let out = preprocess(&pts, n, &mut rng::seeded(seed)).unwrap();
            prop_assert_eq!(out.points.len(), n);
            for v in mean(&out.points) {
                prop_assert!(v.abs() < 1e-9);
            }
        }
    }
}
