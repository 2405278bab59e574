use rand::Rng;
use serde::{Deserialize, Serialize};

use super::range_image::RangeImage;
use super::scene::ObjectSample;
use crate::error::{Error, Result};
use crate::geom::{clip_polygon, convex_hull_2d, point_in_polygon, Polygon2D};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OcclusionConfig {
    pub range_image_resolution_deg: f64,
    /// Hull vertices are jittered uniformly by up to this many pixels per axis.
    pub jitter_px: f64,
    /// Occluder azimuthal span as a fraction of the target's.
    pub span_fraction: [f64; 2],
    /// Occluder range as a fraction of the target's.
    pub depth_fraction: [f64; 2],
    pub min_survivors: usize,
    /// Centre the occluder so it always covers one end of the target.
    /// Otherwise its centre azimuth is uniform over the target's span.
    pub cover_end: bool,
    /// Per-sample probability of applying the augmentation during training.
    pub probability: f64,
}

impl Default for OcclusionConfig {
    fn default() -> Self {
        Self {
            range_image_resolution_deg: 0.2,
            jitter_px: 2.0,
            span_fraction: [0.3, 0.7],
            depth_fraction: [0.4, 0.8],
            min_survivors: 5,
            cover_end: true,
            probability: 0.5,
        }
    }
}

impl OcclusionConfig {
    pub fn validate(&self) -> Result<()> {
        let range_ok = |r: [f64; 2]| r[0] > 0.0 && r[1] >= r[0];
        if self.range_image_resolution_deg > 0.0
            && self.jitter_px >= 0.0
            && range_ok(self.span_fraction)
            && range_ok(self.depth_fraction)
            && self.depth_fraction[1] < 1.0
            && (0.0..=1.0).contains(&self.probability)
        {
            Ok(())
        } else {
            Err(Error::config("invalid occlusion configuration"))
        }
    }
}

fn az_span(points: &[[f64; 3]]) -> (f64, f64) {
    points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
        let a = p[1].atan2(p[0]);
        (lo.min(a), hi.max(a))
    })
}

fn centroid(points: &[[f64; 3]]) -> [f64; 3] {
    let n = points.len() as f64;
    let mut c = [0.0; 3];
    for p in points {
        for k in 0..3 {
            c[k] += p[k] / n;
        }
    }
    c
}

/// Moves `occluder`'s cloud between the sensor and `target`, scaled so it
/// subtends a random fraction of the target's azimuthal span and the whole
/// of its elevation band. A partial-height occluder would leave the top rows
/// visible, and they alone pin down the target's extent.
pub fn place_occluder(
    target: &ObjectSample,
    occluder: &ObjectSample,
    cfg: &OcclusionConfig,
    rng: &mut impl Rng,
) -> Vec<[f64; 3]> {
    let (t_lo, t_hi) = az_span(&target.points);
    let t_span = (t_hi - t_lo).max(1e-6);
    let frac = rng.random_range(cfg.span_fraction[0]..=cfg.span_fraction[1]);
    let depth = target.distance * rng.random_range(cfg.depth_fraction[0]..=cfg.depth_fraction[1]);
    let az = if cfg.cover_end {
        let half = frac * t_span / 2.0;
        let end = if rng.random_bool(0.5) { t_lo } else { t_hi };
        rng.random_range(end - half..=end + half)
    } else {
        rng.random_range(t_lo..=t_hi)
    };

    let c = centroid(&occluder.points);
    let local: Vec<[f64; 3]> = occluder.points.iter().map(|p| [p[0] - c[0], p[1] - c[1], p[2] - c[2]]).collect();
    let (sa, ca) = az.sin_cos();
    // lateral extent perpendicular to the new line of sight
    let (lat_lo, lat_hi) = local.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
        let lat = -p[0] * sa + p[1] * ca;
        (lo.min(lat), hi.max(lat))
    });
    let width = (lat_hi - lat_lo).max(1e-6);
    let scale = frac * t_span * depth / width;

    let (el_lo, el_hi) = target.points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
        let e = RangeImage::angles(*p).1;
        (lo.min(e), hi.max(e))
    });
    let (z_lo, z_hi) = local.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p[2]), hi.max(p[2])));
    // small margin so the band edges are covered after jitter
    let margin = 0.1 * (el_hi - el_lo) + 2.0 * cfg.range_image_resolution_deg.to_radians();
    let (band_lo, band_hi) = (depth * (el_lo - margin).tan(), depth * (el_hi + margin).tan());
    let z_scale = (band_hi - band_lo) / (z_hi - z_lo).max(1e-6);
    local
        .iter()
        .map(|p| {
            [
                depth * ca + scale * p[0],
                depth * sa + scale * p[1],
                band_lo + z_scale * (p[2] - z_lo),
            ]
        })
        .collect()
}

/// Removes the points of `sample` whose projection falls inside the overlap
/// of `occluder_hull` (pixel coordinates of `image`) and the sample's own
/// projected hull. The box is never touched.
pub fn apply_occluder_polygon(
    sample: &ObjectSample,
    occluder_hull: &Polygon2D<f64>,
    image: &RangeImage,
    min_survivors: usize,
) -> ObjectSample {
    let proj: Vec<[f64; 2]> = sample.points.iter().map(|p| image.project(*p)).collect();
    let Ok(target_hull) = convex_hull_2d(&proj) else {
        return sample.clone();
    };
    let occluded = clip_polygon(occluder_hull, &target_hull);
    if occluded.len() < 3 || occluded.area() <= 0.0 {
        return sample.clone();
    }
    let survivors: Vec<[f64; 3]> = sample
        .points
        .iter()
        .zip(&proj)
        .filter(|(_, q)| !point_in_polygon(**q, &occluded))
        .map(|(p, _)| *p)
        .collect();
    if survivors.len() < min_survivors || survivors.len() == sample.points.len() {
        return sample.clone();
    }
    let mut out = sample.clone();
    out.points = survivors;
    out.recompute_occlusion();
    out
}

/// Occlusion-driven augmentation: a corpus object is placed in front of the
/// sample, both are projected to a range image, and sample points under the
/// jittered occluder hull are deleted.
pub fn occlusion_augment(
    sample: &ObjectSample,
    occluder: &ObjectSample,
    cfg: &OcclusionConfig,
    rng: &mut impl Rng,
) -> Result<ObjectSample> {
    if sample.points.len() < 8 {
        return Err(Error::degenerate(format!(
            "occlusion needs at least 8 points, got {}",
            sample.points.len()
        )));
    }
    if occluder.points.len() < 3 {
        return Ok(sample.clone());
    }
    let placed = place_occluder(sample, occluder, cfg, rng);
    let image = RangeImage::covering(&[&sample.points, &placed], cfg.range_image_resolution_deg)?;
    let occ_proj: Vec<[f64; 2]> = placed.iter().map(|p| image.project(*p)).collect();
    let Ok(hull) = convex_hull_2d(&occ_proj) else {
        return Ok(sample.clone());
    };
    let j = cfg.jitter_px;
    let jittered: Vec<[f64; 2]> = hull
        .vertices
        .iter()
        .map(|v| {
            if j > 0.0 {
                [v[0] + rng.random_range(-j..=j), v[1] + rng.random_range(-j..=j)]
            } else {
                *v
            }
        })
        .collect();
    let Ok(hull) = convex_hull_2d(&jittered) else {
        return Ok(sample.clone());
    };
    Ok(apply_occluder_polygon(sample, &hull, &image, cfg.min_survivors))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::OrientedBox;
    use crate::rng;

    /// A 2 m x 1 m wall of points 10 m ahead on an 11 x 6 grid.
    fn wall() -> ObjectSample {
        let mut points = Vec::new();
        for i in 0..11 {
            for k in 0..6 {
                points.push([10.0, -1.0 + 0.2 * i as f64, -0.5 + 0.2 * k as f64]);
            }
        }
        let n = points.len();
        ObjectSample {
            points,
            bbox: OrientedBox::new(12.0, 0.0, 0.0, 2.0, 4.0, 1.0, 0.0).unwrap(),
            occlusion_fraction: 0.0,
            distance: 12.0,
            seed: 1,
            original_points: n,
        }
    }

    #[test]
    fn occluder_outside_hull_changes_nothing() {
        let s = wall();
        let img = RangeImage::covering(&[&s.points], 0.2).unwrap();
        let far = Polygon2D::new(vec![[1000.0, 1000.0], [1010.0, 1000.0], [1010.0, 1010.0]]);
        assert_eq!(apply_occluder_polygon(&s, &far, &img, 5), s);
    }

    #[test]
    fn left_half_occluder_leaves_right_half() {
        let s = wall();
        let img = RangeImage::covering(&[&s.points], 0.2).unwrap();
        // y = 0 projects to this column; larger u is further left (+y)
        let mid = img.project([10.0, 0.0, 0.0])[0];
        let slightly = 0.1 * (0.2f64 / 10.0).atan() / img.resolution;
        let u0 = mid + slightly;
        let left = Polygon2D::new(vec![[u0, -1e3], [1e4, -1e3], [1e4, 1e3], [u0, 1e3]]);
        let out = apply_occluder_polygon(&s, &left, &img, 5);
        assert_eq!(out.points.len(), 36);
        assert!(out.points.iter().all(|p| p[1] <= 1e-9));
        assert_eq!(out.bbox, s.bbox);
        assert_eq!(out.occlusion_fraction, 1.0 - 36.0 / 66.0);
    }

    #[test]
    fn too_few_survivors_rejects() {
        let s = wall();
        let img = RangeImage::covering(&[&s.points], 0.2).unwrap();
        let all = Polygon2D::new(vec![[-1e4, -1e4], [1e4, -1e4], [1e4, 1e4], [-1e4, 1e4]]);
        assert_eq!(apply_occluder_polygon(&s, &all, &img, 5), s);
    }

    #[test]
    fn augment_keeps_box_and_bookkeeping() {
        let s = wall();
        let mut removed_any = false;
        for seed in 0..40 {
            let out = occlusion_augment(&s, &wall(), &OcclusionConfig::default(), &mut rng::seeded(seed)).unwrap();
            assert_eq!(out.bbox.to_array().map(f64::to_bits), s.bbox.to_array().map(f64::to_bits));
            assert!(out.points.len() >= 5);
            assert!(out.points.iter().all(|p| s.points.contains(p)));
            assert_eq!(out.occlusion_fraction, 1.0 - out.points.len() as f64 / s.original_points as f64);
            removed_any |= out.points.len() < s.points.len();
        }
        assert!(removed_any);
    }

    #[test]
    fn small_cloud_is_an_error() {
        let mut s = wall();
        s.points.truncate(7);
        assert!(occlusion_augment(&s, &wall(), &OcclusionConfig::default(), &mut rng::seeded(0)).is_err());
    }
}
