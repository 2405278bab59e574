use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::occlusion::{occlusion_augment, OcclusionConfig};
use crate::error::{Error, Result};
use crate::geom::OrientedBox;
use crate::rng;
use crate::scalar::{wrap_angle, wrap_half_turn};

/// One annotated object as seen by the sensor at the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectSample {
    /// Sensor-frame points (m).
    pub points: Vec<[f64; 3]>,
    pub bbox: OrientedBox<f64>,
    /// `1 - points.len() / original_points`.
    pub occlusion_fraction: f64,
    /// Horizontal range from the sensor to the box center (m).
    pub distance: f64,
    pub seed: u64,
    /// Points the object would have had without any occlusion.
    pub original_points: usize,
}

impl ObjectSample {
    pub fn recompute_occlusion(&mut self) {
        self.occlusion_fraction = if self.original_points == 0 {
            0.0
        } else {
            1.0 - self.points.len() as f64 / self.original_points as f64
        };
    }
}

/// Truncated normal size distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SizeDist {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl SizeDist {
    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        if self.std <= 0.0 {
            return self.mean.clamp(self.min, self.max);
        }
        let n = Normal::new(self.mean, self.std).expect("std > 0");
        n.sample(rng).clamp(self.min, self.max)
    }
}

/// One-to-many families: one partial cloud annotated with several lengths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FamilyConfig {
    /// Fraction of the corpus emitted as family members.
    pub fraction: f64,
    pub members: usize,
    /// Relative length spread `(l_max - l_min) / l_min` is drawn from this range.
    pub length_spread: [f64; 2],
    /// Depth of the kept slab behind the shared near end, as a fraction of
    /// the shortest member's length. Small values leave only the end face.
    pub visible_depth: f64,
}

impl Default for FamilyConfig {
    fn default() -> Self {
        Self {
            fraction: 0.3,
            members: 3,
            length_spread: [0.25, 0.6],
            visible_depth: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub num_objects: usize,
    /// Sensor height above the ground plane (m); the sensor sits at the origin.
    pub sensor_height: f64,
    pub distance_range: [f64; 2],
    /// Azimuth of the box center, radians.
    pub azimuth_range: [f64; 2],
    /// Absolute yaw, radians.
    pub yaw_range: [f64; 2],
    /// Report yaw in `(-pi/2, pi/2]`. The simulated boxes are front/back
    /// symmetric, so otherwise `sin r` would flip sign under a half turn that
    /// leaves the cloud unchanged.
    pub canonical_heading: bool,
    pub width: SizeDist,
    pub length: SizeDist,
    pub height: SizeDist,
    /// Beam spacing (azimuth, elevation) in degrees.
    pub angular_resolution_deg: [f64; 2],
    pub range_noise_std: f64,
    pub families: FamilyConfig,
    /// Fraction of the plain objects that are occluded by other corpus objects.
    pub occluded_fraction: f64,
    /// Inclusive range of occluders stacked in front of each occluded object.
    pub occluders: [usize; 2],
    pub occlusion: OcclusionConfig,
    pub max_attempts: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_objects: 500,
            sensor_height: 1.73,
            distance_range: [6.0, 30.0],
            azimuth_range: [-0.7, 0.7],
            yaw_range: [-std::f64::consts::FRAC_PI_4, std::f64::consts::FRAC_PI_4],
            canonical_heading: true,
            width: SizeDist { mean: 1.63, std: 0.08, min: 1.35, max: 2.0 },
            length: SizeDist { mean: 3.9, std: 0.35, min: 3.0, max: 5.0 },
            height: SizeDist { mean: 1.53, std: 0.08, min: 1.3, max: 1.8 },
            angular_resolution_deg: [0.2, 0.4],
            range_noise_std: 0.01,
            families: FamilyConfig::default(),
            occluded_fraction: 0.4,
            occluders: [1, 4],
            occlusion: OcclusionConfig::default(),
            max_attempts: 50,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.num_objects > 0
            && self.distance_range[0] > 0.0
            && self.distance_range[1] >= self.distance_range[0]
            && self.angular_resolution_deg.iter().all(|r| *r > 0.0)
            && (0.0..=1.0).contains(&self.families.fraction)
            && (0.0..=1.0).contains(&self.occluded_fraction)
            && self.families.members >= 2
            && self.families.visible_depth > 0.0
            && self.families.length_spread[0] >= 0.0
            && self.families.length_spread[1] >= self.families.length_spread[0]
            && self.occluders[0] >= 1
            && self.occluders[1] >= self.occluders[0]
            && self.max_attempts > 0;
        if ok {
            self.occlusion.validate()
        } else {
            Err(Error::config("invalid synth configuration"))
        }
    }
}

fn uniform(rng: &mut impl Rng, r: [f64; 2]) -> f64 {
    if r[1] > r[0] {
        rng.random_range(r[0]..r[1])
    } else {
        r[0]
    }
}

/// Draws a ground-standing box.
pub fn sample_box(cfg: &SynthConfig, rng: &mut impl Rng) -> OrientedBox<f64> {
    let d = uniform(rng, cfg.distance_range);
    let az = uniform(rng, cfg.azimuth_range);
    let w = cfg.width.sample(rng);
    let l = cfg.length.sample(rng);
    let h = cfg.height.sample(rng);
    let mut yaw = uniform(rng, cfg.yaw_range);
    if cfg.canonical_heading {
        yaw = wrap_half_turn(yaw);
    }
    OrientedBox::new(d * az.cos(), d * az.sin(), -cfg.sensor_height + h / 2.0, w, l, h, yaw)
        .expect("sampled sizes are positive")
}

/// Distance along a unit ray from the origin to the first face of `b`.
fn ray_box_hit(b: &OrientedBox<f64>, dir: [f64; 3]) -> Option<f64> {
    let o = b.to_local([0.0, 0.0, 0.0]);
    let (s, c) = b.r.sin_cos();
    let d = [dir[0] * c + dir[1] * s, -dir[0] * s + dir[1] * c, dir[2]];
    let half = [b.l / 2.0, b.w / 2.0, b.h / 2.0];
    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    for k in 0..3 {
        if d[k].abs() < 1e-15 {
            if o[k].abs() > half[k] {
                return None;
            }
            continue;
        }
        let t1 = (-half[k] - o[k]) / d[k];
        let t2 = (half[k] - o[k]) / d[k];
        t_near = t_near.max(t1.min(t2));
        t_far = t_far.min(t1.max(t2));
    }
    (t_near <= t_far && t_near > 0.0).then_some(t_near)
}

fn angles_of(p: [f64; 3]) -> (f64, f64) {
    let az = p[1].atan2(p[0]);
    let el = p[2].atan2((p[0] * p[0] + p[1] * p[1]).sqrt());
    (az, el)
}

/// Angular window of a box's corners; assumes the box does not straddle
/// the azimuth wrap behind the sensor.
fn angular_window(b: &OrientedBox<f64>) -> (f64, f64, f64, f64) {
    let (lo, hi) = b.z_range();
    let mut az = (f64::INFINITY, f64::NEG_INFINITY);
    let mut el = (f64::INFINITY, f64::NEG_INFINITY);
    for [x, y] in b.bev_corners() {
        for z in [lo, hi] {
            let (a, e) = angles_of([x, y, z]);
            az = (az.0.min(a), az.1.max(a));
            el = (el.0.min(e), el.1.max(e));
        }
    }
    (az.0, az.1, el.0, el.1)
}

/// Casts jittered beams over the box's angular window and returns the hits
/// on the sensor-facing surface, plus the beam directions that hit.
///
/// Each beam falls uniformly inside its grid cell, so the expected hit count
/// is the box's solid angle divided by the cell's.
pub fn cast_box(
    b: &OrientedBox<f64>,
    cfg: &SynthConfig,
    rng: &mut impl Rng,
) -> Vec<([f64; 3], [f64; 3])> {
    let res_az = cfg.angular_resolution_deg[0].to_radians();
    let res_el = cfg.angular_resolution_deg[1].to_radians();
    let (az0, az1, el0, el1) = angular_window(b);
    let i0 = (az0 / res_az).floor() as i64;
    let i1 = (az1 / res_az).ceil() as i64;
    let j0 = (el0 / res_el).floor() as i64;
    let j1 = (el1 / res_el).ceil() as i64;
    let noise = (cfg.range_noise_std > 0.0).then(|| Normal::new(0.0, cfg.range_noise_std).unwrap());
    let mut out = Vec::new();
    for j in j0..j1 {
        for i in i0..i1 {
            let az = (i as f64 + rng.random::<f64>()) * res_az;
            let el = (j as f64 + rng.random::<f64>()) * res_el;
            let dir = [el.cos() * az.cos(), el.cos() * az.sin(), el.sin()];
            if let Some(t) = ray_box_hit(b, dir) {
                let t = t + noise.map_or(0.0, |n| n.sample(rng));
                out.push(([dir[0] * t, dir[1] * t, dir[2] * t], dir));
            }
        }
    }
    out
}

fn horizontal_distance(b: &OrientedBox<f64>) -> f64 {
    (b.cx * b.cx + b.cy * b.cy).sqrt()
}

fn single_object(cfg: &SynthConfig, seed: u64) -> Result<ObjectSample> {
    let mut rng = rng::seeded(seed);
    for _ in 0..cfg.max_attempts {
        let b = sample_box(cfg, &mut rng);
        let points: Vec<[f64; 3]> = cast_box(&b, cfg, &mut rng).into_iter().map(|(p, _)| p).collect();
        if points.is_empty() {
            continue;
        }
        let n = points.len();
        return Ok(ObjectSample {
            points,
            bbox: b,
            occlusion_fraction: 0.0,
            distance: horizontal_distance(&b),
            seed,
            original_points: n,
        });
    }
    Err(Error::degenerate("no visible surface after max_attempts resamples"))
}

/// A family of annotations sharing one partial cloud.
///
/// The longest member is cast at an oblique heading; only the returns within
/// a thin slab behind its near end are kept, as if everything further back
/// were hidden, so the cloud is essentially the end face. Every member shares
/// the near end and extends away from the sensor, so the kept points lie on
/// the surface of every member. Each member's `original_points` is what a
/// fresh cast against its own box returns, so longer members are more occluded.
fn family(cfg: &SynthConfig, seed: u64, members: usize) -> Result<Vec<ObjectSample>> {
    let mut rng = rng::seeded(seed);
    for _ in 0..cfg.max_attempts {
        let mut short = sample_box(cfg, &mut rng);
        let los = short.cy.atan2(short.cx);
        let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let flip = if rng.random_bool(0.5) && !cfg.canonical_heading { std::f64::consts::PI } else { 0.0 };
        short.r = (los + side * rng.random_range(0.3..1.0)).clamp(cfg.yaw_range[0], cfg.yaw_range[1]) + flip;
        short.r = if cfg.canonical_heading { wrap_half_turn(short.r) } else { wrap_angle(short.r) };
        let spread = uniform(&mut rng, cfg.families.length_spread);
        let l_min = cfg.length.min.max(short.l / (1.0 + spread / 2.0));
        short.l = l_min;
        // +1 when the heading points away from the sensor
        let away = if short.r.cos() * short.cx + short.r.sin() * short.cy >= 0.0 { 1.0 } else { -1.0 };
        let (hx, hy) = (away * short.r.cos(), away * short.r.sin());
        let extend = |l: f64| -> OrientedBox<f64> {
            let mut b = short;
            let shift = (l - l_min) / 2.0;
            b.l = l;
            b.cx += shift * hx;
            b.cy += shift * hy;
            b
        };
        let longest = extend(l_min * (1.0 + spread));
        let keep = cfg.families.visible_depth * l_min;
        let points: Vec<[f64; 3]> = cast_box(&longest, cfg, &mut rng)
            .into_iter()
            .map(|(p, _)| p)
            .filter(|p| away * short.to_local(*p)[0] <= -l_min / 2.0 + keep)
            .collect();
        if points.len() < 8 {
            continue;
        }
        let mut out = Vec::with_capacity(members);
        for m in 0..members {
            let frac = m as f64 / (members - 1) as f64;
            let b = extend(l_min * (1.0 + spread * frac));
            let member_seed = rng::child_seed(seed, m as u64);
            let full = cast_box(&b, cfg, &mut rng::seeded(member_seed)).len();
            let mut sample = ObjectSample {
                points: points.clone(),
                bbox: b,
                occlusion_fraction: 0.0,
                distance: horizontal_distance(&b),
                seed: member_seed,
                original_points: full.max(points.len()),
            };
            sample.recompute_occlusion();
            out.push(sample);
        }
        return Ok(out);
    }
    Err(Error::degenerate("family generation found no visible surface"))
}

/// Generates the corpus described by `cfg`, reproducibly from `seed`.
///
/// Order: plain objects, then family members (grouped), with a random subset
/// of the plain objects afterwards occluded by other corpus objects.
pub fn generate_scene_objects(cfg: &SynthConfig, seed: u64) -> Result<Vec<ObjectSample>> {
    cfg.validate()?;
    let n = cfg.num_objects;
    let members = cfg.families.members;
    let n_families = ((n as f64 * cfg.families.fraction) / members as f64).floor() as usize;
    let n_plain = n - n_families * members;

    let mut objects = Vec::with_capacity(n);
    for i in 0..n_plain {
        objects.push(single_object(cfg, rng::child_seed(seed, i as u64))?);
    }
    for f in 0..n_families {
        let fam_seed = rng::child_seed(seed ^ 0xFA11_1E55, f as u64);
        objects.extend(family(cfg, fam_seed, members)?);
    }

    let mut occ_rng = rng::stream(seed, 0x0CC1);
    let n_occluded = (n_plain as f64 * cfg.occluded_fraction).round() as usize;
    let mut targets: Vec<usize> = (0..n_plain).collect();
    for i in (1..targets.len()).rev() {
        let j = occ_rng.random_range(0..=i);
        targets.swap(i, j);
    }
    targets.truncate(n_occluded);
    targets.sort_unstable();
    for &t in &targets {
        if n_plain < 2 {
            break;
        }
        let count = occ_rng.random_range(cfg.occluders[0]..=cfg.occluders[1]);
        let mut obj_rng = rng::stream(seed, 0x0CC2_0000 + t as u64);
        for _ in 0..count {
            if objects[t].points.len() < 8 {
                break;
            }
            let mut src = occ_rng.random_range(0..n_plain - 1);
            if src >= t {
                src += 1;
            }
            let occluded = occlusion_augment(&objects[t], &objects[src], &cfg.occlusion, &mut obj_rng)?;
            objects[t] = occluded;
        }
    }
    Ok(objects)
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].partial_cmp(&v[j]).unwrap_or(std::cmp::Ordering::Equal));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for k in i..=j {
                r[idx[k]] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        0.0
    } else {
        cov / (va * vb).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ahead(cx: f64) -> OrientedBox<f64> {
        OrientedBox::new(cx, 0.0, -1.73 + 0.75, 1.6, 4.0, 1.5, 0.0).unwrap()
    }

    #[test]
    fn axis_aligned_box_ahead_shows_rear_and_roof_only() {
        let cfg = SynthConfig { range_noise_std: 0.0, ..SynthConfig::default() };
        let b = ahead(12.0);
        let hits = cast_box(&b, &cfg, &mut rng::seeded(1));
        assert!(!hits.is_empty());
        let near_x = b.cx - b.l / 2.0;
        let roof = b.cz + b.h / 2.0;
        let mut rear = 0;
        let mut top = 0;
        for (p, _) in &hits {
            let on_rear = (p[0] - near_x).abs() < 1e-9;
            let on_roof = (p[2] - roof).abs() < 1e-9;
            assert!(on_rear || on_roof, "{p:?}");
            rear += usize::from(on_rear);
            top += usize::from(on_roof);
        }
        assert!(rear > 0 && top > 0);
    }

    #[test]
    fn point_count_falls_with_squared_distance() {
        // centred at sensor height, only the fronto-parallel rear face (at range d) is visible
        let cfg = SynthConfig::default();
        let level = |d: f64| OrientedBox::new(d + 2.0, 0.0, 0.0, 1.6, 4.0, 1.5, 0.0).unwrap();
        let count = |d: f64| -> f64 {
            (0..20)
                .map(|s| cast_box(&level(d), &cfg, &mut rng::seeded(100 + s)).len() as f64)
                .sum::<f64>()
        };
        let ratio = count(20.0) / count(10.0);
        assert!((ratio - 0.25).abs() < 0.025, "ratio {ratio}");
    }

    #[test]
    fn deterministic_from_seed() {
        let cfg = SynthConfig { num_objects: 40, ..SynthConfig::default() };
        let a = generate_scene_objects(&cfg, 7).unwrap();
        let b = generate_scene_objects(&cfg, 7).unwrap();
        assert_eq!(a, b);
        let c = generate_scene_objects(&cfg, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn corpus_bookkeeping_and_containment() {
        let cfg = SynthConfig { num_objects: 60, ..SynthConfig::default() };
        let objs = generate_scene_objects(&cfg, 3).unwrap();
        assert_eq!(objs.len(), 60);
        for o in &objs {
            let expected = 1.0 - o.points.len() as f64 / o.original_points as f64;
            assert_eq!(o.occlusion_fraction, expected);
            let reach = 1.5 * o.bbox.diagonal();
            for p in &o.points {
                let d = ((p[0] - o.bbox.cx).powi(2) + (p[1] - o.bbox.cy).powi(2) + (p[2] - o.bbox.cz).powi(2)).sqrt();
                assert!(d <= reach);
            }
        }
        assert!(objs.iter().any(|o| o.occlusion_fraction > 0.3));
    }

    #[test]
    fn families_share_clouds_with_different_lengths() {
        let cfg = SynthConfig { num_objects: 60, ..SynthConfig::default() };
        let objs = generate_scene_objects(&cfg, 5).unwrap();
        let mut found = false;
        for (i, a) in objs.iter().enumerate() {
            for b in &objs[i + 1..] {
                if a.points == b.points && (a.bbox.l / b.bbox.l).max(b.bbox.l / a.bbox.l) >= 1.2 {
                    found = true;
                }
            }
        }
        assert!(found);
    }

    #[test]
    fn spearman_basics() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
        assert!((spearman(&[0.0, 0.0, 1.0, 2.0], &[1.0, 1.0, 2.0, 3.0]) - 1.0).abs() < 1e-12);
    }
}
