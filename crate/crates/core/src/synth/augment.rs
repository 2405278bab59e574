use rand::Rng;

use super::scene::ObjectSample;
use crate::geom::OrientedBox;
use crate::scalar::{wrap_angle, wrap_half_turn};

/// Global augmentation parameters, applied as flip, then scale, then rotation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    /// Mirror across the sensor's forward (x) axis: y -> -y.
    pub flip: bool,
    pub scale: f64,
    /// Rotation about the vertical axis through the sensor, radians.
    pub rotation: f64,
}

impl AugmentParams {
    pub const IDENTITY: Self = Self { flip: false, scale: 1.0, rotation: 0.0 };

    pub fn sample(rng: &mut impl Rng) -> Self {
        Self {
            flip: rng.random_bool(0.5),
            scale: rng.random_range(0.95..=1.05),
            rotation: rng.random_range(-std::f64::consts::FRAC_PI_4..=std::f64::consts::FRAC_PI_4),
        }
    }

    fn point(&self, p: [f64; 3]) -> [f64; 3] {
        let y = if self.flip { -p[1] } else { p[1] };
        let (x, y, z) = (p[0] * self.scale, y * self.scale, p[2] * self.scale);
        let (s, c) = self.rotation.sin_cos();
        [c * x - s * y, s * x + c * y, z]
    }

    fn bbox(&self, b: &OrientedBox<f64>) -> OrientedBox<f64> {
        let [cx, cy, cz] = self.point([b.cx, b.cy, b.cz]);
        let yaw = if self.flip { -b.r } else { b.r };
        OrientedBox {
            cx,
            cy,
            cz,
            w: b.w * self.scale,
            l: b.l * self.scale,
            h: b.h * self.scale,
            r: wrap_angle(yaw + self.rotation),
        }
    }
}

/// Applies `params` to both points and box.
pub fn apply_standard(sample: &ObjectSample, params: &AugmentParams) -> ObjectSample {
    let mut out = sample.clone();
    out.points = sample.points.iter().map(|p| params.point(*p)).collect();
    out.bbox = params.bbox(&sample.bbox);
    out.distance = (out.bbox.cx * out.bbox.cx + out.bbox.cy * out.bbox.cy).sqrt();
    out
}

/// Random flip, scale in [0.95, 1.05] and rotation in [-pi/4, pi/4].
pub fn standard_augment(sample: &ObjectSample, rng: &mut impl Rng) -> ObjectSample {
    apply_standard(sample, &AugmentParams::sample(rng))
}

/// Like [`standard_augment`] for canonical-heading labels: the rotation is
/// drawn from the part of [-pi/4, pi/4] that keeps the heading at least
/// `margin` inside (-pi/2, pi/2], and the result is wrapped into that range.
/// Rotating across the wrap would flip `sin r` between two near-identical
/// clouds.
pub fn standard_augment_canonical(sample: &ObjectSample, margin: f64, rng: &mut impl Rng) -> ObjectSample {
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};
    let mut params = AugmentParams::sample(rng);
    let yaw = wrap_half_turn(if params.flip { -sample.bbox.r } else { sample.bbox.r });
    let limit = FRAC_PI_2 - margin;
    let lo = (-limit - yaw).max(-FRAC_PI_4);
    let hi = (limit - yaw).min(FRAC_PI_4);
    params.rotation = if lo < hi {
        rng.random_range(lo..=hi)
    } else {
        0.0
    };
    let mut out = apply_standard(sample, &params);
    out.bbox.r = wrap_half_turn(out.bbox.r);
    out
}
