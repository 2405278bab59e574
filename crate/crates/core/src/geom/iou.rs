use serde::{Deserialize, Serialize};

use super::boxes::OrientedBox;
use super::polygon::{clip_polygon, Polygon2D};
use crate::scalar::Real;

/// Intersections smaller than this (m^2) are treated as empty.
pub const AREA_EPS: f64 = 1e-12;

/// Which overlap measure a consumer should use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IouKind {
    #[default]
    Bev,
    ThreeD,
}

impl IouKind {
    pub fn eval<T: Real>(self, a: &OrientedBox<T>, b: &OrientedBox<T>) -> T {
        match self {
            IouKind::Bev => iou_bev(a, b),
            IouKind::ThreeD => iou_3d(a, b),
        }
    }
}

fn footprint<T: Real>(b: &OrientedBox<T>) -> Polygon2D<T> {
    Polygon2D::new(b.bev_corners().to_vec())
}

/// Area of the overlap of two yaw-rotated footprints.
pub fn bev_intersection_area<T: Real>(a: &OrientedBox<T>, b: &OrientedBox<T>) -> T {
    // cheap reject on circumscribed circles
    let dx = a.cx - b.cx;
    let dy = a.cy - b.cy;
    let ra = (a.l * a.l + a.w * a.w).sqrt() * T::half();
    let rb = (b.l * b.l + b.w * b.w).sqrt() * T::half();
    if dx * dx + dy * dy > (ra + rb) * (ra + rb) {
        return T::zero();
    }
    let area = clip_polygon(&footprint(a), &footprint(b)).area();
    if area < T::lit(AREA_EPS) {
        T::zero()
    } else {
        area
    }
}

pub fn iou_bev<T: Real>(a: &OrientedBox<T>, b: &OrientedBox<T>) -> T {
    let inter = bev_intersection_area(a, b);
    if inter == T::zero() {
        return T::zero();
    }
    let union = a.w * a.l + b.w * b.l - inter;
    (inter / union).max(T::zero()).min(T::one())
}

pub fn iou_3d<T: Real>(a: &OrientedBox<T>, b: &OrientedBox<T>) -> T {
    let (a_lo, a_hi) = a.z_range();
    let (b_lo, b_hi) = b.z_range();
    let dz = a_hi.min(b_hi) - a_lo.max(b_lo);
    if dz <= T::zero() {
        return T::zero();
    }
    let inter_area = bev_intersection_area(a, b);
    if inter_area == T::zero() {
        return T::zero();
    }
    let inter = inter_area * dz;
    let union = a.volume() + b.volume() - inter;
    (inter / union).max(T::zero()).min(T::one())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn unit(cx: f64, cy: f64, cz: f64, r: f64) -> OrientedBox<f64> {
        OrientedBox::new(cx, cy, cz, 1.0, 1.0, 1.0, r).unwrap()
    }

    #[test]
    fn identical_boxes() {
        let a: OrientedBox<f64> = OrientedBox::new(1.0, -2.0, 0.3, 1.7, 4.1, 1.5, 0.8).unwrap();
        assert!((iou_bev(&a, &a) - 1.0).abs() < 1e-12);
        assert!((iou_3d(&a, &a) - 1.0).abs() < 1e-12);
        let mut flipped = a;
        flipped.r = a.r - PI;
        assert!((iou_bev(&a, &flipped) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn far_apart() {
        assert_eq!(iou_bev(&unit(0.0, 0.0, 0.0, 0.0), &unit(100.0, 0.0, 0.0, 0.0)), 0.0);
    }

    #[test]
    fn half_offset_is_one_third() {
        let a = unit(0.0, 0.0, 0.0, 0.0);
        let b = unit(0.5, 0.0, 0.0, 0.0);
        assert!((iou_bev(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
        assert!((iou_3d(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn no_vertical_overlap() {
        let a = unit(0.0, 0.0, 0.0, 0.0);
        let b = unit(0.0, 0.0, 2.0, 0.0);
        assert_eq!(iou_3d(&a, &b), 0.0);
    }

    #[test]
    fn touching_edges_is_zero() {
        let a = unit(0.0, 0.0, 0.0, 0.0);
        let b = unit(1.0, 0.0, 0.0, 0.0);
        assert_eq!(iou_bev(&a, &b), 0.0);
    }

    #[test]
    fn rotated_square_in_square() {
        // a unit square rotated 45 deg inside a 2x2 square
        let a = OrientedBox::new(0.0, 0.0, 0.0, 2.0, 2.0, 1.0, 0.0).unwrap();
        let b = unit(0.0, 0.0, 0.0, PI / 4.0);
        assert!((iou_bev(&a, &b) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn kind_switch() {
        let a = unit(0.0, 0.0, 0.0, 0.0);
        let b = unit(0.5, 0.0, 0.5, 0.0);
        assert!((IouKind::Bev.eval(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
        assert!(IouKind::ThreeD.eval(&a, &b) < IouKind::Bev.eval(&a, &b));
    }
}
