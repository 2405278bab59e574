use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Ordered vertex list in a planar frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polygon2D<T> {
    pub vertices: Vec<[T; 2]>,
}

impl<T: Real> Polygon2D<T> {
    pub fn new(vertices: Vec<[T; 2]>) -> Self {
        Self { vertices }
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn area(&self) -> T {
        polygon_area(&self.vertices).abs()
    }

    /// Iterates over `(start, end)` of every edge, closing the loop.
    pub fn edges(&self) -> impl Iterator<Item = ([T; 2], [T; 2])> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }
}

#[inline]
fn cross<T: Real>(o: [T; 2], a: [T; 2], b: [T; 2]) -> T {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Signed shoelace area, positive for counter-clockwise order.
pub fn polygon_area<T: Real>(v: &[[T; 2]]) -> T {
    let n = v.len();
    if n < 3 {
        return T::zero();
    }
    let mut acc = T::zero();
    for i in 0..n {
        let j = (i + 1) % n;
        acc = acc + v[i][0] * v[j][1] - v[j][0] * v[i][1];
    }
    acc * T::half()
}

/// Counter-clockwise, strictly convex hull (monotone chain).
///
/// Collinear boundary points are dropped, so every hull vertex is a corner.
pub fn convex_hull_2d<T: Real>(points: &[[T; 2]]) -> Result<Polygon2D<T>> {
    if points.len() < 3 {
        return Err(Error::degenerate(format!(
            "convex hull needs at least 3 points, got {}",
            points.len()
        )));
    }
    let mut pts: Vec<[T; 2]> = points.to_vec();
    pts.sort_by(|a, b| {
        a[0].partial_cmp(&b[0])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a[1].partial_cmp(&b[1]).unwrap_or(std::cmp::Ordering::Equal))
    });
    pts.dedup();

    let mut hull: Vec<[T; 2]> = Vec::with_capacity(2 * pts.len());
    for &p in &pts {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= T::zero() {
            hull.pop();
        }
        hull.push(p);
    }
    let lower_len = hull.len() + 1;
    for &p in pts.iter().rev().skip(1) {
        while hull.len() >= lower_len
            && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= T::zero()
        {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();

    if hull.len() < 3 {
        return Err(Error::degenerate("all points are collinear"));
    }
    Ok(Polygon2D::new(hull))
}

fn on_segment<T: Real>(p: [T; 2], a: [T; 2], b: [T; 2], eps: T) -> bool {
    let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
    if cross(a, b, p).abs() > eps * (len + T::one()) {
        return false;
    }
    let lo_x = a[0].min(b[0]) - eps;
    let hi_x = a[0].max(b[0]) + eps;
    let lo_y = a[1].min(b[1]) - eps;
    let hi_y = a[1].max(b[1]) + eps;
    p[0] >= lo_x && p[0] <= hi_x && p[1] >= lo_y && p[1] <= hi_y
}

/// Even-odd containment; points on the boundary count as inside.
pub fn point_in_polygon<T: Real>(p: [T; 2], poly: &Polygon2D<T>) -> bool {
    if poly.len() < 3 {
        return false;
    }
    let eps = T::lit(1e-12);
    let mut inside = false;
    for (a, b) in poly.edges() {
        if on_segment(p, a, b, eps) {
            return true;
        }
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x_cross = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
            if p[0] < x_cross {
                inside = !inside;
            }
        }
    }
    inside
}

fn line_intersection<T: Real>(p: [T; 2], q: [T; 2], a: [T; 2], b: [T; 2]) -> [T; 2] {
    let cp = cross(a, b, p);
    let cq = cross(a, b, q);
    let denom = cp - cq;
    if denom == T::zero() {
        return q;
    }
    let t = cp / denom;
    [p[0] + (q[0] - p[0]) * t, p[1] + (q[1] - p[1]) * t]
}

/// Sutherland-Hodgman clipping of `subject` against a convex,
/// counter-clockwise `clip` polygon.
pub fn clip_polygon<T: Real>(subject: &Polygon2D<T>, clip: &Polygon2D<T>) -> Polygon2D<T> {
    let mut output = subject.vertices.clone();
    for (a, b) in clip.edges() {
        if output.is_empty() {
            break;
        }
        let input = std::mem::take(&mut output);
        let n = input.len();
        for i in 0..n {
            let cur = input[i];
            let prev = input[(i + n - 1) % n];
            let cur_in = cross(a, b, cur) >= T::zero();
            let prev_in = cross(a, b, prev) >= T::zero();
            if cur_in {
                if !prev_in {
                    output.push(line_intersection(prev, cur, a, b));
                }
                output.push(cur);
            } else if prev_in {
                output.push(line_intersection(prev, cur, a, b));
            }
        }
    }
    Polygon2D::new(output)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;
    use rand::Rng;

    fn unit_square() -> Vec<[f64; 2]> {
        vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]
    }

    #[test]
    fn square_with_center() {
        let mut pts = unit_square();
        pts.push([0.5, 0.5]);
        let hull = convex_hull_2d(&pts).unwrap();
        assert_eq!(hull.len(), 4);
        for c in unit_square() {
            assert!(hull.vertices.contains(&c));
        }
        assert!(polygon_area(&hull.vertices) > 0.0);
    }

    #[test]
    fn triangle_is_its_own_hull() {
        let tri: Vec<[f64; 2]> = vec![[0.0, 0.0], [2.0, 0.0], [0.0, 1.0]];
        let hull = convex_hull_2d(&tri).unwrap();
        assert_eq!(hull.len(), 3);
        assert!((hull.area() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(convex_hull_2d(&[[0.0, 0.0], [1.0, 1.0]]).is_err());
        assert!(convex_hull_2d(&[[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0]]).is_err());
    }

    #[test]
    fn containment_basics() {
        let tri = Polygon2D::new(vec![[0.0, 0.0], [3.0, 0.0], [0.0, 3.0]]);
        assert!(point_in_polygon([1.0, 1.0], &tri));
        // circumradius of this triangle is 3/sqrt(2); twice that from the centroid is outside
        let r = 2.0 * 3.0 / 2f64.sqrt();
        assert!(!point_in_polygon([1.0 + r, 1.0], &tri));
        assert!(point_in_polygon([1.5, 0.0], &tri));
        assert!(point_in_polygon([0.0, 0.0], &tri));
    }

    #[test]
    fn containment_matches_area_fraction() {
        let mut rng = rng::seeded(3);
        let pts: Vec<[f64; 2]> = (0..12)
            .map(|_| [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)])
            .collect();
        let hull = convex_hull_2d(&pts).unwrap();
        let n = 10_000;
        let inside = (0..n)
            .filter(|_| point_in_polygon([rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)], &hull))
            .count();
        let frac = inside as f64 / n as f64;
        assert!((frac - hull.area()).abs() < 0.02, "{frac} vs {}", hull.area());
    }

    #[test]
    fn clip_square_by_shifted_square() {
        let a = Polygon2D::new(unit_square());
        let b = Polygon2D::new(unit_square().into_iter().map(|[x, y]| [x + 0.5, y]).collect());
        let inter = clip_polygon(&a, &b);
        assert!((inter.area() - 0.5).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn hull_contains_inputs_and_is_convex(
            pts in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 3..60)
        ) {
            let pts: Vec<[f64; 2]> = pts.into_iter().map(|(x, y)| [x, y]).collect();
            let Ok(hull) = convex_hull_2d(&pts) else { return Ok(()); };
            let n = hull.len();
            for i in 0..n {
                let c = cross(hull.vertices[i], hull.vertices[(i + 1) % n], hull.vertices[(i + 2) % n]);
                prop_assert!(c > 0.0);
            }
            for p in &pts {
                for (a, b) in hull.edges() {
                    prop_assert!(cross(a, b, *p) >= -1e-9 * (1.0 + p[0].abs() + p[1].abs()));
                }
            }
            let again = convex_hull_2d(&hull.vertices).unwrap();
            prop_assert_eq!(again, hull);
        }
    }
}
