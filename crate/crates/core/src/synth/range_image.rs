use crate::error::{Error, Result};

/// Spherical projection of points onto an azimuth/elevation pixel grid
/// keeping the nearest depth per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeImage {
    /// Pixel size in radians (square pixels).
    pub resolution: f64,
    pub az_min: f64,
    pub el_min: f64,
    pub width: usize,
    pub height: usize,
    depth: Vec<Option<f64>>,
}

impl RangeImage {
    /// Grid covering every point in `clouds`, one pixel of margin each side.
    pub fn covering(clouds: &[&[[f64; 3]]], resolution_deg: f64) -> Result<Self> {
        if !(resolution_deg > 0.0) {
            return Err(Error::config("range image resolution must be positive"));
        }
        let res = resolution_deg.to_radians();
        let mut az = (f64::INFINITY, f64::NEG_INFINITY);
        let mut el = (f64::INFINITY, f64::NEG_INFINITY);
        for p in clouds.iter().flat_map(|c| c.iter()) {
            let (a, e) = Self::angles(*p);
            az = (az.0.min(a), az.1.max(a));
            el = (el.0.min(e), el.1.max(e));
        }
        if !az.0.is_finite() {
            return Err(Error::degenerate("range image over no points"));
        }
        let az_min = az.0 - res;
        let el_min = el.0 - res;
        let width = ((az.1 - az_min) / res).ceil() as usize + 2;
        let height = ((el.1 - el_min) / res).ceil() as usize + 2;
        Ok(Self {
            resolution: res,
            az_min,
            el_min,
            width,
            height,
            depth: vec![None; width * height],
        })
    }

    pub fn angles(p: [f64; 3]) -> (f64, f64) {
        let horiz = (p[0] * p[0] + p[1] * p[1]).sqrt();
        (p[1].atan2(p[0]), p[2].atan2(horiz))
    }

    /// Continuous pixel coordinates (u along azimuth, v along elevation).
    pub fn project(&self, p: [f64; 3]) -> [f64; 2] {
        let (a, e) = Self::angles(p);
        [(a - self.az_min) / self.resolution, (e - self.el_min) / self.resolution]
    }

    /// Splats points, keeping the minimum range per pixel.
    pub fn splat(&mut self, points: &[[f64; 3]]) {
        for p in points {
            let [u, v] = self.project(*p);
            if u < 0.0 || v < 0.0 {
                continue;
            }
            let (iu, iv) = (u as usize, v as usize);
            if iu >= self.width || iv >= self.height {
                continue;
            }
            let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            let cell = &mut self.depth[iv * self.width + iu];
            *cell = Some(cell.map_or(r, |d: f64| d.min(r)));
        }
    }

    pub fn depth(&self, u: usize, v: usize) -> Option<f64> {
        (u < self.width && v < self.height)
            .then(|| self.depth[v * self.width + u])
            .flatten()
    }

    pub fn filled(&self) -> usize {
        self.depth.iter().filter(|d| d.is_some()).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_depth_wins() {
        let pts = [[10.0, 0.0, 0.0], [5.0, 0.0, 0.0], [10.0, 1.0, 0.0]];
        let mut img = RangeImage::covering(&[&pts], 0.2).unwrap();
        img.splat(&pts);
        let [u, v] = img.project([1.0, 0.0, 0.0]);
        assert_eq!(img.depth(u as usize, v as usize), Some(5.0));
        assert_eq!(img.filled(), 2);
    }

    #[test]
    fn azimuth_increases_to_the_left() {
        let pts = [[10.0, -1.0, 0.0], [10.0, 1.0, 0.0]];
        let img = RangeImage::covering(&[&pts], 0.2).unwrap();
        assert!(img.project(pts[1])[0] > img.project(pts[0])[0]);
        assert!(RangeImage::covering(&[&pts], 0.0).is_err());
    }
}
