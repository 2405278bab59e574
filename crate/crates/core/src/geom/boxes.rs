use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{wrap_angle, Real};

/// A 3D box with center, size and yaw about the vertical axis.
///
/// `l` runs along the heading direction, `w` across it. Yaw is kept in
/// `(-pi, pi]` by [`OrientedBox::new`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox<T> {
    pub cx: T,
    pub cy: T,
    pub cz: T,
    pub w: T,
    pub l: T,
    pub h: T,
    pub r: T,
}

impl<T: Real> OrientedBox<T> {
    pub fn new(cx: T, cy: T, cz: T, w: T, l: T, h: T, r: T) -> Result<Self> {
        let b = Self {
            cx,
            cy,
            cz,
            w,
            l,
            h,
            r: wrap_angle(r),
        };
        b.validate()?;
        Ok(b)
    }

    pub fn from_array(a: [T; 7]) -> Result<Self> {
        Self::new(a[0], a[1], a[2], a[3], a[4], a[5], a[6])
    }

    pub fn to_array(&self) -> [T; 7] {
        [self.cx, self.cy, self.cz, self.w, self.l, self.h, self.r]
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.to_array().iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::domain("box has non-finite parameters"));
        }
        if !(self.w > T::zero() && self.l > T::zero() && self.h > T::zero()) {
            return Err(Error::domain(format!(
                "box sizes must be positive, got w={} l={} h={}",
                self.w, self.l, self.h
            )));
        }
        Ok(())
    }

    pub fn volume(&self) -> T {
        self.w * self.l * self.h
    }

    pub fn diagonal(&self) -> T {
        (self.w * self.w + self.l * self.l + self.h * self.h).sqrt()
    }

    /// Footprint corners in counter-clockwise order.
    pub fn bev_corners(&self) -> [[T; 2]; 4] {
        let (s, c) = self.r.sin_cos();
        let hl = self.l * T::half();
        let hw = self.w * T::half();
        let local = [[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]];
        local.map(|[u, v]| [self.cx + u * c - v * s, self.cy + u * s + v * c])
    }

    pub fn z_range(&self) -> (T, T) {
        let hh = self.h * T::half();
        (self.cz - hh, self.cz + hh)
    }

    /// Expresses a world point in the box frame (heading along +x).
    pub fn to_local(&self, p: [T; 3]) -> [T; 3] {
        let (s, c) = self.r.sin_cos();
        let dx = p[0] - self.cx;
        let dy = p[1] - self.cy;
        [dx * c + dy * s, -dx * s + dy * c, p[2] - self.cz]
    }

    /// Closed containment test with an absolute slack `eps`.
    pub fn contains(&self, p: [T; 3], eps: T) -> bool {
        let q = self.to_local(p);
        q[0].abs() <= self.l * T::half() + eps
            && q[1].abs() <= self.w * T::half() + eps
            && q[2].abs() <= self.h * T::half() + eps
    }
}

/// Predefined box size; its center is the local origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anchor<T> {
    pub wa: T,
    pub la: T,
    pub ha: T,
}

impl<T: Real> Anchor<T> {
    pub fn new(wa: T, la: T, ha: T) -> Result<Self> {
        let a = Self { wa, la, ha };
        a.validate()?;
        Ok(a)
    }

    pub fn validate(&self) -> Result<()> {
        if self.wa > T::zero() && self.la > T::zero() && self.ha > T::zero() {
            Ok(())
        } else {
            Err(Error::domain("anchor sizes must be positive"))
        }
    }

    /// Diagonal of the anchor footprint.
    pub fn diagonal(&self) -> T {
        (self.la * self.la + self.wa * self.wa).sqrt()
    }

    /// Mean size of a set of boxes.
    pub fn mean_of<'a, I>(boxes: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a OrientedBox<T>>,
    {
        let (mut w, mut l, mut h, mut n) = (T::zero(), T::zero(), T::zero(), 0usize);
        for b in boxes {
            w = w + b.w;
            l = l + b.l;
            h = h + b.h;
            n += 1;
        }
        if n == 0 {
            return Err(Error::degenerate("cannot derive an anchor from zero boxes"));
        }
        let n = T::from_usize(n).unwrap();
        Self::new(w / n, l / n, h / n)
    }
}

/// Anchor-relative regression target plus a direction class.
///
/// `dir_bit` is 1 when the wrapped yaw lies in `(-pi/2, pi/2]`, i.e. the
/// heading has a non-negative forward component. Together with `t_r = sin r`
/// this pins the yaw uniquely.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxEncoding<T> {
    pub t_cx: T,
    pub t_cy: T,
    pub t_cz: T,
    pub t_w: T,
    pub t_l: T,
    pub t_h: T,
    pub t_r: T,
    pub dir_bit: u8,
}

impl<T: Real> BoxEncoding<T> {
    pub fn offsets(&self) -> [T; 7] {
        [
            self.t_cx, self.t_cy, self.t_cz, self.t_w, self.t_l, self.t_h, self.t_r,
        ]
    }

    pub fn from_offsets(t: [T; 7], dir_bit: u8) -> Self {
        Self {
            t_cx: t[0],
            t_cy: t[1],
            t_cz: t[2],
            t_w: t[3],
            t_l: t[4],
            t_h: t[5],
            t_r: t[6],
            dir_bit,
        }
    }
}

fn direction_bit<T: Real>(r: T) -> u8 {
    let r = wrap_angle(r);
    let half_pi = T::FRAC_PI_2();
    u8::from(r > -half_pi && r <= half_pi)
}

pub fn encode_box<T: Real>(b: &OrientedBox<T>, anchor: &Anchor<T>) -> BoxEncoding<T> {
    let da = anchor.diagonal();
    BoxEncoding {
        t_cx: b.cx / da,
        t_cy: b.cy / da,
        t_cz: b.cz / anchor.ha,
        t_w: (b.w / anchor.wa).ln(),
        t_l: (b.l / anchor.la).ln(),
        t_h: (b.h / anchor.ha).ln(),
        t_r: b.r.sin(),
        dir_bit: direction_bit(b.r),
    }
}

pub fn decode_box<T: Real>(enc: &BoxEncoding<T>, anchor: &Anchor<T>) -> Result<OrientedBox<T>> {
    if !(enc.t_r.abs() <= T::one()) {
        return Err(Error::domain(format!("|t_r| must be <= 1, got {}", enc.t_r)));
    }
    let da = anchor.diagonal();
    let base = enc.t_r.asin();
    let r = if enc.dir_bit == 1 { base } else { T::PI() - base };
    OrientedBox::new(
        enc.t_cx * da,
        enc.t_cy * da,
        enc.t_cz * anchor.ha,
        enc.t_w.exp() * anchor.wa,
        enc.t_l.exp() * anchor.la,
        enc.t_h.exp() * anchor.ha,
        r,
    )
}
