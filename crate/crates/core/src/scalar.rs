use std::fmt::{Debug, Display};

use num_traits::{Float, FloatConst, FromPrimitive};

/// Floating-point scalar used by the geometry, loss and voting code: `f32` or `f64`.
pub trait Real:
    Float + FloatConst + FromPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable")
    }

    #[inline]
    fn half() -> Self {
        Self::lit(0.5)
    }

    #[inline]
    fn two() -> Self {
        Self::lit(2.0)
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle<T: Real>(r: T) -> T {
    let two_pi = T::PI() * T::two();
    let mut a = r % two_pi;
    if a <= -T::PI() {
        a = a + two_pi;
    }
    if a > T::PI() {
        a = a - two_pi;
    }
    a
}

/// Wraps an angle into `(-pi/2, pi/2]`, identifying directions that differ
/// by a half turn.
pub fn wrap_half_turn<T: Real>(r: T) -> T {
    let mut d = wrap_angle(r);
    let half = T::FRAC_PI_2();
    if d > half {
        d = d - T::PI();
    } else if d <= -half {
        d = d + T::PI();
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn wrap_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-15);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-15);
        assert!((wrap_angle(7.0 * PI + 0.1) - (-PI + 0.1)).abs() < 1e-12);
        assert!((wrap_angle(0.3f32) - 0.3).abs() < 1e-7);
    }

    #[test]
    fn half_turn_range() {
        assert_eq!(wrap_half_turn(PI / 2.0), PI / 2.0);
        assert!((wrap_half_turn(-PI / 2.0) - PI / 2.0).abs() < 1e-15);
        assert!((wrap_half_turn(PI - 0.2) + 0.2).abs() < 1e-15);
        assert!((wrap_half_turn(-PI + 0.2) - 0.2).abs() < 1e-15);
    }
}
