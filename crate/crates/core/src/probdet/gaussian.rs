use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::BOX_DIMS;

/// Predicted per-dimension Gaussian over encoded box offsets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianBox<T> {
    pub mean: [T; BOX_DIMS],
    pub sigma: [T; BOX_DIMS],
}

impl<T: Real> GaussianBox<T> {
    pub fn new(mean: [T; BOX_DIMS], sigma: [T; BOX_DIMS]) -> Result<Self> {
        let b = Self { mean, sigma };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sigma.iter().all(|s| *s > T::zero() && s.is_finite()) && self.mean.iter().all(|m| m.is_finite()) {
            Ok(())
        } else {
            Err(Error::domain("predicted sigma must be positive and finite"))
        }
    }

    pub fn variance(&self) -> [T; BOX_DIMS] {
        self.sigma.map(|s| s * s)
    }
}

/// Annotation treated as a Gaussian; zero sigma is a Dirac label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelDistribution<T> {
    pub mean: [T; BOX_DIMS],
    pub sigma: [T; BOX_DIMS],
}

impl<T: Real> LabelDistribution<T> {
    pub fn new(mean: [T; BOX_DIMS], sigma: [T; BOX_DIMS]) -> Result<Self> {
        if sigma.iter().all(|s| *s >= T::zero() && s.is_finite()) {
            Ok(Self { mean, sigma })
        } else {
            Err(Error::domain("label sigma must be non-negative and finite"))
        }
    }

    pub fn dirac(mean: [T; BOX_DIMS]) -> Self {
        Self { mean, sigma: [T::zero(); BOX_DIMS] }
    }

    /// From a per-dimension variance as produced by GLENet.
    pub fn from_variance(mean: [T; BOX_DIMS], variance: [T; BOX_DIMS]) -> Result<Self> {
        if variance.iter().any(|v| *v < T::zero()) {
            return Err(Error::domain("label variance must be non-negative"));
        }
        Self::new(mean, variance.map(|v| v.sqrt()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigma_constraints() {
        assert!(GaussianBox::new([0.0; 7], [1.0; 7]).is_ok());
        assert!(GaussianBox::new([0.0; 7], [0.0; 7]).is_err());
        assert!(LabelDistribution::new([0.0; 7], [0.0; 7]).is_ok());
        assert!(LabelDistribution::new([0.0; 7], [-1.0; 7]).is_err());
        let l = LabelDistribution::from_variance([0.0; 7], [4.0; 7]).unwrap();
        assert_eq!(l.sigma, [2.0; 7]);
    }
}
