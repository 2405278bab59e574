use rand::Rng;

use crate::error::Result;
use crate::nn::{Graph, Init, Linear, ParamStore, Tensor, Var};
use crate::BOX_DIMS;

/// Two-layer head `7 -> hidden -> 1` with a sigmoid, mapping predicted box
/// uncertainty to a multiplicative quality coefficient in (0, 1).
#[derive(Debug, Clone)]
pub struct UaqeHead {
    pub store: ParamStore,
    pub fc1: Linear,
    pub fc2: Linear,
}

impl UaqeHead {
    pub const HIDDEN: usize = 16;

    pub fn new(rng: &mut impl Rng) -> Self {
        let mut store = ParamStore::new();
        let fc1 = Linear::new(&mut store, "uaqe.fc1", BOX_DIMS, Self::HIDDEN, Init::KaimingRelu, rng);
        let fc2 = Linear::new(&mut store, "uaqe.fc2", Self::HIDDEN, 1, Init::KaimingLinear, rng);
        Self { store, fc1, fc2 }
    }

    /// All weights and biases zero; the coefficient is then exactly 0.5.
    pub fn zeroed() -> Self {
        let mut rng = crate::rng::seeded(0);
        let mut head = Self::new(&mut rng);
        for t in head.store.tensors_mut() {
            t.data_mut().fill(0.0);
        }
        head
    }

    /// Graph forward for a `[batch, 7]` input; returns `[batch, 1]` coefficients.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, sigma: Var) -> Result<Var> {
        let h = self.fc1.forward(g, store, sigma)?;
        let h = g.relu(h)?;
        let o = self.fc2.forward(g, store, h)?;
        g.sigmoid(o)
    }

    pub fn coefficient(&self, sigma: &[f64; BOX_DIMS]) -> Result<f64> {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_rows(&[*sigma])?)?;
        let c = self.forward(&mut g, &self.store, x)?;
        Ok(g.value(c).item())
    }
}

/// Calibrated IoU estimate `raw * coefficient(sigma)`.
pub fn uaqe_apply(head: &UaqeHead, sigma: &[f64; BOX_DIMS], raw_iou_estimate: f64) -> Result<f64> {
    Ok(raw_iou_estimate * head.coefficient(sigma)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn zero_head_halves() {
        let head = UaqeHead::zeroed();
        assert_eq!(uaqe_apply(&head, &[0.3; 7], 0.8).unwrap(), 0.4);
    }

    #[test]
    fn never_exceeds_raw() {
        let mut r = rng::seeded(4);
        for _ in 0..50 {
            let head = UaqeHead::new(&mut r);
            let sigma: [f64; 7] = std::array::from_fn(|_| r.random_range(0.0..2.0));
            let raw = r.random_range(0.01..1.0);
            let est = uaqe_apply(&head, &sigma, raw).unwrap();
            assert!(est > 0.0 && est < raw);
        }
    }
}
