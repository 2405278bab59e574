use rand::Rng;
use rand_distr::StandardNormal;

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Draws `mu + sigma * eps` with `eps ~ N(0, I)`, differentiable in both
/// `mu` and `sigma`.
pub fn sample_reparameterized(g: &mut Graph, mu: Var, sigma: Var, rng: &mut impl Rng) -> Result<Var> {
    let shape = g.value(mu).shape().to_vec();
    if g.value(sigma).shape() != shape.as_slice() {
        return Err(Error::structural("mu and sigma shapes differ"));
    }
    if g.value(sigma).data().iter().any(|&s| s < 0.0) {
        return Err(Error::domain("sigma must be non-negative"));
    }
    let n = g.value(mu).len();
    let eps: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let eps = g.constant(Tensor::new(shape, eps)?)?;
    let noise = g.mul(sigma, eps)?;
    g.add(mu, noise)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn zero_sigma_returns_mu() {
        let mut g = Graph::new();
        let mu = g.variable(Tensor::from_rows(&[[0.5, -1.25, 3.0]]).unwrap()).unwrap();
        let sigma = g.constant(Tensor::zeros(&[1, 3])).unwrap();
        let z = sample_reparameterized(&mut g, mu, sigma, &mut rng::seeded(1)).unwrap();
        assert_eq!(g.value(z).data(), g.value(mu).data());
    }

    #[test]
    fn negative_sigma_rejected() {
        let mut g = Graph::new();
        let mu = g.variable(Tensor::zeros(&[1, 2])).unwrap();
        let sigma = g.constant(Tensor::from_rows(&[[1.0, -0.1]]).unwrap()).unwrap();
        let r = sample_reparameterized(&mut g, mu, sigma, &mut rng::seeded(1));
        assert!(matches!(r, Err(Error::Domain(_))));
    }

    #[test]
    fn moments_of_standard_draws() {
        let n = 100_000;
        let mut g = Graph::new();
        let mu = g.variable(Tensor::zeros(&[n, 1])).unwrap();
        let sigma = g.variable(Tensor::full(&[n, 1], 1.0)).unwrap();
        let z = sample_reparameterized(&mut g, mu, sigma, &mut rng::seeded(5)).unwrap();
        let d = g.value(z).data();
        let mean = d.iter().sum::<f64>() / n as f64;
        let std = (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        assert!(mean.abs() < 0.02, "{mean}");
        assert!((std - 1.0).abs() < 0.02, "{std}");

        let m = g.mean(z).unwrap();
        let grads = g.backward(m).unwrap();
        let gmu = grads.get(mu).unwrap().sum();
        assert!((gmu - 1.0).abs() < 1e-6);
    }
}
