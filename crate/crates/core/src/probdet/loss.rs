use crate::error::{Error, Result};
use crate::nn::{Graph, Tensor, Var};
use crate::scalar::Real;
use crate::BOX_DIMS;

use super::gaussian::{GaussianBox, LabelDistribution};

/// How per-dimension terms are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Reduction {
    #[default]
    Sum,
    Mean,
}

/// One dimension of the KL regression loss.
///
/// `ln(pred_sigma / sigma) + sigma^2 / (2 pred_sigma^2) + err^2 / (2 pred_sigma^2)`;
/// with `sigma == 0` the log term becomes `0.5 ln(pred_sigma^2)`.
pub fn kl_reg_term<T: Real>(pred_sigma: T, sigma: T, err: T) -> Result<T> {
    if !(pred_sigma > T::zero()) {
        return Err(Error::domain(format!("predicted sigma must be positive, got {pred_sigma}")));
    }
    if sigma < T::zero() {
        return Err(Error::domain("label sigma must be non-negative"));
    }
    let two = T::two();
    let var = pred_sigma * pred_sigma;
    let log_term = if sigma == T::zero() {
        pred_sigma.ln()
    } else {
        (pred_sigma / sigma).ln()
    };
    Ok(log_term + sigma * sigma / (two * var) + err * err / (two * var))
}

/// KL regression loss summed over the seven box dimensions.
pub fn kl_reg_loss<T: Real>(pred: &GaussianBox<T>, label: &LabelDistribution<T>) -> Result<T> {
    kl_reg_loss_with(pred, label, Reduction::Sum)
}

pub fn kl_reg_loss_with<T: Real>(
    pred: &GaussianBox<T>,
    label: &LabelDistribution<T>,
    reduction: Reduction,
) -> Result<T> {
    let mut total = T::zero();
    for k in 0..BOX_DIMS {
        total = total + kl_reg_term(pred.sigma[k], label.sigma[k], label.mean[k] - pred.mean[k])?;
    }
    Ok(match reduction {
        Reduction::Sum => total,
        Reduction::Mean => total / T::lit(BOX_DIMS as f64),
    })
}

/// Closed-form gradients `(dL/d mean, dL/d sigma)` of the summed loss.
pub fn kl_reg_grad<T: Real>(
    pred: &GaussianBox<T>,
    label: &LabelDistribution<T>,
) -> Result<([T; BOX_DIMS], [T; BOX_DIMS])> {
    let mut d_mean = [T::zero(); BOX_DIMS];
    let mut d_sigma = [T::zero(); BOX_DIMS];
    for k in 0..BOX_DIMS {
        let s_hat = pred.sigma[k];
        if !(s_hat > T::zero()) {
            return Err(Error::domain(format!("predicted sigma must be positive, got {s_hat}")));
        }
        let s = label.sigma[k];
        if s < T::zero() {
            return Err(Error::domain("label sigma must be non-negative"));
        }
        let err = label.mean[k] - pred.mean[k];
        let cube = s_hat * s_hat * s_hat;
        d_mean[k] = (pred.mean[k] - label.mean[k]) / (s_hat * s_hat);
        d_sigma[k] = T::one() / s_hat - s * s / cube - err * err / cube;
    }
    Ok((d_mean, d_sigma))
}

fn check_label(pred_shape: &[usize], target: &Tensor, label_sigma: &Tensor) -> Result<()> {
    if target.shape() != pred_shape || label_sigma.shape() != pred_shape {
        return Err(Error::structural("KL loss: target and label sigma must match the prediction shape"));
    }
    if label_sigma.data().iter().any(|s| !(*s >= 0.0)) {
        return Err(Error::domain("label sigma must be non-negative"));
    }
    Ok(())
}

fn log_label_constant(label_sigma: &Tensor) -> f64 {
    label_sigma.data().iter().filter(|s| **s > 0.0).map(|s| s.ln()).sum()
}

/// Summed KL regression loss on the tape, from predicted mean and sigma.
pub fn kl_reg_loss_graph(
    g: &mut Graph,
    mean: Var,
    sigma: Var,
    target: &Tensor,
    label_sigma: &Tensor,
) -> Result<Var> {
    check_label(g.value(mean).shape(), target, label_sigma)?;
    if g.value(sigma).data().iter().any(|s| !(*s > 0.0)) {
        return Err(Error::domain("predicted sigma must be positive"));
    }
    let log_sigma = g.log(sigma)?;
    let inv_var = {
        let sq = g.square(sigma)?;
        g.recip(sq)?
    };
    finish(g, mean, log_sigma, inv_var, target, label_sigma)
}

/// Same loss parameterised by `log sigma`, which keeps sigma positive by
/// construction.
pub fn kl_reg_loss_log_sigma_graph(
    g: &mut Graph,
    mean: Var,
    log_sigma: Var,
    target: &Tensor,
    label_sigma: &Tensor,
) -> Result<Var> {
    check_label(g.value(mean).shape(), target, label_sigma)?;
    let inv_var = {
        let m2 = g.scale(log_sigma, -2.0)?;
        g.exp(m2)?
    };
    finish(g, mean, log_sigma, inv_var, target, label_sigma)
}

fn finish(
    g: &mut Graph,
    mean: Var,
    log_sigma: Var,
    inv_var: Var,
    target: &Tensor,
    label_sigma: &Tensor,
) -> Result<Var> {
    let t = g.constant(target.clone())?;
    let diff = g.sub(mean, t)?;
    let sq = g.square(diff)?;
    let s2 = g.constant(label_sigma.map(|s| s * s))?;
    let num = g.add(sq, s2)?;
    let quad = g.mul(num, inv_var)?;
    let quad = g.scale(quad, 0.5)?;
    let per = g.add(log_sigma, quad)?;
    let total = g.sum(per)?;
    g.add_scalar(total, -log_label_constant(label_sigma))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gauss(mean: f64, sigma: f64) -> GaussianBox<f64> {
        GaussianBox::new([mean; 7], [sigma; 7]).unwrap()
    }

    #[test]
    fn optimum_is_half_per_dimension() {
        let pred: GaussianBox<f64> = GaussianBox::new([0.1, -0.2, 0.3, 0.0, 0.5, -0.1, 0.7], [0.3, 0.2, 0.1, 0.05, 0.4, 0.9, 1.5]).unwrap();
        let label = LabelDistribution::new(pred.mean, pred.sigma).unwrap();
        assert!((kl_reg_loss(&pred, &label).unwrap() - 3.5).abs() < 1e-12);
        let (dm, ds) = kl_reg_grad(&pred, &label).unwrap();
        assert!(dm.iter().chain(&ds).all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn hand_evaluated_term() {
        let v = kl_reg_term(1.0, 0.5, 1.0).unwrap();
        assert!((v - (2f64.ln() + 0.125 + 0.5)).abs() < 1e-15);
        assert!((v - 1.3181).abs() < 1e-4);
        assert_eq!(kl_reg_term(1.0, 0.0, 1.0).unwrap(), 0.5);
    }

    #[test]
    fn dirac_sigma_gradient_explodes() {
        for s in [1e-1, 1e-2, 1e-3] {
            let pred = gauss(0.0, s);
            let (_, ds) = kl_reg_grad(&pred, &LabelDistribution::dirac([0.0; 7])).unwrap();
            assert!((ds[0] - 1.0 / s).abs() < 1e-9);
        }
    }

    #[test]
    fn error_sign_flips_mean_gradient() {
        let pred = gauss(0.3, 0.5);
        let (a, _) = kl_reg_grad(&pred, &LabelDistribution::new([0.0; 7], [0.2; 7]).unwrap()).unwrap();
        let (b, _) = kl_reg_grad(&pred, &LabelDistribution::new([0.6; 7], [0.2; 7]).unwrap()).unwrap();
        for k in 0..7 {
            assert_eq!(a[k], -b[k]);
        }
    }

    #[test]
    fn larger_label_sigma_lowers_loss() {
        let a = kl_reg_term(1.0, 0.5, 1.0).unwrap();
        let b = kl_reg_term(1.0, 0.2, 1.0).unwrap();
        assert!(a < b);
    }

    #[test]
    fn domain_errors() {
        assert!(kl_reg_term(0.0, 0.1, 0.0).is_err());
        assert!(kl_reg_term(-1.0, 0.1, 0.0).is_err());
        let bad = GaussianBox { mean: [0.0; 7], sigma: [0.0; 7] };
        assert!(kl_reg_loss(&bad, &LabelDistribution::dirac([0.0; 7])).is_err());
        assert!(kl_reg_grad(&bad, &LabelDistribution::dirac([0.0; 7])).is_err());
    }

    #[test]
    fn mean_reduction_divides_by_dims() {
        let pred = gauss(0.2, 0.7);
        let label = LabelDistribution::new([0.0; 7], [0.3; 7]).unwrap();
        let s = kl_reg_loss(&pred, &label).unwrap();
        let m = kl_reg_loss_with(&pred, &label, Reduction::Mean).unwrap();
        assert!((s / 7.0 - m).abs() < 1e-15);
    }

    #[test]
    fn graph_forms_agree_with_closed_form() {
        let mean = [0.1, -0.2, 0.3, 0.0, 0.5, -0.1, 0.7];
        let sigma = [0.3, 0.2, 0.1, 0.05, 0.4, 0.9, 1.5];
        let label_mean = [0.0, 0.1, 0.2, -0.3, 0.4, 0.0, 0.2];
        let label_sigma = [0.0, 0.1, 0.0, 0.2, 0.3, 0.0, 1.0];
        let pred = GaussianBox::new(mean, sigma).unwrap();
        let label = LabelDistribution::new(label_mean, label_sigma).unwrap();
        let expected = kl_reg_loss(&pred, &label).unwrap();
        let (dm, ds) = kl_reg_grad(&pred, &label).unwrap();
        let target = Tensor::from_rows(&[label_mean]).unwrap();
        let lsig = Tensor::from_rows(&[label_sigma]).unwrap();

        let mut g = Graph::new();
        let m = g.variable(Tensor::from_rows(&[mean]).unwrap()).unwrap();
        let s = g.variable(Tensor::from_rows(&[sigma]).unwrap()).unwrap();
        let l = kl_reg_loss_graph(&mut g, m, s, &target, &lsig).unwrap();
        assert!((g.value(l).item() - expected).abs() < 1e-12);
        let grads = g.backward(l).unwrap();
        for k in 0..7 {
            assert!((grads.get(m).unwrap().data()[k] - dm[k]).abs() < 1e-10);
            assert!((grads.get(s).unwrap().data()[k] - ds[k]).abs() < 1e-10 * ds[k].abs().max(1.0));
        }

        let mut g = Graph::new();
        let m = g.variable(Tensor::from_rows(&[mean]).unwrap()).unwrap();
        let ls = g.variable(Tensor::from_rows(&[sigma.map(f64::ln)]).unwrap()).unwrap();
        let l = kl_reg_loss_log_sigma_graph(&mut g, m, ls, &target, &lsig).unwrap();
        assert!((g.value(l).item() - expected).abs() < 1e-12);
        let grads = g.backward(l).unwrap();
        for k in 0..7 {
            // chain rule through sigma = exp(log sigma)
            let want = ds[k] * sigma[k];
            assert!((grads.get(ls).unwrap().data()[k] - want).abs() < 1e-10 * want.abs().max(1.0));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]
        #[test]
        fn minimum_is_global_when_label_is_uncertain(
            s in 1e-3..5.0f64, s_hat in 1e-3..5.0f64, err in -5.0..5.0f64,
        ) {
            prop_assert!(kl_reg_term(s_hat, s, err).unwrap() - 0.5 >= -1e-12);
        }
    }
}
