//! Probabilistic box regression: Gaussian box heads, the KL regression loss
//! against uncertain labels (and its Dirac special case), the uncertainty-aware
//! quality estimator, and the small experiments that exercise them.

mod gaussian;
mod loss;
mod quality;
mod regressor;
mod uaqe;

pub use gaussian::{GaussianBox, LabelDistribution};
pub use loss::{
    kl_reg_grad, kl_reg_loss, kl_reg_loss_graph, kl_reg_loss_log_sigma_graph, kl_reg_loss_with,
    kl_reg_term, Reduction,
};
pub use quality::{
    generate_quality_pairs, run_quality_experiment, QualityConfig, QualityPair, QualityReport,
};
pub use regressor::{
    train_toy_regressor, LossMode, RegressorConfig, RegressorOutput, RegressorReport, ToyRegressor,
};
pub use uaqe::{uaqe_apply, UaqeHead};
