//! GLENet: a conditional VAE over box annotations given an object's partial
//! point cloud. Sampling the prior and decoding yields a spread of plausible
//! boxes whose per-dimension variance (in anchor-encoded offset space) is the
//! label uncertainty.

mod config;
mod infer;
mod model;
mod preprocess;
mod train;

pub use config::{InputCoordinates, KlForm, ModelConfig, TrainConfig};
pub use infer::{
    eval_nll, infer_uncertainty, kfold_partition, kfold_uncertainty, nll_from_predictions,
    FoldUncertainty, NllReport, UncertaintyEstimate,
};
pub use model::{kl_divergence_value, kl_graph, GlenetModel, LatentGaussian};
pub use preprocess::{preprocess, PreparedSample, Preprocessed};
pub use train::{anneal_weight, elbo_losses, elbo_terms, train, train_with, EpochLosses};
