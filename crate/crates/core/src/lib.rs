//! Generative label uncertainty for 3D bounding-box annotations.
//!
//! The crate is organised bottom-up:
//!
//! * [`geom`] oriented boxes, anchor encoding, rotated IoU and 2D hull helpers.
//! * [`nn`] a small reverse-mode autodiff engine over dense `f64` tensors,
//!   the layers GLENet needs, Adam with a one-cycle schedule and checkpoints.
//! * [`synth`] a synthetic LiDAR object generator and the occlusion-driven
//!   augmentation.
//! * [`glenet`] the conditional VAE that turns a partial point cloud into a
//!   per-dimension label variance, plus k-fold cross-sampling and `L_NLL`.
//! * [`probdet`] the KL regression loss with label uncertainty, its closed-form
//!   gradients, a toy probabilistic regressor and the quality estimator (UAQE).
//! * [`postproc`] 3D variance voting and a greedy NMS baseline.
//! * [`io`] line-delimited dataset and detection records.
//!
//! Geometry, losses and voting are generic over [`Real`]; the aliases below
//! fix them to `f64`, which is what the rest of the pipeline uses.

pub mod error;
pub mod geom;
pub mod glenet;
pub mod io;
pub mod nn;
pub mod postproc;
pub mod probdet;
pub mod rng;
pub mod scalar;
pub mod synth;

pub use error::{Error, Result};
pub use scalar::Real;

/// Number of box parameters `(cx, cy, cz, w, l, h, r)`.
pub const BOX_DIMS: usize = 7;

pub type Box3 = geom::OrientedBox<f64>;
pub type Anchor = geom::Anchor<f64>;
pub type BoxEncoding = geom::BoxEncoding<f64>;
pub type Polygon = geom::Polygon2D<f64>;
pub type GaussianBox = probdet::GaussianBox<f64>;
pub type LabelDistribution = probdet::LabelDistribution<f64>;
pub type Detection = postproc::Detection<f64>;
pub type MergedBox = postproc::MergedBox<f64>;
