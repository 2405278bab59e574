//! Uncertainty-aware post-processing: 3D variance voting and a greedy NMS
//! baseline.

mod nms;
mod voting;

pub use nms::{nms, nms_indices};
pub use voting::{variance_voting, Detection, MergedBox, VarianceMode, VotingConfig};
