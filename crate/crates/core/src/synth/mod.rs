//! Synthetic LiDAR objects with controlled occlusion and deliberately
//! ambiguous annotations, plus the occlusion-driven and standard
//! augmentations used while training GLENet.

mod augment;
mod occlusion;
mod range_image;
mod scene;

pub use augment::{apply_standard, standard_augment, standard_augment_canonical, AugmentParams};
pub use occlusion::{apply_occluder_polygon, occlusion_augment, place_occluder, OcclusionConfig};
pub use range_image::RangeImage;
pub use scene::{
    cast_box, generate_scene_objects, sample_box, spearman, FamilyConfig, ObjectSample, SizeDist,
    SynthConfig,
};
