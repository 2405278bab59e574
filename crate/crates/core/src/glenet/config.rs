use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Anchor;
use crate::nn::AdamConfig;

/// Per-point input features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputCoordinates {
    /// Centroid-subtracted coordinates only.
    #[default]
    Normalized,
    /// Centroid-subtracted coordinates followed by sensor-frame coordinates.
    WithAbsolute,
}

impl InputCoordinates {
    pub fn dim(self) -> usize {
        match self {
            Self::Normalized => 3,
            Self::WithAbsolute => 6,
        }
    }
}

/// Form of the latent regulariser.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlForm {
    /// `ln(s_q / s_p) + s_p^2 / (2 s_q^2) + (m_p - m_q)^2 / (2 s_q^2)` per dimension,
    /// which equals 0.5 when the two Gaussians coincide.
    #[default]
    Printed,
    /// The same expression minus 0.5, so it vanishes when the Gaussians coincide.
    /// This is `KL(prior || posterior)`.
    Exact,
    /// `KL(posterior || prior)`, the divergence that appears in the evidence
    /// lower bound: `ln(s_p / s_q) + (s_q^2 + (m_q - m_p)^2) / (2 s_p^2) - 1/2`.
    Elbo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub latent_dim: usize,
    /// Per-point channels of the context encoder; empty disables it.
    pub context_channels: Vec<usize>,
    pub backbone_channels: Vec<usize>,
    pub recognition_hidden: Vec<usize>,
    pub prediction_hidden: Vec<usize>,
    pub num_points: usize,
    pub coordinates: InputCoordinates,
    pub anchor: Anchor<f64>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            latent_dim: 8,
            context_channels: vec![8, 8, 8],
            backbone_channels: vec![64, 128, 512],
            recognition_hidden: vec![64],
            prediction_hidden: vec![64, 64],
            num_points: 512,
            coordinates: InputCoordinates::Normalized,
            anchor: Anchor { wa: 1.6, la: 3.9, ha: 1.56 },
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 {
            return Err(Error::config("latent_dim must be at least 1"));
        }
        if self.backbone_channels.is_empty() || self.backbone_channels.contains(&0) {
            return Err(Error::config("backbone needs at least one non-empty layer"));
        }
        if self.context_channels.contains(&0)
            || self.recognition_hidden.contains(&0)
            || self.prediction_hidden.contains(&0)
        {
            return Err(Error::config("layer widths must be positive"));
        }
        if self.num_points == 0 {
            return Err(Error::config("num_points must be positive"));
        }
        self.anchor.validate()
    }

    pub fn context_dim(&self) -> usize {
        self.context_channels.last().copied().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Prior draws per object at inference.
    pub samples: usize,
    /// Fraction of training over which the KL weight ramps linearly 0 -> 1.
    pub anneal_fraction: f64,
    pub folds: usize,
    /// Weight of the KL term.
    pub gamma: f64,
    /// Weight of the direction-classification term.
    pub lambda: f64,
    pub huber_delta: f64,
    pub kl_form: KlForm,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub standard_augment: bool,
    /// Apply occlusion augmentation (per sample, with the configured probability).
    pub occlusion_augment: bool,
    pub occlusion: crate::synth::OcclusionConfig,
    /// Re-wrap augmented yaw into `(-pi/2, pi/2]`, for front/back symmetric
    /// objects whose heading cannot be read from the cloud.
    pub canonical_heading: bool,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            samples: 30,
            anneal_fraction: 0.5,
            folds: 10,
            gamma: 1.0,
            lambda: 0.2,
            huber_delta: 1.0,
            kl_form: KlForm::Printed,
            epochs: 40,
            batch_size: 32,
            seed: 0,
            standard_augment: true,
            occlusion_augment: true,
            occlusion: crate::synth::OcclusionConfig::default(),
            canonical_heading: true,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(Error::config("samples must be at least 1"));
        }
        if self.folds < 2 {
            return Err(Error::config("folds must be at least 2"));
        }
        if !(self.gamma >= 0.0) || !(self.lambda >= 0.0) {
            return Err(Error::config("gamma and lambda must be non-negative"));
        }
        if !(self.huber_delta > 0.0) {
            return Err(Error::config("huber_delta must be positive"));
        }
        if !(0.0..=1.0).contains(&self.anneal_fraction) {
            return Err(Error::config("anneal_fraction must lie in [0, 1]"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        self.occlusion.validate()
    }
}
