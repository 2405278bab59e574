//! The run configuration: one TOML document holding the seed and every
//! module's block. Unknown keys are rejected at every level.

use std::path::Path;

use glenet::glenet::{ModelConfig, TrainConfig};
use glenet::postproc::VotingConfig;
use glenet::probdet::{QualityConfig, RegressorConfig};
use glenet::synth::SynthConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Save a GLENet checkpoint every this many epochs (0 disables).
    pub checkpoint_every: usize,
    /// Resampled predictions per object in detection dumps.
    pub detections_per_object: usize,
    pub synth: SynthConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub regressor: RegressorConfig,
    pub voting: VotingConfig,
    pub quality: QualityConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            checkpoint_every: 10,
            detections_per_object: 4,
            synth: SynthConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            regressor: RegressorConfig::default(),
            voting: VotingConfig::default(),
            quality: QualityConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::config(format!("{}: {}", path.display(), e.message)))
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::config(e.to_string()))
    }

    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string(self).map_err(|e| CliError::config(e.to_string()))
    }

    /// Pushes the run seed into every block that carries its own.
    pub fn apply_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.train.seed = seed;
        self.regressor.seed = seed;
        self.quality.seed = seed;
    }

    pub fn validate(&self) -> CliResult<()> {
        self.synth.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.voting.validate()?;
        if self.detections_per_object == 0 {
            return Err(CliError::config("detections_per_object must be at least 1"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dump_parses_back() {
        let c = RunConfig::default();
        let text = c.to_toml().unwrap();
        assert_eq!(RunConfig::parse(&text).unwrap(), c);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::parse("seed = 1\nbogus = 2\n").is_err());
        assert!(RunConfig::parse("[train]\nepochs = 3\ngama = 1.0\n").is_err());
    }

    #[test]
    fn partial_documents_fill_defaults() {
        let c = RunConfig::parse("seed = 9\n[voting]\nmu = 0.7\n").unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.voting.mu, 0.7);
        assert_eq!(c.voting.sigma_t, VotingConfig::default().sigma_t);
        assert_eq!(c.train, TrainConfig::default());
    }
}
