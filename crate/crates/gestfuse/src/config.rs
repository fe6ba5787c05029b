//! Run configuration: every module config in one JSON document.
//!
//! Precedence is flags > config file > defaults. The resolved config is
//! written next to every artifact a subcommand produces.

use std::path::Path;

use gestfuse_core::sync::PreprocessConfig;
use gestfuse_core::synth::SynthConfig;
use gestfuse_core::train::{SplitKind, TrainConfig};
use gestfuse_core::window::WindowingConfig;
use gestfuse_core::{FusionKind, ModelConfig};
use serde::{Deserialize, Serialize};

use crate::error::{read_json, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Overrides both the generator and the training seed when set.
    pub seed: Option<u64>,
    pub split: SplitKind,
    pub fusion: FusionKind,
    /// Session ids (or `participant/session`) left out of every split.
    pub excluded_sessions: Vec<String>,
    pub synth: SynthConfig,
    pub preprocess: PreprocessConfig,
    pub windowing: WindowingConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: None,
            split: SplitKind::Loso,
            fusion: FusionKind::Llr,
            excluded_sessions: Vec::new(),
            synth: SynthConfig::default(),
            preprocess: PreprocessConfig::default(),
            windowing: WindowingConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<RunConfig> {
        match path {
            Some(p) => read_json(p),
            None => Ok(RunConfig::default()),
        }
    }

    pub fn synth_config(&self) -> SynthConfig {
        let mut c = self.synth.clone();
        if let Some(s) = self.seed {
            c.seed = s;
        }
        c
    }

    pub fn train_config(&self) -> TrainConfig {
        let mut c = self.train.clone();
        if let Some(s) = self.seed {
            c.seed = s;
        }
        c
    }

    /// Model config with the run's fusion kind and window length applied.
    pub fn model_config(&self) -> Result<ModelConfig> {
        let mut c = self.model.clone().with_fusion(self.fusion);
        c.window_seconds = self.windowing.window_seconds;
        Ok(c.normalized()?)
    }

    pub fn validate(&self) -> Result<()> {
        self.synth_config().validate()?;
        self.windowing.validate()?;
        self.train_config().validate()?;
        self.model_config()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_json_keeps_defaults() {
        let c: RunConfig = serde_json::from_str(r#"{"fusion":"self_attention","model":{"feature_dim":16}}"#).unwrap();
        assert_eq!(c.fusion, FusionKind::SelfAttention);
        assert_eq!(c.model.feature_dim, 16);
        assert_eq!(c.model.kernel_size, ModelConfig::default().kernel_size);
        assert_eq!(c.train, TrainConfig::default());
        c.validate().unwrap();
    }

    #[test]
    fn seed_overrides_both_stages() {
        let c = RunConfig {
            seed: Some(99),
            ..RunConfig::default()
        };
        assert_eq!(c.synth_config().seed, 99);
        assert_eq!(c.train_config().seed, 99);
    }

    #[test]
    fn round_trips_through_json() {
        let c = RunConfig::default();
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&s).unwrap(), c);
    }
}
