use alloc::format;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::batchnorm::{BN_EPS, BN_MOMENTUM};
use crate::nn::conv::ConvShape;
use crate::types::{GestureLabel, ModalityPair, SensorType};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionKind {
    Llr,
    SelfAttention,
}

impl FusionKind {
    pub fn key(self) -> &'static str {
        match self {
            FusionKind::Llr => "llr",
            FusionKind::SelfAttention => "self_attention",
        }
    }

    pub fn parse(s: &str) -> Option<FusionKind> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "llr" => Some(FusionKind::Llr),
            "self_attention" | "attention" | "sa" => Some(FusionKind::SelfAttention),
            _ => None,
        }
    }
}

impl fmt::Display for FusionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Feature width `D` of conv outputs, GRU states and fusion features.
    pub feature_dim: usize,
    pub conv_layers: usize,
    pub kernel_size: usize,
    pub stride: usize,
    pub gru_layers: usize,
    pub num_classes: usize,
    pub fusion: FusionKind,
    /// Per-pair probabilities are clamped to `[eps, 1 - eps]` before the LLR.
    pub llr_clamp: f64,
    pub active_pairs: Vec<ModalityPair>,
    /// Window length the input shapes are derived from.
    pub window_seconds: f64,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            feature_dim: 64,
            conv_layers: 2,
            kernel_size: 5,
            stride: 2,
            gru_layers: 2,
            num_classes: GestureLabel::NUM_GESTURES,
            fusion: FusionKind::Llr,
            llr_clamp: 1e-7,
            active_pairs: ModalityPair::ALL.to_vec(),
            window_seconds: 3.0,
            bn_momentum: BN_MOMENTUM,
            bn_eps: BN_EPS,
        }
    }
}

impl ModelConfig {
    pub fn with_fusion(mut self, fusion: FusionKind) -> Self {
        self.fusion = fusion;
        self
    }

    pub fn with_active_pairs(mut self, pairs: Vec<ModalityPair>) -> Self {
        self.active_pairs = pairs;
        self
    }

    /// Sorts and dedups `active_pairs`, then checks every field.
    pub fn normalized(mut self) -> Result<Self> {
        self.active_pairs.sort();
        self.active_pairs.dedup();
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.active_pairs.is_empty() {
            return Err(Error::Config("active_pairs must not be empty".into()));
        }
        if self.active_pairs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("active_pairs must be sorted and unique".into()));
        }
        if self.feature_dim == 0 || self.conv_layers == 0 || self.gru_layers == 0 {
            return Err(Error::Config(
                "feature_dim, conv_layers and gru_layers must be positive".into(),
            ));
        }
        if self.kernel_size == 0 || self.stride == 0 {
            return Err(Error::Config("kernel_size and stride must be positive".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::Config("need at least two classes".into()));
        }
        if !(self.llr_clamp > 0.0 && self.llr_clamp < 0.5 / self.num_classes as f64) {
            return Err(Error::Config(format!(
                "llr_clamp {} must lie in (0, 0.5/N)",
                self.llr_clamp
            )));
        }
        if !(self.window_seconds > 0.0) {
            return Err(Error::Config("window_seconds must be positive".into()));
        }
        for &p in &self.active_pairs {
            self.encoder_steps(p)?;
        }
        Ok(())
    }

    /// Sensor types that need a conv subnet, in canonical order.
    pub fn active_sensors(&self) -> Vec<SensorType> {
        SensorType::ALL
            .into_iter()
            .filter(|s| self.active_pairs.iter().any(|p| p.sensor == *s))
            .collect()
    }

    pub fn input_shape(&self, pair: ModalityPair) -> (usize, usize) {
        (pair.window_len(self.window_seconds), pair.channel_count())
    }

    pub fn conv_shape(&self, sensor: SensorType, layer: usize) -> ConvShape {
        ConvShape {
            kernel: self.kernel_size,
            c_in: if layer == 0 {
                sensor.channel_count()
            } else {
                self.feature_dim
            },
            c_out: self.feature_dim,
            stride: self.stride,
        }
    }

    /// Temporal length `T*` reaching the GRU for `pair`.
    pub fn encoder_steps(&self, pair: ModalityPair) -> Result<usize> {
        let mut t = self.input_shape(pair).0;
        for l in 0..self.conv_layers {
            t = self.conv_shape(pair.sensor, l).out_len(t).map_err(|_| {
                Error::Config(format!(
                    "{}: {}-sample window too short for {} conv layers (K={}, stride={})",
                    pair.key(),
                    pair.window_len(self.window_seconds),
                    self.conv_layers,
                    self.kernel_size,
                    self.stride
                ))
            })?;
        }
        Ok(t)
    }
}
