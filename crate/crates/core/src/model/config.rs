use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// What follows each convolution inside a block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationVariant {
    /// `relu(y) * V + y * (1 - V)` with `V = sigmoid(conv3x3(y))`.
    PixelCalibration,
    Relu,
    /// Batch normalization followed by relu.
    ReluBatchnorm,
    /// Highway gate: the transform branch is `relu(conv3x3(y))`.
    Highway,
}

impl ActivationVariant {
    pub const ALL: [ActivationVariant; 4] = [
        ActivationVariant::PixelCalibration,
        ActivationVariant::Relu,
        ActivationVariant::ReluBatchnorm,
        ActivationVariant::Highway,
    ];
}

/// How the three stages are optimized.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingProcedure {
    /// Stage by stage, freezing each finished stage.
    Stagewise,
    /// All twelve loss terms summed, gradients blocked at stage boundaries.
    JointNoInterstageGrad,
    /// All twelve loss terms summed, gradients flow across stages.
    InterstageGrad,
    /// Only the final loss, gradients flow end to end.
    EndToEnd,
}

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WdnConfig {
    /// Upscaling factor: 2, 3 or 4. Only the initial bicubic factor changes.
    pub scale: usize,
    /// Internal feature width of every block.
    pub channels: usize,
    /// Number of conv + activation pairs before a block's tail conv.
    pub block_depth: usize,
    pub activation: ActivationVariant,
    /// Split inputs and targets into Sobel high/low frequency channels.
    pub frequency_division: bool,
    /// Two successive 2x stages (true) or a single 4x stage (false).
    pub scale_division: bool,
    pub attention: bool,
    pub training_procedure: TrainingProcedure,
}

impl WdnConfig {
    /// Full-size architecture (64 channels, depth 8).
    pub fn full() -> Self {
        Self {
            scale: 4,
            channels: 64,
            block_depth: 8,
            activation: ActivationVariant::PixelCalibration,
            frequency_division: true,
            scale_division: true,
            attention: true,
            training_procedure: TrainingProcedure::Stagewise,
        }
    }

    /// Desk-scale architecture (16 channels, depth 2).
    pub fn desk() -> Self {
        Self {
            channels: 16,
            block_depth: 2,
            ..Self::full()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=4).contains(&self.scale) {
            return Err(Error::Config(format!("scale must be 2, 3 or 4, got {}", self.scale)));
        }
        if self.channels == 0 {
            return Err(Error::Config("channels must be positive".into()));
        }
        if self.block_depth == 0 {
            return Err(Error::Config("block_depth must be at least 1".into()));
        }
        Ok(())
    }

    /// Block size of the input space-to-depth: 4, or 2 without scale division.
    pub fn input_block(&self) -> usize {
        if self.scale_division {
            4
        } else {
            2
        }
    }

    /// Number of network input channels per frequency band.
    pub fn inputs_per_band(&self) -> usize {
        self.input_block() * self.input_block()
    }

    /// Number of stage-1 modules (zero without scale division).
    pub fn stage1_modules(&self) -> usize {
        if self.scale_division {
            8
        } else {
            0
        }
    }
}

impl Default for WdnConfig {
    fn default() -> Self {
        Self::desk()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        WdnConfig::full().validate().unwrap();
        WdnConfig::desk().validate().unwrap();
        let mut c = WdnConfig::desk();
        c.scale = 5;
        assert!(c.validate().is_err());
    }

    #[test]
    fn serde_names() {
        let text = serde_json::to_string(&WdnConfig::desk()).unwrap();
        assert!(text.contains("\"pixel_calibration\""));
        assert!(text.contains("\"stagewise\""));
        let back: WdnConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, WdnConfig::desk());
    }
}
