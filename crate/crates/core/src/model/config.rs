use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture description. Serialized into every checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub num_scales: usize,
    /// Output channels of each encoder block, shallowest first.
    pub encoder_channels: Vec<usize>,
    pub convs_per_block: Vec<usize>,
    pub attention_in_encoder: bool,
    pub attention_in_decoder: bool,
    /// Channels of the refined side map produced at every attention site.
    pub attention_out_channels: usize,
    pub input_channels: usize,
    pub use_instance_norm: bool,
    /// Replace each attention filter with a single trainable scalar gate.
    pub use_scalar_weight_variant: bool,
    /// Hidden width of the enhancement encoder's fusion chain.
    pub enhancement_channels: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            num_scales: 5,
            encoder_channels: vec![64, 128, 256, 512, 512],
            convs_per_block: vec![2, 2, 3, 3, 3],
            attention_in_encoder: true,
            attention_in_decoder: true,
            attention_out_channels: 1,
            input_channels: 4,
            use_instance_norm: true,
            use_scalar_weight_variant: false,
            enhancement_channels: 16,
        }
    }
}

impl ModelConfig {
    /// The complete network: attention on both sides, edge channel, five scales.
    pub fn full() -> Self {
        Self::default()
    }

    /// Plain encoder/decoder with side outputs and no attention.
    pub fn baseline() -> Self {
        Self {
            attention_in_encoder: false,
            attention_in_decoder: false,
            ..Self::default()
        }
    }

    /// Four-level scale space.
    pub fn four_scale() -> Self {
        Self {
            num_scales: 4,
            encoder_channels: vec![64, 128, 256, 512],
            convs_per_block: vec![2, 2, 3, 3],
            ..Self::default()
        }
    }

    /// Same topology with every block width divided by `divisor` (minimum 1).
    pub fn narrowed(mut self, divisor: usize) -> Self {
        let d = divisor.max(1);
        for c in &mut self.encoder_channels {
            *c = (*c / d).max(1);
        }
        self
    }

    pub fn has_attention(&self) -> bool {
        self.attention_in_encoder || self.attention_in_decoder
    }

    /// Spatial sizes must be multiples of this.
    pub fn size_multiple(&self) -> usize {
        1 << self.num_scales
    }

    pub fn validate(&self) -> Result<()> {
        if !(4..=5).contains(&self.num_scales) {
            return Err(Error::Config(format!(
                "model.num_scales must be 4 or 5, got {}",
                self.num_scales
            )));
        }
        if self.encoder_channels.len() != self.num_scales || self.convs_per_block.len() != self.num_scales {
            return Err(Error::Config(format!(
                "model.encoder_channels ({}) and model.convs_per_block ({}) must both have num_scales = {} entries",
                self.encoder_channels.len(),
                self.convs_per_block.len(),
                self.num_scales
            )));
        }
        if self.num_scales == 5 && self.convs_per_block.iter().sum::<usize>() != 13 {
            return Err(Error::Config(format!(
                "a 5-scale encoder has 13 convolutions, model.convs_per_block sums to {}",
                self.convs_per_block.iter().sum::<usize>()
            )));
        }
        if self.convs_per_block.iter().any(|&n| n == 0) || self.encoder_channels.iter().any(|&c| c == 0) {
            return Err(Error::Config("block widths and conv counts must be >= 1".into()));
        }
        if !(3..=4).contains(&self.input_channels) {
            return Err(Error::Config(format!(
                "model.input_channels must be 3 or 4, got {}",
                self.input_channels
            )));
        }
        if self.attention_out_channels == 0 || self.enhancement_channels == 0 {
            return Err(Error::Config(
                "model.attention_out_channels and model.enhancement_channels must be >= 1".into(),
            ));
        }
        Ok(())
    }
}
