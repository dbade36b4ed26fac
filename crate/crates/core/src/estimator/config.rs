use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which heads the network carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Encoder and decoder only; an image-to-image noisy-frame predictor.
    V1,
    /// Encoder and regression head only.
    V2,
    /// Encoder, decoder and regression head.
    V3,
}

impl Variant {
    pub fn has_decoder(self) -> bool {
        matches!(self, Variant::V1 | Variant::V3)
    }

    pub fn has_head(self) -> bool {
        matches!(self, Variant::V2 | Variant::V3)
    }
}

/// How per-frame pooled features are combined across frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemporalPooling {
    Mean,
    /// Mean and standard deviation over frames, plus the column profile of the time-averaged features.
    MeanStd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenConfig {
    /// Number of 2× downsampling stages.
    pub depth: usize,
    /// Channels at full resolution; doubled at every stage.
    pub base_channels: usize,
    pub mlp_hidden: Vec<usize>,
    pub variant: Variant,
    pub temporal_pooling: TemporalPooling,
    pub patch_height: usize,
    pub patch_width: usize,
    pub frames_per_sample: usize,
    /// Input channels (1 or 3).
    pub channels: usize,
}

impl Default for DenConfig {
    fn default() -> Self {
        Self {
            depth: 4,
            base_channels: 32,
            mlp_hidden: vec![256, 64],
            variant: Variant::V3,
            temporal_pooling: TemporalPooling::MeanStd,
            patch_height: 128,
            patch_width: 128,
            frames_per_sample: 16,
            channels: 3,
        }
    }
}

impl DenConfig {
    /// Small configuration that trains on a single CPU core in minutes.
    pub fn desk() -> Self {
        Self {
            depth: 2,
            base_channels: 8,
            mlp_hidden: vec![64, 32],
            patch_height: 64,
            patch_width: 64,
            frames_per_sample: 8,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth < 2 {
            return Err(Error::Config(format!("depth must be at least 2, got {}", self.depth)));
        }
        if self.base_channels == 0 {
            return Err(Error::Config("base_channels must be positive".into()));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::Config(format!("channels must be 1 or 3, got {}", self.channels)));
        }
        if self.frames_per_sample == 0 {
            return Err(Error::Config("frames_per_sample must be positive".into()));
        }
        if self.mlp_hidden.iter().any(|&h| h == 0) {
            return Err(Error::Config("mlp_hidden widths must be positive".into()));
        }
        let step = 1usize << self.depth;
        for (name, v) in [("patch_height", self.patch_height), ("patch_width", self.patch_width)] {
            if v == 0 || v % step != 0 {
                return Err(Error::Config(format!(
                    "{name} = {v} must be a positive multiple of 2^depth = {step}"
                )));
            }
            if v < crate::clip::MIN_SIDE {
                return Err(Error::Config(format!("{name} must be at least {}", crate::clip::MIN_SIDE)));
            }
        }
        Ok(())
    }

    pub fn level_channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    pub fn stats_per_channel(&self) -> usize {
        match self.temporal_pooling {
            TemporalPooling::Mean => 4,
            TemporalPooling::MeanStd => 9,
        }
    }

    pub fn descriptor_len(&self) -> usize {
        (0..=self.depth).map(|l| self.level_channels(l)).sum::<usize>() * self.stats_per_channel()
    }
}
