use serde::{Deserialize, Serialize};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use crate::clip::VideoClip;
use crate::error::{Error, Result};
use crate::illumination::{darken, IlluminationParams};
use crate::io::write_atomic;
use crate::noise::{apply_noise_with, NoiseOptions};
use crate::params::{NoiseVector, FORMAT_VERSION};
use crate::rng::RandomSource;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
/// `reference_id` of clips whose vector was given directly.
pub const MANUAL_REFERENCE: &str = "manual";

/// Everything needed to regenerate one synthesized clip from its clean source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesisManifest {
    pub format_version: u32,
    pub source_id: String,
    pub reference_id: String,
    pub noise_vector: NoiseVector,
    /// Absent when the clip was not darkened.
    pub illumination: Option<IlluminationParams>,
    pub seed: u64,
    /// Random stream the noise was drawn from (its `noise` child).
    pub stream: String,
    pub clamp: bool,
    #[serde(default)]
    pub noise_options: NoiseOptions,
    pub tool_version: String,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

/// Current time, or `SOURCE_DATE_EPOCH` when set so that reruns are byte-identical.
pub fn timestamp() -> u64 {
    if let Some(t) = std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|v| v.parse().ok()) {
        return t;
    }
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

impl SynthesisManifest {
    /// Regenerates the synthesized clip from `clean`.
    pub fn replay(&self, clean: &VideoClip) -> Result<VideoClip> {
        let x_d = match self.illumination {
            Some(p) => darken(clean, p)?,
            None => clean.clone(),
        };
        let rng = RandomSource::new(self.seed, self.stream.clone()).substream("noise");
        apply_noise_with(&x_d, &self.noise_vector, &rng, self.clamp, &self.noise_options)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text)?;
        if m.format_version != FORMAT_VERSION {
            return Err(Error::Config(format!(
                "unsupported manifest format_version {}, expected {FORMAT_VERSION}",
                m.format_version
            )));
        }
        m.noise_vector.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::data(path, e.to_string()))?;
        Self::from_json(&text)
    }
}
