use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::estimator::{DenConfig, TrainingConfig};
use crate::evaluation::HistogramSpec;
use crate::noise::NoiseOptions;
use crate::params::ParamRanges;

/// Environment variable naming the config file used when `--config` is absent.
pub const CONFIG_ENV: &str = "LOWLIGHT_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub checkpoint: PathBuf,
    pub loss_trace: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            checkpoint: PathBuf::from("den_checkpoint.json"),
            loss_trace: PathBuf::from("loss_trace.csv"),
        }
    }
}

/// Everything a pipeline run can be configured with. Absent sections take
/// their defaults; unknown keys are rejected.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Sampling ranges; defaults to [`ParamRanges::for_patch`] of the model patch.
    pub param_ranges: Option<ParamRanges>,
    pub den: DenConfig,
    pub training: TrainingConfig,
    pub histogram: HistogramSpec,
    pub noise: NoiseOptions,
    pub paths: PathsConfig,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses `path`; relative paths inside are taken relative to its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        if let Some(base) = path.parent() {
            cfg.resolve_relative(base);
        }
        Ok(cfg)
    }

    fn resolve_relative(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(root) = self.training.data_root.as_mut() {
            fix(root);
        }
        fix(&mut self.paths.checkpoint);
        fix(&mut self.paths.loss_trace);
    }

    pub fn validate(&self) -> Result<()> {
        let as_config = |e: Error| match e {
            Error::Config(m) => Error::Config(m),
            other => Error::Config(other.to_string()),
        };
        self.den.validate()?;
        self.training.validate()?;
        self.histogram.validate().map_err(as_config)?;
        self.ranges().validate().map_err(as_config)
    }

    pub fn ranges(&self) -> ParamRanges {
        self.param_ranges
            .unwrap_or_else(|| ParamRanges::for_patch(self.den.patch_height, self.den.patch_width))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_takes_defaults() {
        let c = PipelineConfig::from_toml("").unwrap();
        assert_eq!(c.training.epochs, 10);
        assert_eq!(c.training.batch_size, 2);
        assert_eq!(c.training.frames, 16);
        assert_eq!(c.training.learning_rate, 0.0002);
        assert_eq!(c.den, DenConfig::default());
        assert_eq!(c.ranges(), ParamRanges::for_patch(128, 128));
    }

    #[test]
    fn partial_sections_merge_with_defaults() {
        let c = PipelineConfig::from_toml(
            "[training]\nepochs = 3\n[den]\ndepth = 2\npatch_height = 64\npatch_width = 64\n[histogram]\nbins = 101\n",
        )
        .unwrap();
        assert_eq!((c.training.epochs, c.training.batch_size), (3, 2));
        assert_eq!((c.den.depth, c.den.base_channels), (2, 32));
        assert_eq!(c.histogram.bins, 101);
        assert_eq!(c.ranges(), ParamRanges::for_patch(64, 64));
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(matches!(PipelineConfig::from_toml("colour = 1"), Err(Error::Config(_))));
        assert!(matches!(PipelineConfig::from_toml("[training]\nepochz = 1"), Err(Error::Config(_))));
        assert!(matches!(PipelineConfig::from_toml("[den]\ndepth = 1"), Err(Error::Config(_))));
        assert!(matches!(PipelineConfig::from_toml("[histogram]\nbins = 1"), Err(Error::Config(_))));
    }

    #[test]
    fn round_trips_through_toml() {
        let mut c = PipelineConfig::default();
        c.param_ranges = Some(ParamRanges::for_patch(64, 64));
        c.training.data_root = Some(PathBuf::from("/data"));
        let back = PipelineConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn relative_paths_follow_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        std::fs::write(&p, "[training]\ndata_root = \"clips\"\n[paths]\ncheckpoint = \"/abs/model.json\"\n").unwrap();
        let c = PipelineConfig::load(&p).unwrap();
        assert_eq!(c.training.data_root.unwrap(), dir.path().join("clips"));
        assert_eq!(c.paths.checkpoint, PathBuf::from("/abs/model.json"));
        assert_eq!(c.paths.loss_trace, dir.path().join("loss_trace.csv"));
        assert!(matches!(PipelineConfig::load(&dir.path().join("missing.toml")), Err(Error::Config(_))));
    }
}
