//! Configuration, manifests and the end-to-end commands behind the CLI.

pub mod commands;
pub mod config;
pub mod manifest;
pub mod synthetic;

pub use commands::{
    cmd_estimate, cmd_evaluate, cmd_replay, cmd_sample_noise, cmd_synthesize, cmd_train, read_clip_set,
    synthesize_clip, Darkening, EvaluateInputs, ParamsSource, SynthesizeOptions, MANIFEST_FILE,
};
pub use config::{PipelineConfig, CONFIG_ENV};
pub use manifest::SynthesisManifest;
pub use synthetic::procedural_clip;
