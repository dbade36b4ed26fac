//! Synthetic low-light degradation toolkit.
//!
//! * [`noise`] simulates five physically motivated noise components from an
//!   eight-entry [`NoiseVector`] and adds them to darkened clips.
//! * [`estimator`] regresses that vector from a noisy reference clip with a
//!   small encoder/decoder network trained on self-generated data.
//! * [`evaluation`] compares real and synthetic noise maps.
//! * [`pipeline`] ties these together behind the `lowlight` command line.

pub mod clip;
pub mod error;
pub mod estimator;
pub mod evaluation;
pub mod illumination;
pub mod io;
pub mod noise;
pub mod params;
pub mod pipeline;
pub mod rng;
pub mod stats;

pub use clip::{Shape, VideoClip};
pub use error::{Error, Result};
pub use illumination::{darken, sample_illumination, IlluminationParams};
pub use noise::{apply_noise, sample_noise_vector, simulate_noise, NoiseComponent, NoiseMap};
pub use params::{Bound, NoiseVector, ParamRanges};
pub use rng::RandomSource;
