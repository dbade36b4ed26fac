//! Illumination reducer: `x_d = alpha · x^(1/gamma)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::clip::VideoClip;
use crate::error::{Error, Result};
use crate::params::{Bound, ParamRanges};
use crate::rng::RandomSource;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IlluminationParams {
    /// Linear intensity scale in `(0, 1]`.
    pub alpha: f64,
    /// Gamma parameter in `(0, 1]`; the exponent applied is `1/gamma`.
    pub gamma: f64,
}

impl IlluminationParams {
    pub const IDENTITY: Self = Self {
        alpha: 1.0,
        gamma: 1.0,
    };

    pub fn new(alpha: f64, gamma: f64) -> Result<Self> {
        let p = Self { alpha, gamma };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::invalid(format!("alpha must lie in (0, 1], got {}", self.alpha)));
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(Error::invalid(format!("gamma must be positive, got {}", self.gamma)));
        }
        Ok(())
    }

    pub fn apply(&self, x: f64) -> f64 {
        if self.gamma == 1.0 {
            self.alpha * x
        } else {
            self.alpha * x.max(0.0).powf(1.0 / self.gamma)
        }
    }
}

/// Darkens every element of `clip`. One parameter pair covers the whole clip.
pub fn darken(clip: &VideoClip, params: IlluminationParams) -> Result<VideoClip> {
    params.validate()?;
    Ok(clip.map(|x| params.apply(x)))
}

fn uniform(rng: &mut impl Rng, b: Bound) -> f64 {
    if b.width() > 0.0 {
        rng.gen_range(b.low..b.high)
    } else {
        b.low
    }
}

/// Draws `alpha` and `gamma` uniformly over their configured bounds.
pub fn sample_illumination(ranges: &ParamRanges, rng: &RandomSource) -> Result<IlluminationParams> {
    ranges.validate()?;
    let mut g = rng.rng();
    let alpha = uniform(&mut g, ranges.alpha);
    let gamma = uniform(&mut g, ranges.gamma);
    IlluminationParams::new(alpha, gamma)
}
