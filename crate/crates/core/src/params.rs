//! The eight-entry noise vector and the sampling ranges used for it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NOISE_VECTOR_LEN: usize = 8;
pub const FORMAT_VERSION: u32 = 1;

/// Entry names in their fixed order.
pub const FIELD_NAMES: [&str; NOISE_VECTOR_LEN] = [
    "sigma_s", "sigma_r", "lambda_q", "sigma_b", "sigma_bt", "sigma_p1", "sigma_p2", "sigma_p3",
];

/// Parameters of the noise simulator, in the order
/// `[sigma_s, sigma_r, lambda_q, sigma_b, sigma_bt, sigma_p1, sigma_p2, sigma_p3]`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseVector {
    /// Shot-noise coefficient; variance contribution is `sigma_s² · x`.
    pub sigma_s: f64,
    /// Read-noise standard deviation.
    pub sigma_r: f64,
    /// Upper bound of the uniform quantization noise.
    pub lambda_q: f64,
    /// Per-frame column banding standard deviation.
    pub sigma_b: f64,
    /// Clip-constant column banding standard deviation.
    pub sigma_bt: f64,
    /// Spectral amplitude std of the DC periodic term.
    pub sigma_p1: f64,
    /// Spectral amplitude std of the real part at `W/4`.
    pub sigma_p2: f64,
    /// Spectral amplitude std of the imaginary part at `W/4`.
    pub sigma_p3: f64,
}

impl NoiseVector {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn from_array(a: [f64; NOISE_VECTOR_LEN]) -> Self {
        Self {
            sigma_s: a[0],
            sigma_r: a[1],
            lambda_q: a[2],
            sigma_b: a[3],
            sigma_bt: a[4],
            sigma_p1: a[5],
            sigma_p2: a[6],
            sigma_p3: a[7],
        }
    }

    pub fn to_array(&self) -> [f64; NOISE_VECTOR_LEN] {
        [
            self.sigma_s,
            self.sigma_r,
            self.lambda_q,
            self.sigma_b,
            self.sigma_bt,
            self.sigma_p1,
            self.sigma_p2,
            self.sigma_p3,
        ]
    }

    /// Names of entries that are negative or not finite. Empty means valid.
    pub fn violations(&self) -> Vec<&'static str> {
        self.to_array()
            .iter()
            .zip(FIELD_NAMES)
            .filter(|(v, _)| !(v.is_finite() && **v >= 0.0))
            .map(|(_, name)| name)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = self.violations();
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "noise vector entries must be finite and non-negative: {}",
                bad.join(", ")
            )))
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let file = NoiseVectorFile {
            format_version: FORMAT_VERSION,
            vector: *self,
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: NoiseVectorFile = serde_json::from_str(text)?;
        if file.format_version != FORMAT_VERSION {
            return Err(Error::invalid(format!(
                "unsupported noise vector format_version {}",
                file.format_version
            )));
        }
        file.vector.validate()?;
        Ok(file.vector)
    }
}

/// Validates a noise vector, returning the offending entry names.
pub fn validate_noise_vector(v: &NoiseVector) -> std::result::Result<(), Vec<&'static str>> {
    let bad = v.violations();
    if bad.is_empty() {
        Ok(())
    } else {
        Err(bad)
    }
}

#[derive(Serialize, Deserialize)]
struct NoiseVectorFile {
    format_version: u32,
    #[serde(flatten)]
    vector: NoiseVector,
}

/// Closed sampling interval `[low, high]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bound {
    pub low: f64,
    pub high: f64,
}

impl Bound {
    pub const fn new(low: f64, high: f64) -> Self {
        Self { low, high }
    }

    pub const fn point(v: f64) -> Self {
        Self { low: v, high: v }
    }

    pub fn width(&self) -> f64 {
        self.high - self.low
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.low + self.high)
    }

    fn check(&self, name: &str) -> Result<()> {
        if !(self.low.is_finite() && self.high.is_finite() && 0.0 <= self.low && self.low <= self.high) {
            return Err(Error::invalid(format!(
                "range {name} must satisfy 0 <= low <= high, got [{}, {}]",
                self.low, self.high
            )));
        }
        Ok(())
    }

    /// Affine map of `v` onto `[0, 1]`; degenerate bounds map to 0.
    pub fn normalize(&self, v: f64) -> f64 {
        let w = self.width();
        if w > 0.0 {
            (v - self.low) / w
        } else {
            0.0
        }
    }

    pub fn denormalize(&self, u: f64) -> f64 {
        self.low + u * self.width()
    }
}

/// Sampling bounds for the noise vector and the illumination coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamRanges {
    pub sigma_s: Bound,
    pub sigma_r: Bound,
    pub lambda_q: Bound,
    pub sigma_b: Bound,
    pub sigma_bt: Bound,
    pub sigma_p1: Bound,
    pub sigma_p2: Bound,
    pub sigma_p3: Bound,
    pub alpha: Bound,
    pub gamma: Bound,
}

impl ParamRanges {
    /// Training defaults for `height×width` patches. Periodic amplitudes are
    /// spectral and scale with `sqrt(height·width)`.
    pub fn for_patch(height: usize, width: usize) -> Self {
        let periodic = Bound::new(0.0, 0.02 * ((height * width) as f64).sqrt());
        Self {
            sigma_s: Bound::new(0.0, 0.25),
            sigma_r: Bound::new(0.0, 0.12),
            lambda_q: Bound::new(0.0, 0.06),
            sigma_b: Bound::new(0.0, 0.03),
            sigma_bt: Bound::new(0.0, 0.03),
            sigma_p1: periodic,
            sigma_p2: periodic,
            sigma_p3: periodic,
            alpha: Bound::new(0.05, 0.3),
            gamma: Bound::new(0.1, 1.0),
        }
    }

    /// Every bound collapsed to zero, with identity illumination.
    pub fn noiseless() -> Self {
        let z = Bound::point(0.0);
        Self {
            sigma_s: z,
            sigma_r: z,
            lambda_q: z,
            sigma_b: z,
            sigma_bt: z,
            sigma_p1: z,
            sigma_p2: z,
            sigma_p3: z,
            alpha: Bound::point(1.0),
            gamma: Bound::point(1.0),
        }
    }

    pub fn noise_bounds(&self) -> [Bound; NOISE_VECTOR_LEN] {
        [
            self.sigma_s,
            self.sigma_r,
            self.lambda_q,
            self.sigma_b,
            self.sigma_bt,
            self.sigma_p1,
            self.sigma_p2,
            self.sigma_p3,
        ]
    }

    pub fn with_noise_bounds(mut self, b: [Bound; NOISE_VECTOR_LEN]) -> Self {
        self.sigma_s = b[0];
        self.sigma_r = b[1];
        self.lambda_q = b[2];
        self.sigma_b = b[3];
        self.sigma_bt = b[4];
        self.sigma_p1 = b[5];
        self.sigma_p2 = b[6];
        self.sigma_p3 = b[7];
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (b, name) in self.noise_bounds().iter().zip(FIELD_NAMES) {
            b.check(name)?;
        }
        for (b, name) in [(self.alpha, "alpha"), (self.gamma, "gamma")] {
            b.check(name)?;
            if b.low <= 0.0 || b.high > 1.0 {
                return Err(Error::invalid(format!(
                    "range {name} must lie in (0, 1], got [{}, {}]",
                    b.low, b.high
                )));
            }
        }
        Ok(())
    }

    /// Affine map of every entry onto `[0, 1]` by its bound.
    pub fn normalize(&self, v: &NoiseVector) -> [f64; NOISE_VECTOR_LEN] {
        let b = self.noise_bounds();
        let a = v.to_array();
        std::array::from_fn(|i| b[i].normalize(a[i]))
    }

    pub fn denormalize(&self, u: &[f64; NOISE_VECTOR_LEN]) -> NoiseVector {
        let b = self.noise_bounds();
        NoiseVector::from_array(std::array::from_fn(|i| b[i].denormalize(u[i])))
    }
}

impl Default for ParamRanges {
    fn default() -> Self {
        Self::for_patch(64, 64)
    }
}
