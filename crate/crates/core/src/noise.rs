//! Physics-motivated noise generators and their composition.
//!
//! Each generator draws from its own [`RandomSource`] stream and, where frames
//! are independent, from a per-frame substream, so switching one component off
//! leaves the draws of every other component untouched.

use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::clip::{Shape, VideoClip};
use crate::error::{Error, Result};
use crate::params::{NoiseVector, ParamRanges, NOISE_VECTOR_LEN};
use crate::rng::RandomSource;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseComponent {
    Heteroscedastic,
    Quantization,
    Banding,
    TemporalBanding,
    Periodic,
    Composite,
}

impl NoiseComponent {
    pub const PARTS: [NoiseComponent; 5] = [
        NoiseComponent::Heteroscedastic,
        NoiseComponent::Quantization,
        NoiseComponent::Banding,
        NoiseComponent::TemporalBanding,
        NoiseComponent::Periodic,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            NoiseComponent::Heteroscedastic => "heteroscedastic",
            NoiseComponent::Quantization => "quantization",
            NoiseComponent::Banding => "banding",
            NoiseComponent::TemporalBanding => "temporal_banding",
            NoiseComponent::Periodic => "periodic",
            NoiseComponent::Composite => "composite",
        }
    }
}

/// Signed per-pixel residual volume with the layout of [`VideoClip`].
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseMap {
    shape: Shape,
    values: Vec<f64>,
    component: NoiseComponent,
}

impl NoiseMap {
    pub fn new(shape: Shape, values: Vec<f64>, component: NoiseComponent) -> Result<Self> {
        if values.len() != shape.len() {
            return Err(Error::shape(format!(
                "{} values do not match noise map shape {shape}",
                values.len()
            )));
        }
        Ok(Self {
            shape,
            values,
            component,
        })
    }

    pub fn zeros(shape: Shape, component: NoiseComponent) -> Self {
        Self {
            shape,
            values: vec![0.0; shape.len()],
            component,
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn component(&self) -> NoiseComponent {
        self.component
    }

    pub fn plane(&self, t: usize, c: usize) -> &[f64] {
        let off = self.shape.plane_offset(t, c);
        &self.values[off..off + self.shape.plane_len()]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Sum of squares.
    pub fn energy(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }
}

fn check_nonneg(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must be finite and non-negative, got {v}")))
    }
}

fn frame_stream(rng: &RandomSource, t: usize) -> RandomSource {
    rng.substream(format!("frame{t}"))
}

/// `n ~ N(0, sigma_s²·x + sigma_r²)` independently at every element of `signal`.
/// Negative signal values contribute no shot variance.
pub fn heteroscedastic_noise(
    signal: &VideoClip,
    sigma_s: f64,
    sigma_r: f64,
    rng: &RandomSource,
) -> Result<NoiseMap> {
    check_nonneg("sigma_s", sigma_s)?;
    check_nonneg("sigma_r", sigma_r)?;
    let shape = signal.shape();
    let kind = NoiseComponent::Heteroscedastic;
    if sigma_s == 0.0 && sigma_r == 0.0 {
        return Ok(NoiseMap::zeros(shape, kind));
    }
    let (shot, read) = (sigma_s * sigma_s, sigma_r * sigma_r);
    let mut values = Vec::with_capacity(shape.len());
    for t in 0..shape.frames {
        let mut g = frame_stream(rng, t).rng();
        for &x in signal.frame(t) {
            let z: f64 = g.sample(StandardNormal);
            values.push(z * (shot * x.max(0.0) + read).sqrt());
        }
    }
    NoiseMap::new(shape, values, kind)
}

/// Uniform draws on `[0, lambda_q)`, or on `[-lambda_q/2, lambda_q/2)` when `centered`.
pub fn quantization_noise(shape: Shape, lambda_q: f64, centered: bool, rng: &RandomSource) -> Result<NoiseMap> {
    check_nonneg("lambda_q", lambda_q)?;
    let kind = NoiseComponent::Quantization;
    if lambda_q == 0.0 {
        return Ok(NoiseMap::zeros(shape, kind));
    }
    let shift = if centered { 0.5 * lambda_q } else { 0.0 };
    let mut values = Vec::with_capacity(shape.len());
    for t in 0..shape.frames {
        let mut g = frame_stream(rng, t).rng();
        for _ in 0..shape.frame_len() {
            let u: f64 = g.gen();
            values.push(u * lambda_q - shift);
        }
    }
    NoiseMap::new(shape, values, kind)
}

/// Writes a `C×W` block of column offsets down every row of frame `t`.
fn broadcast_rows(shape: Shape, values: &mut [f64], t: usize, rows: &[f64]) {
    for c in 0..shape.channels {
        let row = &rows[c * shape.width..(c + 1) * shape.width];
        for y in 0..shape.height {
            let off = shape.index(t, c, y, 0);
            values[off..off + shape.width].copy_from_slice(row);
        }
    }
}

fn normal_rows(g: &mut impl Rng, shape: Shape, sigma: f64) -> Vec<f64> {
    (0..shape.channels * shape.width)
        .map(|_| sigma * g.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Vertical bands: one `N(0, sigma_b²)` row per frame and channel, repeated down the rows.
pub fn banding_noise(shape: Shape, sigma_b: f64, rng: &RandomSource) -> Result<NoiseMap> {
    check_nonneg("sigma_b", sigma_b)?;
    let kind = NoiseComponent::Banding;
    if sigma_b == 0.0 {
        return Ok(NoiseMap::zeros(shape, kind));
    }
    let mut values = vec![0.0; shape.len()];
    for t in 0..shape.frames {
        let rows = normal_rows(&mut frame_stream(rng, t).rng(), shape, sigma_b);
        broadcast_rows(shape, &mut values, t, &rows);
    }
    NoiseMap::new(shape, values, kind)
}

/// Vertical bands drawn once per clip and repeated in every frame.
pub fn temporal_banding_noise(shape: Shape, sigma_bt: f64, rng: &RandomSource) -> Result<NoiseMap> {
    check_nonneg("sigma_bt", sigma_bt)?;
    let kind = NoiseComponent::TemporalBanding;
    if sigma_bt == 0.0 {
        return Ok(NoiseMap::zeros(shape, kind));
    }
    let rows = normal_rows(&mut rng.rng(), shape, sigma_bt);
    let mut values = vec![0.0; shape.len()];
    for t in 0..shape.frames {
        broadcast_rows(shape, &mut values, t, &rows);
    }
    NoiseMap::new(shape, values, kind)
}

/// Real length-`width` row whose spectrum holds `a` at bin 0 and the conjugate
/// pair `b ± d·i` at bins `W/4` and `3W/4`. Inverse transform uses `1/W` scaling.
pub fn periodic_row(width: usize, a: f64, b: f64, d: f64, planner: &mut FftPlanner<f64>) -> Result<Vec<f64>> {
    if width == 0 || width % 4 != 0 {
        return Err(Error::shape(format!(
            "periodic noise needs a width divisible by 4, got {width}"
        )));
    }
    let mut spectrum = vec![Complex::new(0.0, 0.0); width];
    spectrum[0] = Complex::new(a, 0.0);
    spectrum[width / 4] = Complex::new(b, d);
    spectrum[3 * width / 4] = Complex::new(b, -d);
    planner.plan_fft_inverse(width).process(&mut spectrum);
    let scale = 1.0 / width as f64;
    Ok(spectrum.iter().map(|z| z.re * scale).collect())
}

/// Periodic stripes: per frame and channel, scalars `a, b, d` drawn with stds
/// `sigma_p1..3` set three spectral bins of a width-axis row, broadcast down the rows.
pub fn periodic_noise(
    shape: Shape,
    sigma_p1: f64,
    sigma_p2: f64,
    sigma_p3: f64,
    rng: &RandomSource,
) -> Result<NoiseMap> {
    check_nonneg("sigma_p1", sigma_p1)?;
    check_nonneg("sigma_p2", sigma_p2)?;
    check_nonneg("sigma_p3", sigma_p3)?;
    let kind = NoiseComponent::Periodic;
    if sigma_p1 == 0.0 && sigma_p2 == 0.0 && sigma_p3 == 0.0 {
        return Ok(NoiseMap::zeros(shape, kind));
    }
    let mut planner = FftPlanner::new();
    let mut values = vec![0.0; shape.len()];
    for t in 0..shape.frames {
        let mut g = frame_stream(rng, t).rng();
        let mut rows = Vec::with_capacity(shape.channels * shape.width);
        for _ in 0..shape.channels {
            let a = sigma_p1 * g.sample::<f64, _>(StandardNormal);
            let b = sigma_p2 * g.sample::<f64, _>(StandardNormal);
            let d = sigma_p3 * g.sample::<f64, _>(StandardNormal);
            rows.extend(periodic_row(shape.width, a, b, d, &mut planner)?);
        }
        broadcast_rows(shape, &mut values, t, &rows);
    }
    NoiseMap::new(shape, values, kind)
}

/// Switches that alter the simulator away from its default behaviour.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseOptions {
    /// Use `U(-lambda_q/2, lambda_q/2)` instead of `U(0, lambda_q)`.
    #[serde(default)]
    pub quantization_centered: bool,
}

/// The five component maps of one simulator call.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentMaps {
    pub heteroscedastic: NoiseMap,
    pub quantization: NoiseMap,
    pub banding: NoiseMap,
    pub temporal_banding: NoiseMap,
    pub periodic: NoiseMap,
}

impl ComponentMaps {
    pub fn iter(&self) -> impl Iterator<Item = &NoiseMap> {
        [
            &self.heteroscedastic,
            &self.quantization,
            &self.banding,
            &self.temporal_banding,
            &self.periodic,
        ]
        .into_iter()
    }

    /// Elementwise `h + q + b + bt + p`, summed left to right.
    pub fn composite(&self) -> NoiseMap {
        let shape = self.heteroscedastic.shape();
        let values = (0..shape.len())
            .map(|i| {
                self.heteroscedastic.values[i]
                    + self.quantization.values[i]
                    + self.banding.values[i]
                    + self.temporal_banding.values[i]
                    + self.periodic.values[i]
            })
            .collect();
        NoiseMap {
            shape,
            values,
            component: NoiseComponent::Composite,
        }
    }
}

/// Generates every component of the simulator for `v` on `signal`.
pub fn simulate_components(
    v: &NoiseVector,
    signal: &VideoClip,
    rng: &RandomSource,
    opts: &NoiseOptions,
) -> Result<ComponentMaps> {
    v.validate()?;
    let shape = signal.shape();
    Ok(ComponentMaps {
        heteroscedastic: heteroscedastic_noise(
            signal,
            v.sigma_s,
            v.sigma_r,
            &rng.substream(NoiseComponent::Heteroscedastic.name()),
        )?,
        quantization: quantization_noise(
            shape,
            v.lambda_q,
            opts.quantization_centered,
            &rng.substream(NoiseComponent::Quantization.name()),
        )?,
        banding: banding_noise(shape, v.sigma_b, &rng.substream(NoiseComponent::Banding.name()))?,
        temporal_banding: temporal_banding_noise(
            shape,
            v.sigma_bt,
            &rng.substream(NoiseComponent::TemporalBanding.name()),
        )?,
        periodic: periodic_noise(
            shape,
            v.sigma_p1,
            v.sigma_p2,
            v.sigma_p3,
            &rng.substream(NoiseComponent::Periodic.name()),
        )?,
    })
}

/// The composite noise map `f(v)` for `signal`.
pub fn simulate_noise(v: &NoiseVector, signal: &VideoClip, rng: &RandomSource) -> Result<NoiseMap> {
    simulate_noise_with(v, signal, rng, &NoiseOptions::default())
}

pub fn simulate_noise_with(
    v: &NoiseVector,
    signal: &VideoClip,
    rng: &RandomSource,
    opts: &NoiseOptions,
) -> Result<NoiseMap> {
    Ok(simulate_components(v, signal, rng, opts)?.composite())
}

/// `x_d + f(v)`, optionally clamped to `[0, 1]`.
pub fn apply_noise(x_d: &VideoClip, v: &NoiseVector, rng: &RandomSource, clamp: bool) -> Result<VideoClip> {
    apply_noise_with(x_d, v, rng, clamp, &NoiseOptions::default())
}

pub fn apply_noise_with(
    x_d: &VideoClip,
    v: &NoiseVector,
    rng: &RandomSource,
    clamp: bool,
    opts: &NoiseOptions,
) -> Result<VideoClip> {
    let noise = simulate_noise_with(v, x_d, rng, opts)?;
    let noisy = x_d.add_map(noise.values())?;
    Ok(if clamp { noisy.clamp_unit() } else { noisy })
}

/// Draws every noise-vector entry independently and uniformly over its bound.
pub fn sample_noise_vector(ranges: &ParamRanges, rng: &RandomSource) -> Result<NoiseVector> {
    ranges.validate()?;
    let mut g = rng.rng();
    let bounds = ranges.noise_bounds();
    let mut out = [0.0; NOISE_VECTOR_LEN];
    for (o, b) in out.iter_mut().zip(bounds) {
        let u: f64 = g.gen();
        *o = b.denormalize(u);
    }
    Ok(NoiseVector::from_array(out))
}
