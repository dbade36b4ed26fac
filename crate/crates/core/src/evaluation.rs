//! Fidelity metrics between real and synthetic noise maps.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::clip::VideoClip;
use crate::error::{Error, Result};
use crate::noise::{NoiseComponent, NoiseMap};
use crate::params::FORMAT_VERSION;
use crate::stats::Moments;

/// Elementwise `noisy - clean`.
pub fn extract_noise_map(noisy: &VideoClip, clean: &VideoClip) -> Result<NoiseMap> {
    if noisy.shape() != clean.shape() {
        return Err(Error::shape(format!(
            "noisy clip {} and clean clip {} differ",
            noisy.shape(),
            clean.shape()
        )));
    }
    let values = noisy.data().iter().zip(clean.data()).map(|(n, c)| n - c).collect();
    NoiseMap::new(noisy.shape(), values, NoiseComponent::Composite)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HistogramSpec {
    pub bins: usize,
    pub low: f64,
    pub high: f64,
    /// Added to every bin mass before renormalising.
    pub epsilon: f64,
    /// Average per-channel divergences instead of pooling all channels.
    #[serde(default)]
    pub per_channel: bool,
}

impl Default for HistogramSpec {
    fn default() -> Self {
        Self {
            bins: 201,
            low: -0.5,
            high: 0.5,
            epsilon: 1e-8,
            per_channel: false,
        }
    }
}

impl HistogramSpec {
    pub fn validate(&self) -> Result<()> {
        if self.bins < 2 {
            return Err(Error::invalid(format!("histogram needs at least 2 bins, got {}", self.bins)));
        }
        if !(self.low.is_finite() && self.high.is_finite() && self.low < self.high) {
            return Err(Error::invalid(format!(
                "histogram range must satisfy low < high, got [{}, {}]",
                self.low, self.high
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::invalid("histogram epsilon must be positive"));
        }
        Ok(())
    }

    pub fn bin_width(&self) -> f64 {
        (self.high - self.low) / self.bins as f64
    }

    pub fn bin_center(&self, i: usize) -> f64 {
        self.low + (i as f64 + 0.5) * self.bin_width()
    }

    /// Bin of `v`; out-of-range values land in the edge bins.
    pub fn bin_of(&self, v: f64) -> usize {
        let pos = ((v - self.low) / self.bin_width()).floor();
        if pos.is_nan() || pos < 0.0 {
            0
        } else {
            (pos as usize).min(self.bins - 1)
        }
    }

    /// Smoothed probability mass per bin.
    pub fn histogram<'a>(&self, values: impl IntoIterator<Item = &'a f64>) -> Vec<f64> {
        let mut counts = vec![0.0; self.bins];
        let mut n = 0usize;
        for &v in values {
            counts[self.bin_of(v)] += 1.0;
            n += 1;
        }
        let n = n.max(1) as f64;
        for c in &mut counts {
            *c = *c / n + self.epsilon;
        }
        let total: f64 = counts.iter().sum();
        counts.iter().map(|c| c / total).collect()
    }
}

/// `sum p·ln(p/q)` over two probability vectors of equal length.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(p, _)| **p > 0.0)
        .map(|(p, q)| p * (p / q).ln())
        .sum::<f64>()
        .max(0.0)
}

fn channel_values(map: &NoiseMap, c: usize) -> impl Iterator<Item = &f64> + Clone {
    let s = map.shape();
    (0..s.frames).flat_map(move |t| map.plane(t, c).iter())
}

/// `D_KL(P_real || Q_synth)` over the histograms described by `spec`.
pub fn histogram_kld(real: &NoiseMap, synth: &NoiseMap, spec: &HistogramSpec) -> Result<f64> {
    spec.validate()?;
    if real.values().is_empty() || synth.values().is_empty() {
        return Err(Error::invalid("noise maps must be non-empty"));
    }
    if !spec.per_channel {
        let p = spec.histogram(real.values());
        let q = spec.histogram(synth.values());
        return Ok(kl_divergence(&p, &q));
    }
    let channels = real.shape().channels;
    if synth.shape().channels != channels {
        return Err(Error::shape("per-channel divergence needs equal channel counts"));
    }
    let total: f64 = (0..channels)
        .map(|c| {
            let p = spec.histogram(channel_values(real, c));
            let q = spec.histogram(channel_values(synth, c));
            kl_divergence(&p, &q)
        })
        .sum();
    Ok(total / channels as f64)
}

/// Two-column histogram table for external plotting.
pub fn histogram_csv(real: &NoiseMap, synth: &NoiseMap, spec: &HistogramSpec) -> Result<String> {
    spec.validate()?;
    let p = spec.histogram(real.values());
    let q = spec.histogram(synth.values());
    let mut out = String::from("bin_center,real,synth\n");
    for i in 0..spec.bins {
        out.push_str(&format!("{},{},{}\n", spec.bin_center(i), p[i], q[i]));
    }
    Ok(out)
}

/// Fraction of width-axis spectral energy in bins `0`, `W/4`, `3W/4`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SpectralRatios {
    pub dc: f64,
    pub quarter: f64,
    pub three_quarter: f64,
    /// Sum of the three.
    pub peak: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseReport {
    pub shape: [usize; 4],
    pub pooled: Moments,
    pub channels: Vec<Moments>,
    pub spectral: SpectralRatios,
    /// Mean variance along time, height and width.
    pub time_axis_variance: f64,
    pub height_axis_variance: f64,
    pub width_axis_variance: f64,
    /// Per-column variance along the height axis, averaged over frames and channels.
    pub column_variance: Vec<f64>,
    /// Per-row variance along the width axis, averaged over frames and channels.
    pub row_variance: Vec<f64>,
}

/// Width-axis power spectrum summed over every row of the map.
pub fn row_power_spectrum(map: &NoiseMap) -> Vec<f64> {
    let s = map.shape();
    let fft = FftPlanner::new().plan_fft_forward(s.width);
    let mut power = vec![0.0; s.width];
    let mut buf = vec![Complex::new(0.0, 0.0); s.width];
    for row in map.values().chunks_exact(s.width) {
        for (b, &v) in buf.iter_mut().zip(row) {
            *b = Complex::new(v, 0.0);
        }
        fft.process(&mut buf);
        for (p, z) in power.iter_mut().zip(&buf) {
            *p += z.norm_sqr();
        }
    }
    power
}

pub fn spectral_ratios(map: &NoiseMap) -> SpectralRatios {
    let w = map.shape().width;
    let power = row_power_spectrum(map);
    let total: f64 = power.iter().sum();
    if total <= 0.0 || w % 4 != 0 {
        let dc = if total > 0.0 { power[0] / total } else { 0.0 };
        return SpectralRatios {
            dc,
            peak: dc,
            ..Default::default()
        };
    }
    let dc = power[0] / total;
    let quarter = power[w / 4] / total;
    let three_quarter = power[3 * w / 4] / total;
    SpectralRatios {
        dc,
        quarter,
        three_quarter,
        peak: dc + quarter + three_quarter,
    }
}

fn var_of(iter: impl Iterator<Item = f64> + Clone) -> f64 {
    let (n, sum) = iter.clone().fold((0usize, 0.0), |(n, s), v| (n + 1, s + v));
    let mut rest = iter.clone();
    let first = rest.next();
    if n == 0 || rest.all(|v| Some(v) == first) {
        return 0.0;
    }
    let m = sum / n as f64;
    iter.map(|v| (v - m).powi(2)).sum::<f64>() / n as f64
}

pub fn noise_report(map: &NoiseMap) -> Result<NoiseReport> {
    let s = map.shape();
    if map.values().is_empty() {
        return Err(Error::invalid("noise map is empty"));
    }
    let vals = map.values();
    let planes = (s.frames * s.channels) as f64;

    let mut column_variance = vec![0.0; s.width];
    let mut row_variance = vec![0.0; s.height];
    for t in 0..s.frames {
        for c in 0..s.channels {
            let p = map.plane(t, c);
            for (x, cv) in column_variance.iter_mut().enumerate() {
                *cv += var_of((0..s.height).map(|y| p[y * s.width + x]));
            }
            for (y, rv) in row_variance.iter_mut().enumerate() {
                *rv += var_of(p[y * s.width..(y + 1) * s.width].iter().copied());
            }
        }
    }
    column_variance.iter_mut().for_each(|v| *v /= planes);
    row_variance.iter_mut().for_each(|v| *v /= planes);

    let mut time_var = 0.0;
    for i in 0..s.frame_len() {
        time_var += var_of((0..s.frames).map(|t| vals[t * s.frame_len() + i]));
    }
    time_var /= s.frame_len() as f64;

    Ok(NoiseReport {
        shape: [s.frames, s.channels, s.height, s.width],
        pooled: Moments::of(vals),
        channels: (0..s.channels).map(|c| Moments::of(channel_values(map, c))).collect(),
        spectral: spectral_ratios(map),
        time_axis_variance: time_var,
        height_axis_variance: column_variance.iter().sum::<f64>() / s.width as f64,
        width_axis_variance: row_variance.iter().sum::<f64>() / s.height as f64,
        column_variance,
        row_variance,
    })
}

/// Output of comparing one real and one synthetic noise map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub format_version: u32,
    pub kld: f64,
    pub histogram: HistogramSpec,
    pub real: NoiseReport,
    pub synthetic: NoiseReport,
}

pub fn evaluate_maps(real: &NoiseMap, synth: &NoiseMap, spec: &HistogramSpec) -> Result<EvaluationReport> {
    Ok(EvaluationReport {
        format_version: FORMAT_VERSION,
        kld: histogram_kld(real, synth, spec)?,
        histogram: *spec,
        real: noise_report(real)?,
        synthetic: noise_report(synth)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clip::Shape;
    use crate::noise::{apply_noise, periodic_noise, simulate_noise, temporal_banding_noise};
    use crate::params::NoiseVector;
    use crate::rng::RandomSource;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn gaussian_map(n_side: usize, sigma: f64, seed: u64) -> NoiseMap {
        let mut g = RandomSource::new(seed, "gauss").rng();
        let s = Shape::new(1, 1, n_side, n_side);
        let v = (0..s.len()).map(|_| sigma * g.sample::<f64, _>(StandardNormal)).collect();
        NoiseMap::new(s, v, NoiseComponent::Composite).unwrap()
    }

    #[test]
    fn extraction() {
        let s = Shape::new(2, 3, 8, 8);
        let clean = VideoClip::filled(s, 0.3).unwrap();
        assert!(extract_noise_map(&clean, &clean).unwrap().values().iter().all(|&v| v == 0.0));
        let other = VideoClip::filled(Shape::new(1, 3, 8, 8), 0.3).unwrap();
        assert!(extract_noise_map(&clean, &other).is_err());

        let v = NoiseVector::from_array([0.1, 0.05, 0.02, 0.01, 0.01, 0.2, 0.2, 0.2]);
        let rng = RandomSource::new(3, "x");
        let noisy = apply_noise(&clean, &v, &rng, false).unwrap();
        let map = extract_noise_map(&noisy, &clean).unwrap();
        let direct = simulate_noise(&v, &clean, &rng).unwrap();
        for (a, b) in map.values().iter().zip(direct.values()) {
            // (x + n) - x reproduces n up to one rounding of the sum
            assert!((a - b).abs() <= 1e-16);
        }
    }

    #[test]
    fn clamping_truncates_negative_tail() {
        let clean = VideoClip::filled(Shape::new(1, 1, 256, 256), 0.01).unwrap();
        let v = NoiseVector {
            sigma_r: 0.1,
            ..NoiseVector::zero()
        };
        let noisy = apply_noise(&clean, &v, &RandomSource::new(1, "c"), true).unwrap();
        let map = extract_noise_map(&noisy, &clean).unwrap();
        assert!(crate::stats::mean(map.values()) > 0.0);
        assert!(map.values().iter().all(|&v| v >= -0.01 - 1e-15));
    }

    #[test]
    fn kld_identity_and_asymmetry() {
        let spec = HistogramSpec::default();
        let a = gaussian_map(256, 0.05, 1);
        let b = gaussian_map(256, 0.1, 2);
        assert_eq!(histogram_kld(&a, &a, &spec).unwrap(), 0.0);
        let ab = histogram_kld(&a, &b, &spec).unwrap();
        let ba = histogram_kld(&b, &a, &spec).unwrap();
        assert!(ab > 0.0 && ba > 0.0);
        assert!((ab - ba).abs() > 0.01);
    }

    #[test]
    fn kld_matches_gaussian_closed_form() {
        // ln(s2/s1) + s1²/(2 s2²) - 1/2
        let (s1, s2) = (0.05f64, 0.1f64);
        let exact = (s2 / s1).ln() + s1 * s1 / (2.0 * s2 * s2) - 0.5;
        assert!((exact - 0.3181).abs() < 1e-4);
        let a = gaussian_map(1000, s1, 11);
        let b = gaussian_map(1000, s2, 12);
        let spec = HistogramSpec::default();
        let kld = histogram_kld(&a, &b, &spec).unwrap();
        assert!((kld / exact - 1.0).abs() < 0.05, "{kld} vs {exact}");
        let doubled = HistogramSpec { bins: 402, ..spec };
        let kld2 = histogram_kld(&a, &b, &doubled).unwrap();
        assert!((kld2 / kld - 1.0).abs() < 0.10, "{kld2} vs {kld}");
    }

    #[test]
    fn kld_shrinks_with_sample_size() {
        let spec = HistogramSpec::default();
        let sizes = [32usize, 316, 1000];
        let k: Vec<f64> = sizes
            .iter()
            .map(|&n| histogram_kld(&gaussian_map(n, 0.08, 100 + n as u64), &gaussian_map(n, 0.08, 200 + n as u64), &spec).unwrap())
            .collect();
        assert!(k[0] > k[1] && k[1] > k[2], "{k:?}");
    }

    #[test]
    fn out_of_range_values_use_edge_bins() {
        let spec = HistogramSpec {
            bins: 4,
            low: -1.0,
            high: 1.0,
            epsilon: 1e-12,
            per_channel: false,
        };
        assert_eq!(spec.bin_of(-5.0), 0);
        assert_eq!(spec.bin_of(5.0), 3);
        assert_eq!(spec.bin_of(1.0), 3);
        let h = spec.histogram(&[-5.0, 5.0]);
        assert!((h[0] - 0.5).abs() < 1e-9 && (h[3] - 0.5).abs() < 1e-9);
        assert!(HistogramSpec { bins: 1, ..spec }.validate().is_err());
        assert!(HistogramSpec { epsilon: 0.0, ..spec }.validate().is_err());
    }

    #[test]
    fn report_on_zero_map() {
        let m = NoiseMap::zeros(Shape::new(2, 3, 8, 8), NoiseComponent::Composite);
        let r = noise_report(&m).unwrap();
        assert_eq!(r.pooled, Moments::default());
        assert_eq!(r.spectral, SpectralRatios::default());
        assert_eq!(r.channels.len(), 3);
    }

    #[test]
    fn report_on_periodic_and_temporal_banding() {
        let s = Shape::new(4, 3, 16, 64);
        let p = periodic_noise(s, 0.7, 0.5, 0.3, &RandomSource::new(5, "p")).unwrap();
        assert!(noise_report(&p).unwrap().spectral.peak >= 0.999);

        let bt = temporal_banding_noise(s, 0.02, &RandomSource::new(5, "bt")).unwrap();
        let r = noise_report(&bt).unwrap();
        assert_eq!(r.time_axis_variance, 0.0);
        assert_eq!(r.height_axis_variance, 0.0);
        assert!(r.width_axis_variance > 0.0);
    }

    #[test]
    fn per_channel_mode() {
        let spec = HistogramSpec {
            per_channel: true,
            ..Default::default()
        };
        let a = gaussian_map(64, 0.05, 1);
        assert_eq!(histogram_kld(&a, &a, &spec).unwrap(), 0.0);
    }
}
