//! Self-supervised training on clean clips degraded on the fly.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

use super::config::{DenConfig, Variant};
use super::network::{Den, Normalized, Targets};
use super::DenModel;
use crate::clip::VideoClip;
use crate::error::{Error, Result};
use crate::illumination::{darken, sample_illumination, IlluminationParams};
use crate::noise::apply_noise;
use crate::params::{NoiseVector, ParamRanges};
use crate::rng::RandomSource;

const CALIBRATION_SAMPLES: usize = 32;
const MIN_FEATURE_SCALE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Consecutive frames drawn from each clip per sample.
    pub frames: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub lambda_mlp: f64,
    pub lambda_rec: f64,
    pub data_root: Option<PathBuf>,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 2,
            frames: 16,
            learning_rate: 0.0002,
            beta1: 0.5,
            beta2: 0.999,
            lambda_mlp: 1.0,
            lambda_rec: 1.0,
            data_root: None,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("epochs", self.epochs), ("batch_size", self.batch_size), ("frames", self.frames)] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1), got {b}")));
            }
        }
        for (name, l) in [("lambda_mlp", self.lambda_mlp), ("lambda_rec", self.lambda_rec)] {
            if !(l.is_finite() && l >= 0.0) {
                return Err(Error::Config(format!("{name} must be non-negative, got {l}")));
            }
        }
        Ok(())
    }

    /// Loss weights actually used for a variant: v1 has no head and v2 no decoder.
    pub fn lambdas(&self, variant: Variant) -> (f64, f64) {
        match variant {
            Variant::V1 => (0.0, self.lambda_rec),
            Variant::V2 => (self.lambda_mlp, 0.0),
            Variant::V3 => (self.lambda_mlp, self.lambda_rec),
        }
    }
}

/// Record of how a model was produced.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingFingerprint {
    pub seed: u64,
    pub epochs: usize,
    /// Total loss of every optimisation step.
    pub loss_trace: Vec<f64>,
    pub epoch_means: Vec<f64>,
}

/// One degraded training example.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub input: VideoClip,
    pub target_v: NoiseVector,
    pub target_x_d: VideoClip,
    pub illumination: IlluminationParams,
}

/// Darkens `clean`, draws a noise vector and adds unclamped noise.
///
/// Streams used under `rng`: `illumination`, `noise_vector` and `noise`.
pub fn make_training_sample(clean: &VideoClip, ranges: &ParamRanges, rng: &RandomSource) -> Result<TrainingSample> {
    let illumination = sample_illumination(ranges, &rng.substream("illumination"))?;
    let x_d = darken(clean, illumination)?;
    let v = crate::noise::sample_noise_vector(ranges, &rng.substream("noise_vector"))?;
    let input = apply_noise(&x_d, &v, &rng.substream("noise"), false)?;
    Ok(TrainingSample {
        input,
        target_v: v,
        target_x_d: x_d,
        illumination,
    })
}

/// Adam over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64, beta1: f64, beta2: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

/// Random patch of `frames` consecutive frames converted to the model's channel count.
pub(crate) fn random_crop(clip: &VideoClip, dcfg: &DenConfig, frames: usize, rng: &RandomSource) -> Result<VideoClip> {
    let s = clip.shape();
    if s.height < dcfg.patch_height || s.width < dcfg.patch_width {
        return Err(Error::invalid(format!(
            "clip {s} is smaller than the {}x{} training patch",
            dcfg.patch_height, dcfg.patch_width
        )));
    }
    let mut g = rng.rng();
    let frames = frames.min(s.frames);
    let t0 = g.gen_range(0..=s.frames - frames);
    let y0 = g.gen_range(0..=s.height - dcfg.patch_height);
    let x0 = g.gen_range(0..=s.width - dcfg.patch_width);
    clip.crop(t0, frames, y0, x0, dcfg.patch_height, dcfg.patch_width)?
        .with_channels(dcfg.channels)
}

struct Prepared {
    input: VideoClip,
    image: VideoClip,
    target: Normalized,
}

fn prepare(clip: &VideoClip, tcfg: &TrainingConfig, dcfg: &DenConfig, ranges: &ParamRanges, rng: &RandomSource) -> Result<Prepared> {
    let crop = random_crop(clip, dcfg, tcfg.frames, &rng.substream("crop"))?;
    let sample = make_training_sample(&crop, ranges, &rng.substream("sample"))?;
    let target = ranges.normalize(&sample.target_v);
    // v1 maps the darkened clip straight to its noisy version
    Ok(if dcfg.variant == Variant::V1 {
        Prepared {
            input: sample.target_x_d,
            image: sample.input,
            target,
        }
    } else {
        Prepared {
            input: sample.input,
            image: sample.target_x_d,
            target,
        }
    })
}

/// Fixes the per-feature shift and scale applied before the regression head
/// from descriptors of freshly drawn samples under the initial weights.
fn calibrate(net: &mut Den, corpus: &[VideoClip], tcfg: &TrainingConfig, ranges: &ParamRanges, rng: &RandomSource) -> Result<()> {
    let dcfg = net.config().clone();
    let mut rows = Vec::with_capacity(CALIBRATION_SAMPLES);
    for i in 0..CALIBRATION_SAMPLES {
        let r = rng.substream(format!("sample{i}"));
        let p = prepare(&corpus[i % corpus.len()], tcfg, &dcfg, ranges, &r)?;
        rows.push(net.describe(&p.input)?);
    }
    let d = rows[0].len();
    let nf = rows.len() as f64;
    let shift: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / nf).collect();
    let scale: Vec<f64> = (0..d)
        .map(|j| {
            let var = rows.iter().map(|r| (r[j] - shift[j]).powi(2)).sum::<f64>() / nf;
            var.sqrt().max(MIN_FEATURE_SCALE)
        })
        .collect();
    net.set_standardization(shift, scale)
}

/// Trains a fresh network on `corpus`. `on_epoch` sees the model after every
/// epoch (for checkpointing) and may abort training by returning an error.
pub fn train_den(
    corpus: &[VideoClip],
    tcfg: &TrainingConfig,
    dcfg: &DenConfig,
    ranges: &ParamRanges,
    mut on_epoch: impl FnMut(&DenModel) -> Result<()>,
) -> Result<DenModel> {
    tcfg.validate()?;
    dcfg.validate()?;
    ranges.validate().map_err(|e| Error::Config(e.to_string()))?;
    if corpus.is_empty() {
        return Err(Error::invalid("training corpus is empty"));
    }
    let root = RandomSource::new(tcfg.seed, "train");
    let mut net = Den::new(dcfg.clone(), &root.substream("init"))?;
    if dcfg.variant.has_head() {
        calibrate(&mut net, corpus, tcfg, ranges, &root.substream("calibration"))?;
    }
    let (lambda_head, lambda_rec) = tcfg.lambdas(dcfg.variant);
    let mut adam = Adam::new(net.n_params(), tcfg.learning_rate, tcfg.beta1, tcfg.beta2);
    let mut grad = vec![0.0; net.n_params()];
    let mut model = DenModel::new(net, *ranges, TrainingFingerprint {
        seed: tcfg.seed,
        ..Default::default()
    });

    for epoch in 0..tcfg.epochs {
        let epoch_rng = root.substream(format!("epoch{epoch}"));
        let mut order: Vec<usize> = (0..corpus.len()).collect();
        order.shuffle(&mut epoch_rng.substream("order").rng());
        let mut sum = 0.0;
        let mut steps = 0usize;
        for (step, batch) in order.chunks(tcfg.batch_size).enumerate() {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / batch.len() as f64;
            let mut loss = 0.0;
            for &i in batch {
                let p = prepare(&corpus[i], tcfg, dcfg, ranges, &epoch_rng.substream(format!("clip{i}")))?;
                let parts = model.net.loss_and_grad(
                    &p.input,
                    Targets {
                        vector: Some(&p.target),
                        image: &p.image,
                        lambda_head,
                        lambda_rec,
                        scale,
                    },
                    &mut grad,
                )?;
                loss += parts.total * scale;
            }
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    step,
                    detail: format!("loss {loss}, clips {batch:?}"),
                });
            }
            adam.step(model.net.params_mut(), &grad);
            model.fingerprint.loss_trace.push(loss);
            sum += loss;
            steps += 1;
        }
        model.fingerprint.epochs = epoch + 1;
        model.fingerprint.epoch_means.push(sum / steps as f64);
        on_epoch(&model)?;
    }
    Ok(model)
}
