//! Noise-vector estimation from a reference clip.

pub mod config;
pub(crate) mod layers;
pub mod loss;
pub mod network;
pub mod oracle;
pub mod train;

use serde::{Deserialize, Serialize};
use std::path::Path;

pub use config::{DenConfig, TemporalPooling, Variant};
pub use loss::{loss_mlp, loss_rec, loss_total};
pub use network::{Den, Prediction};
pub use oracle::moment_oracle_heteroscedastic;
pub use train::{make_training_sample, train_den, Adam, TrainingConfig, TrainingFingerprint, TrainingSample};

use crate::clip::VideoClip;
use crate::error::{Error, Result};
use crate::params::{NoiseVector, ParamRanges, FORMAT_VERSION, NOISE_VECTOR_LEN};

/// Frames of a reference clip that take part in an estimate.
pub const MAX_REFERENCE_FRAMES: usize = 16;

/// A trained network together with the ranges its outputs are expressed in.
#[derive(Debug, Clone, PartialEq)]
pub struct DenModel {
    net: Den,
    ranges: ParamRanges,
    fingerprint: TrainingFingerprint,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Checkpoint {
    format_version: u32,
    kind: String,
    config: DenConfig,
    param_ranges: ParamRanges,
    fingerprint: TrainingFingerprint,
    feature_shift: Vec<f64>,
    feature_scale: Vec<f64>,
    weights: Vec<f64>,
}

const CHECKPOINT_KIND: &str = "den_checkpoint";

impl DenModel {
    pub fn new(net: Den, ranges: ParamRanges, fingerprint: TrainingFingerprint) -> Self {
        Self {
            net,
            ranges,
            fingerprint,
        }
    }

    pub fn network(&self) -> &Den {
        &self.net
    }

    pub fn config(&self) -> &DenConfig {
        self.net.config()
    }

    pub fn ranges(&self) -> &ParamRanges {
        &self.ranges
    }

    pub fn fingerprint(&self) -> &TrainingFingerprint {
        &self.fingerprint
    }

    pub fn to_json(&self) -> Result<String> {
        let c = Checkpoint {
            format_version: FORMAT_VERSION,
            kind: CHECKPOINT_KIND.into(),
            config: self.net.config().clone(),
            param_ranges: self.ranges,
            fingerprint: self.fingerprint.clone(),
            feature_shift: self.net.feature_shift().to_vec(),
            feature_scale: self.net.feature_scale().to_vec(),
            weights: self.net.params().to_vec(),
        };
        Ok(serde_json::to_string(&c)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::Checkpoint(format!("not valid JSON: {e}")))?;
        match value.get("format_version").and_then(|v| v.as_u64()) {
            Some(v) if v == FORMAT_VERSION as u64 => {}
            Some(v) => {
                return Err(Error::Checkpoint(format!(
                    "unsupported checkpoint format_version {v}, expected {FORMAT_VERSION}"
                )))
            }
            None => return Err(Error::Checkpoint("missing format_version".into())),
        }
        let c: Checkpoint =
            serde_json::from_value(value).map_err(|e| Error::Checkpoint(format!("malformed checkpoint: {e}")))?;
        if c.kind != CHECKPOINT_KIND {
            return Err(Error::Checkpoint(format!("unexpected kind {:?}", c.kind)));
        }
        c.param_ranges
            .validate()
            .map_err(|e| Error::Checkpoint(format!("invalid param_ranges: {e}")))?;
        let net = Den::from_parts(c.config, c.weights, c.feature_shift, c.feature_scale)?;
        Ok(Self::new(net, c.param_ranges, c.fingerprint))
    }

    /// Writes the checkpoint through a temporary file and a rename.
    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// What the network says about one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorOutput {
    /// Absent for the decoder-only variant.
    pub v_hat: Option<NoiseVector>,
    /// Absent for the head-only variant.
    pub reconstruction: Option<VideoClip>,
    pub per_frame: Vec<NoiseVector>,
}

fn center_crop(clip: &VideoClip, cfg: &DenConfig) -> Result<VideoClip> {
    let s = clip.shape();
    let (h, w) = (cfg.patch_height, cfg.patch_width);
    if s.height < h || s.width < w {
        return Err(Error::shape(format!(
            "reference {}x{} is smaller than the {h}x{w} model patch",
            s.height, s.width
        )));
    }
    clip.crop(0, s.frames, (s.height - h) / 2, (s.width - w) / 2, h, w)?
        .with_channels(cfg.channels)
}

/// Runs the network on the centre patch of `clip`.
pub fn den_forward(model: &DenModel, clip: &VideoClip) -> Result<EstimatorOutput> {
    let input = center_crop(clip, model.config())?;
    let p = model.net.predict(&input)?;
    Ok(EstimatorOutput {
        v_hat: p.normalized.map(|u| model.ranges.denormalize(&u)),
        reconstruction: p.reconstruction,
        per_frame: p.per_frame.iter().map(|u| model.ranges.denormalize(u)).collect(),
    })
}

/// Estimate with the per-patch predictions it was averaged from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateDetail {
    pub v_hat: NoiseVector,
    /// One vector per (tile, frame chunk).
    pub patches: Vec<NoiseVector>,
    /// Standard deviation of `patches`, entry by entry.
    pub spread: NoiseVector,
}

/// Averages head outputs over a grid of non-overlapping, centred patches and
/// over chunks of up to `frames_per_sample` frames taken from the first
/// [`MAX_REFERENCE_FRAMES`] frames.
pub fn estimate_detailed(model: &DenModel, reference: &VideoClip) -> Result<EstimateDetail> {
    let cfg = model.config();
    if !cfg.variant.has_head() {
        return Err(Error::Unsupported(format!(
            "variant {:?} has no regression head",
            cfg.variant
        )));
    }
    let s = reference.shape();
    let (ph, pw) = (cfg.patch_height, cfg.patch_width);
    if s.height < ph || s.width < pw {
        return Err(Error::shape(format!(
            "reference {}x{} is smaller than the {ph}x{pw} model patch",
            s.height, s.width
        )));
    }
    let frames = s.frames.min(MAX_REFERENCE_FRAMES);
    let reference = reference
        .crop(0, frames, 0, 0, s.height, s.width)?
        .with_channels(cfg.channels)?;
    let (ny, nx) = (s.height / ph, s.width / pw);
    let (oy, ox) = ((s.height - ny * ph) / 2, (s.width - nx * pw) / 2);
    let mut normalized = Vec::new();
    for t0 in (0..frames).step_by(cfg.frames_per_sample) {
        let len = cfg.frames_per_sample.min(frames - t0);
        for ty in 0..ny {
            for tx in 0..nx {
                let patch = reference.crop(t0, len, oy + ty * ph, ox + tx * pw, ph, pw)?;
                let u = model.net.predict(&patch)?.normalized.expect("variant has a head");
                normalized.push(u);
            }
        }
    }
    let n = normalized.len() as f64;
    let mean: [f64; NOISE_VECTOR_LEN] =
        std::array::from_fn(|i| normalized.iter().map(|u| u[i]).sum::<f64>() / n);
    let patches: Vec<NoiseVector> = normalized.iter().map(|u| model.ranges.denormalize(u)).collect();
    let arrays: Vec<[f64; NOISE_VECTOR_LEN]> = patches.iter().map(NoiseVector::to_array).collect();
    let spread = NoiseVector::from_array(std::array::from_fn(|i| {
        let m = arrays.iter().map(|a| a[i]).sum::<f64>() / n;
        (arrays.iter().map(|a| (a[i] - m).powi(2)).sum::<f64>() / n).sqrt()
    }));
    Ok(EstimateDetail {
        v_hat: model.ranges.denormalize(&mean),
        patches,
        spread,
    })
}

pub fn estimate(model: &DenModel, reference: &VideoClip) -> Result<NoiseVector> {
    Ok(estimate_detailed(model, reference)?.v_hat)
}
