//! The workflows behind each CLI subcommand.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::config::PipelineConfig;
use super::manifest::{timestamp, SynthesisManifest, MANUAL_REFERENCE, TOOL_VERSION};
use crate::clip::{Shape, VideoClip};
use crate::error::{Error, Result};
use crate::estimator::{estimate_detailed, train_den, DenModel, EstimateDetail};
use crate::evaluation::{evaluate_maps, extract_noise_map, histogram_csv, EvaluationReport, HistogramSpec};
use crate::illumination::{sample_illumination, IlluminationParams};
use crate::io::{clip_id, list_clip_dirs, read_clip, write_atomic, write_clip, write_offset_map};
use crate::noise::{sample_noise_vector, simulate_components, NoiseComponent, NoiseOptions};
use crate::params::{NoiseVector, ParamRanges, FORMAT_VERSION};
use crate::rng::RandomSource;

pub const MANIFEST_FILE: &str = "manifest.json";

fn to_json_pretty<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

/// Clips under `dir`: the directory itself when it holds PNG frames, otherwise each sub-directory.
pub fn read_clip_set(dir: &Path) -> Result<Vec<(String, VideoClip)>> {
    if !dir.is_dir() {
        return Err(Error::data(dir, "directory does not exist"));
    }
    let has_frames = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .any(|e| e.path().extension().is_some_and(|x| x.eq_ignore_ascii_case("png")));
    if has_frames {
        return Ok(vec![(clip_id(dir), read_clip(dir)?)]);
    }
    list_clip_dirs(dir)?
        .into_iter()
        .map(|d| Ok((clip_id(&d), read_clip(&d)?)))
        .collect()
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: DenModel,
    pub checkpoint: PathBuf,
    pub loss_trace: PathBuf,
}

fn loss_trace_csv(model: &DenModel, steps_per_epoch: usize) -> String {
    let mut out = String::from("step,epoch,loss\n");
    for (i, l) in model.fingerprint().loss_trace.iter().enumerate() {
        let _ = writeln!(out, "{i},{},{l}", i / steps_per_epoch);
    }
    out
}

/// Trains on every clip under `training.data_root`, checkpointing after each epoch.
pub fn cmd_train(cfg: &PipelineConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let root = cfg
        .training
        .data_root
        .as_ref()
        .ok_or_else(|| Error::Config("training.data_root is not set".into()))?;
    let corpus: Vec<VideoClip> = list_clip_dirs(root)?
        .iter()
        .map(|d| read_clip(d))
        .collect::<Result<_>>()?;
    let steps_per_epoch = corpus.len().div_ceil(cfg.training.batch_size);
    let paths = &cfg.paths;
    for p in [&paths.checkpoint, &paths.loss_trace] {
        if let Some(parent) = p.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let model = train_den(&corpus, &cfg.training, &cfg.den, &cfg.ranges(), |m| {
        m.save(&paths.checkpoint)?;
        write_atomic(&paths.loss_trace, loss_trace_csv(m, steps_per_epoch).as_bytes())
    })?;
    Ok(TrainOutcome {
        model,
        checkpoint: paths.checkpoint.clone(),
        loss_trace: paths.loss_trace.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateDiagnostics {
    pub format_version: u32,
    pub reference: String,
    pub frames_used: usize,
    pub patches: usize,
    /// Per-entry standard deviation across patches.
    pub spread: NoiseVector,
    pub patch_estimates: Vec<NoiseVector>,
}

/// Path of the diagnostics file written next to an estimate.
pub fn diagnostics_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}.diagnostics.json"))
}

/// Estimates the noise vector of `reference` and writes it (plus diagnostics) as JSON.
pub fn cmd_estimate(model: &Path, reference: &Path, out: &Path) -> Result<EstimateDetail> {
    let model = DenModel::load(model)?;
    let clip = read_clip(reference)?;
    let detail = estimate_detailed(&model, &clip)?;
    write_atomic(out, (detail.v_hat.to_json()? + "\n").as_bytes())?;
    let diag = EstimateDiagnostics {
        format_version: FORMAT_VERSION,
        reference: clip_id(reference),
        frames_used: clip.shape().frames.min(crate::estimator::MAX_REFERENCE_FRAMES),
        patches: detail.patches.len(),
        spread: detail.spread,
        patch_estimates: detail.patches.clone(),
    };
    write_atomic(&diagnostics_path(out), to_json_pretty(&diag)?.as_bytes())?;
    Ok(detail)
}

/// Where the noise vector of each synthesized clip comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum ParamsSource {
    /// One fixed vector for every clip.
    Vector(NoiseVector),
    /// A vector estimated from a reference clip.
    Estimated { reference_id: String, v: NoiseVector },
    /// A fresh vector per clip drawn from these ranges.
    Ranges(ParamRanges),
}

impl ParamsSource {
    /// Runs the estimator on `reference` with the checkpoint at `model`.
    pub fn from_reference(model: &Path, reference: &Path) -> Result<Self> {
        let model = DenModel::load(model)?;
        let v = estimate_detailed(&model, &read_clip(reference)?)?.v_hat;
        Ok(Self::Estimated {
            reference_id: clip_id(reference),
            v,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Darkening {
    Off,
    Fixed(IlluminationParams),
    /// Draw `alpha` and `gamma` per clip from these ranges.
    Sample(ParamRanges),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesizeOptions {
    pub params: ParamsSource,
    pub darkening: Darkening,
    pub seed: u64,
    pub clamp: bool,
    pub noise: NoiseOptions,
}

/// Degrades one clean clip and describes how.
pub fn synthesize_clip(source_id: &str, clean: &VideoClip, opts: &SynthesizeOptions) -> Result<(VideoClip, SynthesisManifest)> {
    let stream = format!("synthesize/{source_id}");
    let rng = RandomSource::new(opts.seed, stream.clone());
    let illumination = match opts.darkening {
        Darkening::Off => None,
        Darkening::Fixed(p) => Some(p),
        Darkening::Sample(r) => Some(sample_illumination(&r, &rng.substream("illumination"))?),
    };
    let (noise_vector, reference_id) = match &opts.params {
        ParamsSource::Vector(v) => (*v, MANUAL_REFERENCE.to_string()),
        ParamsSource::Estimated { reference_id, v } => (*v, reference_id.clone()),
        ParamsSource::Ranges(r) => (sample_noise_vector(r, &rng.substream("noise_vector"))?, MANUAL_REFERENCE.to_string()),
    };
    let manifest = SynthesisManifest {
        format_version: FORMAT_VERSION,
        source_id: source_id.to_string(),
        reference_id,
        noise_vector,
        illumination,
        seed: opts.seed,
        stream,
        clamp: opts.clamp,
        noise_options: opts.noise,
        tool_version: TOOL_VERSION.to_string(),
        timestamp: timestamp(),
    };
    let clip = manifest.replay(clean)?;
    Ok((clip, manifest))
}

/// Synthesizes every clip under `clean` into `out/<clip id>/` with a manifest beside the frames.
pub fn cmd_synthesize(clean: &Path, out: &Path, opts: &SynthesizeOptions) -> Result<Vec<SynthesisManifest>> {
    let clips = read_clip_set(clean)?;
    let mut manifests = Vec::with_capacity(clips.len());
    for (id, clip) in &clips {
        let (noisy, manifest) = synthesize_clip(id, clip, opts).map_err(|e| match e {
            Error::InvalidParameter(m) | Error::Shape(m) => Error::data(clean.join(id), m),
            other => other,
        })?;
        let dir = out.join(id);
        write_clip(&noisy, &dir)?;
        manifest.save(&dir.join(MANIFEST_FILE))?;
        manifests.push(manifest);
    }
    Ok(manifests)
}

/// Regenerates one clip from its clean frames and manifest into `out`.
pub fn cmd_replay(manifest: &Path, clean: &Path, out: &Path) -> Result<SynthesisManifest> {
    let m = SynthesisManifest::load(manifest)?;
    let clip = read_clip(clean)?;
    write_clip(&m.replay(&clip)?, out)?;
    m.save(&out.join(MANIFEST_FILE))?;
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSampleManifest {
    pub format_version: u32,
    pub noise_vector: NoiseVector,
    pub seed: u64,
    pub shape: [usize; 4],
    /// Constant clean intensity the signal-dependent noise was drawn for.
    pub signal_level: f64,
    pub noise_options: NoiseOptions,
    /// Sum of squares of each map, keyed by component name.
    pub energy: BTreeMap<String, f64>,
}

/// Writes the five component maps and their sum as offset-encoded 16-bit frames.
pub fn cmd_sample_noise(
    v: &NoiseVector,
    shape: Shape,
    signal_level: f64,
    seed: u64,
    noise: NoiseOptions,
    out: &Path,
) -> Result<NoiseSampleManifest> {
    let signal = VideoClip::filled(shape, signal_level)?;
    let maps = simulate_components(v, &signal, &RandomSource::new(seed, "sample_noise"), &noise)?;
    let composite = maps.composite();
    let mut energy = BTreeMap::new();
    for map in maps.iter().chain(std::iter::once(&composite)) {
        let name = map.component().name();
        write_offset_map(shape, map.values(), &out.join(name))?;
        energy.insert(name.to_string(), map.energy());
    }
    let manifest = NoiseSampleManifest {
        format_version: FORMAT_VERSION,
        noise_vector: *v,
        seed,
        shape: [shape.frames, shape.channels, shape.height, shape.width],
        signal_level,
        noise_options: noise,
        energy,
    };
    write_atomic(&out.join(MANIFEST_FILE), to_json_pretty(&manifest)?.as_bytes())?;
    Ok(manifest)
}

/// Names of the six directories written by [`cmd_sample_noise`].
pub fn sample_noise_dirs() -> Vec<&'static str> {
    NoiseComponent::PARTS
        .iter()
        .map(|c| c.name())
        .chain(std::iter::once(NoiseComponent::Composite.name()))
        .collect()
}

pub struct EvaluateInputs<'a> {
    pub real_noisy: &'a Path,
    pub real_clean: &'a Path,
    pub synth_noisy: &'a Path,
    pub synth_clean: &'a Path,
}

/// Compares the real and synthetic noise maps and writes the report (and optionally histograms).
pub fn cmd_evaluate(inputs: &EvaluateInputs<'_>, spec: &HistogramSpec, out: &Path, csv: Option<&Path>) -> Result<EvaluationReport> {
    spec.validate()?;
    let pair = |noisy: &Path, clean: &Path| -> Result<_> {
        let (n, c) = (read_clip(noisy)?, read_clip(clean)?);
        extract_noise_map(&n, &c).map_err(|e| Error::data(noisy, e.to_string()))
    };
    let real = pair(inputs.real_noisy, inputs.real_clean)?;
    let synth = pair(inputs.synth_noisy, inputs.synth_clean)?;
    let report = evaluate_maps(&real, &synth, spec)?;
    write_atomic(out, to_json_pretty(&report)?.as_bytes())?;
    if let Some(csv) = csv {
        write_atomic(csv, histogram_csv(&real, &synth, spec)?.as_bytes())?;
    }
    Ok(report)
}
