use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand};
use lowlight::evaluation::HistogramSpec;
use lowlight::noise::NoiseOptions;
use lowlight::pipeline::{
    cmd_estimate, cmd_evaluate, cmd_replay, cmd_sample_noise, cmd_synthesize, cmd_train, Darkening, EvaluateInputs,
    ParamsSource, PipelineConfig, SynthesizeOptions, CONFIG_ENV,
};
use lowlight::{Error, IlluminationParams, NoiseVector, ParamRanges, Shape};

#[derive(Parser)]
#[command(name = "lowlight", version, about = "Low-light noise synthesis, estimation and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the noise estimator on a directory of clean clips.
    Train(TrainArgs),
    /// Estimate the noise vector of a reference clip.
    Estimate(EstimateArgs),
    /// Darken and add noise to clean clips.
    Synthesize(SynthesizeArgs),
    /// Write the individual noise components and their sum as images.
    SampleNoise(SampleNoiseArgs),
    /// Compare real and synthetic noise maps.
    Evaluate(EvaluateArgs),
}

#[derive(Args)]
struct ConfigArg {
    /// Pipeline configuration (TOML).
    #[arg(long, env = CONFIG_ENV)]
    config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> lowlight::Result<PipelineConfig> {
        match &self.config {
            Some(p) => PipelineConfig::load(p),
            None => Ok(PipelineConfig::default()),
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Directory whose sub-directories are clean PNG clips (overrides the config).
    #[arg(long)]
    data_root: Option<PathBuf>,
    /// Checkpoint path (overrides the config).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Loss trace CSV path (overrides the config).
    #[arg(long)]
    loss_trace: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EstimateArgs {
    /// Trained checkpoint.
    #[arg(long)]
    model: PathBuf,
    /// Directory of PNG frames.
    #[arg(long)]
    reference: PathBuf,
    /// Output noise-vector JSON; diagnostics go to `<stem>.diagnostics.json`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
#[command(group(ArgGroup::new("source").required(true).args(["params", "reference", "ranges", "replay"])))]
struct SynthesizeArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// A clip directory, or a directory of clip directories.
    #[arg(long)]
    clean: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Noise-vector JSON applied to every clip.
    #[arg(long)]
    params: Option<PathBuf>,
    /// Reference clip to estimate the vector from (needs --model).
    #[arg(long, requires = "model")]
    reference: Option<PathBuf>,
    #[arg(long, requires = "reference")]
    model: Option<PathBuf>,
    /// Parameter-range JSON; a fresh vector is drawn per clip.
    #[arg(long)]
    ranges: Option<PathBuf>,
    /// Regenerate a clip from its manifest (--clean is then the clip directory).
    #[arg(long, conflicts_with_all = ["params", "reference", "ranges", "alpha", "sample_darkening"])]
    replay: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Clamp noisy values to [0, 1] before writing.
    #[arg(long)]
    clamp: bool,
    /// Darken with this alpha (needs --gamma).
    #[arg(long, requires = "gamma")]
    alpha: Option<f64>,
    #[arg(long, requires = "alpha")]
    gamma: Option<f64>,
    /// Draw alpha and gamma per clip from the configured ranges.
    #[arg(long, conflicts_with = "alpha")]
    sample_darkening: bool,
    /// Centre quantization noise on zero.
    #[arg(long)]
    quantization_centered: bool,
}

#[derive(Args)]
struct SampleNoiseArgs {
    /// Noise-vector JSON.
    #[arg(long)]
    params: PathBuf,
    /// Frames x channels x height x width, e.g. `4x1x64x64`.
    #[arg(long, value_parser = parse_shape)]
    shape: Shape,
    /// Clean intensity the signal-dependent noise is drawn for.
    #[arg(long, default_value_t = 0.5)]
    signal: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    quantization_centered: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    real_noisy: PathBuf,
    #[arg(long)]
    real_clean: PathBuf,
    #[arg(long)]
    synth_noisy: PathBuf,
    #[arg(long)]
    synth_clean: PathBuf,
    /// Report JSON.
    #[arg(long)]
    out: PathBuf,
    /// Optional CSV of both histograms.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    bins: Option<usize>,
    #[arg(long)]
    per_channel: bool,
}

fn parse_shape(s: &str) -> Result<Shape, String> {
    let parts: Vec<usize> = s
        .split('x')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    match parts[..] {
        [t, c, h, w] => Ok(Shape::new(t, c, h, w)),
        _ => Err("expected TxCxHxW".into()),
    }
}

fn read_text(path: &Path) -> lowlight::Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Data {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn read_vector(path: &Path) -> lowlight::Result<NoiseVector> {
    NoiseVector::from_json(&read_text(path)?)
}

fn read_ranges(path: &Path) -> lowlight::Result<ParamRanges> {
    let r: ParamRanges = serde_json::from_str(&read_text(path)?)?;
    r.validate().map_err(|e| Error::Config(e.to_string()))?;
    Ok(r)
}

fn train(a: TrainArgs) -> lowlight::Result<()> {
    let mut cfg = a.config.load()?;
    if let Some(root) = a.data_root {
        cfg.training.data_root = Some(root);
    }
    if let Some(p) = a.checkpoint {
        cfg.paths.checkpoint = p;
    }
    if let Some(p) = a.loss_trace {
        cfg.paths.loss_trace = p;
    }
    if let Some(e) = a.epochs {
        cfg.training.epochs = e;
    }
    if let Some(s) = a.seed {
        cfg.training.seed = s;
    }
    let out = cmd_train(&cfg)?;
    let f = out.model.fingerprint();
    eprintln!(
        "trained {} epochs, final epoch loss {:.6}; checkpoint {}, loss trace {}",
        f.epochs,
        f.epoch_means.last().copied().unwrap_or(f64::NAN),
        out.checkpoint.display(),
        out.loss_trace.display()
    );
    Ok(())
}

fn estimate(a: EstimateArgs) -> lowlight::Result<()> {
    let d = cmd_estimate(&a.model, &a.reference, &a.out)?;
    eprintln!("estimated from {} patches; wrote {}", d.patches.len(), a.out.display());
    Ok(())
}

fn synthesize(a: SynthesizeArgs) -> lowlight::Result<()> {
    if let Some(manifest) = &a.replay {
        cmd_replay(manifest, &a.clean, &a.out)?;
        eprintln!("replayed into {}", a.out.display());
        return Ok(());
    }
    let cfg = a.config.load()?;
    let params = if let Some(p) = &a.params {
        ParamsSource::Vector(read_vector(p)?)
    } else if let (Some(r), Some(m)) = (&a.reference, &a.model) {
        ParamsSource::from_reference(m, r)?
    } else {
        ParamsSource::Ranges(read_ranges(a.ranges.as_ref().expect("one source is required"))?)
    };
    let darkening = match (a.alpha, a.gamma, a.sample_darkening) {
        (Some(alpha), Some(gamma), _) => Darkening::Fixed(IlluminationParams::new(alpha, gamma)?),
        (_, _, true) => Darkening::Sample(cfg.ranges()),
        _ => Darkening::Off,
    };
    let opts = SynthesizeOptions {
        params,
        darkening,
        seed: a.seed,
        clamp: a.clamp,
        noise: NoiseOptions {
            quantization_centered: a.quantization_centered || cfg.noise.quantization_centered,
        },
    };
    let manifests = cmd_synthesize(&a.clean, &a.out, &opts)?;
    eprintln!("synthesized {} clips into {}", manifests.len(), a.out.display());
    Ok(())
}

fn sample_noise(a: SampleNoiseArgs) -> lowlight::Result<()> {
    let v = read_vector(&a.params)?;
    let opts = NoiseOptions {
        quantization_centered: a.quantization_centered,
    };
    cmd_sample_noise(&v, a.shape, a.signal, a.seed, opts, &a.out)?;
    eprintln!("wrote noise maps to {}", a.out.display());
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> lowlight::Result<()> {
    let cfg = a.config.load()?;
    let spec = HistogramSpec {
        bins: a.bins.unwrap_or(cfg.histogram.bins),
        per_channel: a.per_channel || cfg.histogram.per_channel,
        ..cfg.histogram
    };
    let inputs = EvaluateInputs {
        real_noisy: &a.real_noisy,
        real_clean: &a.real_clean,
        synth_noisy: &a.synth_noisy,
        synth_clean: &a.synth_clean,
    };
    let report = cmd_evaluate(&inputs, &spec, &a.out, a.csv.as_deref())?;
    println!("{}", report.kld);
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Checkpoint(_) | Error::Json(_) | Error::Unsupported(_) => 2,
        Error::Data { .. } | Error::Io { .. } | Error::Shape(_) | Error::InvalidParameter(_) => 3,
        Error::NonFiniteLoss { .. } => 4,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Estimate(a) => estimate(a),
        Command::Synthesize(a) => synthesize(a),
        Command::SampleNoise(a) => sample_noise(a),
        Command::Evaluate(a) => evaluate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
