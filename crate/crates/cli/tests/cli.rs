use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lowlight::io::{read_clip, read_offset_map, write_clip};
use lowlight::pipeline::procedural_clip;
use lowlight::{NoiseVector, Shape};

fn lowlight() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_lowlight"));
    c.env_remove("LOWLIGHT_CONFIG").env("SOURCE_DATE_EPOCH", "0");
    c
}

fn run(args: &[&str]) -> Output {
    lowlight().args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_clips(root: &Path, n: usize, shape: Shape) {
    for i in 0..n {
        write_clip(&procedural_clip(i as u64, shape).unwrap(), &root.join(format!("clip_{i:02}"))).unwrap();
    }
}

fn write_vector(path: &Path, v: &NoiseVector) {
    fs::write(path, v.to_json().unwrap()).unwrap();
}

const SMOKE_CONFIG: &str = r#"
[den]
depth = 2
base_channels = 2
mlp_hidden = [8]
patch_height = 16
patch_width = 16
frames_per_sample = 2
channels = 1

[training]
epochs = 1
frames = 2
data_root = "clips"
"#;

/// Trains the smoke model once per test that needs it; returns (workdir, checkpoint).
fn trained(dir: &Path) -> PathBuf {
    write_clips(&dir.join("clips"), 4, Shape::new(3, 1, 16, 16));
    let cfg = dir.join("smoke.toml");
    fs::write(&cfg, SMOKE_CONFIG).unwrap();
    let o = run(&["train", "--config", s(&cfg)]);
    assert!(o.status.success(), "{}", stderr(&o));
    dir.join("den_checkpoint.json")
}

#[test]
fn every_subcommand_has_help() {
    for sub in ["train", "estimate", "synthesize", "sample-noise", "evaluate"] {
        let o = run(&[sub, "--help"]);
        assert!(o.status.success(), "{sub}");
        assert!(String::from_utf8_lossy(&o.stdout).contains("Usage"), "{sub}");
    }
}

#[test]
fn invalid_flags_exit_one_without_side_effects() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = run(&["sample-noise", "--bogus", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!out.exists());
    let o = run(&["synthesize", "--clean", s(dir.path()), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1), "no params source");
    let p = dir.path().join("v.json");
    write_vector(&p, &NoiseVector::zero());
    let r = dir.path().join("r.json");
    fs::write(&r, "{}").unwrap();
    let o = run(&["synthesize", "--clean", s(dir.path()), "--out", s(&out), "--params", s(&p), "--ranges", s(&r)]);
    assert_eq!(o.status.code(), Some(1), "two params sources");
    assert!(!out.exists());
}

#[test]
fn train_with_missing_data_root_exits_three_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("no_such_corpus");
    let o = run(&["train", "--data-root", s(&missing)]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("no_such_corpus"), "{}", stderr(&o));
}

#[test]
fn bad_config_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[training]\nepochs = 1\nsurprise = true\n").unwrap();
    let o = run(&["train", "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
    // the environment variable supplies the default config path
    let o = lowlight().env("LOWLIGHT_CONFIG", &cfg).args(["train"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("surprise"), "{}", stderr(&o));
}

#[test]
fn smoke_training_estimation_and_reference_synthesis() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = trained(dir.path());
    assert!(ckpt.exists());
    let trace = fs::read_to_string(dir.path().join("loss_trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 1 + 2, "header plus one line per step");
    let model = lowlight::estimator::DenModel::load(&ckpt).unwrap();
    assert_eq!(model.fingerprint().epochs, 1);

    let reference = dir.path().join("reference");
    write_clip(&procedural_clip(50, Shape::new(1, 1, 24, 24)).unwrap(), &reference).unwrap();
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    for out in [&a, &b] {
        let o = run(&["estimate", "--model", s(&ckpt), "--reference", s(&reference), "--out", s(out)]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(text, fs::read_to_string(&b).unwrap());
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["format_version"], 1);
    assert_eq!(v.as_object().unwrap().len(), 9);
    assert!(NoiseVector::from_json(&text).unwrap().validate().is_ok());
    assert!(dir.path().join("a.diagnostics.json").exists());

    let out = dir.path().join("synth");
    let o = run(&[
        "synthesize", "--clean", s(&dir.path().join("clips")), "--out", s(&out), "--reference", s(&reference),
        "--model", s(&ckpt), "--seed", "3",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let m: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("clip_00").join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["reference_id"], "reference");
}

#[test]
fn corrupt_checkpoint_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let reference = dir.path().join("reference");
    write_clip(&procedural_clip(1, Shape::new(1, 1, 16, 16)).unwrap(), &reference).unwrap();
    let ckpt = dir.path().join("broken.json");
    fs::write(&ckpt, "{\"format_version\": 42}").unwrap();
    let out = dir.path().join("v.json");
    let o = run(&["estimate", "--model", s(&ckpt), "--reference", s(&reference), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("format_version"), "{}", stderr(&o));
    fs::write(&ckpt, "not json at all").unwrap();
    let o = run(&["estimate", "--model", s(&ckpt), "--reference", s(&reference), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("JSON"), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn synthesize_identity_determinism_and_replay() {
    let dir = tempfile::tempdir().unwrap();
    let clean = dir.path().join("clean");
    write_clips(&clean, 2, Shape::new(3, 3, 16, 16));
    let zero = dir.path().join("zero.json");
    write_vector(&zero, &NoiseVector::zero());
    let id = dir.path().join("identity");
    let o = run(&["synthesize", "--clean", s(&clean), "--out", s(&id), "--params", s(&zero)]);
    assert!(o.status.success(), "{}", stderr(&o));
    for c in ["clip_00", "clip_01"] {
        for f in ["frame_000000.png", "frame_000002.png"] {
            assert_eq!(fs::read(clean.join(c).join(f)).unwrap(), fs::read(id.join(c).join(f)).unwrap());
        }
    }

    let ranges = dir.path().join("ranges.json");
    fs::write(&ranges, serde_json::to_string(&lowlight::ParamRanges::for_patch(16, 16)).unwrap()).unwrap();
    let gen = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        let o = run(&[
            "synthesize", "--clean", s(&clean), "--out", s(&out), "--ranges", s(&ranges), "--seed", seed,
            "--sample-darkening", "--clamp",
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        out
    };
    let (a, b, c) = (gen("a", "9"), gen("b", "9"), gen("c", "10"));
    let bytes = |root: &Path| -> Vec<Vec<u8>> {
        let mut all = Vec::new();
        for clip in ["clip_00", "clip_01"] {
            for name in ["frame_000000.png", "frame_000001.png", "frame_000002.png", "manifest.json"] {
                all.push(fs::read(root.join(clip).join(name)).unwrap());
            }
        }
        all
    };
    assert_eq!(bytes(&a), bytes(&b));
    assert_ne!(bytes(&a), bytes(&c));

    let replay = dir.path().join("replay");
    let o = run(&[
        "synthesize", "--clean", s(&clean.join("clip_01")), "--out", s(&replay), "--replay",
        s(&a.join("clip_01").join("manifest.json")),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(read_clip(&replay).unwrap(), read_clip(&a.join("clip_01")).unwrap());
}

#[test]
fn sample_noise_maps_and_divisibility_error() {
    let dir = tempfile::tempdir().unwrap();
    let zero = dir.path().join("zero.json");
    write_vector(&zero, &NoiseVector::zero());
    let out = dir.path().join("maps");
    let o = run(&["sample-noise", "--params", s(&zero), "--shape", "2x1x8x16", "--seed", "1", "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    for name in ["heteroscedastic", "quantization", "banding", "temporal_banding", "periodic", "composite"] {
        let (shape, values) = read_offset_map(&out.join(name)).unwrap();
        assert_eq!(shape, Shape::new(2, 1, 8, 16));
        assert!(values.iter().all(|v| v.abs() < 1e-4), "{name} is not mid-gray");
    }
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["format_version"], 1);
    assert_eq!(m["energy"].as_object().unwrap().len(), 6);

    let periodic = dir.path().join("p.json");
    write_vector(&periodic, &NoiseVector { sigma_p1: 0.2, ..NoiseVector::zero() });
    let o = run(&["sample-noise", "--params", s(&periodic), "--shape", "1x1x8x250", "--out", s(&dir.path().join("bad"))]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains('4'), "{}", stderr(&o));
}

#[test]
fn evaluate_report_conforms_to_schema_and_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let shape = Shape::new(2, 3, 16, 16);
    let clean = procedural_clip(4, shape).unwrap();
    let noisy = lowlight::apply_noise(
        &clean,
        &NoiseVector { sigma_r: 0.05, ..NoiseVector::zero() },
        &lowlight::RandomSource::new(1, "eval"),
        true,
    )
    .unwrap();
    let other = lowlight::apply_noise(
        &clean,
        &NoiseVector { sigma_r: 0.1, ..NoiseVector::zero() },
        &lowlight::RandomSource::new(2, "eval"),
        true,
    )
    .unwrap();
    for (name, clip) in [("clean", &clean), ("noisy", &noisy), ("other", &other)] {
        write_clip(clip, &dir.path().join(name)).unwrap();
    }
    let p = |n: &str| dir.path().join(n);
    let out = p("same.json");
    let o = run(&[
        "evaluate", "--real-noisy", s(&p("noisy")), "--real-clean", s(&p("clean")), "--synth-noisy",
        s(&p("noisy")), "--synth-clean", s(&p("clean")), "--out", s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(report["kld"], 0.0);

    let schema_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../schemas/evaluation_report.schema.json");
    let schema: serde_json::Value = serde_json::from_str(&fs::read_to_string(schema_path).unwrap()).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    assert!(validator.is_valid(&report));

    let out = p("diff.json");
    let csv = p("hist.csv");
    let o = run(&[
        "evaluate", "--real-noisy", s(&p("noisy")), "--real-clean", s(&p("clean")), "--synth-noisy",
        s(&p("other")), "--synth-clean", s(&p("clean")), "--out", s(&out), "--csv", s(&csv),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert!(validator.is_valid(&report));
    assert!(csv.exists());
    let real = lowlight::evaluation::extract_noise_map(&read_clip(&p("noisy")).unwrap(), &read_clip(&p("clean")).unwrap()).unwrap();
    let synth = lowlight::evaluation::extract_noise_map(&read_clip(&p("other")).unwrap(), &read_clip(&p("clean")).unwrap()).unwrap();
    let direct = lowlight::evaluation::histogram_kld(&real, &synth, &Default::default()).unwrap();
    assert_eq!(report["kld"].as_f64().unwrap(), direct);
    assert!(direct > 0.0);

    let o = run(&[
        "evaluate", "--real-noisy", s(&p("noisy")), "--real-clean", s(&p("clean")), "--synth-noisy",
        s(&p("noisy")), "--synth-clean", s(&dir.path().join("missing")), "--out", s(&p("x.json")),
    ]);
    assert_eq!(o.status.code(), Some(3));
}
