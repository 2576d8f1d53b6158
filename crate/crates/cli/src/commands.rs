//! Subcommand implementations. Each returns `Ok(false)` when it ran to
//! completion but a check failed.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use vesselgraph::data::{
    load_binary, load_manifest, load_probability_map, save_probability_map, save_rgb, save_sample,
    synth_vessel_sample, write_manifest, FundusSample, ManifestEntry, PreparedSample, SynthConfig,
};
use vesselgraph::gradcheck::{run_all, GradcheckOptions};
use vesselgraph::inference::predict_probability_map;
use vesselgraph::metrics::{render_overlay, report_csv};
use vesselgraph::segnet::{checkpoint, NetworkParams};
use vesselgraph::seed::{self, stream};
use vesselgraph::trainer::{self, Precision, TrainConfig, PAPER_LAMBDAS};
use vesselgraph::Real;

use crate::run_manifest::RunManifest;
use crate::{ConfigArgs, EvalArgs, GradcheckArgs, OverlayArgs, SweepArgs, SynthArgs, TrainArgs};

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const CONFIG_FILE: &str = "config.txt";
pub const REPORT_FILE: &str = "report.csv";
pub const GRADCHECK_FILE: &str = "gradcheck.txt";

/// Defaults, then the config file, then explicit flags.
pub fn resolve_config(args: &ConfigArgs) -> Result<TrainConfig> {
    let mut config = TrainConfig::default();
    if let Some(path) = &args.config {
        config.apply_file(path)?;
    }
    let flags: [(&str, Option<String>); 15] = [
        ("seed", args.seed.map(|v| v.to_string())),
        ("lambda", args.lambda.map(|v| v.to_string())),
        ("epochs", args.epochs.map(|v| v.to_string())),
        ("batch_size", args.batch_size.map(|v| v.to_string())),
        ("patches_per_epoch", args.patches_per_epoch.map(|v| v.to_string())),
        ("sample_m", args.sample_m.map(|v| v.to_string())),
        ("mode", args.mode.clone()),
        ("reduction", args.reduction.clone()),
        ("precision", args.precision.clone()),
        ("widths", args.widths.clone()),
        ("learning_rate", args.learning_rate.map(|v| v.to_string())),
        ("patch_size", args.patch_size.map(|v| v.to_string())),
        ("augment", args.augment.clone()),
        ("validation_images", args.validation_images.map(|v| v.to_string())),
        ("eval_stride", args.eval_stride.map(|v| v.to_string())),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            config.set(key, &v)?;
        }
    }
    config.validate()?;
    Ok(config)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_samples(manifest: &Path) -> Result<(Vec<ManifestEntry>, Vec<FundusSample>)> {
    let loaded = load_manifest(manifest).with_context(|| format!("loading manifest {}", manifest.display()))?;
    if loaded.is_empty() {
        bail!("manifest {} lists no samples", manifest.display());
    }
    Ok(loaded.into_iter().unzip())
}

pub fn synth(args: &SynthArgs) -> Result<bool> {
    create_dir(&args.out)?;
    let config = SynthConfig {
        width: args.size,
        height: args.size,
        ..SynthConfig::default()
    };
    let mut rng = seed::stream_rng(args.seed, stream::SYNTH);
    let mut entries = Vec::with_capacity(args.count);
    for i in 0..args.count {
        let sample = synth_vessel_sample(&config, &mut rng)?;
        let entry = ManifestEntry {
            image: args.out.join(format!("synth_{i:03}.png")),
            label: args.out.join(format!("synth_{i:03}_label.png")),
            mask: None,
        };
        save_sample(&sample, &entry.image, &entry.label, None)?;
        entries.push(entry);
    }
    let manifest = args.out.join(MANIFEST_FILE);
    write_manifest(&manifest, &entries)?;
    if args.count == 0 {
        eprintln!("warning: count is 0, wrote an empty manifest");
    }
    RunManifest::new("synth", args.seed, Some(&manifest), &args.out, None).write(&args.out)?;
    println!("wrote {} samples and {}", args.count, manifest.display());
    Ok(true)
}

fn print_epoch(record: &trainer::EpochRecord) {
    println!("{}", record.csv_row());
}

pub fn train(args: &TrainArgs) -> Result<bool> {
    let config = resolve_config(&args.config)?;
    let (_, samples) = load_samples(&args.manifest)?;
    create_dir(&args.out)?;
    write_text(&args.out.join(CONFIG_FILE), &config.to_kv())?;
    println!("{}", trainer::EPOCH_LOG_HEADER);
    match config.precision {
        Precision::F32 => {
            trainer::train::<f32>(&config, &samples, Some(&args.out), print_epoch)?;
        }
        Precision::F64 => {
            trainer::train::<f64>(&config, &samples, Some(&args.out), print_epoch)?;
        }
    }
    RunManifest::new("train", config.seed, Some(&args.manifest), &args.out, Some(&config)).write(&args.out)?;
    Ok(true)
}

pub fn sweep(args: &SweepArgs) -> Result<bool> {
    let config = resolve_config(&args.config)?;
    let (_, train_samples) = load_samples(&args.manifest)?;
    let (_, test_samples) = load_samples(&args.test_manifest)?;
    let lambdas = args.lambdas.clone().unwrap_or_else(|| PAPER_LAMBDAS.to_vec());
    create_dir(&args.out)?;
    write_text(&args.out.join(CONFIG_FILE), &config.to_kv())?;
    let progress = |lambda: f64, r: &trainer::EpochRecord| println!("lambda={lambda:e} {}", r.csv_row());
    let rows = match config.precision {
        Precision::F32 => trainer::sweep::<f32>(
            &config,
            &lambdas,
            &train_samples,
            &test_samples,
            args.threshold,
            Some(&args.out),
            progress,
        )?,
        Precision::F64 => trainer::sweep::<f64>(
            &config,
            &lambdas,
            &train_samples,
            &test_samples,
            args.threshold,
            Some(&args.out),
            progress,
        )?,
    };
    print!("{}", trainer::sweep_csv(&rows));
    RunManifest::new("sweep", config.seed, Some(&args.manifest), &args.out, Some(&config)).write(&args.out)?;
    Ok(true)
}

fn load_params<T: Real>(path: Option<&Path>, config: &TrainConfig) -> Result<NetworkParams<T>> {
    let params = match path {
        Some(p) => checkpoint::load::<T>(p).with_context(|| format!("loading checkpoint {}", p.display()))?,
        None => NetworkParams::zeros(&config.network()),
    };
    let expected = config.input_mode.channels();
    let found = params.config().in_channels;
    if found != expected {
        bail!(
            "checkpoint expects {found} input channels but mode {} provides {expected}",
            config.input_mode
        );
    }
    Ok(params)
}

fn eval_with<T: Real>(args: &EvalArgs, config: &TrainConfig) -> Result<()> {
    let params = load_params::<T>(args.checkpoint.as_deref(), config)?;
    let (entries, samples) = load_samples(&args.manifest)?;
    let prepared: Vec<PreparedSample> = samples.iter().map(|s| PreparedSample::new(s, config.input_mode)).collect();
    let eval = trainer::evaluate(
        &params,
        &prepared,
        args.threshold,
        !args.no_mask,
        config.patch_size,
        config.eval_stride,
    )?;
    let names: Vec<String> = entries.iter().map(ManifestEntry::name).collect();
    let rows = names
        .iter()
        .map(String::as_str)
        .zip(eval.images.iter().map(|r| &r.report))
        .chain(std::iter::once(("pooled", &eval.pooled)));
    let report = report_csv(rows);
    write_text(&args.out.join(REPORT_FILE), &report)?;
    print!("{report}");

    if args.save_maps {
        let maps = args.out.join("maps");
        create_dir(&maps)?;
        for ((name, result), sample) in names.iter().zip(&eval.images).zip(&prepared) {
            save_probability_map(&result.probability, &maps.join(format!("{name}_prob.png")))?;
            let mask = if args.no_mask { None } else { sample.fov_mask.as_ref() };
            let overlay = render_overlay(&result.probability, &sample.label, args.threshold, mask)?;
            save_rgb(&overlay, &maps.join(format!("{name}_overlay.png")))?;
        }
    }
    Ok(())
}

pub fn eval(args: &EvalArgs) -> Result<bool> {
    let config = resolve_config(&args.config)?;
    create_dir(&args.out)?;
    match config.precision {
        Precision::F32 => eval_with::<f32>(args, &config)?,
        Precision::F64 => eval_with::<f64>(args, &config)?,
    }
    RunManifest::new("eval", config.seed, Some(&args.manifest), &args.out, Some(&config)).write(&args.out)?;
    Ok(true)
}

fn overlay_path(out: &Path, name: &str) -> PathBuf {
    out.join(format!("{name}_overlay.png"))
}

fn overlay_manifest<T: Real>(args: &OverlayArgs, manifest: &Path, config: &TrainConfig) -> Result<()> {
    let params = load_params::<T>(args.checkpoint.as_deref(), config)?;
    let (entries, samples) = load_samples(manifest)?;
    for (entry, sample) in entries.iter().zip(&samples) {
        let prepared = PreparedSample::new(sample, config.input_mode);
        let prob = predict_probability_map(&params, &prepared, config.patch_size, config.eval_stride)?;
        let img = render_overlay(&prob, &prepared.label, args.threshold, prepared.fov_mask.as_ref())?;
        let path = overlay_path(&args.out, &entry.name());
        save_rgb(&img, &path)?;
        println!("{}", path.display());
    }
    Ok(())
}

pub fn overlay(args: &OverlayArgs) -> Result<bool> {
    let config = resolve_config(&args.config)?;
    create_dir(&args.out)?;
    match (&args.manifest, &args.prob_map, &args.label) {
        (Some(manifest), _, _) => match config.precision {
            Precision::F32 => overlay_manifest::<f32>(args, manifest, &config)?,
            Precision::F64 => overlay_manifest::<f64>(args, manifest, &config)?,
        },
        (None, Some(prob_path), Some(label_path)) => {
            let prob = load_probability_map(prob_path)?;
            let label = load_binary(label_path)?;
            let mask = args.mask.as_deref().map(load_binary).transpose()?;
            let img = render_overlay(&prob, &label, args.threshold, mask.as_ref())?;
            let stem = prob_path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "prediction".into());
            let path = overlay_path(&args.out, &stem);
            save_rgb(&img, &path)?;
            println!("{}", path.display());
        }
        _ => bail!("overlay needs --manifest with --checkpoint, or --prob-map with --label"),
    }
    RunManifest::new("overlay", config.seed, args.manifest.as_deref(), &args.out, Some(&config)).write(&args.out)?;
    Ok(true)
}

pub fn gradcheck(args: &GradcheckArgs) -> Result<bool> {
    let opts = GradcheckOptions {
        seed: args.seed,
        corrupt: args.corrupt,
    };
    let suites = run_all(&opts)?;
    let mut report = String::new();
    for s in &suites {
        report.push_str(&format!("{s}\n"));
    }
    let passed = suites.iter().all(|s| s.passed());
    report.push_str(if passed { "all suites passed\n" } else { "gradient check FAILED\n" });
    print!("{report}");
    if let Some(out) = &args.out {
        create_dir(out)?;
        write_text(&out.join(GRADCHECK_FILE), &report)?;
        RunManifest::new("gradcheck", args.seed, None, out, None).write(out)?;
    }
    Ok(passed)
}
