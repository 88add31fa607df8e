mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{error, info, warn};
use rayon::prelude::*;
use serde::Serialize;
use uatr::audio::synth::with_snr_range;
use uatr::audio::{
    default_profiles, make_dataset, read_wav, segment, DatasetManifest, ManifestEntry, CLASS_NAMES,
};
use uatr::features::{FeatureExtractor, FeatureImage, Frontend};
use uatr::metrics::{latency_benchmark, EvalReport, LatencyStats};
use uatr::nn::{
    build_reference_model, load_checkpoint, predict_batch, save_checkpoint, train, write_history_csv,
    Example, Model, Tensor,
};
use uatr::Error;

use crate::config::RunConfig;

#[derive(Debug, thiserror::Error)]
enum Failure {
    #[error(transparent)]
    Core(#[from] Error),
    #[error("{failed} of {total} input files could not be processed")]
    Partial { failed: usize, total: usize },
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Partial { .. } => 3,
            Failure::Core(e) => match e {
                Error::Domain(_)
                | Error::Config(_)
                | Error::Aliasing { .. }
                | Error::Empty(_)
                | Error::Shape(_)
                | Error::SampleRateMismatch { .. }
                | Error::Label(_) => 2,
                Error::MalformedWav(_)
                | Error::UnsupportedWav(_)
                | Error::EmptyWav
                | Error::Format(_)
                | Error::Truncated(_)
                | Error::MissingFile(_)
                | Error::Io { .. }
                | Error::Json(_) => 3,
                Error::Divergence { .. } | Error::NegativeEnergy { .. } | Error::Undefined(_) => 4,
            },
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

/// Underwater vessel classification from gammatone cochleagrams.
///
/// Exit codes: 0 success, 2 bad configuration or input, 3 I/O or file
/// format error, 4 numerical failure. Log level follows RUST_LOG.
#[derive(Parser)]
#[command(name = "uatr", version)]
struct Cli {
    /// JSON run configuration; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a labelled WAV corpus with a manifest.
    Synth(SynthArgs),
    /// Turn a corpus into feature images (resumable).
    Extract(ExtractArgs),
    /// Train the reference CNN on extracted features.
    Train(TrainArgs),
    /// Score a checkpoint on one split and write the report files.
    Eval(EvalArgs),
    /// Measure per-window latency of extraction plus inference.
    Bench(BenchArgs),
    /// Render a stored feature image as a PGM.
    ExportImage(ExportArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    per_class: Option<usize>,
    /// Clip length in seconds.
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long)]
    sample_rate: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, requires = "snr_max")]
    snr_min: Option<f64>,
    #[arg(long, requires = "snr_min")]
    snr_max: Option<f64>,
}

#[derive(Args)]
struct ExtractArgs {
    /// Directory holding the manifest written by `synth`.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    frontend: Option<Frontend>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    features: Option<PathBuf>,
    /// Checkpoint path; the history CSV goes next to it.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    clip: PathBuf,
    #[arg(long, default_value_t = 100)]
    iterations: usize,
    /// Also write the JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    /// Feature stem (the `.json`/`.f32` extension may be given).
    #[arg(long)]
    feature: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let mut config = RunConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Synth(args) => synth(&mut config, args),
        Command::Extract(args) => extract(&mut config, args),
        Command::Train(args) => train_cmd(&mut config, args),
        Command::Eval(args) => eval(&config, args),
        Command::Bench(args) => bench(&config, args),
        Command::ExportImage(args) => export_image(args),
    }
}

fn required(flag: Option<PathBuf>, fallback: &Option<PathBuf>, name: &str) -> CliResult<PathBuf> {
    flag.or_else(|| fallback.clone()).ok_or_else(|| {
        Error::Config(format!(
            "--{name} is required (or set it under paths in the config)"
        ))
        .into()
    })
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn synth(config: &mut RunConfig, args: SynthArgs) -> CliResult<()> {
    let out = required(args.out, &config.paths.data_dir, "out")?;
    let d = &mut config.dataset;
    d.per_class = args.per_class.unwrap_or(d.per_class);
    d.duration = args.duration.unwrap_or(d.duration);
    d.sample_rate = args.sample_rate.unwrap_or(d.sample_rate);
    if let (Some(lo), Some(hi)) = (args.snr_min, args.snr_max) {
        d.snr_range = Some((lo, hi));
    }
    config.seed = args.seed.unwrap_or(config.seed);
    config.validate()?;

    let d = &config.dataset;
    let mut profiles = default_profiles();
    if let Some(range) = d.snr_range {
        profiles = with_snr_range(&profiles, range);
    }
    let manifest = make_dataset(
        &out,
        &profiles,
        d.per_class,
        d.duration,
        d.sample_rate,
        config.seed,
        d.fractions,
    )?;
    let echo = out.join("run_config.json");
    fs::write(&echo, serde_json::to_vec_pretty(config).map_err(Error::from)?)
        .map_err(|e| io_err(&echo, e))?;

    for profile in &profiles {
        let mine: Vec<&ManifestEntry> = manifest
            .entries
            .iter()
            .filter(|e| e.class_id == profile.class_id)
            .collect();
        let count = |s| mine.iter().filter(|e| e.split == s).count();
        println!(
            "{:<14} {:>5} clips (train {}, val {}, test {})",
            profile.name,
            mine.len(),
            count(uatr::audio::Split::Train),
            count(uatr::audio::Split::Val),
            count(uatr::audio::Split::Test)
        );
    }
    println!("manifest: {}", out.join("manifest.json").display());
    Ok(())
}

fn class_name(manifest: &DatasetManifest, class_id: u8) -> String {
    manifest
        .header
        .profiles
        .iter()
        .find(|p| p.class_id == class_id)
        .map(|p| p.name.clone())
        .unwrap_or_else(|| CLASS_NAMES[class_id as usize].to_string())
}

enum Extracted {
    Fresh(usize),
    UpToDate,
}

fn extract(config: &mut RunConfig, args: ExtractArgs) -> CliResult<()> {
    let dataset = required(args.dataset, &config.paths.data_dir, "dataset")?;
    let out = required(args.out, &config.paths.features_dir, "out")?;
    let f = &mut config.features;
    f.frontend = args.frontend.unwrap_or(f.frontend);
    f.height = args.height.unwrap_or(f.height);
    f.width = args.width.unwrap_or(f.width);
    config.validate()?;

    let manifest = DatasetManifest::load(&dataset)?;
    let extractor = FeatureExtractor::new(config.features.clone())?;
    let echo = serde_json::json!({
        "features": config.features,
        "segment_seconds": config.segment_seconds,
    });
    let window = config.segment_seconds;

    let results: Vec<(String, uatr::Result<Extracted>)> = manifest
        .entries
        .par_iter()
        .map(|entry| {
            let file_stem = Path::new(&entry.path)
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| entry.path.clone());
            let dir = out
                .join(entry.split.name())
                .join(class_name(&manifest, entry.class_id));
            let stem = |i: usize| dir.join(format!("{file_stem}_{i}"));
            let expected = (entry.duration / window + 1e-9).floor() as usize;
            let current = |i: usize| {
                FeatureImage::tensor_path(&stem(i)).exists()
                    && FeatureImage::read_provenance(&stem(i)).is_ok_and(|(_, _, p)| {
                        p.config_hash == extractor.config_hash() && p.config.as_ref() == Some(&echo)
                    })
            };
            if expected > 0 && (0..expected).all(current) {
                return (entry.path.clone(), Ok(Extracted::UpToDate));
            }
            let work = || -> uatr::Result<Extracted> {
                let mut clip = read_wav(&uatr::audio::dataset::resolve(&dataset, entry))?;
                clip.label = Some(entry.class_id);
                let windows = segment(&clip, window, None)?;
                if windows.is_empty() {
                    warn!("{}: shorter than one {window} s window, skipped", entry.path);
                }
                fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
                for (i, w) in windows.iter().enumerate() {
                    let mut image = extractor.extract(w)?;
                    image.provenance.source_file = Some(entry.path.clone());
                    image.provenance.label = Some(entry.class_id);
                    image.provenance.config = Some(echo.clone());
                    image.save(&stem(i))?;
                }
                Ok(Extracted::Fresh(windows.len()))
            };
            (entry.path.clone(), work())
        })
        .collect();

    let (mut written, mut up_to_date, mut failed) = (0, 0, 0);
    for (path, result) in &results {
        match result {
            Ok(Extracted::Fresh(n)) => written += n,
            Ok(Extracted::UpToDate) => up_to_date += 1,
            Err(e) => {
                error!("{path}: {e}");
                failed += 1;
            }
        }
    }
    println!(
        "extracted {written} images ({}), {up_to_date} files up to date, {failed} failed",
        config.features.frontend.name()
    );
    if failed > 0 {
        return Err(Failure::Partial {
            failed,
            total: results.len(),
        });
    }
    Ok(())
}

/// Every feature stem below `dir`, sorted.
fn feature_stems(dir: &Path) -> uatr::Result<Vec<PathBuf>> {
    let mut stems = Vec::new();
    if !dir.exists() {
        return Ok(stems);
    }
    let mut pending = vec![dir.to_path_buf()];
    while let Some(d) = pending.pop() {
        for item in fs::read_dir(&d).map_err(|e| io_err(&d, e))? {
            let path = item.map_err(|e| io_err(&d, e))?.path();
            if path.is_dir() {
                pending.push(path);
            } else if path.extension().is_some_and(|x| x == "json") {
                stems.push(path.with_extension(""));
            }
        }
    }
    stems.sort();
    Ok(stems)
}

fn load_examples(features: &Path, split: &str) -> uatr::Result<Vec<Example>> {
    let mut examples = Vec::new();
    let mut shape = None;
    for stem in feature_stems(&features.join(split))? {
        let image = FeatureImage::load(&stem)?;
        let label = image
            .provenance
            .label
            .ok_or_else(|| Error::Label(format!("{} has no label", stem.display())))?;
        let dims = (image.height, image.width);
        if *shape.get_or_insert(dims) != dims {
            return Err(Error::Shape(format!(
                "{} is {}x{}, expected {}x{}",
                stem.display(),
                dims.0,
                dims.1,
                shape.unwrap().0,
                shape.unwrap().1
            )));
        }
        let input = Tensor::new(vec![3, image.height, image.width], image.to_chw())?;
        examples.push(Example {
            input,
            label: label as usize,
        });
    }
    Ok(examples)
}

fn train_cmd(config: &mut RunConfig, args: TrainArgs) -> CliResult<()> {
    let features = required(args.features, &config.paths.features_dir, "features")?;
    let out = required(args.out, &config.paths.checkpoint, "out")?;
    let t = &mut config.train;
    t.epochs = args.epochs.unwrap_or(t.epochs);
    t.batch_size = args.batch_size.unwrap_or(t.batch_size);
    t.learning_rate = args.lr.unwrap_or(t.learning_rate);
    if let Some(seed) = args.seed {
        config.seed = seed;
        config.train.seed = seed;
    }
    config.validate()?;

    let train_set = load_examples(&features, "train")?;
    let val_set = load_examples(&features, "val")?;
    let Some(first) = train_set.first() else {
        return Err(Error::Empty("training split").into());
    };
    let [_, h, w] = [
        first.input.dims()[0],
        first.input.dims()[1],
        first.input.dims()[2],
    ];
    info!(
        "{} training and {} validation images of {h}x{w}",
        train_set.len(),
        val_set.len()
    );

    let model = build_reference_model(h, w, 3, CLASS_NAMES.len(), config.seed)?;
    let outcome = train(model, &train_set, &val_set, &config.train)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    save_checkpoint(&out, &outcome.best, None)?;
    let history = out.with_extension("history.csv");
    write_history_csv(&history, &outcome.history)?;

    match (outcome.best_epoch, outcome.history.last()) {
        (Some(best), Some(last)) => println!(
            "best val_acc {:.4} at epoch {best}; last epoch {} train_loss {:.4} val_loss {:.4}",
            outcome.history[best - 1].val_acc,
            last.epoch,
            last.train_loss,
            last.val_loss
        ),
        _ => println!("no epochs run; wrote initial weights"),
    }
    println!("checkpoint: {}", out.display());
    println!("history: {}", history.display());
    Ok(())
}

fn eval(config: &RunConfig, args: EvalArgs) -> CliResult<()> {
    let checkpoint = required(args.checkpoint, &config.paths.checkpoint, "checkpoint")?;
    let features = required(args.features, &config.paths.features_dir, "features")?;
    let out = required(args.out, &config.paths.report_dir, "out")?;
    let split: uatr::audio::Split = args.split.parse().map_err(Error::Config)?;

    let (model, _) = load_checkpoint(&checkpoint)?;
    let examples = load_examples(&features, split.name())?;
    if examples.is_empty() {
        return Err(Error::Empty("evaluation split").into());
    }
    let mut probs = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(32) {
        let inputs: Vec<&Tensor> = chunk.iter().map(|e| &e.input).collect();
        probs.extend(predict_batch(&model, &inputs)?);
    }
    let y_true: Vec<usize> = examples.iter().map(|e| e.label).collect();
    let names: Vec<String> = CLASS_NAMES.iter().map(|s| s.to_string()).collect();
    let report = EvalReport::from_probabilities(&y_true, &probs, &names)?;
    report.write_all(&out)?;
    println!(
        "{}: n={} accuracy {:.4} kappa {:.4} macro_f1 {:.4}",
        split.name(),
        report.num_samples,
        report.accuracy,
        report.kappa,
        report.scores.macro_f1
    );
    println!("report: {}", out.join("report.json").display());
    Ok(())
}

#[derive(Serialize)]
struct BenchReport {
    window_seconds: f64,
    input: [usize; 3],
    frontend: &'static str,
    end_to_end: LatencyStats,
    inference_only: LatencyStats,
}

fn bench(config: &RunConfig, args: BenchArgs) -> CliResult<()> {
    let checkpoint = required(args.checkpoint, &config.paths.checkpoint, "checkpoint")?;
    let (model, _) = load_checkpoint(&checkpoint)?;
    let [_, h, w] = model.input_shape();
    let mut features = config.features.clone();
    features.height = h;
    features.width = w;
    let extractor = FeatureExtractor::new(features)?;

    let clip = read_wav(&args.clip)?;
    let window = segment(&clip, config.segment_seconds, None)?
        .into_iter()
        .next()
        .ok_or(Error::Empty("clip shorter than one analysis window"))?;

    let classify = |model: &Model, image: &FeatureImage| -> uatr::Result<Vec<f64>> {
        let x = Tensor::new(vec![3, image.height, image.width], image.to_chw())?;
        Ok(predict_batch(model, &[&x])?.remove(0))
    };
    let end_to_end = latency_benchmark(
        || {
            let image = extractor.extract(&window)?;
            classify(&model, &image).map(drop)
        },
        args.iterations,
    )?;
    let image = extractor.extract(&window)?;
    let inference_only = latency_benchmark(|| classify(&model, &image).map(drop), args.iterations)?;

    let report = BenchReport {
        window_seconds: config.segment_seconds,
        input: model.input_shape(),
        frontend: extractor.config().frontend.name(),
        end_to_end,
        inference_only,
    };
    let json = serde_json::to_string_pretty(&report).map_err(Error::from)?;
    println!("{json}");
    if let Some(path) = args.out {
        fs::write(&path, format!("{json}\n")).map_err(|e| io_err(&path, e))?;
    }
    Ok(())
}

fn export_image(args: ExportArgs) -> CliResult<()> {
    let stem = match args.feature.extension() {
        Some(x) if x == "json" || x == "f32" => args.feature.with_extension(""),
        _ => args.feature.clone(),
    };
    let image = FeatureImage::load(&stem)?;
    let file = fs::File::create(&args.out).map_err(|e| io_err(&args.out, e))?;
    let mut out = std::io::BufWriter::new(file);
    image.write_pgm(&mut out).map_err(|e| io_err(&args.out, e))?;
    std::io::Write::flush(&mut out).map_err(|e| io_err(&args.out, e))?;
    println!(
        "{}x{} image written to {}",
        image.width,
        image.height,
        args.out.display()
    );
    Ok(())
}
