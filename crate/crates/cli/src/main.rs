//! `bleedseg` command-line tool.

use std::ffi::OsStr;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bleedseg::color::{build_channel_luts, rank_channels};
use bleedseg::eval::{cross_validate, evaluate_model, write_reports, CvConfig, ReportTable};
use bleedseg::format::{load_dataset, load_model, save_dataset, save_model};
use bleedseg::image::{overlay, write_atomic};
use bleedseg::mfree::{cost_report, AnyModel};
use bleedseg::patch::{build_balanced_training_set, BalanceConfig, DEFAULT_POSITIVE_CAP};
use bleedseg::quant::{qat_train, quantize_model, DEFAULT_LUT_RANGE, DEFAULT_TERNARY_THRESHOLD};
use bleedseg::synth::{self, SyntheticSpec};
use bleedseg::{
    color, mlp, rng, Activation, Dataset, Error, Exec, LabelMask, MlpModel, QuantMode, RgbImage, TrainConfig,
    DEFAULT_PATCH_SIZE,
};
use clap::{Args, Parser, Subcommand, ValueEnum};

const EXIT_USAGE: u8 = 1;
const EXIT_IO: u8 = 2;
const EXIT_DATA: u8 = 3;

const IMAGE_EXTS: [&str; 4] = ["png", "ppm", "pgm", "pnm"];

#[derive(Parser, Debug)]
#[command(name = "bleedseg", version, about = "Bleeding segmentation for capsule endoscopy frames")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a seeded synthetic corpus to <out>/images and <out>/masks.
    GenSynth(GenSynthArgs),
    /// Rank the candidate color channels by bleeding/non-bleeding separability.
    AnalyzeChannels(DataArgs),
    /// Build a class-balanced patch dataset file.
    BuildDataset(BuildDatasetArgs),
    /// Train a model (full precision, or quantization-aware for quantized modes).
    Train(TrainArgs),
    /// Quantize a full-precision model, optionally fine-tuning with QAT.
    Quantize(QuantizeArgs),
    /// Segment frames and write predicted masks.
    Segment(SegmentArgs),
    /// Score a model against ground-truth masks.
    Evaluate(EvaluateArgs),
    /// k-fold cross-validation of full precision against a quantized mode.
    Crossval(CrossvalArgs),
    /// Weight storage and per-inference operation counts.
    CostReport(CostReportArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Ppm,
    Png,
}

#[derive(Args, Debug)]
struct GenSynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = SyntheticSpec::default().count)]
    count: usize,
    #[arg(long, default_value_t = SyntheticSpec::default().width)]
    width: usize,
    #[arg(long, default_value_t = SyntheticSpec::default().height)]
    height: usize,
    #[arg(long, default_value_t = SyntheticSpec::default().blobs.0)]
    min_blobs: usize,
    #[arg(long, default_value_t = SyntheticSpec::default().blobs.1)]
    max_blobs: usize,
    /// Target share of bleeding pixels per image.
    #[arg(long, default_value_t = SyntheticSpec::default().bleeding_fraction)]
    fraction: f64,
    #[arg(long, value_enum, default_value_t = Format::Ppm)]
    format: Format,
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Directory of frames.
    #[arg(long)]
    images: PathBuf,
    /// Directory of masks, paired with frames by file stem.
    #[arg(long)]
    masks: PathBuf,
}

#[derive(Args, Debug)]
struct BuildDatasetArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_PATCH_SIZE)]
    patch_size: usize,
}

#[derive(Args, Debug)]
struct Hyper {
    #[arg(long, default_value_t = TrainConfig::default().learning_rate)]
    lr: f64,
    #[arg(long, default_value_t = TrainConfig::default().epochs)]
    epochs: usize,
    #[arg(long, default_value_t = TrainConfig::default().batch_size)]
    batch: usize,
    #[arg(long, default_value_t = DEFAULT_TERNARY_THRESHOLD)]
    ternary_threshold: f64,
}

impl Hyper {
    fn config(&self, seed: u64, mode: QuantMode) -> TrainConfig {
        TrainConfig {
            learning_rate: self.lr,
            epochs: self.epochs,
            batch_size: self.batch,
            seed,
            quantization_mode: mode,
        }
    }
}

/// Training data: either a dataset file or an image/mask directory pair.
#[derive(Args, Debug)]
struct TrainingData {
    #[arg(long, conflicts_with_all = ["images", "masks"])]
    dataset: Option<PathBuf>,
    #[arg(long, requires = "masks")]
    images: Option<PathBuf>,
    #[arg(long, requires = "images")]
    masks: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_PATCH_SIZE)]
    patch_size: usize,
}

impl TrainingData {
    fn given(&self) -> bool {
        self.dataset.is_some() || self.images.is_some()
    }

    fn load(&self, seed: u64) -> bleedseg::Result<Dataset> {
        if let Some(path) = &self.dataset {
            return load_dataset(path);
        }
        match (&self.images, &self.masks) {
            (Some(images), Some(masks)) => {
                let (imgs, masks) = load_pairs(images, masks)?;
                build_balanced_training_set(&imgs, &masks, balance(self.patch_size, seed), Exec::default())
            }
            _ => Err(Error::InvalidArgument(
                "training data needs --dataset or --images with --masks".into(),
            )),
        }
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    data: TrainingData,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value = "full", value_parser = parse_mode)]
    mode: QuantMode,
    #[command(flatten)]
    hyper: Hyper,
}

#[derive(Args, Debug)]
struct QuantizeArgs {
    /// Full-precision model to quantize (or to start QAT from).
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value = "ternary", value_parser = parse_mode)]
    mode: QuantMode,
    #[command(flatten)]
    data: TrainingData,
    #[command(flatten)]
    hyper: Hyper,
}

#[derive(Args, Debug)]
struct SegmentArgs {
    #[arg(long)]
    model: PathBuf,
    /// A frame or a directory of frames.
    #[arg(long)]
    images: PathBuf,
    /// Output directory for `<stem>.png` masks.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_PATCH_SIZE)]
    patch_size: usize,
    /// Also write `<stem>_overlay.png` with predicted pixels tinted.
    #[arg(long)]
    overlay: bool,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = DEFAULT_PATCH_SIZE)]
    patch_size: usize,
    /// Write the key=value report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CrossvalArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = CvConfig::default().k)]
    k: usize,
    #[arg(long, default_value_t = DEFAULT_PATCH_SIZE)]
    patch_size: usize,
    /// Quantized variant compared against full precision; `full` alone
    /// skips the comparison.
    #[arg(long, default_value = "ternary", value_parser = parse_mode)]
    mode: QuantMode,
    #[command(flatten)]
    hyper: Hyper,
    /// Write the key=value report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CostReportArgs {
    /// Model to report on; the default-shape network is used when absent.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_TERNARY_THRESHOLD)]
    ternary_threshold: f64,
    /// Seed for the default-shape network's initialization.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn parse_mode(s: &str) -> Result<QuantMode, Error> {
    s.parse()
}

fn balance(patch_size: usize, seed: u64) -> BalanceConfig {
    BalanceConfig {
        patch_size,
        seed,
        positive_cap: DEFAULT_POSITIVE_CAP,
    }
}

fn has_image_ext(path: &Path) -> bool {
    path.extension()
        .and_then(OsStr::to_str)
        .is_some_and(|e| IMAGE_EXTS.contains(&e.to_ascii_lowercase().as_str()))
}

fn stem_of(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Image files in `dir`, sorted by name.
fn list_images(dir: &Path) -> bleedseg::Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry
            .map_err(|e| Error::Io {
                path: dir.to_path_buf(),
                source: e,
            })?
            .path();
        if path.is_file() && has_image_ext(&path) {
            files.push(path);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(Error::InvalidData(format!("no images found in {}", dir.display())));
    }
    Ok(files)
}

/// Loads frames and their masks, paired by file stem.
fn load_pairs(images: &Path, masks: &Path) -> bleedseg::Result<(Vec<RgbImage>, Vec<LabelMask>)> {
    let frames = list_images(images)?;
    let mask_files = list_images(masks)?;
    let mut imgs = Vec::with_capacity(frames.len());
    let mut labels = Vec::with_capacity(frames.len());
    for frame in &frames {
        let stem = stem_of(frame);
        let mask = mask_files
            .iter()
            .find(|m| stem_of(m) == stem)
            .ok_or_else(|| Error::InvalidData(format!("no mask for {} in {}", stem, masks.display())))?;
        let img = RgbImage::load(frame)?;
        let m = LabelMask::load(mask)?;
        if !m.same_shape(img.width(), img.height()) {
            return Err(Error::DimensionMismatch(format!(
                "{} is {}x{} but its mask is {}x{}",
                frame.display(),
                img.width(),
                img.height(),
                m.width(),
                m.height()
            )));
        }
        imgs.push(img);
        labels.push(m);
    }
    Ok((imgs, labels))
}

fn create_dir(dir: &Path) -> bleedseg::Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn write_text(path: &Path, text: &str) -> bleedseg::Result<()> {
    write_atomic(path, text.as_bytes())
}

fn gen_synth(args: GenSynthArgs) -> bleedseg::Result<()> {
    let spec = SyntheticSpec {
        count: args.count,
        width: args.width,
        height: args.height,
        blobs: (args.min_blobs, args.max_blobs),
        bleeding_fraction: args.fraction,
        seed: args.seed,
        ..SyntheticSpec::default()
    };
    let format = match args.format {
        Format::Ppm => synth::ImageFormat::Ppm,
        Format::Png => synth::ImageFormat::Png,
    };
    synth::write_corpus(&args.out, &spec, format, Exec::default())?;
    println!("wrote {} image/mask pairs to {}", spec.count, args.out.display());
    Ok(())
}

fn analyze_channels(args: DataArgs) -> bleedseg::Result<()> {
    let (imgs, masks) = load_pairs(&args.images, &args.masks)?;
    let luts = build_channel_luts(&imgs, &masks, Exec::default())?;
    let ranked = rank_channels(&luts)?;
    println!("{:>4}  {:<10} {:>10}", "rank", "channel", "score");
    for (i, (channel, score)) in ranked.iter().enumerate() {
        println!("{:>4}  {:<10} {:>10.6}", i + 1, channel.name(), score);
    }
    Ok(())
}

fn build_dataset(args: BuildDatasetArgs) -> bleedseg::Result<()> {
    let (imgs, masks) = load_pairs(&args.data.images, &args.data.masks)?;
    let ds = build_balanced_training_set(&imgs, &masks, balance(args.patch_size, args.seed), Exec::default())?;
    save_dataset(&args.out, &ds)?;
    let (neg, pos) = ds.class_counts();
    println!("wrote {} samples ({pos} bleeding, {neg} non-bleeding) to {}", ds.len(), args.out.display());
    Ok(())
}

fn print_history(history: &[f64]) {
    if let (Some(first), Some(last)) = (history.first(), history.last()) {
        println!("loss: epoch 1 {first:.6}, epoch {} {last:.6}", history.len());
    }
}

fn train(args: TrainArgs) -> bleedseg::Result<()> {
    let ds = args.data.load(args.seed)?;
    let mut sizes = vec![ds.feature_len()];
    sizes.extend_from_slice(&bleedseg::DEFAULT_LAYER_SIZES[1..]);
    let init = MlpModel::init(&sizes, Activation::Sigmoid, args.seed)?;
    let config = args.hyper.config(args.seed, args.mode);
    let model = if args.mode.is_quantized() {
        let outcome = qat_train(&init, &ds, &config, args.hyper.ternary_threshold, DEFAULT_LUT_RANGE)?;
        print_history(&outcome.history);
        AnyModel::Quantized(outcome.quantized)
    } else {
        let (model, history) = mlp::train(&init, &ds, &config)?;
        print_history(&history);
        AnyModel::Full(model)
    };
    save_model(&args.out, &model)?;
    println!("wrote {} model to {}", args.mode, args.out.display());
    Ok(())
}

fn load_full(path: &Path) -> bleedseg::Result<MlpModel> {
    match load_model(path)? {
        AnyModel::Full(m) => Ok(m),
        AnyModel::Quantized(_) => Err(Error::InvalidData(format!(
            "{} is already quantized; a full-precision model is needed",
            path.display()
        ))),
    }
}

fn quantize(args: QuantizeArgs) -> bleedseg::Result<()> {
    if !args.mode.is_quantized() {
        return Err(Error::InvalidArgument("quantize needs a quantized --mode".into()));
    }
    let full = load_full(&args.model)?;
    let quantized = if args.data.given() {
        let ds = args.data.load(args.seed)?;
        let config = args.hyper.config(args.seed, args.mode);
        let outcome = qat_train(&full, &ds, &config, args.hyper.ternary_threshold, DEFAULT_LUT_RANGE)?;
        print_history(&outcome.history);
        outcome.quantized
    } else {
        let mut rng = rng::derived(args.seed, rng::STREAM_QUANT, 0);
        quantize_model(&full, args.mode, args.hyper.ternary_threshold, DEFAULT_LUT_RANGE, &mut rng)?
    };
    println!(
        "{} of {} weights are zero",
        quantized.zero_weight_count(),
        quantized.weight_count()
    );
    save_model(&args.out, &AnyModel::Quantized(quantized))?;
    println!("wrote {} model to {}", args.mode, args.out.display());
    Ok(())
}

fn segment(args: SegmentArgs) -> bleedseg::Result<()> {
    let model = load_model(&args.model)?;
    let frames = if args.images.is_dir() {
        list_images(&args.images)?
    } else {
        vec![args.images.clone()]
    };
    create_dir(&args.out)?;
    let path_kind = match model {
        AnyModel::Full(_) => "full-precision (exact sigmoid)",
        AnyModel::Quantized(_) => "quantized (multiplication-free)",
    };
    println!("model: {path_kind}");
    for frame in &frames {
        let img = RgbImage::load(frame)?;
        let planes = color::extract_feature_planes(&img);
        let seg = model.segment(&planes, args.patch_size, Exec::default())?;
        let stem = stem_of(frame);
        seg.mask.save(&args.out.join(format!("{stem}.png")))?;
        if args.overlay {
            overlay(&img, &seg.mask)?.save(&args.out.join(format!("{stem}_overlay.png")))?;
        }
        let ops = seg.op_counts;
        println!(
            "{stem}: {} bleeding pixels; mul {} add {} sub {} lut {}",
            seg.mask.count_positive(),
            ops.multiplications,
            ops.additions,
            ops.subtractions,
            ops.lut_lookups
        );
    }
    Ok(())
}

fn model_mode(model: &AnyModel) -> QuantMode {
    match model {
        AnyModel::Full(_) => QuantMode::None,
        AnyModel::Quantized(_) => QuantMode::Ternary,
    }
}

fn evaluate(args: EvaluateArgs) -> bleedseg::Result<()> {
    let model = load_model(&args.model)?;
    let (imgs, masks) = load_pairs(&args.data.images, &args.data.masks)?;
    let report = evaluate_model(&model, &imgs, &masks, args.patch_size, model_mode(&model), Exec::default())?;
    let reports = [report];
    print!("{}", ReportTable(&reports));
    if let Some(out) = &args.out {
        write_text(out, &write_reports(&reports))?;
    }
    Ok(())
}

fn crossval(args: CrossvalArgs) -> bleedseg::Result<()> {
    let (imgs, masks) = load_pairs(&args.data.images, &args.data.masks)?;
    let mut modes = vec![QuantMode::None];
    if args.mode.is_quantized() {
        modes.push(args.mode);
    }
    let cfg = CvConfig {
        k: args.k,
        seed: args.seed,
        patch_size: args.patch_size,
        train: args.hyper.config(args.seed, QuantMode::None),
        modes,
        ternary_threshold: args.hyper.ternary_threshold,
        ..CvConfig::default()
    };
    let reports = cross_validate(&imgs, &masks, &cfg, Exec::default())?;
    let mut summary = String::new();
    let _ = writeln!(summary, "{}-fold cross-validation over {} images", cfg.k, imgs.len());
    print!("{summary}{}", ReportTable(&reports));
    if let Some(out) = &args.out {
        write_text(out, &write_reports(&reports))?;
    }
    Ok(())
}

fn cost(args: CostReportArgs) -> bleedseg::Result<()> {
    let mut rng = rng::derived(args.seed, rng::STREAM_QUANT, 0);
    let (full, quantized) = match args.model.as_deref().map(load_model).transpose()? {
        Some(AnyModel::Full(m)) => {
            let q = quantize_model(&m, QuantMode::Ternary, args.ternary_threshold, DEFAULT_LUT_RANGE, &mut rng)?;
            (m, q)
        }
        Some(AnyModel::Quantized(q)) => {
            // only the shape of the full-precision counterpart matters here
            let m = MlpModel::init(&q.layer_sizes(), q.activation(), args.seed)?;
            (m, q)
        }
        None => {
            let m = MlpModel::init(&bleedseg::DEFAULT_LAYER_SIZES, Activation::Sigmoid, args.seed)?;
            let q = quantize_model(&m, QuantMode::Ternary, args.ternary_threshold, DEFAULT_LUT_RANGE, &mut rng)?;
            (m, q)
        }
    };
    print!("{}", cost_report(&full, &quantized)?);
    Ok(())
}

fn run(command: Command) -> bleedseg::Result<()> {
    match command {
        Command::GenSynth(a) => gen_synth(a),
        Command::AnalyzeChannels(a) => analyze_channels(a),
        Command::BuildDataset(a) => build_dataset(a),
        Command::Train(a) => train(a),
        Command::Quantize(a) => quantize(a),
        Command::Segment(a) => segment(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Crossval(a) => crossval(a),
        Command::CostReport(a) => cost(a),
    }
}

fn exit_code(err: &Error) -> u8 {
    if err.is_io() {
        EXIT_IO
    } else if matches!(err, Error::InvalidArgument(_)) {
        EXIT_USAGE
    } else {
        EXIT_DATA
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE),
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
