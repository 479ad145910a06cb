//! Command-line front end: one verb per invocation, settings layered as
//! built-in defaults, then an optional `key = value` config file, then flags.
//!
//! Exit status: 0 success, 1 usage or configuration error, 2 data error
//! (unreadable or malformed files, shape problems), 3 numerical failure
//! (non-finite loss, failed gradient check).

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::arch::{probe_dilated_bottleneck, probe_single_conv, receptive_field_probe, Checkpoint, Model, NetworkConfig, Variant};
use crate::autodiff::gradcheck::{run_suite, GRADCHECK_TOLERANCE};
use crate::error::{Error, Result};
use crate::io::{
    generate_phantom, image_path, label_path, list_cases, load_case, make_split, read_volume, save_case, write_volume,
    Case, DatasetSplit, PhantomParams, WriteOptions,
};
use crate::metrics::{evaluate_tensors, MetricsReport, DEFAULT_THRESHOLD};
use crate::nn::{conv3d, ConvGeometry};
use crate::preprocess::{parse_key_values, preprocess_case, PreprocessParams};
use crate::tensor::Tensor;
use crate::train::{cross_validate, train_fold, AdamConfig, Sample, TrainConfig, TrainState, LAST_CHECKPOINT};
use crate::volume::{Volume, VolumeKind};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Relative dataset directories are resolved against this directory when set.
pub const DATA_ROOT_ENV: &str = "UNETDR_DATA_ROOT";

const TRAIN_KEYS: [&str; 9] = [
    "variant",
    "base_channels",
    "levels",
    "epochs",
    "batch_size",
    "lr",
    "checkpoint_every",
    "patience",
    "threshold",
];
const OTHER_KEYS: [&str; 3] = ["seed", "k", "test_fraction"];

#[derive(Parser, Debug)]
#[command(name = "unetdr", version, about = "Volumetric segmentation with a dilated-bottleneck 3D U-Net")]
struct Cli {
    /// Seed for every random choice (phantoms, splits, initialization, shuffling)
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for per-case work in preprocess and evaluate
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Config file of `key = value` lines; command-line flags take precedence
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// CLAHE, normalize, crop and resample every case in a directory
    Preprocess(PreprocessArgs),
    /// Generate seeded synthetic cases with known masks
    Phantom(PhantomArgs),
    /// Write a test/fold split manifest for a dataset directory
    Split(SplitArgs),
    /// Train one fold of a split
    Train(TrainArgs),
    /// Train every fold of a split and score the held-out test cases
    Cv(CvArgs),
    /// Score a checkpoint on labelled cases
    Evaluate(EvaluateArgs),
    /// Write a binary mask for one volume
    Predict(PredictArgs),
    /// Run the finite-difference gradient suite
    Gradcheck,
    /// Measure receptive fields by single-voxel perturbation
    Rfprobe(RfprobeArgs),
    /// Print per-layer and total parameter counts
    Paramcount(ParamcountArgs),
}

#[derive(Args, Debug)]
struct PreprocessArgs {
    /// Directory of `<id>_image.nrrd` files (labels `<id>_label.nrrd` optional)
    #[arg(long, value_name = "DIR")]
    input: PathBuf,
    /// Destination directory; must differ from the input
    #[arg(long, value_name = "DIR")]
    output: PathBuf,
    /// CLAHE tile grid per slice, `YxX` [default: 8x8]
    #[arg(long)]
    tiles: Option<String>,
    /// CLAHE clip factor relative to a uniform histogram [default: 2.0]
    #[arg(long)]
    clip_limit: Option<String>,
    /// CLAHE histogram bins [default: 256]
    #[arg(long)]
    bins: Option<String>,
    /// Centre-crop target `DxHxW`, or `none` [default: 88x400x400]
    #[arg(long)]
    crop: Option<String>,
    /// Resample target `DxHxW`, or `none` [default: 80x256x256]
    #[arg(long)]
    resample: Option<String>,
}

#[derive(Args, Debug)]
struct PhantomArgs {
    /// Number of cases
    #[arg(long)]
    n: usize,
    /// Destination directory
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Volume extents, `N` or `DxHxW` (each >= 16)
    #[arg(long, default_value = "32")]
    extent: String,
    /// Standard deviation of the additive Gaussian noise
    #[arg(long)]
    noise_sigma: Option<f64>,
    /// Peak amplitude of the multiplicative bias field
    #[arg(long)]
    bias_amplitude: Option<f64>,
}

#[derive(Args, Debug)]
struct SplitArgs {
    /// Dataset directory
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    /// Manifest file to write
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Number of cross-validation folds [default: 5]
    #[arg(long)]
    k: Option<usize>,
    /// Fraction of cases held out for testing [default: 0.2]
    #[arg(long)]
    test_fraction: Option<f64>,
}

#[derive(Args, Debug, Default)]
struct TrainOpts {
    /// Network variant: baseline or unet_dr [default: unet_dr]
    #[arg(long)]
    variant: Option<Variant>,
    /// Channels of the first encoder block [default: 24]
    #[arg(long)]
    base_channels: Option<usize>,
    /// Encoder levels; spatial extents must be multiples of 2^levels [default: 3]
    #[arg(long)]
    levels: Option<usize>,
    /// Training epochs [default: 30]
    #[arg(long)]
    epochs: Option<usize>,
    /// Cases per optimizer step [default: 1]
    #[arg(long)]
    batch_size: Option<usize>,
    /// Adam learning rate [default: 0.001]
    #[arg(long)]
    lr: Option<f64>,
    /// Checkpoint every N epochs; 0 writes only after the last epoch [default: 1]
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Stop after N epochs without validation improvement; 0 disables [default: 0]
    #[arg(long)]
    patience: Option<usize>,
    /// Probability threshold for foreground [default: 0.5]
    #[arg(long)]
    threshold: Option<f64>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Dataset directory
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    /// Split manifest written by `split`
    #[arg(long, value_name = "FILE")]
    split: PathBuf,
    /// Fold used for validation
    #[arg(long)]
    fold: usize,
    /// Run directory for checkpoints and the training log
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Continue from the run directory's last checkpoint
    #[arg(long)]
    resume: bool,
    #[command(flatten)]
    opts: TrainOpts,
}

#[derive(Args, Debug)]
struct CvArgs {
    /// Dataset directory
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    /// Split manifest written by `split`
    #[arg(long, value_name = "FILE")]
    split: PathBuf,
    /// Output directory (one `fold-i` run directory per fold plus summaries)
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[command(flatten)]
    opts: TrainOpts,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Model checkpoint
    #[arg(long, value_name = "FILE")]
    checkpoint: PathBuf,
    /// Dataset directory
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    /// Restrict to one role of this split manifest
    #[arg(long, value_name = "FILE", requires = "role")]
    split: Option<PathBuf>,
    /// Role within the split: `test`, `fold-i` or `all`
    #[arg(long, requires = "split")]
    role: Option<String>,
    /// Probability threshold for foreground [default: 0.5]
    #[arg(long)]
    threshold: Option<f64>,
    /// Also write the metrics table here
    #[arg(long, value_name = "FILE")]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PredictArgs {
    /// Model checkpoint
    #[arg(long, value_name = "FILE")]
    checkpoint: PathBuf,
    /// Preprocessed intensity volume
    #[arg(long, value_name = "FILE")]
    input: PathBuf,
    /// Mask volume to write (uchar)
    #[arg(long, value_name = "FILE")]
    output: PathBuf,
    /// Probability threshold for foreground [default: 0.5]
    #[arg(long)]
    threshold: Option<f64>,
}

#[derive(Args, Debug)]
struct RfprobeArgs {
    /// Side of the cubic probe input
    #[arg(long, default_value_t = 13)]
    extent: usize,
}

#[derive(Args, Debug)]
struct ParamcountArgs {
    /// baseline, unet_dr or both
    #[arg(long, default_value = "both")]
    variant: String,
    /// Channels of the first encoder block
    #[arg(long, default_value_t = 24)]
    base_channels: usize,
    /// Encoder levels
    #[arg(long, default_value_t = 3)]
    levels: usize,
}

/// Text for stdout and the exit status of a verb that ran to completion.
struct Outcome {
    text: String,
    code: i32,
}

impl From<String> for Outcome {
    fn from(text: String) -> Self {
        Outcome { text, code: EXIT_OK }
    }
}

/// Config file contents: key to (value, line number).
#[derive(Default)]
struct ConfigFile {
    path: PathBuf,
    values: BTreeMap<String, (String, usize)>,
}

impl ConfigFile {
    fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let bad = |msg: String| Error::Config(format!("{}: {msg}", path.display()));
        let mut values = BTreeMap::new();
        for (key, value, line) in parse_key_values(&text).map_err(|e| bad(e.to_string()))? {
            let known = PreprocessParams::KEYS.contains(&key.as_str())
                || TRAIN_KEYS.contains(&key.as_str())
                || OTHER_KEYS.contains(&key.as_str());
            if !known {
                return Err(bad(format!("line {line}: unknown key '{key}'")));
            }
            values.insert(key, (value, line));
        }
        Ok(ConfigFile {
            path: path.to_path_buf(),
            values,
        })
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.values.get(key) {
            None => Ok(None),
            Some((v, line)) => v.parse().map(Some).map_err(|_| {
                Error::Config(format!("{} line {line}: cannot parse {key} = '{v}'", self.path.display()))
            }),
        }
    }

    /// Flag if given, else file value, else `default`.
    fn layer<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T> {
        match flag {
            Some(v) => Ok(v),
            None => Ok(self.get(key)?.unwrap_or(default)),
        }
    }
}

struct Context {
    seed: u64,
    config: ConfigFile,
    data_root: Option<PathBuf>,
}

impl Context {
    fn data_path(&self, p: &Path) -> PathBuf {
        match &self.data_root {
            Some(root) if p.is_relative() => root.join(p),
            _ => p.to_path_buf(),
        }
    }
}

/// Exit status for a library error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_USAGE,
        e if e.is_numerical() => EXIT_NUMERICAL,
        _ => EXIT_DATA,
    }
}

/// Parses `args` (program name first), runs the verb, writes its report to
/// `out` and diagnostics to stderr, and returns the exit status.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{}", e.render());
                    EXIT_OK
                }
                _ => {
                    eprint!("{}", e.render());
                    EXIT_USAGE
                }
            };
        }
    };
    match execute(cli) {
        Ok(outcome) => {
            let _ = out.write_all(outcome.text.as_bytes());
            outcome.code
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn execute(cli: Cli) -> Result<Outcome> {
    if cli.jobs == 0 {
        return Err(Error::Config("--jobs must be >= 1".into()));
    }
    let config = match &cli.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let seed = config.layer(cli.seed, "seed", 0)?;
    let ctx = Context {
        seed,
        config,
        data_root: std::env::var_os(DATA_ROOT_ENV).map(PathBuf::from),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs)
        .build()
        .map_err(|e| Error::Config(format!("--jobs: {e}")))?;
    pool.install(|| match cli.command {
        Command::Preprocess(a) => preprocess(&ctx, &a).map(Outcome::from),
        Command::Phantom(a) => phantom(&ctx, &a).map(Outcome::from),
        Command::Split(a) => split(&ctx, &a).map(Outcome::from),
        Command::Train(a) => train(&ctx, &a).map(Outcome::from),
        Command::Cv(a) => cv(&ctx, &a).map(Outcome::from),
        Command::Evaluate(a) => evaluate(&ctx, &a).map(Outcome::from),
        Command::Predict(a) => predict(&ctx, &a).map(Outcome::from),
        Command::Gradcheck => gradcheck(&ctx),
        Command::Rfprobe(a) => rfprobe(&ctx, &a).map(Outcome::from),
        Command::Paramcount(a) => paramcount(&a).map(Outcome::from),
    })
}

/// Attaches `path` to errors that do not already name a file.
fn in_file(path: &Path, e: Error) -> Error {
    match e {
        Error::Io { .. } | Error::Format { .. } | Error::NonFinite(_) => e,
        other => Error::format(path, other.to_string()),
    }
}

fn parse_extent_arg(flag: &str, s: &str) -> Result<[usize; 3]> {
    let parts: Vec<usize> = s
        .split('x')
        .map(|p| p.trim().parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Config(format!("{flag}: expected N or DxHxW, got '{s}'")))?;
    match parts[..] {
        [n] => Ok([n; 3]),
        [d, h, w] => Ok([d, h, w]),
        _ => Err(Error::Config(format!("{flag}: expected N or DxHxW, got '{s}'"))),
    }
}

fn preprocess(ctx: &Context, a: &PreprocessArgs) -> Result<String> {
    let mut params = PreprocessParams::default();
    for key in PreprocessParams::KEYS {
        if let Some((value, line)) = ctx.config.values.get(key) {
            params.set(key, value).map_err(|e| {
                Error::Config(format!("{} line {line}: {}", ctx.config.path.display(), config_detail(&e)))
            })?;
        }
    }
    let flags = [
        ("tiles", &a.tiles),
        ("clip_limit", &a.clip_limit),
        ("bins", &a.bins),
        ("crop", &a.crop),
        ("resample", &a.resample),
    ];
    for (key, flag) in flags {
        if let Some(value) = flag {
            params
                .set(key, value)
                .map_err(|e| Error::Config(format!("--{}: {}", key.replace('_', "-"), config_detail(&e))))?;
        }
    }
    params.clahe.validate()?;

    let input = ctx.data_path(&a.input);
    let output = ctx.data_path(&a.output);
    let ids = list_cases(&input)?;
    if ids.is_empty() {
        return Err(Error::format(&input, "no *_image.nrrd files"));
    }
    std::fs::create_dir_all(&output).map_err(|e| Error::io(&output, e))?;
    let same = match (input.canonicalize(), output.canonicalize()) {
        (Ok(i), Ok(o)) => i == o,
        _ => false,
    };
    if same {
        return Err(Error::Config(format!(
            "--output {} is the input directory; refusing to overwrite the source volumes",
            output.display()
        )));
    }

    let rows = ids
        .par_iter()
        .map(|id| {
            let src = image_path(&input, id);
            let image = read_volume(&src, VolumeKind::Intensity)?;
            let lab_src = label_path(&input, id);
            let label = if lab_src.exists() {
                Some(read_volume(&lab_src, VolumeKind::Mask)?)
            } else {
                None
            };
            let (img, lab) = preprocess_case(&image, label.as_ref(), &params).map_err(|e| in_file(&src, e))?;
            write_volume(image_path(&output, id), &img, WriteOptions::for_kind(VolumeKind::Intensity))?;
            if let Some(lab) = &lab {
                write_volume(label_path(&output, id), lab, WriteOptions::for_kind(VolumeKind::Mask))?;
            }
            Ok(format!(
                "{id}\t{}\t{}\t{}\n",
                dims(image.extents()),
                dims(img.extents()),
                if lab.is_some() { "label" } else { "-" }
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(format!("case\tinput\toutput\tmask\n{}", rows.concat()))
}

fn config_detail(e: &Error) -> String {
    e.to_string().trim_start_matches("invalid configuration: ").to_string()
}

fn dims(e: [usize; 3]) -> String {
    format!("{}x{}x{}", e[0], e[1], e[2])
}

fn phantom(ctx: &Context, a: &PhantomArgs) -> Result<String> {
    if a.n == 0 {
        return Err(Error::Config("--n must be >= 1".into()));
    }
    let extents = parse_extent_arg("--extent", &a.extent)?;
    let mut params = PhantomParams::default();
    if let Some(s) = a.noise_sigma {
        params.noise_sigma = s;
    }
    if let Some(b) = a.bias_amplitude {
        params.bias_amplitude = b;
    }
    params.validate()?;
    let out = ctx.data_path(&a.out);
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    let mut text = String::from("case\tforeground\n");
    for i in 0..a.n {
        let (image, label) = generate_phantom(rng.next_u64(), extents, &params)?;
        let case = Case {
            id: format!("phantom_{i:03}"),
            image,
            label,
        };
        let _ = writeln!(text, "{}\t{:.4}", case.id, case.label.foreground_fraction());
        save_case(&out, &case)?;
    }
    Ok(text)
}

fn split(ctx: &Context, a: &SplitArgs) -> Result<String> {
    let data = ctx.data_path(&a.data);
    let ids = list_cases(&data)?;
    let k = ctx.config.layer(a.k, "k", 5)?;
    let fraction = ctx.config.layer(a.test_fraction, "test_fraction", 0.2)?;
    let s = make_split(&ids, fraction, k, ctx.seed)?;
    s.save(&a.out)?;
    let sizes: Vec<String> = s.folds.iter().map(|f| f.len().to_string()).collect();
    Ok(format!(
        "{} cases: {} test, folds {}, {} training per fold\n",
        ids.len(),
        s.test_ids.len(),
        sizes.join("/"),
        s.train_ids(0).len()
    ))
}

fn training_settings(ctx: &Context, o: &TrainOpts) -> Result<(NetworkConfig, TrainConfig)> {
    let c = &ctx.config;
    let variant = c.layer(o.variant, "variant", Variant::UnetDr)?;
    let mut net = NetworkConfig::new(variant, c.layer(o.base_channels, "base_channels", 24)?);
    net.levels = c.layer(o.levels, "levels", net.levels)?;
    net.validate()?;
    let defaults = TrainConfig::default();
    let patience = c.layer(o.patience, "patience", 0)?;
    let config = TrainConfig {
        epochs: c.layer(o.epochs, "epochs", defaults.epochs)?,
        batch_size: c.layer(o.batch_size, "batch_size", defaults.batch_size)?,
        seed: ctx.seed,
        adam: AdamConfig {
            lr: c.layer(o.lr, "lr", defaults.adam.lr)?,
            ..defaults.adam
        },
        checkpoint_every: c.layer(o.checkpoint_every, "checkpoint_every", defaults.checkpoint_every)?,
        patience: (patience > 0).then_some(patience),
        threshold: c.layer(o.threshold, "threshold", defaults.threshold)?,
    };
    config.validate()?;
    Ok((net, config))
}

fn load_samples(dir: &Path, ids: &[String]) -> Result<Vec<Sample>> {
    ids.par_iter()
        .map(|id| load_case(dir, id).map(|c| Sample::from_case(&c)))
        .collect()
}

fn train(ctx: &Context, a: &TrainArgs) -> Result<String> {
    let (net, config) = training_settings(ctx, &a.opts)?;
    let split = DatasetSplit::load(ctx.data_path(&a.split))?;
    if a.fold >= split.k() {
        return Err(Error::Config(format!("--fold {} is out of range for a {}-fold split", a.fold, split.k())));
    }
    let data = ctx.data_path(&a.data);
    let train_set = load_samples(&data, &split.train_ids(a.fold))?;
    let val_set = load_samples(&data, split.validation_ids(a.fold))?;
    let state = if a.resume {
        let state = TrainState::resume(&a.out, config.adam)?;
        if state.model.config() != &net {
            return Err(Error::Config(format!(
                "{}: checkpoint network ({} F={} levels={}) differs from the requested one",
                a.out.join(LAST_CHECKPOINT).display(),
                state.model.config().variant.name(),
                state.model.config().base_channels,
                state.model.config().levels
            )));
        }
        state
    } else {
        if a.out.join(LAST_CHECKPOINT).exists() {
            return Err(Error::Config(format!(
                "{} already holds a run; pass --resume or choose another --out",
                a.out.display()
            )));
        }
        TrainState::new(Model::new(net, config.seed.wrapping_add(a.fold as u64))?, config.adam)
    };
    let state = train_fold(state, &train_set, &val_set, &config, Some(&a.out))?;
    let mut text = state.log.to_text();
    if let Some(best) = &state.best {
        let _ = writeln!(
            text,
            "# best epoch {}: val dc {:.4} ji {:.4} ac {:.4}",
            best.epoch, best.scores.dc, best.scores.ji, best.scores.ac
        );
    }
    Ok(text)
}

fn cv(ctx: &Context, a: &CvArgs) -> Result<String> {
    let (net, config) = training_settings(ctx, &a.opts)?;
    let split = DatasetSplit::load(ctx.data_path(&a.split))?;
    let non_empty = std::fs::read_dir(&a.out).is_ok_and(|mut d| d.next().is_some());
    if non_empty {
        return Err(Error::Config(format!("--out {} is not empty; refusing to overwrite", a.out.display())));
    }
    let data = ctx.data_path(&a.data);
    let mut ids = split.test_ids.clone();
    ids.extend(split.folds.iter().flatten().cloned());
    let samples = load_samples(&data, &ids)?;
    let report = cross_validate(&samples, &split, &net, &config, Some(&a.out))?;
    Ok(report.summary_table())
}

fn load_model(path: &Path) -> Result<Model> {
    let ckpt = Checkpoint::load(path)?;
    Model::from_checkpoint(&ckpt).map_err(|e| in_file(path, e))
}

fn evaluate(ctx: &Context, a: &EvaluateArgs) -> Result<String> {
    let threshold = ctx.config.layer(a.threshold, "threshold", DEFAULT_THRESHOLD)?;
    let model = load_model(&a.checkpoint)?;
    let data = ctx.data_path(&a.data);
    let ids = match (&a.split, a.role.as_deref()) {
        (Some(path), Some(role)) => {
            let s = DatasetSplit::load(ctx.data_path(path))?;
            match role {
                "test" => s.test_ids.clone(),
                "all" => s.test_ids.iter().chain(s.folds.iter().flatten()).cloned().collect(),
                other => {
                    let fold = other
                        .strip_prefix("fold-")
                        .and_then(|i| i.parse::<usize>().ok())
                        .filter(|&i| i < s.k())
                        .ok_or_else(|| {
                            Error::Config(format!("--role '{other}': expected test, all or fold-0..fold-{}", s.k() - 1))
                        })?;
                    s.folds[fold].clone()
                }
            }
        }
        _ => list_cases(&data)?,
    };
    if ids.is_empty() {
        return Err(Error::format(&data, "no cases to evaluate"));
    }
    let scores = ids
        .par_iter()
        .map(|id| {
            let case = load_case(&data, id)?;
            let p = model.predict(&case.image.to_tensor()).map_err(|e| in_file(&image_path(&data, id), e))?;
            evaluate_tensors(&case.label.to_tensor(), &p, threshold)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut report = MetricsReport::default();
    for (id, s) in ids.iter().zip(scores) {
        report.push(id.clone(), s);
    }
    let table = report.to_table();
    if let Some(path) = &a.output {
        std::fs::write(path, &table).map_err(|e| Error::io(path, e))?;
    }
    Ok(table)
}

fn predict(ctx: &Context, a: &PredictArgs) -> Result<String> {
    let threshold = ctx.config.layer(a.threshold, "threshold", DEFAULT_THRESHOLD)?;
    let model = load_model(&a.checkpoint)?;
    let image = read_volume(&a.input, VolumeKind::Intensity)?;
    let p = model.predict(&image.to_tensor()).map_err(|e| in_file(&a.input, e))?;
    let mask = Volume::mask_from_probabilities(&p, image.spacing(), threshold)?;
    write_volume(&a.output, &mask, WriteOptions::for_kind(VolumeKind::Mask))?;
    Ok(format!(
        "{}: {} foreground voxels ({:.4})\n",
        a.output.display(),
        mask.data().iter().filter(|&&v| v > 0.5).count(),
        mask.foreground_fraction()
    ))
}

fn gradcheck(ctx: &Context) -> Result<Outcome> {
    let checks = run_suite(ctx.seed)?;
    let mut text = String::from("check\tmax_rel_error\tstatus\n");
    for c in &checks {
        let _ = writeln!(
            text,
            "{}\t{:.3e}\t{}",
            c.name,
            c.max_relative_error,
            if c.passed { "ok" } else { "FAIL" }
        );
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    let _ = writeln!(text, "# {} checks, {failed} failed (tolerance {GRADCHECK_TOLERANCE:e})", checks.len());
    Ok(Outcome {
        text,
        code: if failed == 0 { EXIT_OK } else { EXIT_NUMERICAL },
    })
}

fn rfprobe(ctx: &Context, a: &RfprobeArgs) -> Result<String> {
    if a.extent < 9 {
        return Err(Error::Config(format!("--extent must be >= 9 to contain a d=4 kernel, got {}", a.extent)));
    }
    let mut text = String::from("fragment\textent\n");
    for d in 1..=4 {
        let e = probe_single_conv(d, a.extent, ctx.seed.wrapping_add(d as u64))?;
        let _ = writeln!(text, "conv3x3x3 d={d}\t{}", dims(e));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    let w1 = Tensor::randn(vec![2, 1, 3, 3, 3], 1.0, &mut rng);
    let w2 = Tensor::randn(vec![2, 2, 3, 3, 3], 1.0, &mut rng);
    let stacked = receptive_field_probe(
        |x| {
            let h = conv3d(x, &w1, None, ConvGeometry::same(3, 1))?;
            conv3d(&h, &w2, None, ConvGeometry::same(3, 1))
        },
        1,
        [a.extent; 3],
    )?;
    let _ = writeln!(text, "two stacked conv3x3x3 d=1\t{}", dims(stacked));
    let bottleneck = probe_dilated_bottleneck(&[1, 2, 3, 4], 2, a.extent, ctx.seed)?;
    let _ = writeln!(text, "dilated bottleneck d=1,2,3,4\t{}", dims(bottleneck));
    Ok(text)
}

fn paramcount(a: &ParamcountArgs) -> Result<String> {
    let variants = match a.variant.as_str() {
        "both" => vec![Variant::BaselineUnet, Variant::UnetDr],
        other => vec![other.parse()?],
    };
    let mut text = String::from("variant\tlayer\tparameters\n");
    let mut totals = Vec::new();
    for v in variants {
        let mut net = NetworkConfig::new(v, a.base_channels);
        net.levels = a.levels;
        let model = Model::new(net, 0)?;
        for (layer, n) in model.layer_parameter_counts() {
            let _ = writeln!(text, "{}\t{layer}\t{n}", v.name());
        }
        totals.push((v, model.parameter_count()));
    }
    for (v, n) in totals {
        let _ = writeln!(text, "{}\ttotal\t{n}", v.name());
    }
    Ok(text)
}
