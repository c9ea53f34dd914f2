//! Command-line interface: fetch-data, train, evaluate, colorize and grid.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::checkpoint::{Checkpoint, Model};
use crate::classifier::Variant;
use crate::color::{lab_to_rgb, rgb_to_lab, LabImage, RgbImage, DEFAULT_TEMPERATURE};
use crate::data::{data_root, load_cifar10, DatasetSpec, Split};
use crate::error::{Error, Result};
use crate::fetch::{fetch_cifar10, FetchOptions, FetchOutcome, Source, ARCHIVE_MD5, ARCHIVE_URL};
use crate::metrics::{self, MetricReport, DEFAULT_EPSILONS};
use crate::render::{comparison_row, read_png, render_grid, write_png};
use crate::train::{train, Arch, ModelKind, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "colorlab", version, about = "Automatic colorization of grayscale images")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Download, verify and unpack the CIFAR-10 binary batches.
    FetchData(FetchArgs),
    /// Train a classifier or GAN.
    Train(TrainArgs),
    /// Score checkpoints on a dataset split.
    Evaluate(EvalArgs),
    /// Colorize one PNG.
    Colorize(ColorizeArgs),
    /// Render a comparison grid: grayscale, each model, ground truth.
    Grid(GridArgs),
}

#[derive(Debug, Args)]
pub struct FetchArgs {
    /// Destination directory (COLORLAB_DATA_DIR overrides).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Use a local copy of the archive instead of downloading.
    #[arg(long)]
    pub archive: Option<PathBuf>,
    #[arg(long, default_value = ARCHIVE_URL)]
    pub url: String,
    #[arg(long, default_value = ARCHIVE_MD5)]
    pub md5: String,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// `classifier` or `gan`.
    #[arg(long)]
    pub model: Option<ModelKind>,
    /// Classifier output head: `bilinear`, `deconv` or `downsample`.
    #[arg(long)]
    pub variant: Option<Variant>,
    /// `full` or `small`.
    #[arg(long)]
    pub arch: Option<Arch>,
    /// Flat `key = value` config; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Per-class cap on the training split.
    #[arg(long)]
    pub subset: Option<usize>,
    #[arg(long)]
    pub epochs: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long, default_value = "runs/latest")]
    pub out: PathBuf,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoints to score, one table row each.
    #[arg(long = "checkpoint")]
    pub checkpoints: Vec<PathBuf>,
    /// Also score the zero-chroma grayscale baseline.
    #[arg(long)]
    pub baseline: bool,
    /// Score PNGs saved by an earlier `--save` run instead of a model.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub split: SplitArg,
    /// Per-class cap on the split.
    #[arg(long)]
    pub subset: Option<usize>,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    pub batch: usize,
    /// Write each report as `<out>/<label>.{txt,csv}`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Save colorized images as `<save>/<label>/<index>.png`.
    #[arg(long)]
    pub save: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ColorizeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    /// Model columns, in order.
    #[arg(long = "checkpoint")]
    pub checkpoints: Vec<PathBuf>,
    /// Image indices into the split, one row each.
    #[arg(long, value_delimiter = ',', required = true)]
    pub ids: Vec<usize>,
    #[arg(long, default_value = "test")]
    pub split: SplitArg,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    pub scale: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Test => Split::Test,
        }
    }
}

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Dataset { .. } | Error::Network(_) => EXIT_DATA,
        Error::Diverged { .. } => EXIT_DIVERGED,
        _ => EXIT_USAGE,
    }
}

/// Parses `args` and runs the command, returning the exit code. Output goes
/// to stdout, diagnostics to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::FetchData(a) => cmd_fetch(a),
        Command::Train(a) => cmd_train(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Colorize(a) => cmd_colorize(a),
        Command::Grid(a) => cmd_grid(a),
    }
}

fn cmd_fetch(a: FetchArgs) -> Result<()> {
    let root = data_root(a.out.as_deref());
    let opts = FetchOptions {
        source: a.archive.map_or(Source::Url(a.url), Source::File),
        md5: a.md5,
    };
    let msg = match fetch_cifar10(&root, &opts)? {
        FetchOutcome::AlreadyPresent => "already present and verified",
        FetchOutcome::ManifestWritten => "present; checksum manifest written",
        FetchOutcome::Downloaded => "downloaded and verified",
    };
    println!("{}: {msg}", root.display());
    Ok(())
}

/// Builds the training config from an optional file plus flag overrides.
pub fn train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = match &a.config {
        Some(p) => TrainConfig::parse(&std::fs::read_to_string(p)?)?,
        None => TrainConfig::new(a.model.ok_or_else(|| Error::Config("--model or --config is required".into()))?),
    };
    if let Some(m) = a.model {
        cfg.set("model", m.name())?;
    }
    if let Some(v) = a.variant {
        cfg.variant = v;
    }
    if let Some(v) = a.arch {
        cfg.arch = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.subset {
        cfg.subset = Some(v);
    }
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = &a.data_dir {
        cfg.data_dir = Some(v.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let cfg = train_config(&a)?;
    if let Some(p) = &a.resume {
        if !p.is_file() {
            return Err(Error::Checkpoint(format!("no checkpoint at {}", p.display())));
        }
    }
    let out = train(&cfg, &a.out, a.resume.as_deref())?;
    println!("steps: {}", out.steps);
    println!("final checkpoint: {}", out.final_checkpoint.display());
    println!("run log: {}", out.log_path.display());
    if let Some(r) = &out.final_report {
        println!("{}", r.table_header());
        println!("{}", r.table_row("final"));
        if let (Some(b), Some(epoch)) = (&out.best_report, out.best_epoch) {
            println!("{}", b.table_row(&format!("best@{epoch}")));
        }
    }
    Ok(())
}

fn load_split(split: Split, cap: Option<usize>, data_dir: Option<&Path>) -> Result<Vec<RgbImage>> {
    let root = data_root(data_dir);
    Ok(load_cifar10(&DatasetSpec::new(root, split).with_cap(cap))?.iter().map(|s| s.image()).collect())
}

fn gray_of(img: &RgbImage) -> Result<LabImage> {
    LabImage::grayscale(img.height(), img.width(), rgb_to_lab(img).l().to_vec())
}

/// The zero-chroma colorizer: every prediction keeps only lightness.
pub fn grayscale_baseline(chunk: &[RgbImage]) -> Result<Vec<RgbImage>> {
    chunk.iter().map(|img| Ok(lab_to_rgb(&gray_of(img)?))).collect()
}

fn checkpoint_label(path: &Path, model: &Model) -> String {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
    format!("{}:{stem}", model.kind())
}

fn cmd_evaluate(a: EvalArgs) -> Result<()> {
    if a.checkpoints.is_empty() && !a.baseline && a.predictions.is_none() {
        return Err(Error::Config("give --checkpoint, --baseline or --predictions".into()));
    }
    let mut ckpts = Vec::new();
    for p in &a.checkpoints {
        let c = Checkpoint::load(p)?;
        ckpts.push((checkpoint_label(p, &c.model), c));
    }
    let images = load_split(a.split.into(), a.subset, a.data_dir.as_deref())?;
    if images.is_empty() {
        return Err(Error::dataset(data_root(a.data_dir.as_deref()), "split is empty"));
    }
    let mut rows: Vec<(String, MetricReport)> = Vec::new();
    let save = |label: &str, offset: usize, preds: &[RgbImage]| -> Result<()> {
        if let Some(dir) = &a.save {
            for (i, p) in preds.iter().enumerate() {
                write_png(p, &dir.join(sanitize(label)).join(format!("{:05}.png", offset + i)))?;
            }
        }
        Ok(())
    };
    if a.baseline {
        let mut done = 0;
        let r = metrics::evaluate(&images, &DEFAULT_EPSILONS, a.batch, |chunk| {
            let preds = grayscale_baseline(chunk)?;
            save("grayscale", done, &preds)?;
            done += chunk.len();
            Ok(preds)
        })?;
        rows.push(("grayscale".into(), r));
    }
    for (label, ckpt) in &mut ckpts {
        if ckpt.image_size != images[0].height() {
            return Err(Error::shape(format!("{label} takes {0}x{0} images", ckpt.image_size)));
        }
        let mut done = 0;
        let r = metrics::evaluate(&images, &DEFAULT_EPSILONS, a.batch, |chunk| {
            let grays = chunk.iter().map(gray_of).collect::<Result<Vec<_>>>()?;
            let preds = ckpt.model.colorize_batch(&grays, DEFAULT_TEMPERATURE)?;
            save(label, done, &preds)?;
            done += chunk.len();
            Ok(preds)
        })?;
        rows.push((label.clone(), r));
    }
    if let Some(dir) = &a.predictions {
        let mut done = 0;
        let r = metrics::evaluate(&images, &DEFAULT_EPSILONS, a.batch, |chunk| {
            let preds = (done..done + chunk.len())
                .map(|i| read_png(&dir.join(format!("{i:05}.png"))))
                .collect::<Result<Vec<_>>>()?;
            done += chunk.len();
            Ok(preds)
        })?;
        rows.push((format!("saved:{}", dir.display()), r));
    }
    println!("{}", rows[0].1.table_header());
    for (label, r) in &rows {
        println!("{}", r.table_row(label));
    }
    println!("images: {}", rows[0].1.n_images);
    if let Some(dir) = &a.out {
        for (label, r) in &rows {
            r.write(dir, &sanitize(label))?;
        }
    }
    Ok(())
}

fn sanitize(label: &str) -> String {
    label.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

fn cmd_colorize(a: ColorizeArgs) -> Result<()> {
    let mut ckpt = Checkpoint::load(&a.checkpoint)?;
    let input = read_png(&a.input).map_err(|e| Error::invalid(format!("{}: {e}", a.input.display())))?;
    let out = ckpt.colorize(&gray_of(&input)?)?;
    write_png(&out, &a.output)?;
    println!("{}", a.output.display());
    Ok(())
}

fn cmd_grid(a: GridArgs) -> Result<()> {
    let mut models = Vec::new();
    for p in &a.checkpoints {
        let c = Checkpoint::load(p)?;
        models.push(c);
    }
    let max_id = *a.ids.iter().max().expect("clap requires ids");
    let split: Split = a.split.into();
    let images = load_split(split, None, a.data_dir.as_deref())?;
    if max_id >= images.len() {
        return Err(Error::invalid(format!("image id {max_id} is out of range (split has {})", images.len())));
    }
    let mut labels = vec!["gray".to_string()];
    labels.extend(models.iter().map(|m| m.model.kind().to_string()));
    labels.push("truth".into());
    let mut rows = Vec::new();
    for &id in &a.ids {
        let truth = &images[id];
        let gray = gray_of(truth)?;
        let outputs = models.iter_mut().map(|m| m.colorize(&gray)).collect::<Result<Vec<_>>>()?;
        rows.push(comparison_row(truth, outputs)?);
    }
    let grid = render_grid(&rows, &labels, a.scale)?;
    write_png(&grid, &a.out)?;
    println!("{} ({} rows x {} columns)", a.out.display(), rows.len(), labels.len());
    Ok(())
}
