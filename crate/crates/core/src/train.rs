//! Training loops for both models, the flat key=value config format and the
//! scalar run log.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::info;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::{Checkpoint, Model, TrainState};
use crate::classifier::{sparse_loss_and_grad, ClassifierConfig, ClassifierNet, Variant};
use crate::color::{rgb_to_lab, LabImage, RgbImage, DEFAULT_TEMPERATURE};
use crate::data::{self, epoch_permutation, load_cifar10, make_training_pair_classifier, DatasetSpec, Split, IMAGE_SIDE};
use crate::error::{Error, Result};
use crate::gan::{ab_tensor, l_tensor, DiscriminatorConfig, Gan, GeneratorConfig, DEFAULT_LAMBDA};
use crate::metrics::{MetricReport, DEFAULT_EPSILONS};
use crate::nn::{Adam, AdamConfig, Module};

pub const CLASSIFIER_BETAS: (f32, f32) = (0.9, 0.999);
pub const GAN_BETAS: (f32, f32) = (0.5, 0.999);
pub const DEFAULT_BATCH_SIZE: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Classifier,
    Gan,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Classifier => "classifier",
            ModelKind::Gan => "gan",
        }
    }

    pub fn default_epochs(self) -> u64 {
        match self {
            ModelKind::Classifier => 100,
            ModelKind::Gan => 200,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classifier" => Ok(ModelKind::Classifier),
            "gan" => Ok(ModelKind::Gan),
            _ => Err(Error::Config(format!("unknown model {s:?}, expected classifier or gan"))),
        }
    }
}

/// Network size. `Small` shrinks every layer for CPU runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    Full,
    Small,
}

impl Arch {
    pub fn name(self) -> &'static str {
        match self {
            Arch::Full => "full",
            Arch::Small => "small",
        }
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Arch::Full),
            "small" => Ok(Arch::Small),
            _ => Err(Error::Config(format!("unknown arch {s:?}, expected full or small"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub variant: Variant,
    pub arch: Arch,
    pub lr_classifier: f32,
    pub lr_g: f32,
    pub lr_d: f32,
    pub lambda: f32,
    pub epochs: u64,
    pub batch_size: usize,
    pub seed: u64,
    /// Epochs between cadence checkpoints; 0 saves only at the end.
    pub checkpoint_every: u64,
    /// Epochs between evaluations on the test split; 0 evaluates only at
    /// the end.
    pub eval_every: u64,
    /// Per-class cap on the training split.
    pub subset: Option<usize>,
    /// Per-class cap on the test split. Defaults to a fifth of `subset`,
    /// keeping the 5:1 train/test ratio.
    pub eval_subset: Option<usize>,
    pub data_dir: Option<PathBuf>,
}

const KEYS: &[&str] = &[
    "model",
    "variant",
    "arch",
    "lr_classifier",
    "lr_g",
    "lr_d",
    "lambda",
    "epochs",
    "batch_size",
    "seed",
    "checkpoint_every",
    "eval_every",
    "subset",
    "eval_subset",
    "data_dir",
];

impl TrainConfig {
    pub fn new(model: ModelKind) -> Self {
        Self {
            model,
            variant: Variant::DownsampleTarget,
            arch: Arch::Full,
            lr_classifier: 1e-3,
            lr_g: 1e-4,
            lr_d: 1e-4,
            lambda: DEFAULT_LAMBDA,
            epochs: model.default_epochs(),
            batch_size: DEFAULT_BATCH_SIZE,
            seed: 0,
            checkpoint_every: 10,
            eval_every: 10,
            subset: None,
            eval_subset: None,
            data_dir: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, lr) in [("lr_classifier", self.lr_classifier), ("lr_g", self.lr_g), ("lr_d", self.lr_d)] {
            if !(lr.is_finite() && lr > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {lr}")));
            }
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::Config(format!("lambda must be non-negative, got {}", self.lambda)));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.subset == Some(0) || self.eval_subset == Some(0) {
            return Err(Error::Config("subset caps must be at least 1".into()));
        }
        Ok(())
    }

    /// Parses `key = value` lines. Blank lines and `#` comments are skipped
    /// and unknown keys are rejected. `epochs` defaults by model.
    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {raw:?}", i + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if !KEYS.contains(&k) {
                return Err(Error::Config(format!("line {}: unknown key {k:?}", i + 1)));
            }
            if kv.insert(k.to_string(), v.to_string()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key {k:?}", i + 1)));
            }
        }
        let model: ModelKind = kv
            .get("model")
            .ok_or_else(|| Error::Config("missing key \"model\"".into()))?
            .parse()?;
        let mut cfg = Self::new(model);
        for (k, v) in &kv {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets one field from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
        }
        fn cap(key: &str, v: &str) -> Result<Option<usize>> {
            if v == "none" || v.is_empty() {
                Ok(None)
            } else {
                num(key, v).map(Some)
            }
        }
        match key {
            "model" => {
                let m: ModelKind = value.parse()?;
                if m != self.model {
                    self.epochs = m.default_epochs();
                }
                self.model = m;
            }
            "variant" => self.variant = value.parse()?,
            "arch" => self.arch = value.parse()?,
            "lr_classifier" => self.lr_classifier = num(key, value)?,
            "lr_g" => self.lr_g = num(key, value)?,
            "lr_d" => self.lr_d = num(key, value)?,
            "lambda" => self.lambda = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "checkpoint_every" => self.checkpoint_every = num(key, value)?,
            "eval_every" => self.eval_every = num(key, value)?,
            "subset" => self.subset = cap(key, value)?,
            "eval_subset" => self.eval_subset = cap(key, value)?,
            "data_dir" => self.data_dir = (!value.is_empty()).then(|| PathBuf::from(value)),
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Every field as `(key, value)`, in a fixed order; [`Self::parse`]
    /// reads this back.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let opt = |v: Option<usize>| v.map_or_else(|| "none".to_string(), |v| v.to_string());
        vec![
            ("model", self.model.to_string()),
            ("variant", self.variant.to_string()),
            ("arch", self.arch.name().to_string()),
            ("lr_classifier", self.lr_classifier.to_string()),
            ("lr_g", self.lr_g.to_string()),
            ("lr_d", self.lr_d.to_string()),
            ("lambda", self.lambda.to_string()),
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("seed", self.seed.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            ("eval_every", self.eval_every.to_string()),
            ("subset", opt(self.subset)),
            ("eval_subset", opt(self.eval_subset)),
            ("data_dir", self.data_dir.as_ref().map(|p| p.display().to_string()).unwrap_or_default()),
        ]
    }

    pub fn to_kv(&self) -> String {
        self.to_pairs().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn test_cap(&self) -> Option<usize> {
        self.eval_subset.or(self.subset.map(|s| (s / 5).max(1)))
    }

    /// Run id derived from the config, so identical invocations agree.
    pub fn run_id(&self) -> String {
        let digest = Sha256::digest(self.to_kv().as_bytes());
        hex::encode(&digest[..6])
    }

    pub fn classifier_config(&self) -> ClassifierConfig {
        match self.arch {
            Arch::Full => ClassifierConfig::new(self.variant),
            Arch::Small => ClassifierConfig {
                block_channels: vec![16, 32, 64, 64],
                convs_per_block: vec![1, 1, 2, 2],
                dilations: vec![1, 1, 2, 1],
                ..ClassifierConfig::new(self.variant)
            },
        }
    }

    pub fn gan_configs(&self) -> (GeneratorConfig, DiscriminatorConfig) {
        match self.arch {
            Arch::Full => Default::default(),
            Arch::Small => (
                GeneratorConfig {
                    enc_channels: vec![16, 32, 64, 128],
                    final_channels: 16,
                },
                DiscriminatorConfig {
                    channels: vec![16, 32, 64],
                },
            ),
        }
    }

    /// A fresh model with its optimizer state.
    pub fn build_model(&self) -> Result<Model> {
        Ok(match self.model {
            ModelKind::Classifier => {
                let (b1, b2) = CLASSIFIER_BETAS;
                Model::Classifier {
                    net: ClassifierNet::new(self.classifier_config(), self.seed)?,
                    opt: Some(Adam::new(AdamConfig::new(self.lr_classifier, b1, b2))),
                }
            }
            ModelKind::Gan => {
                let (b1, b2) = GAN_BETAS;
                let (g, d) = self.gan_configs();
                Model::Gan(Gan::new(
                    g,
                    d,
                    AdamConfig::new(self.lr_g, b1, b2),
                    AdamConfig::new(self.lr_d, b1, b2),
                    self.lambda,
                    self.seed,
                )?)
            }
        })
    }
}

/// One scalar record.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    pub step: u64,
    pub name: String,
    pub value: f64,
}

/// Append-only scalar log, persisted as tab-separated `step name value`
/// rows under `#` header lines holding the run id and config.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunLog {
    pub run_id: String,
    pub config: Vec<(String, String)>,
    pub records: Vec<LogRecord>,
    last_step: BTreeMap<String, u64>,
}

impl RunLog {
    pub fn new(run_id: impl Into<String>, config: &TrainConfig) -> Self {
        Self {
            run_id: run_id.into(),
            config: config.to_pairs().into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
            ..Default::default()
        }
    }

    /// Appends a record. Steps may not go backwards within one metric.
    pub fn push(&mut self, step: u64, name: &str, value: f64) -> Result<()> {
        if let Some(&last) = self.last_step.get(name) {
            if step < last {
                return Err(Error::invalid(format!("{name}: step {step} after {last}")));
            }
        }
        self.last_step.insert(name.to_string(), step);
        self.records.push(LogRecord {
            step,
            name: name.to_string(),
            value,
        });
        Ok(())
    }

    pub fn series(&self, name: &str) -> Vec<(u64, f64)> {
        self.records.iter().filter(|r| r.name == name).map(|r| (r.step, r.value)).collect()
    }

    pub fn last(&self, name: &str) -> Option<f64> {
        self.records.iter().rev().find(|r| r.name == name).map(|r| r.value)
    }

    fn header(&self) -> String {
        let mut s = format!("# run_id\t{}\n", self.run_id);
        for (k, v) in &self.config {
            s.push_str(&format!("# config\t{k}\t{v}\n"));
        }
        s
    }

    fn row(r: &LogRecord) -> String {
        format!("{}\t{}\t{}\n", r.step, r.name, r.value)
    }

    pub fn to_text(&self) -> String {
        let mut s = self.header();
        for r in &self.records {
            s.push_str(&Self::row(r));
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut log = RunLog::default();
        for (i, line) in text.lines().enumerate() {
            let bad = || Error::invalid(format!("run log line {}: {line:?}", i + 1));
            if let Some(h) = line.strip_prefix("# ") {
                let mut parts = h.split('\t');
                match parts.next() {
                    Some("run_id") => log.run_id = parts.next().ok_or_else(bad)?.to_string(),
                    Some("config") => {
                        let k = parts.next().ok_or_else(bad)?;
                        let v = parts.next().unwrap_or("");
                        log.config.push((k.to_string(), v.to_string()));
                    }
                    _ => return Err(bad()),
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split('\t');
            let (Some(step), Some(name), Some(value), None) = (parts.next(), parts.next(), parts.next(), parts.next())
            else {
                return Err(bad());
            };
            let step = step.parse().map_err(|_| bad())?;
            let value = value.parse().map_err(|_| bad())?;
            log.push(step, name, value)?;
        }
        Ok(log)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }
}

/// Keeps a [`RunLog`] mirrored to disk, appending each record as it comes.
struct LogSink {
    log: RunLog,
    out: BufWriter<fs::File>,
}

impl LogSink {
    fn create(path: &Path, log: RunLog) -> Result<Self> {
        let mut out = BufWriter::new(fs::File::create(path)?);
        out.write_all(log.to_text().as_bytes())?;
        out.flush()?;
        Ok(Self { log, out })
    }

    fn push(&mut self, step: u64, name: &str, value: f64) -> Result<()> {
        self.log.push(step, name, value)?;
        let r = self.log.records.last().expect("just pushed");
        self.out.write_all(RunLog::row(r).as_bytes())?;
        Ok(())
    }

    fn flush(&mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub final_checkpoint: PathBuf,
    pub best_checkpoint: Option<PathBuf>,
    pub log_path: PathBuf,
    pub log: RunLog,
    pub final_report: Option<MetricReport>,
    pub best_report: Option<MetricReport>,
    pub best_epoch: Option<u64>,
    pub steps: u64,
}

pub const LOG_FILE: &str = "run_log.tsv";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const DIVERGED_CHECKPOINT: &str = "diverged.ckpt";

/// Training images in memory.
pub struct TrainData {
    pub train: Vec<RgbImage>,
    pub test: Vec<RgbImage>,
}

impl TrainData {
    pub fn load(config: &TrainConfig) -> Result<Self> {
        let root = data::data_root(config.data_dir.as_deref());
        let load = |split, cap| -> Result<Vec<RgbImage>> {
            Ok(load_cifar10(&DatasetSpec::new(&root, split).with_cap(cap))?.iter().map(|s| s.image()).collect())
        };
        Ok(Self {
            train: load(Split::Train, config.subset)?,
            test: load(Split::Test, config.test_cap())?,
        })
    }
}

/// Colorizes `images` with a snapshot of `model` and scores the results.
pub fn evaluate_model(model: &Model, images: &[RgbImage], batch: usize) -> Result<MetricReport> {
    let mut snapshot = model.clone();
    crate::metrics::evaluate(images, &DEFAULT_EPSILONS, batch, |chunk| {
        let grays = chunk
            .iter()
            .map(|img| LabImage::grayscale(img.height(), img.width(), rgb_to_lab(img).l().to_vec()))
            .collect::<Result<Vec<_>>>()?;
        snapshot.colorize_batch(&grays, DEFAULT_TEMPERATURE)
    })
}

/// Trains per `config`, writing checkpoints, reports and the run log into
/// `out_dir`. With `resume` the run continues from that checkpoint.
pub fn train(config: &TrainConfig, out_dir: &Path, resume: Option<&Path>) -> Result<TrainOutcome> {
    config.validate()?;
    let data = TrainData::load(config)?;
    train_on(config, &data, out_dir, resume)
}

/// [`train`] on images already in memory.
pub fn train_on(config: &TrainConfig, data: &TrainData, out_dir: &Path, resume: Option<&Path>) -> Result<TrainOutcome> {
    config.validate()?;
    if data.train.is_empty() {
        return Err(Error::Config("no training images".into()));
    }
    if data.train.iter().chain(&data.test).any(|i| (i.height(), i.width()) != (IMAGE_SIDE, IMAGE_SIDE)) {
        return Err(Error::shape(format!("training images must be {IMAGE_SIDE}x{IMAGE_SIDE}")));
    }
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("config.txt"), config.to_kv())?;

    let log_path = out_dir.join(LOG_FILE);
    let (mut ckpt, mut sink, start_epoch) = match resume {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            let kind_ok = matches!(
                (&ckpt.model, config.model),
                (Model::Classifier { opt: Some(_), .. }, ModelKind::Classifier) | (Model::Gan(_), ModelKind::Gan)
            );
            if !kind_ok {
                return Err(Error::Checkpoint(format!(
                    "cannot resume a {} checkpoint as {} training",
                    ckpt.model.kind(),
                    config.model
                )));
            }
            let state = ckpt
                .train_state
                .ok_or_else(|| Error::Checkpoint("checkpoint has no training state".into()))?;
            let mut log = if log_path.exists() {
                RunLog::load(&log_path)?
            } else {
                RunLog::new(config.run_id(), config)
            };
            // Drop anything logged after the checkpoint was taken.
            log.records.retain(|r| r.step <= state.step);
            log.last_step.clear();
            let records = std::mem::take(&mut log.records);
            for r in records {
                log.push(r.step, &r.name, r.value)?;
            }
            let sink = LogSink::create(&log_path, log)?;
            (ckpt, sink, state.epoch)
        }
        None => {
            let ckpt = Checkpoint::new(config.build_model()?, IMAGE_SIDE);
            let sink = LogSink::create(&log_path, RunLog::new(config.run_id(), config))?;
            (ckpt, sink, 0)
        }
    };
    let mut step = ckpt.train_state.map_or(0, |s| s.step);

    let mut best: Option<(f64, u64, MetricReport)> = None;
    let mut final_report = None;
    let best_path = out_dir.join(BEST_CHECKPOINT);
    let n = data.train.len();
    let bs = config.batch_size.min(n);

    for epoch in start_epoch..config.epochs {
        let order = epoch_permutation(n, config.seed, epoch);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(bs) {
            let images: Vec<&RgbImage> = chunk.iter().map(|&i| &data.train[i]).collect();
            let scalars = match train_batch(&mut ckpt.model, &images) {
                Ok(s) => s,
                Err(Error::NonFinite(what)) => return diverge(&mut ckpt, out_dir, epoch, step, what, f64::NAN),
                Err(e) => return Err(e),
            };
            step += 1;
            for &(name, value) in &scalars {
                if !value.is_finite() {
                    sink.flush()?;
                    return diverge(&mut ckpt, out_dir, epoch, step, name, value);
                }
                sink.push(step, name, value)?;
            }
            epoch_loss += scalars[0].1;
            batches += 1;
        }
        let epoch_loss = epoch_loss / batches as f64;
        sink.push(step, "epoch_loss", epoch_loss)?;
        sink.push(step, "epoch", (epoch + 1) as f64)?;
        info!("epoch {}/{} step {step} loss {epoch_loss:.5}", epoch + 1, config.epochs);
        ckpt.train_state = Some(TrainState {
            epoch: epoch + 1,
            step,
            seed: config.seed,
        });

        let last = epoch + 1 == config.epochs;
        if !data.test.is_empty() && (last || (config.eval_every > 0 && (epoch + 1) % config.eval_every == 0)) {
            let report = evaluate_model(&ckpt.model, &data.test, bs)?;
            for (i, eps) in report.epsilons.iter().enumerate() {
                sink.push(step, &format!("eval_pixel_acc_{eps}"), report.pixel_acc[i])?;
            }
            sink.push(step, "eval_psnr_db", report.psnr_db)?;
            sink.push(step, "eval_ssim", report.ssim)?;
            info!("eval after epoch {}: psnr {:.3} dB ssim {:.4}", epoch + 1, report.psnr_db, report.ssim);
            if best.as_ref().is_none_or(|(psnr, _, _)| report.psnr_db > *psnr) {
                ckpt.save(&best_path)?;
                report.write(out_dir, "metrics_best")?;
                best = Some((report.psnr_db, epoch + 1, report.clone()));
            }
            if last {
                final_report = Some(report);
            }
        }
        if !last && config.checkpoint_every > 0 && (epoch + 1) % config.checkpoint_every == 0 {
            ckpt.save(&out_dir.join(format!("epoch_{:04}.ckpt", epoch + 1)))?;
        }
        sink.flush()?;
    }

    let final_path = out_dir.join(FINAL_CHECKPOINT);
    ckpt.save(&final_path)?;
    if let Some(r) = &final_report {
        r.write(out_dir, "metrics_final")?;
    }
    sink.flush()?;
    Ok(TrainOutcome {
        final_checkpoint: final_path,
        best_checkpoint: best.is_some().then_some(best_path),
        log_path,
        log: sink.log,
        final_report,
        best_epoch: best.as_ref().map(|b| b.1),
        best_report: best.map(|b| b.2),
        steps: step,
    })
}

fn diverge<T>(ckpt: &mut Checkpoint, out_dir: &Path, epoch: u64, step: u64, metric: &str, value: f64) -> Result<T> {
    ckpt.train_state = Some(TrainState {
        epoch,
        step,
        seed: ckpt.train_state.map_or(0, |s| s.seed),
    });
    // Non-finite weights cannot always be serialized meaningfully, but the
    // file is still useful for post-mortem inspection.
    ckpt.save(&out_dir.join(DIVERGED_CHECKPOINT))?;
    Err(Error::Diverged {
        step,
        metric: metric.to_string(),
        value,
    })
}

/// One optimization step on `images`. The first scalar is the loss that is
/// averaged into the epoch loss.
pub fn train_batch(model: &mut Model, images: &[&RgbImage]) -> Result<Vec<(&'static str, f64)>> {
    let (h, w) = (IMAGE_SIDE, IMAGE_SIDE);
    match model {
        Model::Classifier { net, opt } => {
            let opt = opt
                .as_mut()
                .ok_or_else(|| Error::Checkpoint("classifier checkpoint has no optimizer state".into()))?;
            let mut inputs = Vec::with_capacity(images.len());
            let mut targets = Vec::with_capacity(images.len());
            for img in images {
                let (l, z) = make_training_pair_classifier(img, net.config())?;
                inputs.push(l);
                targets.push(z);
            }
            let planes: Vec<&[f32]> = inputs.iter().map(|v| v.as_slice()).collect();
            let x = ClassifierNet::input_tensor(h, w, &planes)?;
            net.zero_grad();
            let logits = net.forward(&x, true)?;
            let (loss, grad) = sparse_loss_and_grad(&logits, &targets)?;
            if !loss.is_finite() {
                return Ok(vec![("loss", loss)]);
            }
            net.backward(&grad)?;
            opt.step(net)?;
            Ok(vec![("loss", loss)])
        }
        Model::Gan(gan) => {
            let labs: Vec<_> = images.iter().map(|img| rgb_to_lab(img)).collect();
            let ls: Vec<&[f32]> = labs.iter().map(|l| l.l()).collect();
            let abs: Vec<&[f32]> = labs.iter().map(|l| l.ab()).collect();
            let t = gan.train_step(&l_tensor(h, w, &ls)?, &ab_tensor(h, w, &abs)?)?;
            Ok(vec![
                ("g_loss", t.generator_total()),
                ("g_adv", t.g_adv),
                ("g_l1", t.g_l1),
                ("d_loss", t.d_loss),
                ("d_real", t.d_real),
                ("d_fake", t.d_fake),
            ])
        }
        Model::Generator(_) => Err(Error::Checkpoint("a generator-only checkpoint cannot be trained".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn images(n: usize, seed: u64) -> Vec<RgbImage> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let f: [f32; 6] = std::array::from_fn(|_| rng.random_range(0.05..0.4));
                let px = (0..IMAGE_SIDE * IMAGE_SIDE)
                    .flat_map(|p| {
                        let (y, x) = ((p / IMAGE_SIDE) as f32, (p % IMAGE_SIDE) as f32);
                        (0..3).map(move |c| 0.5 + 0.45 * (f[c] * x + f[c + 3] * y).sin())
                    })
                    .collect();
                RgbImage::new(IMAGE_SIDE, IMAGE_SIDE, px).unwrap()
            })
            .collect()
    }

    fn small(model: ModelKind) -> TrainConfig {
        TrainConfig {
            arch: Arch::Small,
            epochs: 1,
            batch_size: 4,
            seed: 7,
            ..TrainConfig::new(model)
        }
    }

    #[test]
    fn config_round_trips_through_text() {
        let mut c = TrainConfig::new(ModelKind::Gan);
        c.subset = Some(500);
        c.data_dir = Some("/tmp/x".into());
        c.lr_g = 2e-4;
        assert_eq!(TrainConfig::parse(&c.to_kv()).unwrap(), c);
    }

    #[test]
    fn config_defaults_follow_model() {
        let c = TrainConfig::parse("model = classifier\n").unwrap();
        assert_eq!((c.epochs, c.lr_classifier), (100, 1e-3));
        let g = TrainConfig::parse("# comment\nmodel = gan  # trailing\n").unwrap();
        assert_eq!((g.epochs, g.lr_g, g.lr_d, g.lambda), (200, 1e-4, 1e-4, 100.0));
    }

    #[test]
    fn config_rejects_bad_input() {
        for text in [
            "epochs = 3\n",
            "model = gan\nbogus = 1\n",
            "model = gan\nepochs = 0\n",
            "model = gan\nlr_g = -1\n",
            "model = gan\nbatch_size = 0\n",
            "model = gan\nmodel = gan\n",
            "model = gan\nseed\n",
        ] {
            assert!(matches!(TrainConfig::parse(text), Err(Error::Config(_))), "{text:?}");
        }
    }

    #[test]
    fn test_cap_keeps_ratio() {
        let mut c = TrainConfig::new(ModelKind::Gan);
        assert_eq!(c.test_cap(), None);
        c.subset = Some(500);
        assert_eq!(c.test_cap(), Some(100));
        c.subset = Some(3);
        assert_eq!(c.test_cap(), Some(1));
        c.eval_subset = Some(7);
        assert_eq!(c.test_cap(), Some(7));
    }

    #[test]
    fn run_log_round_trip_and_monotone() {
        let c = TrainConfig::new(ModelKind::Classifier);
        let mut log = RunLog::new("abc", &c);
        log.push(1, "loss", 2.5).unwrap();
        log.push(1, "loss", 2.0).unwrap();
        log.push(2, "loss", 1.5).unwrap();
        log.push(1, "other", 0.25).unwrap();
        assert!(log.push(1, "loss", 1.0).is_err());
        let back = RunLog::parse(&log.to_text()).unwrap();
        assert_eq!(back, log);
        assert_eq!(back.series("loss"), vec![(1, 2.5), (1, 2.0), (2, 1.5)]);
        assert!(RunLog::parse("2\tx\t1\n1\tx\t1\n").is_err());
    }

    #[test]
    fn classifier_epoch_writes_log_and_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let data = TrainData {
            train: images(8, 1),
            test: images(2, 2),
        };
        let out = train_on(&small(ModelKind::Classifier), &data, dir.path(), None).unwrap();
        assert_eq!(out.steps, 2);
        assert!(!out.log.series("loss").is_empty());
        assert_eq!(RunLog::load(&out.log_path).unwrap(), out.log);
        let bytes = std::fs::read(&out.final_checkpoint).unwrap();
        let mut back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes().unwrap(), bytes);
        assert_eq!(back.train_state.unwrap().epoch, 1);
        assert!(out.final_report.is_some() && out.best_checkpoint.is_some());
        assert!(dir.path().join("metrics_final.csv").exists());
    }

    #[test]
    fn same_seed_same_log() {
        let data = TrainData {
            train: images(6, 3),
            test: Vec::new(),
        };
        let cfg = TrainConfig {
            batch_size: 3,
            ..small(ModelKind::Gan)
        };
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let la = train_on(&cfg, &data, a.path(), None).unwrap().log;
        let lb = train_on(&cfg, &data, b.path(), None).unwrap().log;
        assert_eq!(la, lb);
        assert_eq!(la.series("d_real").len(), 2);
    }

    #[test]
    fn resume_matches_continuous_run() {
        let data = TrainData {
            train: images(6, 4),
            test: Vec::new(),
        };
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 3,
            checkpoint_every: 1,
            ..small(ModelKind::Classifier)
        };
        let full = tempfile::tempdir().unwrap();
        let whole = train_on(&cfg, &data, full.path(), None).unwrap();

        let split = tempfile::tempdir().unwrap();
        let first = train_on(&TrainConfig { epochs: 1, ..cfg.clone() }, &data, split.path(), None).unwrap();
        let resumed = train_on(&cfg, &data, split.path(), Some(&first.final_checkpoint)).unwrap();
        assert_eq!(resumed.steps, whole.steps);
        let a = whole.log.last("epoch_loss").unwrap();
        let b = resumed.log.last("epoch_loss").unwrap();
        assert!((a - b).abs() <= 0.05 * a.abs(), "{a} vs {b}");
        assert!(full.path().join("epoch_0001.ckpt").exists());
    }

    #[test]
    fn resume_rejects_wrong_kind() {
        let data = TrainData {
            train: images(4, 5),
            test: Vec::new(),
        };
        let dir = tempfile::tempdir().unwrap();
        let out = train_on(&small(ModelKind::Gan), &data, dir.path(), None).unwrap();
        let err = train_on(&small(ModelKind::Classifier), &data, dir.path(), Some(&out.final_checkpoint));
        assert!(matches!(err, Err(Error::Checkpoint(_))));
    }

    #[test]
    fn divergence_leaves_a_checkpoint() {
        let data = TrainData {
            train: images(4, 6),
            test: Vec::new(),
        };
        let cfg = TrainConfig {
            lr_classifier: 1e30,
            epochs: 20,
            ..small(ModelKind::Classifier)
        };
        let dir = tempfile::tempdir().unwrap();
        let err = train_on(&cfg, &data, dir.path(), None).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }), "{err}");
        assert!(dir.path().join(DIVERGED_CHECKPOINT).exists());
    }
}
