//! Pixel accuracy, PSNR and SSIM, and their aggregation over a test set.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::color::RgbImage;
use crate::error::{Error, Result};

/// Thresholds reported by default.
pub const DEFAULT_EPSILONS: [f32; 2] = [0.02, 0.05];

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

fn check_pair(pred: &RgbImage, real: &RgbImage) -> Result<()> {
    if (pred.height(), pred.width()) != (real.height(), real.width()) {
        return Err(Error::shape(format!(
            "prediction is {}x{}, ground truth {}x{}",
            pred.height(),
            pred.width(),
            real.height(),
            real.width()
        )));
    }
    Ok(())
}

fn check_eps(eps: f32) -> Result<()> {
    if eps > 0.0 && eps < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("epsilon must lie in (0, 1), got {eps}")))
    }
}

/// Fraction of pixels whose three channels all differ by strictly less than
/// `eps`.
pub fn pixel_accuracy(pred: &RgbImage, real: &RgbImage, eps: f32) -> Result<f64> {
    check_pair(pred, real)?;
    check_eps(eps)?;
    let hits = pred
        .pixels()
        .chunks_exact(3)
        .zip(real.pixels().chunks_exact(3))
        .filter(|(p, r)| p.iter().zip(r.iter()).all(|(a, b)| (a - b).abs() < eps))
        .count();
    Ok(hits as f64 / (pred.height() * pred.width()) as f64)
}

/// Per-channel version of [`pixel_accuracy`], in R, G, B order.
pub fn pixel_accuracy_per_channel(pred: &RgbImage, real: &RgbImage, eps: f32) -> Result<[f64; 3]> {
    check_pair(pred, real)?;
    check_eps(eps)?;
    let mut hits = [0usize; 3];
    for (p, r) in pred.pixels().chunks_exact(3).zip(real.pixels().chunks_exact(3)) {
        for c in 0..3 {
            if (p[c] - r[c]).abs() < eps {
                hits[c] += 1;
            }
        }
    }
    let n = (pred.height() * pred.width()) as f64;
    Ok(hits.map(|h| h as f64 / n))
}

/// `10 log10(1 / MSE)` over all components; `+inf` for identical images.
pub fn psnr(pred: &RgbImage, real: &RgbImage) -> Result<f64> {
    check_pair(pred, real)?;
    let sse: f64 = pred
        .pixels()
        .iter()
        .zip(real.pixels())
        .map(|(&a, &b)| (f64::from(a) - f64::from(b)).powi(2))
        .sum();
    let mse = sse / pred.pixels().len() as f64;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    })
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut w = [0.0; SSIM_WINDOW];
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let total: f64 = w.iter().sum();
    w.map(|v| v / total)
}

/// Separable Gaussian filter over the positions where the window fits.
fn filter_valid(plane: &[f64], h: usize, w: usize, win: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let k = SSIM_WINDOW;
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..k).map(|i| win[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|i| win[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM with an 11x11 Gaussian window (sigma 1.5), data range 1,
/// averaged over the three channels. Only windows fully inside the image
/// contribute.
pub fn ssim(pred: &RgbImage, real: &RgbImage) -> Result<f64> {
    check_pair(pred, real)?;
    let (h, w) = (pred.height(), pred.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let win = gaussian_window();
    let mut total = 0.0;
    for c in 0..3 {
        let x: Vec<f64> = pred.pixels().iter().skip(c).step_by(3).map(|&v| f64::from(v)).collect();
        let y: Vec<f64> = real.pixels().iter().skip(c).step_by(3).map(|&v| f64::from(v)).collect();
        let prod = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).collect::<Vec<_>>();
        let mx = filter_valid(&x, h, w, &win);
        let my = filter_valid(&y, h, w, &win);
        let mxx = filter_valid(&prod(&x, &x), h, w, &win);
        let myy = filter_valid(&prod(&y, &y), h, w, &win);
        let mxy = filter_valid(&prod(&x, &y), h, w, &win);
        let mut sum = 0.0;
        for i in 0..mx.len() {
            let (ux, uy) = (mx[i], my[i]);
            let vx = mxx[i] - ux * ux;
            let vy = myy[i] - uy * uy;
            let cxy = mxy[i] - ux * uy;
            sum += ((2.0 * ux * uy + SSIM_C1) * (2.0 * cxy + SSIM_C2))
                / ((ux * ux + uy * uy + SSIM_C1) * (vx + vy + SSIM_C2));
        }
        total += sum / mx.len() as f64;
    }
    Ok((total / 3.0).clamp(-1.0, 1.0))
}

/// Test-set averages of the per-image metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub epsilons: Vec<f32>,
    pub pixel_acc: Vec<f64>,
    /// `[R, G, B]` accuracy for each epsilon.
    pub pixel_acc_per_channel: Vec<[f64; 3]>,
    /// Mean over images with finite PSNR.
    pub psnr_db: f64,
    /// Images identical to their ground truth, excluded from `psnr_db`.
    pub psnr_infinite: usize,
    pub ssim: f64,
    pub n_images: usize,
}

impl MetricReport {
    /// `name = value` lines, Table-1 columns first.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (e, a) in self.epsilons.iter().zip(&self.pixel_acc) {
            let _ = writeln!(s, "pixel_acc@{e} = {:.3}%", 100.0 * a);
        }
        let _ = writeln!(s, "psnr_db = {:.3}", self.psnr_db);
        let _ = writeln!(s, "ssim = {:.4}", self.ssim);
        for (e, pc) in self.epsilons.iter().zip(&self.pixel_acc_per_channel) {
            for (name, v) in ["r", "g", "b"].iter().zip(pc) {
                let _ = writeln!(s, "pixel_acc_{name}@{e} = {:.3}%", 100.0 * v);
            }
        }
        let _ = writeln!(s, "psnr_infinite = {}", self.psnr_infinite);
        let _ = writeln!(s, "n_images = {}", self.n_images);
        s
    }

    /// Header for [`Self::table_row`]: pixel accuracy per epsilon, PSNR and
    /// SSIM, in that order.
    pub fn table_header(&self) -> String {
        let mut s = format!("{:<16}", "model");
        for e in &self.epsilons {
            let _ = write!(s, " {:>18}", format!("pixel_acc@{}%", 100.0 * e));
        }
        let _ = write!(s, " {:>10} {:>7}", "psnr_db", "ssim");
        s
    }

    pub fn table_row(&self, label: &str) -> String {
        let mut s = format!("{label:<16}");
        for a in &self.pixel_acc {
            let _ = write!(s, " {:>17.3}%", 100.0 * a);
        }
        let _ = write!(s, " {:>10.3} {:>7.3}", self.psnr_db, self.ssim);
        s
    }

    /// `metric,value` table with full precision.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,value\n");
        for (e, a) in self.epsilons.iter().zip(&self.pixel_acc) {
            let _ = writeln!(s, "pixel_acc@{e},{a}");
        }
        let _ = writeln!(s, "psnr_db,{}", self.psnr_db);
        let _ = writeln!(s, "ssim,{}", self.ssim);
        for (e, pc) in self.epsilons.iter().zip(&self.pixel_acc_per_channel) {
            for (name, v) in ["r", "g", "b"].iter().zip(pc) {
                let _ = writeln!(s, "pixel_acc_{name}@{e},{v}");
            }
        }
        let _ = writeln!(s, "psnr_infinite,{}", self.psnr_infinite);
        let _ = writeln!(s, "n_images,{}", self.n_images);
        s
    }

    /// Writes `<stem>.txt` and `<stem>.csv` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(format!("{stem}.txt")), self.to_text())?;
        std::fs::write(dir.join(format!("{stem}.csv")), self.to_csv())?;
        Ok(())
    }
}

/// Running sums for a [`MetricReport`].
#[derive(Debug, Clone)]
pub struct MetricAccumulator {
    epsilons: Vec<f32>,
    acc: Vec<f64>,
    per_channel: Vec<[f64; 3]>,
    psnr_sum: f64,
    psnr_finite: usize,
    psnr_infinite: usize,
    ssim_sum: f64,
    n: usize,
}

impl MetricAccumulator {
    pub fn new(epsilons: &[f32]) -> Result<Self> {
        for &e in epsilons {
            check_eps(e)?;
        }
        let mut epsilons = epsilons.to_vec();
        epsilons.sort_by(f32::total_cmp);
        Ok(Self {
            acc: vec![0.0; epsilons.len()],
            per_channel: vec![[0.0; 3]; epsilons.len()],
            epsilons,
            psnr_sum: 0.0,
            psnr_finite: 0,
            psnr_infinite: 0,
            ssim_sum: 0.0,
            n: 0,
        })
    }

    /// Adds one pair. The prediction is quantized to 8 bits first, as it
    /// would be when saved.
    pub fn add(&mut self, pred: &RgbImage, real: &RgbImage) -> Result<()> {
        let pred = pred.quantized();
        for (i, &e) in self.epsilons.iter().enumerate() {
            self.acc[i] += pixel_accuracy(&pred, real, e)?;
            let pc = pixel_accuracy_per_channel(&pred, real, e)?;
            for c in 0..3 {
                self.per_channel[i][c] += pc[c];
            }
        }
        let p = psnr(&pred, real)?;
        if p.is_finite() {
            self.psnr_sum += p;
            self.psnr_finite += 1;
        } else {
            self.psnr_infinite += 1;
        }
        self.ssim_sum += ssim(&pred, real)?;
        self.n += 1;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn finish(&self) -> MetricReport {
        let n = self.n.max(1) as f64;
        MetricReport {
            epsilons: self.epsilons.clone(),
            pixel_acc: self.acc.iter().map(|a| a / n).collect(),
            pixel_acc_per_channel: self.per_channel.iter().map(|pc| pc.map(|v| v / n)).collect(),
            psnr_db: if self.psnr_finite == 0 {
                f64::INFINITY
            } else {
                self.psnr_sum / self.psnr_finite as f64
            },
            psnr_infinite: self.psnr_infinite,
            ssim: self.ssim_sum / n,
            n_images: self.n,
        }
    }
}

/// Colorizes every ground-truth image (in batches) and aggregates metrics.
/// `colorize` receives ground-truth images and must only use their
/// lightness.
pub fn evaluate<F>(images: &[RgbImage], epsilons: &[f32], batch: usize, mut colorize: F) -> Result<MetricReport>
where
    F: FnMut(&[RgbImage]) -> Result<Vec<RgbImage>>,
{
    let mut acc = MetricAccumulator::new(epsilons)?;
    for chunk in images.chunks(batch.max(1)) {
        let preds = colorize(chunk)?;
        if preds.len() != chunk.len() {
            return Err(Error::shape(format!(
                "colorizer returned {} images for {}",
                preds.len(),
                chunk.len()
            )));
        }
        for (p, r) in preds.iter().zip(chunk) {
            acc.add(p, r)?;
        }
    }
    Ok(acc.finish())
}
