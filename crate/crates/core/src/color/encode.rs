use std::sync::Arc;

use super::grid::AbBinGrid;
use crate::error::{Error, Result};

/// Neighbors used when soft-encoding a ground-truth ab value.
pub const DEFAULT_SOFT_K: usize = 5;
/// Gaussian kernel width (ab units) for soft-encoding.
pub const DEFAULT_SOFT_SIGMA: f32 = 5.0;
/// Annealed-mean decoding temperature.
pub const DEFAULT_TEMPERATURE: f32 = 0.38;

const SUM_TOLERANCE: f64 = 1e-5;

/// A per-pixel probability field over the bins of an [`AbBinGrid`], stored
/// pixel-major (`probs[pixel * q + bin]`).
#[derive(Debug, Clone)]
pub struct ColorDistribution {
    height: usize,
    width: usize,
    probs: Vec<f32>,
    grid: Arc<AbBinGrid>,
}

impl ColorDistribution {
    pub fn new(height: usize, width: usize, probs: Vec<f32>, grid: Arc<AbBinGrid>) -> Result<Self> {
        let q = grid.len();
        if probs.len() != height * width * q {
            return Err(Error::shape(format!(
                "expected {} probabilities for {height}x{width}x{q}, got {}",
                height * width * q,
                probs.len()
            )));
        }
        for (pixel, row) in probs.chunks_exact(q).enumerate() {
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::invalid(format!("pixel {pixel} has a negative or non-finite probability")));
            }
            let sum: f64 = row.iter().map(|&p| f64::from(p)).sum();
            if (sum - 1.0).abs() > SUM_TOLERANCE {
                return Err(Error::invalid(format!("pixel {pixel} sums to {sum}")));
            }
        }
        Ok(Self {
            height,
            width,
            probs,
            grid,
        })
    }

    /// Softmax over the bin axis of pixel-major logits.
    pub fn from_logits(height: usize, width: usize, logits: &[f32], grid: Arc<AbBinGrid>) -> Result<Self> {
        let q = grid.len();
        if logits.len() != height * width * q {
            return Err(Error::shape(format!(
                "expected {} logits, got {}",
                height * width * q,
                logits.len()
            )));
        }
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("logits"));
        }
        let mut probs = Vec::with_capacity(logits.len());
        for row in logits.chunks_exact(q) {
            let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let exps: Vec<f64> = row.iter().map(|&z| f64::from(z - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            probs.extend(exps.iter().map(|e| (e / sum) as f32));
        }
        Ok(Self {
            height,
            width,
            probs,
            grid,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn q(&self) -> usize {
        self.grid.len()
    }

    pub fn grid(&self) -> &Arc<AbBinGrid> {
        &self.grid
    }

    pub fn probs(&self) -> &[f32] {
        &self.probs
    }

    pub fn pixel(&self, index: usize) -> &[f32] {
        let q = self.q();
        &self.probs[index * q..(index + 1) * q]
    }

    pub fn num_pixels(&self) -> usize {
        self.height * self.width
    }
}

/// Nonzero entries of one soft-encoded pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SoftTarget {
    pub bin: u16,
    pub weight: f32,
}

/// Soft-encoded targets kept in sparse form: exactly `k` entries per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseDistribution {
    pub height: usize,
    pub width: usize,
    pub k: usize,
    pub entries: Vec<SoftTarget>,
}

impl SparseDistribution {
    pub fn pixel(&self, index: usize) -> &[SoftTarget] {
        &self.entries[index * self.k..(index + 1) * self.k]
    }

    pub fn to_dense(&self, grid: Arc<AbBinGrid>) -> ColorDistribution {
        let q = grid.len();
        let mut probs = vec![0.0f32; self.height * self.width * q];
        for (pixel, row) in probs.chunks_exact_mut(q).enumerate() {
            for t in self.pixel(pixel) {
                row[usize::from(t.bin)] += t.weight;
            }
        }
        ColorDistribution {
            height: self.height,
            width: self.width,
            probs,
            grid,
        }
    }
}

fn check_ab(height: usize, width: usize, ab: &[f32]) -> Result<()> {
    if ab.len() != 2 * height * width {
        return Err(Error::shape(format!(
            "expected {} ab values for {height}x{width}, got {}",
            2 * height * width,
            ab.len()
        )));
    }
    if ab.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("ab"));
    }
    Ok(())
}

/// Soft-encodes ground-truth chroma: each pixel spreads its mass over its `k`
/// nearest bins with Gaussian weights `exp(-d^2 / (2 sigma^2))`.
pub fn encode_soft_sparse(
    height: usize,
    width: usize,
    ab: &[f32],
    grid: &AbBinGrid,
    k: usize,
    sigma: f32,
) -> Result<SparseDistribution> {
    check_ab(height, width, ab)?;
    if k == 0 || k > grid.len() {
        return Err(Error::invalid(format!("k must be in 1..={}, got {k}", grid.len())));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!("sigma must be positive, got {sigma}")));
    }
    let inv_two_sigma2 = 1.0 / (2.0 * f64::from(sigma) * f64::from(sigma));
    let mut entries = Vec::with_capacity(height * width * k);
    // (squared distance, bin) of the k best so far, kept sorted.
    let mut best: Vec<(f32, u16)> = Vec::with_capacity(k + 1);
    for px in ab.chunks_exact(2) {
        best.clear();
        for (bin, c) in grid.centers().iter().enumerate() {
            let da = px[0] - c[0];
            let db = px[1] - c[1];
            let d2 = da * da + db * db;
            if best.len() == k && d2 >= best[k - 1].0 {
                continue;
            }
            let pos = best.partition_point(|&(d, _)| d <= d2);
            best.insert(pos, (d2, bin as u16));
            best.truncate(k);
        }
        let d_min = f64::from(best[0].0);
        let weights: Vec<f64> = best
            .iter()
            .map(|&(d2, _)| (-(f64::from(d2) - d_min) * inv_two_sigma2).exp())
            .collect();
        let total: f64 = weights.iter().sum();
        entries.extend(best.iter().zip(&weights).map(|(&(_, bin), w)| SoftTarget {
            bin,
            weight: (w / total) as f32,
        }));
    }
    Ok(SparseDistribution {
        height,
        width,
        k,
        entries,
    })
}

/// Dense form of [`encode_soft_sparse`].
pub fn encode_soft(
    height: usize,
    width: usize,
    ab: &[f32],
    grid: Arc<AbBinGrid>,
    k: usize,
    sigma: f32,
) -> Result<ColorDistribution> {
    Ok(encode_soft_sparse(height, width, ab, &grid, k, sigma)?.to_dense(grid))
}

/// Index of the nearest bin for every pixel; ties go to the lowest index.
pub fn encode_hard(ab: &[f32], grid: &AbBinGrid) -> Result<Vec<usize>> {
    if ab.len() % 2 != 0 {
        return Err(Error::shape("ab must hold pairs"));
    }
    if ab.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("ab"));
    }
    Ok(ab
        .chunks_exact(2)
        .map(|px| {
            let mut best = (f32::INFINITY, 0);
            for (bin, c) in grid.centers().iter().enumerate() {
                let da = px[0] - c[0];
                let db = px[1] - c[1];
                let d2 = da * da + db * db;
                if d2 < best.0 {
                    best = (d2, bin);
                }
            }
            best.1
        })
        .collect())
}

/// Annealed-mean decoding: sharpen each pixel's distribution to
/// `p^(1/T) / sum(p^(1/T))` and return the expected bin center.
///
/// Zero-probability bins stay at zero. A pixel with no mass at all is an
/// error. Output is interleaved `ab`, one pair per pixel.
pub fn decode_annealed_mean(dist: &ColorDistribution, temperature: f32) -> Result<Vec<f32>> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::invalid(format!("temperature must be positive, got {temperature}")));
    }
    let inv_t = 1.0 / f64::from(temperature);
    let centers = dist.grid.centers();
    let mut out = Vec::with_capacity(dist.num_pixels() * 2);
    let mut logs = vec![0.0f64; dist.q()];
    for pixel in 0..dist.num_pixels() {
        let row = dist.pixel(pixel);
        let mut max_log = f64::NEG_INFINITY;
        for (slot, &p) in logs.iter_mut().zip(row) {
            *slot = if p > 0.0 { f64::from(p).ln() } else { f64::NEG_INFINITY };
            max_log = max_log.max(*slot);
        }
        if max_log == f64::NEG_INFINITY {
            return Err(Error::EmptyDistribution { pixel });
        }
        let (mut total, mut a, mut b) = (0.0f64, 0.0f64, 0.0f64);
        for (&lg, c) in logs.iter().zip(centers) {
            if lg == f64::NEG_INFINITY {
                continue;
            }
            let w = ((lg - max_log) * inv_t).exp();
            total += w;
            a += w * f64::from(c[0]);
            b += w * f64::from(c[1]);
        }
        out.push((a / total) as f32);
        out.push((b / total) as f32);
    }
    Ok(out)
}
