//! Fully convolutional colorizer that classifies each pixel into one of the
//! quantized ab bins.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::color::{
    decode_annealed_mean, encode_soft_sparse, lab_to_rgb, AbBinGrid, ColorDistribution, LabImage, RgbImage,
    SparseDistribution, DEFAULT_SOFT_K, DEFAULT_SOFT_SIGMA, Q,
};
use crate::error::{Error, Result};
use crate::nn::{join, BatchNorm2d, Bilinear, Conv2d, ConvTranspose2d, Init, LeakyRelu, Module, Param, Tensor};

/// Probability floor applied before taking logs in the loss.
pub const PROB_FLOOR: f64 = 1e-10;

/// How the coarse logit map is brought back to (or compared at) image
/// resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Bilinearly upsample logits to full size, then softmax.
    UpsampleBilinear,
    /// Learned transposed convolution (kernel = stride = feature stride).
    UpsampleDeconv,
    /// Keep the coarse map; targets are pooled down instead.
    DownsampleTarget,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::UpsampleBilinear, Variant::UpsampleDeconv, Variant::DownsampleTarget];

    pub fn name(self) -> &'static str {
        match self {
            Variant::UpsampleBilinear => "bilinear",
            Variant::UpsampleDeconv => "deconv",
            Variant::DownsampleTarget => "downsample",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown variant {s:?}; expected bilinear, deconv or downsample")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub block_channels: Vec<usize>,
    /// 3x3 conv + ReLU layers in each block.
    pub convs_per_block: Vec<usize>,
    pub dilations: Vec<usize>,
    pub variant: Variant,
    pub q: usize,
    /// Output stride; the last conv of each of the first `log2(stride)`
    /// blocks has stride 2.
    pub feature_stride: usize,
}

impl ClassifierConfig {
    pub fn new(variant: Variant) -> Self {
        Self {
            block_channels: vec![16, 32, 64, 128, 128, 128, 128, 64],
            convs_per_block: vec![2, 2, 3, 3, 3, 3, 3, 3],
            dilations: vec![1, 1, 1, 1, 2, 2, 1, 1],
            variant,
            q: Q,
            feature_stride: 4,
        }
    }

    /// Two small blocks; used for gradient checks and smoke tests.
    pub fn tiny(variant: Variant) -> Self {
        Self {
            block_channels: vec![4, 8],
            convs_per_block: vec![1, 1],
            dilations: vec![1, 1],
            variant,
            q: Q,
            feature_stride: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.block_channels.len();
        if n == 0 || self.convs_per_block.len() != n || self.dilations.len() != n {
            return Err(Error::Config(
                "block_channels, convs_per_block and dilations must be non-empty and the same length".into(),
            ));
        }
        if self.q != Q {
            return Err(Error::Config(format!("q must be {Q}, got {}", self.q)));
        }
        if self.block_channels.iter().chain(&self.convs_per_block).chain(&self.dilations).any(|&v| v == 0) {
            return Err(Error::Config("channel, conv and dilation counts must be positive".into()));
        }
        if !self.feature_stride.is_power_of_two() || self.downsampling_blocks() > n {
            return Err(Error::Config(format!(
                "feature_stride {} must be a power of two with at most one halving per block",
                self.feature_stride
            )));
        }
        Ok(())
    }

    fn downsampling_blocks(&self) -> usize {
        self.feature_stride.trailing_zeros() as usize
    }

    /// Spatial size of the logits for an `h x w` input.
    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        match self.variant {
            Variant::DownsampleTarget => (h / self.feature_stride, w / self.feature_stride),
            _ => (h, w),
        }
    }
}

/// Pre-softmax scores for one image, pixel-major (`logits[pixel * q + bin]`).
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierOutput {
    pub height: usize,
    pub width: usize,
    pub logits: Vec<f32>,
}

impl ClassifierOutput {
    /// Extracts image `n` from a channel-major logit tensor.
    pub fn from_tensor(logits: &Tensor, n: usize) -> Self {
        let (q, _, h, w) = logits.dims();
        let planes = logits.image(n);
        let plane = h * w;
        let mut out = vec![0.0; q * plane];
        for (bin, chunk) in planes.chunks_exact(plane).enumerate() {
            for (p, &v) in chunk.iter().enumerate() {
                out[p * q + bin] = v;
            }
        }
        Self {
            height: h,
            width: w,
            logits: out,
        }
    }

    pub fn distribution(&self, grid: Arc<AbBinGrid>) -> Result<ColorDistribution> {
        ColorDistribution::from_logits(self.height, self.width, &self.logits, grid)
    }
}

#[derive(Debug, Clone)]
struct ConvBlock {
    convs: Vec<Conv2d>,
    relus: Vec<LeakyRelu>,
    bn: BatchNorm2d,
}

impl ConvBlock {
    fn forward(&mut self, x: &Tensor, train: bool) -> Result<Tensor> {
        let mut h = x.clone();
        for (conv, relu) in self.convs.iter_mut().zip(&mut self.relus) {
            h = conv.forward(&h, train)?;
            h = relu.forward(&h, train);
        }
        self.bn.forward(&h, train)
    }

    fn backward(&mut self, gy: &Tensor) -> Result<Tensor> {
        let mut g = self.bn.backward(gy)?;
        for (conv, relu) in self.convs.iter_mut().zip(&mut self.relus).rev() {
            g = relu.backward(&g)?;
            g = conv.backward(&g)?;
        }
        Ok(g)
    }
}

impl Module for ConvBlock {
    fn visit_params<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        for (i, conv) in self.convs.iter_mut().enumerate() {
            conv.visit_params(&join(prefix, &format!("conv{i}")), out);
        }
        self.bn.visit_params(&join(prefix, "bn"), out);
    }
}

#[derive(Debug, Clone)]
enum Head {
    Bilinear(Bilinear),
    Deconv(ConvTranspose2d),
    Coarse,
}

#[derive(Debug, Clone)]
pub struct ClassifierNet {
    config: ClassifierConfig,
    blocks: Vec<ConvBlock>,
    classify: Conv2d,
    head: Head,
    grid: Arc<AbBinGrid>,
}

impl ClassifierNet {
    pub fn new(config: ClassifierConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let down = config.downsampling_blocks();
        let mut blocks = Vec::with_capacity(config.block_channels.len());
        let mut cin = 1;
        for (b, (&cout, (&n, &d))) in config
            .block_channels
            .iter()
            .zip(config.convs_per_block.iter().zip(&config.dilations))
            .enumerate()
        {
            let mut convs = Vec::with_capacity(n);
            for i in 0..n {
                let stride = if b < down && i == n - 1 { 2 } else { 1 };
                let (dil, pad) = if stride == 2 { (1, 1) } else { (d, d) };
                let he = Init::Normal {
                    mean: 0.0,
                    std: (2.0 / (cin * 9) as f32).sqrt(),
                };
                convs.push(Conv2d::new(cin, cout, 3, stride, pad, dil, true, he, &mut rng));
                cin = cout;
            }
            blocks.push(ConvBlock {
                relus: vec![LeakyRelu::relu(); n],
                convs,
                bn: BatchNorm2d::new(cout),
            });
        }
        let classify = Conv2d::new(cin, config.q, 1, 1, 0, 1, true, Init::fan_in(cin), &mut rng);
        let s = config.feature_stride;
        let head = match config.variant {
            Variant::UpsampleBilinear => Head::Bilinear(Bilinear::new(0, 0)),
            Variant::UpsampleDeconv => Head::Deconv(ConvTranspose2d::new(
                config.q,
                config.q,
                s,
                s,
                0,
                true,
                Init::fan_in(config.q * s * s),
                &mut rng,
            )),
            Variant::DownsampleTarget => Head::Coarse,
        };
        Ok(Self {
            config,
            blocks,
            classify,
            head,
            grid: AbBinGrid::standard(),
        })
    }

    pub fn config(&self) -> &ClassifierConfig {
        &self.config
    }

    pub fn grid(&self) -> &Arc<AbBinGrid> {
        &self.grid
    }

    /// Maps lightness in `[0, 100]` to the network's `[-1, 1]` input range.
    pub fn normalize_l(l: &[f32]) -> Vec<f32> {
        l.iter().map(|v| v / 50.0 - 1.0).collect()
    }

    /// Stacks lightness planes into a normalized `1 x N x H x W` input.
    pub fn input_tensor(height: usize, width: usize, planes: &[&[f32]]) -> Result<Tensor> {
        let imgs: Vec<Vec<f32>> = planes.iter().map(|l| Self::normalize_l(l)).collect();
        Tensor::from_images(1, height, width, &imgs)
    }

    /// Logits as a `q x N x h x w` tensor from a normalized input.
    pub fn forward(&mut self, input: &Tensor, train: bool) -> Result<Tensor> {
        let (c, _, h, w) = input.dims();
        let s = self.config.feature_stride;
        if c != 1 || h == 0 || w == 0 || h % s != 0 || w % s != 0 {
            return Err(Error::shape(format!(
                "classifier input {:?} must be single-channel with sides divisible by {s}",
                input.dims()
            )));
        }
        let mut x = input.clone();
        for block in &mut self.blocks {
            x = block.forward(&x, train)?;
        }
        let logits = self.classify.forward(&x, train)?;
        match &mut self.head {
            Head::Bilinear(up) => {
                up.out_h = h;
                up.out_w = w;
                up.forward(&logits, train)
            }
            Head::Deconv(deconv) => deconv.forward(&logits, train),
            Head::Coarse => Ok(logits),
        }
    }

    /// Backpropagates a logit gradient from the last training forward.
    pub fn backward(&mut self, grad_logits: &Tensor) -> Result<()> {
        let mut g = match &mut self.head {
            Head::Bilinear(up) => up.backward(grad_logits)?,
            Head::Deconv(deconv) => deconv.backward(grad_logits)?,
            Head::Coarse => grad_logits.clone(),
        };
        g = self.classify.backward(&g)?;
        for block in self.blocks.iter_mut().rev() {
            g = block.backward(&g)?;
        }
        Ok(())
    }

    /// Interleaved ab predictions at input resolution for each plane.
    pub fn predict_ab(&mut self, height: usize, width: usize, planes: &[&[f32]], temperature: f32) -> Result<Vec<Vec<f32>>> {
        let input = Self::input_tensor(height, width, planes)?;
        let logits = self.forward(&input, false)?;
        let (_, n, oh, ow) = logits.dims();
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let dist = ClassifierOutput::from_tensor(&logits, i).distribution(self.grid.clone())?;
            let ab = decode_annealed_mean(&dist, temperature)?;
            out.push(if (oh, ow) == (height, width) {
                ab
            } else {
                upsample_ab(&ab, oh, ow, height, width)?
            });
        }
        Ok(out)
    }
}

impl Module for ClassifierNet {
    fn visit_params<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        for (i, block) in self.blocks.iter_mut().enumerate() {
            block.visit_params(&join(prefix, &format!("block{i}")), out);
        }
        self.classify.visit_params(&join(prefix, "classify"), out);
        if let Head::Deconv(deconv) = &mut self.head {
            deconv.visit_params(&join(prefix, "upsample"), out);
        }
    }
}

/// Bilinearly resizes an interleaved ab field.
pub(crate) fn upsample_ab(ab: &[f32], h: usize, w: usize, out_h: usize, out_w: usize) -> Result<Vec<f32>> {
    let planes: Vec<f32> = (0..2).flat_map(|c| ab.iter().skip(c).step_by(2).copied()).collect();
    let t = Tensor::from_vec(2, 1, h, w, planes)?;
    let up = Bilinear::new(out_h, out_w).forward(&t, false)?;
    let plane = out_h * out_w;
    let mut out = Vec::with_capacity(2 * plane);
    for p in 0..plane {
        out.push(up.data()[p]);
        out.push(up.data()[plane + p]);
    }
    Ok(out)
}

/// Averages an interleaved ab field over non-overlapping `s x s` windows.
pub fn avg_pool_ab(ab: &[f32], h: usize, w: usize, s: usize) -> Result<Vec<f32>> {
    if ab.len() != 2 * h * w || s == 0 || h % s != 0 || w % s != 0 {
        return Err(Error::shape(format!("cannot pool a {h}x{w} ab field by {s}")));
    }
    let (oh, ow) = (h / s, w / s);
    let mut out = vec![0.0f32; 2 * oh * ow];
    let norm = 1.0 / (s * s) as f32;
    for y in 0..h {
        for x in 0..w {
            let o = ((y / s) * ow + x / s) * 2;
            out[o] += ab[(y * w + x) * 2] * norm;
            out[o + 1] += ab[(y * w + x) * 2 + 1] * norm;
        }
    }
    Ok(out)
}

/// Soft-encoded training targets for one image at the network's output
/// resolution.
pub fn classifier_targets(image: &LabImage, config: &ClassifierConfig) -> Result<SparseDistribution> {
    let (h, w) = (image.height(), image.width());
    let grid = AbBinGrid::standard();
    match config.variant {
        Variant::DownsampleTarget => {
            let s = config.feature_stride;
            let pooled = avg_pool_ab(image.ab(), h, w, s)?;
            encode_soft_sparse(h / s, w / s, &pooled, &grid, DEFAULT_SOFT_K, DEFAULT_SOFT_SIGMA)
        }
        _ => encode_soft_sparse(h, w, image.ab(), &grid, DEFAULT_SOFT_K, DEFAULT_SOFT_SIGMA),
    }
}

/// Cross-entropy `-sum_{pixels} sum_q Z log max(Zhat, floor)` for one image.
pub fn classification_loss(zhat: &ColorDistribution, z: &ColorDistribution) -> Result<f64> {
    if (zhat.height(), zhat.width(), zhat.q()) != (z.height(), z.width(), z.q()) {
        return Err(Error::shape("prediction and target distributions differ in shape"));
    }
    if zhat.probs().iter().chain(z.probs()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("distribution"));
    }
    Ok(zhat
        .probs()
        .iter()
        .zip(z.probs())
        .filter(|(_, &t)| t > 0.0)
        .map(|(&p, &t)| -f64::from(t) * f64::from(p).max(PROB_FLOOR).ln())
        .sum())
}

/// Batch loss (mean over images of the per-image sum) against sparse
/// targets, and its gradient with respect to the logits.
pub fn sparse_loss_and_grad(logits: &Tensor, targets: &[SparseDistribution]) -> Result<(f64, Tensor)> {
    let (q, n, h, w) = logits.dims();
    if targets.len() != n || targets.iter().any(|t| (t.height, t.width) != (h, w)) {
        return Err(Error::shape(format!(
            "{} targets do not match logits {:?}",
            targets.len(),
            logits.dims()
        )));
    }
    if !logits.all_finite() {
        return Err(Error::NonFinite("logits"));
    }
    let plane = h * w;
    let stride = n * plane;
    let data = logits.data();
    let mut grad = Tensor::zeros(q, n, h, w);
    let g = grad.data_mut();
    let inv_n = 1.0 / n as f64;
    let mut exps = vec![0.0f64; q];
    let mut loss = 0.0f64;
    for (img, target) in targets.iter().enumerate() {
        for p in 0..plane {
            let base = img * plane + p;
            let mut max = f32::NEG_INFINITY;
            for c in 0..q {
                max = max.max(data[c * stride + base]);
            }
            let mut sum = 0.0f64;
            for (c, e) in exps.iter_mut().enumerate() {
                *e = f64::from(data[c * stride + base] - max).exp();
                sum += *e;
            }
            for (c, e) in exps.iter().enumerate() {
                g[c * stride + base] = (e / sum * inv_n) as f32;
            }
            for t in target.pixel(p) {
                let c = usize::from(t.bin);
                let prob = exps[c] / sum;
                loss -= f64::from(t.weight) * prob.max(PROB_FLOOR).ln();
                g[c * stride + base] -= (f64::from(t.weight) * inv_n) as f32;
            }
        }
    }
    Ok((loss * inv_n, grad))
}

/// Colorizes one lightness plane with the classifier.
pub fn colorize_classifier(net: &mut ClassifierNet, gray: &LabImage, temperature: f32) -> Result<RgbImage> {
    let ab = net
        .predict_ab(gray.height(), gray.width(), &[gray.l()], temperature)?
        .pop()
        .expect("one image in, one out");
    Ok(lab_to_rgb(&gray.with_ab(ab)?))
}
