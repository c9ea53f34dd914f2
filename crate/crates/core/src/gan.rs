//! Conditional GAN colorizer: a U-Net generator predicting ab from L and a
//! convolutional discriminator scoring (L, ab) pairs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::color::{lab_to_rgb, LabImage, RgbImage, AB_RANGE};
use crate::error::{Error, Result};
use crate::nn::{
    join, sigmoid, Adam, AdamConfig, BatchNorm2d, Conv2d, ConvTranspose2d, Init, LeakyRelu, Module, Param, Tanh,
    Tensor,
};

/// Floor applied inside every log of the adversarial losses.
pub const LOG_FLOOR: f64 = 1e-10;
pub const DEFAULT_LAMBDA: f32 = 100.0;
const LEAK: f32 = 0.2;

fn weight_init() -> Init {
    Init::Normal { mean: 0.0, std: 0.02 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    /// Output channels of each stride-2 encoder block.
    pub enc_channels: Vec<usize>,
    /// Channels of the last decoder block, which is joined with the input.
    pub final_channels: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            enc_channels: vec![64, 128, 256, 512],
            final_channels: 32,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.enc_channels.is_empty() || self.enc_channels.iter().any(|&c| c == 0) || self.final_channels == 0 {
            return Err(Error::Config("generator channel counts must be positive and non-empty".into()));
        }
        Ok(())
    }

    pub fn depth(&self) -> usize {
        self.enc_channels.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    /// Channels of the stride-2 blocks; each doubles the previous.
    pub channels: Vec<usize>,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            channels: vec![64, 128, 256],
        }
    }
}

impl DiscriminatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.channels[0] == 0 {
            return Err(Error::Config("discriminator needs at least one block".into()));
        }
        if self.channels.windows(2).any(|w| w[1] != 2 * w[0]) {
            return Err(Error::Config(format!(
                "discriminator channels must double per block, got {:?}",
                self.channels
            )));
        }
        Ok(())
    }
}

/// Strided conv, optional batch norm, leaky ReLU.
#[derive(Debug, Clone)]
struct DownBlock {
    conv: Conv2d,
    bn: Option<BatchNorm2d>,
    act: LeakyRelu,
}

impl DownBlock {
    fn new(cin: usize, cout: usize, bn: bool, rng: &mut ChaCha8Rng) -> Self {
        Self {
            conv: Conv2d::new(cin, cout, 4, 2, 1, 1, !bn, weight_init(), rng),
            bn: bn.then(|| BatchNorm2d::new(cout)),
            act: LeakyRelu::new(LEAK),
        }
    }

    fn forward(&mut self, x: &Tensor, train: bool) -> Result<Tensor> {
        let mut h = self.conv.forward(x, train)?;
        if let Some(bn) = &mut self.bn {
            h = bn.forward(&h, train)?;
        }
        Ok(self.act.forward(&h, train))
    }

    fn backward(&mut self, gy: &Tensor) -> Result<Tensor> {
        let mut g = self.act.backward(gy)?;
        if let Some(bn) = &mut self.bn {
            g = bn.backward(&g)?;
        }
        self.conv.backward(&g)
    }
}

impl Module for DownBlock {
    fn visit_params<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        self.conv.visit_params(&join(prefix, "conv"), out);
        if let Some(bn) = &mut self.bn {
            bn.visit_params(&join(prefix, "bn"), out);
        }
    }
}

/// Transposed conv up, concatenation with the skip, 3x3 conv, BN, ReLU.
#[derive(Debug, Clone)]
struct UpBlock {
    up: ConvTranspose2d,
    up_channels: usize,
    conv: Conv2d,
    bn: BatchNorm2d,
    act: LeakyRelu,
}

impl UpBlock {
    fn forward(&mut self, x: &Tensor, skip: &Tensor, train: bool) -> Result<Tensor> {
        let up = self.up.forward(x, train)?;
        let cat = Tensor::concat_channels(&[&up, skip])?;
        let h = self.conv.forward(&cat, train)?;
        let h = self.bn.forward(&h, train)?;
        Ok(self.act.forward(&h, train))
    }

    /// Returns the gradients for the block input and the skip.
    fn backward(&mut self, gy: &Tensor) -> Result<(Tensor, Tensor)> {
        let g = self.act.backward(gy)?;
        let g = self.bn.backward(&g)?;
        let g = self.conv.backward(&g)?;
        let (g_up, g_skip) = g.split_channels(self.up_channels);
        Ok((self.up.backward(&g_up)?, g_skip))
    }
}

impl Module for UpBlock {
    fn visit_params<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        self.up.visit_params(&join(prefix, "up"), out);
        self.conv.visit_params(&join(prefix, "conv"), out);
        self.bn.visit_params(&join(prefix, "bn"), out);
    }
}

/// U-Net generator. Input is normalized L (`1 x N x H x W`), output is
/// normalized ab in `(-1, 1)` (`2 x N x H x W`).
#[derive(Debug, Clone)]
pub struct Generator {
    config: GeneratorConfig,
    encoders: Vec<DownBlock>,
    /// `decoders[j]` upsamples to the resolution of encoder input `j`.
    decoders: Vec<UpBlock>,
    out: Conv2d,
    tanh: Tanh,
    skips: bool,
}

impl Generator {
    pub fn new(config: GeneratorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ch = &config.enc_channels;
        let mut encoders = Vec::with_capacity(ch.len());
        let mut cin = 1;
        for &c in ch {
            encoders.push(DownBlock::new(cin, c, true, &mut rng));
            cin = c;
        }
        let mut decoders = Vec::with_capacity(ch.len());
        for j in 0..ch.len() {
            let (up_channels, skip_channels) = if j == 0 {
                (config.final_channels, 1)
            } else {
                (ch[j - 1], ch[j - 1])
            };
            decoders.push(UpBlock {
                up: ConvTranspose2d::new(ch[j], up_channels, 4, 2, 1, false, weight_init(), &mut rng),
                up_channels,
                conv: Conv2d::new(up_channels + skip_channels, up_channels, 3, 1, 1, 1, false, weight_init(), &mut rng),
                bn: BatchNorm2d::new(up_channels),
                act: LeakyRelu::relu(),
            });
        }
        let out = Conv2d::new(config.final_channels, 2, 1, 1, 0, 1, true, weight_init(), &mut rng);
        Ok(Self {
            config,
            encoders,
            decoders,
            out,
            tanh: Tanh::default(),
            skips: true,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    /// With skips off, zeros are concatenated in place of encoder features.
    pub fn set_skip_connections(&mut self, enabled: bool) {
        self.skips = enabled;
    }

    /// The final 1x1 conv, exposed for inspection and tests.
    pub fn output_layer(&mut self) -> &mut Conv2d {
        &mut self.out
    }

    pub fn forward(&mut self, l: &Tensor, train: bool) -> Result<Tensor> {
        let (c, _, h, w) = l.dims();
        let f = 1usize << self.config.depth();
        if c != 1 || h == 0 || w == 0 || h % f != 0 || w % f != 0 {
            return Err(Error::shape(format!(
                "generator input {:?} must be single-channel with sides divisible by {f}",
                l.dims()
            )));
        }
        let mut feats = Vec::with_capacity(self.encoders.len() + 1);
        feats.push(l.clone());
        for enc in &mut self.encoders {
            let h = enc.forward(feats.last().expect("non-empty"), train)?;
            feats.push(h);
        }
        let mut h = feats.pop().expect("non-empty");
        for j in (0..self.decoders.len()).rev() {
            let skip = feats.pop().expect("one skip per decoder");
            let skip = if self.skips {
                skip
            } else {
                let (c, n, hh, ww) = skip.dims();
                Tensor::zeros(c, n, hh, ww)
            };
            h = self.decoders[j].forward(&h, &skip, train)?;
        }
        let y = self.out.forward(&h, train)?;
        Ok(self.tanh.forward(&y, train))
    }

    /// Backpropagates an output gradient from the last training forward.
    pub fn backward(&mut self, grad_out: &Tensor) -> Result<()> {
        let g = self.tanh.backward(grad_out)?;
        let mut g = self.out.backward(&g)?;
        let mut skip_grads = Vec::with_capacity(self.decoders.len());
        for dec in &mut self.decoders {
            let (gx, gs) = dec.backward(&g)?;
            skip_grads.push(gs);
            g = gx;
        }
        for i in (0..self.encoders.len()).rev() {
            g = self.encoders[i].backward(&g)?;
            if i > 0 && self.skips {
                g.add_assign(&skip_grads[i]);
            }
        }
        Ok(())
    }
}

impl Module for Generator {
    fn visit_params<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        for (i, e) in self.encoders.iter_mut().enumerate() {
            e.visit_params(&join(prefix, &format!("enc{i}")), out);
        }
        for (j, d) in self.decoders.iter_mut().enumerate() {
            d.visit_params(&join(prefix, &format!("dec{j}")), out);
        }
        self.out.visit_params(&join(prefix, "out"), out);
    }
}

/// Scores `cat(L, ab)` pairs; one logit per image.
#[derive(Debug, Clone)]
pub struct Discriminator {
    config: DiscriminatorConfig,
    blocks: Vec<DownBlock>,
    out: Conv2d,
}

impl Discriminator {
    pub fn new(config: DiscriminatorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut blocks = Vec::with_capacity(config.channels.len());
        let mut cin = 3;
        for (i, &c) in config.channels.iter().enumerate() {
            blocks.push(DownBlock::new(cin, c, i > 0, &mut rng));
            cin = c;
        }
        let out = Conv2d::new(cin, 1, 4, 1, 0, 1, true, weight_init(), &mut rng);
        Ok(Self { config, blocks, out })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.config
    }

    pub fn output_layer(&mut self) -> &mut Conv2d {
        &mut self.out
    }

    /// Logits (`1 x N x 1 x 1`) for normalized `l` and `ab`.
    pub fn forward(&mut self, l: &Tensor, ab: &Tensor, train: bool) -> Result<Tensor> {
        if l.channels() != 1 || ab.channels() != 2 {
            return Err(Error::shape(format!(
                "discriminator expects 1+2 channels, got {}+{}",
                l.channels(),
                ab.channels()
            )));
        }
        let mut h = Tensor::concat_channels(&[l, ab])?;
        let need = 4 << self.blocks.len();
        if (h.height(), h.width()) != (need, need) {
            return Err(Error::shape(format!(
                "discriminator expects {need}x{need} inputs, got {}x{}",
                h.height(),
                h.width()
            )));
        }
        for b in &mut self.blocks {
            h = b.forward(&h, train)?;
        }
        self.out.forward(&h, train)
    }

    /// Probabilities in `(0, 1)`, one per image.
    pub fn scores(&mut self, l: &Tensor, ab: &Tensor) -> Result<Vec<f32>> {
        Ok(self.forward(l, ab, false)?.data().iter().map(|&v| sigmoid(v)).collect())
    }

    /// Returns the gradient with respect to the ab input.
    pub fn backward(&mut self, grad_logits: &Tensor) -> Result<Tensor> {
        let mut g = self.out.backward(grad_logits)?;
        for b in self.blocks.iter_mut().rev() {
            g = b.backward(&g)?;
        }
        Ok(g.split_channels(1).1)
    }
}

impl Module for Discriminator {
    fn visit_params<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_params(&join(prefix, &format!("block{i}")), out);
        }
        self.out.visit_params(&join(prefix, "out"), out);
    }
}

/// Loss components of one batch. `d_real` and `d_fake` are the mean
/// discriminator scores on real and generated pairs, and `d_loss` the
/// discriminator objective; [`generator_loss`] alone cannot see real scores
/// and leaves `d_real` and `d_loss` at zero.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GanLossTerms {
    pub g_adv: f64,
    pub g_l1: f64,
    pub lambda: f64,
    pub d_real: f64,
    pub d_fake: f64,
    pub d_loss: f64,
}

impl GanLossTerms {
    pub fn generator_total(&self) -> f64 {
        self.g_adv + self.lambda * self.g_l1
    }

    pub fn all_finite(&self) -> bool {
        [self.g_adv, self.g_l1, self.lambda, self.d_real, self.d_fake, self.d_loss]
            .iter()
            .all(|v| v.is_finite())
    }
}

fn check_scores(scores: &[f32], what: &'static str) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::invalid(format!("no {what} scores")));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite(what));
    }
    if scores.iter().any(|s| !(0.0..=1.0).contains(s)) {
        return Err(Error::invalid(format!("{what} scores must lie in [0, 1]")));
    }
    Ok(())
}

fn neg_log_mean(values: impl Iterator<Item = f64>, n: usize) -> f64 {
    values.map(|v| -v.max(LOG_FLOOR).ln()).sum::<f64>() / n as f64
}

/// Generator objective terms; the discriminator fields are left at zero.
pub fn generator_loss(d_fake_scores: &[f32], fake_ab: &[f32], real_ab: &[f32], lambda: f32) -> Result<GanLossTerms> {
    check_scores(d_fake_scores, "fake")?;
    if fake_ab.len() != real_ab.len() || fake_ab.is_empty() {
        return Err(Error::shape(format!(
            "fake ab has {} values, real ab {}",
            fake_ab.len(),
            real_ab.len()
        )));
    }
    if fake_ab.iter().chain(real_ab).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("ab"));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!("lambda must be non-negative, got {lambda}")));
    }
    let g_l1 = fake_ab
        .iter()
        .zip(real_ab)
        .map(|(&f, &r)| (f64::from(f) - f64::from(r)).abs())
        .sum::<f64>()
        / fake_ab.len() as f64;
    Ok(GanLossTerms {
        g_adv: neg_log_mean(d_fake_scores.iter().map(|&s| f64::from(s)), d_fake_scores.len()),
        g_l1,
        lambda: f64::from(lambda),
        d_fake: mean(d_fake_scores),
        ..Default::default()
    })
}

/// `-mean ln D(real) - mean ln(1 - D(fake))`.
pub fn discriminator_loss(d_real_scores: &[f32], d_fake_scores: &[f32]) -> Result<f64> {
    check_scores(d_real_scores, "real")?;
    check_scores(d_fake_scores, "fake")?;
    Ok(neg_log_mean(d_real_scores.iter().map(|&s| f64::from(s)), d_real_scores.len())
        + neg_log_mean(d_fake_scores.iter().map(|&s| 1.0 - f64::from(s)), d_fake_scores.len()))
}

fn mean(scores: &[f32]) -> f64 {
    scores.iter().map(|&s| f64::from(s)).sum::<f64>() / scores.len() as f64
}

/// Discriminator loss and mean scores measured during one update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscriminatorStep {
    pub loss: f64,
    pub real_score: f64,
    pub fake_score: f64,
}

/// Generator, discriminator and their optimizers, trained in alternation.
#[derive(Debug, Clone)]
pub struct Gan {
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub g_opt: Adam,
    pub d_opt: Adam,
    pub lambda: f32,
}

impl Gan {
    pub fn new(
        g: GeneratorConfig,
        d: DiscriminatorConfig,
        g_opt: AdamConfig,
        d_opt: AdamConfig,
        lambda: f32,
        seed: u64,
    ) -> Result<Self> {
        Ok(Self {
            generator: Generator::new(g, seed)?,
            discriminator: Discriminator::new(d, seed.wrapping_add(1))?,
            g_opt: Adam::new(g_opt),
            d_opt: Adam::new(d_opt),
            lambda,
        })
    }

    /// One discriminator update on real pairs and (detached) fake pairs.
    /// Loss and scores are measured before the update.
    pub fn discriminator_step(&mut self, l: &Tensor, real_ab: &Tensor, fake_ab: &Tensor) -> Result<DiscriminatorStep> {
        let d = &mut self.discriminator;
        d.zero_grad();
        let n = l.batch() as f32;
        let logits = d.forward(l, real_ab, true)?;
        let real: Vec<f32> = logits.data().iter().map(|&v| sigmoid(v)).collect();
        let g = logits_grad(&logits, real.iter().map(|s| (s - 1.0) / n))?;
        d.backward(&g)?;
        let logits = d.forward(l, fake_ab, true)?;
        let fake: Vec<f32> = logits.data().iter().map(|&v| sigmoid(v)).collect();
        let g = logits_grad(&logits, fake.iter().map(|s| s / n))?;
        d.backward(&g)?;
        let step = DiscriminatorStep {
            loss: discriminator_loss(&real, &fake)?,
            real_score: mean(&real),
            fake_score: mean(&fake),
        };
        self.d_opt.step(d)?;
        Ok(step)
    }

    /// One generator update through the discriminator, whose gradients are
    /// discarded. With `adversarial` off only the L1 term is optimized.
    pub fn generator_step(&mut self, l: &Tensor, real_ab: &Tensor, adversarial: bool) -> Result<(GanLossTerms, Tensor)> {
        self.generator.zero_grad();
        let fake = self.generator.forward(l, true)?;
        let (terms, grad) = self.generator_grad(l, real_ab, &fake, adversarial)?;
        self.generator.backward(&grad)?;
        self.g_opt.step(&mut self.generator)?;
        Ok((terms, fake))
    }

    fn generator_grad(
        &mut self,
        l: &Tensor,
        real_ab: &Tensor,
        fake: &Tensor,
        adversarial: bool,
    ) -> Result<(GanLossTerms, Tensor)> {
        if !fake.same_shape(real_ab) {
            return Err(Error::shape(format!(
                "real ab {:?} does not match generator output {:?}",
                real_ab.dims(),
                fake.dims()
            )));
        }
        let lambda = self.lambda;
        let count = fake.data().len() as f32;
        let mut grad = fake.clone();
        for (g, &r) in grad.data_mut().iter_mut().zip(real_ab.data()) {
            let diff = *g - r;
            *g = if diff > 0.0 {
                lambda / count
            } else if diff < 0.0 {
                -lambda / count
            } else {
                0.0
            };
        }
        let scores = if adversarial {
            let d = &mut self.discriminator;
            let logits = d.forward(l, fake, true)?;
            let s: Vec<f32> = logits.data().iter().map(|&v| sigmoid(v)).collect();
            let n = l.batch() as f32;
            let g = logits_grad(&logits, s.iter().map(|s| (s - 1.0) / n))?;
            grad.add_assign(&d.backward(&g)?);
            d.zero_grad();
            s
        } else {
            vec![1.0; l.batch()]
        };
        let mut terms = generator_loss(&scores, fake.data(), real_ab.data(), lambda)?;
        if !adversarial {
            terms.g_adv = 0.0;
        }
        Ok((terms, grad))
    }

    /// A full iteration: generator forward, discriminator update on the
    /// detached output, then generator update.
    pub fn train_step(&mut self, l: &Tensor, real_ab: &Tensor) -> Result<GanLossTerms> {
        self.generator.zero_grad();
        let fake = self.generator.forward(l, true)?;
        let d = self.discriminator_step(l, real_ab, &fake)?;
        let (mut terms, grad) = self.generator_grad(l, real_ab, &fake, true)?;
        self.generator.backward(&grad)?;
        self.g_opt.step(&mut self.generator)?;
        terms.d_real = d.real_score;
        terms.d_loss = d.loss;
        Ok(terms)
    }
}

fn logits_grad(logits: &Tensor, values: impl Iterator<Item = f32>) -> Result<Tensor> {
    let (c, n, h, w) = logits.dims();
    Tensor::from_vec(c, n, h, w, values.collect())
}

/// Stacks lightness planes into a normalized `1 x N x H x W` tensor.
pub fn l_tensor(height: usize, width: usize, planes: &[&[f32]]) -> Result<Tensor> {
    let imgs: Vec<Vec<f32>> = planes.iter().map(|l| l.iter().map(|v| v / 50.0 - 1.0).collect()).collect();
    Tensor::from_images(1, height, width, &imgs)
}

/// Stacks interleaved ab fields into a normalized `2 x N x H x W` tensor.
pub fn ab_tensor(height: usize, width: usize, fields: &[&[f32]]) -> Result<Tensor> {
    let imgs: Vec<Vec<f32>> = fields
        .iter()
        .map(|ab| {
            (0..2)
                .flat_map(|c| ab.iter().skip(c).step_by(2).map(|v| v / AB_RANGE))
                .collect()
        })
        .collect();
    Tensor::from_images(2, height, width, &imgs)
}

/// Interleaved ab in Lab units for image `n` of a normalized output.
pub fn denormalize_ab(ab: &Tensor, n: usize) -> Vec<f32> {
    let planes = ab.image(n);
    let plane = ab.plane();
    (0..plane)
        .flat_map(|p| [planes[p], planes[plane + p]])
        .map(|v| (v * AB_RANGE).clamp(-AB_RANGE, AB_RANGE))
        .collect()
}

/// Colorizes one lightness plane with the generator in eval mode.
pub fn colorize_gan(generator: &mut Generator, gray: &LabImage) -> Result<RgbImage> {
    let l = l_tensor(gray.height(), gray.width(), &[gray.l()])?;
    let ab = generator.forward(&l, false)?;
    Ok(lab_to_rgb(&gray.with_ab(denormalize_ab(&ab, 0))?))
}
