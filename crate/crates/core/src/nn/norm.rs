use super::param::{join, Module, Param};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Per-channel batch normalization over `(batch, height, width)`.
///
/// Training mode normalizes with the biased batch variance and folds the
/// unbiased one into the running estimate; eval mode uses the running
/// statistics only.
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub weight: Param,
    pub bias: Param,
    pub running_mean: Param,
    pub running_var: Param,
    pub momentum: f32,
    pub eps: f32,
    cache: Option<Cache>,
}

#[derive(Debug, Clone)]
struct Cache {
    xhat: Tensor,
    inv_std: Vec<f32>,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        Self {
            weight: Param::filled(vec![channels], 1.0),
            bias: Param::filled(vec![channels], 0.0),
            running_mean: Param::buffer(vec![channels], 0.0),
            running_var: Param::buffer(vec![channels], 1.0),
            momentum: 0.1,
            eps: 1e-5,
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.weight.len()
    }

    pub fn forward(&mut self, x: &Tensor, train: bool) -> Result<Tensor> {
        let channels = self.channels();
        if x.channels() != channels {
            return Err(Error::shape(format!(
                "batch norm expects {channels} channels, got {}",
                x.channels()
            )));
        }
        let count = x.channel_len();
        let mut y = x.clone();
        if !train {
            for c in 0..channels {
                let inv = 1.0 / (self.running_var.value[c] + self.eps).sqrt();
                let scale = self.weight.value[c] * inv;
                let shift = self.bias.value[c] - self.running_mean.value[c] * scale;
                y.channel_mut(c).iter_mut().for_each(|v| *v = *v * scale + shift);
            }
            self.cache = None;
            return Ok(y);
        }
        if count < 2 {
            return Err(Error::shape("batch norm needs more than one value per channel in training"));
        }
        let mut xhat = x.clone();
        let mut inv_std = vec![0.0; channels];
        for c in 0..channels {
            let src = x.channel(c);
            let mean = src.iter().map(|&v| v as f64).sum::<f64>() / count as f64;
            let var = src.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / count as f64;
            let inv = 1.0 / (var + self.eps as f64).sqrt();
            inv_std[c] = inv as f32;
            let (g, b) = (self.weight.value[c], self.bias.value[c]);
            for ((h, o), &v) in xhat.channel_mut(c).iter_mut().zip(y.channel_mut(c)).zip(src) {
                *h = ((v as f64 - mean) * inv) as f32;
                *o = g * *h + b;
            }
            let m = self.momentum;
            let unbiased = var * count as f64 / (count - 1) as f64;
            self.running_mean.value[c] = (1.0 - m) * self.running_mean.value[c] + m * mean as f32;
            self.running_var.value[c] = (1.0 - m) * self.running_var.value[c] + m * unbiased as f32;
        }
        self.cache = Some(Cache { xhat, inv_std });
        Ok(y)
    }

    pub fn backward(&mut self, gy: &Tensor) -> Result<Tensor> {
        let Cache { xhat, inv_std } = self
            .cache
            .take()
            .ok_or_else(|| Error::shape("batch norm backward without a training forward"))?;
        if !gy.same_shape(&xhat) {
            return Err(Error::shape(format!("batch norm gradient has shape {:?}", gy.dims())));
        }
        let count = xhat.channel_len() as f64;
        let mut gx = gy.clone();
        for (c, &inv) in inv_std.iter().enumerate() {
            let g = gy.channel(c);
            let h = xhat.channel(c);
            let sum_g: f64 = g.iter().map(|&v| v as f64).sum();
            let sum_gh: f64 = g.iter().zip(h).map(|(&a, &b)| a as f64 * b as f64).sum();
            self.bias.grad[c] += sum_g as f32;
            self.weight.grad[c] += sum_gh as f32;
            let scale = self.weight.value[c] as f64 * inv as f64 / count;
            for ((o, &gv), &hv) in gx.channel_mut(c).iter_mut().zip(g).zip(h) {
                *o = (scale * (count * gv as f64 - sum_g - hv as f64 * sum_gh)) as f32;
            }
        }
        Ok(gx)
    }
}

impl Module for BatchNorm2d {
    fn visit_params<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        out.push((join(prefix, "weight"), &mut self.weight));
        out.push((join(prefix, "bias"), &mut self.bias));
        out.push((join(prefix, "running_mean"), &mut self.running_mean));
        out.push((join(prefix, "running_var"), &mut self.running_var));
    }
}
