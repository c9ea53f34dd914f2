use super::tensor::Tensor;
use crate::error::{Error, Result};

fn missing(layer: &str) -> Error {
    Error::shape(format!("{layer} backward without a training forward"))
}

fn check(gy: &Tensor, cached: &Tensor, layer: &str) -> Result<()> {
    if gy.same_shape(cached) {
        Ok(())
    } else {
        Err(Error::shape(format!("{layer} gradient has shape {:?}", gy.dims())))
    }
}

/// Elementwise `max(x, slope * x)`; `slope = 0` is a plain ReLU.
#[derive(Debug, Clone, Default)]
pub struct LeakyRelu {
    pub slope: f32,
    input: Option<Tensor>,
}

impl LeakyRelu {
    pub fn new(slope: f32) -> Self {
        Self { slope, input: None }
    }

    pub fn relu() -> Self {
        Self::new(0.0)
    }

    pub fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        let mut y = x.clone();
        let s = self.slope;
        y.data_mut().iter_mut().for_each(|v| {
            if *v < 0.0 {
                *v *= s
            }
        });
        self.input = train.then(|| x.clone());
        y
    }

    pub fn backward(&mut self, gy: &Tensor) -> Result<Tensor> {
        let x = self.input.take().ok_or_else(|| missing("relu"))?;
        check(gy, &x, "relu")?;
        let mut gx = gy.clone();
        for (g, &v) in gx.data_mut().iter_mut().zip(x.data()) {
            if v < 0.0 {
                *g *= self.slope;
            } else if v == 0.0 && self.slope == 0.0 {
                *g = 0.0;
            }
        }
        Ok(gx)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Tanh {
    output: Option<Tensor>,
}

impl Tanh {
    pub fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        let mut y = x.clone();
        y.data_mut().iter_mut().for_each(|v| *v = v.tanh());
        self.output = train.then(|| y.clone());
        y
    }

    pub fn backward(&mut self, gy: &Tensor) -> Result<Tensor> {
        let y = self.output.take().ok_or_else(|| missing("tanh"))?;
        check(gy, &y, "tanh")?;
        let mut gx = gy.clone();
        for (g, &t) in gx.data_mut().iter_mut().zip(y.data()) {
            *g *= 1.0 - t * t;
        }
        Ok(gx)
    }
}

/// Numerically stable logistic function.
pub fn sigmoid(v: f32) -> f32 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}
