use rand::Rng;

use super::gemm::{gemm, Mat};
use super::param::{join, Init, Module, Param};
use super::tensor::Tensor;
use crate::error::{Error, Result};

// Upper bound on the im2col scratch buffer, in floats; batches are processed
// in image chunks that fit.
const COL_BUDGET: usize = 1 << 21;

/// Sliding-window geometry of a convolution from an `in_h x in_w` image to
/// an `out_h x out_w` one. Transposed convolutions reuse it in reverse.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Geometry {
    channels: usize,
    in_h: usize,
    in_w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    dilation: usize,
    out_h: usize,
    out_w: usize,
}

impl Geometry {
    fn new(channels: usize, in_h: usize, in_w: usize, k: usize, stride: usize, pad: usize, dilation: usize) -> Result<Self> {
        let span = dilation * (k - 1) + 1;
        if in_h + 2 * pad < span || in_w + 2 * pad < span {
            return Err(Error::shape(format!(
                "{in_h}x{in_w} input is smaller than the {span}x{span} receptive field"
            )));
        }
        Ok(Self {
            channels,
            in_h,
            in_w,
            k,
            stride,
            pad,
            dilation,
            out_h: (in_h + 2 * pad - span) / stride + 1,
            out_w: (in_w + 2 * pad - span) / stride + 1,
        })
    }

    fn rows(&self) -> usize {
        self.channels * self.k * self.k
    }

    fn out_plane(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Output positions `o` whose source index `o * stride + offset` falls in
    /// `0..len`.
    fn valid(&self, offset: isize, len: usize, out_len: usize) -> std::ops::Range<usize> {
        let s = self.stride as isize;
        let lo = if offset >= 0 { 0 } else { (-offset + s - 1) / s };
        let hi = (len as isize - offset + s - 1).div_euclid(s).max(0);
        let lo = lo.min(out_len as isize) as usize;
        let hi = (hi as usize).min(out_len);
        lo..hi.max(lo)
    }

    /// Unfolds images `n0..n1` of `x` into `col` (`rows x (n1-n0)*out_plane`).
    fn im2col(&self, x: &[f32], batch: usize, n0: usize, n1: usize, col: &mut [f32]) {
        let pc = (n1 - n0) * self.out_plane();
        let in_plane = self.in_h * self.in_w;
        let s = self.stride;
        for c in 0..self.channels {
            for ky in 0..self.k {
                let oy_off = (ky * self.dilation) as isize - self.pad as isize;
                let ys = self.valid(oy_off, self.in_h, self.out_h);
                for kx in 0..self.k {
                    let ox_off = (kx * self.dilation) as isize - self.pad as isize;
                    let xs = self.valid(ox_off, self.in_w, self.out_w);
                    let row = (c * self.k + ky) * self.k + kx;
                    let dst = &mut col[row * pc..(row + 1) * pc];
                    dst.iter_mut().for_each(|v| *v = 0.0);
                    for n in n0..n1 {
                        let src = &x[(c * batch + n) * in_plane..(c * batch + n + 1) * in_plane];
                        let img = &mut dst[(n - n0) * self.out_plane()..(n - n0 + 1) * self.out_plane()];
                        for oy in ys.clone() {
                            let iy = (oy as isize * s as isize + oy_off) as usize;
                            let src_row = &src[iy * self.in_w..(iy + 1) * self.in_w];
                            let dst_row = &mut img[oy * self.out_w..(oy + 1) * self.out_w];
                            for ox in xs.clone() {
                                dst_row[ox] = src_row[(ox as isize * s as isize + ox_off) as usize];
                            }
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Geometry::im2col`]: accumulates `col` back into `x`.
    fn col2im(&self, col: &[f32], batch: usize, n0: usize, n1: usize, x: &mut [f32]) {
        let pc = (n1 - n0) * self.out_plane();
        let in_plane = self.in_h * self.in_w;
        let s = self.stride;
        for c in 0..self.channels {
            for ky in 0..self.k {
                let oy_off = (ky * self.dilation) as isize - self.pad as isize;
                let ys = self.valid(oy_off, self.in_h, self.out_h);
                for kx in 0..self.k {
                    let ox_off = (kx * self.dilation) as isize - self.pad as isize;
                    let xs = self.valid(ox_off, self.in_w, self.out_w);
                    let row = (c * self.k + ky) * self.k + kx;
                    let src = &col[row * pc..(row + 1) * pc];
                    for n in n0..n1 {
                        let dst = &mut x[(c * batch + n) * in_plane..(c * batch + n + 1) * in_plane];
                        let img = &src[(n - n0) * self.out_plane()..(n - n0 + 1) * self.out_plane()];
                        for oy in ys.clone() {
                            let iy = (oy as isize * s as isize + oy_off) as usize;
                            let dst_row = &mut dst[iy * self.in_w..(iy + 1) * self.in_w];
                            let src_row = &img[oy * self.out_w..(oy + 1) * self.out_w];
                            for ox in xs.clone() {
                                dst_row[(ox as isize * s as isize + ox_off) as usize] += src_row[ox];
                            }
                        }
                    }
                }
            }
        }
    }

    fn chunk(&self) -> usize {
        (COL_BUDGET / (self.rows() * self.out_plane()).max(1)).max(1)
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }
}

/// 2-d convolution with square kernels. Weight layout `[out, in, k, k]`.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Param,
    pub bias: Option<Param>,
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    dilation: usize,
    input: Option<Tensor>,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        dilation: usize,
        bias: bool,
        init: Init,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(kernel >= 1 && stride >= 1 && dilation >= 1);
        let fan_in = in_channels * kernel * kernel;
        let weight = Param::init(vec![out_channels, in_channels, kernel, kernel], init, rng);
        let bias = bias.then(|| match init {
            Init::Uniform { .. } => Param::init(vec![out_channels], Init::fan_in(fan_in), rng),
            _ => Param::filled(vec![out_channels], 0.0),
        });
        Self {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            stride,
            pad,
            dilation,
            input: None,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    fn geometry(&self, x: &Tensor) -> Result<Geometry> {
        if x.channels() != self.in_channels {
            return Err(Error::shape(format!(
                "conv expects {} input channels, got {}",
                self.in_channels,
                x.channels()
            )));
        }
        Geometry::new(self.in_channels, x.height(), x.width(), self.kernel, self.stride, self.pad, self.dilation)
    }

    /// Output spatial size for an `h x w` input.
    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let g = Geometry::new(self.in_channels, h, w, self.kernel, self.stride, self.pad, self.dilation)?;
        Ok((g.out_h, g.out_w))
    }

    /// Forward pass; the input is kept for [`Conv2d::backward`] when `train`.
    pub fn forward(&mut self, x: &Tensor, train: bool) -> Result<Tensor> {
        let g = self.geometry(x)?;
        let batch = x.batch();
        let mut y = Tensor::zeros(self.out_channels, batch, g.out_h, g.out_w);
        let out_plane = g.out_plane();
        let rsc = batch * out_plane;
        let w = Mat::rows(&self.weight.value, self.out_channels, g.rows());
        if g.is_pointwise() {
            let xm = Mat::rows(x.data(), self.in_channels, batch * out_plane);
            gemm(1.0, w, xm, 0.0, y.data_mut(), rsc);
        } else {
            let chunk = g.chunk();
            let mut col = vec![0.0; g.rows() * chunk.min(batch) * out_plane];
            for n0 in (0..batch).step_by(chunk) {
                let n1 = (n0 + chunk).min(batch);
                let pc = (n1 - n0) * out_plane;
                g.im2col(x.data(), batch, n0, n1, &mut col);
                let cm = Mat::rows(&col[..g.rows() * pc], g.rows(), pc);
                gemm(1.0, w, cm, 0.0, &mut y.data_mut()[n0 * out_plane..], rsc);
            }
        }
        if let Some(b) = &self.bias {
            for (c, &bv) in b.value.iter().enumerate() {
                y.channel_mut(c).iter_mut().for_each(|v| *v += bv);
            }
        }
        self.input = train.then(|| x.clone());
        Ok(y)
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, gy: &Tensor) -> Result<Tensor> {
        let x = self
            .input
            .take()
            .ok_or_else(|| Error::shape("conv backward without a training forward"))?;
        let g = self.geometry(&x)?;
        let batch = x.batch();
        let out_plane = g.out_plane();
        if gy.dims() != (self.out_channels, batch, g.out_h, g.out_w) {
            return Err(Error::shape(format!("conv gradient has shape {:?}", gy.dims())));
        }
        let rs_gy = batch * out_plane;
        if let Some(b) = &mut self.bias {
            for (c, gb) in b.grad.iter_mut().enumerate() {
                *gb += gy.channel(c).iter().sum::<f32>();
            }
        }
        let mut gx = Tensor::zeros(self.in_channels, batch, x.height(), x.width());
        let rows = g.rows();
        if g.is_pointwise() {
            let gym = Mat::rows(gy.data(), self.out_channels, rs_gy);
            let xm = Mat::rows(x.data(), self.in_channels, rs_gy);
            gemm(1.0, gym, xm.t(), 1.0, &mut self.weight.grad, rows);
            let w = Mat::rows(&self.weight.value, self.out_channels, rows);
            gemm(1.0, w.t(), gym, 0.0, gx.data_mut(), rs_gy);
        } else {
            let chunk = g.chunk();
            let cap = rows * chunk.min(batch) * out_plane;
            let mut col = vec![0.0; cap];
            let mut gcol = vec![0.0; cap];
            for n0 in (0..batch).step_by(chunk) {
                let n1 = (n0 + chunk).min(batch);
                let pc = (n1 - n0) * out_plane;
                let gym = Mat::new(&gy.data()[n0 * out_plane..], self.out_channels, pc, rs_gy, 1);
                g.im2col(x.data(), batch, n0, n1, &mut col);
                let cm = Mat::rows(&col[..rows * pc], rows, pc);
                gemm(1.0, gym, cm.t(), 1.0, &mut self.weight.grad, rows);
                let w = Mat::rows(&self.weight.value, self.out_channels, rows);
                gemm(1.0, w.t(), gym, 0.0, &mut gcol[..rows * pc], pc);
                g.col2im(&gcol[..rows * pc], batch, n0, n1, gx.data_mut());
            }
        }
        Ok(gx)
    }
}

impl Module for Conv2d {
    fn visit_params<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        out.push((join(prefix, "weight"), &mut self.weight));
        if let Some(b) = &mut self.bias {
            out.push((join(prefix, "bias"), b));
        }
    }
}

/// Transposed 2-d convolution (the adjoint of [`Conv2d`] in its input).
/// Weight layout `[in, out, k, k]`.
#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    pub weight: Param,
    pub bias: Option<Param>,
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    input: Option<Tensor>,
}

impl ConvTranspose2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        init: Init,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(kernel >= 1 && stride >= 1);
        let fan_in = out_channels * kernel * kernel;
        let weight = Param::init(vec![in_channels, out_channels, kernel, kernel], init, rng);
        let bias = bias.then(|| match init {
            Init::Uniform { .. } => Param::init(vec![out_channels], Init::fan_in(fan_in), rng),
            _ => Param::filled(vec![out_channels], 0.0),
        });
        Self {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            stride,
            pad,
            input: None,
        }
    }

    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let grow = |v: usize| ((v - 1) * self.stride + self.kernel).checked_sub(2 * self.pad);
        match (grow(h), grow(w)) {
            (Some(oh), Some(ow)) if oh > 0 && ow > 0 => Ok((oh, ow)),
            _ => Err(Error::shape(format!("transposed conv cannot upsample {h}x{w}"))),
        }
    }

    /// Geometry of the equivalent forward conv from the output back to the input.
    fn geometry(&self, x: &Tensor) -> Result<Geometry> {
        if x.channels() != self.in_channels {
            return Err(Error::shape(format!(
                "transposed conv expects {} input channels, got {}",
                self.in_channels,
                x.channels()
            )));
        }
        let (oh, ow) = self.output_size(x.height(), x.width())?;
        let g = Geometry::new(self.out_channels, oh, ow, self.kernel, self.stride, self.pad, 1)?;
        debug_assert_eq!((g.out_h, g.out_w), (x.height(), x.width()));
        Ok(g)
    }

    pub fn forward(&mut self, x: &Tensor, train: bool) -> Result<Tensor> {
        let g = self.geometry(x)?;
        let batch = x.batch();
        let in_plane = x.plane();
        let rows = g.rows();
        let mut y = Tensor::zeros(self.out_channels, batch, g.in_h, g.in_w);
        let chunk = g.chunk();
        let mut col = vec![0.0; rows * chunk.min(batch) * in_plane];
        let w = Mat::rows(&self.weight.value, self.in_channels, rows);
        for n0 in (0..batch).step_by(chunk) {
            let n1 = (n0 + chunk).min(batch);
            let pc = (n1 - n0) * in_plane;
            let xm = Mat::new(&x.data()[n0 * in_plane..], self.in_channels, pc, batch * in_plane, 1);
            gemm(1.0, w.t(), xm, 0.0, &mut col[..rows * pc], pc);
            g.col2im(&col[..rows * pc], batch, n0, n1, y.data_mut());
        }
        if let Some(b) = &self.bias {
            for (c, &bv) in b.value.iter().enumerate() {
                y.channel_mut(c).iter_mut().for_each(|v| *v += bv);
            }
        }
        self.input = train.then(|| x.clone());
        Ok(y)
    }

    pub fn backward(&mut self, gy: &Tensor) -> Result<Tensor> {
        let x = self
            .input
            .take()
            .ok_or_else(|| Error::shape("transposed conv backward without a training forward"))?;
        let g = self.geometry(&x)?;
        let batch = x.batch();
        if gy.dims() != (self.out_channels, batch, g.in_h, g.in_w) {
            return Err(Error::shape(format!("transposed conv gradient has shape {:?}", gy.dims())));
        }
        if let Some(b) = &mut self.bias {
            for (c, gb) in b.grad.iter_mut().enumerate() {
                *gb += gy.channel(c).iter().sum::<f32>();
            }
        }
        let in_plane = x.plane();
        let rows = g.rows();
        let rs_x = batch * in_plane;
        let mut gx = Tensor::zeros(self.in_channels, batch, x.height(), x.width());
        let chunk = g.chunk();
        let mut gcol = vec![0.0; rows * chunk.min(batch) * in_plane];
        for n0 in (0..batch).step_by(chunk) {
            let n1 = (n0 + chunk).min(batch);
            let pc = (n1 - n0) * in_plane;
            g.im2col(gy.data(), batch, n0, n1, &mut gcol);
            let gm = Mat::rows(&gcol[..rows * pc], rows, pc);
            let w = Mat::rows(&self.weight.value, self.in_channels, rows);
            gemm(1.0, w, gm, 0.0, &mut gx.data_mut()[n0 * in_plane..], rs_x);
            let xm = Mat::new(&x.data()[n0 * in_plane..], self.in_channels, pc, rs_x, 1);
            gemm(1.0, xm, gm.t(), 1.0, &mut self.weight.grad, rows);
        }
        Ok(gx)
    }
}

impl Module for ConvTranspose2d {
    fn visit_params<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        out.push((join(prefix, "weight"), &mut self.weight));
        if let Some(b) = &mut self.bias {
            out.push((join(prefix, "bias"), b));
        }
    }
}
