use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Source taps for one output coordinate: `(i0, i1, weight of i1)`.
fn taps(out_len: usize, in_len: usize) -> Vec<(usize, usize, f32)> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(in_len - 1);
            let i1 = (i0 + 1).min(in_len - 1);
            (i0, i1, (src - i0 as f64) as f32)
        })
        .collect()
}

/// Bilinear resize with half-pixel centers (`align_corners = false`).
#[derive(Debug, Clone)]
pub struct Bilinear {
    pub out_h: usize,
    pub out_w: usize,
    input_hw: Option<(usize, usize)>,
}

impl Bilinear {
    pub fn new(out_h: usize, out_w: usize) -> Self {
        Self {
            out_h,
            out_w,
            input_hw: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor, train: bool) -> Result<Tensor> {
        let (c, n, h, w) = x.dims();
        if h == 0 || w == 0 {
            return Err(Error::shape("cannot resize an empty image"));
        }
        let ty = taps(self.out_h, h);
        let tx = taps(self.out_w, w);
        let mut y = Tensor::zeros(c, n, self.out_h, self.out_w);
        let (ip, op) = (h * w, self.out_h * self.out_w);
        for (src, dst) in x.data().chunks(ip).zip(y.data_mut().chunks_mut(op)) {
            for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
                let (r0, r1) = (&src[y0 * w..(y0 + 1) * w], &src[y1 * w..(y1 + 1) * w]);
                for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                    let top = r0[x0] * (1.0 - lx) + r0[x1] * lx;
                    let bot = r1[x0] * (1.0 - lx) + r1[x1] * lx;
                    dst[oy * self.out_w + ox] = top * (1.0 - ly) + bot * ly;
                }
            }
        }
        self.input_hw = train.then_some((h, w));
        Ok(y)
    }

    /// Adjoint of the forward interpolation.
    pub fn backward(&mut self, gy: &Tensor) -> Result<Tensor> {
        let (h, w) = self
            .input_hw
            .take()
            .ok_or_else(|| Error::shape("upsample backward without a training forward"))?;
        let (c, n, oh, ow) = gy.dims();
        if (oh, ow) != (self.out_h, self.out_w) {
            return Err(Error::shape(format!("upsample gradient has shape {:?}", gy.dims())));
        }
        let ty = taps(oh, h);
        let tx = taps(ow, w);
        let mut gx = Tensor::zeros(c, n, h, w);
        let (ip, op) = (h * w, oh * ow);
        for (dst, src) in gx.data_mut().chunks_mut(ip).zip(gy.data().chunks(op)) {
            for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
                for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                    let g = src[oy * ow + ox];
                    dst[y0 * w + x0] += g * (1.0 - ly) * (1.0 - lx);
                    dst[y0 * w + x1] += g * (1.0 - ly) * lx;
                    dst[y1 * w + x0] += g * ly * (1.0 - lx);
                    dst[y1 * w + x1] += g * ly * lx;
                }
            }
        }
        Ok(gx)
    }
}
