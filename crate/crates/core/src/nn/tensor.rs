use crate::error::{Error, Result};

/// A 4-d activation tensor stored channel-major:
/// `data[((c * batch + n) * height + y) * width + x]`.
///
/// Keeping each channel contiguous across the whole batch turns every
/// convolution into a single matrix product and makes channel concatenation
/// a plain append.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    channels: usize,
    batch: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(channels: usize, batch: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            batch,
            height,
            width,
            data: vec![0.0; channels * batch * height * width],
        }
    }

    pub fn from_vec(channels: usize, batch: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * batch * height * width {
            return Err(Error::shape(format!(
                "tensor {channels}x{batch}x{height}x{width} needs {} values, got {}",
                channels * batch * height * width,
                data.len()
            )));
        }
        Ok(Self {
            channels,
            batch,
            height,
            width,
            data,
        })
    }

    /// Builds a tensor from per-image planes laid out `[c][y][x]`.
    pub fn from_images(channels: usize, height: usize, width: usize, images: &[Vec<f32>]) -> Result<Self> {
        let plane = height * width;
        let batch = images.len();
        let mut data = vec![0.0; channels * batch * plane];
        for (n, img) in images.iter().enumerate() {
            if img.len() != channels * plane {
                return Err(Error::shape(format!(
                    "image {n} has {} values, expected {}",
                    img.len(),
                    channels * plane
                )));
            }
            for c in 0..channels {
                let dst = (c * batch + n) * plane;
                data[dst..dst + plane].copy_from_slice(&img[c * plane..(c + 1) * plane]);
            }
        }
        Self::from_vec(channels, batch, height, width, data)
    }

    /// One image as `[c][y][x]` planes.
    pub fn image(&self, n: usize) -> Vec<f32> {
        let plane = self.plane();
        let mut out = Vec::with_capacity(self.channels * plane);
        for c in 0..self.channels {
            let src = (c * self.batch + n) * plane;
            out.extend_from_slice(&self.data[src..src + plane]);
        }
        out
    }

    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (self.channels, self.batch, self.height, self.width)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    /// Values per channel across the batch.
    pub fn channel_len(&self) -> usize {
        self.batch * self.plane()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let len = self.channel_len();
        &self.data[c * len..(c + 1) * len]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f32] {
        let len = self.channel_len();
        &mut self.data[c * len..(c + 1) * len]
    }

    pub fn get(&self, c: usize, n: usize, y: usize, x: usize) -> f32 {
        self.data[((c * self.batch + n) * self.height + y) * self.width + x]
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.dims() == other.dims()
    }

    pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts.first().ok_or_else(|| Error::shape("nothing to concatenate"))?;
        let (_, n, h, w) = first.dims();
        let mut channels = 0;
        let mut data = Vec::with_capacity(parts.iter().map(|t| t.data.len()).sum());
        for t in parts {
            if (t.batch, t.height, t.width) != (n, h, w) {
                return Err(Error::shape(format!(
                    "cannot concatenate {:?} with {:?}",
                    t.dims(),
                    first.dims()
                )));
            }
            channels += t.channels;
            data.extend_from_slice(&t.data);
        }
        Tensor::from_vec(channels, n, h, w, data)
    }

    /// Splits into the first `at` channels and the rest.
    pub fn split_channels(&self, at: usize) -> (Tensor, Tensor) {
        assert!(at <= self.channels, "split point {at} beyond {} channels", self.channels);
        let cut = at * self.channel_len();
        let part = |channels, data: &[f32]| Tensor {
            channels,
            batch: self.batch,
            height: self.height,
            width: self.width,
            data: data.to_vec(),
        };
        (
            part(at, &self.data[..cut]),
            part(self.channels - at, &self.data[cut..]),
        )
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        assert!(self.same_shape(other), "{:?} vs {:?}", self.dims(), other.dims());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn images_round_trip_through_channel_major_layout() {
        let a: Vec<f32> = (0..12).map(|v| v as f32).collect();
        let b: Vec<f32> = (100..112).map(|v| v as f32).collect();
        let t = Tensor::from_images(3, 2, 2, &[a.clone(), b.clone()]).unwrap();
        assert_eq!(t.dims(), (3, 2, 2, 2));
        assert_eq!(t.get(1, 1, 0, 1), 105.0);
        assert_eq!(t.image(0), a);
        assert_eq!(t.image(1), b);
    }

    #[test]
    fn concat_then_split_is_identity() {
        let a = Tensor::from_vec(2, 1, 1, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::from_vec(1, 1, 1, 2, vec![5.0, 6.0]).unwrap();
        let c = Tensor::concat_channels(&[&a, &b]).unwrap();
        assert_eq!(c.channel(2), &[5.0, 6.0]);
        let (x, y) = c.split_channels(2);
        assert_eq!((&x, &y), (&a, &b));
        let bad = Tensor::zeros(1, 2, 1, 2);
        assert!(Tensor::concat_channels(&[&a, &bad]).is_err());
    }
}
