use crate::error::{Error, Result};

/// Chroma bound used for validation and for the generator's output scaling.
pub const AB_RANGE: f32 = 110.0;

// sRGB (IEC 61966-2-1) primaries, D65 white, 2 degree observer.
const RGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.412_456_4, 0.357_576_1, 0.180_437_5],
    [0.212_672_9, 0.715_152_2, 0.072_175_0],
    [0.019_333_9, 0.119_192_0, 0.950_304_1],
];
const XYZ_TO_RGB: [[f64; 3]; 3] = [
    [3.240_454_2, -1.537_138_5, -0.498_531_4],
    [-0.969_266_0, 1.876_010_8, 0.041_556_0],
    [0.055_643_4, -0.204_025_9, 1.057_225_2],
];
const WHITE_D65: [f64; 3] = [0.950_47, 1.0, 1.088_83];

const LAB_EPSILON: f64 = 216.0 / 24389.0;
const LAB_KAPPA: f64 = 24389.0 / 27.0;

// Tolerance before a decoded component counts as out of gamut.
const GAMUT_TOLERANCE: f64 = 1e-6;

/// An sRGB image with components normalized to `[0, 1]`, stored row-major
/// with interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    height: usize,
    width: usize,
    pixels: Vec<f32>,
}

impl RgbImage {
    pub fn new(height: usize, width: usize, pixels: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid("image dimensions must be at least 1x1"));
        }
        if pixels.len() != height * width * 3 {
            return Err(Error::shape(format!(
                "expected {} rgb values for {height}x{width}, got {}",
                height * width * 3,
                pixels.len()
            )));
        }
        if let Some(v) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("rgb component {v} outside [0, 1]")));
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    /// Builds an image from 8-bit interleaved RGB.
    pub fn from_u8(height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        let pixels = bytes.iter().map(|&b| f32::from(b) / 255.0).collect();
        Self::new(height, width, pixels)
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Result<Self> {
        let pixels = (0..height * width).flat_map(|_| rgb).collect();
        Self::new(height, width, pixels)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    /// Rounds every component to the nearest 8-bit level.
    pub fn to_u8(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    }

    /// The image as it would be after saving to an 8-bit file and reloading.
    pub fn quantized(&self) -> Self {
        let pixels = self
            .pixels
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) / 255.0)
            .collect();
        Self {
            height: self.height,
            width: self.width,
            pixels,
        }
    }

    pub fn flip_horizontal(&self) -> Self {
        let mut pixels = Vec::with_capacity(self.pixels.len());
        for y in 0..self.height {
            for x in (0..self.width).rev() {
                pixels.extend_from_slice(&self.pixel(y, x));
            }
        }
        Self {
            height: self.height,
            width: self.width,
            pixels,
        }
    }
}

/// A CIE-Lab image: lightness plane `L` in `[0, 100]` and interleaved chroma
/// planes `ab`, each component in `[-110, 110]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabImage {
    height: usize,
    width: usize,
    l: Vec<f32>,
    ab: Vec<f32>,
}

impl LabImage {
    pub fn new(height: usize, width: usize, l: Vec<f32>, ab: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid("image dimensions must be at least 1x1"));
        }
        let n = height * width;
        if l.len() != n || ab.len() != 2 * n {
            return Err(Error::shape(format!(
                "L has {} values and ab {} for a {height}x{width} image",
                l.len(),
                ab.len()
            )));
        }
        if let Some(v) = l.iter().find(|v| !(0.0..=100.0).contains(*v)) {
            return Err(Error::invalid(format!("lightness {v} outside [0, 100]")));
        }
        if let Some(v) = ab.iter().find(|v| !(-AB_RANGE..=AB_RANGE).contains(*v)) {
            return Err(Error::invalid(format!(
                "chroma {v} outside [-{AB_RANGE}, {AB_RANGE}]"
            )));
        }
        Ok(Self {
            height,
            width,
            l,
            ab,
        })
    }

    /// Lightness with all chroma zero.
    pub fn grayscale(height: usize, width: usize, l: Vec<f32>) -> Result<Self> {
        let ab = vec![0.0; 2 * l.len()];
        Self::new(height, width, l, ab)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn l(&self) -> &[f32] {
        &self.l
    }

    pub fn ab(&self) -> &[f32] {
        &self.ab
    }

    pub fn with_ab(&self, ab: Vec<f32>) -> Result<Self> {
        Self::new(self.height, self.width, self.l.clone(), ab)
    }
}

#[inline]
fn srgb_decode(c: f64) -> f64 {
    if c <= 0.040_45 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

#[inline]
fn srgb_encode(c: f64) -> f64 {
    if c <= 0.003_130_8 {
        12.92 * c
    } else {
        1.055 * c.powf(1.0 / 2.4) - 0.055
    }
}

#[inline]
fn lab_f(t: f64) -> f64 {
    if t > LAB_EPSILON {
        t.cbrt()
    } else {
        (LAB_KAPPA * t + 16.0) / 116.0
    }
}

#[inline]
fn lab_f_inv(f: f64) -> f64 {
    let cube = f * f * f;
    if cube > LAB_EPSILON {
        cube
    } else {
        (116.0 * f - 16.0) / LAB_KAPPA
    }
}

/// Converts one sRGB triple (components in `[0, 1]`) to `(L, a, b)`.
pub fn rgb_pixel_to_lab(rgb: [f64; 3]) -> [f64; 3] {
    let lin = rgb.map(srgb_decode);
    let mut f = [0.0; 3];
    for (i, row) in RGB_TO_XYZ.iter().enumerate() {
        let xyz = row[0] * lin[0] + row[1] * lin[1] + row[2] * lin[2];
        f[i] = lab_f(xyz / WHITE_D65[i]);
    }
    [
        116.0 * f[1] - 16.0,
        500.0 * (f[0] - f[1]),
        200.0 * (f[1] - f[2]),
    ]
}

/// Converts `(L, a, b)` to sRGB without clamping; components may fall outside
/// `[0, 1]` for out-of-gamut colors.
pub fn lab_pixel_to_rgb(lab: [f64; 3]) -> [f64; 3] {
    let fy = (lab[0] + 16.0) / 116.0;
    let fx = fy + lab[1] / 500.0;
    let fz = fy - lab[2] / 200.0;
    let xyz = [
        lab_f_inv(fx) * WHITE_D65[0],
        lab_f_inv(fy) * WHITE_D65[1],
        lab_f_inv(fz) * WHITE_D65[2],
    ];
    let mut rgb = [0.0; 3];
    for (i, row) in XYZ_TO_RGB.iter().enumerate() {
        // The linear segment of the transfer curve keeps negative light
        // negative, so the gamut check still sees it.
        rgb[i] = srgb_encode(row[0] * xyz[0] + row[1] * xyz[1] + row[2] * xyz[2]);
    }
    rgb
}

pub fn rgb_to_lab(img: &RgbImage) -> LabImage {
    let n = img.height * img.width;
    let mut l = Vec::with_capacity(n);
    let mut ab = Vec::with_capacity(2 * n);
    for px in img.pixels.chunks_exact(3) {
        let lab = rgb_pixel_to_lab([f64::from(px[0]), f64::from(px[1]), f64::from(px[2])]);
        l.push(lab[0].clamp(0.0, 100.0) as f32);
        ab.push((lab[1] as f32).clamp(-AB_RANGE, AB_RANGE));
        ab.push((lab[2] as f32).clamp(-AB_RANGE, AB_RANGE));
    }
    LabImage {
        height: img.height,
        width: img.width,
        l,
        ab,
    }
}

pub fn lab_to_rgb(img: &LabImage) -> RgbImage {
    lab_to_rgb_counted(img).0
}

/// Inverse conversion that also reports how many pixels had to be clamped
/// back into the sRGB cube.
pub fn lab_to_rgb_counted(img: &LabImage) -> (RgbImage, usize) {
    let mut out_of_gamut = 0;
    let mut pixels = Vec::with_capacity(img.l.len() * 3);
    for (l, ab) in img.l.iter().zip(img.ab.chunks_exact(2)) {
        let rgb = lab_pixel_to_rgb([f64::from(*l), f64::from(ab[0]), f64::from(ab[1])]);
        if rgb
            .iter()
            .any(|&c| c < -GAMUT_TOLERANCE || c > 1.0 + GAMUT_TOLERANCE)
        {
            out_of_gamut += 1;
        }
        pixels.extend(rgb.iter().map(|&c| c.clamp(0.0, 1.0) as f32));
    }
    (
        RgbImage {
            height: img.height,
            width: img.width,
            pixels,
        },
        out_of_gamut,
    )
}
