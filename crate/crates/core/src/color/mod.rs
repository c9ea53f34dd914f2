//! Non-learned color math: sRGB and CIE-Lab images, the quantized ab bin
//! grid, and the encoders/decoders that map between ab values and
//! per-pixel distributions over bins.

mod encode;
mod grid;
mod lab;

pub use encode::{
    decode_annealed_mean, encode_hard, encode_soft, encode_soft_sparse, ColorDistribution,
    SoftTarget, SparseDistribution, DEFAULT_SOFT_K, DEFAULT_SOFT_SIGMA, DEFAULT_TEMPERATURE,
};
pub use grid::{build_bin_grid, AbBinGrid, BIN_SIZE, GRID_ASSET, Q};
pub use lab::{
    lab_pixel_to_rgb, lab_to_rgb, lab_to_rgb_counted, rgb_pixel_to_lab, rgb_to_lab, LabImage,
    RgbImage, AB_RANGE,
};
