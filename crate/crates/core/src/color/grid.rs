use std::collections::HashSet;
use std::fmt::Write as _;
use std::sync::{Arc, OnceLock};

use sha2::{Digest, Sha256};

use super::lab::rgb_pixel_to_lab;
use crate::error::{Error, Result};

/// Number of quantized ab bins.
pub const Q: usize = 313;

/// Width of one ab bin.
pub const BIN_SIZE: f32 = 10.0;

/// The versioned bin-center list shipped with the crate.
pub const GRID_ASSET: &str = include_str!("../../assets/ab_grid_313.csv");

const LATTICE_MIN: i32 = -110;
const LATTICE_STEPS: usize = 23;
// Distances beyond this radius are never needed to rank the nearest Q bins.
const SWEEP_RADIUS: f64 = 20.0;

/// The in-gamut quantized ab bin centers.
#[derive(Debug, Clone, PartialEq)]
pub struct AbBinGrid {
    centers: Vec<[f32; 2]>,
}

impl AbBinGrid {
    /// The grid loaded from the shipped asset.
    pub fn standard() -> Arc<AbBinGrid> {
        static GRID: OnceLock<Arc<AbBinGrid>> = OnceLock::new();
        GRID.get_or_init(|| {
            Arc::new(AbBinGrid::parse(GRID_ASSET).expect("shipped bin grid asset is valid"))
        })
        .clone()
    }

    pub fn from_centers(centers: Vec<[f32; 2]>) -> Result<Self> {
        if centers.len() != Q {
            return Err(Error::BinGrid(format!(
                "expected {Q} centers, got {}",
                centers.len()
            )));
        }
        let mut seen = HashSet::new();
        for c in &centers {
            for v in c {
                let on_lattice = v.fract() == 0.0 && (*v as i32) % 10 == 0;
                if !on_lattice || !(-110.0..=110.0).contains(v) {
                    return Err(Error::BinGrid(format!("center {c:?} is off the lattice")));
                }
            }
            if !seen.insert((c[0] as i32, c[1] as i32)) {
                return Err(Error::BinGrid(format!("duplicate center {c:?}")));
            }
        }
        Ok(Self { centers })
    }

    /// Parses the `a,b` CSV asset format; `#` lines and the header are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut centers = Vec::with_capacity(Q);
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || line == "a,b" {
                continue;
            }
            let parsed = line
                .split_once(',')
                .and_then(|(a, b)| Some([a.trim().parse::<i32>().ok()?, b.trim().parse().ok()?]));
            match parsed {
                Some([a, b]) => centers.push([a as f32, b as f32]),
                None => {
                    return Err(Error::BinGrid(format!(
                        "line {}: expected 'a,b' integers, got {line:?}",
                        lineno + 1
                    )))
                }
            }
        }
        Self::from_centers(centers)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("a,b\n");
        for c in &self.centers {
            let _ = writeln!(out, "{},{}", c[0], c[1]);
        }
        out
    }

    /// Hex SHA-256 of the canonical center list; stored in checkpoints so
    /// a model is never decoded against a different grid.
    pub fn version_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_csv().as_bytes()))
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn centers(&self) -> &[[f32; 2]] {
        &self.centers
    }

    pub fn center(&self, index: usize) -> [f32; 2] {
        self.centers[index]
    }

    pub fn index_of(&self, a: f32, b: f32) -> Option<usize> {
        self.centers.iter().position(|c| c[0] == a && c[1] == b)
    }
}

/// Lattice index of the nearest lattice center for one chroma coordinate.
fn lattice_index(v: f64) -> Option<usize> {
    let i = ((v - f64::from(LATTICE_MIN)) / f64::from(BIN_SIZE)).round();
    (0.0..LATTICE_STEPS as f64).contains(&i).then_some(i as usize)
}

fn lattice_value(i: usize) -> f64 {
    f64::from(LATTICE_MIN) + i as f64 * f64::from(BIN_SIZE)
}

/// Recomputes the bin grid from a sweep over every 8-bit sRGB color.
///
/// Lattice centers are ranked by their distance to the nearest swept ab
/// value and the closest [`Q`] are kept. Fails if the ranking has a tie at
/// the cut, if the sweep radius is too small to rank the cut, or if some bin
/// occupied by an sRGB color is not kept.
pub fn build_bin_grid() -> Result<AbBinGrid> {
    let n = LATTICE_STEPS;
    let mut nearest = vec![f64::INFINITY; n * n];
    let mut occupied = vec![false; n * n];
    let levels: Vec<f64> = (0..=255u8).map(|v| f64::from(v) / 255.0).collect();

    for &r in &levels {
        for &g in &levels {
            for &b in &levels {
                let [_, a_val, b_val] = rgb_pixel_to_lab([r, g, b]);
                if let (Some(i), Some(j)) = (lattice_index(a_val), lattice_index(b_val)) {
                    occupied[i * n + j] = true;
                }
                let lo_i = ((a_val - SWEEP_RADIUS - f64::from(LATTICE_MIN)) / 10.0).ceil().max(0.0) as usize;
                let hi_i = ((a_val + SWEEP_RADIUS - f64::from(LATTICE_MIN)) / 10.0).floor();
                let lo_j = ((b_val - SWEEP_RADIUS - f64::from(LATTICE_MIN)) / 10.0).ceil().max(0.0) as usize;
                let hi_j = ((b_val + SWEEP_RADIUS - f64::from(LATTICE_MIN)) / 10.0).floor();
                if hi_i < 0.0 || hi_j < 0.0 {
                    continue;
                }
                let hi_i = (hi_i as usize).min(n - 1);
                let hi_j = (hi_j as usize).min(n - 1);
                for i in lo_i..=hi_i {
                    let da = a_val - lattice_value(i);
                    for j in lo_j..=hi_j {
                        let db = b_val - lattice_value(j);
                        let d2 = da * da + db * db;
                        let slot = &mut nearest[i * n + j];
                        if d2 < *slot {
                            *slot = d2;
                        }
                    }
                }
            }
        }
    }

    let mut ranked: Vec<(f64, usize)> = nearest.iter().copied().zip(0..).collect();
    ranked.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
    let cut = ranked[Q - 1].0;
    let next = ranked[Q].0;
    if !cut.is_finite() || cut.sqrt() >= SWEEP_RADIUS {
        return Err(Error::BinGrid(format!(
            "sweep radius {SWEEP_RADIUS} cannot rank {Q} bins"
        )));
    }
    if next <= cut {
        return Err(Error::BinGrid(format!(
            "tie at the {Q}-bin cut (distance {:.4})",
            cut.sqrt()
        )));
    }

    let mut keep = vec![false; n * n];
    for &(_, idx) in &ranked[..Q] {
        keep[idx] = true;
    }
    if let Some(idx) = (0..n * n).find(|&idx| occupied[idx] && !keep[idx]) {
        return Err(Error::BinGrid(format!(
            "occupied bin ({}, {}) is outside the kept set",
            lattice_value(idx / n),
            lattice_value(idx % n)
        )));
    }

    // Lattice index order is (a, b) lexicographic, which fixes the bin order.
    let centers = (0..n * n)
        .filter(|&idx| keep[idx])
        .map(|idx| [lattice_value(idx / n) as f32, lattice_value(idx % n) as f32])
        .collect();
    AbBinGrid::from_centers(centers)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_grid_has_q_unique_centers() {
        let grid = AbBinGrid::standard();
        assert_eq!(grid.len(), Q);
        let unique: HashSet<_> = grid.centers().iter().map(|c| (c[0] as i32, c[1] as i32)).collect();
        assert_eq!(unique.len(), Q);
    }

    #[test]
    fn origin_is_a_bin() {
        let grid = AbBinGrid::standard();
        assert!(grid.index_of(0.0, 0.0).is_some());
    }

    #[test]
    fn csv_round_trip_preserves_hash() {
        let grid = AbBinGrid::standard();
        let again = AbBinGrid::parse(&grid.to_csv()).unwrap();
        assert_eq!(*grid, again);
        assert_eq!(grid.version_hash(), again.version_hash());
    }

    #[test]
    fn parse_rejects_bad_grids() {
        assert!(AbBinGrid::parse("a,b\n0,0\n").is_err());
        let mut text = GRID_ASSET.to_string();
        text.push_str("0,0\n");
        assert!(AbBinGrid::parse(&text).is_err());
        let shifted = GRID_ASSET.replacen("-90,50", "-85,50", 1);
        assert!(AbBinGrid::parse(&shifted).is_err());
        let garbage = GRID_ASSET.replacen("-90,50", "-90;50", 1);
        assert!(AbBinGrid::parse(&garbage).is_err());
    }
}
