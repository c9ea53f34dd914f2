//! CIFAR-10 (binary version) loading, checksum manifests and training pairs.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::classifier::{classifier_targets, ClassifierConfig, ClassifierNet};
use crate::color::{rgb_to_lab, LabImage, RgbImage, SparseDistribution};
use crate::error::{Error, Result};

pub const IMAGE_SIDE: usize = 32;
pub const IMAGE_BYTES: usize = IMAGE_SIDE * IMAGE_SIDE * 3;
pub const RECORD_BYTES: usize = IMAGE_BYTES + 1;
pub const RECORDS_PER_FILE: usize = 10_000;
pub const NUM_CLASSES: usize = 10;
pub const TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
pub const TEST_FILE: &str = "test_batch.bin";
pub const MANIFEST: &str = "SHA256SUMS";
/// Environment variable overriding the dataset root.
pub const DATA_DIR_ENV: &str = "COLORLAB_DATA_DIR";
pub const DEFAULT_DATA_DIR: &str = "data/cifar-10-batches-bin";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn files(self) -> &'static [&'static str] {
        match self {
            Split::Train => &TRAIN_FILES,
            Split::Test => std::slice::from_ref(&TEST_FILE),
        }
    }

    pub fn per_class(self) -> usize {
        match self {
            Split::Train => 5000,
            Split::Test => 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub root: PathBuf,
    pub split: Split,
    /// Keep at most this many images per class, in file order.
    pub per_class_cap: Option<usize>,
}

impl DatasetSpec {
    pub fn new(root: impl Into<PathBuf>, split: Split) -> Self {
        Self {
            root: root.into(),
            split,
            per_class_cap: None,
        }
    }

    pub fn with_cap(mut self, cap: Option<usize>) -> Self {
        self.per_class_cap = cap;
        self
    }
}

/// The dataset root: `COLORLAB_DATA_DIR` if set, else `fallback`.
pub fn data_root(fallback: Option<&Path>) -> PathBuf {
    match std::env::var_os(DATA_DIR_ENV) {
        Some(dir) if !dir.is_empty() => PathBuf::from(dir),
        _ => fallback.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(DEFAULT_DATA_DIR)),
    }
}

/// One labelled image kept as 8-bit interleaved RGB.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub label: u8,
    pub rgb: Vec<u8>,
}

impl Sample {
    pub fn image(&self) -> RgbImage {
        RgbImage::from_u8(IMAGE_SIDE, IMAGE_SIDE, &self.rgb).expect("32x32 record")
    }

    pub fn lab(&self) -> LabImage {
        rgb_to_lab(&self.image())
    }
}

/// Decodes one record: a label byte, then the R, G and B planes.
pub fn decode_record(record: &[u8]) -> Result<Sample> {
    if record.len() != RECORD_BYTES {
        return Err(Error::shape(format!(
            "a record has {RECORD_BYTES} bytes, got {}",
            record.len()
        )));
    }
    let label = record[0];
    if usize::from(label) >= NUM_CLASSES {
        return Err(Error::invalid(format!("label {label} outside 0..{NUM_CLASSES}")));
    }
    let planes = &record[1..];
    let n = IMAGE_SIDE * IMAGE_SIDE;
    let mut rgb = Vec::with_capacity(IMAGE_BYTES);
    for p in 0..n {
        rgb.extend([planes[p], planes[n + p], planes[2 * n + p]]);
    }
    Ok(Sample { label, rgb })
}

fn read_batch_file(path: &Path) -> Result<Vec<u8>> {
    let mut bytes = Vec::with_capacity(RECORD_BYTES * RECORDS_PER_FILE);
    fs::File::open(path)
        .map_err(|e| Error::dataset(path, format!("cannot open: {e}")))?
        .read_to_end(&mut bytes)
        .map_err(|e| Error::dataset(path, format!("cannot read: {e}")))?;
    if bytes.len() != RECORD_BYTES * RECORDS_PER_FILE {
        return Err(Error::dataset(
            path,
            format!(
                "truncated or oversized: {} bytes, expected {}",
                bytes.len(),
                RECORD_BYTES * RECORDS_PER_FILE
            ),
        ));
    }
    Ok(bytes)
}

/// Loads a split in file order, checking it against the checksum manifest
/// when one is present in the root.
pub fn load_cifar10(spec: &DatasetSpec) -> Result<Vec<Sample>> {
    let manifest = read_manifest(&spec.root)?;
    let mut counts = [0usize; NUM_CLASSES];
    let cap = spec.per_class_cap.unwrap_or(usize::MAX);
    let mut out = Vec::new();
    for name in spec.split.files() {
        let path = spec.root.join(name);
        let bytes = read_batch_file(&path)?;
        if let Some(entries) = &manifest {
            let want = entries
                .iter()
                .find(|(_, f)| f == name)
                .ok_or_else(|| Error::dataset(&path, format!("not listed in {MANIFEST}")))?;
            let got = hex::encode(Sha256::digest(&bytes));
            if got != want.0 {
                return Err(Error::dataset(&path, format!("checksum mismatch: {got} != {}", want.0)));
            }
        }
        for record in bytes.chunks_exact(RECORD_BYTES) {
            let sample = decode_record(record).map_err(|e| Error::dataset(&path, e.to_string()))?;
            let c = usize::from(sample.label);
            if counts[c] < cap {
                counts[c] += 1;
                out.push(sample);
            }
        }
        if counts.iter().all(|&c| c >= cap) {
            break;
        }
    }
    Ok(out)
}

/// Parses `SHA256SUMS` (`<hex>  <file>` lines), if present.
pub fn read_manifest(root: &Path) -> Result<Option<Vec<(String, String)>>> {
    let path = root.join(MANIFEST);
    let text = match fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(Error::dataset(&path, e.to_string())),
    };
    let mut entries = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (hash, file) = line
            .split_once(char::is_whitespace)
            .ok_or_else(|| Error::dataset(&path, format!("malformed line {line:?}")))?;
        let file = file.trim_start().trim_start_matches('*');
        if hash.len() != 64 || !hash.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(Error::dataset(&path, format!("malformed hash in {line:?}")));
        }
        entries.push((hash.to_ascii_lowercase(), file.to_string()));
    }
    Ok(Some(entries))
}

/// Checks every batch file's size and writes `SHA256SUMS` for them.
pub fn write_manifest(root: &Path) -> Result<()> {
    let mut text = String::new();
    for name in TRAIN_FILES.iter().chain([&TEST_FILE]) {
        let bytes = read_batch_file(&root.join(name))?;
        text.push_str(&format!("{}  {name}\n", hex::encode(Sha256::digest(&bytes))));
    }
    fs::write(root.join(MANIFEST), text)?;
    Ok(())
}

/// Verifies all batch files against the manifest; `Ok(false)` if there is
/// no manifest yet.
pub fn verify_manifest(root: &Path) -> Result<bool> {
    let Some(entries) = read_manifest(root)? else {
        return Ok(false);
    };
    for name in TRAIN_FILES.iter().chain([&TEST_FILE]) {
        let path = root.join(name);
        let want = entries
            .iter()
            .find(|(_, f)| f == name)
            .ok_or_else(|| Error::dataset(&path, format!("not listed in {MANIFEST}")))?;
        let got = hex::encode(Sha256::digest(read_batch_file(&path)?));
        if got != want.0 {
            return Err(Error::dataset(&path, format!("checksum mismatch: {got} != {}", want.0)));
        }
    }
    Ok(true)
}

/// Network input (normalized L) and soft-encoded target for one image.
pub fn make_training_pair_classifier(
    image: &RgbImage,
    config: &ClassifierConfig,
) -> Result<(Vec<f32>, SparseDistribution)> {
    let lab = rgb_to_lab(image);
    let target = classifier_targets(&lab, config)?;
    Ok((ClassifierNet::normalize_l(lab.l()), target))
}

/// Sample order for one epoch; a pure function of `(n, seed, epoch)`.
pub fn epoch_permutation(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    idx.shuffle(&mut rng);
    idx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::Variant;
    use crate::color::AbBinGrid;

    fn record(label: u8, f: impl Fn(usize) -> u8) -> Vec<u8> {
        let mut r = vec![label];
        r.extend((0..IMAGE_BYTES).map(f));
        r
    }

    fn write_fake_dataset(dir: &Path) {
        for (i, name) in TRAIN_FILES.iter().chain([&TEST_FILE]).enumerate() {
            let mut bytes = Vec::with_capacity(RECORD_BYTES * RECORDS_PER_FILE);
            for r in 0..RECORDS_PER_FILE {
                bytes.extend(record((r % NUM_CLASSES) as u8, |p| ((p + r + i) % 251) as u8));
            }
            fs::write(dir.join(name), bytes).unwrap();
        }
    }

    #[test]
    fn decodes_planar_records() {
        let r = record(7, |p| match p / 1024 {
            0 => 10,
            1 => 20,
            _ => (p % 1024) as u8,
        });
        let s = decode_record(&r).unwrap();
        assert_eq!(s.label, 7);
        assert_eq!(&s.rgb[..6], &[10, 20, 0, 10, 20, 1]);
        assert_eq!(s.image().pixel(0, 1), [10.0 / 255.0, 20.0 / 255.0, 1.0 / 255.0]);
        assert!(decode_record(&r[1..]).is_err());
        let mut bad = r.clone();
        bad[0] = 10;
        assert!(decode_record(&bad).is_err());
    }

    #[test]
    fn loads_caps_and_verifies_checksums() {
        let dir = tempfile::tempdir().unwrap();
        write_fake_dataset(dir.path());
        let test = load_cifar10(&DatasetSpec::new(dir.path(), Split::Test)).unwrap();
        assert_eq!(test.len(), 10_000);
        let capped = load_cifar10(&DatasetSpec::new(dir.path(), Split::Train).with_cap(Some(3))).unwrap();
        assert_eq!(capped.len(), 30);
        assert_eq!(capped[0].label, 0);
        assert!(!verify_manifest(dir.path()).unwrap());
        write_manifest(dir.path()).unwrap();
        assert!(verify_manifest(dir.path()).unwrap());
        let mut bytes = fs::read(dir.path().join(TEST_FILE)).unwrap();
        bytes[5] ^= 1;
        fs::write(dir.path().join(TEST_FILE), &bytes).unwrap();
        assert!(matches!(
            load_cifar10(&DatasetSpec::new(dir.path(), Split::Test)),
            Err(Error::Dataset { .. })
        ));
        fs::write(dir.path().join(TEST_FILE), &bytes[..100]).unwrap();
        assert!(verify_manifest(dir.path()).is_err());
    }

    #[test]
    fn missing_files_are_dataset_errors() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_cifar10(&DatasetSpec::new(dir.path(), Split::Train)).unwrap_err();
        assert!(matches!(err, Error::Dataset { .. }), "{err}");
    }

    #[test]
    fn gray_images_target_the_neutral_bin() {
        let grid = AbBinGrid::standard();
        let origin = grid.index_of(0.0, 0.0).unwrap() as u16;
        let gray = RgbImage::filled(32, 32, [0.4, 0.4, 0.4]).unwrap();
        for v in Variant::ALL {
            let cfg = ClassifierConfig::new(v);
            let (l, z) = make_training_pair_classifier(&gray, &cfg).unwrap();
            assert_eq!(l.len(), 1024);
            assert!(l.iter().all(|v| (-1.0..=1.0).contains(v)));
            let side = if v == Variant::DownsampleTarget { 8 } else { 32 };
            assert_eq!((z.height, z.width), (side, side));
            for p in 0..side * side {
                let best = z.pixel(p).iter().max_by(|a, b| a.weight.total_cmp(&b.weight)).unwrap();
                assert_eq!(best.bin, origin);
            }
            z.to_dense(grid.clone());
        }
    }

    #[test]
    fn epoch_permutations_are_seeded() {
        let a = epoch_permutation(100, 7, 0);
        assert_eq!(a, epoch_permutation(100, 7, 0));
        assert_ne!(a, epoch_permutation(100, 7, 1));
        assert_ne!(a, epoch_permutation(100, 8, 0));
        let mut s = a.clone();
        s.sort();
        assert_eq!(s, (0..100).collect::<Vec<_>>());
    }
}
