//! Downloading and unpacking the CIFAR-10 binary archive.

use std::fs;
use std::io::{self, Read};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use log::info;
use md5::{Digest, Md5};

use crate::data::{verify_manifest, write_manifest, TEST_FILE, TRAIN_FILES};
use crate::error::{Error, Result};

pub const ARCHIVE_URL: &str = "https://www.cs.toronto.edu/~kriz/cifar-10-binary.tar.gz";
pub const ARCHIVE_MD5: &str = "c32a1d4ab5d03f1284b67883e8d87530";
/// Top-level directory inside the archive.
const ARCHIVE_DIR: &str = "cifar-10-batches-bin";

#[derive(Debug, Clone)]
pub enum Source {
    Url(String),
    File(PathBuf),
}

#[derive(Debug, Clone)]
pub struct FetchOptions {
    pub source: Source,
    pub md5: String,
}

impl Default for FetchOptions {
    fn default() -> Self {
        Self {
            source: Source::Url(ARCHIVE_URL.to_string()),
            md5: ARCHIVE_MD5.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FetchOutcome {
    /// Every batch file was present and matched the manifest.
    AlreadyPresent,
    /// Files were present without a manifest; one was written.
    ManifestWritten,
    Downloaded,
}

fn files_present(root: &Path) -> bool {
    TRAIN_FILES.iter().chain([&TEST_FILE]).all(|f| root.join(f).is_file())
}

/// Makes sure `root` holds the verified binary batches. Existing verified
/// files are left untouched.
pub fn fetch_cifar10(root: &Path, opts: &FetchOptions) -> Result<FetchOutcome> {
    if files_present(root) {
        if verify_manifest(root)? {
            return Ok(FetchOutcome::AlreadyPresent);
        }
        if !root.join(crate::data::MANIFEST).exists() {
            write_manifest(root)?;
            return Ok(FetchOutcome::ManifestWritten);
        }
    }
    let archive = match &opts.source {
        Source::File(p) => fs::read(p).map_err(|e| Error::dataset(p, e.to_string()))?,
        Source::Url(url) => download(url)?,
    };
    let got = hex::encode(Md5::digest(&archive));
    if !got.eq_ignore_ascii_case(&opts.md5) {
        return Err(Error::dataset(
            root,
            format!("archive md5 {got} does not match expected {}", opts.md5),
        ));
    }
    unpack(&archive, root)?;
    write_manifest(root)?;
    Ok(FetchOutcome::Downloaded)
}

fn download(url: &str) -> Result<Vec<u8>> {
    info!("downloading {url}");
    let mut resp = ureq::get(url).call().map_err(|e| Error::Network(format!("{url}: {e}")))?;
    let mut bytes = Vec::new();
    resp.body_mut()
        .as_reader()
        .read_to_end(&mut bytes)
        .map_err(|e| Error::Network(format!("{url}: {e}")))?;
    Ok(bytes)
}

/// Extracts the batch files of a `.tar.gz` archive into `root`, writing each
/// through a temporary name so a partial run leaves no truncated batch.
pub fn unpack(archive: &[u8], root: &Path) -> Result<()> {
    fs::create_dir_all(root)?;
    let mut tar = tar::Archive::new(GzDecoder::new(archive));
    let wanted: Vec<&str> = TRAIN_FILES.iter().copied().chain([TEST_FILE, "batches.meta.txt"]).collect();
    let mut found = 0;
    for entry in tar.entries()? {
        let mut entry = entry?;
        let path = entry.path()?.into_owned();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        let in_dir = path.parent().and_then(|p| p.file_name()).is_some_and(|d| d == ARCHIVE_DIR);
        if !in_dir || !wanted.contains(&name) {
            continue;
        }
        let dest = root.join(name);
        let tmp = dest.with_extension("part");
        io::copy(&mut entry, &mut fs::File::create(&tmp)?)?;
        fs::rename(&tmp, &dest)?;
        found += 1;
    }
    if !files_present(root) {
        return Err(Error::dataset(root, format!("archive held only {found} of the expected files")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{RECORDS_PER_FILE, RECORD_BYTES};

    fn archive() -> Vec<u8> {
        let gz = flate2::write::GzEncoder::new(Vec::new(), flate2::Compression::fast());
        let mut tar = tar::Builder::new(gz);
        for (i, name) in TRAIN_FILES.iter().chain([&TEST_FILE]).enumerate() {
            let mut body = vec![0u8; RECORD_BYTES * RECORDS_PER_FILE];
            body[1] = i as u8;
            let mut h = tar::Header::new_gnu();
            h.set_size(body.len() as u64);
            h.set_mode(0o644);
            h.set_cksum();
            tar.append_data(&mut h, format!("{ARCHIVE_DIR}/{name}"), body.as_slice()).unwrap();
        }
        tar.into_inner().unwrap().finish().unwrap()
    }

    #[test]
    fn fetch_from_file_is_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        let bytes = archive();
        let src = dir.path().join("a.tar.gz");
        fs::write(&src, &bytes).unwrap();
        let opts = FetchOptions {
            source: Source::File(src),
            md5: hex::encode(Md5::digest(&bytes)),
        };
        let root = dir.path().join("data");
        assert_eq!(fetch_cifar10(&root, &opts).unwrap(), FetchOutcome::Downloaded);
        assert!(verify_manifest(&root).unwrap());
        let before = fs::metadata(root.join(TEST_FILE)).unwrap().modified().unwrap();
        assert_eq!(fetch_cifar10(&root, &opts).unwrap(), FetchOutcome::AlreadyPresent);
        assert_eq!(fs::metadata(root.join(TEST_FILE)).unwrap().modified().unwrap(), before);
    }

    #[test]
    fn bad_md5_is_rejected_without_writing() {
        let dir = tempfile::tempdir().unwrap();
        let src = dir.path().join("a.tar.gz");
        fs::write(&src, archive()).unwrap();
        let opts = FetchOptions {
            source: Source::File(src),
            md5: ARCHIVE_MD5.into(),
        };
        let root = dir.path().join("data");
        assert!(matches!(fetch_cifar10(&root, &opts), Err(Error::Dataset { .. })));
        assert!(!root.exists());
    }

    #[test]
    fn existing_files_get_a_manifest() {
        let dir = tempfile::tempdir().unwrap();
        unpack(&archive(), dir.path()).unwrap();
        let opts = FetchOptions {
            source: Source::Url("http://invalid.invalid/".into()),
            md5: String::new(),
        };
        assert_eq!(fetch_cifar10(dir.path(), &opts).unwrap(), FetchOutcome::ManifestWritten);
        assert_eq!(fetch_cifar10(dir.path(), &opts).unwrap(), FetchOutcome::AlreadyPresent);
    }
}
