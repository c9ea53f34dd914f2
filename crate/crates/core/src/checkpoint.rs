//! Versioned checkpoint files.
//!
//! Layout: the 8-byte magic `CLABCKPT`, a little-endian `u32` format
//! version, a little-endian `u64` header length, a JSON header, then the
//! payload of little-endian `f32` values. The header names every tensor with
//! its shape and payload offset, records the model configuration, the bin
//! grid version and training state, and carries a SHA-256 of the payload
//! that is checked on load.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classifier::{ClassifierConfig, ClassifierNet};
use crate::color::{lab_to_rgb, AbBinGrid, LabImage, RgbImage, DEFAULT_TEMPERATURE};
use crate::error::{Error, Result};
use crate::gan::{denormalize_ab, l_tensor, DiscriminatorConfig, Gan, Generator, GeneratorConfig};
use crate::nn::{Adam, AdamConfig, Module, Moments};

pub const MAGIC: &[u8; 8] = b"CLABCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub epoch: u64,
    pub step: u64,
    pub seed: u64,
}

/// A model with whatever optimizer state is needed to resume it.
#[derive(Debug, Clone)]
pub enum Model {
    Classifier { net: ClassifierNet, opt: Option<Adam> },
    Gan(Gan),
    /// Generator alone, for inference.
    Generator(Generator),
}

impl Model {
    pub fn kind(&self) -> &'static str {
        match self {
            Model::Classifier { .. } => "classifier",
            Model::Gan(_) => "gan",
            Model::Generator(_) => "generator",
        }
    }

    /// Colorizes lightness-only images in one batch.
    pub fn colorize_batch(&mut self, grays: &[LabImage], temperature: f32) -> Result<Vec<RgbImage>> {
        let Some(first) = grays.first() else {
            return Ok(Vec::new());
        };
        let (h, w) = (first.height(), first.width());
        if grays.iter().any(|g| (g.height(), g.width()) != (h, w)) {
            return Err(Error::shape("all images in a batch must share one size"));
        }
        let planes: Vec<&[f32]> = grays.iter().map(|g| g.l()).collect();
        let abs: Vec<Vec<f32>> = match self {
            Model::Classifier { net, .. } => net.predict_ab(h, w, &planes, temperature)?,
            Model::Gan(gan) => generator_ab(&mut gan.generator, h, w, &planes)?,
            Model::Generator(g) => generator_ab(g, h, w, &planes)?,
        };
        grays
            .iter()
            .zip(abs)
            .map(|(g, ab)| Ok(lab_to_rgb(&g.with_ab(ab)?)))
            .collect()
    }

    pub fn generator_mut(&mut self) -> Option<&mut Generator> {
        match self {
            Model::Gan(g) => Some(&mut g.generator),
            Model::Generator(g) => Some(g),
            Model::Classifier { .. } => None,
        }
    }
}

fn generator_ab(g: &mut Generator, h: usize, w: usize, planes: &[&[f32]]) -> Result<Vec<Vec<f32>>> {
    let out = g.forward(&l_tensor(h, w, planes)?, false)?;
    Ok((0..planes.len()).map(|n| denormalize_ab(&out, n)).collect())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct AdamHeader {
    config: AdamConfig,
    step: u64,
}

impl AdamHeader {
    fn of(opt: &Adam) -> Self {
        Self {
            config: opt.config,
            step: opt.step,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum ModelHeader {
    Classifier {
        config: ClassifierConfig,
        adam: Option<AdamHeader>,
    },
    Gan {
        generator: GeneratorConfig,
        discriminator: DiscriminatorConfig,
        lambda: f32,
        g_adam: AdamHeader,
        d_adam: AdamHeader,
    },
    Generator {
        generator: GeneratorConfig,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Offset into the payload, in values.
    offset: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    model: ModelHeader,
    grid_version: String,
    image_size: usize,
    train_state: Option<TrainState>,
    tensors: Vec<TensorEntry>,
    payload_values: usize,
    payload_sha256: String,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model,
    pub train_state: Option<TrainState>,
    /// Side length of the square images the model was trained on.
    pub image_size: usize,
}

/// Collects `(name, shape, values)` for every tensor to store.
fn gather(model: &mut Model) -> Vec<(String, Vec<usize>, Vec<f32>)> {
    let mut out = Vec::new();
    let mut params = |prefix: &str, m: &mut dyn FnMut() -> Vec<(String, Vec<usize>, Vec<f32>)>| {
        for (n, s, v) in m() {
            out.push((format!("{prefix}.{n}"), s, v));
        }
    };
    fn dump(m: &mut impl Module) -> Vec<(String, Vec<usize>, Vec<f32>)> {
        m.named_params().into_iter().map(|(n, p)| (n, p.shape.clone(), p.value.clone())).collect()
    }
    fn moments(opt: &Adam) -> Vec<(String, Vec<usize>, Vec<f32>)> {
        opt.state
            .iter()
            .flat_map(|(n, st)| {
                [
                    (format!("m.{n}"), vec![st.m.len()], st.m.clone()),
                    (format!("v.{n}"), vec![st.v.len()], st.v.clone()),
                ]
            })
            .collect()
    }
    match model {
        Model::Classifier { net, opt } => {
            params("model", &mut || dump(net));
            if let Some(opt) = opt {
                params("adam", &mut || moments(opt));
            }
        }
        Model::Gan(gan) => {
            params("generator", &mut || dump(&mut gan.generator));
            params("discriminator", &mut || dump(&mut gan.discriminator));
            params("g_adam", &mut || moments(&gan.g_opt));
            params("d_adam", &mut || moments(&gan.d_opt));
        }
        Model::Generator(g) => params("generator", &mut || dump(g)),
    }
    out
}

fn restore_params(m: &mut impl Module, prefix: &str, tensors: &mut BTreeMap<String, (Vec<usize>, Vec<f32>)>) -> Result<()> {
    for (name, p) in m.named_params() {
        let key = format!("{prefix}.{name}");
        let (shape, values) = tensors
            .remove(&key)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {key}")))?;
        if shape != p.shape {
            return Err(Error::Checkpoint(format!(
                "tensor {key} has shape {shape:?}, model expects {:?}",
                p.shape
            )));
        }
        p.value = values;
        p.zero_grad();
    }
    Ok(())
}

fn restore_adam(
    header: &AdamHeader,
    prefix: &str,
    tensors: &mut BTreeMap<String, (Vec<usize>, Vec<f32>)>,
) -> Result<Adam> {
    let mut opt = Adam::new(header.config);
    opt.step = header.step;
    let keys: Vec<String> = tensors
        .keys()
        .filter(|k| k.starts_with(&format!("{prefix}.m.")))
        .cloned()
        .collect();
    for key in keys {
        let name = key[prefix.len() + 3..].to_string();
        let (_, m) = tensors.remove(&key).expect("listed");
        let vkey = format!("{prefix}.v.{name}");
        let (_, v) = tensors
            .remove(&vkey)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {vkey}")))?;
        if m.len() != v.len() {
            return Err(Error::Checkpoint(format!("moment sizes differ for {name}")));
        }
        opt.state.insert(name, Moments { m, v });
    }
    Ok(opt)
}

impl Checkpoint {
    pub fn new(model: Model, image_size: usize) -> Self {
        Self {
            model,
            train_state: None,
            image_size,
        }
    }

    pub fn to_bytes(&mut self) -> Result<Vec<u8>> {
        let model = match &self.model {
            Model::Classifier { net, opt } => ModelHeader::Classifier {
                config: net.config().clone(),
                adam: opt.as_ref().map(AdamHeader::of),
            },
            Model::Gan(gan) => ModelHeader::Gan {
                generator: gan.generator.config().clone(),
                discriminator: gan.discriminator.config().clone(),
                lambda: gan.lambda,
                g_adam: AdamHeader::of(&gan.g_opt),
                d_adam: AdamHeader::of(&gan.d_opt),
            },
            Model::Generator(g) => ModelHeader::Generator {
                generator: g.config().clone(),
            },
        };
        let mut payload = Vec::new();
        let mut tensors = Vec::new();
        let mut offset = 0;
        for (name, shape, values) in gather(&mut self.model) {
            if values.iter().any(|v| !v.is_finite()) {
                log::warn!("tensor {name} holds non-finite values");
            }
            tensors.push(TensorEntry {
                name,
                shape,
                offset,
            });
            offset += values.len();
            for v in values {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        let header = Header {
            model,
            grid_version: AbBinGrid::standard().version_hash(),
            image_size: self.image_size,
            train_state: self.train_state,
            tensors,
            payload_values: offset,
            payload_sha256: hex::encode(Sha256::digest(&payload)),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut out = Vec::with_capacity(20 + json.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = &bytes[20..];
        if hlen > body.len() {
            return Err(bad("truncated header"));
        }
        let header: Header =
            serde_json::from_slice(&body[..hlen]).map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
        let payload = &body[hlen..];
        if payload.len() != header.payload_values * 4 {
            return Err(Error::Checkpoint(format!(
                "payload has {} bytes, header declares {} values",
                payload.len(),
                header.payload_values
            )));
        }
        if hex::encode(Sha256::digest(payload)) != header.payload_sha256 {
            return Err(bad("payload checksum mismatch"));
        }
        let grid = AbBinGrid::standard().version_hash();
        if header.grid_version != grid {
            return Err(Error::Checkpoint(format!(
                "checkpoint was trained with bin grid {}, this build uses {grid}",
                header.grid_version
            )));
        }
        let values: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let mut tensors = BTreeMap::new();
        for t in &header.tensors {
            let len: usize = t.shape.iter().product();
            let slice = values
                .get(t.offset..t.offset + len)
                .ok_or_else(|| Error::Checkpoint(format!("tensor {} lies outside the payload", t.name)))?;
            tensors.insert(t.name.clone(), (t.shape.clone(), slice.to_vec()));
        }
        let model = match &header.model {
            ModelHeader::Classifier { config, adam } => {
                let mut net = ClassifierNet::new(config.clone(), 0)?;
                restore_params(&mut net, "model", &mut tensors)?;
                let opt = adam.as_ref().map(|a| restore_adam(a, "adam", &mut tensors)).transpose()?;
                Model::Classifier { net, opt }
            }
            ModelHeader::Gan {
                generator,
                discriminator,
                lambda,
                g_adam,
                d_adam,
            } => {
                let mut gan = Gan::new(generator.clone(), discriminator.clone(), g_adam.config, d_adam.config, *lambda, 0)?;
                restore_params(&mut gan.generator, "generator", &mut tensors)?;
                restore_params(&mut gan.discriminator, "discriminator", &mut tensors)?;
                gan.g_opt = restore_adam(g_adam, "g_adam", &mut tensors)?;
                gan.d_opt = restore_adam(d_adam, "d_adam", &mut tensors)?;
                Model::Gan(gan)
            }
            ModelHeader::Generator { generator } => {
                let mut g = Generator::new(generator.clone(), 0)?;
                restore_params(&mut g, "generator", &mut tensors)?;
                Model::Generator(g)
            }
        };
        if let Some(extra) = tensors.keys().next() {
            return Err(Error::Checkpoint(format!("unexpected tensor {extra}")));
        }
        Ok(Self {
            model,
            train_state: header.train_state,
            image_size: header.image_size,
        })
    }

    /// Writes atomically via a temporary file in the same directory.
    pub fn save(&mut self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        let tmp = path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }

    /// A generator-only copy for inference.
    pub fn export_generator(&self) -> Result<Checkpoint> {
        let g = match &self.model {
            Model::Gan(gan) => gan.generator.clone(),
            Model::Generator(g) => g.clone(),
            Model::Classifier { .. } => return Err(Error::Checkpoint("a classifier has no generator".into())),
        };
        Ok(Checkpoint {
            model: Model::Generator(g),
            train_state: None,
            image_size: self.image_size,
        })
    }

    /// Colorizes one lightness image, rejecting sizes the model was not
    /// trained on.
    pub fn colorize(&mut self, gray: &LabImage) -> Result<RgbImage> {
        if (gray.height(), gray.width()) != (self.image_size, self.image_size) {
            return Err(Error::shape(format!(
                "this {} checkpoint takes {s}x{s} images, got {}x{}",
                self.model.kind(),
                gray.height(),
                gray.width(),
                s = self.image_size
            )));
        }
        Ok(self
            .model
            .colorize_batch(std::slice::from_ref(gray), DEFAULT_TEMPERATURE)?
            .pop()
            .expect("one image"))
    }
}
