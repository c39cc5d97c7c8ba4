//! Single-file model container.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! "SMSH" | version: u32 | kind: u32 | header_len: u32 | header (JSON)
//!        | parameter data (f32, arrays in header order) | SHA-256 of all preceding bytes
//! ```
//!
//! The header records the architecture, the diffusion schedule for
//! denoisers, the training seed and each array's name and shape.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::codec::CodecModel;
use crate::diffusion::{DenoiserModel, VarianceSchedule};
use crate::eavesdrop::EveClassifier;
use crate::error::{Error, Result};
use crate::nn::NamedArray;

pub const MAGIC: [u8; 4] = *b"SMSH";
pub const FORMAT_VERSION: u32 = 1;
const PREFIX: usize = 16;
const DIGEST: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Codec = 1,
    Denoiser = 2,
    Eve = 3,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Codec => "codec",
            Self::Denoiser => "denoiser",
            Self::Eve => "eve",
        }
    }

    fn from_tag(tag: u32) -> Option<Self> {
        [Self::Codec, Self::Denoiser, Self::Eve]
            .into_iter()
            .find(|k| *k as u32 == tag)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Codec(CodecModel),
    Denoiser(DenoiserModel),
    Eve(EveClassifier),
}

impl Model {
    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Codec(_) => ModelKind::Codec,
            Model::Denoiser(_) => ModelKind::Denoiser,
            Model::Eve(_) => ModelKind::Eve,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    arch: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    schedule: Option<VarianceSchedule>,
    train_seed: u64,
    arrays: Vec<ArrayEntry>,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn encode(model: &Model) -> Result<Vec<u8>> {
    let (arch, schedule, train_seed, arrays) = match model {
        Model::Codec(m) => (serde_json::to_value(m.arch())?, None, m.train_seed(), m.export()),
        Model::Denoiser(m) => (
            serde_json::to_value(m.arch())?,
            Some(m.schedule().clone()),
            m.train_seed(),
            m.export(),
        ),
        Model::Eve(m) => (serde_json::to_value(m.arch())?, None, m.train_seed(), m.export()),
    };
    let header = Header {
        arch,
        schedule,
        train_seed,
        arrays: arrays
            .iter()
            .map(|a| ArrayEntry {
                name: a.name.clone(),
                shape: a.shape.clone(),
            })
            .collect(),
    };
    let header = serde_json::to_vec(&header)?;
    let payload: usize = arrays.iter().map(|a| a.data.len() * 4).sum();
    let mut out = Vec::with_capacity(PREFIX + header.len() + payload + DIGEST);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(model.kind() as u32).to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for a in &arrays {
        for v in &a.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

fn le_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4-byte slice"))
}

pub fn decode(bytes: &[u8]) -> Result<Model> {
    if bytes.len() >= 4 && bytes[..4] != MAGIC {
        return Err(corrupt("missing SMSH magic"));
    }
    if bytes.len() >= 8 {
        let version = le_u32(bytes, 4);
        if version != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                expected: FORMAT_VERSION,
                found: version,
            });
        }
    }
    if bytes.len() < PREFIX + DIGEST {
        return Err(Error::Checksum);
    }
    let (body, trailer) = bytes.split_at(bytes.len() - DIGEST);
    if Sha256::digest(body).as_slice() != trailer {
        return Err(Error::Checksum);
    }
    let kind_tag = le_u32(body, 8);
    let kind = ModelKind::from_tag(kind_tag).ok_or_else(|| corrupt(format!("unknown model kind {kind_tag}")))?;
    let header_len = le_u32(body, 12) as usize;
    let header_end = PREFIX
        .checked_add(header_len)
        .filter(|&e| e <= body.len())
        .ok_or_else(|| corrupt("header overruns the file"))?;
    let header: Header = serde_json::from_slice(&body[PREFIX..header_end])
        .map_err(|e| corrupt(format!("header: {e}")))?;
    let mut data = &body[header_end..];
    let mut arrays = Vec::with_capacity(header.arrays.len());
    for entry in header.arrays {
        let n: usize = entry.shape.iter().product();
        if data.len() < n * 4 {
            return Err(corrupt(format!("array `{}` overruns the file", entry.name)));
        }
        let (chunk, rest) = data.split_at(n * 4);
        let values = chunk
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4-byte chunk")))
            .collect();
        arrays.push(NamedArray::new(entry.name, entry.shape, values));
        data = rest;
    }
    if !data.is_empty() {
        return Err(corrupt(format!("{} trailing payload bytes", data.len())));
    }
    let arch_err = |e: serde_json::Error| corrupt(format!("architecture: {e}"));
    Ok(match kind {
        ModelKind::Codec => Model::Codec(CodecModel::import(
            serde_json::from_value(header.arch).map_err(arch_err)?,
            header.train_seed,
            arrays,
        )?),
        ModelKind::Denoiser => Model::Denoiser(DenoiserModel::import(
            serde_json::from_value(header.arch).map_err(arch_err)?,
            header
                .schedule
                .ok_or_else(|| corrupt("denoiser checkpoint without a schedule"))?,
            header.train_seed,
            arrays,
        )?),
        ModelKind::Eve => Model::Eve(EveClassifier::import(
            serde_json::from_value(header.arch).map_err(arch_err)?,
            header.train_seed,
            arrays,
        )?),
    })
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    let bytes = encode(model)?;
    std::fs::write(path, bytes).map_err(|e| Error::from(e).context(format!("writing {}", path.display())))
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let bytes = match std::fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::MissingArtifact(path.to_path_buf()))
        }
        Err(e) => return Err(Error::from(e).context(format!("reading {}", path.display()))),
    };
    decode(&bytes).map_err(|e| e.context(format!("loading {}", path.display())))
}

fn mismatch(expected: ModelKind, found: &Model, path: &Path) -> Error {
    Error::KindMismatch {
        expected: expected.name(),
        found: found.kind().name().to_string(),
    }
    .context(format!("loading {}", path.display()))
}

pub fn load_codec(path: &Path) -> Result<CodecModel> {
    match load_checkpoint(path)? {
        Model::Codec(m) => Ok(m),
        other => Err(mismatch(ModelKind::Codec, &other, path)),
    }
}

pub fn load_denoiser(path: &Path) -> Result<DenoiserModel> {
    match load_checkpoint(path)? {
        Model::Denoiser(m) => Ok(m),
        other => Err(mismatch(ModelKind::Denoiser, &other, path)),
    }
}

pub fn load_eve(path: &Path) -> Result<EveClassifier> {
    match load_checkpoint(path)? {
        Model::Eve(m) => Ok(m),
        other => Err(mismatch(ModelKind::Eve, &other, path)),
    }
}
