//! Binary checkpoint format.
//!
//! ```text
//! "ATCF"  u16 version  u32 header-length  header (JSON)  tensor data
//! ```
//!
//! All integers and floats are little-endian. The header carries the run
//! configuration, model dimensions, both vocabularies and a manifest giving
//! each tensor's name, shape and byte offset into the data section.

use std::fs;
use std::path::Path;

use cfattn_core::corpus::Vocab;
use cfattn_core::seq2seq::{Model, ModelDims, ModelParams};
use cfattn_core::tensor::Tensor;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"ATCF";
pub const VERSION: u16 = 1;
pub const TOOL_VERSION: &str = concat!("cfattn ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocabTable {
    pub max_size: usize,
    pub tokens: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset from the start of the data section.
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub tool_version: String,
    pub config_hash: String,
    pub config: RunConfig,
    pub dims: ModelDims,
    pub source_vocab: VocabTable,
    pub target_vocab: VocabTable,
    pub tensors: Vec<TensorEntry>,
}

pub struct Checkpoint {
    pub header: Header,
    pub model: Model,
    /// Hex SHA-256 of the file bytes.
    pub hash: String,
}

fn table(v: &Vocab) -> VocabTable {
    VocabTable {
        max_size: v.max_size(),
        tokens: v.tokens().to_vec(),
    }
}

pub fn encode(model: &Model, config: &RunConfig) -> Vec<u8> {
    let mut tensors = Vec::new();
    let mut data = Vec::new();
    for (name, t) in model.params.store().iter() {
        tensors.push(TensorEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            offset: data.len() as u64,
        });
        for v in t.data() {
            data.extend_from_slice(&v.to_le_bytes());
        }
    }
    let header = Header {
        tool_version: TOOL_VERSION.to_string(),
        config_hash: config.hash(),
        config: config.clone(),
        dims: *model.params.dims(),
        source_vocab: table(&model.source_vocab),
        target_vocab: table(&model.target_vocab),
        tensors,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(10 + json.len() + data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&data);
    out
}

pub fn save(path: &Path, model: &Model, config: &RunConfig) -> Result<String> {
    let bytes = encode(model, config);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let bad = |message: String| Error::Format {
        path: path.to_path_buf(),
        message,
    };
    if bytes.len() < 10 || &bytes[..4] != MAGIC {
        return Err(bad("missing ATCF magic bytes".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(Error::Version {
            path: path.to_path_buf(),
            found: version,
            expected: VERSION,
        });
    }
    let header_len = u32::from_le_bytes([bytes[6], bytes[7], bytes[8], bytes[9]]) as usize;
    let data_start = 10usize
        .checked_add(header_len)
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| bad("header runs past the end of the file".into()))?;
    let header: Header =
        serde_json::from_slice(&bytes[10..data_start]).map_err(|e| bad(format!("header: {e}")))?;
    let data = &bytes[data_start..];

    let mut named = Vec::with_capacity(header.tensors.len());
    let mut expected_offset = 0u64;
    for entry in &header.tensors {
        if entry.offset != expected_offset {
            return Err(bad(format!("tensor {} is not contiguous", entry.name)));
        }
        let count: usize = entry.shape.iter().product();
        let start = entry.offset as usize;
        let end = start + 8 * count;
        let raw = data.get(start..end).ok_or_else(|| {
            bad(format!(
                "tensor {} runs past the end of the file",
                entry.name
            ))
        })?;
        let values: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let tensor = Tensor::new(entry.shape.clone(), values)
            .map_err(|e| bad(format!("tensor {}: {e}", entry.name)))?;
        named.push((entry.name.clone(), tensor));
        expected_offset = end as u64;
    }
    if expected_offset as usize != data.len() {
        return Err(bad("trailing bytes after the last tensor".into()));
    }

    let params = ModelParams::from_named(header.dims, named).map_err(|e| bad(e.to_string()))?;
    let vocab = |t: &VocabTable| {
        Vocab::from_tokens(t.tokens.clone(), t.max_size).map_err(|e| bad(e.to_string()))
    };
    let model = Model::new(
        params,
        vocab(&header.source_vocab)?,
        vocab(&header.target_vocab)?,
    )
    .map_err(|e| bad(e.to_string()))?;
    let hash = hex::encode(Sha256::digest(bytes));
    Ok(Checkpoint {
        header,
        model,
        hash,
    })
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
