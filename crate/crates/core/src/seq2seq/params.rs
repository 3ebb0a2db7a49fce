use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamStore};
use crate::corpus::Vocab;
use crate::error::ModelError;
use crate::tensor::Tensor;

pub const INIT_RANGE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub source_vocab: usize,
    pub target_vocab: usize,
    pub embedding: usize,
    pub hidden: usize,
    pub layers: usize,
    /// Longest source accepted by the encoder.
    pub max_source_len: usize,
}

impl ModelDims {
    /// Width of one encoder state `[→h; ←h]`.
    pub fn memory_width(&self) -> usize {
        2 * self.hidden
    }

    fn validate(&self) -> Result<(), ModelError> {
        let fields = [
            ("source_vocab", self.source_vocab),
            ("target_vocab", self.target_vocab),
            ("embedding", self.embedding),
            ("hidden", self.hidden),
            ("layers", self.layers),
            ("max_source_len", self.max_source_len),
        ];
        for (name, value) in fields {
            if value == 0 {
                return Err(ModelError::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct CellIds {
    pub w: ParamId,
    pub b: ParamId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Layout {
    pub source_embedding: ParamId,
    pub target_embedding: ParamId,
    pub encoder_forward: Vec<CellIds>,
    pub encoder_backward: Vec<CellIds>,
    pub decoder: Vec<CellIds>,
    pub attention: ParamId,
    pub output_w: ParamId,
    pub output_b: ParamId,
}

/// Shapes of every parameter, in registration order.
pub fn parameter_shapes(dims: &ModelDims) -> Vec<(String, [usize; 2])> {
    let h = dims.hidden;
    let mut out = Vec::new();
    out.push((
        String::from("source_embedding"),
        [dims.source_vocab, dims.embedding],
    ));
    out.push((
        String::from("target_embedding"),
        [dims.target_vocab, dims.embedding],
    ));
    for dir in ["forward", "backward"] {
        for l in 0..dims.layers {
            let input = if l == 0 { dims.embedding } else { h };
            out.push((format!("encoder.{dir}.{l}.w"), [input + h, 4 * h]));
            out.push((format!("encoder.{dir}.{l}.b"), [1, 4 * h]));
        }
    }
    for l in 0..dims.layers {
        let input = if l == 0 {
            dims.embedding + dims.memory_width()
        } else {
            h
        };
        out.push((format!("decoder.{l}.w"), [input + h, 4 * h]));
        out.push((format!("decoder.{l}.b"), [1, 4 * h]));
    }
    out.push((String::from("attention.w"), [h, dims.memory_width()]));
    out.push((
        String::from("output.w"),
        [h + dims.memory_width(), dims.target_vocab],
    ));
    out.push((String::from("output.b"), [1, dims.target_vocab]));
    out
}

fn layout_for(dims: &ModelDims, store: &ParamStore) -> Result<Layout, ModelError> {
    let find = |name: String| store.find(&name).ok_or(ModelError::MissingParam(name));
    let cells = |prefix: &str| -> Result<Vec<CellIds>, ModelError> {
        (0..dims.layers)
            .map(|l| {
                Ok(CellIds {
                    w: find(format!("{prefix}.{l}.w"))?,
                    b: find(format!("{prefix}.{l}.b"))?,
                })
            })
            .collect()
    };
    Ok(Layout {
        source_embedding: find(String::from("source_embedding"))?,
        target_embedding: find(String::from("target_embedding"))?,
        encoder_forward: cells("encoder.forward")?,
        encoder_backward: cells("encoder.backward")?,
        decoder: cells("decoder")?,
        attention: find(String::from("attention.w"))?,
        output_w: find(String::from("output.w"))?,
        output_b: find(String::from("output.b"))?,
    })
}

/// Learned weights of the attentional encoder-decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    dims: ModelDims,
    store: ParamStore,
    pub(crate) layout: Layout,
}

impl ModelParams {
    /// Fresh parameters drawn uniformly from `[-0.1, 0.1]`.
    pub fn init(dims: ModelDims, seed: u64) -> Result<Self, ModelError> {
        dims.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        for (name, [rows, cols]) in parameter_shapes(&dims) {
            let data: Vec<f64> = (0..rows * cols)
                .map(|_| rng.gen_range(-INIT_RANGE..=INIT_RANGE))
                .collect();
            store.add(name, Tensor::matrix(rows, cols, data)?);
        }
        let layout = layout_for(&dims, &store)?;
        Ok(Self {
            dims,
            store,
            layout,
        })
    }

    /// Rebuilds parameters from named tensors, checking names and shapes.
    pub fn from_named(dims: ModelDims, tensors: Vec<(String, Tensor)>) -> Result<Self, ModelError> {
        dims.validate()?;
        let expected = parameter_shapes(&dims);
        if tensors.len() != expected.len() {
            return Err(ModelError::Config(format!(
                "expected {} parameter tensors, found {}",
                expected.len(),
                tensors.len()
            )));
        }
        let mut store = ParamStore::new();
        for ((name, shape), (got_name, tensor)) in expected.into_iter().zip(tensors) {
            if name != got_name || tensor.shape() != shape {
                return Err(ModelError::Config(format!(
                    "parameter {got_name} {:?} does not match expected {name} {shape:?}",
                    tensor.shape()
                )));
            }
            store.add(name, tensor);
        }
        let layout = layout_for(&dims, &store)?;
        Ok(Self {
            dims,
            store,
            layout,
        })
    }

    pub fn dims(&self) -> &ModelDims {
        &self.dims
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.store.find(name).map(|id| self.store.get(id))
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.store.find(name).map(|id| self.store.get_mut(id))
    }

    pub(crate) fn get(&self, id: ParamId) -> &Tensor {
        self.store.get(id)
    }

    /// FNV-1a over names, shapes and value bits; identifies the exact weights
    /// a trace was produced with.
    pub fn fingerprint(&self) -> u64 {
        const PRIME: u64 = 0x0000_0100_0000_01b3;
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(PRIME);
            }
        };
        for (name, t) in self.store.iter() {
            eat(name.as_bytes());
            for &d in t.shape() {
                eat(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                eat(&v.to_bits().to_le_bytes());
            }
        }
        h
    }

    pub fn all_finite(&self) -> bool {
        self.store
            .iter()
            .all(|(_, t)| t.data().iter().all(|v| v.is_finite()))
    }
}

/// Parameters together with the vocabularies they were trained against.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub params: ModelParams,
    pub source_vocab: Vocab,
    pub target_vocab: Vocab,
}

impl Model {
    pub fn new(
        params: ModelParams,
        source_vocab: Vocab,
        target_vocab: Vocab,
    ) -> Result<Self, ModelError> {
        let dims = params.dims();
        if dims.source_vocab != source_vocab.len() || dims.target_vocab != target_vocab.len() {
            return Err(ModelError::Config(format!(
                "vocabulary sizes {}/{} do not match model dims {}/{}",
                source_vocab.len(),
                target_vocab.len(),
                dims.source_vocab,
                dims.target_vocab
            )));
        }
        Ok(Self {
            params,
            source_vocab,
            target_vocab,
        })
    }
}
