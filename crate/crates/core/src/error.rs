use alloc::string::String;
use alloc::vec::Vec;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TensorError {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("invalid shape {shape:?}: every axis must be positive")]
    InvalidShape { shape: Vec<usize> },
    #[error("shape {shape:?} needs {} values, got {len}", shape.iter().product::<usize>())]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("{op} produced or received a non-finite value")]
    NonFinite { op: &'static str },
    #[error("softmax over a row where every entry is masked")]
    Degenerate,
    #[error("index {index} out of range for {len} rows")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("contract violated: {0}")]
    Contract(&'static str),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CorpusError {
    #[error("vocabulary max size {0} is too small; at least 5 entries are needed")]
    VocabTooSmall(usize),
    #[error("cannot build a vocabulary from an empty corpus")]
    EmptyCorpus,
    #[error(
        "parallel files are misaligned: {source_lines} source lines vs {target_lines} target lines"
    )]
    Misaligned {
        source_lines: usize,
        target_lines: usize,
    },
    #[error("synthetic corpus: {0}")]
    Synth(String),
    #[error("function-word list {0} has no entries")]
    EmptyFunctionWords(String),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("token id {id} out of range for vocabulary of {size}")]
    TokenOutOfRange { id: usize, size: usize },
    #[error("source length {len} outside 1..={max}")]
    SourceLength { len: usize, max: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite loss at step {step} (batch {batch:?}, gradient norm {grad_norm})")]
    NonFiniteLoss {
        step: usize,
        batch: Vec<usize>,
        grad_norm: f64,
    },
    #[error("missing parameter {0}")]
    MissingParam(String),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(
        "trace was produced by different parameters (fingerprint {trace:016x}, model {model:016x})"
    )]
    StaleTrace { trace: u64, model: u64 },
    #[error("step {step} out of range for a trace of {len} steps")]
    StepOutOfRange { step: usize, len: usize },
    #[error("attention of length {got} does not match source length {expected}")]
    AttentionLength { got: usize, expected: usize },
    #[error("no traces to analyze")]
    NoTraces,
    #[error("sentence {sentence}, step {step}: {source}")]
    Intervention {
        sentence: usize,
        step: usize,
        source: crate::intervention::InterventionError,
    },
}

impl From<TensorError> for AnalysisError {
    fn from(e: TensorError) -> Self {
        AnalysisError::Model(ModelError::Tensor(e))
    }
}
