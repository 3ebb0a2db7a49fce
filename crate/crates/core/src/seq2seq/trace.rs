//! Greedy decoding with a full record of every intermediate, and the replay
//! functions that recompute attention and logits from that record.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::corpus::{BOS, EOS};
use crate::error::ModelError;
use crate::seq2seq::forward::{self, DecoderState};
use crate::seq2seq::params::{Model, ModelParams};
use crate::tensor::{self, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    /// Top-layer decoder state `s_t`.
    pub state: Vec<f64>,
    /// Raw attention scores `a(s_t, h_i)`.
    pub scores: Vec<f64>,
    /// `α_t`.
    pub attention: Vec<f64>,
    /// `c_t`.
    pub context: Vec<f64>,
    pub logits: Vec<f64>,
    pub token: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranslationTrace {
    pub source_ids: Vec<usize>,
    pub source_tokens: Vec<String>,
    /// `h_i = [→h_i; ←h_i]` for every source position.
    pub encoder_states: Vec<Vec<f64>>,
    pub steps: Vec<TraceStep>,
    pub output_tokens: Vec<String>,
    pub terminated_by_eos: bool,
    pub max_steps: usize,
    /// [`ModelParams::fingerprint`] of the weights that produced the trace.
    pub fingerprint: u64,
}

impl TranslationTrace {
    pub fn source_len(&self) -> usize {
        self.encoder_states.len()
    }

    pub fn emitted_ids(&self) -> Vec<usize> {
        self.steps.iter().map(|s| s.token).collect()
    }
}

/// Default decoding budget for a source of `m` tokens.
pub fn default_max_steps(source_len: usize) -> usize {
    2 * source_len + 5
}

/// Greedy argmax decoding until EOS or `max_steps`, recording everything
/// needed to replay any step without re-running the encoder.
pub fn greedy_translate(
    model: &Model,
    source_tokens: &[String],
    max_steps: Option<usize>,
) -> Result<TranslationTrace, ModelError> {
    let source_ids = model.source_vocab.encode(source_tokens);
    let mut trace = greedy_translate_ids(&model.params, &source_ids, max_steps)?;
    trace.source_tokens = source_tokens.to_vec();
    trace.output_tokens = model.target_vocab.decode(&trace.emitted_ids());
    Ok(trace)
}

/// [`greedy_translate`] over raw ids; token strings are left empty.
pub fn greedy_translate_ids(
    params: &ModelParams,
    source_ids: &[usize],
    max_steps: Option<usize>,
) -> Result<TranslationTrace, ModelError> {
    let dims = params.dims();
    forward::check_source(dims, source_ids)?;
    let max_steps = max_steps.unwrap_or_else(|| default_max_steps(source_ids.len()));

    let mut tape = Tape::new();
    let bound = forward::bind(&mut tape, params);
    let encoded = forward::encode_batch(&mut tape, &bound, dims, &[source_ids])?;
    let memory = tape.value(encoded.memory);
    let width = dims.memory_width();
    let encoder_states: Vec<Vec<f64>> = memory.data().chunks(width).map(<[f64]>::to_vec).collect();

    let mut state = forward::initial_state(&mut tape, dims, 1);
    let mut prev = BOS;
    let mut steps = Vec::new();
    let mut terminated_by_eos = false;
    for _ in 0..max_steps {
        let (s, hs, cs) = forward::decoder_step(&mut tape, &bound, &[prev], &state)?;
        let att = forward::attend(&mut tape, &bound, s, &encoded)?;
        let logits = forward::output_logits(&mut tape, &bound, s, att.context)?;
        let logit_values = tape.value(logits).data().to_vec();
        let token = tensor::argmax(&logit_values);
        steps.push(TraceStep {
            state: tape.value(s).data().to_vec(),
            scores: tape.value(att.scores).data().to_vec(),
            attention: tape.value(att.weights).data().to_vec(),
            context: tape.value(att.context).data().to_vec(),
            logits: logit_values,
            token,
        });
        state = DecoderState {
            h: hs,
            c: cs,
            context: att.context,
        };
        if token == EOS {
            terminated_by_eos = true;
            break;
        }
        prev = token;
    }

    Ok(TranslationTrace {
        source_ids: source_ids.to_vec(),
        source_tokens: Vec::new(),
        encoder_states,
        steps,
        output_tokens: Vec::new(),
        terminated_by_eos,
        max_steps,
        fingerprint: params.fingerprint(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Attention {
    pub scores: Vec<f64>,
    pub weights: Vec<f64>,
    pub context: Vec<f64>,
}

fn memory_tensor(encoder_states: &[Vec<f64>], width: usize) -> Result<Tensor, ModelError> {
    if encoder_states.is_empty() || encoder_states.iter().any(|h| h.len() != width) {
        return Err(ModelError::Config(
            "encoder states do not match the attention width".into(),
        ));
    }
    let data: Vec<f64> = encoder_states.iter().flatten().copied().collect();
    Ok(Tensor::new(vec![1, encoder_states.len(), width], data)?)
}

fn state_tensor(params: &ModelParams, state: &[f64]) -> Result<Tensor, ModelError> {
    Ok(Tensor::matrix(1, params.dims().hidden, state.to_vec())?)
}

/// Scores, attention weights and context for decoder state `state` over the
/// stored encoder states.
pub fn attend(
    params: &ModelParams,
    state: &[f64],
    encoder_states: &[Vec<f64>],
) -> Result<Attention, ModelError> {
    let memory = memory_tensor(encoder_states, params.dims().memory_width())?;
    let query = tensor::matmul(
        &state_tensor(params, state)?,
        params.get(params.layout.attention),
    )?;
    let scores = tensor::memory_scores(&query, &memory)?;
    let weights = tensor::softmax_rows(&scores, &[encoder_states.len()])?;
    let context = tensor::weighted_sum(&weights, &memory)?;
    Ok(Attention {
        scores: scores.into_data(),
        weights: weights.into_data(),
        context: context.into_data(),
    })
}

/// `c = Σ_i weights[i] · h_i` for arbitrary (possibly unnormalized) weights.
pub fn context_from_weights(
    params: &ModelParams,
    weights: &[f64],
    encoder_states: &[Vec<f64>],
) -> Result<Vec<f64>, ModelError> {
    let memory = memory_tensor(encoder_states, params.dims().memory_width())?;
    let weights = Tensor::matrix(1, encoder_states.len(), weights.to_vec()).map_err(|_| {
        ModelError::Config("attention weights must be finite and match the source length".into())
    })?;
    Ok(tensor::weighted_sum(&weights, &memory)?.into_data())
}

/// Output logits `g_dec(s_t, c_t)`.
pub fn output_logits(
    params: &ModelParams,
    state: &[f64],
    context: &[f64],
) -> Result<Vec<f64>, ModelError> {
    let s = state_tensor(params, state)?;
    let c = Tensor::matrix(1, params.dims().memory_width(), context.to_vec())?;
    let joined = tensor::concat_last(&[&s, &c])?;
    let projected = tensor::matmul(&joined, params.get(params.layout.output_w))?;
    Ok(tensor::add(&projected, params.get(params.layout.output_b))?.into_data())
}
