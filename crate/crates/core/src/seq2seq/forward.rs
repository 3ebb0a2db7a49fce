//! Batched forward pass recorded on a [`Tape`].
//!
//! Training and greedy decoding both go through these functions, so the
//! numbers stored in a trace are exactly the ones the model computes.

use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{Tape, Var};
use crate::corpus::{SentencePair, Vocab, BOS, EOS, PAD};
use crate::error::{ModelError, TensorError};
use crate::seq2seq::params::{CellIds, ModelDims, ModelParams};
use crate::tensor::{self, Tensor};

#[derive(Debug, Clone, Copy)]
pub(crate) struct CellVars {
    w: Var,
    b: Var,
}

#[derive(Debug, Clone)]
pub(crate) struct Bound {
    source_embedding: Var,
    target_embedding: Var,
    encoder_forward: Vec<CellVars>,
    encoder_backward: Vec<CellVars>,
    decoder: Vec<CellVars>,
    attention: Var,
    output_w: Var,
    output_b: Var,
    hidden: usize,
}

pub(crate) fn bind(tape: &mut Tape, params: &ModelParams) -> Bound {
    let store = params.store();
    let layout = &params.layout;
    let cells = |ids: &[CellIds], tape: &mut Tape| -> Vec<CellVars> {
        ids.iter()
            .map(|c| CellVars {
                w: tape.param(store, c.w),
                b: tape.param(store, c.b),
            })
            .collect()
    };
    let encoder_forward = cells(&layout.encoder_forward, tape);
    let encoder_backward = cells(&layout.encoder_backward, tape);
    let decoder = cells(&layout.decoder, tape);
    Bound {
        source_embedding: tape.param(store, layout.source_embedding),
        target_embedding: tape.param(store, layout.target_embedding),
        encoder_forward,
        encoder_backward,
        decoder,
        attention: tape.param(store, layout.attention),
        output_w: tape.param(store, layout.output_w),
        output_b: tape.param(store, layout.output_b),
        hidden: params.dims().hidden,
    }
}

/// One LSTM step with gates ordered input, forget, candidate, output.
fn lstm_cell(
    tape: &mut Tape,
    cell: CellVars,
    hidden: usize,
    x: Var,
    h: Var,
    c: Var,
) -> Result<(Var, Var), TensorError> {
    let xh = tape.concat(&[x, h])?;
    let pre = tape.matmul(xh, cell.w)?;
    let gates = tape.add(pre, cell.b)?;
    let i = tape.slice_cols(gates, 0, hidden)?;
    let f = tape.slice_cols(gates, hidden, hidden)?;
    let g = tape.slice_cols(gates, 2 * hidden, hidden)?;
    let o = tape.slice_cols(gates, 3 * hidden, hidden)?;
    let (i, f, g, o) = (
        tape.sigmoid(i),
        tape.sigmoid(f),
        tape.tanh(g),
        tape.sigmoid(o),
    );
    let kept = tape.mul(f, c)?;
    let written = tape.mul(i, g)?;
    let c_next = tape.add(kept, written)?;
    let squashed = tape.tanh(c_next);
    let h_next = tape.mul(o, squashed)?;
    Ok((h_next, c_next))
}

fn zeros(tape: &mut Tape, rows: usize, cols: usize) -> Var {
    tape.constant(Tensor::zeros(&[rows, cols]))
}

pub(crate) struct Encoded {
    /// `[B × T × 2H]`; position `i` holds `[→h_i; ←h_i]` from the top layer.
    pub memory: Var,
    pub lengths: Vec<usize>,
}

pub(crate) fn check_source(dims: &ModelDims, ids: &[usize]) -> Result<(), ModelError> {
    if ids.is_empty() || ids.len() > dims.max_source_len {
        return Err(ModelError::SourceLength {
            len: ids.len(),
            max: dims.max_source_len,
        });
    }
    if let Some(&id) = ids.iter().find(|&&id| id >= dims.source_vocab) {
        return Err(ModelError::TokenOutOfRange {
            id,
            size: dims.source_vocab,
        });
    }
    Ok(())
}

pub(crate) fn encode_batch(
    tape: &mut Tape,
    bound: &Bound,
    dims: &ModelDims,
    sources: &[&[usize]],
) -> Result<Encoded, ModelError> {
    for s in sources {
        check_source(dims, s)?;
    }
    let batch = sources.len();
    let lengths: Vec<usize> = sources.iter().map(|s| s.len()).collect();
    let steps = lengths.iter().copied().max().unwrap_or(0);
    let h = bound.hidden;
    let ids_at = |t: usize| -> Vec<usize> {
        sources
            .iter()
            .map(|s| s.get(t).copied().unwrap_or(PAD))
            .collect()
    };

    let zero = zeros(tape, batch, h);
    let mut hs = vec![zero; dims.layers];
    let mut cs = vec![zero; dims.layers];
    let mut forward_top = Vec::with_capacity(steps);
    for t in 0..steps {
        let mut x = tape.gather(bound.source_embedding, &ids_at(t))?;
        for (l, cell) in bound.encoder_forward.iter().enumerate() {
            let (nh, nc) = lstm_cell(tape, *cell, h, x, hs[l], cs[l])?;
            hs[l] = nh;
            cs[l] = nc;
            x = nh;
        }
        forward_top.push(x);
    }

    let mut hs = vec![zero; dims.layers];
    let mut cs = vec![zero; dims.layers];
    let mut backward_top = vec![zero; steps];
    for t in (0..steps).rev() {
        let keep: Vec<bool> = lengths.iter().map(|&n| t < n).collect();
        let all_real = keep.iter().all(|&k| k);
        let mut x = tape.gather(bound.source_embedding, &ids_at(t))?;
        for (l, cell) in bound.encoder_backward.iter().enumerate() {
            let (nh, nc) = lstm_cell(tape, *cell, h, x, hs[l], cs[l])?;
            // Padding sits at the end, so the right-to-left pass must start
            // from a zero state at each sentence's last real token.
            if all_real {
                hs[l] = nh;
                cs[l] = nc;
            } else {
                hs[l] = tape.blend(nh, hs[l], &keep)?;
                cs[l] = tape.blend(nc, cs[l], &keep)?;
            }
            x = hs[l];
        }
        backward_top[t] = x;
    }

    let mut states = Vec::with_capacity(steps);
    for t in 0..steps {
        states.push(tape.concat(&[forward_top[t], backward_top[t]])?);
    }
    let memory = tape.stack(&states)?;
    Ok(Encoded { memory, lengths })
}

pub(crate) struct DecoderState {
    pub h: Vec<Var>,
    pub c: Vec<Var>,
    /// Context from the previous step, fed back into the recurrence.
    pub context: Var,
}

pub(crate) fn initial_state(tape: &mut Tape, dims: &ModelDims, batch: usize) -> DecoderState {
    let zero = zeros(tape, batch, dims.hidden);
    let context = zeros(tape, batch, dims.memory_width());
    DecoderState {
        h: vec![zero; dims.layers],
        c: vec![zero; dims.layers],
        context,
    }
}

/// `s_t = f_dec(y_{t-1}, s_{t-1}, c_{t-1})`. Returns the top-layer state and
/// the updated recurrent state (whose context still needs to be set).
pub(crate) fn decoder_step(
    tape: &mut Tape,
    bound: &Bound,
    prev: &[usize],
    state: &DecoderState,
) -> Result<(Var, Vec<Var>, Vec<Var>), TensorError> {
    let emb = tape.gather(bound.target_embedding, prev)?;
    let mut x = tape.concat(&[emb, state.context])?;
    let mut hs = Vec::with_capacity(state.h.len());
    let mut cs = Vec::with_capacity(state.c.len());
    for (l, cell) in bound.decoder.iter().enumerate() {
        let (nh, nc) = lstm_cell(tape, *cell, bound.hidden, x, state.h[l], state.c[l])?;
        hs.push(nh);
        cs.push(nc);
        x = nh;
    }
    Ok((x, hs, cs))
}

pub(crate) struct Attended {
    pub scores: Var,
    pub weights: Var,
    pub context: Var,
}

/// General (bilinear) attention: `a(s_t, h_i) = s_tᵀ W_a h_i`.
pub(crate) fn attend(
    tape: &mut Tape,
    bound: &Bound,
    state: Var,
    encoded: &Encoded,
) -> Result<Attended, TensorError> {
    let query = tape.matmul(state, bound.attention)?;
    let scores = tape.memory_scores(query, encoded.memory)?;
    let weights = tape.softmax_rows(scores, &encoded.lengths)?;
    let context = tape.weighted_sum(weights, encoded.memory)?;
    Ok(Attended {
        scores,
        weights,
        context,
    })
}

/// `g_dec(s_t, c_t)`: one affine map over `[s_t; c_t]`.
pub(crate) fn output_logits(
    tape: &mut Tape,
    bound: &Bound,
    state: Var,
    context: Var,
) -> Result<Var, TensorError> {
    let joined = tape.concat(&[state, context])?;
    let projected = tape.matmul(joined, bound.output_w)?;
    tape.add(projected, bound.output_b)
}

/// Token ids of one training pair; the target excludes EOS.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedPair {
    pub source: Vec<usize>,
    pub target: Vec<usize>,
}

impl EncodedPair {
    pub fn new(pair: &SentencePair, source_vocab: &Vocab, target_vocab: &Vocab) -> Self {
        Self {
            source: source_vocab.encode(&pair.source),
            target: target_vocab.encode(&pair.target),
        }
    }
}

pub(crate) struct TeacherForced {
    /// Sum over target positions (EOS included), mean over the batch.
    pub loss: Var,
    pub correct: usize,
    pub tokens: usize,
}

pub(crate) fn teacher_forced(
    tape: &mut Tape,
    params: &ModelParams,
    batch: &[&EncodedPair],
) -> Result<TeacherForced, ModelError> {
    if batch.is_empty() {
        return Err(ModelError::Config("empty batch".into()));
    }
    let dims = params.dims();
    for p in batch {
        if let Some(&id) = p.target.iter().find(|&&id| id >= dims.target_vocab) {
            return Err(ModelError::TokenOutOfRange {
                id,
                size: dims.target_vocab,
            });
        }
    }
    let bound = bind(tape, params);
    let sources: Vec<&[usize]> = batch.iter().map(|p| p.source.as_slice()).collect();
    let encoded = encode_batch(tape, &bound, dims, &sources)?;

    let steps = batch.iter().map(|p| p.target.len() + 1).max().unwrap_or(1);
    let gold = |p: &EncodedPair, t: usize| -> Option<usize> {
        match t.cmp(&p.target.len()) {
            core::cmp::Ordering::Less => Some(p.target[t]),
            core::cmp::Ordering::Equal => Some(EOS),
            core::cmp::Ordering::Greater => None,
        }
    };

    let mut state = initial_state(tape, dims, batch.len());
    let mut total: Option<Var> = None;
    let (mut correct, mut tokens) = (0, 0);
    for t in 0..steps {
        let prev: Vec<usize> = batch
            .iter()
            .map(|p| {
                if t == 0 {
                    BOS
                } else {
                    gold(p, t - 1).unwrap_or(PAD)
                }
            })
            .collect();
        let (s, hs, cs) = decoder_step(tape, &bound, &prev, &state)?;
        let att = attend(tape, &bound, s, &encoded)?;
        let logits = output_logits(tape, &bound, s, att.context)?;

        let targets: Vec<usize> = batch.iter().map(|p| gold(p, t).unwrap_or(PAD)).collect();
        let weights: Vec<f64> = batch
            .iter()
            .map(|p| if gold(p, t).is_some() { 1.0 } else { 0.0 })
            .collect();
        let values = tape.value(logits);
        for (r, (&y, &w)) in targets.iter().zip(&weights).enumerate() {
            if w != 0.0 {
                tokens += 1;
                if tensor::argmax(values.row(r)) == y {
                    correct += 1;
                }
            }
        }
        let xent = tape.cross_entropy(logits, &targets, &weights)?;
        total = Some(match total {
            None => xent,
            Some(acc) => tape.add(acc, xent)?,
        });
        state = DecoderState {
            h: hs,
            c: cs,
            context: att.context,
        };
    }
    let total = total.expect("at least one decoding step");
    let loss = tape.scale(total, 1.0 / batch.len() as f64)?;
    Ok(TeacherForced {
        loss,
        correct,
        tokens,
    })
}

/// Teacher-forced loss of `batch` without recording gradients.
pub fn batch_loss(params: &ModelParams, batch: &[&EncodedPair]) -> Result<f64, ModelError> {
    let mut tape = Tape::new();
    let out = teacher_forced(&mut tape, params, batch)?;
    Ok(tape.value(out.loss).item())
}

/// Teacher-forced loss and its gradient, accumulated into the parameters'
/// gradient slots.
pub fn loss_and_gradients(
    params: &mut ModelParams,
    batch: &[&EncodedPair],
) -> Result<f64, ModelError> {
    let mut tape = Tape::new();
    let out = teacher_forced(&mut tape, params, batch)?;
    tape.backward(out.loss, params.store_mut())?;
    Ok(tape.value(out.loss).item())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalStats {
    /// Mean per-sentence loss.
    pub loss: f64,
    pub correct: usize,
    pub tokens: usize,
}

impl EvalStats {
    pub fn accuracy(&self) -> f64 {
        if self.tokens == 0 {
            0.0
        } else {
            self.correct as f64 / self.tokens as f64
        }
    }
}

/// Teacher-forced loss and next-token accuracy over `pairs`, in chunks.
pub fn evaluate(
    params: &ModelParams,
    pairs: &[EncodedPair],
    chunk: usize,
) -> Result<EvalStats, ModelError> {
    let mut loss_sum = 0.0;
    let (mut correct, mut tokens) = (0, 0);
    for part in pairs.chunks(chunk.max(1)) {
        let refs: Vec<&EncodedPair> = part.iter().collect();
        let mut tape = Tape::new();
        let out = teacher_forced(&mut tape, params, &refs)?;
        loss_sum += tape.value(out.loss).item() * part.len() as f64;
        correct += out.correct;
        tokens += out.tokens;
    }
    Ok(EvalStats {
        loss: if pairs.is_empty() {
            0.0
        } else {
            loss_sum / pairs.len() as f64
        },
        correct,
        tokens,
    })
}
