//! Plain-loop reference implementation of the model, written against the
//! parameter names only. Shares no code with the tape-based forward pass.

#![allow(dead_code, clippy::needless_range_loop)]

use cfattn_core::corpus::{build_vocab, SentencePair, Side, BOS, EOS};
use cfattn_core::seq2seq::{EncodedPair, ModelDims, ModelParams};

pub struct Mat<'a> {
    pub rows: usize,
    pub cols: usize,
    pub data: &'a [f64],
}

pub fn mat<'a>(params: &'a ModelParams, name: &str) -> Mat<'a> {
    let t = params
        .tensor(name)
        .unwrap_or_else(|| panic!("missing {name}"));
    Mat {
        rows: t.shape()[0],
        cols: t.shape()[1],
        data: t.data(),
    }
}

/// `x · W` for a row vector `x`.
pub fn vec_mat(x: &[f64], w: &Mat) -> Vec<f64> {
    assert_eq!(x.len(), w.rows);
    let mut out = vec![0.0; w.cols];
    for j in 0..w.cols {
        let mut acc = 0.0;
        for i in 0..w.rows {
            acc += x[i] * w.data[i * w.cols + j];
        }
        out[j] = acc;
    }
    out
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn lstm(
    params: &ModelParams,
    prefix: &str,
    x: &[f64],
    h: &[f64],
    c: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let w = mat(params, &format!("{prefix}.w"));
    let b = mat(params, &format!("{prefix}.b"));
    let n = h.len();
    let xh: Vec<f64> = x.iter().chain(h).copied().collect();
    let mut z = vec_mat(&xh, &w);
    for (zi, bi) in z.iter_mut().zip(b.data) {
        *zi += bi;
    }
    let mut h2 = vec![0.0; n];
    let mut c2 = vec![0.0; n];
    for k in 0..n {
        let i = sigmoid(z[k]);
        let f = sigmoid(z[n + k]);
        let g = z[2 * n + k].tanh();
        let o = sigmoid(z[3 * n + k]);
        c2[k] = f * c[k] + i * g;
        h2[k] = o * c2[k].tanh();
    }
    (h2, c2)
}

pub fn embed(params: &ModelParams, name: &str, id: usize) -> Vec<f64> {
    let e = mat(params, name);
    e.data[id * e.cols..(id + 1) * e.cols].to_vec()
}

/// Top-layer states of one encoder direction run left to right over `ids`.
pub fn run_direction(params: &ModelParams, direction: &str, ids: &[usize]) -> Vec<Vec<f64>> {
    let dims = params.dims();
    let mut h = vec![vec![0.0; dims.hidden]; dims.layers];
    let mut c = h.clone();
    let mut out = Vec::new();
    for &id in ids {
        let mut x = embed(params, "source_embedding", id);
        for l in 0..dims.layers {
            let (nh, nc) = lstm(
                params,
                &format!("encoder.{direction}.{l}"),
                &x,
                &h[l],
                &c[l],
            );
            h[l] = nh.clone();
            c[l] = nc;
            x = nh;
        }
        out.push(x);
    }
    out
}

pub fn encode(params: &ModelParams, ids: &[usize]) -> Vec<Vec<f64>> {
    let fwd = run_direction(params, "forward", ids);
    let rev: Vec<usize> = ids.iter().rev().copied().collect();
    let mut bwd = run_direction(params, "backward", &rev);
    bwd.reverse();
    fwd.into_iter()
        .zip(bwd)
        .map(|(f, b)| f.into_iter().chain(b).collect())
        .collect()
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

pub fn scores(params: &ModelParams, s: &[f64], memory: &[Vec<f64>]) -> Vec<f64> {
    let q = vec_mat(s, &mat(params, "attention.w"));
    memory
        .iter()
        .map(|h| h.iter().zip(&q).map(|(a, b)| a * b).sum())
        .collect()
}

pub fn context(alpha: &[f64], memory: &[Vec<f64>]) -> Vec<f64> {
    let mut c = vec![0.0; memory[0].len()];
    for (a, h) in alpha.iter().zip(memory) {
        for (ci, hi) in c.iter_mut().zip(h) {
            *ci += a * hi;
        }
    }
    c
}

pub fn logits(params: &ModelParams, s: &[f64], c: &[f64]) -> Vec<f64> {
    let joined: Vec<f64> = s.iter().chain(c).copied().collect();
    let mut out = vec_mat(&joined, &mat(params, "output.w"));
    for (o, b) in out.iter_mut().zip(mat(params, "output.b").data) {
        *o += b;
    }
    out
}

pub fn argmax(x: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..x.len() {
        if x[i] > x[best] {
            best = i;
        }
    }
    best
}

pub struct OracleStep {
    pub state: Vec<f64>,
    pub attention: Vec<f64>,
    pub logits: Vec<f64>,
}

/// Decodes feeding `forced` as the previous tokens (BOS first), computing
/// every step from scratch. At step `override_at`, attention is replaced by
/// the given vector, and that replaced context also feeds the next step.
pub fn decode_forced(
    params: &ModelParams,
    source: &[usize],
    forced: &[usize],
    override_at: Option<(usize, &[f64])>,
) -> Vec<OracleStep> {
    let dims = params.dims();
    let memory = encode(params, source);
    let mut h = vec![vec![0.0; dims.hidden]; dims.layers];
    let mut c = h.clone();
    let mut ctx = vec![0.0; dims.memory_width()];
    let mut prev = BOS;
    let mut out = Vec::new();
    for (t, &next) in forced.iter().enumerate() {
        let mut x: Vec<f64> = embed(params, "target_embedding", prev)
            .into_iter()
            .chain(ctx.iter().copied())
            .collect();
        for l in 0..dims.layers {
            let (nh, nc) = lstm(params, &format!("decoder.{l}"), &x, &h[l], &c[l]);
            h[l] = nh.clone();
            c[l] = nc;
            x = nh;
        }
        let attention = match override_at {
            Some((at, alt)) if at == t => alt.to_vec(),
            _ => softmax(&scores(params, &x, &memory)),
        };
        ctx = context(&attention, &memory);
        let lg = logits(params, &x, &ctx);
        out.push(OracleStep {
            state: x,
            attention,
            logits: lg,
        });
        prev = next;
    }
    out
}

/// Greedy decode with the reference implementation.
pub fn greedy(params: &ModelParams, source: &[usize], max_steps: usize) -> Vec<usize> {
    let mut emitted: Vec<usize> = Vec::new();
    while emitted.len() < max_steps {
        let mut forced = emitted.clone();
        forced.push(0);
        let steps = decode_forced(params, source, &forced, None);
        let tok = argmax(&steps.last().unwrap().logits);
        emitted.push(tok);
        if tok == EOS {
            break;
        }
    }
    emitted
}

pub fn pair(src: &str, tgt: &str) -> SentencePair {
    SentencePair {
        source: src.split_whitespace().map(String::from).collect(),
        target: tgt.split_whitespace().map(String::from).collect(),
    }
}

pub struct Fixture {
    pub params: ModelParams,
    pub pairs: Vec<EncodedPair>,
}

/// A tiny randomly initialised model over a handful of sentence pairs.
pub fn fixture(pairs: &[SentencePair], hidden: usize, embedding: usize, seed: u64) -> Fixture {
    let sv = build_vocab(pairs, Side::Source, 100).unwrap();
    let tv = build_vocab(pairs, Side::Target, 100).unwrap();
    let dims = ModelDims {
        source_vocab: sv.len(),
        target_vocab: tv.len(),
        embedding,
        hidden,
        layers: 2,
        max_source_len: 50,
    };
    let params = ModelParams::init(dims, seed).unwrap();
    let pairs = pairs
        .iter()
        .map(|p| EncodedPair::new(p, &sv, &tv))
        .collect();
    Fixture { params, pairs }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
