//! Dense row-major `f64` tensors and the forward kernels shared by the
//! autodiff tape and the inference path.
//!
//! Every kernel here is a pure function of its inputs. Training records the
//! same kernels on a [`Tape`](crate::autodiff::Tape), so a value computed at
//! inference time is bit-identical to the one computed while training.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::TensorError;

pub type Result<T> = core::result::Result<T, TensorError>;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    /// Builds a tensor, rejecting zero-sized axes, a data length that does not
    /// match the shape, and non-finite entries.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(TensorError::InvalidShape { shape });
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::DataLength {
                shape,
                len: data.len(),
            });
        }
        ensure_finite("new", &data)?;
        Ok(Self {
            shape,
            data,
            grad: None,
        })
    }

    /// Internal constructor for kernel outputs that are already validated.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self {
            shape,
            data,
            grad: None,
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self::from_parts(shape.to_vec(), vec![0.0; n])
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        let n = data.len();
        Self::new(vec![n], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn scalar(value: f64) -> Result<Self> {
        Self::new(vec![1], vec![value])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access to the values. Callers must keep entries finite.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    /// Rows of a tensor viewed as a matrix: every axis but the last.
    pub fn rows(&self) -> usize {
        self.data.len() / self.cols()
    }

    pub fn cols(&self) -> usize {
        *self.shape.last().expect("tensor has at least one axis")
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> Option<&mut Vec<f64>> {
        self.grad.as_mut()
    }

    /// Resets the gradient slot to zeros (allocating it if absent).
    pub fn zero_grad(&mut self) {
        match &mut self.grad {
            Some(g) => g.iter_mut().for_each(|x| *x = 0.0),
            None => self.grad = Some(vec![0.0; self.data.len()]),
        }
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    pub fn accumulate_grad(&mut self, delta: &[f64]) {
        debug_assert_eq!(delta.len(), self.data.len());
        let grad = self.grad.get_or_insert_with(|| vec![0.0; delta.len()]);
        for (g, d) in grad.iter_mut().zip(delta) {
            *g += d;
        }
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }
}

pub(crate) fn ensure_finite(op: &'static str, data: &[f64]) -> Result<()> {
    if data.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(TensorError::NonFinite { op })
    }
}

fn require_matrix(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    if t.shape.len() != 2 {
        return Err(TensorError::Shape {
            op,
            left: t.shape.clone(),
            right: vec![],
        });
    }
    Ok((t.shape[0], t.shape[1]))
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::Shape {
        op,
        left: a.shape.clone(),
        right: b.shape.clone(),
    }
}

/// `out[m×n] += a[m×k] · b[k×n]`, all row-major slices.
pub(crate) fn gemm_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (p, &aip) in a_row.iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aip * bv;
            }
        }
    }
}

/// Dot product with eight independent partial sums, which lets the compiler
/// vectorize while keeping a fixed summation order.
fn dot_lanes(x: &[f64], y: &[f64]) -> f64 {
    let mut lanes = [0.0; 8];
    let xc = x.chunks_exact(8);
    let yc = y.chunks_exact(8);
    let (xr, yr) = (xc.remainder(), yc.remainder());
    for (a, b) in xc.zip(yc) {
        for l in 0..8 {
            lanes[l] += a[l] * b[l];
        }
    }
    let mut acc = ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3]))
        + ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7]));
    for (a, b) in xr.iter().zip(yr) {
        acc += a * b;
    }
    acc
}

/// `out[m×k] += g[m×n] · b[k×n]ᵀ`.
pub(crate) fn gemm_nt_acc(g: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let g_row = &g[i * n..(i + 1) * n];
        let out_row = &mut out[i * k..(i + 1) * k];
        for (p, o) in out_row.iter_mut().enumerate() {
            *o += dot_lanes(g_row, &b[p * n..(p + 1) * n]);
        }
    }
}

/// `out[k×n] += a[m×k]ᵀ · g[m×n]`.
pub(crate) fn gemm_tn_acc(a: &[f64], g: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let g_row = &g[i * n..(i + 1) * n];
        for (p, &aip) in a_row.iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            let out_row = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in out_row.iter_mut().zip(g_row) {
                *o += aip * gv;
            }
        }
    }
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = require_matrix("matmul", a)?;
    let (k2, n) = require_matrix("matmul", b)?;
    if k != k2 {
        return Err(mismatch("matmul", a, b));
    }
    let mut out = vec![0.0; m * n];
    gemm_acc(&a.data, &b.data, &mut out, m, k, n);
    ensure_finite("matmul", &out)?;
    Ok(Tensor::from_parts(vec![m, n], out))
}

/// How the right operand of a binary op lines up with the left one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Broadcast {
    Same,
    /// Right operand is a single row repeated over every row of the left.
    Row,
}

pub(crate) fn broadcast_kind(op: &'static str, a: &Tensor, b: &Tensor) -> Result<Broadcast> {
    if a.shape == b.shape {
        Ok(Broadcast::Same)
    } else if b.len() == a.cols() && b.cols() == a.cols() {
        Ok(Broadcast::Row)
    } else {
        Err(mismatch(op, a, b))
    }
}

fn binary(op: &'static str, a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    let kind = broadcast_kind(op, a, b)?;
    let out: Vec<f64> = match kind {
        Broadcast::Same => a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
        Broadcast::Row => {
            let c = a.cols();
            a.data
                .iter()
                .enumerate()
                .map(|(i, &x)| f(x, b.data[i % c]))
                .collect()
        }
    };
    ensure_finite(op, &out)?;
    Ok(Tensor::from_parts(a.shape.clone(), out))
}

/// Elementwise sum; `b` may also be a single row broadcast over `a`'s rows.
pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    binary("add", a, b, |x, y| x + y)
}

/// Elementwise product, same broadcasting as [`add`].
pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    binary("mul", a, b, |x, y| x * y)
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

pub fn sigmoid(a: &Tensor) -> Tensor {
    Tensor::from_parts(
        a.shape.clone(),
        a.data.iter().map(|&x| sigmoid_scalar(x)).collect(),
    )
}

pub fn tanh(a: &Tensor) -> Tensor {
    Tensor::from_parts(
        a.shape.clone(),
        a.data.iter().map(|&x| libm::tanh(x)).collect(),
    )
}

/// Concatenates along the last axis. All parts must agree on every other axis.
pub fn concat_last(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or(TensorError::Contract("concat of zero tensors"))?;
    let lead = &first.shape[..first.shape.len() - 1];
    for p in parts.iter().skip(1) {
        if &p.shape[..p.shape.len() - 1] != lead {
            return Err(mismatch("concat", first, p));
        }
    }
    let rows = first.rows();
    let total: usize = parts.iter().map(|p| p.cols()).sum();
    let mut out = Vec::with_capacity(rows * total);
    for r in 0..rows {
        for p in parts {
            out.extend_from_slice(p.row(r));
        }
    }
    let mut shape = lead.to_vec();
    shape.push(total);
    Ok(Tensor::from_parts(shape, out))
}

/// Columns `[start, start + width)` of a matrix.
pub fn slice_cols(a: &Tensor, start: usize, width: usize) -> Result<Tensor> {
    let (rows, cols) = require_matrix("slice_cols", a)?;
    if width == 0 || start + width > cols {
        return Err(TensorError::Contract("column slice out of range"));
    }
    let mut out = Vec::with_capacity(rows * width);
    for r in 0..rows {
        out.extend_from_slice(&a.row(r)[start..start + width]);
    }
    Ok(Tensor::from_parts(vec![rows, width], out))
}

/// Row lookup: `out[i] = table[ids[i]]`.
pub fn gather_rows(table: &Tensor, ids: &[usize]) -> Result<Tensor> {
    let (rows, cols) = require_matrix("gather_rows", table)?;
    if ids.is_empty() {
        return Err(TensorError::Contract("gather with no ids"));
    }
    let mut out = Vec::with_capacity(ids.len() * cols);
    for &id in ids {
        if id >= rows {
            return Err(TensorError::IndexOutOfRange {
                index: id,
                len: rows,
            });
        }
        out.extend_from_slice(table.row(id));
    }
    Ok(Tensor::from_parts(vec![ids.len(), cols], out))
}

/// Stacks `T` matrices of shape `[B×D]` into a `[B×T×D]` tensor.
pub fn stack_steps(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or(TensorError::Contract("stack of zero tensors"))?;
    let (b, d) = require_matrix("stack", first)?;
    for p in parts.iter().skip(1) {
        if p.shape != first.shape {
            return Err(mismatch("stack", first, p));
        }
    }
    let t = parts.len();
    let mut out = vec![0.0; b * t * d];
    for (ti, p) in parts.iter().enumerate() {
        for bi in 0..b {
            out[(bi * t + ti) * d..(bi * t + ti + 1) * d].copy_from_slice(p.row(bi));
        }
    }
    Ok(Tensor::from_parts(vec![b, t, d], out))
}

fn require_memory(op: &'static str, memory: &Tensor) -> Result<(usize, usize, usize)> {
    if memory.shape.len() != 3 {
        return Err(TensorError::Shape {
            op,
            left: memory.shape.clone(),
            right: vec![],
        });
    }
    Ok((memory.shape[0], memory.shape[1], memory.shape[2]))
}

/// `scores[b, i] = query[b] · memory[b, i]` for `query [B×D]`, `memory [B×T×D]`.
pub fn memory_scores(query: &Tensor, memory: &Tensor) -> Result<Tensor> {
    let (b, t, d) = require_memory("memory_scores", memory)?;
    if query.shape != [b, d] {
        return Err(mismatch("memory_scores", query, memory));
    }
    let mut out = vec![0.0; b * t];
    for bi in 0..b {
        let q = query.row(bi);
        for ti in 0..t {
            let h = &memory.data[(bi * t + ti) * d..(bi * t + ti + 1) * d];
            out[bi * t + ti] = dot(q, h);
        }
    }
    ensure_finite("memory_scores", &out)?;
    Ok(Tensor::from_parts(vec![b, t], out))
}

/// `out[b] = Σ_i weights[b, i] · memory[b, i]`.
pub fn weighted_sum(weights: &Tensor, memory: &Tensor) -> Result<Tensor> {
    let (b, t, d) = require_memory("weighted_sum", memory)?;
    if weights.shape != [b, t] {
        return Err(mismatch("weighted_sum", weights, memory));
    }
    let mut out = vec![0.0; b * d];
    for bi in 0..b {
        let acc = &mut out[bi * d..(bi + 1) * d];
        for ti in 0..t {
            let w = weights.data[bi * t + ti];
            let h = &memory.data[(bi * t + ti) * d..(bi * t + ti + 1) * d];
            for (o, &x) in acc.iter_mut().zip(h) {
                *o += w * x;
            }
        }
    }
    ensure_finite("weighted_sum", &out)?;
    Ok(Tensor::from_parts(vec![b, d], out))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// Numerically stable softmax over one row.
///
/// Entries equal to `-inf` are treated as masked and map to exactly zero. Any
/// other non-finite entry is rejected, as is a row where every entry is masked.
pub fn softmax(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(TensorError::Contract("softmax over an empty row"));
    }
    let mut max = f64::NEG_INFINITY;
    for &s in scores {
        if s.is_nan() || s == f64::INFINITY {
            return Err(TensorError::NonFinite { op: "softmax" });
        }
        if s > max {
            max = s;
        }
    }
    if max == f64::NEG_INFINITY {
        return Err(TensorError::Degenerate);
    }
    let mut out: Vec<f64> = scores
        .iter()
        .map(|&s| {
            if s == f64::NEG_INFINITY {
                0.0
            } else {
                libm::exp(s - max)
            }
        })
        .collect();
    let total: f64 = out.iter().sum();
    for o in &mut out {
        *o /= total;
    }
    Ok(out)
}

/// Row-wise softmax where row `r` only covers its first `valid[r]` columns;
/// the remaining columns are masked to zero.
pub fn softmax_rows(scores: &Tensor, valid: &[usize]) -> Result<Tensor> {
    let (rows, cols) = require_matrix("softmax_rows", scores)?;
    if valid.len() != rows {
        return Err(TensorError::Contract("one valid length per row required"));
    }
    let mut out = Vec::with_capacity(rows * cols);
    let mut masked = vec![0.0; cols];
    for (r, &n) in valid.iter().enumerate() {
        if n == 0 || n > cols {
            return Err(TensorError::Contract("valid length out of range"));
        }
        masked.copy_from_slice(scores.row(r));
        masked[n..].iter_mut().for_each(|x| *x = f64::NEG_INFINITY);
        out.extend(softmax(&masked)?);
    }
    Ok(Tensor::from_parts(vec![rows, cols], out))
}

/// Tensor form of [`softmax`] for a single row of scores.
pub fn softmax_tensor(scores: &Tensor) -> Result<Tensor> {
    let out = softmax(&scores.data)?;
    Ok(Tensor::from_parts(scores.shape.clone(), out))
}

/// `log Σ exp(row)` computed stably.
pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = row.iter().map(|&x| libm::exp(x - max)).sum();
    max + libm::log(total)
}

/// Index of the largest entry; the lowest index wins on exact ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: usize, cols: usize, data: &[f64]) -> Tensor {
        Tensor::matrix(rows, cols, data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let out = matmul(&m(2, 2, &[1.0, 0.0, 0.0, 1.0]), &m(2, 1, &[3.0, 4.0])).unwrap();
        assert_eq!(out.shape(), &[2, 1]);
        assert_eq!(out.data(), &[3.0, 4.0]);
    }

    #[test]
    fn matmul_row_by_column() {
        let out = matmul(&m(1, 2, &[1.0, 2.0]), &m(2, 1, &[3.0, 4.0])).unwrap();
        assert_eq!(out.data(), &[11.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let err = matmul(&m(1, 2, &[1.0, 2.0]), &m(3, 1, &[1.0, 2.0, 3.0])).unwrap_err();
        let msg = alloc::format!("{err}");
        assert!(msg.contains("[1, 2]") && msg.contains("[3, 1]"), "{msg}");
    }

    #[test]
    fn matmul_against_triple_loop() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let a: Vec<f64> = (0..35).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..21).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let out = matmul(&m(5, 7, &a), &m(7, 3, &b)).unwrap();
        for i in 0..5 {
            for j in 0..3 {
                let mut acc = 0.0;
                for p in 0..7 {
                    acc += a[i * 7 + p] * b[p * 3 + j];
                }
                assert!((out.data()[i * 3 + j] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn softmax_examples() {
        let u = softmax(&[0.0, 0.0, 0.0]).unwrap();
        for x in &u {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(softmax(&[1.0, f64::NEG_INFINITY]).unwrap(), vec![1.0, 0.0]);
        let p = softmax(&[1.0, 2.0, 3.0]).unwrap();
        for (got, want) in p.iter().zip([0.09003, 0.24473, 0.66524]) {
            assert!((got - want).abs() < 1e-5, "{got} vs {want}");
        }
    }

    #[test]
    fn softmax_rejects_all_masked_and_nan() {
        assert_eq!(
            softmax(&[f64::NEG_INFINITY, f64::NEG_INFINITY]),
            Err(TensorError::Degenerate)
        );
        assert!(matches!(
            softmax(&[f64::NAN, 1.0]),
            Err(TensorError::NonFinite { .. })
        ));
        assert!(matches!(
            softmax(&[f64::INFINITY]),
            Err(TensorError::NonFinite { .. })
        ));
    }

    #[test]
    fn elementwise_examples() {
        let z = Tensor::scalar(0.0).unwrap();
        assert_eq!(sigmoid(&z).item(), 0.5);
        assert_eq!(tanh(&z).item(), 0.0);
        let a = Tensor::vector(vec![1.0, 2.0]).unwrap();
        let b = Tensor::vector(vec![3.0]).unwrap();
        assert_eq!(concat_last(&[&a, &b]).unwrap().data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn add_broadcasts_a_row() {
        let a = m(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let b = m(1, 2, &[10.0, 20.0]);
        assert_eq!(add(&a, &b).unwrap().data(), &[11.0, 22.0, 13.0, 24.0]);
        assert!(add(&a, &m(1, 3, &[0.0; 3])).is_err());
    }

    #[test]
    fn new_rejects_non_finite_and_bad_lengths() {
        assert!(Tensor::vector(vec![1.0, f64::NAN]).is_err());
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::new(vec![0], vec![]).is_err());
    }

    #[test]
    fn argmax_lowest_index_on_ties() {
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(argmax(&[0.1, 0.6, 0.6]), 1);
    }
}
