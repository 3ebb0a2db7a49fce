//! Tape-based reverse-mode differentiation.
//!
//! A [`Tape`] records one computation (one training step). Parameters enter
//! the tape by value through [`Tape::param`]; [`Tape::backward`] writes
//! `∂loss/∂parameter` into the gradient slots of the [`ParamStore`] they came
//! from, accumulating across calls until the caller resets them.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::TensorError;
use crate::tensor::{self, Broadcast, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named learnable tensors, in registration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn total_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn zero_grads(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    pub fn clear_grads(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::clear_grad);
    }

    /// L2 norm over every populated gradient slot.
    pub fn grad_norm(&self) -> f64 {
        let sq: f64 = self
            .tensors
            .iter()
            .filter_map(|t| t.grad())
            .flat_map(|g| g.iter())
            .map(|g| g * g)
            .sum();
        libm::sqrt(sq)
    }

    /// Rescales all gradients so their global norm is at most `max_norm`.
    /// Returns the norm measured before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm.is_finite() {
            let scale = max_norm / norm;
            for t in &mut self.tensors {
                if let Some(g) = t.grad_mut() {
                    g.iter_mut().for_each(|x| *x *= scale);
                }
            }
        }
        norm
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var, Broadcast),
    Mul(Var, Var, Broadcast),
    Sigmoid(Var),
    Tanh(Var),
    Concat(Vec<Var>),
    SliceCols {
        src: Var,
        start: usize,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    Stack(Vec<Var>),
    MemoryScores {
        query: Var,
        memory: Var,
    },
    WeightedSum {
        weights: Var,
        memory: Var,
    },
    SoftmaxRows(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        weights: Vec<f64>,
    },
    Sum(Var),
    Scale(Var, f64),
    Blend {
        fresh: Var,
        carried: Var,
        keep: Vec<bool>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// Records a parameter leaf holding a copy of its current value.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let mut value = store.get(id).clone();
        value.clear_grad();
        self.push(value, Op::Param(id), true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = tensor::matmul(self.value(a), self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let kind = tensor::broadcast_kind("add", self.value(a), self.value(b))?;
        let out = tensor::add(self.value(a), self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b, kind), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let kind = tensor::broadcast_kind("mul", self.value(a), self.value(b))?;
        let out = tensor::mul(self.value(a), self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b, kind), rg))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = tensor::sigmoid(self.value(a));
        let rg = self.rg(a);
        self.push(out, Op::Sigmoid(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = tensor::tanh(self.value(a));
        let rg = self.rg(a);
        self.push(out, Op::Tanh(a), rg)
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let out = tensor::concat_last(&values)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(out, Op::Concat(parts.to_vec()), rg))
    }

    pub fn slice_cols(&mut self, src: Var, start: usize, width: usize) -> Result<Var> {
        let out = tensor::slice_cols(self.value(src), start, width)?;
        let rg = self.rg(src);
        Ok(self.push(out, Op::SliceCols { src, start }, rg))
    }

    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let out = tensor::gather_rows(self.value(table), ids)?;
        let rg = self.rg(table);
        Ok(self.push(
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    pub fn stack(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let out = tensor::stack_steps(&values)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(out, Op::Stack(parts.to_vec()), rg))
    }

    pub fn memory_scores(&mut self, query: Var, memory: Var) -> Result<Var> {
        let out = tensor::memory_scores(self.value(query), self.value(memory))?;
        let rg = self.rg(query) || self.rg(memory);
        Ok(self.push(out, Op::MemoryScores { query, memory }, rg))
    }

    pub fn weighted_sum(&mut self, weights: Var, memory: Var) -> Result<Var> {
        let out = tensor::weighted_sum(self.value(weights), self.value(memory))?;
        let rg = self.rg(weights) || self.rg(memory);
        Ok(self.push(out, Op::WeightedSum { weights, memory }, rg))
    }

    pub fn softmax_rows(&mut self, scores: Var, valid: &[usize]) -> Result<Var> {
        let out = tensor::softmax_rows(self.value(scores), valid)?;
        let rg = self.rg(scores);
        Ok(self.push(out, Op::SoftmaxRows(scores), rg))
    }

    /// `Σ_b weights[b] · -log softmax(logits[b])[targets[b]]`, a scalar.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        weights: &[f64],
    ) -> Result<Var> {
        let l = self.value(logits);
        if l.shape().len() != 2 || targets.len() != l.rows() || weights.len() != l.rows() {
            return Err(TensorError::Contract(
                "cross entropy needs one target and weight per row",
            ));
        }
        let mut total = 0.0;
        for (r, (&y, &w)) in targets.iter().zip(weights).enumerate() {
            if y >= l.cols() {
                return Err(TensorError::IndexOutOfRange {
                    index: y,
                    len: l.cols(),
                });
            }
            if w != 0.0 {
                let row = l.row(r);
                total += w * (tensor::log_sum_exp(row) - row[y]);
            }
        }
        tensor::ensure_finite("cross_entropy", &[total])?;
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::from_parts(vec![1], vec![total]),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
            },
            rg,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total: f64 = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::from_parts(vec![1], vec![total]), Op::Sum(a), rg)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let v = self.value(a);
        let data: Vec<f64> = v.data().iter().map(|x| x * factor).collect();
        tensor::ensure_finite("scale", &data)?;
        let out = Tensor::from_parts(v.shape().to_vec(), data);
        let rg = self.rg(a);
        Ok(self.push(out, Op::Scale(a, factor), rg))
    }

    /// Row-wise select: row `r` comes from `fresh` when `keep[r]`, else from `carried`.
    pub fn blend(&mut self, fresh: Var, carried: Var, keep: &[bool]) -> Result<Var> {
        let (f, c) = (self.value(fresh), self.value(carried));
        if f.shape() != c.shape() || f.shape().len() != 2 || keep.len() != f.rows() {
            return Err(TensorError::Shape {
                op: "blend",
                left: f.shape().to_vec(),
                right: c.shape().to_vec(),
            });
        }
        let cols = f.cols();
        let mut data = Vec::with_capacity(f.len());
        for (r, &k) in keep.iter().enumerate() {
            data.extend_from_slice(if k { f.row(r) } else { c.row(r) });
        }
        let out = Tensor::from_parts(vec![keep.len(), cols], data);
        let rg = self.rg(fresh) || self.rg(carried);
        Ok(self.push(
            out,
            Op::Blend {
                fresh,
                carried,
                keep: keep.to_vec(),
            },
            rg,
        ))
    }

    /// Back-propagates from a scalar `loss`, accumulating into `store`.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(TensorError::Contract("backward needs a scalar loss"));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => store.get_mut(*id).accumulate_grad(&g),
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                    if self.rg(*a) {
                        let ga = self.slot(&mut grads, *a);
                        tensor::gemm_nt_acc(&g, bv.data(), ga, m, k, n);
                    }
                    if self.rg(*b) {
                        let gb = self.slot(&mut grads, *b);
                        tensor::gemm_tn_acc(av.data(), &g, gb, m, k, n);
                    }
                }
                Op::Add(a, b, kind) => {
                    if self.rg(*a) {
                        add_into(self.slot(&mut grads, *a), &g);
                    }
                    if self.rg(*b) {
                        let gb = self.slot(&mut grads, *b);
                        match kind {
                            Broadcast::Same => add_into(gb, &g),
                            Broadcast::Row => {
                                let c = gb.len();
                                for (j, x) in g.iter().enumerate() {
                                    gb[j % c] += x;
                                }
                            }
                        }
                    }
                }
                Op::Mul(a, b, kind) => {
                    let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                    let c = bv.len();
                    if self.rg(*a) {
                        let ga = self.slot(&mut grads, *a);
                        for (j, x) in g.iter().enumerate() {
                            let bj = match kind {
                                Broadcast::Same => bv[j],
                                Broadcast::Row => bv[j % c],
                            };
                            ga[j] += x * bj;
                        }
                    }
                    if self.rg(*b) {
                        let gb = self.slot(&mut grads, *b);
                        for (j, x) in g.iter().enumerate() {
                            let slot = match kind {
                                Broadcast::Same => j,
                                Broadcast::Row => j % c,
                            };
                            gb[slot] += x * av[j];
                        }
                    }
                }
                Op::Sigmoid(a) => {
                    let y = node.value.data();
                    let ga = self.slot(&mut grads, *a);
                    for j in 0..g.len() {
                        ga[j] += g[j] * y[j] * (1.0 - y[j]);
                    }
                }
                Op::Tanh(a) => {
                    let y = node.value.data();
                    let ga = self.slot(&mut grads, *a);
                    for j in 0..g.len() {
                        ga[j] += g[j] * (1.0 - y[j] * y[j]);
                    }
                }
                Op::Concat(parts) => {
                    let rows = node.value.rows();
                    let total = node.value.cols();
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        if self.rg(p) {
                            let gp = self.slot(&mut grads, p);
                            for r in 0..rows {
                                add_into(
                                    &mut gp[r * w..(r + 1) * w],
                                    &g[r * total + offset..r * total + offset + w],
                                );
                            }
                        }
                        offset += w;
                    }
                }
                Op::SliceCols { src, start } => {
                    let w = node.value.cols();
                    let cols = self.value(*src).cols();
                    let gs = self.slot(&mut grads, *src);
                    for r in 0..node.value.rows() {
                        add_into(
                            &mut gs[r * cols + start..r * cols + start + w],
                            &g[r * w..(r + 1) * w],
                        );
                    }
                }
                Op::Gather { table, ids } => {
                    let cols = node.value.cols();
                    let gt = self.slot(&mut grads, *table);
                    for (r, &id) in ids.iter().enumerate() {
                        add_into(
                            &mut gt[id * cols..(id + 1) * cols],
                            &g[r * cols..(r + 1) * cols],
                        );
                    }
                }
                Op::Stack(parts) => {
                    let (b, t, d) = (
                        node.value.shape()[0],
                        node.value.shape()[1],
                        node.value.shape()[2],
                    );
                    for (ti, &p) in parts.iter().enumerate() {
                        if !self.rg(p) {
                            continue;
                        }
                        let gp = self.slot(&mut grads, p);
                        for bi in 0..b {
                            add_into(
                                &mut gp[bi * d..(bi + 1) * d],
                                &g[(bi * t + ti) * d..(bi * t + ti + 1) * d],
                            );
                        }
                    }
                }
                Op::MemoryScores { query, memory } => {
                    let mem = self.value(*memory);
                    let q = self.value(*query);
                    let (b, t, d) = (mem.shape()[0], mem.shape()[1], mem.shape()[2]);
                    if self.rg(*query) {
                        let gq = self.slot(&mut grads, *query);
                        for bi in 0..b {
                            for ti in 0..t {
                                let w = g[bi * t + ti];
                                let h = &mem.data()[(bi * t + ti) * d..(bi * t + ti + 1) * d];
                                for (o, &x) in gq[bi * d..(bi + 1) * d].iter_mut().zip(h) {
                                    *o += w * x;
                                }
                            }
                        }
                    }
                    if self.rg(*memory) {
                        let gm = self.slot(&mut grads, *memory);
                        for bi in 0..b {
                            let qr = q.row(bi);
                            for ti in 0..t {
                                let w = g[bi * t + ti];
                                for (o, &x) in gm[(bi * t + ti) * d..(bi * t + ti + 1) * d]
                                    .iter_mut()
                                    .zip(qr)
                                {
                                    *o += w * x;
                                }
                            }
                        }
                    }
                }
                Op::WeightedSum { weights, memory } => {
                    let mem = self.value(*memory);
                    let wts = self.value(*weights);
                    let (b, t, d) = (mem.shape()[0], mem.shape()[1], mem.shape()[2]);
                    if self.rg(*weights) {
                        let gw = self.slot(&mut grads, *weights);
                        for bi in 0..b {
                            let gr = &g[bi * d..(bi + 1) * d];
                            for ti in 0..t {
                                let h = &mem.data()[(bi * t + ti) * d..(bi * t + ti + 1) * d];
                                gw[bi * t + ti] += tensor::dot(gr, h);
                            }
                        }
                    }
                    if self.rg(*memory) {
                        let gm = self.slot(&mut grads, *memory);
                        for bi in 0..b {
                            let gr = &g[bi * d..(bi + 1) * d];
                            for ti in 0..t {
                                let w = wts.data()[bi * t + ti];
                                for (o, &x) in gm[(bi * t + ti) * d..(bi * t + ti + 1) * d]
                                    .iter_mut()
                                    .zip(gr)
                                {
                                    *o += w * x;
                                }
                            }
                        }
                    }
                }
                Op::SoftmaxRows(src) => {
                    let y = &node.value;
                    let c = y.cols();
                    let gs = self.slot(&mut grads, *src);
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let gr = &g[r * c..(r + 1) * c];
                        let inner = tensor::dot(gr, yr);
                        for j in 0..c {
                            gs[r * c + j] += yr[j] * (gr[j] - inner);
                        }
                    }
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    weights,
                } => {
                    let l = self.value(*logits);
                    let c = l.cols();
                    let gl = self.slot(&mut grads, *logits);
                    for (r, (&y, &w)) in targets.iter().zip(weights).enumerate() {
                        if w == 0.0 {
                            continue;
                        }
                        let row = l.row(r);
                        let lse = tensor::log_sum_exp(row);
                        let scale = g[0] * w;
                        for j in 0..c {
                            let p = libm::exp(row[j] - lse);
                            let onehot = if j == y { 1.0 } else { 0.0 };
                            gl[r * c + j] += scale * (p - onehot);
                        }
                    }
                }
                Op::Sum(a) => {
                    let ga = self.slot(&mut grads, *a);
                    ga.iter_mut().for_each(|x| *x += g[0]);
                }
                Op::Scale(a, factor) => {
                    let ga = self.slot(&mut grads, *a);
                    for (o, x) in ga.iter_mut().zip(&g) {
                        *o += factor * x;
                    }
                }
                Op::Blend {
                    fresh,
                    carried,
                    keep,
                } => {
                    let c = node.value.cols();
                    for (r, &k) in keep.iter().enumerate() {
                        let target = if k { *fresh } else { *carried };
                        if self.rg(target) {
                            let gt = self.slot(&mut grads, target);
                            add_into(&mut gt[r * c..(r + 1) * c], &g[r * c..(r + 1) * c]);
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> &'g mut [f64] {
        let len = self.nodes[v.0].value.len();
        grads[v.0].get_or_insert_with(|| vec![0.0; len])
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(values: &[f64]) -> (ParamStore, ParamId) {
        let mut store = ParamStore::new();
        let id = store.add("x", Tensor::vector(values.to_vec()).unwrap());
        (store, id)
    }

    #[test]
    fn grad_of_sum_is_ones() {
        let mut store = ParamStore::new();
        let id = store.add("x", Tensor::matrix(2, 3, vec![0.5; 6]).unwrap());
        let mut tape = Tape::new();
        let x = tape.param(&store, id);
        let loss = tape.sum(x);
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.get(id).grad().unwrap(), &[1.0; 6]);
    }

    #[test]
    fn grad_of_square_and_accumulation() {
        let (mut store, id) = store_with(&[1.0, 2.0]);
        let mut tape = Tape::new();
        let x = tape.param(&store, id);
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum(sq);
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.get(id).grad().unwrap(), &[2.0, 4.0]);
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.get(id).grad().unwrap(), &[4.0, 8.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let (mut store, id) = store_with(&[1.0, 2.0]);
        let mut tape = Tape::new();
        let x = tape.param(&store, id);
        assert!(matches!(
            tape.backward(x, &mut store),
            Err(TensorError::Contract(_))
        ));
    }

    #[test]
    fn clip_rescales_to_max_norm() {
        let (mut store, id) = store_with(&[0.0, 0.0]);
        store.get_mut(id).accumulate_grad(&[3.0, 4.0]);
        assert_eq!(store.clip_grad_norm(1.0), 5.0);
        let g = store.get(id).grad().unwrap();
        assert!((g[0] - 0.6).abs() < 1e-15 && (g[1] - 0.8).abs() < 1e-15);
    }
}
