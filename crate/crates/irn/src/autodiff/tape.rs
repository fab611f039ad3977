//! Reverse-mode automatic differentiation over a linear tape.
//!
//! A [`Tape`] borrows a [`ParamStore`], records every differentiable
//! operation applied during a forward pass, and replays the record in
//! reverse to produce exact gradients for every registered parameter.
//! All values are dense row-major `f64` matrices; vectors are 1×n rows.

use std::collections::HashMap;

use rand::Rng;

use crate::autodiff::tensor::{Gradients, ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Whether a tape records operations for backprop and applies dropout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Record operations; dropout draws fresh masks.
    Train,
    /// Forward only; dropout is the identity and `backward` is rejected.
    Eval,
}

/// Handle to a value stored on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Val(usize);

#[derive(Debug)]
enum Slot {
    Owned(Vec<f64>),
    Param(ParamId),
}

#[derive(Debug)]
struct Node {
    rows: usize,
    cols: usize,
    slot: Slot,
    needs_grad: bool,
}

#[derive(Debug)]
enum Op {
    /// out = x·w + b (bias broadcast over rows)
    Linear { x: Val, w: Val, b: Val, out: Val },
    /// out = a·b
    Matmul { a: Val, b: Val, out: Val },
    /// out = a + b (same shape)
    Add { a: Val, b: Val, out: Val },
    /// out = a ∘ b (element-wise, same shape)
    Mul { a: Val, b: Val, out: Val },
    /// out = c·x
    Scale { x: Val, c: f64, out: Val },
    Relu { x: Val, out: Val },
    Sigmoid { x: Val, out: Val },
    Tanh { x: Val, out: Val },
    /// Column-wise concatenation of equally tall parts.
    ConcatCols { parts: Vec<Val>, out: Val },
    /// Columns [start, start+len) of x.
    SliceCols { x: Val, start: usize, len: usize, out: Val },
    /// Column-wise mean over rows: [r×c] → [1×c].
    MeanRows { x: Val, out: Val },
    /// out = x ∘ mask, mask ∈ {0, 1/(1−rate)}.
    Dropout { x: Val, mask: Vec<f64>, out: Val },
    /// Mean over rows of −ln softmax(logits_r)[labels_r]; row probabilities
    /// saved for backward.
    SoftmaxXent { logits: Val, labels: Vec<usize>, probs: Vec<f64>, out: Val },
    /// Scalar sum of all elements.
    Sum { x: Val, out: Val },
}

impl Op {
    fn out(&self) -> Val {
        match self {
            Op::Linear { out, .. }
            | Op::Matmul { out, .. }
            | Op::Add { out, .. }
            | Op::Mul { out, .. }
            | Op::Scale { out, .. }
            | Op::Relu { out, .. }
            | Op::Sigmoid { out, .. }
            | Op::Tanh { out, .. }
            | Op::ConcatCols { out, .. }
            | Op::SliceCols { out, .. }
            | Op::MeanRows { out, .. }
            | Op::Dropout { out, .. }
            | Op::SoftmaxXent { out, .. }
            | Op::Sum { out, .. } => *out,
        }
    }
}

/// Records a forward computation and differentiates it in reverse.
pub struct Tape<'s> {
    store: &'s ParamStore,
    mode: Mode,
    nodes: Vec<Node>,
    ops: Vec<Op>,
    param_cache: HashMap<ParamId, Val>,
}

impl<'s> Tape<'s> {
    pub fn new(store: &'s ParamStore, mode: Mode) -> Self {
        Tape {
            store,
            mode,
            nodes: Vec::new(),
            ops: Vec::new(),
            param_cache: HashMap::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// The parameter store this tape reads from.
    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn shape(&self, v: Val) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    /// Current values of `v`. Parameter values are read from the store.
    pub fn value(&self, v: Val) -> &[f64] {
        match &self.nodes[v.0].slot {
            Slot::Owned(data) => data,
            Slot::Param(id) => &self.store.get(*id).data,
        }
    }

    /// Extracts a 1×1 value as a scalar.
    pub fn scalar(&self, v: Val) -> Result<f64> {
        let (r, c) = self.shape(v);
        if r * c != 1 {
            return Err(Error::Shape {
                op: "scalar",
                lhs: vec![r, c],
                rhs: vec![1, 1],
            });
        }
        Ok(self.value(v)[0])
    }

    fn push(&mut self, rows: usize, cols: usize, data: Vec<f64>, needs_grad: bool) -> Val {
        debug_assert_eq!(rows * cols, data.len());
        self.nodes.push(Node {
            rows,
            cols,
            slot: Slot::Owned(data),
            needs_grad: needs_grad && self.mode == Mode::Train,
        });
        Val(self.nodes.len() - 1)
    }

    fn needs(&self, v: Val) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn record(&mut self, op: Op) {
        if self.mode == Mode::Train && self.needs(op.out()) {
            self.ops.push(op);
        }
    }

    /// Copies a tensor onto the tape as a non-differentiable input.
    pub fn constant(&mut self, t: &Tensor) -> Result<Val> {
        let (r, c) = t.dims2()?;
        Ok(self.push(r, c, t.data.clone(), false))
    }

    pub fn constant_row(&mut self, data: Vec<f64>) -> Val {
        let c = data.len();
        self.push(1, c, data, false)
    }

    pub fn constant_matrix(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> Result<Val> {
        if rows * cols != data.len() {
            return Err(Error::Shape {
                op: "constant_matrix",
                lhs: vec![rows, cols],
                rhs: vec![data.len()],
            });
        }
        Ok(self.push(rows, cols, data, false))
    }

    /// A view of a registered parameter. Repeated calls for the same id
    /// return the same node, so gradient contributions from every use site
    /// accumulate into one slot.
    pub fn param(&mut self, id: ParamId) -> Result<Val> {
        if let Some(v) = self.param_cache.get(&id) {
            return Ok(*v);
        }
        let (rows, cols) = self.store.get(id).dims2()?;
        self.nodes.push(Node {
            rows,
            cols,
            slot: Slot::Param(id),
            needs_grad: self.mode == Mode::Train,
        });
        let v = Val(self.nodes.len() - 1);
        self.param_cache.insert(id, v);
        Ok(v)
    }

    /// x·w + b with the bias row broadcast over the rows of x.
    pub fn linear(&mut self, x: Val, w: Val, b: Val) -> Result<Val> {
        let (xr, xc) = self.shape(x);
        let (wr, wc) = self.shape(w);
        let (br, bc) = self.shape(b);
        if xc != wr {
            return Err(Error::Shape {
                op: "linear",
                lhs: vec![xr, xc],
                rhs: vec![wr, wc],
            });
        }
        if br != 1 || bc != wc {
            return Err(Error::Shape {
                op: "linear_bias",
                lhs: vec![br, bc],
                rhs: vec![1, wc],
            });
        }
        let mut out = vec![0.0; xr * wc];
        for row in out.chunks_exact_mut(wc) {
            row.copy_from_slice(self.value(b));
        }
        dgemm_acc(
            xr,
            xc,
            wc,
            1.0,
            self.value(x),
            false,
            self.value(w),
            false,
            1.0,
            &mut out,
        );
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        let o = self.push(xr, wc, out, needs);
        self.record(Op::Linear { x, w, b, out: o });
        Ok(o)
    }

    pub fn matmul(&mut self, a: Val, b: Val) -> Result<Val> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        if ac != br {
            return Err(Error::Shape {
                op: "matmul",
                lhs: vec![ar, ac],
                rhs: vec![br, bc],
            });
        }
        let mut out = vec![0.0; ar * bc];
        dgemm_acc(
            ar,
            ac,
            bc,
            1.0,
            self.value(a),
            false,
            self.value(b),
            false,
            0.0,
            &mut out,
        );
        let needs = self.needs(a) || self.needs(b);
        let o = self.push(ar, bc, out, needs);
        self.record(Op::Matmul { a, b, out: o });
        Ok(o)
    }

    fn same_shape(&self, op: &'static str, a: Val, b: Val) -> Result<(usize, usize)> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        if (ar, ac) != (br, bc) {
            return Err(Error::Shape {
                op,
                lhs: vec![ar, ac],
                rhs: vec![br, bc],
            });
        }
        Ok((ar, ac))
    }

    pub fn add(&mut self, a: Val, b: Val) -> Result<Val> {
        let (r, c) = self.same_shape("add", a, b)?;
        let out: Vec<f64> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x + y)
            .collect();
        let needs = self.needs(a) || self.needs(b);
        let o = self.push(r, c, out, needs);
        self.record(Op::Add { a, b, out: o });
        Ok(o)
    }

    pub fn mul(&mut self, a: Val, b: Val) -> Result<Val> {
        let (r, c) = self.same_shape("mul", a, b)?;
        let out: Vec<f64> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x * y)
            .collect();
        let needs = self.needs(a) || self.needs(b);
        let o = self.push(r, c, out, needs);
        self.record(Op::Mul { a, b, out: o });
        Ok(o)
    }

    pub fn scale(&mut self, x: Val, c: f64) -> Val {
        let (r, cc) = self.shape(x);
        let out: Vec<f64> = self.value(x).iter().map(|v| c * v).collect();
        let needs = self.needs(x);
        let o = self.push(r, cc, out, needs);
        self.record(Op::Scale { x, c, out: o });
        o
    }

    pub fn relu(&mut self, x: Val) -> Val {
        let (r, c) = self.shape(x);
        let out: Vec<f64> = self.value(x).iter().map(|v| v.max(0.0)).collect();
        let needs = self.needs(x);
        let o = self.push(r, c, out, needs);
        self.record(Op::Relu { x, out: o });
        o
    }

    pub fn sigmoid(&mut self, x: Val) -> Val {
        let (r, c) = self.shape(x);
        let out: Vec<f64> = self
            .value(x)
            .iter()
            .map(|v| 1.0 / (1.0 + (-v).exp()))
            .collect();
        let needs = self.needs(x);
        let o = self.push(r, c, out, needs);
        self.record(Op::Sigmoid { x, out: o });
        o
    }

    pub fn tanh(&mut self, x: Val) -> Val {
        let (r, c) = self.shape(x);
        let out: Vec<f64> = self.value(x).iter().map(|v| v.tanh()).collect();
        let needs = self.needs(x);
        let o = self.push(r, c, out, needs);
        self.record(Op::Tanh { x, out: o });
        o
    }

    pub fn concat_cols(&mut self, parts: &[Val]) -> Result<Val> {
        if parts.is_empty() {
            return Err(Error::Shape {
                op: "concat_cols",
                lhs: vec![0],
                rhs: vec![],
            });
        }
        let (rows, _) = self.shape(parts[0]);
        let mut cols = 0;
        for &p in parts {
            let (pr, pc) = self.shape(p);
            if pr != rows {
                return Err(Error::Shape {
                    op: "concat_cols",
                    lhs: vec![rows],
                    rhs: vec![pr, pc],
                });
            }
            cols += pc;
        }
        let mut out = vec![0.0; rows * cols];
        let mut offset = 0;
        for &p in parts {
            let (_, pc) = self.shape(p);
            let vals = self.value(p);
            for r in 0..rows {
                out[r * cols + offset..r * cols + offset + pc]
                    .copy_from_slice(&vals[r * pc..(r + 1) * pc]);
            }
            offset += pc;
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        let o = self.push(rows, cols, out, needs);
        self.record(Op::ConcatCols {
            parts: parts.to_vec(),
            out: o,
        });
        Ok(o)
    }

    pub fn slice_cols(&mut self, x: Val, start: usize, len: usize) -> Result<Val> {
        let (rows, cols) = self.shape(x);
        if start + len > cols {
            return Err(Error::Shape {
                op: "slice_cols",
                lhs: vec![rows, cols],
                rhs: vec![start, len],
            });
        }
        let vals = self.value(x);
        let mut out = vec![0.0; rows * len];
        for r in 0..rows {
            out[r * len..(r + 1) * len]
                .copy_from_slice(&vals[r * cols + start..r * cols + start + len]);
        }
        let needs = self.needs(x);
        let o = self.push(rows, len, out, needs);
        self.record(Op::SliceCols {
            x,
            start,
            len,
            out: o,
        });
        Ok(o)
    }

    /// Column-wise mean over rows: [r×c] → [1×c].
    pub fn mean_rows(&mut self, x: Val) -> Val {
        let (rows, cols) = self.shape(x);
        let vals = self.value(x);
        let mut out = vec![0.0; cols];
        for r in 0..rows {
            for c in 0..cols {
                out[c] += vals[r * cols + c];
            }
        }
        let inv = 1.0 / rows as f64;
        for v in &mut out {
            *v *= inv;
        }
        let needs = self.needs(x);
        let o = self.push(1, cols, out, needs);
        self.record(Op::MeanRows { x, out: o });
        o
    }

    /// Inverted dropout. In eval mode (or with rate 0) this is the identity;
    /// in train mode each element is zeroed with probability `rate` and kept
    /// elements are scaled by 1/(1−rate) so the expectation is unchanged.
    pub fn dropout(&mut self, x: Val, rate: f64, rng: &mut impl Rng) -> Result<Val> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!(
                "dropout rate must be in [0, 1), got {rate}"
            )));
        }
        if self.mode == Mode::Eval || rate == 0.0 {
            return Ok(x);
        }
        let (rows, cols) = self.shape(x);
        let keep_scale = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..rows * cols)
            .map(|_| {
                if rng.gen::<f64>() < rate {
                    0.0
                } else {
                    keep_scale
                }
            })
            .collect();
        let out: Vec<f64> = self
            .value(x)
            .iter()
            .zip(&mask)
            .map(|(v, m)| v * m)
            .collect();
        let needs = self.needs(x);
        let o = self.push(rows, cols, out, needs);
        self.record(Op::Dropout { x, mask, out: o });
        Ok(o)
    }

    /// Fused softmax + cross-entropy: mean negative log-likelihood over the
    /// rows of a [b×c] logit matrix, one label per row.
    pub fn softmax_cross_entropy(&mut self, logits: Val, labels: &[usize]) -> Result<Val> {
        let (rows, cols) = self.shape(logits);
        if rows != labels.len() {
            return Err(Error::Shape {
                op: "softmax_cross_entropy",
                lhs: vec![rows, cols],
                rhs: vec![labels.len()],
            });
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= cols) {
            return Err(Error::Data(format!(
                "class label {bad} out of range for {cols} logits"
            )));
        }
        let vals = self.value(logits);
        let mut probs = vec![0.0; rows * cols];
        let mut loss = 0.0;
        for (r, &label) in labels.iter().enumerate() {
            let p = super::softmax(&vals[r * cols..(r + 1) * cols]);
            loss -= p[label].max(f64::MIN_POSITIVE).ln();
            probs[r * cols..(r + 1) * cols].copy_from_slice(&p);
        }
        loss /= rows as f64;
        let needs = self.needs(logits);
        let o = self.push(1, 1, vec![loss], needs);
        self.record(Op::SoftmaxXent {
            logits,
            labels: labels.to_vec(),
            probs,
            out: o,
        });
        Ok(o)
    }

    /// Scalar sum of all elements.
    pub fn sum(&mut self, x: Val) -> Val {
        let total: f64 = self.value(x).iter().sum();
        let needs = self.needs(x);
        let o = self.push(1, 1, vec![total], needs);
        self.record(Op::Sum { x, out: o });
        o
    }

    /// Runs reverse-mode accumulation from a scalar loss and returns one
    /// gradient per registered parameter (zeros for parameters the loss
    /// never touched). Consumes the tape; a fresh forward pass is needed
    /// for the next gradient.
    pub fn backward(mut self, loss: Val) -> Result<Gradients> {
        if self.mode != Mode::Train {
            return Err(Error::Config(
                "backward requires a tape created in train mode".into(),
            ));
        }
        let (lr, lc) = self.shape(loss);
        if lr * lc != 1 {
            return Err(Error::Shape {
                op: "backward",
                lhs: vec![lr, lc],
                rhs: vec![1, 1],
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[loss.0].needs_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        let ops = std::mem::take(&mut self.ops);
        for op in ops.into_iter().rev() {
            let Some(d_out) = grads[op.out().0].take() else {
                // The output never influenced the loss.
                continue;
            };
            match op {
                Op::Linear { x, w, b, out: _ } => {
                    let (xr, xc) = self.shape(x);
                    let (_, wc) = self.shape(w);
                    if self.needs(x) {
                        let gx = grads[x.0].get_or_insert_with(|| vec![0.0; xr * xc]);
                        // dX += dOut · Wᵀ
                        dgemm_acc(xr, wc, xc, 1.0, &d_out, false, self.value(w), true, 1.0, gx);
                    }
                    if self.needs(w) {
                        let gw = grads[w.0].get_or_insert_with(|| vec![0.0; xc * wc]);
                        // dW += Xᵀ · dOut
                        dgemm_acc(xc, xr, wc, 1.0, self.value(x), true, &d_out, false, 1.0, gw);
                    }
                    if self.needs(b) {
                        let gb = grads[b.0].get_or_insert_with(|| vec![0.0; wc]);
                        for row in d_out.chunks_exact(wc) {
                            for (g, d) in gb.iter_mut().zip(row) {
                                *g += d;
                            }
                        }
                    }
                }
                Op::Matmul { a, b, out: _ } => {
                    let (ar, ac) = self.shape(a);
                    let (_, bc) = self.shape(b);
                    if self.needs(a) {
                        let ga = grads[a.0].get_or_insert_with(|| vec![0.0; ar * ac]);
                        dgemm_acc(ar, bc, ac, 1.0, &d_out, false, self.value(b), true, 1.0, ga);
                    }
                    if self.needs(b) {
                        let gb = grads[b.0].get_or_insert_with(|| vec![0.0; ac * bc]);
                        dgemm_acc(ac, ar, bc, 1.0, self.value(a), true, &d_out, false, 1.0, gb);
                    }
                }
                Op::Add { a, b, out: _ } => {
                    for v in [a, b] {
                        if self.needs(v) {
                            accumulate(&mut grads, v, &d_out);
                        }
                    }
                }
                Op::Mul { a, b, out: _ } => {
                    if self.needs(a) {
                        let contrib: Vec<f64> = d_out
                            .iter()
                            .zip(self.value(b))
                            .map(|(d, v)| d * v)
                            .collect();
                        accumulate(&mut grads, a, &contrib);
                    }
                    if self.needs(b) {
                        let contrib: Vec<f64> = d_out
                            .iter()
                            .zip(self.value(a))
                            .map(|(d, v)| d * v)
                            .collect();
                        accumulate(&mut grads, b, &contrib);
                    }
                }
                Op::Scale { x, c, out: _ } => {
                    if self.needs(x) {
                        let contrib: Vec<f64> = d_out.iter().map(|d| c * d).collect();
                        accumulate(&mut grads, x, &contrib);
                    }
                }
                Op::Relu { x, out: _ } => {
                    if self.needs(x) {
                        let contrib: Vec<f64> = d_out
                            .iter()
                            .zip(self.value(x))
                            .map(|(d, v)| if *v > 0.0 { *d } else { 0.0 })
                            .collect();
                        accumulate(&mut grads, x, &contrib);
                    }
                }
                Op::Sigmoid { x, out } => {
                    if self.needs(x) {
                        let contrib: Vec<f64> = d_out
                            .iter()
                            .zip(self.value(out))
                            .map(|(d, s)| d * s * (1.0 - s))
                            .collect();
                        accumulate(&mut grads, x, &contrib);
                    }
                }
                Op::Tanh { x, out } => {
                    if self.needs(x) {
                        let contrib: Vec<f64> = d_out
                            .iter()
                            .zip(self.value(out))
                            .map(|(d, t)| d * (1.0 - t * t))
                            .collect();
                        accumulate(&mut grads, x, &contrib);
                    }
                }
                Op::ConcatCols { parts, out: _ } => {
                    let cols: usize = parts.iter().map(|&p| self.shape(p).1).sum();
                    let rows = self.shape(parts[0]).0;
                    let mut offset = 0;
                    for p in parts {
                        let (_, pc) = self.shape(p);
                        if self.needs(p) {
                            let mut contrib = vec![0.0; rows * pc];
                            for r in 0..rows {
                                contrib[r * pc..(r + 1) * pc].copy_from_slice(
                                    &d_out[r * cols + offset..r * cols + offset + pc],
                                );
                            }
                            accumulate(&mut grads, p, &contrib);
                        }
                        offset += pc;
                    }
                }
                Op::SliceCols { x, start, len, out: _ } => {
                    if self.needs(x) {
                        let (rows, cols) = self.shape(x);
                        let gx = grads[x.0].get_or_insert_with(|| vec![0.0; rows * cols]);
                        for r in 0..rows {
                            for c in 0..len {
                                gx[r * cols + start + c] += d_out[r * len + c];
                            }
                        }
                    }
                }
                Op::MeanRows { x, out: _ } => {
                    if self.needs(x) {
                        let (rows, cols) = self.shape(x);
                        let inv = 1.0 / rows as f64;
                        let gx = grads[x.0].get_or_insert_with(|| vec![0.0; rows * cols]);
                        for r in 0..rows {
                            for c in 0..cols {
                                gx[r * cols + c] += d_out[c] * inv;
                            }
                        }
                    }
                }
                Op::Dropout { x, mask, out: _ } => {
                    if self.needs(x) {
                        let contrib: Vec<f64> =
                            d_out.iter().zip(&mask).map(|(d, m)| d * m).collect();
                        accumulate(&mut grads, x, &contrib);
                    }
                }
                Op::SoftmaxXent {
                    logits,
                    labels,
                    probs,
                    out: _,
                } => {
                    if self.needs(logits) {
                        let (rows, cols) = self.shape(logits);
                        let d = d_out[0] / rows as f64;
                        let mut contrib = probs;
                        for (r, &label) in labels.iter().enumerate() {
                            contrib[r * cols + label] -= 1.0;
                        }
                        for v in &mut contrib {
                            *v *= d;
                        }
                        accumulate(&mut grads, logits, &contrib);
                    }
                }
                Op::Sum { x, out: _ } => {
                    if self.needs(x) {
                        let (rows, cols) = self.shape(x);
                        let contrib = vec![d_out[0]; rows * cols];
                        accumulate(&mut grads, x, &contrib);
                    }
                }
            }
        }
        let mut result = Gradients::zeros(self.store);
        for (i, node) in self.nodes.iter().enumerate() {
            if let Slot::Param(id) = node.slot {
                if let Some(g) = grads[i].take() {
                    result.set(id, g);
                }
            }
        }
        Ok(result)
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Val, contrib: &[f64]) {
    match &mut grads[v.0] {
        Some(g) => {
            for (a, b) in g.iter_mut().zip(contrib) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(contrib.to_vec()),
    }
}

/// C[m×n] (+)= alpha · A_op[m×k] · B_op[k×n], where `*_trans` interprets the
/// row-major buffer as its transpose. `beta` = 0 overwrites, 1 accumulates.
pub(crate) fn dgemm_acc(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_trans {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if b_trans {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::tensor::ParamKind;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive_matmul(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0;
                for p in 0..k {
                    acc += a[i * k + p] * b[p * n + j];
                }
                c[i * n + j] = acc;
            }
        }
        c
    }

    #[test]
    fn dgemm_matches_triple_loop_for_all_transpose_combinations() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (m, k, n) = (4, 5, 3);
        let a: Vec<f64> = (0..m * k).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let b: Vec<f64> = (0..k * n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let want = naive_matmul(m, k, n, &a, &b);

        let transpose = |rows: usize, cols: usize, x: &[f64]| -> Vec<f64> {
            let mut t = vec![0.0; x.len()];
            for r in 0..rows {
                for c in 0..cols {
                    t[c * rows + r] = x[r * cols + c];
                }
            }
            t
        };
        let a_t = transpose(m, k, &a);
        let b_t = transpose(k, n, &b);

        for (a_buf, a_trans, b_buf, b_trans) in [
            (&a, false, &b, false),
            (&a_t, true, &b, false),
            (&a, false, &b_t, true),
            (&a_t, true, &b_t, true),
        ] {
            let mut c = vec![0.0; m * n];
            dgemm_acc(m, k, n, 1.0, a_buf, a_trans, b_buf, b_trans, 0.0, &mut c);
            for (x, y) in c.iter().zip(&want) {
                assert!((x - y).abs() < 1e-12);
            }
        }

        // beta = 1 accumulates onto the existing buffer.
        let mut c = vec![1.0; m * n];
        dgemm_acc(m, k, n, 1.0, &a, false, &b, false, 1.0, &mut c);
        for (x, y) in c.iter().zip(&want) {
            assert!((x - (y + 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_forward_matches_hand_computation() {
        let mut store = ParamStore::new();
        let w = store.register(
            "w",
            ParamKind::Weight,
            Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
        );
        let b = store.register(
            "b",
            ParamKind::Bias,
            Tensor::new(vec![2], vec![10.0, 20.0]).unwrap(),
        );
        let mut tape = Tape::new(&store, Mode::Eval);
        let x = tape.constant_matrix(2, 2, vec![1.0, 0.0, 0.5, 0.5]).unwrap();
        let wv = tape.param(w).unwrap();
        let bv = tape.param(b).unwrap();
        let out = tape.linear(x, wv, bv).unwrap();
        // Row 0: [1,0]·W + b = [1+10, 2+20]; row 1: [0.5,0.5]·W + b = [2+10, 3+20].
        assert_eq!(tape.value(out), &[11.0, 22.0, 12.0, 23.0]);
    }

    #[test]
    fn concat_then_slice_roundtrips() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store, Mode::Eval);
        let a = tape.constant_matrix(2, 2, vec![1.0, 2.0, 5.0, 6.0]).unwrap();
        let b = tape.constant_matrix(2, 1, vec![3.0, 7.0]).unwrap();
        let joined = tape.concat_cols(&[a, b]).unwrap();
        assert_eq!(tape.shape(joined), (2, 3));
        assert_eq!(tape.value(joined), &[1.0, 2.0, 3.0, 5.0, 6.0, 7.0]);
        let back = tape.slice_cols(joined, 2, 1).unwrap();
        assert_eq!(tape.value(back), &[3.0, 7.0]);
    }

    #[test]
    fn mean_rows_averages_columns() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store, Mode::Eval);
        let x = tape
            .constant_matrix(3, 2, vec![1.0, 10.0, 2.0, 20.0, 3.0, 30.0])
            .unwrap();
        let m = tape.mean_rows(x);
        assert_eq!(tape.value(m), &[2.0, 20.0]);
    }

    #[test]
    fn softmax_cross_entropy_on_equal_logits_is_ln_class_count() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store, Mode::Eval);
        let logits = tape.constant_row(vec![0.7; 4]);
        let loss = tape.softmax_cross_entropy(logits, &[2]).unwrap();
        assert!((tape.scalar(loss).unwrap() - 4.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn softmax_cross_entropy_averages_over_rows() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store, Mode::Eval);
        // Row 0: equal logits (loss ln 2); row 1: saturated correct class
        // (loss ≈ 0). The batch loss is the mean of the two.
        let logits = tape
            .constant_matrix(2, 2, vec![0.0, 0.0, 1000.0, 0.0])
            .unwrap();
        let loss = tape.softmax_cross_entropy(logits, &[0, 0]).unwrap();
        assert!((tape.scalar(loss).unwrap() - 0.5 * 2.0f64.ln()).abs() < 1e-12);
        let bad = tape.softmax_cross_entropy(logits, &[0, 5]);
        assert!(bad.is_err());
    }

    #[test]
    fn dropout_identity_in_eval_and_correct_mask_values_in_train() {
        let store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);

        let mut eval_tape = Tape::new(&store, Mode::Eval);
        let x = eval_tape.constant_row(vec![1.0, 2.0, 3.0]);
        let d = eval_tape.dropout(x, 0.25, &mut rng).unwrap();
        assert_eq!(d, x);

        let mut train_tape = Tape::new(&store, Mode::Train);
        let n = 1_000_000usize;
        let x = train_tape.constant_row(vec![1.0; n]);
        let d = train_tape.dropout(x, 0.25, &mut rng).unwrap();
        let vals = train_tape.value(d);
        let scale = 1.0 / 0.75;
        let mut kept = 0usize;
        for v in vals {
            assert!(*v == 0.0 || (*v - scale).abs() < 1e-15);
            if *v != 0.0 {
                kept += 1;
            }
        }
        // Inverted scaling keeps the expectation at 1; with 10⁶ draws the
        // sample mean is within 1% with overwhelming probability.
        let mean = vals.iter().sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.01, "mean = {mean}");
        let keep_rate = kept as f64 / n as f64;
        assert!((keep_rate - 0.75).abs() < 0.01, "keep rate = {keep_rate}");
    }

    #[test]
    fn dropout_rejects_invalid_rates() {
        let store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut tape = Tape::new(&store, Mode::Train);
        let x = tape.constant_row(vec![1.0]);
        assert!(tape.dropout(x, 1.0, &mut rng).is_err());
        assert!(tape.dropout(x, -0.1, &mut rng).is_err());
    }

    #[test]
    fn backward_rejects_eval_tapes_and_non_scalar_losses() {
        let mut store = ParamStore::new();
        let w = store.register("w", ParamKind::Weight, Tensor::zeros(vec![2]));

        let mut eval_tape = Tape::new(&store, Mode::Eval);
        let wv = eval_tape.param(w).unwrap();
        assert!(eval_tape.backward(wv).is_err());

        let mut train_tape = Tape::new(&store, Mode::Train);
        let wv = train_tape.param(w).unwrap();
        let not_scalar = train_tape.relu(wv);
        assert!(train_tape.backward(not_scalar).is_err());
    }

    #[test]
    fn gradient_of_value_used_twice_sums_both_paths() {
        let mut store = ParamStore::new();
        let w = store.register(
            "w",
            ParamKind::Weight,
            Tensor::new(vec![2], vec![1.0, -2.0]).unwrap(),
        );
        let mut tape = Tape::new(&store, Mode::Train);
        let wv = tape.param(w).unwrap();
        let doubled = tape.add(wv, wv).unwrap();
        let loss = tape.sum(doubled);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(w), &[2.0, 2.0]);
    }

    #[test]
    fn softmax_xent_gradient_is_probs_minus_onehot() {
        let mut store = ParamStore::new();
        let w = store.register(
            "w",
            ParamKind::Weight,
            Tensor::new(vec![3], vec![0.2, -0.4, 1.1]).unwrap(),
        );
        let mut tape = Tape::new(&store, Mode::Train);
        let wv = tape.param(w).unwrap();
        let loss = tape.softmax_cross_entropy(wv, &[0]).unwrap();
        let grads = tape.backward(loss).unwrap();
        let probs = crate::autodiff::softmax(&store.get(w).data);
        let g = grads.get(w);
        assert!((g[0] - (probs[0] - 1.0)).abs() < 1e-14);
        assert!((g[1] - probs[1]).abs() < 1e-14);
        assert!((g[2] - probs[2]).abs() < 1e-14);
    }
}
