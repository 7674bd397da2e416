//! Reverse-mode differentiation over a flat tape of primitive operations.
//!
//! A [`Graph`] is built afresh for every forward pass (define-by-run); each
//! op records its inputs and value, `backward` sweeps the tape once in
//! reverse, and parameter gradients are flushed back into the owning
//! [`ParamSet`](super::ParamSet). Every op checks shapes up front and
//! rejects non-finite outputs.

use rand::Rng;
use rand_chacha::ChaCha12Rng;

use super::optim::ParamSet;
use super::tensor::Tensor;
use super::NumericsError;

/// Guard added inside logarithms so that a zero probability yields a large
/// finite loss instead of infinity.
const LOG_GUARD: f64 = 1e-300;
/// Epsilon in the cosine-similarity denominator, guarding zero vectors.
const COSINE_EPS: f64 = 1e-12;

/// Handle to a node in one [`Graph`]. Cheap to copy; only valid for the
/// graph that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Payload {
    Leaf,
    Matmul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    RowScale(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Softmax(Var),
    Embedding { table: Var, ids: Vec<usize> },
    Cosine(Var, Var),
    CrossEntropy { probs: Var, targets: Vec<usize>, weights: Tensor },
    BinaryCrossEntropy { probs: Var, labels: Tensor, weights: Tensor },
    Concat(Vec<Var>),
    Dropout { x: Var, scaled_mask: Tensor },
    Scale(Var, f64),
    Recip { x: Var, eps: f64 },
    Col { x: Var, col: usize },
    SliceCols { x: Var, start: usize, len: usize },
    Reshape(Var),
}

struct Node {
    payload: Payload,
    value: Tensor,
    param_slot: Option<usize>,
}

pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    train: bool,
}

impl Graph {
    /// Inference-mode graph: dropout is a no-op.
    pub fn new() -> Graph {
        Graph { nodes: Vec::new(), grads: Vec::new(), train: false }
    }

    /// Training-mode graph: dropout masks are sampled and applied.
    pub fn new_train() -> Graph {
        Graph { nodes: Vec::new(), grads: Vec::new(), train: true }
    }

    pub fn is_train(&self) -> bool {
        self.train
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of the last `backward` loss w.r.t. `v`, if it was reached.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    fn push(&mut self, payload: Payload, value: Tensor, op: &'static str) -> Result<Var, NumericsError> {
        if !value.all_finite() {
            return Err(NumericsError::NonFiniteValue { op });
        }
        self.nodes.push(Node { payload, value, param_slot: None });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A constant leaf. No gradient is reported for it unless asked via
    /// [`grad`](Self::grad).
    pub fn input(&mut self, value: Tensor) -> Result<Var, NumericsError> {
        self.push(Payload::Leaf, value, "input")
    }

    /// Binds a parameter as a leaf; `flush_grads` later accumulates its
    /// gradient back into the set.
    pub fn param(&mut self, set: &ParamSet, slot: usize) -> Result<Var, NumericsError> {
        let v = self.push(Payload::Leaf, set.get(slot).value.clone(), "param")?;
        self.nodes[v.0].param_slot = Some(slot);
        Ok(v)
    }

    /// `[m,k] · [k,n] -> [m,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (m, ka) = self.value(a).dims2()?;
        let (kb, n) = self.value(b).dims2()?;
        if ka != kb {
            return Err(NumericsError::ShapeMismatch {
                op: "matmul",
                detail: format!("[{m},{ka}] x [{kb},{n}]"),
            });
        }
        let out = mm_nn(self.value(a).data(), self.value(b).data(), m, ka, n);
        self.push(Payload::Matmul(a, b), Tensor::from_vec(&[m, n], out)?, "matmul")
    }

    /// Elementwise sum. `b` may also be a rank-1 bias broadcast across the
    /// rows of a rank-2 `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let av = self.value(a);
        let bv = self.value(b);
        let value = if av.shape() == bv.shape() {
            let mut out = av.clone();
            out.add_assign(bv);
            out
        } else if av.rank() == 2 && bv.rank() == 1 && av.shape()[1] == bv.shape()[0] {
            let (rows, cols) = av.dims2()?;
            let mut data = av.data().to_vec();
            for r in 0..rows {
                for c in 0..cols {
                    data[r * cols + c] += bv.data()[c];
                }
            }
            Tensor::from_vec(&[rows, cols], data)?
        } else {
            return Err(NumericsError::ShapeMismatch {
                op: "add",
                detail: format!("{:?} + {:?}", av.shape(), bv.shape()),
            });
        };
        self.push(Payload::Add(a, b), value, "add")
    }

    /// Elementwise product of same-shape tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let av = self.value(a);
        let bv = self.value(b);
        if av.shape() != bv.shape() {
            return Err(NumericsError::ShapeMismatch {
                op: "mul",
                detail: format!("{:?} * {:?}", av.shape(), bv.shape()),
            });
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::from_vec(av.shape(), data)?;
        self.push(Payload::Mul(a, b), value, "mul")
    }

    /// Scales each row of `x: [B,H]` by the matching entry of `s: [B]`.
    pub fn row_scale(&mut self, x: Var, s: Var) -> Result<Var, NumericsError> {
        let (rows, cols) = self.value(x).dims2()?;
        let sv = self.value(s);
        if sv.shape() != [rows] {
            return Err(NumericsError::ShapeMismatch {
                op: "row_scale",
                detail: format!("x [{rows},{cols}] with s {:?}", sv.shape()),
            });
        }
        let mut data = self.value(x).data().to_vec();
        for r in 0..rows {
            let f = sv.data()[r];
            for v in &mut data[r * cols..(r + 1) * cols] {
                *v *= f;
            }
        }
        let value = Tensor::from_vec(&[rows, cols], data)?;
        self.push(Payload::RowScale(x, s), value, "row_scale")
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var, NumericsError> {
        let data = self.value(x).data().iter().map(|&v| sigmoid(v)).collect();
        let value = Tensor::from_vec(self.value(x).shape(), data)?;
        self.push(Payload::Sigmoid(x), value, "sigmoid")
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var, NumericsError> {
        let data = self.value(x).data().iter().map(|&v| v.tanh()).collect();
        let value = Tensor::from_vec(self.value(x).shape(), data)?;
        self.push(Payload::Tanh(x), value, "tanh")
    }

    /// Softmax along the last axis of a rank-1 or rank-2 tensor.
    pub fn softmax(&mut self, x: Var) -> Result<Var, NumericsError> {
        self.softmax_impl(x, None)
    }

    /// Softmax with a 0/1 mask of the same shape; masked entries get
    /// probability exactly 0. Every row must keep at least one live entry.
    pub fn masked_softmax(&mut self, x: Var, mask: &Tensor) -> Result<Var, NumericsError> {
        if mask.shape() != self.value(x).shape() {
            return Err(NumericsError::ShapeMismatch {
                op: "masked_softmax",
                detail: format!("mask {:?} vs x {:?}", mask.shape(), self.value(x).shape()),
            });
        }
        self.softmax_impl(x, Some(mask.clone()))
    }

    fn softmax_impl(&mut self, x: Var, mask: Option<Tensor>) -> Result<Var, NumericsError> {
        let xv = self.value(x);
        let (rows, cols) = match xv.rank() {
            1 => (1, xv.shape()[0]),
            2 => xv.dims2()?,
            _ => {
                return Err(NumericsError::ShapeMismatch {
                    op: "softmax",
                    detail: format!("rank {} unsupported", xv.rank()),
                })
            }
        };
        if cols == 0 {
            return Err(NumericsError::ShapeMismatch { op: "softmax", detail: "empty axis".into() });
        }
        let mut data = xv.data().to_vec();
        for r in 0..rows {
            let row = &mut data[r * cols..(r + 1) * cols];
            let live = |c: usize, mask: &Option<Tensor>| -> bool {
                mask.as_ref().map_or(true, |m| m.data()[r * cols + c] != 0.0)
            };
            let mut max = f64::NEG_INFINITY;
            for (c, &v) in row.iter().enumerate() {
                if live(c, &mask) && v > max {
                    max = v;
                }
            }
            if max == f64::NEG_INFINITY {
                return Err(NumericsError::ShapeMismatch {
                    op: "masked_softmax",
                    detail: format!("row {r} is fully masked"),
                });
            }
            let mut sum = 0.0;
            for (c, v) in row.iter_mut().enumerate() {
                if live(c, &mask) {
                    *v = (*v - max).exp();
                    sum += *v;
                } else {
                    *v = 0.0;
                }
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        let value = Tensor::from_vec(xv.shape(), data)?;
        self.push(Payload::Softmax(x), value, "softmax")
    }

    /// Gathers rows of `table: [V,E]` at `ids`, producing `[len(ids), E]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var, NumericsError> {
        let (v, e) = self.value(table).dims2()?;
        let mut data = Vec::with_capacity(ids.len() * e);
        for &id in ids {
            if id >= v {
                return Err(NumericsError::ShapeMismatch {
                    op: "embedding",
                    detail: format!("id {id} out of range for table [{v},{e}]"),
                });
            }
            data.extend_from_slice(self.value(table).row(id));
        }
        let value = Tensor::from_vec(&[ids.len(), e], data)?;
        self.push(
            Payload::Embedding { table, ids: ids.to_vec() },
            value,
            "embedding",
        )
    }

    /// Row-wise cosine similarity of two `[B,H]` tensors, yielding `[B]`.
    /// The denominator carries a 1e-12 guard for zero vectors.
    pub fn cosine(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (rows, cols) = self.value(a).dims2()?;
        if self.value(b).shape() != [rows, cols] {
            return Err(NumericsError::ShapeMismatch {
                op: "cosine",
                detail: format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            });
        }
        let mut out = Vec::with_capacity(rows);
        for r in 0..rows {
            let ra = self.value(a).row(r);
            let rb = self.value(b).row(r);
            let dot: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
            let na: f64 = ra.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb: f64 = rb.iter().map(|x| x * x).sum::<f64>().sqrt();
            out.push(dot / (na * nb + COSINE_EPS));
        }
        let value = Tensor::from_vec(&[rows], out)?;
        self.push(Payload::Cosine(a, b), value, "cosine")
    }

    /// Weighted negative log-likelihood of `targets` under probability rows
    /// `probs: [B,V]`: `Σ_b w_b · −ln p[b, t_b]`. Weights fold in masking
    /// and normalization, so the output is a ready-to-use scalar loss term.
    pub fn cross_entropy(
        &mut self,
        probs: Var,
        targets: &[usize],
        weights: &Tensor,
    ) -> Result<Var, NumericsError> {
        let (rows, cols) = self.value(probs).dims2()?;
        if targets.len() != rows || weights.shape() != [rows] {
            return Err(NumericsError::ShapeMismatch {
                op: "cross_entropy",
                detail: format!(
                    "probs [{rows},{cols}], {} targets, weights {:?}",
                    targets.len(),
                    weights.shape()
                ),
            });
        }
        let mut loss = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            if t >= cols {
                return Err(NumericsError::ShapeMismatch {
                    op: "cross_entropy",
                    detail: format!("target {t} out of range {cols}"),
                });
            }
            loss -= weights.data()[r] * (self.value(probs).get2(r, t) + LOG_GUARD).ln();
        }
        self.push(
            Payload::CrossEntropy { probs, targets: targets.to_vec(), weights: weights.clone() },
            Tensor::scalar(loss),
            "cross_entropy",
        )
    }

    /// Weighted Bernoulli cross-entropy of probabilities `p: [B]` against
    /// 0/1 `labels`: `Σ_b w_b · −(l ln p + (1−l) ln(1−p))`.
    pub fn binary_cross_entropy(
        &mut self,
        probs: Var,
        labels: &Tensor,
        weights: &Tensor,
    ) -> Result<Var, NumericsError> {
        let pv = self.value(probs);
        if pv.rank() != 1 || labels.shape() != pv.shape() || weights.shape() != pv.shape() {
            return Err(NumericsError::ShapeMismatch {
                op: "binary_cross_entropy",
                detail: format!(
                    "probs {:?}, labels {:?}, weights {:?}",
                    pv.shape(),
                    labels.shape(),
                    weights.shape()
                ),
            });
        }
        let mut loss = 0.0;
        for ((&p, &l), &w) in pv.data().iter().zip(labels.data()).zip(weights.data()) {
            loss -= w * (l * (p + LOG_GUARD).ln() + (1.0 - l) * (1.0 - p + LOG_GUARD).ln());
        }
        self.push(
            Payload::BinaryCrossEntropy { probs, labels: labels.clone(), weights: weights.clone() },
            Tensor::scalar(loss),
            "binary_cross_entropy",
        )
    }

    /// Concatenates rank-2 tensors with equal row counts along the column
    /// axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        if parts.is_empty() {
            return Err(NumericsError::ShapeMismatch { op: "concat", detail: "no inputs".into() });
        }
        let (rows, _) = self.value(parts[0]).dims2()?;
        let mut total = 0;
        for &p in parts {
            let (r, c) = self.value(p).dims2()?;
            if r != rows {
                return Err(NumericsError::ShapeMismatch {
                    op: "concat",
                    detail: format!("row counts differ: {rows} vs {r}"),
                });
            }
            total += c;
        }
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let value = Tensor::from_vec(&[rows, total], data)?;
        self.push(Payload::Concat(parts.to_vec()), value, "concat")
    }

    /// Inverted dropout: in training mode, zeroes each entry with
    /// probability `rate` and scales survivors by 1/(1−rate); identity
    /// otherwise, so inference needs no rescaling.
    pub fn dropout(&mut self, x: Var, rate: f64, rng: &mut ChaCha12Rng) -> Result<Var, NumericsError> {
        if !self.train || rate <= 0.0 {
            return Ok(x);
        }
        if !(0.0..1.0).contains(&rate) {
            return Err(NumericsError::ShapeMismatch {
                op: "dropout",
                detail: format!("rate {rate} outside [0,1)"),
            });
        }
        let keep = 1.0 - rate;
        let mask_data: Vec<f64> = (0..self.value(x).len())
            .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let scaled_mask = Tensor::from_vec(self.value(x).shape(), mask_data)?;
        let data = self
            .value(x)
            .data()
            .iter()
            .zip(scaled_mask.data())
            .map(|(v, m)| v * m)
            .collect();
        let value = Tensor::from_vec(self.value(x).shape(), data)?;
        self.push(Payload::Dropout { x, scaled_mask }, value, "dropout")
    }

    /// Multiplies by a compile-time constant.
    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var, NumericsError> {
        let data = self.value(x).data().iter().map(|v| v * c).collect();
        let value = Tensor::from_vec(self.value(x).shape(), data)?;
        self.push(Payload::Scale(x, c), value, "scale")
    }

    /// Elementwise `1/(x+eps)`; `eps` guards near-zero denominators.
    pub fn recip(&mut self, x: Var, eps: f64) -> Result<Var, NumericsError> {
        let data = self.value(x).data().iter().map(|v| 1.0 / (v + eps)).collect();
        let value = Tensor::from_vec(self.value(x).shape(), data)?;
        self.push(Payload::Recip { x, eps }, value, "recip")
    }

    /// Extracts column `col` of `x: [B,M]` as a rank-1 `[B]`.
    pub fn col(&mut self, x: Var, col: usize) -> Result<Var, NumericsError> {
        let (rows, cols) = self.value(x).dims2()?;
        if col >= cols {
            return Err(NumericsError::ShapeMismatch {
                op: "col",
                detail: format!("column {col} out of [{rows},{cols}]"),
            });
        }
        let data = (0..rows).map(|r| self.value(x).get2(r, col)).collect();
        let value = Tensor::from_vec(&[rows], data)?;
        self.push(Payload::Col { x, col }, value, "col")
    }

    /// Copies columns `start..start+len` of `x: [B,M]` into `[B,len]`.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var, NumericsError> {
        let (rows, cols) = self.value(x).dims2()?;
        if start + len > cols || len == 0 {
            return Err(NumericsError::ShapeMismatch {
                op: "slice_cols",
                detail: format!("columns {start}..{} of [{rows},{cols}]", start + len),
            });
        }
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&self.value(x).row(r)[start..start + len]);
        }
        let value = Tensor::from_vec(&[rows, len], data)?;
        self.push(Payload::SliceCols { x, start, len }, value, "slice_cols")
    }

    /// Reinterprets the data with a new shape of equal element count.
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, NumericsError> {
        let value = Tensor::from_vec(shape, self.value(x).data().to_vec())?;
        self.push(Payload::Reshape(x), value, "reshape")
    }

    /// Folds a list of same-shape vars into their elementwise sum.
    pub fn add_n(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let mut acc = *parts.first().ok_or(NumericsError::ShapeMismatch {
            op: "add_n",
            detail: "no inputs".into(),
        })?;
        for &p in &parts[1..] {
            acc = self.add(acc, p)?;
        }
        Ok(acc)
    }

    /// Reverse sweep from a scalar loss. Gradients for every reached node
    /// become available through [`grad`](Self::grad).
    pub fn backward(&mut self, loss: Var) -> Result<(), NumericsError> {
        if !self.value(loss).is_scalar() {
            return Err(NumericsError::ShapeMismatch {
                op: "backward",
                detail: format!("loss must be scalar, got {:?}", self.value(loss).shape()),
            });
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..self.nodes.len()).rev() {
            let Some(dy) = grads[idx].take() else { continue };
            if !dy.all_finite() {
                return Err(NumericsError::NonFiniteValue { op: "backward" });
            }
            self.propagate(idx, &dy, &mut grads);
            grads[idx] = Some(dy);
        }
        self.grads = grads;
        Ok(())
    }

    /// Adds the last backward pass's parameter gradients into `set`.
    pub fn flush_grads(&mut self, set: &mut ParamSet) {
        for (idx, node) in self.nodes.iter().enumerate() {
            if let (Some(slot), Some(g)) = (node.param_slot, self.grads.get(idx).and_then(Option::as_ref)) {
                set.get_mut(slot).grad.add_assign(g);
            }
        }
    }

    fn propagate(&self, idx: usize, dy: &Tensor, grads: &mut Vec<Option<Tensor>>) {
        let add_to = |grads: &mut Vec<Option<Tensor>>, var: Var, c: Tensor| {
            match &mut grads[var.0] {
                Some(g) => g.add_assign(&c),
                slot @ None => *slot = Some(c),
            }
        };

        match &self.nodes[idx].payload {
            Payload::Leaf => {}
            Payload::Matmul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let (m, k) = av.dims2().unwrap();
                let (_, n) = bv.dims2().unwrap();
                let da = mm_nt(dy.data(), bv.data(), m, n, k);
                let db = mm_tn(av.data(), dy.data(), m, k, n);
                add_to(grads, *a, Tensor::from_vec(&[m, k], da).unwrap());
                add_to(grads, *b, Tensor::from_vec(&[k, n], db).unwrap());
            }
            Payload::Add(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                add_to(grads, *a, dy.clone());
                if av.shape() == bv.shape() {
                    add_to(grads, *b, dy.clone());
                } else {
                    // bias broadcast: sum over rows
                    let (rows, cols) = av.dims2().unwrap();
                    let mut db = vec![0.0; cols];
                    for r in 0..rows {
                        for c in 0..cols {
                            db[c] += dy.get2(r, c);
                        }
                    }
                    add_to(grads, *b, Tensor::from_vec(&[cols], db).unwrap());
                }
            }
            Payload::Mul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let da = dy.data().iter().zip(bv.data()).map(|(d, v)| d * v).collect();
                let db = dy.data().iter().zip(av.data()).map(|(d, v)| d * v).collect();
                add_to(grads, *a, Tensor::from_vec(av.shape(), da).unwrap());
                add_to(grads, *b, Tensor::from_vec(bv.shape(), db).unwrap());
            }
            Payload::RowScale(x, s) => {
                let xv = self.value(*x);
                let sv = self.value(*s);
                let (rows, cols) = xv.dims2().unwrap();
                let mut dx = vec![0.0; rows * cols];
                let mut ds = vec![0.0; rows];
                for r in 0..rows {
                    let f = sv.data()[r];
                    for c in 0..cols {
                        let d = dy.get2(r, c);
                        dx[r * cols + c] = d * f;
                        ds[r] += d * xv.get2(r, c);
                    }
                }
                add_to(grads, *x, Tensor::from_vec(&[rows, cols], dx).unwrap());
                add_to(grads, *s, Tensor::from_vec(&[rows], ds).unwrap());
            }
            Payload::Sigmoid(x) => {
                let yv = &self.nodes[idx].value;
                let dx = dy
                    .data()
                    .iter()
                    .zip(yv.data())
                    .map(|(d, y)| d * y * (1.0 - y))
                    .collect();
                add_to(grads, *x, Tensor::from_vec(yv.shape(), dx).unwrap());
            }
            Payload::Tanh(x) => {
                let yv = &self.nodes[idx].value;
                let dx = dy
                    .data()
                    .iter()
                    .zip(yv.data())
                    .map(|(d, y)| d * (1.0 - y * y))
                    .collect();
                add_to(grads, *x, Tensor::from_vec(yv.shape(), dx).unwrap());
            }
            Payload::Softmax(x) => {
                let yv = &self.nodes[idx].value;
                let (rows, cols) = match yv.rank() {
                    1 => (1, yv.shape()[0]),
                    _ => yv.dims2().unwrap(),
                };
                let mut dx = vec![0.0; rows * cols];
                for r in 0..rows {
                    let y = &yv.data()[r * cols..(r + 1) * cols];
                    let d = &dy.data()[r * cols..(r + 1) * cols];
                    let dot: f64 = y.iter().zip(d).map(|(a, b)| a * b).sum();
                    for c in 0..cols {
                        dx[r * cols + c] = y[c] * (d[c] - dot);
                    }
                }
                add_to(grads, *x, Tensor::from_vec(yv.shape(), dx).unwrap());
            }
            Payload::Embedding { table, ids } => {
                let tv = self.value(*table);
                let (v, e) = tv.dims2().unwrap();
                let mut dt = vec![0.0; v * e];
                for (r, &id) in ids.iter().enumerate() {
                    for c in 0..e {
                        dt[id * e + c] += dy.get2(r, c);
                    }
                }
                add_to(grads, *table, Tensor::from_vec(&[v, e], dt).unwrap());
            }
            Payload::Cosine(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let yv = &self.nodes[idx].value;
                let (rows, cols) = av.dims2().unwrap();
                let mut da = vec![0.0; rows * cols];
                let mut db = vec![0.0; rows * cols];
                for r in 0..rows {
                    let ra = av.row(r);
                    let rb = bv.row(r);
                    let na: f64 = ra.iter().map(|x| x * x).sum::<f64>().sqrt();
                    let nb: f64 = rb.iter().map(|x| x * x).sum::<f64>().sqrt();
                    let denom = na * nb + COSINE_EPS;
                    let y = yv.data()[r];
                    let d = dy.data()[r];
                    for c in 0..cols {
                        // d cos/da = b/D − cos·nb·a/(na·D); the norm-ratio
                        // term vanishes in the zero-vector limit
                        let ta = if na > 0.0 { y * nb * ra[c] / (na * denom) } else { 0.0 };
                        let tb = if nb > 0.0 { y * na * rb[c] / (nb * denom) } else { 0.0 };
                        da[r * cols + c] = d * (rb[c] / denom - ta);
                        db[r * cols + c] = d * (ra[c] / denom - tb);
                    }
                }
                add_to(grads, *a, Tensor::from_vec(&[rows, cols], da).unwrap());
                add_to(grads, *b, Tensor::from_vec(&[rows, cols], db).unwrap());
            }
            Payload::CrossEntropy { probs, targets, weights } => {
                let pv = self.value(*probs);
                let (rows, cols) = pv.dims2().unwrap();
                let mut dp = vec![0.0; rows * cols];
                let d = dy.item();
                for (r, &t) in targets.iter().enumerate() {
                    dp[r * cols + t] = -d * weights.data()[r] / (pv.get2(r, t) + LOG_GUARD);
                }
                add_to(grads, *probs, Tensor::from_vec(&[rows, cols], dp).unwrap());
            }
            Payload::BinaryCrossEntropy { probs, labels, weights } => {
                let pv = self.value(*probs);
                let d = dy.item();
                let dp: Vec<f64> = pv
                    .data()
                    .iter()
                    .zip(labels.data())
                    .zip(weights.data())
                    .map(|((&p, &l), &w)| {
                        d * w * (-l / (p + LOG_GUARD) + (1.0 - l) / (1.0 - p + LOG_GUARD))
                    })
                    .collect();
                add_to(grads, *probs, Tensor::from_vec(pv.shape(), dp).unwrap());
            }
            Payload::Concat(parts) => {
                let rows = self.value(parts[0]).dims2().unwrap().0;
                let total = self.nodes[idx].value.dims2().unwrap().1;
                let mut offset = 0;
                for &p in parts {
                    let (_, c) = self.value(p).dims2().unwrap();
                    let mut dp = vec![0.0; rows * c];
                    for r in 0..rows {
                        dp[r * c..(r + 1) * c]
                            .copy_from_slice(&dy.data()[r * total + offset..r * total + offset + c]);
                    }
                    add_to(grads, p, Tensor::from_vec(&[rows, c], dp).unwrap());
                    offset += c;
                }
            }
            Payload::Dropout { x, scaled_mask } => {
                let dx = dy
                    .data()
                    .iter()
                    .zip(scaled_mask.data())
                    .map(|(d, m)| d * m)
                    .collect();
                add_to(grads, *x, Tensor::from_vec(scaled_mask.shape(), dx).unwrap());
            }
            Payload::Scale(x, c) => {
                let dx = dy.data().iter().map(|d| d * c).collect();
                add_to(grads, *x, Tensor::from_vec(dy.shape(), dx).unwrap());
            }
            Payload::Recip { x, eps } => {
                let xv = self.value(*x);
                let dx = dy
                    .data()
                    .iter()
                    .zip(xv.data())
                    .map(|(d, v)| {
                        let den = v + eps;
                        -d / (den * den)
                    })
                    .collect();
                add_to(grads, *x, Tensor::from_vec(xv.shape(), dx).unwrap());
            }
            Payload::Col { x, col } => {
                let (rows, cols) = self.value(*x).dims2().unwrap();
                let mut dx = vec![0.0; rows * cols];
                for r in 0..rows {
                    dx[r * cols + col] = dy.data()[r];
                }
                add_to(grads, *x, Tensor::from_vec(&[rows, cols], dx).unwrap());
            }
            Payload::SliceCols { x, start, len } => {
                let (rows, cols) = self.value(*x).dims2().unwrap();
                let mut dx = vec![0.0; rows * cols];
                for r in 0..rows {
                    dx[r * cols + start..r * cols + start + len]
                        .copy_from_slice(&dy.data()[r * len..(r + 1) * len]);
                }
                add_to(grads, *x, Tensor::from_vec(&[rows, cols], dx).unwrap());
            }
            Payload::Reshape(x) => {
                let xshape = self.value(*x).shape().to_vec();
                add_to(grads, *x, Tensor::from_vec(&xshape, dy.data().to_vec()).unwrap());
            }
        }
    }
}

impl Default for Graph {
    fn default() -> Self {
        Graph::new()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `[m,k]·[k,n]`, accumulating along k in row-major order.
fn mm_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (kk, &av) in arow.iter().enumerate() {
            if av != 0.0 {
                let brow = &b[kk * n..(kk + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
    }
    out
}

/// `[m,n]·[k,n]ᵀ -> [m,k]`: rows of `a` dotted with rows of `b`.
fn mm_nt(a: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * k];
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for kk in 0..k {
            let brow = &b[kk * n..(kk + 1) * n];
            out[i * k + kk] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    out
}

/// `[m,k]ᵀ·[m,n] -> [k,n]`.
fn mm_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for (kk, &av) in arow.iter().enumerate() {
            if av != 0.0 {
                let orow = &mut out[kk * n..(kk + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
    }
    out
}
