//! Reverse-mode autodiff over an append-only tape.
//!
//! Every operation records a node holding its forward value and the indices
//! of its parents; `backward` walks the tape once in reverse. Nodes are
//! referenced by lightweight [`Var`] handles, so graphs can be built in plain
//! Rust control flow without lifetimes tying values to the tape.

use super::tensor::{matmul, matmul_a_bt_acc, matmul_at_b_acc, Scalar, Tensor};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

enum Op<E> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, E),
    AddConst(Var, E),
    Sigmoid(Var),
    Tanh(Var),
    Silu(Var),
    Ln(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        mean: Vec<E>,
        inv_std: Vec<E>,
    },
    SoftmaxRows(Var),
    RowSum(Var),
    ClampMin(Var, E),
    SumAll(Var),
    Concat(Vec<Var>),
    SliceCols { x: Var, start: usize },
    Reshape(Var),
    StopGrad,
    StraightThrough { probs: Var },
    BceLogits { logits: Var, target: Tensor<E> },
}

struct Node<E> {
    op: Op<E>,
    value: Tensor<E>,
}

/// Computation tape. Forward values are computed eagerly as ops are pushed.
pub struct Tape<E> {
    nodes: Vec<Node<E>>,
}

impl<E: Scalar> Default for Tape<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Scalar> Tape<E> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<E> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op<E>, value: Tensor<E>) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    /// Leaf holding a parameter; gradients are read back through [`Gradients`].
    pub fn param(&mut self, value: Tensor<E>) -> Var {
        self.push(Op::Leaf, value)
    }

    /// Leaf holding an input, target, or other constant.
    pub fn constant(&mut self, value: Tensor<E>) -> Var {
        self.push(Op::Leaf, value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(
            av.cols(),
            bv.rows(),
            "matmul {}x{} * {}x{}",
            av.rows(),
            av.cols(),
            bv.rows(),
            bv.cols()
        );
        let value = matmul(av, bv);
        self.push(Op::MatMul(a, b), value)
    }

    fn zip_elementwise(&self, a: Var, b: Var, f: impl Fn(E, E) -> E) -> Tensor<E> {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "elementwise shape mismatch");
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(av.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.zip_elementwise(a, b, |x, y| x + y);
        self.push(Op::Add(a, b), value)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.zip_elementwise(a, b, |x, y| x - y);
        self.push(Op::Sub(a, b), value)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.zip_elementwise(a, b, |x, y| x * y);
        self.push(Op::Mul(a, b), value)
    }

    /// Broadcast-add a single row to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Var {
        let (xv, rv) = (self.value(x), self.value(row));
        assert_eq!(rv.rows(), 1, "add_row rhs must be a single row");
        assert_eq!(xv.cols(), rv.cols(), "add_row width mismatch");
        let cols = xv.cols();
        let data = xv
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + rv.data()[i % cols])
            .collect();
        let value = Tensor::new(xv.shape().to_vec(), data);
        self.push(Op::AddRow(x, row), value)
    }

    pub fn scale(&mut self, x: Var, c: E) -> Var {
        let value = self.value(x).map(|v| v * c);
        self.push(Op::Scale(x, c), value)
    }

    pub fn add_const(&mut self, x: Var, c: E) -> Var {
        let value = self.value(x).map(|v| v + c);
        self.push(Op::AddConst(x, c), value)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(sigmoid_stable);
        self.push(Op::Sigmoid(x), value)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.tanh());
        self.push(Op::Tanh(x), value)
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v * sigmoid_stable(v));
        self.push(Op::Silu(x), value)
    }

    pub fn ln(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.ln());
        self.push(Op::Ln(x), value)
    }

    /// Row-wise layer norm followed by elementwise gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let xv = self.value(x);
        let (rows, cols) = (xv.rows(), xv.cols());
        assert!(cols > 0, "layer_norm on empty rows");
        assert_eq!(self.value(gain).cols(), cols, "layer_norm gain width");
        assert_eq!(self.value(bias).cols(), cols, "layer_norm bias width");
        let eps = E::from_f64(LAYER_NORM_EPS);
        let n = E::from_f64(cols as f64);
        let mut mean = Vec::with_capacity(rows);
        let mut inv_std = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(rows * cols);
        let gv = self.value(gain).data().to_vec();
        let bv = self.value(bias).data().to_vec();
        let xv = self.value(x);
        for r in 0..rows {
            let rowdat = xv.row_slice(r);
            let mut m = E::ZERO;
            for &v in rowdat {
                m += v;
            }
            m = m / n;
            let mut var = E::ZERO;
            for &v in rowdat {
                let d = v - m;
                var += d * d;
            }
            var = var / n;
            let is = E::ONE / (var + eps).sqrt();
            mean.push(m);
            inv_std.push(is);
            for (c, &v) in rowdat.iter().enumerate() {
                out.push((v - m) * is * gv[c] + bv[c]);
            }
        }
        let value = Tensor::new(xv.shape().to_vec(), out);
        self.push(
            Op::LayerNorm {
                x,
                gain,
                bias,
                mean,
                inv_std,
            },
            value,
        )
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let (rows, cols) = (xv.rows(), xv.cols());
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            let rowdat = xv.row_slice(r);
            let mut mx = rowdat[0];
            for &v in rowdat {
                mx = mx.maxv(v);
            }
            let mut denom = E::ZERO;
            let start = out.len();
            for &v in rowdat {
                let e = (v - mx).exp();
                out.push(e);
                denom += e;
            }
            for v in &mut out[start..] {
                *v = *v / denom;
            }
        }
        let value = Tensor::new(xv.shape().to_vec(), out);
        self.push(Op::SoftmaxRows(x), value)
    }

    /// Sums each row, producing a (rows, 1) tensor.
    pub fn row_sum(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let data = (0..xv.rows())
            .map(|r| {
                let mut s = E::ZERO;
                for &v in xv.row_slice(r) {
                    s += v;
                }
                s
            })
            .collect();
        let value = Tensor::new(vec![xv.rows(), 1], data);
        self.push(Op::RowSum(x), value)
    }

    pub fn clamp_min(&mut self, x: Var, floor: E) -> Var {
        let value = self.value(x).map(|v| v.maxv(floor));
        self.push(Op::ClampMin(x, floor), value)
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let mut s = E::ZERO;
        for &v in self.value(x).data() {
            s += v;
        }
        self.push(Op::SumAll(x), Tensor::scalar(s))
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let n = self.value(x).numel();
        let s = self.sum_all(x);
        self.scale(s, E::ONE / E::from_f64(n as f64))
    }

    /// Concatenates along columns; all parts must share a row count.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let rows = self.value(parts[0]).rows();
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                let pv = self.value(p);
                assert_eq!(pv.rows(), rows, "concat row mismatch");
                data.extend_from_slice(pv.row_slice(r));
            }
        }
        let value = Tensor::new(vec![rows, total], data);
        self.push(Op::Concat(parts.to_vec()), value)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let xv = self.value(x);
        let (rows, cols) = (xv.rows(), xv.cols());
        assert!(start + len <= cols, "slice_cols out of range");
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&xv.row_slice(r)[start..start + len]);
        }
        let value = Tensor::new(vec![rows, len], data);
        self.push(Op::SliceCols { x, start }, value)
    }

    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Var {
        let value = self.value(x).reshaped(rows, cols);
        self.push(Op::Reshape(x), value)
    }

    pub fn stop_grad(&mut self, x: Var) -> Var {
        let value = self.value(x).clone();
        self.push(Op::StopGrad, value)
    }

    /// Forward takes the provided `sample`; backward passes the incoming
    /// gradient to `probs` unchanged (straight-through estimator).
    pub fn straight_through(&mut self, probs: Var, sample: Tensor<E>) -> Var {
        assert_eq!(self.value(probs).shape(), sample.shape(), "sample shape");
        self.push(Op::StraightThrough { probs }, sample)
    }

    /// Per-element binary cross entropy on logits against fixed targets.
    pub fn bce_logits(&mut self, logits: Var, target: Tensor<E>) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.shape(), target.shape(), "bce target shape");
        let data = lv
            .data()
            .iter()
            .zip(target.data())
            .map(|(&x, &t)| x.maxv(E::ZERO) - x * t + (E::ONE + (-x.abs()).exp()).ln())
            .collect();
        let value = Tensor::new(lv.shape().to_vec(), data);
        self.push(Op::BceLogits { logits, target }, value)
    }

    /// Reverse pass from a scalar loss. Returns per-node gradients; only
    /// ancestors of `loss` that require gradients are populated.
    pub fn backward(&self, loss: Var) -> Gradients<E> {
        assert_eq!(self.value(loss).numel(), 1, "backward needs a scalar loss");
        let mut grads: Vec<Option<Tensor<E>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(E::ONE));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.accumulate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn accumulate(&self, idx: usize, g: &Tensor<E>, grads: &mut [Option<Tensor<E>>]) {
        let node = &self.nodes[idx];
        let acc = |grads: &mut [Option<Tensor<E>>], v: Var, update: &dyn Fn(&mut Tensor<E>)| {
            let slot = grads[v.0].get_or_insert_with(|| {
                let t = &self.nodes[v.0].value;
                Tensor::new(t.shape().to_vec(), vec![E::ZERO; t.numel()])
            });
            update(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                acc(grads, *a, &|da| matmul_a_bt_acc(g, bv, da));
                acc(grads, *b, &|db| matmul_at_b_acc(av, g, db));
            }
            Op::Add(a, b) => {
                acc(grads, *a, &|da| add_into(da, g.data()));
                acc(grads, *b, &|db| add_into(db, g.data()));
            }
            Op::Sub(a, b) => {
                acc(grads, *a, &|da| add_into(da, g.data()));
                acc(grads, *b, &|db| {
                    for (o, &v) in db.data_mut().iter_mut().zip(g.data()) {
                        *o += -v;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                acc(grads, *a, &|da| mul_add_into(da, g.data(), bv.data()));
                acc(grads, *b, &|db| mul_add_into(db, g.data(), av.data()));
            }
            Op::AddRow(x, row) => {
                acc(grads, *x, &|dx| add_into(dx, g.data()));
                let cols = self.nodes[row.0].value.cols();
                acc(grads, *row, &|dr| {
                    for (i, &v) in g.data().iter().enumerate() {
                        dr.data_mut()[i % cols] += v;
                    }
                });
            }
            Op::Scale(x, c) => {
                let c = *c;
                acc(grads, *x, &|dx| {
                    for (o, &v) in dx.data_mut().iter_mut().zip(g.data()) {
                        *o += v * c;
                    }
                });
            }
            Op::AddConst(x, _) => acc(grads, *x, &|dx| add_into(dx, g.data())),
            Op::Sigmoid(x) => {
                let y = &node.value;
                acc(grads, *x, &|dx| {
                    for ((o, &gv), &yv) in dx.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                        *o += gv * yv * (E::ONE - yv);
                    }
                });
            }
            Op::Tanh(x) => {
                let y = &node.value;
                acc(grads, *x, &|dx| {
                    for ((o, &gv), &yv) in dx.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                        *o += gv * (E::ONE - yv * yv);
                    }
                });
            }
            Op::Silu(x) => {
                let xv = &self.nodes[x.0].value;
                acc(grads, *x, &|dx| {
                    for ((o, &gv), &v) in dx.data_mut().iter_mut().zip(g.data()).zip(xv.data()) {
                        let s = sigmoid_stable(v);
                        *o += gv * (s + v * s * (E::ONE - s));
                    }
                });
            }
            Op::Ln(x) => {
                let xv = &self.nodes[x.0].value;
                acc(grads, *x, &|dx| {
                    for ((o, &gv), &v) in dx.data_mut().iter_mut().zip(g.data()).zip(xv.data()) {
                        *o += gv / v;
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                mean,
                inv_std,
            } => {
                let xv = &self.nodes[x.0].value;
                let gv = &self.nodes[gain.0].value;
                let (rows, cols) = (xv.rows(), xv.cols());
                let n = E::from_f64(cols as f64);
                acc(grads, *x, &|dx| {
                    for r in 0..rows {
                        let grow = &g.data()[r * cols..(r + 1) * cols];
                        let xrow = xv.row_slice(r);
                        let (m, is) = (mean[r], inv_std[r]);
                        let mut sum_dxhat = E::ZERO;
                        let mut sum_dxhat_xhat = E::ZERO;
                        for (c, &gvv) in grow.iter().enumerate() {
                            let xhat = (xrow[c] - m) * is;
                            let dxhat = gvv * gv.data()[c];
                            sum_dxhat += dxhat;
                            sum_dxhat_xhat += dxhat * xhat;
                        }
                        let mean_dxhat = sum_dxhat / n;
                        let mean_dxhat_xhat = sum_dxhat_xhat / n;
                        let drow = &mut dx.data_mut()[r * cols..(r + 1) * cols];
                        for (c, o) in drow.iter_mut().enumerate() {
                            let xhat = (xrow[c] - m) * is;
                            let dxhat = grow[c] * gv.data()[c];
                            *o += is * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat);
                        }
                    }
                });
                acc(grads, *gain, &|dg| {
                    for r in 0..rows {
                        let grow = &g.data()[r * cols..(r + 1) * cols];
                        let xrow = xv.row_slice(r);
                        let (m, is) = (mean[r], inv_std[r]);
                        for (c, o) in dg.data_mut().iter_mut().enumerate() {
                            *o += grow[c] * (xrow[c] - m) * is;
                        }
                    }
                });
                acc(grads, *bias, &|db| {
                    for r in 0..rows {
                        let grow = &g.data()[r * cols..(r + 1) * cols];
                        for (o, &v) in db.data_mut().iter_mut().zip(grow) {
                            *o += v;
                        }
                    }
                });
            }
            Op::SoftmaxRows(x) => {
                let y = &node.value;
                let (rows, cols) = (y.rows(), y.cols());
                acc(grads, *x, &|dx| {
                    for r in 0..rows {
                        let yrow = y.row_slice(r);
                        let grow = &g.data()[r * cols..(r + 1) * cols];
                        let mut gy = E::ZERO;
                        for (gv, yv) in grow.iter().zip(yrow) {
                            gy += *gv * *yv;
                        }
                        let drow = &mut dx.data_mut()[r * cols..(r + 1) * cols];
                        for ((o, &gv), &yv) in drow.iter_mut().zip(grow).zip(yrow) {
                            *o += yv * (gv - gy);
                        }
                    }
                });
            }
            Op::RowSum(x) => {
                let cols = self.nodes[x.0].value.cols();
                acc(grads, *x, &|dx| {
                    for (i, o) in dx.data_mut().iter_mut().enumerate() {
                        *o += g.data()[i / cols];
                    }
                });
            }
            Op::ClampMin(x, floor) => {
                let xv = &self.nodes[x.0].value;
                let floor = *floor;
                acc(grads, *x, &|dx| {
                    for ((o, &gv), &v) in dx.data_mut().iter_mut().zip(g.data()).zip(xv.data()) {
                        if v > floor {
                            *o += gv;
                        }
                    }
                });
            }
            Op::SumAll(x) => {
                let gv = g.item();
                acc(grads, *x, &|dx| {
                    for o in dx.data_mut() {
                        *o += gv;
                    }
                });
            }
            Op::Concat(parts) => {
                let rows = node.value.rows();
                let total = node.value.cols();
                let mut start = 0usize;
                for &p in parts {
                    let w = self.nodes[p.0].value.cols();
                    acc(grads, p, &|dp| {
                        for r in 0..rows {
                            let src = &g.data()[r * total + start..r * total + start + w];
                            let dst = &mut dp.data_mut()[r * w..(r + 1) * w];
                            for (o, &v) in dst.iter_mut().zip(src) {
                                *o += v;
                            }
                        }
                    });
                    start += w;
                }
            }
            Op::SliceCols { x, start } => {
                let xv = &self.nodes[x.0].value;
                let (rows, cols) = (xv.rows(), xv.cols());
                let w = node.value.cols();
                let start = *start;
                acc(grads, *x, &|dx| {
                    for r in 0..rows {
                        let src = &g.data()[r * w..(r + 1) * w];
                        let dst = &mut dx.data_mut()[r * cols + start..r * cols + start + w];
                        for (o, &v) in dst.iter_mut().zip(src) {
                            *o += v;
                        }
                    }
                });
            }
            Op::Reshape(x) => acc(grads, *x, &|dx| add_into(dx, g.data())),
            Op::StopGrad => {}
            Op::StraightThrough { probs } => {
                acc(grads, *probs, &|dp| add_into(dp, g.data()));
            }
            Op::BceLogits { logits, target } => {
                let lv = &self.nodes[logits.0].value;
                acc(grads, *logits, &|dl| {
                    for ((o, &gv), (&x, &t)) in dl
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(lv.data().iter().zip(target.data()))
                    {
                        *o += gv * (sigmoid_stable(x) - t);
                    }
                });
            }
        }
    }
}

#[inline]
fn sigmoid_stable<E: Scalar>(x: E) -> E {
    if x >= E::ZERO {
        E::ONE / (E::ONE + (-x).exp())
    } else {
        let e = x.exp();
        e / (E::ONE + e)
    }
}

#[inline]
fn add_into<E: Scalar>(dst: &mut Tensor<E>, src: &[E]) {
    for (o, &v) in dst.data_mut().iter_mut().zip(src) {
        *o += v;
    }
}

#[inline]
fn mul_add_into<E: Scalar>(dst: &mut Tensor<E>, a: &[E], b: &[E]) {
    for ((o, &x), &y) in dst.data_mut().iter_mut().zip(a).zip(b) {
        *o += x * y;
    }
}

/// Result of a backward pass, indexed by the vars the graph was built from.
pub struct Gradients<E> {
    grads: Vec<Option<Tensor<E>>>,
}

impl<E: Scalar> Gradients<E> {
    pub fn get(&self, v: Var) -> Option<&Tensor<E>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<E>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain_through_matmul_and_tanh() {
        let mut tape: Tape<f64> = Tape::new();
        let w = tape.param(Tensor::new(vec![2, 2], vec![0.5, -0.25, 0.75, 0.1]));
        let x = tape.constant(Tensor::new(vec![1, 2], vec![1.0, 2.0]));
        let y = tape.matmul(x, w);
        let t = tape.tanh(y);
        let loss = tape.sum_all(t);
        let grads = tape.backward(loss);
        let gw = grads.get(w).unwrap();
        let y0: f64 = 1.0 * 0.5 + 2.0 * 0.75;
        let y1: f64 = 1.0 * -0.25 + 2.0 * 0.1;
        let d0 = 1.0 - y0.tanh().powi(2);
        let d1 = 1.0 - y1.tanh().powi(2);
        let expect = [d0, d1, 2.0 * d0, 2.0 * d1];
        for (a, e) in gw.data().iter().zip(expect) {
            assert!((a - e).abs() < 1e-12, "{a} vs {e}");
        }
    }

    #[test]
    fn stop_grad_blocks_flow() {
        let mut tape: Tape<f64> = Tape::new();
        let w = tape.param(Tensor::scalar(3.0));
        let s = tape.stop_grad(w);
        let prod = tape.mul(w, s);
        let loss = tape.sum_all(prod);
        let grads = tape.backward(loss);
        assert_eq!(grads.get(w).unwrap().item(), 3.0);
    }

    #[test]
    fn straight_through_passes_gradient_to_probs() {
        let mut tape: Tape<f64> = Tape::new();
        let logits = tape.param(Tensor::row(vec![0.2, -0.4, 0.9]));
        let probs = tape.softmax_rows(logits);
        let sample = Tensor::row(vec![0.0, 0.0, 1.0]);
        let z = tape.straight_through(probs, sample.clone());
        assert_eq!(tape.value(z), &sample);
        let weights = tape.constant(Tensor::row(vec![1.0, 2.0, 3.0]));
        let weighted = tape.mul(z, weights);
        let loss = tape.sum_all(weighted);
        let grads = tape.backward(loss);
        assert_eq!(grads.get(probs).unwrap().data(), &[1.0, 2.0, 3.0]);
        assert!(grads.get(logits).is_some());
    }

    #[test]
    fn clamp_min_zeroes_gradient_below_floor() {
        let mut tape: Tape<f64> = Tape::new();
        let x = tape.param(Tensor::row(vec![0.5, 2.0]));
        let c = tape.clamp_min(x, 1.0);
        let loss = tape.sum_all(c);
        let grads = tape.backward(loss);
        assert_eq!(grads.get(x).unwrap().data(), &[0.0, 1.0]);
    }
}
