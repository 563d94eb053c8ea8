//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Every primitive pushes one node holding its forward value. Nodes are
//! appended in evaluation order, so the tape is topologically sorted by
//! construction and [`Tape::backward`] is a single reverse sweep.

use crate::error::{Error, Result};
use crate::numkit::tensor::{matmul_into, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Relu(Var),
    Concat { inputs: Vec<Var>, axis: usize },
    Reshape(Var),
    Slice { input: Var, axis: usize, start: usize },
    RowSoftmax(Var),
    LogRowSoftmax(Var),
    Log(Var),
    Sum(Var),
    Scale(Var, f64),
    StopGradient,
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    corrupt_matmul_vjp: bool,
}

/// Gradients produced by one backward sweep.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient with respect to `var`; all zeros when `var` does not reach the loss.
    pub fn wrt(&self, var: Var) -> Tensor {
        match &self.grads[var.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[var.0]),
        }
    }

    /// True when some path from `var` to the loss exists.
    pub fn reached(&self, var: Var) -> bool {
        self.grads[var.0].is_some()
    }
}

/// Splits a shape around `axis` into (outer, axis length, inner).
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Test hook: perturbs the right-operand VJP of matmul so that gradient
    /// checks can be shown to catch a broken derivative.
    #[doc(hidden)]
    pub fn corrupt_matmul_vjp(&mut self, on: bool) {
        self.corrupt_matmul_vjp = on;
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

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Records an input or parameter.
    pub fn leaf(&mut self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Leaf, "leaf")
    }

    fn push(&mut self, value: Tensor, op: Op, name: &str) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite(name.to_string()));
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    fn matrix_dims(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        let t = self.value(v);
        if !t.is_matrix() {
            return Err(Error::shape(op, format!("expected a matrix, got {:?}", t.shape())));
        }
        Ok((t.rows(), t.cols()))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = self.matrix_dims(a, "matmul")?;
        let (k2, m) = self.matrix_dims(b, "matmul")?;
        if k != k2 {
            return Err(Error::shape("matmul", format!("[{n},{k}] x [{k2},{m}]")));
        }
        let mut out = vec![0.0; n * m];
        matmul_into(self.value(a).data(), self.value(b).data(), &mut out, n, k, m);
        self.push(Tensor::new(vec![n, m], out)?, Op::MatMul(a, b), "matmul")
    }

    /// Elementwise sum. `b` may also be a `1×m` row broadcast over the rows of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa == sb {
            let data = self
                .value(a)
                .data()
                .iter()
                .zip(self.value(b).data())
                .map(|(x, y)| x + y)
                .collect();
            return self.push(Tensor::new(sa, data)?, Op::Add(a, b), "add");
        }
        if sa.len() == 2 && sb.len() == 2 && sb[0] == 1 && sb[1] == sa[1] {
            let m = sa[1];
            let bias = self.value(b).data();
            let data = self
                .value(a)
                .data()
                .iter()
                .enumerate()
                .map(|(i, x)| x + bias[i % m])
                .collect();
            return self.push(Tensor::new(sa, data)?, Op::AddRow(a, b), "add");
        }
        Err(Error::shape("add", format!("{sa:?} + {sb:?}")))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|v| v.max(0.0));
        self.push(out, Op::Relu(a), "relu")
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let out = self.value(a).scale(s);
        self.push(out, Op::Scale(a, s), "scale")
    }

    /// Identity in the forward pass; blocks gradient flow in the backward pass.
    pub fn stop_gradient(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).clone();
        self.push(out, Op::StopGradient, "stop_gradient")
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self
            .value(a)
            .reshaped(shape)
            .map_err(|_| Error::shape("reshape", format!("{:?} -> {shape:?}", self.shape(a))))?;
        self.push(out, Op::Reshape(a), "reshape")
    }

    /// Concatenates tensors of equal rank along `axis`; other dimensions must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::shape("concat", format!("axis {axis} for {base:?}")));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let agrees = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (x, y))| i == axis || x == y);
            if !agrees {
                return Err(Error::shape("concat", format!("{base:?} vs {s:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut out_shape = base.clone();
        out_shape[axis] = total;
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let len = self.shape(v)[axis] * inner;
                data.extend_from_slice(&self.value(v).data()[o * len..(o + 1) * len]);
            }
        }
        let out = Tensor::new(out_shape, data)?;
        self.push(
            out,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            "concat",
        )
    }

    /// Takes indices `start..end` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || start >= end || end > shape[axis] {
            return Err(Error::shape(
                "slice",
                format!("{start}..{end} on axis {axis} of {shape:?}"),
            ));
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let width = (end - start) * inner;
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(outer * width);
        for o in 0..outer {
            let off = o * len * inner + start * inner;
            data.extend_from_slice(&src[off..off + width]);
        }
        let mut out_shape = shape;
        out_shape[axis] = end - start;
        let out = Tensor::new(out_shape, data)?;
        self.push(
            out,
            Op::Slice {
                input: a,
                axis,
                start,
            },
            "slice",
        )
    }

    /// Single element by flat row-major index, as a scalar.
    pub fn element(&mut self, a: Var, index: usize) -> Result<Var> {
        let numel = self.value(a).numel();
        let flat = self.reshape(a, &[numel])?;
        let picked = self.slice(flat, 0, index, index + 1)?;
        self.reshape(picked, &[])
    }

    pub fn row_softmax(&mut self, a: Var) -> Result<Var> {
        self.matrix_dims(a, "row_softmax")?;
        let out = softmax_rows(self.value(a), false);
        self.push(out, Op::RowSoftmax(a), "row_softmax")
    }

    /// Numerically stable `log(row_softmax(a))`.
    pub fn log_row_softmax(&mut self, a: Var) -> Result<Var> {
        self.matrix_dims(a, "log_row_softmax")?;
        let out = softmax_rows(self.value(a), true);
        self.push(out, Op::LogRowSoftmax(a), "log_row_softmax")
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(f64::ln);
        self.push(out, Op::Log(a), "log")
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a), "sum")
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got {:?}", lv.shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::ones(lv.shape()));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }

        grads.resize(self.nodes.len(), None);
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf | Op::StopGradient => {}
            Op::MatMul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let (n, k, m) = (av.rows(), av.cols(), bv.cols());
                // dA = G·Bᵀ
                let mut da = vec![0.0; n * k];
                for i in 0..n {
                    let g_row = &g.data()[i * m..(i + 1) * m];
                    for p in 0..k {
                        let b_row = &bv.data()[p * m..(p + 1) * m];
                        da[i * k + p] = g_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
                    }
                }
                // dB = Aᵀ·G
                let mut db = vec![0.0; k * m];
                for i in 0..n {
                    let g_row = &g.data()[i * m..(i + 1) * m];
                    for p in 0..k {
                        let aip = av.data()[i * k + p];
                        if aip == 0.0 {
                            continue;
                        }
                        for (d, gv) in db[p * m..(p + 1) * m].iter_mut().zip(g_row) {
                            *d += aip * gv;
                        }
                    }
                }
                if self.corrupt_matmul_vjp {
                    db.iter_mut().for_each(|v| *v *= 1.5);
                }
                accumulate(grads, *a, Tensor::new(vec![n, k], da)?)?;
                accumulate(grads, *b, Tensor::new(vec![k, m], db)?)?;
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone())?;
                accumulate(grads, *b, g.clone())?;
            }
            Op::AddRow(a, b) => {
                let m = g.cols();
                let mut db = vec![0.0; m];
                for (i, v) in g.data().iter().enumerate() {
                    db[i % m] += v;
                }
                accumulate(grads, *a, g.clone())?;
                accumulate(grads, *b, Tensor::new(vec![1, m], db)?)?;
            }
            Op::Relu(a) => {
                // subgradient 0 at the kink
                let x = self.value(*a);
                let data = x
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&xv, &gv)| if xv > 0.0 { gv } else { 0.0 })
                    .collect();
                accumulate(grads, *a, Tensor::new(x.shape().to_vec(), data)?)?;
            }
            Op::Scale(a, s) => accumulate(grads, *a, g.scale(*s))?,
            Op::Reshape(a) => {
                accumulate(grads, *a, g.reshaped(self.shape(*a))?)?;
            }
            Op::Concat { inputs, axis } => {
                let (outer, total, inner) = split_axis(g.shape(), *axis);
                let mut offset = 0;
                for &v in inputs {
                    let shape = self.shape(v).to_vec();
                    let len = shape[*axis] * inner;
                    let mut data = Vec::with_capacity(outer * len);
                    for o in 0..outer {
                        let base = o * total * inner + offset;
                        data.extend_from_slice(&g.data()[base..base + len]);
                    }
                    offset += len;
                    accumulate(grads, v, Tensor::new(shape, data)?)?;
                }
            }
            Op::Slice { input, axis, start } => {
                let shape = self.shape(*input).to_vec();
                let (outer, len, inner) = split_axis(&shape, *axis);
                let width = g.shape()[*axis] * inner;
                let mut data = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    let off = o * len * inner + start * inner;
                    data[off..off + width].copy_from_slice(&g.data()[o * width..(o + 1) * width]);
                }
                accumulate(grads, *input, Tensor::new(shape, data)?)?;
            }
            Op::RowSoftmax(a) => {
                // dx = y ⊙ (g − <g, y>) per row
                let y = &node.value;
                let m = y.cols();
                let mut data = vec![0.0; y.numel()];
                for r in 0..y.rows() {
                    let yr = &y.data()[r * m..(r + 1) * m];
                    let gr = &g.data()[r * m..(r + 1) * m];
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for c in 0..m {
                        data[r * m + c] = yr[c] * (gr[c] - dot);
                    }
                }
                accumulate(grads, *a, Tensor::new(y.shape().to_vec(), data)?)?;
            }
            Op::LogRowSoftmax(a) => {
                // dx = g − softmax · Σg per row
                let ls = &node.value;
                let m = ls.cols();
                let mut data = vec![0.0; ls.numel()];
                for r in 0..ls.rows() {
                    let gr = &g.data()[r * m..(r + 1) * m];
                    let gsum: f64 = gr.iter().sum();
                    for c in 0..m {
                        data[r * m + c] = gr[c] - ls.data()[r * m + c].exp() * gsum;
                    }
                }
                accumulate(grads, *a, Tensor::new(ls.shape().to_vec(), data)?)?;
            }
            Op::Log(a) => {
                let x = self.value(*a);
                let data = x.data().iter().zip(g.data()).map(|(xv, gv)| gv / xv).collect();
                let d = Tensor::new(x.shape().to_vec(), data)?;
                if !d.all_finite() {
                    return Err(Error::NonFinite("log backward".into()));
                }
                accumulate(grads, *a, d)?;
            }
            Op::Sum(a) => {
                let gv = g.data()[0];
                accumulate(grads, *a, Tensor::full(self.shape(*a), gv))?;
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) -> Result<()> {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

fn softmax_rows(x: &Tensor, log: bool) -> Tensor {
    let m = x.cols();
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(m) {
        let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        for v in row.iter_mut() {
            *v = if log { *v - lse } else { (*v - lse).exp() };
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn matmul_by_identity() {
        let mut t = Tape::new();
        let a = t.leaf(mat(&[vec![1.0, 2.0], vec![3.0, 4.0]])).unwrap();
        let i = t.leaf(Tensor::eye(2)).unwrap();
        let c = t.matmul(a, i).unwrap();
        assert_eq!(t.value(c), t.value(a));
    }

    #[test]
    fn relu_clamps() {
        let mut t = Tape::new();
        let a = t.leaf(mat(&[vec![-1.0, 0.0, 2.0]])).unwrap();
        let r = t.relu(a).unwrap();
        assert_eq!(t.value(r).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let mut t = Tape::new();
        let a = t.leaf(mat(&[vec![0.0, 0.0]])).unwrap();
        let s = t.row_softmax(a).unwrap();
        assert_eq!(t.value(s).data(), &[0.5, 0.5]);
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut t = Tape::new();
        let w = t.leaf(Tensor::from_fn(3, 4, |i, j| (i as f64) - (j as f64))).unwrap();
        let l = t.sum(w).unwrap();
        let g = t.backward(l).unwrap();
        assert_eq!(g.wrt(w), Tensor::ones(&[3, 4]));
    }

    #[test]
    fn dead_relu_has_zero_gradient() {
        let mut t = Tape::new();
        let w = t.leaf(Tensor::full(&[2, 3], -1.0)).unwrap();
        let r = t.relu(w).unwrap();
        let l = t.sum(r).unwrap();
        assert_eq!(t.backward(l).unwrap().wrt(w), Tensor::zeros(&[2, 3]));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut t = Tape::new();
        let w = t.leaf(Tensor::ones(&[2, 2])).unwrap();
        assert!(matches!(t.backward(w), Err(Error::Shape { .. })));
    }

    #[test]
    fn unreachable_leaf_gets_zero() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::ones(&[2, 2])).unwrap();
        let b = t.leaf(Tensor::ones(&[3, 1])).unwrap();
        let l = t.sum(a).unwrap();
        let g = t.backward(l).unwrap();
        assert!(!g.reached(b));
        assert_eq!(g.wrt(b), Tensor::zeros(&[3, 1]));
    }

    #[test]
    fn stop_gradient_blocks() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::ones(&[2, 2])).unwrap();
        let s = t.stop_gradient(a).unwrap();
        let l = t.sum(s).unwrap();
        assert_eq!(t.value(l).data(), &[4.0]);
        assert_eq!(t.backward(l).unwrap().wrt(a), Tensor::zeros(&[2, 2]));
    }

    #[test]
    fn log_of_zero_is_an_error() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::zeros(&[1, 2])).unwrap();
        assert!(matches!(t.log(a), Err(Error::NonFinite(_))));
    }

    #[test]
    fn shape_errors() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::ones(&[2, 3])).unwrap();
        let b = t.leaf(Tensor::ones(&[2, 3])).unwrap();
        assert!(t.matmul(a, b).is_err());
        let c = t.leaf(Tensor::ones(&[2, 2])).unwrap();
        assert!(t.add(a, c).is_err());
        assert!(t.concat(&[a, c], 0).is_err());
        assert!(t.slice(a, 1, 2, 4).is_err());
        assert!(t.reshape(a, &[5]).is_err());
    }

    #[test]
    fn row_bias_broadcast() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::zeros(&[3, 2])).unwrap();
        let b = t.leaf(mat(&[vec![1.0, 2.0]])).unwrap();
        let c = t.add(a, b).unwrap();
        assert_eq!(t.value(c).data(), &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        let l = t.sum(c).unwrap();
        assert_eq!(t.backward(l).unwrap().wrt(b).data(), &[3.0, 3.0]);
    }

    #[test]
    fn concat_slice_round_trip_is_exact() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::from_fn(3, 2, |i, j| 0.1 * i as f64 + j as f64 / 3.0)).unwrap();
        let b = t.leaf(Tensor::from_fn(3, 4, |i, j| (i * j) as f64 / 7.0)).unwrap();
        let c = t.concat(&[a, b], 1).unwrap();
        let back_a = t.slice(c, 1, 0, 2).unwrap();
        let back_b = t.slice(c, 1, 2, 6).unwrap();
        assert_eq!(t.value(back_a), t.value(a));
        assert_eq!(t.value(back_b), t.value(b));
        let r = t.reshape(c, &[3, 3, 2]).unwrap();
        let flat = t.reshape(r, &[3, 6]).unwrap();
        assert_eq!(t.value(flat), t.value(c));
    }
}
