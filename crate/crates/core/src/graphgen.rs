//! Instance-adaptive graphs: `relu((P·X + B)·Q)` reshaped to `n × n × d`.
//!
//! The `n × (n·d)` product is reshaped row-major, so entry `(i, j, b)` of
//! the graph is column `j·d + b` of row `i`. No normalization is applied;
//! the ReLU keeps every edge weight nonnegative and the graph is in
//! general directed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphGenParams {
    /// `n × n` channel mixing.
    pub p: Tensor,
    /// `n × d` bias.
    pub b: Tensor,
    /// `d × (n·d)` band expansion.
    pub q: Tensor,
}

impl GraphGenParams {
    pub fn zeros(n: usize, d: usize) -> Self {
        Self {
            p: Tensor::zeros(&[n, n]),
            b: Tensor::zeros(&[n, d]),
            q: Tensor::zeros(&[d, n * d]),
        }
    }

    pub fn channels(&self) -> usize {
        self.p.rows()
    }

    pub fn bands(&self) -> usize {
        self.b.cols()
    }

    pub fn validate(&self) -> Result<()> {
        let (n, d) = (self.p.rows(), self.b.cols());
        let ok = self.p.shape() == [n, n] && self.b.shape() == [n, d] && self.q.shape() == [d, n * d];
        if !ok {
            return Err(Error::shape(
                "graph generator",
                format!(
                    "P {:?}, B {:?}, Q {:?}",
                    self.p.shape(),
                    self.b.shape(),
                    self.q.shape()
                ),
            ));
        }
        Ok(())
    }
}

/// Graph-generator parameters recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct GraphGenVars {
    pub p: Var,
    pub b: Var,
    pub q: Var,
}

impl GraphGenVars {
    pub fn record(tape: &mut Tape, params: &GraphGenParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            p: tape.leaf(params.p.clone())?,
            b: tape.leaf(params.b.clone())?,
            q: tape.leaf(params.q.clone())?,
        })
    }
}

/// Differentiable dynamic graph; returns an `n × n × d` node.
pub fn dynamic_graph(tape: &mut Tape, x: Var, gen: &GraphGenVars) -> Result<Var> {
    let (n, d) = (tape.shape(gen.b)[0], tape.shape(gen.b)[1]);
    if tape.shape(x) != [n, d] {
        return Err(Error::shape(
            "dynamic_graph",
            format!("input {:?} does not match generator [{n}, {d}]", tape.shape(x)),
        ));
    }
    let px = tape.matmul(gen.p, x)?;
    let shifted = tape.add(px, gen.b)?;
    let mixed = tape.matmul(shifted, gen.q)?;
    let g = tape.relu(mixed)?;
    tape.reshape(g, &[n, n, d])
}

/// Band `b` of an `n × n × d` graph node, as an `n × n` node.
pub fn band_slice(tape: &mut Tape, graph: Var, b: usize) -> Result<Var> {
    let shape = tape.shape(graph).to_vec();
    if shape.len() != 3 {
        return Err(Error::shape("band_slice", format!("{shape:?}")));
    }
    let s = tape.slice(graph, 2, b, b + 1)?;
    tape.reshape(s, &[shape[0], shape[1]])
}

/// Materialized `n × n × d` graph.
#[derive(Clone, Debug, PartialEq)]
pub struct DynamicGraph {
    tensor: Tensor,
}

impl DynamicGraph {
    pub fn from_tensor(tensor: Tensor) -> Result<Self> {
        let s = tensor.shape();
        if s.len() != 3 || s[0] != s[1] {
            return Err(Error::shape("dynamic graph", format!("{s:?}")));
        }
        Ok(Self { tensor })
    }

    pub fn tensor(&self) -> &Tensor {
        &self.tensor
    }

    pub fn channels(&self) -> usize {
        self.tensor.shape()[0]
    }

    pub fn bands(&self) -> usize {
        self.tensor.shape()[2]
    }

    pub fn get(&self, i: usize, j: usize, b: usize) -> f64 {
        let (n, d) = (self.channels(), self.bands());
        self.tensor.data()[(i * n + j) * d + b]
    }

    pub fn band(&self, b: usize) -> Tensor {
        let n = self.channels();
        Tensor::from_fn(n, n, |i, j| self.get(i, j, b))
    }

    pub fn min_entry(&self) -> f64 {
        self.tensor.data().iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Forward-only evaluation.
pub fn compute_dynamic_graph(x: &Tensor, params: &GraphGenParams) -> Result<DynamicGraph> {
    let mut tape = Tape::new();
    let gen = GraphGenVars::record(&mut tape, params)?;
    let xv = tape.leaf(x.clone())?;
    let g = dynamic_graph(&mut tape, xv, &gen)?;
    DynamicGraph::from_tensor(tape.value(g).clone())
}
