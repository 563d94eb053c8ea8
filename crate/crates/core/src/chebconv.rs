//! Multi-order graph convolution `Σ_k G^k · X · W_k`.
//!
//! Powers of the raw adjacency are used (no Laplacian rescaling). Each
//! order carries its own `d_in × k_out` weight. The sum is evaluated by
//! the recurrence `Z_0 = X`, `Z_k = G·Z_{k−1}` so no explicit power of `G`
//! is ever formed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphgen::band_slice;
use crate::numkit::{Tape, Tensor, Var};

/// Order-`K` filter: one `d_in × k_out` weight per power `0..K`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChebFilter {
    pub weights: Vec<Tensor>,
}

impl ChebFilter {
    pub fn new(weights: Vec<Tensor>) -> Result<Self> {
        let first = weights
            .first()
            .ok_or_else(|| Error::invalid("filter order must be at least 1"))?;
        if !first.is_matrix() || weights.iter().any(|w| w.shape() != first.shape()) {
            return Err(Error::shape("cheb filter", "weights must share one matrix shape"));
        }
        Ok(Self { weights })
    }

    pub fn zeros(order: usize, d_in: usize, k_out: usize) -> Self {
        Self {
            weights: vec![Tensor::zeros(&[d_in, k_out]); order],
        }
    }

    pub fn order(&self) -> usize {
        self.weights.len()
    }

    pub fn in_dim(&self) -> usize {
        self.weights[0].rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weights[0].cols()
    }

    pub fn record(&self, tape: &mut Tape) -> Result<Vec<Var>> {
        self.weights.iter().map(|w| tape.leaf(w.clone())).collect()
    }
}

/// `[G⁰, G¹, …, G^{K−1}]`.
pub fn graph_powers(g: &Tensor, order: usize) -> Result<Vec<Tensor>> {
    if !g.is_matrix() || g.rows() != g.cols() {
        return Err(Error::shape("graph_powers", format!("{:?} is not square", g.shape())));
    }
    let mut powers = Vec::with_capacity(order);
    if order == 0 {
        return Ok(powers);
    }
    powers.push(Tensor::eye(g.rows()));
    for k in 1..order {
        let next = g.matmul(&powers[k - 1])?;
        powers.push(next);
    }
    Ok(powers)
}

/// Differentiable `Σ_k G^k X W_k` over graph, input and weights.
pub fn cheb_conv(tape: &mut Tape, g: Var, x: Var, weights: &[Var]) -> Result<Var> {
    let (gs, xs) = (tape.shape(g).to_vec(), tape.shape(x).to_vec());
    if gs.len() != 2 || gs[0] != gs[1] || xs.len() != 2 || xs[0] != gs[0] {
        return Err(Error::shape("cheb_conv", format!("graph {gs:?}, input {xs:?}")));
    }
    let Some((&w0, rest)) = weights.split_first() else {
        return Err(Error::invalid("filter order must be at least 1"));
    };
    let mut z = x;
    let mut out = tape.matmul(z, w0)?;
    for &w in rest {
        z = tape.matmul(g, z)?;
        let term = tape.matmul(z, w)?;
        out = tape.add(out, term)?;
    }
    Ok(out)
}

/// Per-band convolution over an `n × n × d` graph, concatenated band by band.
pub fn dynamic_conv(tape: &mut Tape, graph: Var, x: Var, filters: &[Vec<Var>]) -> Result<Var> {
    let shape = tape.shape(graph).to_vec();
    if shape.len() != 3 || shape[2] != filters.len() {
        return Err(Error::shape(
            "dynamic_conv",
            format!("graph {shape:?} with {} filters", filters.len()),
        ));
    }
    let mut outs = Vec::with_capacity(filters.len());
    for (b, filter) in filters.iter().enumerate() {
        let gb = band_slice(tape, graph, b)?;
        outs.push(cheb_conv(tape, gb, x, filter)?);
    }
    tape.concat(&outs, 1)
}

/// Forward-only [`cheb_conv`].
pub fn cheb_conv_value(g: &Tensor, x: &Tensor, filter: &ChebFilter) -> Result<Tensor> {
    let mut tape = Tape::new();
    let gv = tape.leaf(g.clone())?;
    let xv = tape.leaf(x.clone())?;
    let w = filter.record(&mut tape)?;
    let out = cheb_conv(&mut tape, gv, xv, &w)?;
    Ok(tape.value(out).clone())
}
