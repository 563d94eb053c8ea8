//! The dual-head network.
//!
//! Each head convolves the input over the shared static graph and over its
//! own per-sample dynamic graph (one filter per band), then concatenates
//! `H = [X̃ˢ, X̃ᵈ]`. The coarse head classifies `H_c` directly. The fine
//! head classifies `Ĥ = [H_f, stop_gradient(H_c)]`, so the fine loss never
//! reaches coarse parameters and the coarse loss never reaches fine ones.

use serde::{Deserialize, Serialize};

use crate::chebconv::{cheb_conv, dynamic_conv, ChebFilter};
use crate::error::{Error, Result};
use crate::graphgen::{dynamic_graph, DynamicGraph, GraphGenParams, GraphGenVars};
use crate::montage::{build_static_graph, Montage, StaticGraph, DEFAULT_STATIC_RADIUS};
use crate::numkit::{finite_diff_check, GradCheckReport, Gradients, Tape, Tensor, Var};
use crate::rng::{self, SeededRng};

/// Which branches of the network are present.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    #[default]
    Full,
    /// No coarse head; `Ĥ = H_f`.
    PgcnF,
    /// Dynamic graph convolution only (static branch removed).
    PgcnD,
    /// Static graph convolution only (dynamic branch removed).
    PgcnS,
}

impl Ablation {
    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::PgcnF => "pgcn-f",
            Ablation::PgcnD => "pgcn-d",
            Ablation::PgcnS => "pgcn-s",
        }
    }

    pub fn has_coarse_head(self) -> bool {
        self != Ablation::PgcnF
    }

    pub fn has_static(self) -> bool {
        self != Ablation::PgcnD
    }

    pub fn has_dynamic(self) -> bool {
        self != Ablation::PgcnS
    }
}

impl std::str::FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Ablation::Full),
            "pgcn-f" => Ok(Ablation::PgcnF),
            "pgcn-d" => Ok(Ablation::PgcnD),
            "pgcn-s" => Ok(Ablation::PgcnS),
            other => Err(Error::invalid(format!("unknown ablation {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PgcnConfig {
    pub channels: usize,
    pub bands: usize,
    /// Number of graph powers `K`.
    pub order: usize,
    pub coarse_dynamic_dim: usize,
    pub coarse_static_dim: usize,
    pub fine_dynamic_dim: usize,
    pub fine_static_dim: usize,
    pub coarse_classes: usize,
    pub fine_classes: usize,
    pub static_radius: f64,
    pub ablation: Ablation,
    pub seed: u64,
}

impl Default for PgcnConfig {
    fn default() -> Self {
        Self {
            channels: 62,
            bands: 5,
            order: 5,
            coarse_dynamic_dim: 512,
            coarse_static_dim: 256,
            fine_dynamic_dim: 512,
            fine_static_dim: 256,
            coarse_classes: 3,
            fine_classes: 7,
            static_radius: DEFAULT_STATIC_RADIUS,
            ablation: Ablation::Full,
            seed: 0,
        }
    }
}

impl PgcnConfig {
    /// Small configuration used for gradient checks: n=8, d=3, K=3, widths 4/6, 3→5 classes.
    pub fn toy() -> Self {
        Self {
            channels: 8,
            bands: 3,
            order: 3,
            coarse_dynamic_dim: 4,
            coarse_static_dim: 6,
            fine_dynamic_dim: 4,
            fine_static_dim: 6,
            coarse_classes: 3,
            fine_classes: 5,
            static_radius: 1.0,
            ablation: Ablation::Full,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("channels", self.channels),
            ("bands", self.bands),
            ("order", self.order),
            ("coarse classes", self.coarse_classes),
            ("fine classes", self.fine_classes),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be at least 1")));
            }
        }
        let a = self.ablation;
        let mut widths = Vec::new();
        if a.has_dynamic() {
            widths.push(("fine dynamic dim", self.fine_dynamic_dim));
        }
        if a.has_static() {
            widths.push(("fine static dim", self.fine_static_dim));
        }
        if a.has_coarse_head() {
            if a.has_dynamic() {
                widths.push(("coarse dynamic dim", self.coarse_dynamic_dim));
            }
            if a.has_static() {
                widths.push(("coarse static dim", self.coarse_static_dim));
            }
            if self.coarse_classes >= self.fine_classes {
                return Err(Error::invalid(format!(
                    "coarse classes ({}) must be fewer than fine classes ({})",
                    self.coarse_classes, self.fine_classes
                )));
            }
        }
        for (name, v) in widths {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be at least 1")));
            }
        }
        if !(self.static_radius > 0.0) {
            return Err(Error::invalid("static radius must be > 0"));
        }
        Ok(())
    }

    fn head_width(&self, dynamic_dim: usize, static_dim: usize) -> usize {
        let a = self.ablation;
        let dynamic = if a.has_dynamic() { dynamic_dim * self.bands } else { 0 };
        let stat = if a.has_static() { static_dim } else { 0 };
        dynamic + stat
    }

    /// Columns of `H_c`.
    pub fn coarse_width(&self) -> usize {
        if self.ablation.has_coarse_head() {
            self.head_width(self.coarse_dynamic_dim, self.coarse_static_dim)
        } else {
            0
        }
    }

    /// Columns of `H_f`.
    pub fn fine_width(&self) -> usize {
        self.head_width(self.fine_dynamic_dim, self.fine_static_dim)
    }

    /// Columns of `Ĥ = [H_f, H_c]`.
    pub fn joint_width(&self) -> usize {
        self.fine_width() + self.coarse_width()
    }
}

/// Trainable tensors of one head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadParams {
    pub graph: Option<GraphGenParams>,
    /// One filter per band.
    pub dynamic: Vec<ChebFilter>,
    pub static_filter: Option<ChebFilter>,
    pub fc_w: Tensor,
    pub fc_b: Tensor,
}

impl HeadParams {
    fn init(
        rng: &mut SeededRng,
        cfg: &PgcnConfig,
        dynamic_dim: usize,
        static_dim: usize,
        fc_in: usize,
        classes: usize,
    ) -> Self {
        let (n, d, k) = (cfg.channels, cfg.bands, cfg.order);
        let filter = |rng: &mut SeededRng, out: usize| {
            let bound = 1.0 / ((k * d) as f64).sqrt();
            ChebFilter {
                weights: (0..k)
                    .map(|_| rng::uniform_tensor(rng, &[d, out], bound))
                    .collect(),
            }
        };
        let (graph, dynamic) = if cfg.ablation.has_dynamic() {
            let mut p = rng::uniform_tensor(rng, &[n, n], 0.01);
            for i in 0..n {
                p.set(i, i, p.get(i, i) + 1.0);
            }
            let q = rng::uniform_tensor(rng, &[d, n * d], 1.0 / ((n * d) as f64).sqrt());
            let gen = GraphGenParams {
                p,
                b: Tensor::zeros(&[n, d]),
                q,
            };
            let filters = (0..d).map(|_| filter(rng, dynamic_dim)).collect();
            (Some(gen), filters)
        } else {
            (None, Vec::new())
        };
        let static_filter = cfg.ablation.has_static().then(|| filter(rng, static_dim));
        let fc_w = rng::uniform_tensor(rng, &[n * fc_in, classes], 1.0 / ((n * fc_in) as f64).sqrt());
        Self {
            graph,
            dynamic,
            static_filter,
            fc_w,
            fc_b: Tensor::zeros(&[1, classes]),
        }
    }

    /// All tensors in a fixed order: P, B, Q, dynamic filters, static filter, W, b.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        if let Some(g) = &self.graph {
            out.extend([&g.p, &g.b, &g.q]);
        }
        for f in &self.dynamic {
            out.extend(f.weights.iter());
        }
        if let Some(f) = &self.static_filter {
            out.extend(f.weights.iter());
        }
        out.extend([&self.fc_w, &self.fc_b]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        if let Some(g) = &mut self.graph {
            out.extend([&mut g.p, &mut g.b, &mut g.q]);
        }
        for f in &mut self.dynamic {
            out.extend(f.weights.iter_mut());
        }
        if let Some(f) = &mut self.static_filter {
            out.extend(f.weights.iter_mut());
        }
        out.extend([&mut self.fc_w, &mut self.fc_b]);
        out
    }

    pub fn tensor_names(&self, head: &str) -> Vec<String> {
        let mut out = Vec::new();
        if self.graph.is_some() {
            out.extend(["P", "B", "Q"].map(|s| format!("{head}.graph.{s}")));
        }
        for (b, f) in self.dynamic.iter().enumerate() {
            out.extend((0..f.order()).map(|k| format!("{head}.dynamic{b}.W{k}")));
        }
        if let Some(f) = &self.static_filter {
            out.extend((0..f.order()).map(|k| format!("{head}.static.W{k}")));
        }
        out.extend([format!("{head}.fc.W"), format!("{head}.fc.b")]);
        out
    }
}

/// All trainable tensors of the model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PgcnParams {
    pub coarse: Option<HeadParams>,
    pub fine: HeadParams,
}

impl PgcnParams {
    /// Deterministic initialization. Weights are `U(±1/√fan_in)`, biases and
    /// `B` zero, `P` the identity plus `U(±0.01)` noise.
    pub fn init(cfg: &PgcnConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = rng::stream(seed, 1);
        let coarse = cfg.ablation.has_coarse_head().then(|| {
            HeadParams::init(
                &mut rng,
                cfg,
                cfg.coarse_dynamic_dim,
                cfg.coarse_static_dim,
                cfg.coarse_width(),
                cfg.coarse_classes,
            )
        });
        let fine = HeadParams::init(
            &mut rng,
            cfg,
            cfg.fine_dynamic_dim,
            cfg.fine_static_dim,
            cfg.joint_width(),
            cfg.fine_classes,
        );
        Ok(Self { coarse, fine })
    }

    pub fn coarse_tensors(&self) -> Vec<&Tensor> {
        self.coarse.as_ref().map(HeadParams::tensors).unwrap_or_default()
    }

    pub fn coarse_tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.coarse.as_mut().map(HeadParams::tensors_mut).unwrap_or_default()
    }

    pub fn fine_tensors(&self) -> Vec<&Tensor> {
        self.fine.tensors()
    }

    pub fn fine_tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.fine.tensors_mut()
    }

    /// Fine tensors followed by coarse tensors.
    pub fn all_tensors(&self) -> Vec<&Tensor> {
        let mut v = self.fine_tensors();
        v.extend(self.coarse_tensors());
        v
    }

    pub fn all_tensor_names(&self) -> Vec<String> {
        let mut v = self.fine.tensor_names("fine");
        if let Some(c) = &self.coarse {
            v.extend(c.tensor_names("coarse"));
        }
        v
    }

    pub fn all_tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let Self { coarse, fine } = self;
        let mut v = fine.tensors_mut();
        if let Some(c) = coarse {
            v.extend(c.tensors_mut());
        }
        v
    }

    pub fn all_finite(&self) -> bool {
        self.all_tensors().iter().all(|t| t.all_finite())
    }

    pub fn num_parameters(&self) -> usize {
        self.all_tensors().iter().map(|t| t.numel()).sum()
    }
}

/// Per-band standardization of inputs, `(x − mean_b) / std_b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputNorm {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl InputNorm {
    /// Statistics over every channel of every matrix, per band column.
    pub fn fit<'a>(inputs: impl IntoIterator<Item = &'a Tensor>) -> Result<Self> {
        let mut sum: Vec<f64> = Vec::new();
        let mut sq: Vec<f64> = Vec::new();
        let mut count = 0usize;
        for x in inputs {
            let d = x.cols();
            if sum.is_empty() {
                sum = vec![0.0; d];
                sq = vec![0.0; d];
            }
            if d != sum.len() {
                return Err(Error::shape("input norm", "inconsistent band count"));
            }
            for i in 0..x.rows() {
                for (b, v) in x.row(i).iter().enumerate() {
                    sum[b] += v;
                    sq[b] += v * v;
                }
            }
            count += x.rows();
        }
        if count == 0 {
            return Err(Error::invalid("cannot fit input normalization on no data"));
        }
        let c = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / c).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let var = (q / c - m * m).max(0.0);
                if var > 1e-24 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, x: &Tensor) -> Tensor {
        let d = x.cols();
        let mut out = x.clone();
        for (k, v) in out.data_mut().iter_mut().enumerate() {
            let b = k % d;
            *v = (*v - self.mean[b]) / self.std[b];
        }
        out
    }
}

#[derive(Debug)]
struct HeadVars {
    graph: Option<GraphGenVars>,
    dynamic: Vec<Vec<Var>>,
    static_filter: Option<Vec<Var>>,
    fc_w: Var,
    fc_b: Var,
}

impl HeadVars {
    fn record(tape: &mut Tape, head: &HeadParams) -> Result<Self> {
        let graph = head
            .graph
            .as_ref()
            .map(|g| GraphGenVars::record(tape, g))
            .transpose()?;
        let dynamic = head
            .dynamic
            .iter()
            .map(|f| f.record(tape))
            .collect::<Result<_>>()?;
        let static_filter = head.static_filter.as_ref().map(|f| f.record(tape)).transpose()?;
        Ok(Self {
            graph,
            dynamic,
            static_filter,
            fc_w: tape.leaf(head.fc_w.clone())?,
            fc_b: tape.leaf(head.fc_b.clone())?,
        })
    }

    /// Same order as [`HeadParams::tensors`].
    fn all(&self) -> Vec<Var> {
        let mut out = Vec::new();
        if let Some(g) = &self.graph {
            out.extend([g.p, g.b, g.q]);
        }
        for f in &self.dynamic {
            out.extend(f.iter().copied());
        }
        if let Some(f) = &self.static_filter {
            out.extend(f.iter().copied());
        }
        out.extend([self.fc_w, self.fc_b]);
        out
    }

    /// Returns `H = [X̃ˢ, X̃ᵈ]` and the dynamic graph node.
    fn features(&self, tape: &mut Tape, x: Var, static_graph: Var) -> Result<(Var, Option<Var>)> {
        let mut parts = Vec::new();
        if let Some(w) = &self.static_filter {
            parts.push(cheb_conv(tape, static_graph, x, w)?);
        }
        let mut graph = None;
        if let Some(gen) = &self.graph {
            let g = dynamic_graph(tape, x, gen)?;
            parts.push(dynamic_conv(tape, g, x, &self.dynamic)?);
            graph = Some(g);
        }
        let h = if parts.len() == 1 {
            parts[0]
        } else {
            tape.concat(&parts, 1)?
        };
        Ok((h, graph))
    }

    /// Row-major flatten then `h·W + b`.
    fn logits(&self, tape: &mut Tape, h: Var) -> Result<Var> {
        let numel = tape.value(h).numel();
        let flat = tape.reshape(h, &[1, numel])?;
        let o = tape.matmul(flat, self.fc_w)?;
        tape.add(o, self.fc_b)
    }
}

/// Tape nodes of one forward pass.
#[derive(Debug)]
pub struct ForwardVars {
    pub h_c: Option<Var>,
    pub h_f: Var,
    pub h_hat: Var,
    pub o_c: Option<Var>,
    pub o: Var,
    pub log_y_c: Option<Var>,
    pub log_y: Var,
    pub g_f: Option<Var>,
    pub g_c: Option<Var>,
    pub fine_params: Vec<Var>,
    pub coarse_params: Vec<Var>,
}

/// Materialized forward pass of one sample.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub h_c: Option<Tensor>,
    pub h_f: Tensor,
    pub h_hat: Tensor,
    pub o_c: Option<Tensor>,
    pub o: Tensor,
    pub y_c: Option<Tensor>,
    pub y: Tensor,
    pub g_f: Option<DynamicGraph>,
}

/// Argmax with ties going to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// `(coarse label, fine label)`; the coarse label is absent without a coarse head.
pub fn predict(out: &ForwardOutput) -> (Option<usize>, usize) {
    (out.y_c.as_ref().map(|y| argmax(y.data())), argmax(out.y.data()))
}

/// Per-sample losses `(L_c, L)` and the parameter gradients of one backward pass.
#[derive(Debug)]
pub struct SampleGradients {
    pub coarse_loss: Option<f64>,
    pub fine_loss: f64,
    /// `∂L/∂θ_fine`, ordered as [`PgcnParams::fine_tensors`].
    pub fine: Vec<Tensor>,
    /// `∂L_c/∂θ_coarse`, ordered as [`PgcnParams::coarse_tensors`].
    pub coarse: Vec<Tensor>,
    pub fine_prediction: usize,
}

/// Model parameters together with the fixed pieces needed to run them.
#[derive(Clone, Debug)]
pub struct Pgcn {
    pub config: PgcnConfig,
    pub params: PgcnParams,
    pub static_graph: StaticGraph,
    pub input_norm: Option<InputNorm>,
}

impl Pgcn {
    /// Fresh model on the default layout for `config.channels`.
    pub fn new(config: PgcnConfig) -> Result<Self> {
        let params = PgcnParams::init(&config, config.seed)?;
        let montage = Montage::for_channels(config.channels);
        let static_graph = build_static_graph(&montage, config.static_radius)?;
        Self::from_parts(config, params, static_graph, None)
    }

    pub fn from_parts(
        config: PgcnConfig,
        params: PgcnParams,
        static_graph: StaticGraph,
        input_norm: Option<InputNorm>,
    ) -> Result<Self> {
        config.validate()?;
        if static_graph.len() != config.channels {
            return Err(Error::shape(
                "static graph",
                format!("{} nodes for {} channels", static_graph.len(), config.channels),
            ));
        }
        let expect = PgcnParams::init(&config, 0)?;
        let shapes = |p: &PgcnParams| -> Vec<Vec<usize>> {
            p.all_tensors().iter().map(|t| t.shape().to_vec()).collect()
        };
        if shapes(&expect) != shapes(&params) {
            return Err(Error::shape("parameters", "tensor shapes do not match the configuration"));
        }
        Ok(Self {
            config,
            params,
            static_graph,
            input_norm,
        })
    }

    /// Records the forward pass of one `n × d` input on `tape`.
    pub fn forward_on_tape(&self, tape: &mut Tape, x: &Tensor) -> Result<ForwardVars> {
        let cfg = &self.config;
        if x.shape() != [cfg.channels, cfg.bands] {
            return Err(Error::shape(
                "forward",
                format!("input {:?}, model expects [{}, {}]", x.shape(), cfg.channels, cfg.bands),
            ));
        }
        let x = match &self.input_norm {
            Some(norm) => norm.apply(x),
            None => x.clone(),
        };
        let xv = tape.leaf(x)?;
        let gs = tape.leaf(self.static_graph.adjacency().clone())?;

        let fine = HeadVars::record(tape, &self.params.fine)?;
        let coarse = self
            .params
            .coarse
            .as_ref()
            .map(|c| HeadVars::record(tape, c))
            .transpose()?;

        let (h_f, g_f) = fine.features(tape, xv, gs)?;
        let (h_c, g_c, o_c, log_y_c, h_hat) = match &coarse {
            Some(c) => {
                let (h_c, g_c) = c.features(tape, xv, gs)?;
                let o_c = c.logits(tape, h_c)?;
                let log_y_c = tape.log_row_softmax(o_c)?;
                let detached = tape.stop_gradient(h_c)?;
                let h_hat = tape.concat(&[h_f, detached], 1)?;
                (Some(h_c), g_c, Some(o_c), Some(log_y_c), h_hat)
            }
            None => (None, None, None, None, h_f),
        };
        let o = fine.logits(tape, h_hat)?;
        let log_y = tape.log_row_softmax(o)?;
        Ok(ForwardVars {
            h_c,
            h_f,
            h_hat,
            o_c,
            o,
            log_y_c,
            log_y,
            g_f,
            g_c,
            fine_params: fine.all(),
            coarse_params: coarse.as_ref().map(HeadVars::all).unwrap_or_default(),
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<ForwardOutput> {
        let mut tape = Tape::new();
        let v = self.forward_on_tape(&mut tape, x)?;
        let val = |var: Var| tape.value(var).clone();
        let probs = |var: Var| tape.value(var).map(f64::exp);
        Ok(ForwardOutput {
            h_c: v.h_c.map(val),
            h_f: val(v.h_f),
            h_hat: val(v.h_hat),
            o_c: v.o_c.map(val),
            o: val(v.o),
            y_c: v.log_y_c.map(probs),
            y: probs(v.log_y),
            g_f: v
                .g_f
                .map(|g| DynamicGraph::from_tensor(val(g)))
                .transpose()?,
        })
    }

    pub fn predict(&self, x: &Tensor) -> Result<(Option<usize>, usize)> {
        Ok(predict(&self.forward(x)?))
    }

    fn check_labels(&self, coarse: usize, fine: usize) -> Result<()> {
        if fine >= self.config.fine_classes {
            return Err(Error::Label {
                label: fine,
                context: format!("{} fine classes", self.config.fine_classes),
            });
        }
        if self.params.coarse.is_some() && coarse >= self.config.coarse_classes {
            return Err(Error::Label {
                label: coarse,
                context: format!("{} coarse classes", self.config.coarse_classes),
            });
        }
        Ok(())
    }

    /// Records `(L_c, L)` for one labelled sample; `L_c` is absent without a coarse head.
    pub fn losses_on_tape(
        &self,
        tape: &mut Tape,
        fwd: &ForwardVars,
        coarse_label: usize,
        fine_label: usize,
    ) -> Result<(Option<Var>, Var)> {
        self.check_labels(coarse_label, fine_label)?;
        let nll = |tape: &mut Tape, log_y: Var, label: usize| -> Result<Var> {
            let picked = tape.element(log_y, label)?;
            tape.scale(picked, -1.0)
        };
        let l_c = fwd
            .log_y_c
            .map(|ly| nll(tape, ly, coarse_label))
            .transpose()?;
        let l = nll(tape, fwd.log_y, fine_label)?;
        Ok((l_c, l))
    }

    /// One forward and one backward pass over `L + L_c`. Because the fine
    /// head sees `H_c` only through a stop-gradient, this single sweep yields
    /// `∂L/∂θ_fine` and `∂L_c/∂θ_coarse` exactly.
    pub fn sample_gradients(
        &self,
        x: &Tensor,
        coarse_label: usize,
        fine_label: usize,
    ) -> Result<SampleGradients> {
        self.sample_gradients_with(&mut Tape::new(), x, coarse_label, fine_label)
    }

    #[doc(hidden)]
    pub fn sample_gradients_with(
        &self,
        tape: &mut Tape,
        x: &Tensor,
        coarse_label: usize,
        fine_label: usize,
    ) -> Result<SampleGradients> {
        let fwd = self.forward_on_tape(tape, x)?;
        let (l_c, l) = self.losses_on_tape(tape, &fwd, coarse_label, fine_label)?;
        let total = match l_c {
            Some(lc) => tape.add(l, lc)?,
            None => l,
        };
        let grads = tape.backward(total)?;
        let collect = |vars: &[Var], g: &Gradients| vars.iter().map(|&v| g.wrt(v)).collect();
        Ok(SampleGradients {
            coarse_loss: l_c.map(|v| tape.value(v).data()[0]),
            fine_loss: tape.value(l).data()[0],
            fine: collect(&fwd.fine_params, &grads),
            coarse: collect(&fwd.coarse_params, &grads),
            fine_prediction: argmax(tape.value(fwd.log_y).data()),
        })
    }
}

/// Summed cross-entropy of a batch: `Σ_t −log Y_c[l_g]` and `Σ_t −log Y[l̂_g]`.
pub fn batch_losses(
    model: &Pgcn,
    samples: &[(&Tensor, usize, usize)],
) -> Result<(Option<f64>, f64)> {
    let mut coarse: Option<f64> = None;
    let mut fine = 0.0;
    for &(x, c, f) in samples {
        let out = model.forward(x)?;
        model.check_labels(c, f)?;
        if let Some(y_c) = &out.y_c {
            *coarse.get_or_insert(0.0) -= y_c.data()[c].ln();
        }
        fine -= out.y.data()[f].ln();
    }
    Ok((coarse, fine))
}

/// Analytic gradients of both heads against central differences.
#[derive(Clone, Debug)]
pub struct ModelGradCheck {
    /// `∂L/∂θ_fine`.
    pub fine: GradCheckReport,
    /// `∂L_c/∂θ_coarse`.
    pub coarse: Option<GradCheckReport>,
}

impl ModelGradCheck {
    pub fn max_rel_error(&self) -> f64 {
        let c = self.coarse.as_ref().map_or(0.0, |r| r.max_rel_error);
        self.fine.max_rel_error.max(c)
    }

    pub fn coordinates(&self) -> usize {
        self.fine.coordinates + self.coarse.as_ref().map_or(0, |r| r.coordinates)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error() < tol
    }
}

/// Checks every parameter of `model` on one labelled input. With
/// `corrupt_vjp` the analytic pass uses a deliberately wrong matmul VJP.
pub fn gradient_check(
    model: &Pgcn,
    x: &Tensor,
    coarse_label: usize,
    fine_label: usize,
    eps: f64,
    corrupt_vjp: bool,
) -> Result<ModelGradCheck> {
    let mut tape = Tape::new();
    tape.corrupt_matmul_vjp(corrupt_vjp);
    let g = model.sample_gradients_with(&mut tape, x, coarse_label, fine_label)?;
    let sample = [(x, coarse_label, fine_label)];

    let fine_params: Vec<Tensor> = model.params.fine_tensors().into_iter().cloned().collect();
    let fine = finite_diff_check(
        |p| {
            let mut probe = model.clone();
            for (dst, src) in probe.params.fine_tensors_mut().into_iter().zip(p) {
                *dst = src.clone();
            }
            Ok(batch_losses(&probe, &sample)?.1)
        },
        &fine_params,
        &g.fine,
        eps,
    )?;
    let coarse = if model.params.coarse.is_some() {
        let coarse_params: Vec<Tensor> = model.params.coarse_tensors().into_iter().cloned().collect();
        Some(finite_diff_check(
            |p| {
                let mut probe = model.clone();
                for (dst, src) in probe.params.coarse_tensors_mut().into_iter().zip(p) {
                    *dst = src.clone();
                }
                batch_losses(&probe, &sample)?
                    .0
                    .ok_or_else(|| Error::invalid("coarse head produced no loss"))
            },
            &coarse_params,
            &g.coarse,
            eps,
        )?)
    } else {
        None
    };
    Ok(ModelGradCheck { fine, coarse })
}
