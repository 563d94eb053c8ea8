//! Browser bindings for three small demos on the built-in 62-electrode layout:
//! the proximity graph at a chosen radius, a band-pass filter on a test
//! signal, and the dynamic-graph scalp map of an untrained model.
//!
//! The `*_view` functions are plain Rust and tested natively; the exported
//! wrappers only convert errors to strings.

use std::f64::consts::PI;

use pgcn::datasets::{class_templates, SynthConfig};
use pgcn::eval::ScalpMap;
use pgcn::features::{band_filter_channel, Band, BAND_NAMES, DEFAULT_BANDS};
use pgcn::model::{Pgcn, PgcnConfig};
use pgcn::montage::{build_static_graph, Montage};
use pgcn::Result;
use wasm_bindgen::prelude::*;

pub const DEMO_FS: f64 = 200.0;
pub const DEMO_SECONDS: f64 = 2.0;
/// Components of the test signal: (frequency Hz, amplitude).
pub const DEMO_TONES: [(f64, f64); 5] = [(3.0, 1.0), (6.0, 0.8), (10.0, 0.6), (20.0, 0.4), (40.0, 0.3)];

/// Top-down projection of a unit-sphere point: polar angle from +z becomes
/// the radius, with the equator at 1.
fn project(p: [f64; 3]) -> (f64, f64) {
    let r = p[2].clamp(-1.0, 1.0).acos() / (PI / 2.0);
    let phi = p[1].atan2(p[0]);
    (r * phi.cos(), r * phi.sin())
}

#[wasm_bindgen]
#[derive(Clone, Debug)]
pub struct GraphView {
    xy: Vec<f64>,
    edges: Vec<u32>,
    names: Vec<String>,
    mean_degree: f64,
    isolated: usize,
}

#[wasm_bindgen]
impl GraphView {
    /// Interleaved `x, y` per electrode.
    pub fn xy(&self) -> Vec<f64> {
        self.xy.clone()
    }

    /// Interleaved `i, j` pairs with `i < j`.
    pub fn edges(&self) -> Vec<u32> {
        self.edges.clone()
    }

    pub fn names(&self) -> Vec<String> {
        self.names.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn mean_degree(&self) -> f64 {
        self.mean_degree
    }

    #[wasm_bindgen(getter)]
    pub fn isolated(&self) -> usize {
        self.isolated
    }
}

pub fn graph_view(radius: f64) -> Result<GraphView> {
    let montage = Montage::builtin_62();
    let graph = build_static_graph(&montage, radius)?;
    let a = graph.adjacency();
    let n = montage.len();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if a.get(i, j) != 0.0 {
                edges.extend([i as u32, j as u32]);
            }
        }
    }
    let xy = montage
        .electrodes()
        .iter()
        .flat_map(|e| {
            let (x, y) = project(e.position);
            [x, y]
        })
        .collect();
    Ok(GraphView {
        xy,
        edges,
        names: montage.names(),
        mean_degree: graph.mean_degree(),
        isolated: graph.isolated_nodes().len(),
    })
}

#[wasm_bindgen]
#[derive(Clone, Debug)]
pub struct FilterView {
    raw: Vec<f64>,
    filtered: Vec<f64>,
    kept_energy: f64,
}

#[wasm_bindgen]
impl FilterView {
    pub fn raw(&self) -> Vec<f64> {
        self.raw.clone()
    }

    pub fn filtered(&self) -> Vec<f64> {
        self.filtered.clone()
    }

    /// Fraction of the signal energy inside the band.
    #[wasm_bindgen(getter)]
    pub fn kept_energy(&self) -> f64 {
        self.kept_energy
    }
}

pub fn test_signal() -> Vec<f64> {
    let len = (DEMO_FS * DEMO_SECONDS) as usize;
    (0..len)
        .map(|t| {
            let time = t as f64 / DEMO_FS;
            DEMO_TONES
                .iter()
                .map(|&(f, a)| a * (2.0 * PI * f * time).sin())
                .sum()
        })
        .collect()
}

pub fn filter_view(lo: f64, hi: f64) -> Result<FilterView> {
    let raw = test_signal();
    let filtered = band_filter_channel(&raw, DEMO_FS, Band::new(lo, hi))?;
    let energy = |s: &[f64]| s.iter().map(|v| v * v).sum::<f64>();
    let kept_energy = energy(&filtered) / energy(&raw);
    Ok(FilterView {
        raw,
        filtered,
        kept_energy,
    })
}

/// Dimensions kept small so a forward pass stays interactive.
pub fn demo_config(seed: u64) -> PgcnConfig {
    PgcnConfig {
        order: 3,
        coarse_dynamic_dim: 4,
        coarse_static_dim: 8,
        fine_dynamic_dim: 4,
        fine_static_dim: 8,
        seed,
        ..PgcnConfig::default()
    }
}

/// Scalp map of the fine dynamic graph for the noise-free template of
/// `class` (mped-like scheme), under a randomly initialized model.
/// Returns `values[b][i]` flattened band-major.
pub fn scalp_map_view(seed: u64, class: usize) -> Result<Vec<f64>> {
    let synth = SynthConfig {
        seed,
        ..SynthConfig::default()
    };
    let templates = class_templates(&synth)?;
    let x = templates
        .get(class)
        .ok_or_else(|| pgcn::Error::InvalidArgument(format!("class {class} out of range")))?;
    let model = Pgcn::new(demo_config(seed))?;
    let out = model.forward(x)?;
    let graph = out
        .g_f
        .ok_or_else(|| pgcn::Error::InvalidArgument("model has no dynamic graph".into()))?;
    let names = BAND_NAMES.iter().map(|s| s.to_string()).collect();
    let map = ScalpMap::from_graphs([&graph], Montage::builtin_62().names(), names)?;
    Ok(map.values.concat())
}

fn js_err(e: pgcn::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub fn static_graph(radius: f64) -> std::result::Result<GraphView, JsError> {
    graph_view(radius).map_err(js_err)
}

#[wasm_bindgen]
pub fn band_filter(lo: f64, hi: f64) -> std::result::Result<FilterView, JsError> {
    filter_view(lo, hi).map_err(js_err)
}

#[wasm_bindgen]
pub fn scalp_map(seed: u32, class: usize) -> std::result::Result<Vec<f64>, JsError> {
    scalp_map_view(u64::from(seed), class).map_err(js_err)
}

/// Lower and upper edges of the default bands, interleaved.
#[wasm_bindgen]
pub fn default_bands() -> Vec<f64> {
    DEFAULT_BANDS.iter().flat_map(|b| [b.lo, b.hi]).collect()
}
