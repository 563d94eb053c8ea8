//! Electrode layouts and the spatial-proximity graph.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::Tensor;

const NORM_TOLERANCE: f64 = 1e-6;

/// Geodesic radius (radians on the unit sphere) used for the built-in layout.
/// Gives a mean of about six neighbours per electrode.
pub const DEFAULT_STATIC_RADIUS: f64 = 0.55;

/// Radius for the layout [`Montage::for_channels`] picks: the built-in value,
/// widened on sparse rings so each electrode reaches its two neighbours.
pub fn default_radius(n: usize) -> f64 {
    if n == 62 || n < 2 {
        DEFAULT_STATIC_RADIUS
    } else {
        DEFAULT_STATIC_RADIUS.max(1.1 * 2.0 * PI / n as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Electrode {
    pub name: String,
    pub position: [f64; 3],
}

/// Ordered electrodes; the order is the row order of every feature matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Montage {
    electrodes: Vec<Electrode>,
}

impl Montage {
    pub fn new(electrodes: Vec<Electrode>) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &electrodes {
            if !seen.insert(e.name.as_str()) {
                return Err(Error::invalid(format!("duplicate electrode name {:?}", e.name)));
            }
            let norm = e.position.iter().map(|v| v * v).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > NORM_TOLERANCE {
                return Err(Error::invalid(format!(
                    "electrode {:?} is not on the unit sphere (|p| = {norm})",
                    e.name
                )));
            }
        }
        Ok(Self { electrodes })
    }

    /// Parses `name,x,y,z` lines; `#` starts a comment, a `name,...` header is skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut electrodes = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 4 {
                return Err(Error::Format(format!(
                    "montage line {}: expected name,x,y,z",
                    lineno + 1
                )));
            }
            if electrodes.is_empty() && fields[0].eq_ignore_ascii_case("name") {
                continue;
            }
            let mut position = [0.0; 3];
            for (slot, field) in position.iter_mut().zip(&fields[1..]) {
                *slot = field.parse().map_err(|_| {
                    Error::Format(format!("montage line {}: bad number {field:?}", lineno + 1))
                })?;
            }
            electrodes.push(Electrode {
                name: fields[0].to_string(),
                position,
            });
        }
        Self::new(electrodes)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("# name,x,y,z\n");
        for e in &self.electrodes {
            let [x, y, z] = e.position;
            out.push_str(&format!("{},{x},{y},{z}\n", e.name));
        }
        out
    }

    /// `k` electrodes evenly spaced on the equator.
    pub fn ring(k: usize) -> Self {
        let electrodes = (0..k)
            .map(|i| {
                let a = 2.0 * PI * i as f64 / k as f64;
                Electrode {
                    name: format!("R{i}"),
                    position: [a.cos(), a.sin(), 0.0],
                }
            })
            .collect();
        Self { electrodes }
    }

    /// 62-channel extended 10–20 layout (x right, y nasion, z vertex).
    pub fn builtin_62() -> Self {
        let electrodes = LAYOUT_62
            .iter()
            .map(|&(name, spot)| Electrode {
                name: name.to_string(),
                position: spot.position(),
            })
            .collect();
        Self { electrodes }
    }

    /// Built-in layout for 62 channels, otherwise a ring.
    pub fn for_channels(n: usize) -> Self {
        if n == 62 {
            Self::builtin_62()
        } else {
            Self::ring(n)
        }
    }

    pub fn len(&self) -> usize {
        self.electrodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.electrodes.is_empty()
    }

    pub fn electrodes(&self) -> &[Electrode] {
        &self.electrodes
    }

    pub fn names(&self) -> Vec<String> {
        self.electrodes.iter().map(|e| e.name.clone()).collect()
    }

    pub fn geodesic(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (self.electrodes[i].position, self.electrodes[j].position);
        let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        dot.clamp(-1.0, 1.0).acos()
    }

    /// Applies a 3×3 rotation (row-major) to every position.
    pub fn rotated(&self, r: &[[f64; 3]; 3]) -> Self {
        let electrodes = self
            .electrodes
            .iter()
            .map(|e| {
                let p = e.position;
                let mut q = [0.0; 3];
                for (i, qi) in q.iter_mut().enumerate() {
                    *qi = (0..3).map(|j| r[i][j] * p[j]).sum();
                }
                Electrode {
                    name: e.name.clone(),
                    position: q,
                }
            })
            .collect();
        Self { electrodes }
    }
}

/// Binary symmetric adjacency with self-loops.
#[derive(Clone, Debug, PartialEq)]
pub struct StaticGraph {
    adjacency: Tensor,
}

impl StaticGraph {
    pub fn adjacency(&self) -> &Tensor {
        &self.adjacency
    }

    pub fn from_adjacency(adjacency: Tensor) -> Result<Self> {
        if !adjacency.is_matrix() || adjacency.rows() != adjacency.cols() {
            return Err(Error::shape("static graph", format!("{:?}", adjacency.shape())));
        }
        Ok(Self { adjacency })
    }

    pub fn len(&self) -> usize {
        self.adjacency.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Neighbour count per node, excluding the self-loop.
    pub fn degrees(&self) -> Vec<usize> {
        let n = self.len();
        (0..n)
            .map(|i| (0..n).filter(|&j| j != i && self.adjacency.get(i, j) > 0.0).count())
            .collect()
    }

    pub fn mean_degree(&self) -> f64 {
        let d = self.degrees();
        d.iter().sum::<usize>() as f64 / d.len().max(1) as f64
    }

    pub fn isolated_nodes(&self) -> Vec<usize> {
        self.degrees()
            .iter()
            .enumerate()
            .filter_map(|(i, &d)| (d == 0).then_some(i))
            .collect()
    }
}

/// Connects electrodes whose great-circle distance is at most `radius`.
pub fn build_static_graph(montage: &Montage, radius: f64) -> Result<StaticGraph> {
    if !(radius > 0.0) {
        return Err(Error::invalid(format!("static graph radius must be > 0, got {radius}")));
    }
    let n = montage.len();
    let mut adjacency = Tensor::zeros(&[n, n]);
    for i in 0..n {
        adjacency.set(i, i, 1.0);
        for j in (i + 1)..n {
            if montage.geodesic(i, j) <= radius {
                adjacency.set(i, j, 1.0);
                adjacency.set(j, i, 1.0);
            }
        }
    }
    let graph = StaticGraph { adjacency };
    let isolated = graph.isolated_nodes();
    if !isolated.is_empty() && n > 1 {
        log::warn!(
            "static graph radius {radius} leaves {} isolated electrode(s)",
            isolated.len()
        );
    }
    Ok(graph)
}

/// Grid slot of an electrode: `row` runs +4 (Fp) to −4 (O), `col` −4 (left) to +4 (right).
#[derive(Clone, Copy)]
enum Spot {
    Grid { row: i32, col: i32 },
    Cerebellar { col: i32 },
}

impl Spot {
    fn position(self) -> [f64; 3] {
        let deg = PI / 180.0;
        match self {
            Spot::Grid { row, col } if row.abs() == 4 => {
                // Fp and O rows lie on the 10% ring, 18° apart.
                let step = 18.0 * col.abs() as f64;
                let off = if row > 0 { step } else { 180.0 - step };
                let off = off * deg;
                equator(off, col.signum())
            }
            Spot::Grid { row, col } => {
                let polar = 22.5 * row.abs() as f64 * deg;
                let midline = [0.0, polar.sin() * row.signum() as f64, polar.cos()];
                let side = if col == 0 { 1 } else { col.signum() };
                let edge = equator((90.0 - 18.0 * row as f64) * deg, side);
                slerp(midline, edge, col.abs() as f64 / 4.0)
            }
            Spot::Cerebellar { col } => {
                let polar = 112.5 * deg;
                let az = (180.0 - 27.0) * deg;
                let s = col.signum() as f64;
                [s * polar.sin() * az.sin(), polar.sin() * az.cos(), polar.cos()]
            }
        }
    }
}

/// Point on the z = 0 circle, `off` radians from the nasion towards `side`.
fn equator(off: f64, side: i32) -> [f64; 3] {
    [side as f64 * off.sin(), off.cos(), 0.0]
}

fn slerp(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
    let w = dot.clamp(-1.0, 1.0).acos();
    if w < 1e-12 {
        return a;
    }
    let (sa, sb) = (((1.0 - t) * w).sin() / w.sin(), (t * w).sin() / w.sin());
    let mut p = [0.0; 3];
    for k in 0..3 {
        p[k] = sa * a[k] + sb * b[k];
    }
    let norm = p.iter().map(|v| v * v).sum::<f64>().sqrt();
    p.map(|v| v / norm)
}

const fn g(row: i32, col: i32) -> Spot {
    Spot::Grid { row, col }
}

const LAYOUT_62: [(&str, Spot); 62] = [
    ("FP1", g(4, -1)),
    ("FPZ", g(4, 0)),
    ("FP2", g(4, 1)),
    ("AF3", g(3, -2)),
    ("AF4", g(3, 2)),
    ("F7", g(2, -4)),
    ("F5", g(2, -3)),
    ("F3", g(2, -2)),
    ("F1", g(2, -1)),
    ("FZ", g(2, 0)),
    ("F2", g(2, 1)),
    ("F4", g(2, 2)),
    ("F6", g(2, 3)),
    ("F8", g(2, 4)),
    ("FT7", g(1, -4)),
    ("FC5", g(1, -3)),
    ("FC3", g(1, -2)),
    ("FC1", g(1, -1)),
    ("FCZ", g(1, 0)),
    ("FC2", g(1, 1)),
    ("FC4", g(1, 2)),
    ("FC6", g(1, 3)),
    ("FT8", g(1, 4)),
    ("T7", g(0, -4)),
    ("C5", g(0, -3)),
    ("C3", g(0, -2)),
    ("C1", g(0, -1)),
    ("CZ", g(0, 0)),
    ("C2", g(0, 1)),
    ("C4", g(0, 2)),
    ("C6", g(0, 3)),
    ("T8", g(0, 4)),
    ("TP7", g(-1, -4)),
    ("CP5", g(-1, -3)),
    ("CP3", g(-1, -2)),
    ("CP1", g(-1, -1)),
    ("CPZ", g(-1, 0)),
    ("CP2", g(-1, 1)),
    ("CP4", g(-1, 2)),
    ("CP6", g(-1, 3)),
    ("TP8", g(-1, 4)),
    ("P7", g(-2, -4)),
    ("P5", g(-2, -3)),
    ("P3", g(-2, -2)),
    ("P1", g(-2, -1)),
    ("PZ", g(-2, 0)),
    ("P2", g(-2, 1)),
    ("P4", g(-2, 2)),
    ("P6", g(-2, 3)),
    ("P8", g(-2, 4)),
    ("PO7", g(-3, -4)),
    ("PO5", g(-3, -3)),
    ("PO3", g(-3, -2)),
    ("POZ", g(-3, 0)),
    ("PO4", g(-3, 2)),
    ("PO6", g(-3, 3)),
    ("PO8", g(-3, 4)),
    ("CB1", Spot::Cerebellar { col: -1 }),
    ("O1", g(-4, -1)),
    ("OZ", g(-4, 0)),
    ("O2", g(-4, 1)),
    ("CB2", Spot::Cerebellar { col: 1 }),
];
