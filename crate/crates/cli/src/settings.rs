//! Flag sets shared by the command line and config files.
//!
//! Every tunable is optional at parse time. Values resolve as
//! flag → config file → built-in default, and the fully materialized set is
//! written to the run manifest so a manifest can be passed back as `--config`.

use std::path::{Path, PathBuf};

use clap::Args;
use pgcn::datasets::LabelScheme;
use pgcn::{Error, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

/// Overlays `flags` on the contents of `config` (TOML, or a JSON manifest).
pub fn merge_with_config<T>(flags: &T, config: Option<&Path>) -> Result<T>
where
    T: Serialize + DeserializeOwned,
{
    let mut base = match config {
        Some(path) => load_config(path)?,
        None => Map::new(),
    };
    let Value::Object(given) = serde_json::to_value(flags)? else {
        unreachable!("flag sets serialize to objects");
    };
    for (k, v) in given {
        let unset = v.is_null() || v == Value::Bool(false);
        if !unset {
            base.insert(k, v);
        }
    }
    Ok(serde_json::from_value(Value::Object(base))?)
}

fn load_config(path: &Path) -> Result<Map<String, Value>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::InvalidArgument(format!("cannot read config {}: {e}", path.display())))?;
    let value: Value = if path.extension().is_some_and(|e| e == "json") {
        let v: Value = serde_json::from_str(&text)?;
        // A run manifest keeps its flags under "flags".
        v.get("flags").cloned().unwrap_or(v)
    } else {
        let t: toml::Table = toml::from_str(&text)
            .map_err(|e| Error::InvalidArgument(format!("config {}: {e}", path.display())))?;
        serde_json::to_value(t)?
    };
    match value {
        Value::Object(m) => Ok(m),
        _ => Err(Error::InvalidArgument(format!(
            "config {} must be a table of flag values",
            path.display()
        ))),
    }
}

fn parse_coarse_map(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad coarse map entry {v:?}")))
        })
        .collect()
}

/// Label scheme from `--scheme`, `--p-fine` and `--coarse-map`.
pub fn resolve_scheme(
    scheme: Option<&str>,
    p_fine: Option<usize>,
    coarse_map: Option<&str>,
) -> Result<LabelScheme> {
    let resolved = match (scheme, p_fine) {
        (Some("custom"), _) | (None, Some(_)) if coarse_map.is_some() => {
            let map = parse_coarse_map(coarse_map.unwrap_or_default())?;
            let names = (0..map.len()).map(|k| format!("class{k}")).collect();
            let coarse_classes = map.iter().max().map_or(0, |m| m + 1);
            LabelScheme::custom(names, map, coarse_classes)?
        }
        (Some("custom"), _) => {
            return Err(Error::InvalidArgument("--scheme custom needs --coarse-map".into()));
        }
        (Some(name), _) => LabelScheme::from_name(name)?,
        (None, Some(4)) => LabelScheme::Seed4Like,
        (None, Some(7)) | (None, None) => LabelScheme::MpedLike,
        (None, Some(p)) => {
            return Err(Error::InvalidArgument(format!(
                "{p} fine classes need --scheme custom --coarse-map"
            )));
        }
    };
    if let Some(p) = p_fine {
        if p != resolved.fine_classes() {
            return Err(Error::InvalidArgument(format!(
                "--p-fine {p} does not match the {} scheme ({} classes)",
                resolved.name(),
                resolved.fine_classes()
            )));
        }
    }
    Ok(resolved)
}

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default)]
pub struct SynthFlags {
    /// Output dataset file.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub subjects: Option<u32>,
    #[arg(long)]
    pub sessions: Option<u32>,
    #[arg(long)]
    pub trials: Option<u32>,
    /// Segments (samples) per trial.
    #[arg(long)]
    pub segments: Option<u32>,
    #[arg(long)]
    pub channels: Option<usize>,
    /// Number of feature bands.
    #[arg(long)]
    pub band_count: Option<usize>,
    /// Fine classes; 4 selects seed4-like, 7 mped-like.
    #[arg(long)]
    pub p_fine: Option<usize>,
    /// seed4-like, mped-like or custom.
    #[arg(long)]
    pub scheme: Option<String>,
    /// Coarse class of each fine class, e.g. "0,0,1,2,2" (custom scheme).
    #[arg(long)]
    pub coarse_map: Option<String>,
    #[arg(long)]
    pub separation: Option<f64>,
    #[arg(long)]
    pub subject_effect: Option<f64>,
    #[arg(long)]
    pub noise: Option<f64>,
}

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default)]
pub struct SynthRawFlags {
    /// Output directory for recording files.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub subjects: Option<u32>,
    #[arg(long)]
    pub trials: Option<u32>,
    #[arg(long)]
    pub seconds: Option<f64>,
    /// Sampling rate in Hz.
    #[arg(long)]
    pub fs: Option<f64>,
    #[arg(long)]
    pub channels: Option<usize>,
    #[arg(long)]
    pub scheme: Option<String>,
    #[arg(long)]
    pub separation: Option<f64>,
    #[arg(long)]
    pub noise: Option<f64>,
}

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default)]
pub struct FeaturizeFlags {
    /// Recording files or directories of them.
    #[arg(long, num_args = 1..)]
    pub input: Option<Vec<PathBuf>>,
    /// Output dataset file.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// de, energy or stft.
    #[arg(long)]
    pub feature: Option<String>,
    /// Comma list of Hz ranges, e.g. "1-4,4-8,8-14,14-30,30-50".
    #[arg(long)]
    pub bands: Option<String>,
    #[arg(long)]
    pub scheme: Option<String>,
    #[arg(long)]
    pub coarse_map: Option<String>,
}

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default)]
pub struct ModelFlags {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Coarse-head update period in iterations.
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub batch: Option<usize>,
    /// Number of graph powers K.
    #[arg(long)]
    pub k_order: Option<usize>,
    /// Output width per band of the dynamic convolution (both heads).
    #[arg(long)]
    pub dyn_dim: Option<usize>,
    /// Output width of the static convolution (both heads).
    #[arg(long)]
    pub static_dim: Option<usize>,
    /// full, pgcn-f, pgcn-d or pgcn-s.
    #[arg(long)]
    pub ablation: Option<String>,
    /// adam or sgd.
    #[arg(long)]
    pub optimizer: Option<String>,
    /// Static-graph geodesic radius in radians.
    #[arg(long)]
    pub radius: Option<f64>,
}

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default)]
pub struct TrainFlags {
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelFlags,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Continue from a checkpoint; --epochs is the new total.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default)]
pub struct EvalFlags {
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelFlags,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// subject-dependent or loso.
    #[arg(long)]
    pub protocol: Option<String>,
    /// Training trials per session for the subject-dependent protocol.
    #[arg(long)]
    pub train_trials: Option<usize>,
    /// Worker threads for folds.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Also write the scalp contribution map.
    #[arg(long)]
    pub maps: bool,
    /// Also write fine-head embeddings of every test sample.
    #[arg(long)]
    pub embeddings: bool,
}

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default)]
pub struct GradcheckFlags {
    #[arg(long)]
    pub seed: Option<u64>,
    /// Finite-difference step.
    #[arg(long)]
    pub eps: Option<f64>,
    /// Largest accepted relative error.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Optional directory for the report and manifest.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Deliberately break one backward rule (self-test of the checker).
    #[arg(long)]
    pub corrupt_vjp: bool,
}
