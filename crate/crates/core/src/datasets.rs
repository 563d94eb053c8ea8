//! Labelled feature datasets, fine→coarse label schemes and the synthetic
//! generator used in place of licensed recordings.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container::{self, DATASET_MAGIC};
use crate::error::{Error, Result};
use crate::features::{self, Band, FeatureKind, RawRecording, RecordingIds, DEFAULT_BANDS};
use crate::montage::Montage;
use crate::numkit::Tensor;
use crate::rng::{self, SeededRng};

pub const NEGATIVE: usize = 0;
pub const NEUTRAL: usize = 1;
pub const POSITIVE: usize = 2;
pub const COARSE_NAMES: [&str; 3] = ["negative", "neutral", "positive"];

const SEED4_NAMES: [&str; 4] = ["neutral", "sad", "fear", "happy"];
const SEED4_COARSE: [usize; 4] = [NEUTRAL, NEGATIVE, NEGATIVE, POSITIVE];
const MPED_NAMES: [&str; 7] = ["joy", "funny", "anger", "fear", "disgust", "sadness", "neutral"];
const MPED_COARSE: [usize; 7] = [POSITIVE, POSITIVE, NEGATIVE, NEGATIVE, NEGATIVE, NEGATIVE, NEUTRAL];

/// Fine label set and its mapping onto coarse polarity.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "name")]
pub enum LabelScheme {
    /// neutral, sad, fear, happy
    Seed4Like,
    /// joy, funny, anger, fear, disgust, sadness, neutral
    MpedLike,
    Custom {
        class_names: Vec<String>,
        coarse: Vec<usize>,
        coarse_classes: usize,
    },
}

impl LabelScheme {
    pub fn custom(class_names: Vec<String>, coarse: Vec<usize>, coarse_classes: usize) -> Result<Self> {
        if class_names.len() != coarse.len() || class_names.is_empty() {
            return Err(Error::invalid("custom scheme needs one coarse entry per class"));
        }
        if let Some(&c) = coarse.iter().find(|&&c| c >= coarse_classes) {
            return Err(Error::Label {
                label: c,
                context: format!("{coarse_classes} coarse classes"),
            });
        }
        Ok(LabelScheme::Custom {
            class_names,
            coarse,
            coarse_classes,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            LabelScheme::Seed4Like => "seed4-like",
            LabelScheme::MpedLike => "mped-like",
            LabelScheme::Custom { .. } => "custom",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "seed4-like" => Ok(LabelScheme::Seed4Like),
            "mped-like" => Ok(LabelScheme::MpedLike),
            other => Err(Error::invalid(format!(
                "unknown label scheme {other:?} (custom schemes need a table)"
            ))),
        }
    }

    pub fn fine_classes(&self) -> usize {
        self.class_names().len()
    }

    pub fn coarse_classes(&self) -> usize {
        match self {
            LabelScheme::Custom { coarse_classes, .. } => *coarse_classes,
            _ => COARSE_NAMES.len(),
        }
    }

    pub fn class_names(&self) -> Vec<String> {
        match self {
            LabelScheme::Seed4Like => SEED4_NAMES.map(String::from).to_vec(),
            LabelScheme::MpedLike => MPED_NAMES.map(String::from).to_vec(),
            LabelScheme::Custom { class_names, .. } => class_names.clone(),
        }
    }

    pub fn coarse_map(&self, fine: usize) -> Result<usize> {
        let table: &[usize] = match self {
            LabelScheme::Seed4Like => &SEED4_COARSE,
            LabelScheme::MpedLike => &MPED_COARSE,
            LabelScheme::Custom { coarse, .. } => coarse,
        };
        table.get(fine).copied().ok_or_else(|| Error::Label {
            label: fine,
            context: format!("{} scheme with {} classes", self.name(), table.len()),
        })
    }

    /// Fine label by class name.
    pub fn label_of(&self, class: &str) -> Result<usize> {
        self.class_names()
            .iter()
            .position(|n| n == class)
            .ok_or_else(|| Error::invalid(format!("class {class:?} not in {} scheme", self.name())))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// `n × d` features.
    pub features: Tensor,
    pub fine: usize,
    pub coarse: usize,
    pub subject: u32,
    pub session: u32,
    pub trial: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    samples: Vec<Sample>,
    pub scheme: LabelScheme,
    pub feature_kind: Option<FeatureKind>,
    pub bands: Vec<Band>,
    pub channel_names: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct DatasetHeader {
    scheme: LabelScheme,
    feature_kind: Option<FeatureKind>,
    bands: Vec<Band>,
    channel_names: Vec<String>,
    channels: usize,
    band_count: usize,
    /// `[fine, coarse, subject, session, trial]` per sample.
    samples: Vec<[u64; 5]>,
}

impl LabeledDataset {
    pub fn new(
        samples: Vec<Sample>,
        scheme: LabelScheme,
        feature_kind: Option<FeatureKind>,
        bands: Vec<Band>,
        channel_names: Vec<String>,
    ) -> Result<Self> {
        let n = channel_names.len();
        let d = bands.len();
        let mut last_trial: HashMap<(u32, u32), u32> = HashMap::new();
        for (idx, s) in samples.iter().enumerate() {
            if s.features.shape() != [n, d] {
                return Err(Error::shape(
                    "dataset",
                    format!("sample {idx} has shape {:?}, expected [{n}, {d}]", s.features.shape()),
                ));
            }
            let coarse = scheme.coarse_map(s.fine)?;
            if coarse != s.coarse {
                return Err(Error::invalid(format!(
                    "sample {idx}: coarse label {} but the scheme maps fine {} to {coarse}",
                    s.coarse, s.fine
                )));
            }
            let last = last_trial.entry((s.subject, s.session)).or_insert(s.trial);
            if s.trial < *last {
                return Err(Error::invalid(format!(
                    "sample {idx}: trial ids out of order within subject {} session {}",
                    s.subject, s.session
                )));
            }
            *last = s.trial;
        }
        Ok(Self {
            samples,
            scheme,
            feature_kind,
            bands,
            channel_names,
        })
    }

    /// Segments every recording into 1 s windows and labels them from `ids.label`.
    pub fn from_recordings(
        recordings: &[RawRecording],
        kind: FeatureKind,
        bands: &[Band],
        scheme: LabelScheme,
    ) -> Result<Self> {
        let first = recordings
            .first()
            .ok_or_else(|| Error::invalid("no recordings to featurize"))?;
        let channel_names = first.channel_names.clone();
        let mut samples = Vec::new();
        for rec in recordings {
            if rec.channel_names != channel_names {
                return Err(Error::invalid("recordings use different channel layouts"));
            }
            let fine = rec.ids.label.ok_or_else(|| {
                Error::invalid(format!(
                    "recording subject {} trial {} has no label",
                    rec.ids.subject, rec.ids.trial
                ))
            })?;
            let coarse = scheme.coarse_map(fine)?;
            for m in features::featurize(rec, kind, bands)? {
                samples.push(Sample {
                    features: m.values,
                    fine,
                    coarse,
                    subject: rec.ids.subject,
                    session: rec.ids.session,
                    trial: rec.ids.trial,
                });
            }
        }
        Self::new(samples, scheme, Some(kind), bands.to_vec(), channel_names)
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.channel_names.len()
    }

    pub fn band_count(&self) -> usize {
        self.bands.len()
    }

    /// Sorted distinct subject ids.
    pub fn subjects(&self) -> Vec<u32> {
        let mut s: Vec<u32> = self.samples.iter().map(|s| s.subject).collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    /// Samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let samples = indices
            .iter()
            .map(|&i| {
                self.samples
                    .get(i)
                    .cloned()
                    .ok_or_else(|| Error::invalid(format!("sample index {i} out of range")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            samples,
            ..self.clone_meta()
        })
    }

    fn clone_meta(&self) -> Self {
        Self {
            samples: Vec::new(),
            scheme: self.scheme.clone(),
            feature_kind: self.feature_kind,
            bands: self.bands.clone(),
            channel_names: self.channel_names.clone(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = DatasetHeader {
            scheme: self.scheme.clone(),
            feature_kind: self.feature_kind,
            bands: self.bands.clone(),
            channel_names: self.channel_names.clone(),
            channels: self.channels(),
            band_count: self.band_count(),
            samples: self
                .samples
                .iter()
                .map(|s| {
                    [
                        s.fine as u64,
                        s.coarse as u64,
                        s.subject.into(),
                        s.session.into(),
                        s.trial.into(),
                    ]
                })
                .collect(),
        };
        let values: Vec<f64> = self
            .samples
            .iter()
            .flat_map(|s| s.features.data().iter().copied())
            .collect();
        container::encode(DATASET_MAGIC, &header, &values)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (h, values): (DatasetHeader, Vec<f64>) = container::decode(DATASET_MAGIC, bytes)?;
        if h.channel_names.len() != h.channels || h.bands.len() != h.band_count {
            return Err(Error::Format("dataset header is inconsistent".into()));
        }
        let per = h.channels * h.band_count;
        if values.len() != per * h.samples.len() {
            return Err(Error::Format(format!(
                "dataset payload has {} values, header declares {} samples of {per}",
                values.len(),
                h.samples.len()
            )));
        }
        let to_u32 = |v: u64| u32::try_from(v).map_err(|_| Error::Format("id overflow".into()));
        let samples = h
            .samples
            .iter()
            .enumerate()
            .map(|(i, m)| {
                Ok(Sample {
                    features: Tensor::new(
                        vec![h.channels, h.band_count],
                        values[i * per..(i + 1) * per].to_vec(),
                    )?,
                    fine: m[0] as usize,
                    coarse: m[1] as usize,
                    subject: to_u32(m[2])?,
                    session: to_u32(m[3])?,
                    trial: to_u32(m[4])?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(samples, h.scheme, h.feature_kind, h.bands, h.channel_names)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub subjects: u32,
    pub sessions: u32,
    pub trials: u32,
    pub segments: u32,
    pub channels: usize,
    pub bands: usize,
    pub scheme: LabelScheme,
    /// Scale of the class template.
    pub separation: f64,
    /// Scale of the per-subject offset.
    pub subject_effect: f64,
    /// Scale of per-sample Gaussian noise.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            subjects: 10,
            sessions: 1,
            trials: 8,
            segments: 30,
            channels: 62,
            bands: 5,
            scheme: LabelScheme::MpedLike,
            separation: 1.0,
            subject_effect: 0.5,
            noise: 1.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("subjects", self.subjects as usize),
            ("sessions", self.sessions as usize),
            ("trials", self.trials as usize),
            ("segments", self.segments as usize),
            ("channels", self.channels),
            ("bands", self.bands),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be at least 1")));
            }
        }
        for (name, v) in [
            ("separation", self.separation),
            ("subject effect", self.subject_effect),
            ("noise", self.noise),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be a finite value ≥ 0")));
            }
        }
        let dims = self.channels * self.bands;
        let needed = self.scheme.fine_classes() + self.scheme.coarse_classes();
        if dims < needed {
            return Err(Error::invalid(format!(
                "{dims} feature dimensions cannot hold {needed} orthogonal template directions"
            )));
        }
        Ok(())
    }
}

/// Share of a fine template's energy that comes from its coarse prototype;
/// equals the cosine between two templates of the same coarse class.
pub const SIBLING_COSINE: f64 = 0.75;

/// Unit-RMS `n × d` class templates. Coarse prototypes and per-class residuals
/// are mutually orthogonal, so siblings have cosine exactly
/// [`SIBLING_COSINE`] and classes of different coarse groups are orthogonal.
pub fn class_templates(cfg: &SynthConfig) -> Result<Vec<Tensor>> {
    cfg.validate()?;
    let (n, d) = (cfg.channels, cfg.bands);
    let p = cfg.scheme.fine_classes();
    let pc = cfg.scheme.coarse_classes();
    let mut rng = rng::stream(cfg.seed, 10);
    let mut basis: Vec<Vec<f64>> = Vec::new();
    while basis.len() < p + pc {
        let mut v = rng::normal_tensor(&mut rng, &[n * d], 1.0).into_data();
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            for (x, y) in v.iter_mut().zip(b) {
                *x -= dot * y;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            basis.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    let scale = ((n * d) as f64).sqrt();
    let (a, b) = (SIBLING_COSINE.sqrt(), (1.0 - SIBLING_COSINE).sqrt());
    (0..p)
        .map(|k| {
            let proto = &basis[cfg.scheme.coarse_map(k)?];
            let own = &basis[pc + k];
            let data = proto
                .iter()
                .zip(own)
                .map(|(c, u)| scale * (a * c + b * u))
                .collect();
            Tensor::new(vec![n, d], data)
        })
        .collect()
}

/// Fine class shown in trial `t` to subject `s`. The first `P` trials cycle
/// through every class; later trials repeat classes with a per-subject offset.
pub fn trial_class(subject: u32, trial: u32, classes: usize) -> usize {
    let (s, t, p) = (subject as usize, trial as usize, classes);
    if t < p {
        t % p
    } else {
        (s + t - p) % p
    }
}

/// `T_k·sep + O_s·subject_effect + ε·noise` for every segment of every trial.
pub fn synth_generate(cfg: &SynthConfig) -> Result<LabeledDataset> {
    let templates = class_templates(cfg)?;
    let (n, d) = (cfg.channels, cfg.bands);
    let mut offsets_rng = rng::stream(cfg.seed, 11);
    let offsets: Vec<Tensor> = (0..cfg.subjects)
        .map(|_| rng::normal_tensor(&mut offsets_rng, &[n, d], 1.0))
        .collect();
    let mut noise_rng = rng::stream(cfg.seed, 12);
    let p = cfg.scheme.fine_classes();
    let mut samples = Vec::new();
    for subject in 0..cfg.subjects {
        for session in 0..cfg.sessions {
            for trial in 0..cfg.trials {
                let fine = trial_class(subject, trial, p);
                let coarse = cfg.scheme.coarse_map(fine)?;
                for _ in 0..cfg.segments {
                    let mut x = templates[fine].scale(cfg.separation);
                    x.add_assign(&offsets[subject as usize].scale(cfg.subject_effect))?;
                    x.add_assign(&rng::normal_tensor(&mut noise_rng, &[n, d], cfg.noise))?;
                    samples.push(Sample {
                        features: x,
                        fine,
                        coarse,
                        subject,
                        session,
                        trial,
                    });
                }
            }
        }
    }
    let bands = if d == DEFAULT_BANDS.len() {
        DEFAULT_BANDS.to_vec()
    } else {
        (0..d).map(|b| Band::new(1.0 + 4.0 * b as f64, 5.0 + 4.0 * b as f64)).collect()
    };
    LabeledDataset::new(
        samples,
        cfg.scheme.clone(),
        None,
        bands,
        Montage::for_channels(n).names(),
    )
}

/// Synthetic multichannel recording whose per-band amplitudes follow the
/// class template, for exercising the raw-signal pipeline.
pub fn synth_recording(
    cfg: &SynthConfig,
    ids: RecordingIds,
    seconds: f64,
    fs: f64,
) -> Result<RawRecording> {
    if cfg.bands != DEFAULT_BANDS.len() {
        return Err(Error::invalid("raw synthesis uses the five default bands"));
    }
    let label = ids
        .label
        .ok_or_else(|| Error::invalid("raw synthesis needs a label"))?;
    let templates = class_templates(cfg)?;
    let template = templates.get(label).ok_or_else(|| Error::Label {
        label,
        context: format!("{} classes", templates.len()),
    })?;
    let len = (seconds * fs).round() as usize;
    let purpose = 100 + u64::from(ids.subject) * 10_000 + u64::from(ids.trial);
    let mut rng: SeededRng = rng::stream(cfg.seed, purpose);
    let mut channels = Vec::with_capacity(cfg.channels);
    for i in 0..cfg.channels {
        let mut signal = vec![0.0; len];
        for (b, band) in DEFAULT_BANDS.iter().enumerate() {
            let amp = (cfg.separation * template.get(i, b) * 0.5).exp();
            let f = 0.5 * (band.lo + band.hi);
            let phase = std::f64::consts::TAU * rand::Rng::random::<f64>(&mut rng);
            for (t, s) in signal.iter_mut().enumerate() {
                *s += amp * (std::f64::consts::TAU * f * t as f64 / fs + phase).sin();
            }
        }
        for s in &mut signal {
            *s += cfg.noise * rng::normal(&mut rng);
        }
        channels.push(signal);
    }
    RawRecording::new(channels, fs, ids, Montage::for_channels(cfg.channels).names())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            subjects: 3,
            trials: 8,
            segments: 4,
            channels: 8,
            ..SynthConfig::default()
        }
    }

    fn cosine(a: &Tensor, b: &Tensor) -> f64 {
        let dot: f64 = a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum();
        dot / (a.data().iter().map(|x| x * x).sum::<f64>().sqrt()
            * b.data().iter().map(|x| x * x).sum::<f64>().sqrt())
    }

    #[test]
    fn coarse_maps() {
        let seed = LabelScheme::Seed4Like;
        assert_eq!(seed.coarse_map(seed.label_of("fear").unwrap()).unwrap(), NEGATIVE);
        assert_eq!(seed.coarse_map(seed.label_of("sad").unwrap()).unwrap(), NEGATIVE);
        assert_eq!(seed.coarse_map(seed.label_of("happy").unwrap()).unwrap(), POSITIVE);
        let mped = LabelScheme::MpedLike;
        assert_eq!(mped.coarse_map(mped.label_of("funny").unwrap()).unwrap(), POSITIVE);
        assert_eq!(mped.coarse_map(mped.label_of("joy").unwrap()).unwrap(), POSITIVE);
        for s in ["anger", "fear", "disgust", "sadness"] {
            assert_eq!(mped.coarse_map(mped.label_of(s).unwrap()).unwrap(), NEGATIVE);
        }
        for scheme in [seed, mped] {
            assert_eq!(scheme.coarse_map(scheme.label_of("neutral").unwrap()).unwrap(), NEUTRAL);
            assert!(matches!(scheme.coarse_map(9), Err(Error::Label { .. })));
        }
    }

    #[test]
    fn custom_scheme() {
        let s = LabelScheme::custom(vec!["a".into(), "b".into()], vec![1, 0], 2).unwrap();
        assert_eq!(s.coarse_map(0).unwrap(), 1);
        assert_eq!(s.fine_classes(), 2);
        assert!(LabelScheme::custom(vec!["a".into()], vec![2], 2).is_err());
        assert!(LabelScheme::custom(vec!["a".into()], vec![], 2).is_err());
    }

    #[test]
    fn templates_encode_the_hierarchy() {
        let cfg = small();
        let t = class_templates(&cfg).unwrap();
        let scheme = &cfg.scheme;
        let mut min_within = f64::INFINITY;
        let mut max_across = f64::NEG_INFINITY;
        for i in 0..t.len() {
            for j in i + 1..t.len() {
                let c = cosine(&t[i], &t[j]);
                if scheme.coarse_map(i).unwrap() == scheme.coarse_map(j).unwrap() {
                    min_within = min_within.min(c);
                } else {
                    max_across = max_across.max(c);
                }
            }
        }
        assert!(min_within >= 0.5);
        assert!((min_within - SIBLING_COSINE).abs() < 1e-9);
        assert!(min_within > max_across);
    }

    #[test]
    fn noiseless_samples_of_a_class_are_identical() {
        let cfg = SynthConfig {
            noise: 0.0,
            subject_effect: 0.0,
            ..small()
        };
        let ds = synth_generate(&cfg).unwrap();
        let mut first: HashMap<usize, &Tensor> = HashMap::new();
        for s in ds.samples() {
            assert_eq!(*first.entry(s.fine).or_insert(&s.features), &s.features);
        }
    }

    #[test]
    fn generated_labels_are_consistent() {
        let ds = synth_generate(&small()).unwrap();
        assert_eq!(ds.len(), 3 * 8 * 4);
        for s in ds.samples() {
            assert_eq!(s.coarse, ds.scheme.coarse_map(s.fine).unwrap());
            assert!(s.fine < 7);
        }
        assert_eq!(ds.subjects(), vec![0, 1, 2]);
    }

    #[test]
    fn every_class_appears_in_the_first_trials() {
        for s in 0..10 {
            let mut seen: Vec<usize> = (0..7).map(|t| trial_class(s, t, 7)).collect();
            seen.sort_unstable();
            assert_eq!(seen, (0..7).collect::<Vec<_>>());
        }
        assert_eq!(trial_class(3, 7, 7), 3);
    }

    #[test]
    fn generation_is_deterministic() {
        assert_eq!(synth_generate(&small()).unwrap(), synth_generate(&small()).unwrap());
        let other = SynthConfig { seed: 1, ..small() };
        assert_ne!(synth_generate(&small()).unwrap(), synth_generate(&other).unwrap());
    }

    #[test]
    fn zero_separation_is_class_blind() {
        let cfg = SynthConfig {
            separation: 0.0,
            noise: 0.0,
            subject_effect: 0.0,
            ..small()
        };
        let ds = synth_generate(&cfg).unwrap();
        assert!(ds.samples().iter().all(|s| s.features.max_abs() == 0.0));
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ds = synth_generate(&small()).unwrap();
        assert_eq!(LabeledDataset::from_bytes(&ds.to_bytes().unwrap()).unwrap(), ds);
        let empty = ds.subset(&[]).unwrap();
        assert!(empty.is_empty());
        assert_eq!(LabeledDataset::from_bytes(&empty.to_bytes().unwrap()).unwrap(), empty);
    }

    #[test]
    fn corrupted_files_are_rejected() {
        let ds = synth_generate(&small()).unwrap();
        let mut bytes = ds.to_bytes().unwrap();
        bytes[0] ^= 0xff;
        assert!(matches!(LabeledDataset::from_bytes(&bytes), Err(Error::Format(_))));
        let bytes = ds.to_bytes().unwrap();
        assert!(LabeledDataset::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    }

    #[test]
    fn inconsistent_coarse_label_rejected() {
        let mut ds = synth_generate(&small()).unwrap();
        ds.samples[0].coarse = (ds.samples[0].coarse + 1) % 3;
        let LabeledDataset { samples, scheme, feature_kind, bands, channel_names } = ds;
        assert!(LabeledDataset::new(samples, scheme, feature_kind, bands, channel_names).is_err());
    }

    #[test]
    fn invalid_config_rejected() {
        assert!(SynthConfig { subjects: 0, ..small() }.validate().is_err());
        assert!(SynthConfig { noise: -1.0, ..small() }.validate().is_err());
        assert!(SynthConfig { channels: 1, bands: 5, ..small() }.validate().is_err());
    }

    #[test]
    fn raw_recordings_feed_the_feature_pipeline() {
        let cfg = small();
        let recs: Vec<RawRecording> = (0..2)
            .map(|t| {
                let ids = RecordingIds {
                    subject: 0,
                    session: 0,
                    trial: t,
                    label: Some(trial_class(0, t, 7)),
                };
                synth_recording(&cfg, ids, 3.0, 200.0).unwrap()
            })
            .collect();
        let ds =
            LabeledDataset::from_recordings(&recs, FeatureKind::DifferentialEntropy, &DEFAULT_BANDS, cfg.scheme)
                .unwrap();
        assert_eq!(ds.len(), 6);
        assert_eq!(ds.samples()[0].features.shape(), &[8, 5]);
        assert_eq!(ds.samples()[5].fine, 1);
    }
}
