//! Band-limited features from raw multichannel recordings.
//!
//! A recording is cut into non-overlapping windows and every window becomes
//! an `n × d` matrix: one row per channel, one column per frequency band.
//! Band-pass filtering is done by FFT masking (zero-phase and exact for
//! tones that complete whole periods in the window).

use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::container::{self, RECORDING_MAGIC};
use crate::error::{Error, Result};
use crate::numkit::Tensor;

/// Half-open frequency interval `[lo, hi)` in Hz.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub lo: f64,
    pub hi: f64,
}

impl Band {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn contains(&self, f: f64) -> bool {
        f >= self.lo && f < self.hi
    }

    fn validate(&self, fs: f64) -> Result<()> {
        if !(self.lo > 0.0 && self.lo < self.hi) {
            return Err(Error::invalid(format!("bad band {}-{} Hz", self.lo, self.hi)));
        }
        if self.hi > fs / 2.0 {
            return Err(Error::invalid(format!(
                "band {}-{} Hz exceeds Nyquist ({} Hz)",
                self.lo,
                self.hi,
                fs / 2.0
            )));
        }
        Ok(())
    }
}

/// δ, θ, α, β, γ.
pub const DEFAULT_BANDS: [Band; 5] = [
    Band::new(1.0, 5.0),
    Band::new(4.0, 8.0),
    Band::new(8.0, 14.0),
    Band::new(14.0, 30.0),
    Band::new(30.0, 50.0),
];

pub const BAND_NAMES: [&str; 5] = ["delta", "theta", "alpha", "beta", "gamma"];

/// Parses `"1-5,4-8,..."`.
pub fn parse_bands(spec: &str) -> Result<Vec<Band>> {
    spec.split(',')
        .map(|pair| {
            let (lo, hi) = pair
                .trim()
                .split_once('-')
                .ok_or_else(|| Error::invalid(format!("band {pair:?} is not lo-hi")))?;
            let lo: f64 = lo.trim().parse().map_err(|_| Error::invalid(format!("bad band {pair:?}")))?;
            let hi: f64 = hi.trim().parse().map_err(|_| Error::invalid(format!("bad band {pair:?}")))?;
            if !(lo > 0.0 && lo < hi) {
                return Err(Error::invalid(format!("bad band {pair:?}")));
            }
            Ok(Band::new(lo, hi))
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    BandEnergy,
    DifferentialEntropy,
    StftPower,
}

impl FeatureKind {
    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::BandEnergy => "band_energy",
            FeatureKind::DifferentialEntropy => "differential_entropy",
            FeatureKind::StftPower => "stft_power",
        }
    }
}

impl std::str::FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "energy" | "band_energy" => Ok(FeatureKind::BandEnergy),
            "de" | "differential_entropy" => Ok(FeatureKind::DifferentialEntropy),
            "stft" | "stft_power" => Ok(FeatureKind::StftPower),
            other => Err(Error::invalid(format!("unknown feature kind {other:?}"))),
        }
    }
}

/// Identifiers carried from a recording to each of its segments.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RecordingIds {
    pub subject: u32,
    pub session: u32,
    pub trial: u32,
    /// Fine emotion label of the stimulus, when known.
    #[serde(default)]
    pub label: Option<usize>,
}

/// `n × T` samples, channels by time.
#[derive(Clone, Debug, PartialEq)]
pub struct RawRecording {
    channels: Vec<Vec<f64>>,
    pub fs: f64,
    pub ids: RecordingIds,
    pub channel_names: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct RecordingHeader {
    fs: f64,
    n: usize,
    samples_per_channel: usize,
    #[serde(flatten)]
    ids: RecordingIds,
    channel_names: Vec<String>,
}

impl RawRecording {
    pub fn new(
        channels: Vec<Vec<f64>>,
        fs: f64,
        ids: RecordingIds,
        channel_names: Vec<String>,
    ) -> Result<Self> {
        if channels.is_empty() || channels[0].is_empty() {
            return Err(Error::invalid("empty recording"));
        }
        if !(fs > 100.0) {
            return Err(Error::invalid(format!(
                "sampling rate {fs} Hz cannot resolve the 50 Hz gamma band"
            )));
        }
        let t = channels[0].len();
        if channels.iter().any(|c| c.len() != t) {
            return Err(Error::shape("recording", "channels differ in length"));
        }
        if (t as f64) < fs {
            return Err(Error::invalid("recording is shorter than one second"));
        }
        if channel_names.len() != channels.len() {
            return Err(Error::shape(
                "recording",
                format!("{} names for {} channels", channel_names.len(), channels.len()),
            ));
        }
        if channels.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("recording samples".into()));
        }
        Ok(Self {
            channels,
            fs,
            ids,
            channel_names,
        })
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn n_samples(&self) -> usize {
        self.channels[0].len()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let header = RecordingHeader {
            fs: self.fs,
            n: self.n_channels(),
            samples_per_channel: self.n_samples(),
            ids: self.ids.clone(),
            channel_names: self.channel_names.clone(),
        };
        let values: Vec<f64> = self.channels.iter().flatten().copied().collect();
        container::write_file(path, RECORDING_MAGIC, &header, &values)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (h, values): (RecordingHeader, Vec<f64>) = container::read_file(path, RECORDING_MAGIC)?;
        if values.len() != h.n * h.samples_per_channel {
            return Err(Error::Format(format!(
                "recording payload has {} values, header declares {}×{}",
                values.len(),
                h.n,
                h.samples_per_channel
            )));
        }
        let channels = values
            .chunks(h.samples_per_channel.max(1))
            .map(<[f64]>::to_vec)
            .collect();
        Self::new(channels, h.fs, h.ids, h.channel_names)
    }
}

/// One window of a recording.
#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub channels: Vec<Vec<f64>>,
    pub fs: f64,
    pub ids: RecordingIds,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Non-overlapping windows of `window_s` seconds; the trailing remainder is dropped.
pub fn segment(rec: &RawRecording, window_s: f64) -> Result<Vec<Segment>> {
    let win = (window_s * rec.fs).round() as usize;
    if win < 8 {
        return Err(Error::invalid(format!("window of {win} samples is too short")));
    }
    let count = rec.n_samples() / win;
    Ok((0..count)
        .map(|s| Segment {
            channels: rec
                .channels
                .iter()
                .map(|c| c[s * win..(s + 1) * win].to_vec())
                .collect(),
            fs: rec.fs,
            ids: rec.ids.clone(),
        })
        .collect())
}

fn plan(len: usize) -> (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>) {
    let mut planner = FftPlanner::new();
    (planner.plan_fft_forward(len), planner.plan_fft_inverse(len))
}

/// Frequency of DFT bin `k` for a length-`len` transform, folded to `[0, fs/2]`.
fn bin_frequency(k: usize, len: usize, fs: f64) -> f64 {
    let folded = k.min(len - k);
    folded as f64 * fs / len as f64
}

/// Zero-phase band-pass of one channel by masking its spectrum.
pub fn band_filter_channel(signal: &[f64], fs: f64, band: Band) -> Result<Vec<f64>> {
    band.validate(fs)?;
    let len = signal.len();
    if len == 0 {
        return Ok(Vec::new());
    }
    let (fwd, inv) = plan(len);
    let mut buf: Vec<Complex<f64>> = signal.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fwd.process(&mut buf);
    for (k, c) in buf.iter_mut().enumerate() {
        if !band.contains(bin_frequency(k, len, fs)) {
            *c = Complex::new(0.0, 0.0);
        }
    }
    inv.process(&mut buf);
    Ok(buf.iter().map(|c| c.re / len as f64).collect())
}

pub fn band_filter(seg: &Segment, band: Band) -> Result<Segment> {
    let channels = seg
        .channels
        .iter()
        .map(|c| band_filter_channel(c, seg.fs, band))
        .collect::<Result<_>>()?;
    Ok(Segment {
        channels,
        fs: seg.fs,
        ids: seg.ids.clone(),
    })
}

/// Mean squared sample per channel.
pub fn band_energy(seg: &Segment) -> Vec<f64> {
    seg.channels
        .iter()
        .map(|c| c.iter().map(|v| v * v).sum::<f64>() / c.len().max(1) as f64)
        .collect()
}

/// Below this sample variance a segment is considered flat.
pub const MIN_VARIANCE: f64 = 1e-20;

/// Gaussian differential entropy `0.5·ln(2πe·σ²)` per channel, σ² the unbiased sample variance.
pub fn de_feature(seg: &Segment) -> Result<Vec<f64>> {
    seg.channels
        .iter()
        .enumerate()
        .map(|(ch, c)| {
            let var = sample_variance(c);
            if !(var > MIN_VARIANCE) {
                return Err(Error::invalid(format!(
                    "degenerate segment: channel {ch} has variance {var:e}"
                )));
            }
            Ok(0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * var).ln())
        })
        .collect()
}

pub fn sample_variance(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (x.len() - 1) as f64
}

/// STFT frame length used for a given sampling rate: a quarter second.
pub fn stft_frame_len(fs: f64) -> usize {
    (fs / 4.0).round() as usize
}

/// Mean over Hann-windowed frames (length fs/4, hop half a frame) of the
/// in-band power. Normalized so an in-band unit sine gives about 0.5.
pub fn stft_band_power(seg: &Segment, band: Band) -> Result<Vec<f64>> {
    band.validate(seg.fs)?;
    let frame = stft_frame_len(seg.fs);
    if frame < 2 || frame > seg.len() {
        return Err(Error::invalid(format!(
            "STFT frame of {frame} samples does not fit a {}-sample segment",
            seg.len()
        )));
    }
    let hop = (frame / 2).max(1);
    let window: Vec<f64> = (0..frame)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / frame as f64).cos())
        .collect();
    let wpow: f64 = window.iter().map(|w| w * w).sum();
    let (fwd, _) = plan(frame);
    let mask: Vec<bool> = (0..frame)
        .map(|k| band.contains(bin_frequency(k, frame, seg.fs)))
        .collect();

    let mut out = Vec::with_capacity(seg.channels.len());
    for c in &seg.channels {
        let mut total = 0.0;
        let mut frames = 0;
        let mut start = 0;
        while start + frame <= c.len() {
            let mut buf: Vec<Complex<f64>> = c[start..start + frame]
                .iter()
                .zip(&window)
                .map(|(x, w)| Complex::new(x * w, 0.0))
                .collect();
            fwd.process(&mut buf);
            total += buf
                .iter()
                .zip(&mask)
                .filter(|(_, &m)| m)
                .map(|(z, _)| z.norm_sqr())
                .sum::<f64>()
                / (frame as f64 * wpow);
            frames += 1;
            start += hop;
        }
        out.push(total / frames as f64);
    }
    Ok(out)
}

/// `n × d` feature matrix for one segment.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    pub values: Tensor,
    pub kind: FeatureKind,
    pub bands: Vec<Band>,
}

pub fn segment_features(seg: &Segment, kind: FeatureKind, bands: &[Band]) -> Result<FeatureMatrix> {
    let n = seg.channels.len();
    let d = bands.len();
    let mut values = Tensor::zeros(&[n, d]);
    for (b, &band) in bands.iter().enumerate() {
        let column = match kind {
            FeatureKind::BandEnergy => band_energy(&band_filter(seg, band)?),
            FeatureKind::DifferentialEntropy => de_feature(&band_filter(seg, band)?)?,
            FeatureKind::StftPower => stft_band_power(seg, band)?,
        };
        for (i, v) in column.into_iter().enumerate() {
            values.set(i, b, v);
        }
    }
    if !values.all_finite() {
        return Err(Error::NonFinite("feature extraction".into()));
    }
    Ok(FeatureMatrix {
        values,
        kind,
        bands: bands.to_vec(),
    })
}

/// One feature matrix per 1-s segment.
pub fn featurize(rec: &RawRecording, kind: FeatureKind, bands: &[Band]) -> Result<Vec<FeatureMatrix>> {
    if bands.is_empty() {
        return Err(Error::invalid("no frequency bands"));
    }
    for b in bands {
        b.validate(rec.fs)?;
    }
    segment(rec, 1.0)?
        .iter()
        .map(|s| segment_features(s, kind, bands))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    const FS: f64 = 200.0;

    fn sine(freq: f64, amp: f64, len: usize) -> Vec<f64> {
        (0..len)
            .map(|i| amp * (2.0 * PI * freq * i as f64 / FS).sin())
            .collect()
    }

    fn rms(x: &[f64]) -> f64 {
        (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
    }

    fn seg(channels: Vec<Vec<f64>>) -> Segment {
        Segment {
            channels,
            fs: FS,
            ids: RecordingIds::default(),
        }
    }

    fn recording(len: usize) -> RawRecording {
        RawRecording::new(
            vec![sine(10.0, 1.0, len), sine(20.0, 2.0, len)],
            FS,
            RecordingIds {
                subject: 3,
                session: 1,
                trial: 7,
                label: Some(2),
            },
            vec!["A".into(), "B".into()],
        )
        .unwrap()
    }

    #[test]
    fn segment_counts_and_ids() {
        assert_eq!(segment(&recording(600), 1.0).unwrap().len(), 3);
        let segs = segment(&recording(700), 1.0).unwrap();
        assert_eq!(segs.len(), 3);
        assert!(segs.iter().all(|s| s.ids.subject == 3 && s.ids.trial == 7 && s.len() == 200));
    }

    #[test]
    fn recording_validation() {
        let ids = RecordingIds::default();
        assert!(RawRecording::new(vec![], FS, ids.clone(), vec![]).is_err());
        assert!(RawRecording::new(vec![vec![0.0; 50]], 50.0, ids.clone(), vec!["a".into()]).is_err());
        assert!(RawRecording::new(vec![vec![0.0; 100]], FS, ids, vec!["a".into()]).is_err());
    }

    #[test]
    fn in_band_sine_passes_unchanged() {
        let x = sine(10.0, 1.0, 200);
        let y = band_filter_channel(&x, FS, DEFAULT_BANDS[2]).unwrap();
        let err: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a - b).collect();
        assert!(rms(&err) < 1e-9);
    }

    #[test]
    fn out_of_band_sine_is_removed() {
        let y = band_filter_channel(&sine(10.0, 1.0, 200), FS, DEFAULT_BANDS[4]).unwrap();
        assert!(rms(&y) < 1e-9);
    }

    #[test]
    fn zero_in_zero_out() {
        let y = band_filter_channel(&[0.0; 64], FS, DEFAULT_BANDS[0]).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn band_above_nyquist_rejected() {
        assert!(band_filter_channel(&[0.0; 64], 120.0, Band::new(30.0, 70.0)).is_err());
    }

    #[test]
    fn energy_of_unit_sine() {
        let s = band_filter(&seg(vec![sine(10.0, 1.0, 200)]), DEFAULT_BANDS[2]).unwrap();
        assert!((band_energy(&s)[0] - 0.5).abs() < 1e-6);
        assert_eq!(band_energy(&seg(vec![vec![0.0; 10]]))[0], 0.0);
    }

    #[test]
    fn energy_scales_quadratically() {
        let x = sine(12.0, 1.0, 200);
        let cx: Vec<f64> = x.iter().map(|v| 3.0 * v).collect();
        let (e1, e3) = (band_energy(&seg(vec![x]))[0], band_energy(&seg(vec![cx]))[0]);
        assert!((e3 - 9.0 * e1).abs() < 1e-12);
    }

    #[test]
    fn de_closed_forms() {
        // ±1 alternating with even length has unbiased variance len/(len-1)
        let len = 1000;
        let x: Vec<f64> = (0..len).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let var = len as f64 / (len - 1) as f64;
        let expect = 0.5 * (2.0 * PI * std::f64::consts::E * var).ln();
        let de1 = de_feature(&seg(vec![x.clone()])).unwrap()[0];
        assert!((de1 - expect).abs() < 1e-12);

        let scaled: Vec<f64> = x.iter().map(|v| v * std::f64::consts::E).collect();
        let de2 = de_feature(&seg(vec![scaled])).unwrap()[0];
        assert!((de2 - de1 - 1.0).abs() < 1e-12);

        let shifted: Vec<f64> = x.iter().map(|v| v + 5.0).collect();
        let de3 = de_feature(&seg(vec![shifted])).unwrap()[0];
        assert!((de3 - de1).abs() < 1e-12);
    }

    #[test]
    fn de_rejects_flat_segments() {
        assert!(de_feature(&seg(vec![vec![2.0; 100]])).is_err());
    }

    #[test]
    fn stft_sees_in_band_tone_only() {
        let s = seg(vec![sine(10.0, 1.0, 200)]);
        let alpha = stft_band_power(&s, DEFAULT_BANDS[2]).unwrap()[0];
        let gamma = stft_band_power(&s, DEFAULT_BANDS[4]).unwrap()[0];
        assert!(alpha > 0.3, "alpha {alpha}");
        assert!(gamma < 1e-3 * alpha, "gamma {gamma}");
        let z = stft_band_power(&seg(vec![vec![0.0; 200]]), DEFAULT_BANDS[2]).unwrap()[0];
        assert_eq!(z, 0.0);
    }

    #[test]
    fn stft_power_adds_over_disjoint_tones() {
        let a = sine(10.0, 1.0, 200);
        let b = sine(40.0, 0.7, 200);
        let mix: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let wide = Band::new(1.0, 60.0);
        let pa = stft_band_power(&seg(vec![a]), wide).unwrap()[0];
        let pb = stft_band_power(&seg(vec![b]), wide).unwrap()[0];
        let pm = stft_band_power(&seg(vec![mix]), wide).unwrap()[0];
        assert!(((pa + pb) - pm).abs() / pm < 0.05);
    }

    #[test]
    fn stft_frame_must_fit() {
        assert!(stft_band_power(&seg(vec![vec![1.0; 40]]), DEFAULT_BANDS[2]).is_err());
    }

    #[test]
    fn featurize_shape_and_dominant_band() {
        let rec = recording(600);
        for kind in [FeatureKind::BandEnergy, FeatureKind::StftPower] {
            let feats = featurize(&rec, kind, &DEFAULT_BANDS).unwrap();
            assert_eq!(feats.len(), 3);
            for f in &feats {
                assert_eq!(f.values.shape(), &[2, 5]);
                let row0 = f.values.row(0);
                let argmax = (0..5).max_by(|&a, &b| row0[a].total_cmp(&row0[b])).unwrap();
                assert_eq!(argmax, 2, "{kind:?}");
                let row1 = f.values.row(1);
                let argmax = (0..5).max_by(|&a, &b| row1[a].total_cmp(&row1[b])).unwrap();
                assert_eq!(argmax, 3, "{kind:?}");
            }
        }
    }

    #[test]
    fn featurize_is_deterministic() {
        let rec = recording(400);
        let a = featurize(&rec, FeatureKind::StftPower, &DEFAULT_BANDS).unwrap();
        let b = featurize(&rec, FeatureKind::StftPower, &DEFAULT_BANDS).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn parse_band_list() {
        let b = parse_bands("1-4, 4-8").unwrap();
        assert_eq!(b, vec![Band::new(1.0, 4.0), Band::new(4.0, 8.0)]);
        assert!(parse_bands("8-4").is_err());
        assert!(parse_bands("alpha").is_err());
    }

    #[test]
    fn recording_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rec.bin");
        let rec = recording(400);
        rec.save(&path).unwrap();
        assert_eq!(RawRecording::load(&path).unwrap(), rec);
    }
}
