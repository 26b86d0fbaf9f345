//! Short-time spectral front-end.
//!
//! Two feature spaces are produced from the same framing: `MFCC0d26`
//! (13 cepstra from a 13-filter bank through a square orthonormal DCT, plus
//! first-order deltas) and `LogMelFBd42` (21 log mel energies plus deltas).
//! A third space, `raw-filterbank`, keeps the linear filterbank energies and
//! exists mostly for checking the additive spectral decomposition.

mod audio;
pub mod container;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

pub use audio::AudioSegment;

use crate::error::{Error, Result};

pub const DEFAULT_ENERGY_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FeatureSpace {
    #[serde(rename = "MFCC0d26")]
    Mfcc0d26,
    #[serde(rename = "LogMelFBd42")]
    LogMelFbd42,
    #[serde(rename = "raw-filterbank")]
    RawFilterbank,
}

impl FeatureSpace {
    pub fn as_str(&self) -> &'static str {
        match self {
            FeatureSpace::Mfcc0d26 => "MFCC0d26",
            FeatureSpace::LogMelFbd42 => "LogMelFBd42",
            FeatureSpace::RawFilterbank => "raw-filterbank",
        }
    }

    pub(crate) fn code(&self) -> u8 {
        match self {
            FeatureSpace::Mfcc0d26 => 1,
            FeatureSpace::LogMelFbd42 => 2,
            FeatureSpace::RawFilterbank => 3,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(FeatureSpace::Mfcc0d26),
            2 => Some(FeatureSpace::LogMelFbd42),
            3 => Some(FeatureSpace::RawFilterbank),
            _ => None,
        }
    }
}

impl fmt::Display for FeatureSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeatureSpace {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "MFCC0d26" | "mfcc0d26" | "mfcc" => Ok(FeatureSpace::Mfcc0d26),
            "LogMelFBd42" | "logmelfbd42" | "logmel" => Ok(FeatureSpace::LogMelFbd42),
            "raw-filterbank" => Ok(FeatureSpace::RawFilterbank),
            other => Err(Error::InvalidConfig(format!("unknown feature space {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    Hamming,
    Hann,
    Rectangular,
}

impl WindowKind {
    pub fn coefficients(&self, len: usize) -> Vec<f64> {
        let denom = (len.max(2) - 1) as f64;
        (0..len)
            .map(|n| {
                let phase = 2.0 * std::f64::consts::PI * n as f64 / denom;
                match self {
                    WindowKind::Hamming => 0.54 - 0.46 * phase.cos(),
                    WindowKind::Hann => 0.5 - 0.5 * phase.cos(),
                    WindowKind::Rectangular => 1.0,
                }
            })
            .collect()
    }
}

/// Front-end parameters. Lengths are in samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub frame_length: usize,
    pub hop_length: usize,
    pub window: WindowKind,
    pub fft_size: usize,
    pub num_filters: usize,
    pub num_cepstra: usize,
    pub delta_window: usize,
    pub space: FeatureSpace,
    pub low_freq_hz: f64,
    /// Upper band edge; `None` means Nyquist.
    pub high_freq_hz: Option<f64>,
    pub energy_floor: f64,
}

impl FeatureConfig {
    /// 25 ms frames, 10 ms hop, 256-point FFT at 8 kHz; 13 filters, 13 cepstra.
    pub fn mfcc0d26() -> Self {
        Self {
            frame_length: 200,
            hop_length: 80,
            window: WindowKind::Hamming,
            fft_size: 256,
            num_filters: 13,
            num_cepstra: 13,
            delta_window: 2,
            space: FeatureSpace::Mfcc0d26,
            low_freq_hz: 64.0,
            high_freq_hz: None,
            energy_floor: DEFAULT_ENERGY_FLOOR,
        }
    }

    /// Same framing as [`FeatureConfig::mfcc0d26`] with 21 log mel energies.
    pub fn log_mel_fbd42() -> Self {
        Self {
            num_filters: 21,
            num_cepstra: 21,
            space: FeatureSpace::LogMelFbd42,
            ..Self::mfcc0d26()
        }
    }

    pub fn raw_filterbank(num_filters: usize) -> Self {
        Self {
            num_filters,
            num_cepstra: num_filters,
            space: FeatureSpace::RawFilterbank,
            ..Self::mfcc0d26()
        }
    }

    pub fn for_space(space: FeatureSpace) -> Self {
        match space {
            FeatureSpace::Mfcc0d26 => Self::mfcc0d26(),
            FeatureSpace::LogMelFbd42 => Self::log_mel_fbd42(),
            FeatureSpace::RawFilterbank => Self::raw_filterbank(13),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.frame_length == 0 || self.hop_length == 0 {
            return bad("frame and hop lengths must be positive");
        }
        if self.frame_length > self.fft_size {
            return bad("frame_length exceeds fft_size");
        }
        if self.num_filters == 0 || self.num_cepstra == 0 {
            return bad("filter and cepstrum counts must be positive");
        }
        if self.num_cepstra > self.num_filters {
            return bad("num_cepstra exceeds num_filters");
        }
        if self.delta_window == 0 {
            return bad("delta_window must be at least 1");
        }
        if self.space == FeatureSpace::Mfcc0d26 && (self.num_filters != 13 || self.num_cepstra != 13) {
            return bad("MFCC0d26 requires 13 filters and 13 cepstra");
        }
        if !(self.energy_floor > 0.0) {
            return bad("energy floor must be positive");
        }
        Ok(())
    }

    /// Length of the static part of a feature vector.
    pub fn static_dim(&self) -> usize {
        match self.space {
            FeatureSpace::Mfcc0d26 => self.num_cepstra,
            FeatureSpace::LogMelFbd42 | FeatureSpace::RawFilterbank => self.num_filters,
        }
    }

    pub fn dim(&self) -> usize {
        2 * self.static_dim()
    }

    pub fn frame_count(&self, num_samples: usize) -> usize {
        if num_samples < self.frame_length {
            0
        } else {
            (num_samples - self.frame_length) / self.hop_length + 1
        }
    }
}

/// Static coefficients and their first-order deltas for one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub statics: Vec<f64>,
    pub deltas: Vec<f64>,
    pub space: FeatureSpace,
}

impl FeatureVector {
    pub fn dim(&self) -> usize {
        self.statics.len() + self.deltas.len()
    }

    /// `[statics, deltas]` as one vector.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dim());
        v.extend_from_slice(&self.statics);
        v.extend_from_slice(&self.deltas);
        v
    }

    pub fn from_concatenated(values: &[f64], space: FeatureSpace) -> Self {
        let half = values.len() / 2;
        Self {
            statics: values[..half].to_vec(),
            deltas: values[half..].to_vec(),
            space,
        }
    }
}

/// Triangular mel-spaced filters, one dense row per filter.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterbankMatrix {
    rows: Vec<Vec<f64>>,
    num_bins: usize,
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

impl FilterbankMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let num_bins = rows.first().map_or(0, Vec::len);
        if rows.is_empty() || num_bins == 0 {
            return Err(Error::Empty("filterbank rows"));
        }
        for row in &rows {
            if row.len() != num_bins {
                return Err(Error::DimensionMismatch {
                    expected: num_bins,
                    got: row.len(),
                });
            }
            if row.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
                return Err(Error::InvalidConfig("filter weights must be finite and >= 0".into()));
            }
        }
        Ok(Self { rows, num_bins })
    }

    /// HTK-style filters: triangles that are linear in mel between equally
    /// spaced mel centres.
    pub fn mel(num_filters: usize, fft_size: usize, sample_rate: u32, low_hz: f64, high_hz: f64) -> Result<Self> {
        let nyquist = sample_rate as f64 / 2.0;
        if !(low_hz >= 0.0 && high_hz > low_hz && high_hz <= nyquist) {
            return Err(Error::InvalidConfig(format!(
                "filterbank band [{low_hz}, {high_hz}] invalid for rate {sample_rate}"
            )));
        }
        let num_bins = fft_size / 2 + 1;
        let mel_lo = hz_to_mel(low_hz);
        let mel_hi = hz_to_mel(high_hz);
        let step = (mel_hi - mel_lo) / (num_filters + 1) as f64;
        let centres: Vec<f64> = (0..num_filters + 2).map(|i| mel_lo + step * i as f64).collect();
        let mut rows = vec![vec![0.0; num_bins]; num_filters];
        for k in 0..num_bins {
            let hz = k as f64 * sample_rate as f64 / fft_size as f64;
            if hz < low_hz || hz > high_hz {
                continue;
            }
            let m = hz_to_mel(hz);
            for (i, row) in rows.iter_mut().enumerate() {
                let (left, mid, right) = (centres[i], centres[i + 1], centres[i + 2]);
                let w = if m > left && m <= mid {
                    (m - left) / (mid - left)
                } else if m > mid && m < right {
                    (right - m) / (right - mid)
                } else {
                    0.0
                };
                row[k] = w;
            }
        }
        if let Some(i) = rows.iter().position(|r| r.iter().all(|w| *w == 0.0)) {
            return Err(Error::InvalidConfig(format!(
                "filter {i} covers no FFT bin; use fewer filters or a larger FFT"
            )));
        }
        Ok(Self { rows, num_bins })
    }

    pub fn num_filters(&self) -> usize {
        self.rows.len()
    }

    pub fn num_bins(&self) -> usize {
        self.num_bins
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// `Ȳ_i = Σ_k w_ik P_k`.
    pub fn apply(&self, power: &[f64]) -> Result<Vec<f64>> {
        if power.len() != self.num_bins {
            return Err(Error::DimensionMismatch {
                expected: self.num_bins,
                got: power.len(),
            });
        }
        Ok(self
            .rows
            .iter()
            .map(|row| row.iter().zip(power).map(|(w, p)| w * p).sum())
            .collect())
    }
}

/// Orthonormal DCT-II and its (pseudo-)inverse.
#[derive(Debug, Clone, PartialEq)]
pub struct DctMatrix {
    pub forward: DMatrix<f64>,
    pub inverse: DMatrix<f64>,
}

impl DctMatrix {
    /// Rows are orthonormal, so the transpose is the inverse on the square
    /// path and the pseudo-inverse when truncated.
    pub fn orthonormal(num_cepstra: usize, num_filters: usize) -> Result<Self> {
        if num_cepstra == 0 || num_cepstra > num_filters {
            return Err(Error::InvalidConfig("need 0 < num_cepstra <= num_filters".into()));
        }
        let n = num_filters as f64;
        let forward = DMatrix::from_fn(num_cepstra, num_filters, |k, i| {
            let scale = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
            scale * (std::f64::consts::PI * k as f64 * (i as f64 + 0.5) / n).cos()
        });
        let inverse = forward.transpose();
        Ok(Self { forward, inverse })
    }

    pub fn is_square(&self) -> bool {
        self.forward.is_square()
    }

    pub fn num_filters(&self) -> usize {
        self.forward.ncols()
    }

    pub fn num_cepstra(&self) -> usize {
        self.forward.nrows()
    }

    pub fn to_cepstra(&self, log_energies: &DVector<f64>) -> DVector<f64> {
        &self.forward * log_energies
    }

    pub fn to_log_energies(&self, cepstra: &DVector<f64>) -> DVector<f64> {
        &self.inverse * cepstra
    }
}

/// Splits `seg` into overlapping frames and applies the configured window.
/// A trailing partial frame is dropped.
pub fn frame_and_window(seg: &AudioSegment, cfg: &FeatureConfig) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    let window = cfg.window.coefficients(cfg.frame_length);
    frames_with(seg.samples(), cfg, &window)
}

fn frames_with(samples: &[f64], cfg: &FeatureConfig, window: &[f64]) -> Result<Vec<Vec<f64>>> {
    let count = cfg.frame_count(samples.len());
    if count == 0 {
        return Err(Error::TooShort {
            len: samples.len(),
            needed: cfg.frame_length,
        });
    }
    Ok((0..count)
        .map(|t| {
            let start = t * cfg.hop_length;
            samples[start..start + cfg.frame_length]
                .iter()
                .zip(window)
                .map(|(s, w)| s * w)
                .collect()
        })
        .collect())
}

/// Squared DFT magnitudes of a zero-padded frame, bins `0..=fft_size/2`.
pub fn power_spectrum(frame: &[f64], cfg: &FeatureConfig) -> Result<Vec<f64>> {
    let fft = FftPlanner::new().plan_fft_forward(cfg.fft_size);
    Ok(complex_spectrum(fft.as_ref(), frame, cfg.fft_size)?
        .iter()
        .map(|c| c.norm_sqr())
        .collect())
}

fn complex_spectrum(fft: &dyn Fft<f64>, frame: &[f64], fft_size: usize) -> Result<Vec<Complex64>> {
    if frame.len() > fft_size {
        return Err(Error::DimensionMismatch {
            expected: fft_size,
            got: frame.len(),
        });
    }
    if frame.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("frame"));
    }
    let mut buf: Vec<Complex64> = frame.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    buf.resize(fft_size, Complex64::new(0.0, 0.0));
    fft.process(&mut buf);
    buf.truncate(fft_size / 2 + 1);
    Ok(buf)
}

pub fn filterbank_energies(power: &[f64], fb: &FilterbankMatrix) -> Result<Vec<f64>> {
    fb.apply(power)
}

/// `C · log(max(Ȳ, floor))`.
pub fn cepstra_from_energies(energies: &[f64], dct: &DctMatrix, floor: f64) -> Result<Vec<f64>> {
    if !(floor > 0.0) {
        return Err(Error::InvalidConfig("energy floor must be positive".into()));
    }
    if energies.len() != dct.num_filters() {
        return Err(Error::DimensionMismatch {
            expected: dct.num_filters(),
            got: energies.len(),
        });
    }
    let logs = DVector::from_iterator(energies.len(), energies.iter().map(|e| e.max(floor).ln()));
    Ok(dct.to_cepstra(&logs).as_slice().to_vec())
}

/// Regression deltas `d_t = Σ_θ θ (c_{t+θ} − c_{t−θ}) / (2 Σ_θ θ²)` with the
/// first and last frames replicated past the edges.
pub fn append_deltas(statics: Vec<Vec<f64>>, delta_window: usize, space: FeatureSpace) -> Result<Vec<FeatureVector>> {
    if statics.is_empty() {
        return Err(Error::Empty("static feature sequence"));
    }
    if delta_window == 0 {
        return Err(Error::InvalidConfig("delta_window must be at least 1".into()));
    }
    let t_max = statics.len() as isize - 1;
    let dim = statics[0].len();
    let norm: f64 = 2.0 * (1..=delta_window).map(|th| (th * th) as f64).sum::<f64>();
    let deltas: Vec<Vec<f64>> = (0..statics.len())
        .map(|t| {
            let mut d = vec![0.0; dim];
            for th in 1..=delta_window as isize {
                let ahead = &statics[(t as isize + th).min(t_max) as usize];
                let behind = &statics[(t as isize - th).max(0) as usize];
                for k in 0..dim {
                    d[k] += th as f64 * (ahead[k] - behind[k]);
                }
            }
            d.iter_mut().for_each(|v| *v /= norm);
            d
        })
        .collect();
    Ok(statics
        .into_iter()
        .zip(deltas)
        .map(|(s, d)| FeatureVector {
            statics: s,
            deltas: d,
            space,
        })
        .collect())
}

/// Reusable front-end bound to one sample rate.
#[derive(Clone)]
pub struct FeatureExtractor {
    cfg: FeatureConfig,
    sample_rate: u32,
    window: Vec<f64>,
    filterbank: FilterbankMatrix,
    dct: DctMatrix,
    fft: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for FeatureExtractor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FeatureExtractor")
            .field("cfg", &self.cfg)
            .field("sample_rate", &self.sample_rate)
            .finish()
    }
}

impl FeatureExtractor {
    pub fn new(cfg: &FeatureConfig, sample_rate: u32) -> Result<Self> {
        cfg.validate()?;
        let high = cfg.high_freq_hz.unwrap_or(sample_rate as f64 / 2.0);
        let filterbank = FilterbankMatrix::mel(cfg.num_filters, cfg.fft_size, sample_rate, cfg.low_freq_hz, high)?;
        let dct = DctMatrix::orthonormal(cfg.num_cepstra, cfg.num_filters)?;
        let fft = FftPlanner::new().plan_fft_forward(cfg.fft_size);
        Ok(Self {
            cfg: cfg.clone(),
            sample_rate,
            window: cfg.window.coefficients(cfg.frame_length),
            filterbank,
            dct,
            fft,
        })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.cfg
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn filterbank(&self) -> &FilterbankMatrix {
        &self.filterbank
    }

    pub fn dct(&self) -> &DctMatrix {
        &self.dct
    }

    fn check_rate(&self, seg: &AudioSegment) -> Result<()> {
        if seg.sample_rate() != self.sample_rate {
            return Err(Error::InvalidConfig(format!(
                "extractor built for {} Hz, segment is {} Hz",
                self.sample_rate,
                seg.sample_rate()
            )));
        }
        Ok(())
    }

    pub fn frames(&self, seg: &AudioSegment) -> Result<Vec<Vec<f64>>> {
        self.check_rate(seg)?;
        frames_with(seg.samples(), &self.cfg, &self.window)
    }

    /// Complex DFT of one windowed frame, bins `0..=fft_size/2`.
    pub fn spectrum(&self, frame: &[f64]) -> Result<Vec<Complex64>> {
        complex_spectrum(self.fft.as_ref(), frame, self.cfg.fft_size)
    }

    pub fn power_spectrum(&self, frame: &[f64]) -> Result<Vec<f64>> {
        Ok(self.spectrum(frame)?.iter().map(|c| c.norm_sqr()).collect())
    }

    /// Per-frame linear filterbank energies.
    pub fn filterbank_energies(&self, seg: &AudioSegment) -> Result<Vec<Vec<f64>>> {
        self.frames(seg)?
            .iter()
            .map(|f| self.filterbank.apply(&self.power_spectrum(f)?))
            .collect()
    }

    /// Static coefficients for each frame in the configured space.
    pub fn statics(&self, seg: &AudioSegment) -> Result<Vec<Vec<f64>>> {
        let floor = self.cfg.energy_floor;
        self.filterbank_energies(seg)?
            .into_iter()
            .map(|e| match self.cfg.space {
                FeatureSpace::Mfcc0d26 => cepstra_from_energies(&e, &self.dct, floor),
                FeatureSpace::LogMelFbd42 => Ok(e.iter().map(|v| v.max(floor).ln()).collect()),
                FeatureSpace::RawFilterbank => Ok(e),
            })
            .collect()
    }

    pub fn extract(&self, seg: &AudioSegment) -> Result<Vec<FeatureVector>> {
        let statics = self.statics(seg)?;
        append_deltas(statics, self.cfg.delta_window, self.cfg.space)
    }
}

/// Full front-end for one segment.
pub fn extract_features(seg: &AudioSegment, cfg: &FeatureConfig) -> Result<Vec<FeatureVector>> {
    FeatureExtractor::new(cfg, seg.sample_rate())?.extract(seg)
}
