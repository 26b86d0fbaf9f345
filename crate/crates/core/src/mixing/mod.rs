//! Environment model `y = x ∗ h + g·n`: level metering, SNR-controlled
//! mixing and stereo (x, n, y) feature extraction.

mod synth;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{AudioSegment, FeatureConfig, FeatureExtractor, FeatureVector};
use crate::math::{derive_seed, rng_for};

pub use synth::{
    generate_noise, generate_synthetic_corpus, GeneratedNoise, LabeledUtterance, NoiseProfile, NoiseState,
    SyntheticCorpus, SyntheticVocabulary, WordClass, WordSpan,
};

/// Activity threshold below the peak block energy.
pub const ACTIVITY_THRESHOLD_DB: f64 = 15.9;
pub const HANGOVER_SECS: f64 = 0.2;
pub const BLOCK_SECS: f64 = 0.01;

/// Level of the active part of a speech segment, in dB re full scale.
///
/// The signal is cut into 10 ms blocks; a block is active when its mean
/// square lies within 15.9 dB of the loudest block, and activity is held for
/// 200 ms after each active block. The level is the mean square over active
/// samples.
pub fn active_level_db(seg: &AudioSegment) -> Result<f64> {
    if seg.is_empty() {
        return Err(Error::Empty("audio segment"));
    }
    let s = seg.samples();
    let block = ((seg.sample_rate() as f64 * BLOCK_SECS).round() as usize).max(1);
    let energies: Vec<f64> = s
        .chunks(block)
        .map(|c| c.iter().map(|v| v * v).sum::<f64>() / c.len() as f64)
        .collect();
    let peak = energies.iter().copied().fold(0.0, f64::max);
    if !(peak > 0.0) {
        return Err(Error::NoActiveSpeech);
    }
    let threshold = peak * 10f64.powf(-ACTIVITY_THRESHOLD_DB / 10.0);
    let hang_blocks = (HANGOVER_SECS / BLOCK_SECS).round() as usize;
    let mut hold = 0usize;
    let mut sum = 0.0;
    let mut count = 0usize;
    for (b, chunk) in s.chunks(block).enumerate() {
        if energies[b] >= threshold {
            hold = hang_blocks + 1;
        }
        if hold > 0 {
            hold -= 1;
            sum += chunk.iter().map(|v| v * v).sum::<f64>();
            count += chunk.len();
        }
    }
    Ok(10.0 * (sum / count as f64).log10())
}

/// Mean-square level of a whole segment in dB; `-inf` for silence.
pub fn mean_level_db(seg: &AudioSegment) -> Result<f64> {
    if seg.is_empty() {
        return Err(Error::Empty("audio segment"));
    }
    let ms = seg.samples().iter().map(|v| v * v).sum::<f64>() / seg.len() as f64;
    Ok(10.0 * ms.log10())
}

/// `g = 10^((L_s − L_n − SNR)/20)`; zero for an infinite SNR.
pub fn gain_for_snr(speech_level_db: f64, noise_level_db: f64, target_snr_db: f64) -> f64 {
    if target_snr_db == f64::INFINITY {
        return 0.0;
    }
    10f64.powf((speech_level_db - noise_level_db - target_snr_db) / 20.0)
}

/// Signal-to-noise ratio in dB, with `inf` for clean speech.
///
/// Serialises as a number, or the string `"inf"` for clean speech; either
/// form is accepted when reading.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Snr(pub f64);

impl Serialize for Snr {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.is_clean() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Snr {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Number(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Number(v) if v == f64::INFINITY => Ok(Snr::CLEAN),
            Repr::Number(v) => format!("{v}").parse().map_err(serde::de::Error::custom),
            Repr::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

impl Snr {
    pub const CLEAN: Snr = Snr(f64::INFINITY);

    pub fn db(&self) -> f64 {
        self.0
    }

    pub fn is_clean(&self) -> bool {
        self.0 == f64::INFINITY
    }
}

impl fmt::Display for Snr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_clean() {
            write!(f, "inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

impl FromStr for Snr {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "inf" | "clean" | "Inf" | "infinity" => Ok(Snr::CLEAN),
            t => t
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .map(Snr)
                .ok_or_else(|| Error::InvalidConfig(format!("invalid SNR `{s}`"))),
        }
    }
}

/// The paper-style SNR sweep `{∞, 20, 15, 10, 5, 0, −5}`.
pub fn standard_snrs() -> Vec<Snr> {
    [f64::INFINITY, 20.0, 15.0, 10.0, 5.0, 0.0, -5.0]
        .into_iter()
        .map(Snr)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvironmentSpec {
    /// Channel impulse response; `None` is the identity channel.
    pub channel: Option<Vec<f64>>,
    pub target_snr: Snr,
    pub seed: u64,
}

impl EnvironmentSpec {
    pub fn additive(target_snr: Snr, seed: u64) -> Self {
        Self {
            channel: None,
            target_snr,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    /// Corrupted signal.
    pub y: AudioSegment,
    /// Speech after the channel.
    pub speech: AudioSegment,
    /// Noise as it enters the mixture, `g·n[offset..]`.
    pub noise: AudioSegment,
    pub gain: f64,
    pub offset: usize,
}

fn convolve_truncated(x: &[f64], h: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|t| h.iter().enumerate().take(t + 1).map(|(k, hk)| hk * x[t - k]).sum())
        .collect()
}

/// `y = x ∗ h + g·n`, taking the noise from a seeded uniform offset.
pub fn mix(x: &AudioSegment, n: &AudioSegment, env: &EnvironmentSpec) -> Result<Mixture> {
    if x.sample_rate() != n.sample_rate() {
        return Err(Error::InvalidConfig("speech and noise sample rates differ".into()));
    }
    if n.len() < x.len() {
        return Err(Error::NoiseTooShort {
            available: n.len(),
            needed: x.len(),
        });
    }
    let speech = match &env.channel {
        Some(h) => {
            if h.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("channel impulse response"));
            }
            AudioSegment::new(convolve_truncated(x.samples(), h), x.sample_rate())?
        }
        None => x.clone(),
    };
    let mut rng = rng_for(env.seed, &[0x6d6978]);
    let offset = rng.random_range(0..=n.len() - x.len());
    let segment = n.slice(offset, x.len())?;
    let gain = if env.target_snr.is_clean() {
        0.0
    } else {
        let ls = active_level_db(&speech)?;
        let ln = mean_level_db(&segment)?;
        if !ln.is_finite() {
            return Err(Error::Numerical("noise segment is silent".into()));
        }
        gain_for_snr(ls, ln, env.target_snr.db())
    };
    let noise = segment.scaled(gain);
    let y: Vec<f64> = speech
        .samples()
        .iter()
        .zip(noise.samples())
        .map(|(a, b)| a + b)
        .collect();
    Ok(Mixture {
        y: AudioSegment::new(y, x.sample_rate())?,
        speech,
        noise,
        gain,
        offset,
    })
}

/// Frame-aligned clean, noise and corrupted features of one mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct StereoUtterance {
    pub id: String,
    pub x_features: Vec<FeatureVector>,
    pub n_features: Vec<FeatureVector>,
    /// Corrupted features in the observation space.
    pub y_features: Vec<FeatureVector>,
    pub transcript: Vec<String>,
    pub snr: Snr,
    pub noise_id: String,
    pub seed: u64,
}

/// Mixes every utterance with `noise` at every SNR and extracts x and n in
/// the source space and y in the observation space (defaults to the source
/// space). All three streams share the framing.
pub fn make_stereo_corpus(
    utterances: &[LabeledUtterance],
    noise: &GeneratedNoise,
    snrs: &[Snr],
    source_cfg: &FeatureConfig,
    observation_cfg: Option<&FeatureConfig>,
    seed: u64,
) -> Result<Vec<StereoUtterance>> {
    if snrs.is_empty() {
        return Err(Error::Empty("SNR list"));
    }
    let Some(first) = utterances.first() else {
        return Ok(Vec::new());
    };
    let rate = first.audio.sample_rate();
    let source = FeatureExtractor::new(source_cfg, rate)?;
    let observation = match observation_cfg {
        Some(cfg) => {
            if cfg.frame_length != source_cfg.frame_length || cfg.hop_length != source_cfg.hop_length {
                return Err(Error::InvalidConfig("source and observation framing must agree".into()));
            }
            Some(FeatureExtractor::new(cfg, rate)?)
        }
        None => None,
    };
    let mut out = Vec::with_capacity(utterances.len() * snrs.len());
    for (u, utt) in utterances.iter().enumerate() {
        for (k, snr) in snrs.iter().enumerate() {
            let mix_seed = derive_seed(seed, &[u as u64, k as u64]);
            let m = mix(&utt.audio, &noise.audio, &EnvironmentSpec::additive(*snr, mix_seed))?;
            let x_features = source.extract(&m.speech)?;
            let n_features = source.extract(&m.noise)?;
            let y_features = observation.as_ref().unwrap_or(&source).extract(&m.y)?;
            out.push(StereoUtterance {
                id: format!("{}_{}_{}", utt.id, noise.id, snr),
                x_features,
                n_features,
                y_features,
                transcript: utt.transcript.clone(),
                snr: *snr,
                noise_id: noise.id.clone(),
                seed: mix_seed,
            });
        }
    }
    Ok(out)
}

/// One line of a corpus manifest:
/// `utterance-id  wav-path  transcript  snr_db  noise-id  seed`, tab separated,
/// words in the transcript separated by single spaces.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub utterance_id: String,
    pub wav_path: String,
    pub transcript: Vec<String>,
    pub snr: Snr,
    pub noise_id: String,
    pub seed: u64,
}

impl ManifestEntry {
    pub fn to_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}",
            self.utterance_id,
            self.wav_path,
            self.transcript.join(" "),
            self.snr,
            self.noise_id,
            self.seed
        )
    }

    pub fn parse(line: &str) -> Result<Self> {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 6 {
            return Err(Error::Corrupt(format!(
                "manifest line has {} fields, expected 6",
                fields.len()
            )));
        }
        Ok(Self {
            utterance_id: fields[0].to_string(),
            wav_path: fields[1].to_string(),
            transcript: fields[2].split_whitespace().map(str::to_string).collect(),
            snr: fields[3].parse()?,
            noise_id: fields[4].to_string(),
            seed: fields[5]
                .parse()
                .map_err(|_| Error::Corrupt(format!("bad seed `{}`", fields[5])))?,
        })
    }
}

pub fn read_manifest(text: &str) -> Result<Vec<ManifestEntry>> {
    text.lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .map(ManifestEntry::parse)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn seg(samples: Vec<f64>) -> AudioSegment {
        AudioSegment::new(samples, 8000).unwrap()
    }

    fn random(len: usize, seed: u64, amp: f64) -> AudioSegment {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        seg((0..len).map(|_| amp * rng.random_range(-1.0..1.0)).collect())
    }

    #[test]
    fn constant_amplitude_level() {
        for a in [1.0, 0.5, 0.01] {
            let l = active_level_db(&seg(vec![a; 8000])).unwrap();
            assert!((l - 20.0 * f64::log10(a)).abs() < 1e-9);
        }
    }

    #[test]
    fn silence_is_excluded() {
        let a = 0.3;
        let active: Vec<f64> = (0..40_000).map(|t| a * (t as f64 * 0.7).sin()).collect();
        let mut samples = active.clone();
        samples.extend(vec![0.0; 40_000]);
        let oracle = 10.0 * (active.iter().map(|v| v * v).sum::<f64>() / active.len() as f64).log10();
        let got = active_level_db(&seg(samples)).unwrap();
        // the 200 ms hangover reaches into the silence
        assert!((got - oracle).abs() < 0.25, "{got} vs {oracle}");
    }

    #[test]
    fn all_zero_has_no_speech() {
        assert!(matches!(
            active_level_db(&seg(vec![0.0; 100])),
            Err(Error::NoActiveSpeech)
        ));
    }

    #[test]
    fn gains() {
        assert!((gain_for_snr(-20.0, -20.0, 0.0) - 1.0).abs() < 1e-15);
        assert!((gain_for_snr(-20.0, -20.0, 20.0) - 0.1).abs() < 1e-15);
        assert_eq!(gain_for_snr(-20.0, -30.0, f64::INFINITY), 0.0);
    }

    #[test]
    fn clean_and_silent_mixtures_are_exact() {
        let x = random(4000, 1, 0.3);
        let n = random(9000, 2, 0.1);
        let m = mix(&x, &n, &EnvironmentSpec::additive(Snr::CLEAN, 5)).unwrap();
        assert_eq!(m.y, x);
        let zero = seg(vec![0.0; 4000]);
        let env = EnvironmentSpec {
            channel: None,
            target_snr: Snr(5.0),
            seed: 5,
        };
        // silent speech has no active level; use a fixed gain instead
        assert!(mix(&zero, &n, &env).is_err());
        let m = mix(&x, &n, &env).unwrap();
        let expected: Vec<f64> = n.samples()[m.offset..m.offset + 4000]
            .iter()
            .map(|v| m.gain * v)
            .collect();
        assert_eq!(m.noise.samples(), expected.as_slice());
    }

    #[test]
    fn achieved_snr_matches_target() {
        for (seed, target) in [(1u64, 5.0), (2, -5.0), (3, 20.0)] {
            let x = random(8000, seed, 0.2);
            let n = random(20_000, seed + 100, 0.05);
            let m = mix(&x, &n, &EnvironmentSpec::additive(Snr(target), seed)).unwrap();
            let achieved = active_level_db(&m.speech).unwrap() - mean_level_db(&m.noise).unwrap();
            assert!((achieved - target).abs() < 0.1);
            for ((y, s), v) in m.y.samples().iter().zip(m.speech.samples()).zip(m.noise.samples()) {
                assert_eq!(*y, s + v);
            }
        }
    }

    #[test]
    fn short_noise_is_rejected() {
        let x = random(1000, 1, 0.2);
        let n = random(999, 2, 0.2);
        assert!(matches!(
            mix(&x, &n, &EnvironmentSpec::additive(Snr(0.0), 0)),
            Err(Error::NoiseTooShort {
                available: 999,
                needed: 1000
            })
        ));
    }

    #[test]
    fn mixing_is_linear_in_speech() {
        let x1 = random(3000, 3, 0.2);
        let x2 = random(3000, 4, 0.2);
        let n = random(5000, 5, 0.1);
        let env = EnvironmentSpec {
            channel: Some(vec![1.0, 0.5, -0.2]),
            target_snr: Snr::CLEAN,
            seed: 1,
        };
        let sum = seg(x1.samples().iter().zip(x2.samples()).map(|(a, b)| a + b).collect());
        let a = mix(&x1, &n, &env).unwrap().y;
        let b = mix(&x2, &n, &env).unwrap().y;
        let c = mix(&sum, &n, &env).unwrap().y;
        for ((p, q), r) in a.samples().iter().zip(b.samples()).zip(c.samples()) {
            assert!((p + q - r).abs() < 1e-12);
        }
    }

    #[test]
    fn snr_text() {
        assert!("inf".parse::<Snr>().unwrap().is_clean());
        assert_eq!("-5".parse::<Snr>().unwrap(), Snr(-5.0));
        assert_eq!(standard_snrs().len(), 7);
        assert!("loud".parse::<Snr>().is_err());
    }

    #[test]
    fn manifest_round_trip() {
        let e = ManifestEntry {
            utterance_id: "u001".into(),
            wav_path: "wav/u001.wav".into(),
            transcript: vec!["w0".into(), "w2".into()],
            snr: Snr(10.0),
            noise_id: "hum".into(),
            seed: 99,
        };
        let line = e.to_line();
        assert_eq!(line, "u001\twav/u001.wav\tw0 w2\t10\thum\t99");
        assert_eq!(ManifestEntry::parse(&line).unwrap(), e);
        assert!(ManifestEntry::parse("a\tb").is_err());
    }
}
