//! Seeded synthetic corpus: small-vocabulary "words" built from narrow-band
//! formant segments and Markov-switched band-pass noises.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::AudioSegment;
use crate::math::{derive_seed, rng_for};

const FORMANT_Q: f64 = 8.0;
const WORD_SECONDS: (f64, f64) = (0.25, 0.4);
const SEGMENT_PARTIALS: (usize, usize) = (1, 2);
const PARTIAL_BAND: (f64, f64) = (300.0, 2500.0);

/// One partial of a word segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Partial {
    pub freq_hz: f64,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordClass {
    pub id: String,
    /// Duration range in seconds.
    pub duration: (f64, f64),
    /// Consecutive spectral segments, each a sum of partials.
    pub segments: Vec<Vec<Partial>>,
    /// Partials are narrow noise bands of this quality factor when set,
    /// pure sinusoids otherwise.
    pub formant_q: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseState {
    pub centre_hz: f64,
    pub q: f64,
    /// RMS level in dB re full scale.
    pub level_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseProfile {
    pub id: String,
    pub states: Vec<NoiseState>,
    /// Mean state dwell in 10 ms chunks.
    pub mean_dwell: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticVocabulary {
    pub sample_rate: u32,
    pub word_classes: Vec<WordClass>,
    pub noise_profiles: Vec<NoiseProfile>,
    /// Length of each generated noise recording in seconds.
    pub noise_seconds: f64,
    /// Peak word amplitude.
    pub word_amplitude: f64,
    /// RMS of the white dither added to every utterance.
    pub dither: f64,
}

impl SyntheticVocabulary {
    /// Random word templates of three segments, each a few narrow formant
    /// bands, plus a 2-state noise whose states emphasise low and high
    /// frequencies.
    pub fn generate(num_words: usize, seed: u64) -> Self {
        let mut rng = rng_for(seed, &[0x766f63]);
        let word_classes = (0..num_words)
            .map(|w| {
                let segments = (0..3)
                    .map(|_| {
                        let count = rng.random_range(SEGMENT_PARTIALS.0..=SEGMENT_PARTIALS.1);
                        let mut partials: Vec<Partial> = (0..count)
                            .map(|_| Partial {
                                freq_hz: rng.random_range(PARTIAL_BAND.0..PARTIAL_BAND.1),
                                amplitude: rng.random_range(0.3..1.0),
                            })
                            .collect();
                        partials.sort_by(|a, b| a.freq_hz.total_cmp(&b.freq_hz));
                        partials
                    })
                    .collect();
                WordClass {
                    id: format!("w{w}"),
                    duration: WORD_SECONDS,
                    segments,
                    formant_q: Some(FORMANT_Q),
                }
            })
            .collect();
        Self {
            sample_rate: 8000,
            word_classes,
            noise_profiles: vec![NoiseProfile::two_band("babble2", 50.0)],
            noise_seconds: 60.0,
            word_amplitude: 0.25,
            dither: 1e-4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.word_classes.len() < 2 {
            return Err(Error::InvalidConfig("at least two word classes are required".into()));
        }
        if self.sample_rate == 0 {
            return Err(Error::InvalidConfig("sample rate must be positive".into()));
        }
        for w in &self.word_classes {
            if w.segments.is_empty() || !(w.duration.0 > 0.0 && w.duration.1 >= w.duration.0) {
                return Err(Error::InvalidConfig(format!("word class {} is malformed", w.id)));
            }
        }
        for p in &self.noise_profiles {
            if p.states.is_empty() {
                return Err(Error::InvalidConfig(format!("noise profile {} has no states", p.id)));
            }
            if !(p.mean_dwell >= 1.0) {
                return Err(Error::InvalidConfig("mean dwell must be at least one chunk".into()));
            }
        }
        Ok(())
    }

    pub fn word_ids(&self) -> Vec<String> {
        self.word_classes.iter().map(|w| w.id.clone()).collect()
    }
}

impl NoiseProfile {
    /// Two band-limited states inside the speech band, at equal level.
    pub fn two_band(id: &str, mean_dwell: f64) -> Self {
        Self {
            id: id.to_string(),
            states: vec![
                NoiseState {
                    centre_hz: 700.0,
                    q: 2.0,
                    level_db: -26.0,
                },
                NoiseState {
                    centre_hz: 1800.0,
                    q: 2.0,
                    level_db: -26.0,
                },
            ],
            mean_dwell,
        }
    }

    /// Unfiltered stationary white noise.
    pub fn white(id: &str, level_db: f64) -> Self {
        Self {
            id: id.to_string(),
            states: vec![NoiseState {
                centre_hz: 0.0,
                q: 0.0,
                level_db,
            }],
            mean_dwell: 1.0,
        }
    }
}

/// Sample range `[start, end)` occupied by one word.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordSpan {
    pub word: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledUtterance {
    pub id: String,
    pub audio: AudioSegment,
    pub transcript: Vec<String>,
    pub words: Vec<WordSpan>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedNoise {
    pub id: String,
    pub audio: AudioSegment,
    /// Active state per 10 ms chunk.
    pub states: Vec<usize>,
    pub chunk: usize,
}

impl GeneratedNoise {
    pub fn from_audio(id: &str, audio: AudioSegment) -> Self {
        let chunk = (audio.sample_rate() as usize / 100).max(1);
        Self {
            id: id.to_string(),
            states: vec![0; audio.len().div_ceil(chunk)],
            chunk,
            audio,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub utterances: Vec<LabeledUtterance>,
    pub noises: Vec<GeneratedNoise>,
}

fn render_word(class: &WordClass, rate: f64, amplitude: f64, rng: &mut impl Rng) -> Vec<f64> {
    let secs = rng.random_range(class.duration.0..=class.duration.1);
    let len = (secs * rate).round() as usize;
    let segs = class.segments.len();
    let seg_len = len as f64 / segs as f64;
    let mut out = vec![0.0; len];
    for (s, partials) in class.segments.iter().enumerate() {
        // raised-cosine envelope over the segment, overlapping its neighbours by a quarter
        let centre = (s as f64 + 0.5) * seg_len;
        let half = 0.75 * seg_len;
        for p in partials {
            let f = p.freq_hz * (1.0 + rng.random_range(-0.02..0.02));
            let a = p.amplitude * (1.0 + rng.random_range(-0.1..0.1));
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            let lo = (centre - half).max(0.0) as usize;
            let hi = ((centre + half).ceil() as usize).min(len);
            let carrier: Vec<f64> = match class.formant_q {
                Some(q) => {
                    let white: Vec<f64> = (lo..hi).map(|_| StandardNormal.sample(&mut *rng)).collect();
                    let band = band_pass(&white, f, q, rate);
                    let rms = (band.iter().map(|v| v * v).sum::<f64>() / band.len().max(1) as f64).sqrt();
                    band.iter()
                        .map(|v| v * std::f64::consts::SQRT_2 / rms.max(1e-300))
                        .collect()
                }
                None => (lo..hi)
                    .map(|t| (std::f64::consts::TAU * f * t as f64 / rate + phase).sin())
                    .collect(),
            };
            for (t, o) in out.iter_mut().enumerate().take(hi).skip(lo) {
                let u = (t as f64 - centre) / half;
                let env = 0.5 * (1.0 + (std::f64::consts::PI * u).cos());
                *o += a * env * carrier[t - lo];
            }
        }
    }
    // fade the word edges
    let fade = ((0.02 * rate) as usize).min(len / 2);
    for t in 0..fade {
        let g = 0.5 * (1.0 - (std::f64::consts::PI * t as f64 / fade as f64).cos());
        out[t] *= g;
        out[len - 1 - t] *= g;
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        out.iter_mut().for_each(|v| *v *= amplitude / peak);
    }
    out
}

/// Generates `num_utterances` utterances of `words.0..=words.1` words each,
/// plus one noise recording per noise profile.
pub fn generate_synthetic_corpus(
    vocab: &SyntheticVocabulary,
    num_utterances: usize,
    words: (usize, usize),
    seed: u64,
) -> Result<SyntheticCorpus> {
    vocab.validate()?;
    if words.0 == 0 || words.1 < words.0 {
        return Err(Error::InvalidConfig(
            "word count range must satisfy 1 <= min <= max".into(),
        ));
    }
    let rate = vocab.sample_rate as f64;
    let mut utterances = Vec::with_capacity(num_utterances);
    for u in 0..num_utterances {
        let useed = derive_seed(seed, &[0x757474, u as u64]);
        let mut rng = rng_for(useed, &[]);
        let count = rng.random_range(words.0..=words.1);
        let mut samples = vec![0.0; (rng.random_range(0.1..0.2) * rate) as usize];
        let mut transcript = Vec::with_capacity(count);
        let mut spans = Vec::with_capacity(count);
        for k in 0..count {
            if k > 0 {
                let gap = (rng.random_range(0.05..0.15) * rate) as usize;
                samples.extend(std::iter::repeat_n(0.0, gap));
            }
            let class = &vocab.word_classes[rng.random_range(0..vocab.word_classes.len())];
            let w = render_word(class, rate, vocab.word_amplitude, &mut rng);
            let start = samples.len();
            samples.extend(w);
            spans.push(WordSpan {
                word: class.id.clone(),
                start,
                end: samples.len(),
            });
            transcript.push(class.id.clone());
        }
        samples.extend(std::iter::repeat_n(0.0, (rng.random_range(0.1..0.2) * rate) as usize));
        for s in samples.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *s += vocab.dither * z;
        }
        utterances.push(LabeledUtterance {
            id: format!("u{u:05}"),
            audio: AudioSegment::new(samples, vocab.sample_rate)?,
            transcript,
            words: spans,
            seed: useed,
        });
    }
    let noise_len = (vocab.noise_seconds * rate) as usize;
    let noises = vocab
        .noise_profiles
        .iter()
        .enumerate()
        .map(|(p, profile)| {
            generate_noise(
                profile,
                vocab.sample_rate,
                noise_len,
                derive_seed(seed, &[0x6e6f, p as u64]),
            )
        })
        .collect::<Result<_>>()?;
    Ok(SyntheticCorpus { utterances, noises })
}

/// RBJ constant-peak band-pass biquad applied to `x`.
fn band_pass(x: &[f64], centre_hz: f64, q: f64, rate: f64) -> Vec<f64> {
    let w0 = std::f64::consts::TAU * centre_hz / rate;
    let alpha = w0.sin() / (2.0 * q);
    let a0 = 1.0 + alpha;
    let (b0, b2) = (alpha / a0, -alpha / a0);
    let (a1, a2) = (-2.0 * w0.cos() / a0, (1.0 - alpha) / a0);
    let mut out = Vec::with_capacity(x.len());
    let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
    for &v in x {
        let y = b0 * v + b2 * x2 - a1 * y1 - a2 * y2;
        x2 = x1;
        x1 = v;
        y2 = y1;
        y1 = y;
        out.push(y);
    }
    out
}

/// Markov-switched noise: each state is band-passed white noise at its own
/// level, and the active state is redrawn every 10 ms chunk with stay
/// probability `1 − 1/mean_dwell`.
pub fn generate_noise(profile: &NoiseProfile, sample_rate: u32, len: usize, seed: u64) -> Result<GeneratedNoise> {
    if profile.states.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "noise profile {} has no states",
            profile.id
        )));
    }
    let rate = sample_rate as f64;
    let chunk = (sample_rate as usize / 100).max(1);
    let mut rng = rng_for(seed, &[0x6e7374]);
    let streams: Vec<Vec<f64>> = profile
        .states
        .iter()
        .map(|st| {
            let white: Vec<f64> = (0..len).map(|_| StandardNormal.sample(&mut rng)).collect();
            let mut s = if st.q > 0.0 && st.centre_hz > 0.0 {
                band_pass(&white, st.centre_hz, st.q, rate)
            } else {
                white
            };
            let rms = (s.iter().map(|v| v * v).sum::<f64>() / len.max(1) as f64).sqrt();
            let target = 10f64.powf(st.level_db / 20.0);
            if rms > 0.0 {
                s.iter_mut().for_each(|v| *v *= target / rms);
            }
            s
        })
        .collect();
    let stay = 1.0 - 1.0 / profile.mean_dwell;
    let chunks = len.div_ceil(chunk);
    let mut states = Vec::with_capacity(chunks);
    let mut current = rng.random_range(0..profile.states.len());
    for c in 0..chunks {
        if c > 0 && profile.states.len() > 1 && rng.random::<f64>() >= stay {
            let other = rng.random_range(0..profile.states.len() - 1);
            current = if other >= current { other + 1 } else { other };
        }
        states.push(current);
    }
    let samples: Vec<f64> = (0..len).map(|t| streams[states[t / chunk]][t]).collect();
    Ok(GeneratedNoise {
        id: profile.id.clone(),
        audio: AudioSegment::new(samples, sample_rate)?,
        states,
        chunk,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{FeatureConfig, FeatureExtractor};

    #[test]
    fn same_seed_same_corpus() {
        let vocab = SyntheticVocabulary {
            noise_seconds: 2.0,
            ..SyntheticVocabulary::generate(4, 1)
        };
        let a = generate_synthetic_corpus(&vocab, 3, (1, 3), 7).unwrap();
        let b = generate_synthetic_corpus(&vocab, 3, (1, 3), 7).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic_corpus(&vocab, 3, (1, 3), 8).unwrap();
        assert_ne!(a.utterances[0].audio, c.utterances[0].audio);
        for u in &a.utterances {
            assert_eq!(u.transcript.len(), u.words.len());
            assert!((1..=3).contains(&u.transcript.len()));
        }
    }

    #[test]
    fn zero_utterances() {
        let vocab = SyntheticVocabulary {
            noise_seconds: 0.5,
            ..SyntheticVocabulary::generate(2, 1)
        };
        assert!(generate_synthetic_corpus(&vocab, 0, (1, 2), 0)
            .unwrap()
            .utterances
            .is_empty());
    }

    #[test]
    fn vocabulary_needs_two_words() {
        let vocab = SyntheticVocabulary::generate(1, 1);
        assert!(generate_synthetic_corpus(&vocab, 1, (1, 1), 0).is_err());
    }

    #[test]
    fn noise_regimes_are_distinguishable() {
        let profile = NoiseProfile::two_band("n", 50.0);
        let noise = generate_noise(&profile, 8000, 8000 * 20, 3).unwrap();
        let cfg = FeatureConfig::log_mel_fbd42();
        let fx = FeatureExtractor::new(&cfg, 8000).unwrap();
        let logs: Vec<Vec<f64>> = fx
            .filterbank_energies(&noise.audio)
            .unwrap()
            .into_iter()
            .map(|e| e.iter().map(|v| v.max(1e-10).ln()).collect())
            .collect();
        // label each frame by the state of its centre chunk
        let labels: Vec<usize> = (0..logs.len())
            .map(|t| {
                noise.states[((t * cfg.hop_length + cfg.frame_length / 2) / noise.chunk).min(noise.states.len() - 1)]
            })
            .collect();
        let dim = logs[0].len();
        let mut templates = vec![vec![0.0; dim]; 2];
        let mut counts = [0usize; 2];
        for (l, s) in logs.iter().zip(&labels) {
            counts[*s] += 1;
            templates[*s].iter_mut().zip(l).for_each(|(a, b)| *a += b);
        }
        assert!(counts.iter().all(|c| *c > 100));
        for (t, c) in templates.iter_mut().zip(counts) {
            t.iter_mut().for_each(|v| *v /= c as f64);
        }
        let corr = |a: &[f64], b: &[f64]| {
            let ma = a.iter().sum::<f64>() / a.len() as f64;
            let mb = b.iter().sum::<f64>() / b.len() as f64;
            let num: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
            let da: f64 = a.iter().map(|x| (x - ma).powi(2)).sum::<f64>().sqrt();
            let db: f64 = b.iter().map(|y| (y - mb).powi(2)).sum::<f64>().sqrt();
            num / (da * db)
        };
        let correct = logs
            .iter()
            .zip(&labels)
            .filter(|(l, s)| {
                let guess = if corr(l, &templates[0]) >= corr(l, &templates[1]) {
                    0
                } else {
                    1
                };
                guess == **s
            })
            .count();
        assert!(correct as f64 / logs.len() as f64 > 0.9, "{correct}/{}", logs.len());
    }

    #[test]
    fn white_noise_is_single_state() {
        let noise = generate_noise(&NoiseProfile::white("w", -20.0), 8000, 16_000, 1).unwrap();
        assert!(noise.states.iter().all(|s| *s == 0));
        let rms = (noise.audio.samples().iter().map(|v| v * v).sum::<f64>() / 16_000.0).sqrt();
        assert!((20.0 * rms.log10() + 20.0).abs() < 1e-9);
    }
}
