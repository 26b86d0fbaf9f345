//! Two-dimensional Viterbi search over a speech chain and a noise chain.
//!
//! With `δ_t(i, j)` the best log score of any joint path ending in speech
//! state `i` and noise state `j` at time `t`, one step is split into a noise
//! stage and a speech stage:
//!
//! ```text
//! τ(i, j′)   = max_j  [ log b(j, j′) + δ_t(i, j) ]        ψⁿ_t(i, j′)
//! σ(i′, j′)  = max_i  [ log a(i, i′) + τ(i, j′) ]         ψˣ_t(i′, j′)
//! δ_{t+1}(i′, j′) = σ(i′, j′) + log p(y_{t+1} | i′, j′)
//! ```
//!
//! The emission attaches after both maximisations, so the recursion is the
//! mega-state recursion with the inner maximum factored out. Ties go to the
//! lowest index, noise stage first, which coincides with the lexicographic
//! tie-break of the mega-state search over `(i, j)`.

mod grammar;

use serde::{Deserialize, Serialize};

pub use grammar::{compose_grammar, transcript_from_path, Grammar, GrammarOptions, StateLabel};

use crate::error::{Error, Result};
use crate::features::FeatureVector;
use crate::hmm::Hmm;
use crate::scod::ScodGrid;

const NEG_INF: f64 = f64::NEG_INFINITY;

/// Log-domain Markov chain (priors and row-major transitions).
#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    log_priors: Vec<f64>,
    log_transitions: Vec<f64>,
}

impl Chain {
    pub fn new(log_priors: Vec<f64>, log_transitions: Vec<f64>) -> Result<Self> {
        let s = log_priors.len();
        if s == 0 {
            return Err(Error::Empty("chain states"));
        }
        if log_transitions.len() != s * s {
            return Err(Error::DimensionMismatch {
                expected: s * s,
                got: log_transitions.len(),
            });
        }
        if log_priors
            .iter()
            .chain(&log_transitions)
            .any(|v| v.is_nan() || *v == f64::INFINITY)
        {
            return Err(Error::NonFinite("chain parameters"));
        }
        Ok(Self {
            log_priors,
            log_transitions,
        })
    }

    pub fn from_hmm(hmm: &Hmm) -> Self {
        Self {
            log_priors: hmm.log_priors(),
            log_transitions: hmm.log_transitions(),
        }
    }

    pub fn num_states(&self) -> usize {
        self.log_priors.len()
    }

    pub fn log_prior(&self, i: usize) -> f64 {
        self.log_priors[i]
    }

    pub fn log_transition(&self, from: usize, to: usize) -> f64 {
        self.log_transitions[from * self.log_priors.len() + to]
    }
}

/// Output of either search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeResult {
    pub speech_path: Vec<usize>,
    pub noise_path: Vec<usize>,
    pub log_likelihood: f64,
    pub word_sequence: Vec<String>,
    /// Score-combine operations (one addition and comparison each).
    pub op_count: u64,
}

/// Sum of log priors, transitions and emissions along a joint path.
pub fn path_score(
    speech: &Chain,
    noise: &Chain,
    emissions: &[Vec<f64>],
    speech_path: &[usize],
    noise_path: &[usize],
) -> f64 {
    let sn = noise.num_states();
    let mut score = speech.log_prior(speech_path[0]) + noise.log_prior(noise_path[0]);
    for t in 0..emissions.len() {
        if t > 0 {
            score += speech.log_transition(speech_path[t - 1], speech_path[t])
                + noise.log_transition(noise_path[t - 1], noise_path[t]);
        }
        score += emissions[t][speech_path[t] * sn + noise_path[t]];
    }
    score
}

fn check_tables(speech: &Chain, noise: &Chain, emissions: &[Vec<f64>]) -> Result<()> {
    if emissions.is_empty() {
        return Err(Error::EmptyObservation);
    }
    let cells = speech.num_states() * noise.num_states();
    if let Some(row) = emissions.iter().find(|r| r.len() != cells) {
        return Err(Error::DimensionMismatch {
            expected: cells,
            got: row.len(),
        });
    }
    Ok(())
}

fn best_final(delta: &[f64]) -> Result<usize> {
    let mut best = 0;
    for k in 1..delta.len() {
        if delta[k] > delta[best] {
            best = k;
        }
    }
    if delta[best] == NEG_INF {
        return Err(Error::Unreachable);
    }
    Ok(best)
}

/// Two-dimensional Viterbi over a precomputed `T × (Sˣ·Sⁿ)` emission table
/// (row-major in `(i, j)`). `beam` prunes joint states more than `beam`
/// below the best score after every frame; `None` disables pruning.
pub fn factorial_viterbi_tables(
    speech: &Chain,
    noise: &Chain,
    emissions: &[Vec<f64>],
    beam: Option<f64>,
) -> Result<DecodeResult> {
    check_tables(speech, noise, emissions)?;
    let (sx, sn) = (speech.num_states(), noise.num_states());
    let t_len = emissions.len();
    let mut delta: Vec<f64> = (0..sx * sn)
        .map(|k| speech.log_priors[k / sn] + noise.log_priors[k % sn] + emissions[0][k])
        .collect();
    prune(&mut delta, beam);
    let mut psi_noise = vec![0u32; (t_len - 1) * sx * sn];
    let mut psi_speech = vec![0u32; (t_len - 1) * sx * sn];
    let mut tau = vec![NEG_INF; sx * sn];
    let mut ops = 0u64;
    for t in 0..t_len - 1 {
        let pn = &mut psi_noise[t * sx * sn..(t + 1) * sx * sn];
        let ps = &mut psi_speech[t * sx * sn..(t + 1) * sx * sn];
        // noise stage
        for i in 0..sx {
            let row = &delta[i * sn..(i + 1) * sn];
            if beam.is_some() && row.iter().all(|v| *v == NEG_INF) {
                tau[i * sn..(i + 1) * sn].iter_mut().for_each(|v| *v = NEG_INF);
                continue;
            }
            for jn in 0..sn {
                let mut best = NEG_INF;
                let mut arg = 0u32;
                for (j, d) in row.iter().enumerate() {
                    let v = noise.log_transitions[j * sn + jn] + d;
                    if v > best {
                        best = v;
                        arg = j as u32;
                    }
                }
                ops += sn as u64;
                tau[i * sn + jn] = best;
                pn[i * sn + jn] = arg;
            }
        }
        // speech stage
        let next = &emissions[t + 1];
        for ix in 0..sx {
            for jn in 0..sn {
                let mut best = NEG_INF;
                let mut arg = 0u32;
                for i in 0..sx {
                    let v = speech.log_transitions[i * sx + ix] + tau[i * sn + jn];
                    if v > best {
                        best = v;
                        arg = i as u32;
                    }
                }
                ops += sx as u64;
                delta[ix * sn + jn] = best + next[ix * sn + jn];
                ps[ix * sn + jn] = arg;
            }
        }
        prune(&mut delta, beam);
    }
    let last = best_final(&delta)?;
    let mut speech_path = vec![0; t_len];
    let mut noise_path = vec![0; t_len];
    speech_path[t_len - 1] = last / sn;
    noise_path[t_len - 1] = last % sn;
    for t in (0..t_len - 1).rev() {
        let (ix, jn) = (speech_path[t + 1], noise_path[t + 1]);
        let i = psi_speech[t * sx * sn + ix * sn + jn] as usize;
        let j = psi_noise[t * sx * sn + i * sn + jn] as usize;
        speech_path[t] = i;
        noise_path[t] = j;
    }
    Ok(DecodeResult {
        speech_path,
        noise_path,
        log_likelihood: delta[last],
        word_sequence: Vec::new(),
        op_count: ops,
    })
}

fn prune(delta: &mut [f64], beam: Option<f64>) {
    if let Some(beam) = beam {
        let best = delta.iter().copied().fold(NEG_INF, f64::max);
        let threshold = best - beam;
        delta.iter_mut().filter(|v| **v < threshold).for_each(|v| *v = NEG_INF);
    }
}

/// Standard Viterbi over the product state space with
/// `log P((i′, j′) | (i, j)) = log a(i, i′) + log b(j, j′)`.
pub fn megastate_viterbi_tables(speech: &Chain, noise: &Chain, emissions: &[Vec<f64>]) -> Result<DecodeResult> {
    check_tables(speech, noise, emissions)?;
    let (sx, sn) = (speech.num_states(), noise.num_states());
    let m = sx * sn;
    let t_len = emissions.len();
    let mut delta: Vec<f64> = (0..m)
        .map(|k| speech.log_priors[k / sn] + noise.log_priors[k % sn] + emissions[0][k])
        .collect();
    let mut psi = vec![0u32; (t_len - 1) * m];
    let mut next = vec![NEG_INF; m];
    let mut ops = 0u64;
    for t in 0..t_len - 1 {
        for to in 0..m {
            let (ix, jn) = (to / sn, to % sn);
            let mut best = NEG_INF;
            let mut arg = 0u32;
            for from in 0..m {
                let (i, j) = (from / sn, from % sn);
                // same association order as the two-stage search
                let v = speech.log_transitions[i * sx + ix] + (noise.log_transitions[j * sn + jn] + delta[from]);
                if v > best {
                    best = v;
                    arg = from as u32;
                }
            }
            ops += m as u64;
            next[to] = best + emissions[t + 1][to];
            psi[t * m + to] = arg;
        }
        std::mem::swap(&mut delta, &mut next);
    }
    let last = best_final(&delta)?;
    let mut joint = vec![0usize; t_len];
    joint[t_len - 1] = last;
    for t in (0..t_len - 1).rev() {
        joint[t] = psi[t * m + joint[t + 1]] as usize;
    }
    Ok(DecodeResult {
        speech_path: joint.iter().map(|k| k / sn).collect(),
        noise_path: joint.iter().map(|k| k % sn).collect(),
        log_likelihood: delta[last],
        word_sequence: Vec::new(),
        op_count: ops,
    })
}

/// Speech grammar, noise chain and observation grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorialModel {
    pub grammar: Grammar,
    pub noise: Hmm,
    pub scod: ScodGrid,
    speech_chain: Chain,
    noise_chain: Chain,
}

impl FactorialModel {
    pub fn new(grammar: Grammar, noise: Hmm, scod: ScodGrid) -> Result<Self> {
        if scod.speech_states() != grammar.inventory_len() || scod.noise_states() != noise.num_states() {
            return Err(Error::DimensionMismatch {
                expected: grammar.inventory_len() * noise.num_states(),
                got: scod.speech_states() * scod.noise_states(),
            });
        }
        Ok(Self {
            speech_chain: Chain::from_hmm(grammar.chain()),
            noise_chain: Chain::from_hmm(&noise),
            grammar,
            noise,
            scod,
        })
    }

    pub fn speech_chain(&self) -> &Chain {
        &self.speech_chain
    }

    pub fn noise_chain(&self) -> &Chain {
        &self.noise_chain
    }

    /// `T × (Sˣ·Sⁿ)` emission table over chain states.
    pub fn emission_tables(&self, frames: &[FeatureVector]) -> Result<Vec<Vec<f64>>> {
        if frames.is_empty() {
            return Err(Error::EmptyObservation);
        }
        if frames[0].space != self.scod.space() {
            return Err(Error::SpaceMismatch {
                expected: self.scod.space().to_string(),
                got: frames[0].space.to_string(),
            });
        }
        let sn = self.scod.noise_states();
        let rows = self.grammar.inventory_index();
        frames
            .iter()
            .map(|f| {
                let table = self.scod.frame_table(&f.to_vec())?;
                Ok(rows
                    .iter()
                    .flat_map(|r| table[r * sn..(r + 1) * sn].iter().copied())
                    .collect())
            })
            .collect()
    }

    pub fn factorial_viterbi(&self, frames: &[FeatureVector], beam: Option<f64>) -> Result<DecodeResult> {
        let tables = self.emission_tables(frames)?;
        let mut r = factorial_viterbi_tables(&self.speech_chain, &self.noise_chain, &tables, beam)?;
        r.word_sequence = transcript_from_path(&r.speech_path, &self.grammar);
        Ok(r)
    }

    pub fn megastate_viterbi(&self, frames: &[FeatureVector]) -> Result<DecodeResult> {
        let tables = self.emission_tables(frames)?;
        let mut r = megastate_viterbi_tables(&self.speech_chain, &self.noise_chain, &tables)?;
        r.word_sequence = transcript_from_path(&r.speech_path, &self.grammar);
        Ok(r)
    }
}
