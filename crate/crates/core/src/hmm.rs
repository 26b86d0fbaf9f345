//! Hidden Markov models with GMM emissions: training (uniform segmentation,
//! Viterbi training, Baum-Welch, mixture splitting) and BIC-driven state
//! selection for noise models.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureSpace;
use crate::gmm::{
    weighted_em_step, weighted_gaussian_fit, Covariance, CovarianceKind, GaussianComponent, Gmm, VarianceFloor,
    WeightedSampleSet,
};
use crate::math::log_sum_exp;

const NEG_INF: f64 = f64::NEG_INFINITY;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Topology {
    LeftToRight,
    Ergodic,
}

/// Markov chain with per-state GMM emissions.
///
/// Left-to-right models keep an explicit exit probability per state so that
/// they can be chained into a grammar; every row satisfies
/// `Σ_j a_ij + exit_i = 1`. Ergodic models have zero exit mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hmm {
    space: FeatureSpace,
    topology: Topology,
    priors: Vec<f64>,
    transitions: Vec<Vec<f64>>,
    exit: Vec<f64>,
    emissions: Vec<Gmm>,
}

impl Hmm {
    pub fn new(
        space: FeatureSpace,
        topology: Topology,
        priors: Vec<f64>,
        transitions: Vec<Vec<f64>>,
        exit: Vec<f64>,
        emissions: Vec<Gmm>,
    ) -> Result<Self> {
        let s = priors.len();
        if s == 0 {
            return Err(Error::Empty("hmm states"));
        }
        if transitions.len() != s || exit.len() != s || emissions.len() != s {
            return Err(Error::DimensionMismatch {
                expected: s,
                got: transitions.len().min(exit.len()).min(emissions.len()),
            });
        }
        let prob = |p: &f64| p.is_finite() && *p >= 0.0;
        if !priors.iter().all(prob) || ((priors.iter().sum::<f64>()) - 1.0).abs() > 1e-10 {
            return Err(Error::Numerical("priors are not a distribution".into()));
        }
        for (row, e) in transitions.iter().zip(&exit) {
            if row.len() != s {
                return Err(Error::DimensionMismatch {
                    expected: s,
                    got: row.len(),
                });
            }
            if !row.iter().all(prob) || !prob(e) || (row.iter().sum::<f64>() + e - 1.0).abs() > 1e-10 {
                return Err(Error::Numerical("transition row is not stochastic".into()));
            }
        }
        let dim = emissions[0].dim();
        if let Some(g) = emissions.iter().find(|g| g.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: g.dim(),
            });
        }
        Ok(Self {
            space,
            topology,
            priors,
            transitions,
            exit,
            emissions,
        })
    }

    pub fn space(&self) -> FeatureSpace {
        self.space
    }

    pub fn topology(&self) -> Topology {
        self.topology
    }

    pub fn num_states(&self) -> usize {
        self.priors.len()
    }

    pub fn dim(&self) -> usize {
        self.emissions[0].dim()
    }

    pub fn priors(&self) -> &[f64] {
        &self.priors
    }

    pub fn transitions(&self) -> &[Vec<f64>] {
        &self.transitions
    }

    pub fn exit(&self) -> &[f64] {
        &self.exit
    }

    pub fn emissions(&self) -> &[Gmm] {
        &self.emissions
    }

    pub fn log_priors(&self) -> Vec<f64> {
        self.priors.iter().map(|p| p.ln()).collect()
    }

    /// Row-major `S × S` log transition matrix.
    pub fn log_transitions(&self) -> Vec<f64> {
        self.transitions.iter().flatten().map(|p| p.ln()).collect()
    }

    fn log_exit(&self) -> Option<Vec<f64>> {
        match self.topology {
            Topology::LeftToRight => Some(self.exit.iter().map(|p| p.ln()).collect()),
            Topology::Ergodic => None,
        }
    }

    /// `T × S` table of `log p(y_t | s)`.
    pub fn emission_log_likelihoods(&self, frames: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        frames
            .iter()
            .map(|y| self.emissions.iter().map(|g| g.log_likelihood(y)).collect())
            .collect()
    }

    /// Total log-likelihood by the forward algorithm (left-to-right models
    /// must exit after the last frame).
    pub fn log_likelihood(&self, frames: &[Vec<f64>]) -> Result<f64> {
        if frames.is_empty() {
            return Err(Error::EmptyObservation);
        }
        let b = self.emission_log_likelihoods(frames)?;
        Ok(forward_backward(
            &self.log_priors(),
            &self.log_transitions(),
            self.log_exit().as_deref(),
            &b,
        )
        .loglik)
    }

    /// Most likely state sequence and its score.
    pub fn viterbi(&self, frames: &[Vec<f64>]) -> Result<(Vec<usize>, f64)> {
        if frames.is_empty() {
            return Err(Error::EmptyObservation);
        }
        let b = self.emission_log_likelihoods(frames)?;
        viterbi_path(
            &self.log_priors(),
            &self.log_transitions(),
            self.log_exit().as_deref(),
            &b,
        )
    }
}

/// Single-chain Viterbi over a precomputed emission table. Ties go to the
/// lowest predecessor index.
pub fn viterbi_path(
    log_pi: &[f64],
    log_a: &[f64],
    log_exit: Option<&[f64]>,
    b: &[Vec<f64>],
) -> Result<(Vec<usize>, f64)> {
    let s = log_pi.len();
    let t_len = b.len();
    if t_len == 0 {
        return Err(Error::EmptyObservation);
    }
    let mut delta: Vec<f64> = (0..s).map(|i| log_pi[i] + b[0][i]).collect();
    let mut psi = vec![vec![0usize; s]; t_len];
    for t in 1..t_len {
        let mut next = vec![NEG_INF; s];
        for j in 0..s {
            let mut best = NEG_INF;
            let mut arg = 0;
            for i in 0..s {
                let v = delta[i] + log_a[i * s + j];
                if v > best {
                    best = v;
                    arg = i;
                }
            }
            next[j] = best + b[t][j];
            psi[t][j] = arg;
        }
        delta = next;
    }
    if let Some(e) = log_exit {
        delta.iter_mut().zip(e).for_each(|(d, e)| *d += e);
    }
    let mut last = 0;
    for i in 1..s {
        if delta[i] > delta[last] {
            last = i;
        }
    }
    let score = delta[last];
    if score == NEG_INF {
        return Err(Error::Unreachable);
    }
    let mut path = vec![0; t_len];
    path[t_len - 1] = last;
    for t in (1..t_len).rev() {
        path[t - 1] = psi[t][path[t]];
    }
    Ok((path, score))
}

struct Posteriors {
    /// `T × S` state occupancies.
    gamma: Vec<Vec<f64>>,
    /// Expected transition counts, row-major `S × S`.
    xi: Vec<f64>,
    /// Expected exit counts (left-to-right only).
    exit: Vec<f64>,
    loglik: f64,
}

fn forward_backward(log_pi: &[f64], log_a: &[f64], log_exit: Option<&[f64]>, b: &[Vec<f64>]) -> Posteriors {
    let s = log_pi.len();
    let t_len = b.len();
    let mut alpha = vec![vec![NEG_INF; s]; t_len];
    for i in 0..s {
        alpha[0][i] = log_pi[i] + b[0][i];
    }
    let mut scratch = vec![0.0; s];
    for t in 1..t_len {
        for j in 0..s {
            for i in 0..s {
                scratch[i] = alpha[t - 1][i] + log_a[i * s + j];
            }
            alpha[t][j] = log_sum_exp(&scratch) + b[t][j];
        }
    }
    let mut beta = vec![vec![NEG_INF; s]; t_len];
    for i in 0..s {
        beta[t_len - 1][i] = log_exit.map_or(0.0, |e| e[i]);
    }
    for t in (0..t_len - 1).rev() {
        for i in 0..s {
            for j in 0..s {
                scratch[j] = log_a[i * s + j] + b[t + 1][j] + beta[t + 1][j];
            }
            beta[t][i] = log_sum_exp(&scratch);
        }
    }
    let ends: Vec<f64> = (0..s).map(|i| alpha[t_len - 1][i] + beta[t_len - 1][i]).collect();
    let loglik = log_sum_exp(&ends);
    let mut post = Posteriors {
        gamma: vec![vec![0.0; s]; t_len],
        xi: vec![0.0; s * s],
        exit: vec![0.0; s],
        loglik,
    };
    if loglik == NEG_INF {
        return post;
    }
    for t in 0..t_len {
        for i in 0..s {
            post.gamma[t][i] = (alpha[t][i] + beta[t][i] - loglik).exp();
        }
    }
    for t in 0..t_len - 1 {
        for i in 0..s {
            if alpha[t][i] == NEG_INF {
                continue;
            }
            for j in 0..s {
                let v = alpha[t][i] + log_a[i * s + j] + b[t + 1][j] + beta[t + 1][j] - loglik;
                if v > -700.0 {
                    post.xi[i * s + j] += v.exp();
                }
            }
        }
    }
    if log_exit.is_some() {
        post.exit.clone_from(&post.gamma[t_len - 1]);
    }
    post
}

/// Training schedule for [`hmm_train`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HmmTrainConfig {
    pub states: usize,
    pub components: usize,
    pub topology: Topology,
    pub viterbi_iters: usize,
    pub baum_welch_iters: usize,
    /// Baum-Welch passes after each mixture split.
    pub split_iters: usize,
    /// Variance floor as a fraction of the global per-dimension variance.
    pub floor_fraction: f64,
}

impl HmmTrainConfig {
    pub fn left_to_right(states: usize, components: usize) -> Self {
        Self {
            states,
            components,
            topology: Topology::LeftToRight,
            viterbi_iters: 4,
            baum_welch_iters: 4,
            split_iters: 3,
            floor_fraction: 1e-2,
        }
    }

    pub fn ergodic(states: usize, components: usize) -> Self {
        Self {
            topology: Topology::Ergodic,
            ..Self::left_to_right(states, components)
        }
    }
}

struct TrainData<'a> {
    seqs: &'a [Vec<Vec<f64>>],
    floor: VarianceFloor,
}

impl TrainData<'_> {
    fn all_frames(&self) -> Vec<&[f64]> {
        self.seqs.iter().flatten().map(Vec::as_slice).collect()
    }
}

fn validate_sequences(seqs: &[Vec<Vec<f64>>], states: usize, topology: Topology) -> Result<usize> {
    if seqs.is_empty() {
        return Err(Error::Empty("training sequences"));
    }
    let dim = seqs.iter().flatten().next().ok_or(Error::EmptyObservation)?.len();
    for seq in seqs {
        if let Some(f) = seq.iter().find(|f| f.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: f.len(),
            });
        }
        if topology == Topology::LeftToRight && seq.len() < states {
            return Err(Error::TooFewFrames {
                frames: seq.len(),
                states,
            });
        }
    }
    let total: usize = seqs.iter().map(Vec::len).sum();
    if total < states {
        return Err(Error::TooFewFrames { frames: total, states });
    }
    Ok(dim)
}

fn global_floor(seqs: &[Vec<Vec<f64>>], fraction: f64) -> Result<VarianceFloor> {
    let frames: Vec<&[f64]> = seqs.iter().flatten().map(Vec::as_slice).collect();
    let ws = WeightedSampleSet::new(frames.clone(), vec![1.0; frames.len()])?;
    VarianceFloor::relative(&ws, fraction)
}

/// Refits each state's emission from hard or soft state occupancies.
fn reestimate_emissions(data: &TrainData<'_>, occupancy: &[Vec<Vec<f64>>], current: &[Gmm]) -> Result<Vec<Gmm>> {
    let frames = data.all_frames();
    let s = current.len();
    let mut out = Vec::with_capacity(s);
    for state in 0..s {
        let mut samples = Vec::new();
        let mut weights = Vec::new();
        let mut idx = 0;
        for seq in occupancy {
            for row in seq {
                if row[state] > 1e-8 {
                    samples.push(frames[idx]);
                    weights.push(row[state]);
                }
                idx += 1;
            }
        }
        let ws = WeightedSampleSet::new(samples, weights)?;
        if ws.total_weight() < 1e-3 {
            out.push(current[state].clone());
            continue;
        }
        let gmm = &current[state];
        if gmm.len() == 1 {
            out.push(Gmm::new(
                vec![weighted_gaussian_fit(&ws, CovarianceKind::Diagonal, &data.floor)?],
                CovarianceKind::Diagonal,
            )?);
        } else {
            out.push(weighted_em_step(gmm, &ws, &data.floor)?.gmm);
        }
    }
    Ok(out)
}

fn normalise_rows(counts: &[f64], exit: &[f64], s: usize, topology: Topology) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut rows = Vec::with_capacity(s);
    let mut exits = Vec::with_capacity(s);
    for i in 0..s {
        let row = &counts[i * s..(i + 1) * s];
        let e = if topology == Topology::LeftToRight {
            exit[i]
        } else {
            0.0
        };
        let total: f64 = row.iter().sum::<f64>() + e;
        if total > 0.0 {
            rows.push(row.iter().map(|c| c / total).collect());
            exits.push(e / total);
        } else {
            // unvisited state: keep it a self-loop with a forward escape
            let mut r = vec![0.0; s];
            match topology {
                Topology::LeftToRight if i + 1 < s => {
                    r[i] = 0.5;
                    r[i + 1] = 0.5;
                    exits.push(0.0);
                }
                Topology::LeftToRight => {
                    r[i] = 0.5;
                    exits.push(0.5);
                }
                Topology::Ergodic => {
                    r[i] = 1.0;
                    exits.push(0.0);
                }
            }
            rows.push(r);
        }
    }
    // exact stochasticity after division
    for (r, e) in rows.iter_mut().zip(exits.iter_mut()) {
        let sum: f64 = r.iter().sum::<f64>() + *e;
        let fix = 1.0 - sum;
        if let Some(m) = r.iter_mut().max_by(|a, b| a.total_cmp(b)) {
            *m += fix;
        }
    }
    (rows, exits)
}

struct Model {
    priors: Vec<f64>,
    transitions: Vec<Vec<f64>>,
    exit: Vec<f64>,
    emissions: Vec<Gmm>,
}

impl Model {
    fn log_parts(&self, topology: Topology) -> (Vec<f64>, Vec<f64>, Option<Vec<f64>>) {
        (
            self.priors.iter().map(|p| p.ln()).collect(),
            self.transitions.iter().flatten().map(|p| p.ln()).collect(),
            (topology == Topology::LeftToRight).then(|| self.exit.iter().map(|p| p.ln()).collect()),
        )
    }

    fn emission_table(&self, seq: &[Vec<f64>]) -> Vec<Vec<f64>> {
        seq.iter()
            .map(|y| self.emissions.iter().map(|g| g.log_likelihood_unchecked(y)).collect())
            .collect()
    }
}

fn uniform_segmentation(data: &TrainData<'_>, s: usize, topology: Topology) -> Result<Model> {
    let mut occupancy = Vec::with_capacity(data.seqs.len());
    let mut counts = vec![0.0; s * s];
    let mut exit = vec![0.0; s];
    let mut first = vec![0.0; s];
    for seq in data.seqs {
        let t_len = seq.len();
        let label = |t: usize| (t * s / t_len).min(s - 1);
        let rows: Vec<Vec<f64>> = (0..t_len)
            .map(|t| {
                let mut r = vec![0.0; s];
                r[label(t)] = 1.0;
                r
            })
            .collect();
        first[label(0)] += 1.0;
        for t in 1..t_len {
            counts[label(t - 1) * s + label(t)] += 1.0;
        }
        exit[label(t_len - 1)] += 1.0;
        occupancy.push(rows);
    }
    let placeholder: Vec<Gmm> = (0..s)
        .map(|_| {
            let g = GaussianComponent::new(
                vec![0.0; data.floor.0.len()],
                Covariance::Diagonal(vec![1.0; data.floor.0.len()]),
                0.0,
            )?;
            Ok(Gmm::single(g))
        })
        .collect::<Result<_>>()?;
    let emissions = reestimate_emissions(data, &occupancy, &placeholder)?;
    if topology == Topology::Ergodic {
        counts.iter_mut().for_each(|c| *c += 1.0);
    }
    let (transitions, exit) = normalise_rows(&counts, &exit, s, topology);
    let priors = match topology {
        Topology::LeftToRight => {
            let mut p = vec![0.0; s];
            p[0] = 1.0;
            p
        }
        Topology::Ergodic => vec![1.0 / s as f64; s],
    };
    let _ = first;
    Ok(Model {
        priors,
        transitions,
        exit,
        emissions,
    })
}

fn viterbi_training_pass(data: &TrainData<'_>, model: &Model, topology: Topology) -> Result<Model> {
    let s = model.priors.len();
    let (log_pi, log_a, log_exit) = model.log_parts(topology);
    let mut occupancy = Vec::with_capacity(data.seqs.len());
    let mut counts = vec![0.0; s * s];
    let mut exit = vec![0.0; s];
    for seq in data.seqs {
        let b = model.emission_table(seq);
        let (path, _) = viterbi_path(&log_pi, &log_a, log_exit.as_deref(), &b)?;
        for t in 1..path.len() {
            counts[path[t - 1] * s + path[t]] += 1.0;
        }
        exit[*path.last().expect("non-empty")] += 1.0;
        occupancy.push(
            path.iter()
                .map(|p| {
                    let mut r = vec![0.0; s];
                    r[*p] = 1.0;
                    r
                })
                .collect(),
        );
    }
    let emissions = reestimate_emissions(data, &occupancy, &model.emissions)?;
    let (transitions, exit) = normalise_rows(&counts, &exit, s, topology);
    Ok(Model {
        priors: model.priors.clone(),
        transitions,
        exit,
        emissions,
    })
}

fn baum_welch_pass(data: &TrainData<'_>, model: &Model, topology: Topology) -> Result<(Model, f64)> {
    let s = model.priors.len();
    let (log_pi, log_a, log_exit) = model.log_parts(topology);
    let mut occupancy = Vec::with_capacity(data.seqs.len());
    let mut counts = vec![0.0; s * s];
    let mut exit = vec![0.0; s];
    let mut first = vec![0.0; s];
    let mut total = 0.0;
    for seq in data.seqs {
        let b = model.emission_table(seq);
        let post = forward_backward(&log_pi, &log_a, log_exit.as_deref(), &b);
        if post.loglik == NEG_INF {
            return Err(Error::Unreachable);
        }
        total += post.loglik;
        counts.iter_mut().zip(&post.xi).for_each(|(c, x)| *c += x);
        exit.iter_mut().zip(&post.exit).for_each(|(c, x)| *c += x);
        first.iter_mut().zip(&post.gamma[0]).for_each(|(c, x)| *c += x);
        occupancy.push(post.gamma);
    }
    let emissions = reestimate_emissions(data, &occupancy, &model.emissions)?;
    let (transitions, exit) = normalise_rows(&counts, &exit, s, topology);
    let priors = match topology {
        Topology::LeftToRight => model.priors.clone(),
        Topology::Ergodic => {
            let n: f64 = first.iter().sum();
            first.iter().map(|f| f / n).collect()
        }
    };
    Ok((
        Model {
            priors,
            transitions,
            exit,
            emissions,
        },
        total,
    ))
}

/// Splits the heaviest component of each mixture: means move `±0.2σ`, the
/// weight is halved.
fn split_heaviest(gmm: &Gmm) -> Result<Gmm> {
    let heaviest = (0..gmm.len())
        .max_by(|a, b| {
            gmm.components()[*a]
                .log_weight()
                .total_cmp(&gmm.components()[*b].log_weight())
                .then(b.cmp(a))
        })
        .expect("non-empty");
    let mut comps = Vec::with_capacity(gmm.len() + 1);
    for (k, c) in gmm.components().iter().enumerate() {
        if k != heaviest {
            comps.push(c.clone());
            continue;
        }
        let sd: Vec<f64> = c.covariance().variances().iter().map(|v| v.sqrt()).collect();
        let half = c.log_weight() - std::f64::consts::LN_2;
        for sign in [1.0, -1.0] {
            let mean: Vec<f64> = c.mean().iter().zip(&sd).map(|(m, s)| m + sign * 0.2 * s).collect();
            comps.push(GaussianComponent::new(mean, c.covariance().clone(), half)?);
        }
    }
    Gmm::new(comps, gmm.kind())
}

/// Trains an HMM with diagonal-covariance GMM emissions.
///
/// Uniform segmentation gives the initial single-Gaussian states, Viterbi
/// training and Baum-Welch refine them, and mixtures are grown one split at
/// a time (with Baum-Welch after each split) up to `cfg.components`.
/// Left-to-right models start in state 0 and must exit from the final frame.
pub fn hmm_train(seqs: &[Vec<Vec<f64>>], space: FeatureSpace, cfg: &HmmTrainConfig) -> Result<Hmm> {
    if cfg.states == 0 || cfg.components == 0 {
        return Err(Error::InvalidConfig("states and components must be positive".into()));
    }
    validate_sequences(seqs, cfg.states, cfg.topology)?;
    let data = TrainData {
        seqs,
        floor: global_floor(seqs, cfg.floor_fraction)?,
    };
    let mut model = uniform_segmentation(&data, cfg.states, cfg.topology)?;
    for _ in 0..cfg.viterbi_iters {
        model = viterbi_training_pass(&data, &model, cfg.topology)?;
    }
    for _ in 0..cfg.baum_welch_iters {
        model = baum_welch_pass(&data, &model, cfg.topology)?.0;
    }
    let frames_per_state = seqs.iter().map(Vec::len).sum::<usize>() / cfg.states;
    let mut k = 1;
    while k < cfg.components && frames_per_state > 2 * (k + 1) {
        model.emissions = model.emissions.iter().map(split_heaviest).collect::<Result<_>>()?;
        k += 1;
        for _ in 0..cfg.split_iters {
            model = baum_welch_pass(&data, &model, cfg.topology)?.0;
        }
    }
    Hmm::new(
        space,
        cfg.topology,
        model.priors,
        model.transitions,
        model.exit,
        model.emissions,
    )
}

/// Diagnostics of [`bic_select_noise_states`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BicReport {
    /// `(states, log-likelihood, BIC)` of every model considered.
    pub candidates: Vec<(usize, f64, f64)>,
    pub selected: usize,
}

/// `BIC = log L − (p/2)·log N` with `p = S·d (means) + S·d (variances) +
/// S(S−1) (transitions) + (S−1) (priors)`.
pub fn bic(loglik: f64, states: usize, dim: usize, frames: usize) -> f64 {
    let s = states as f64;
    let p = 2.0 * s * dim as f64 + s * (s - 1.0) + (s - 1.0);
    loglik - 0.5 * p * (frames as f64).ln()
}

fn two_means(frames: &[&[f64]], scale: &[f64]) -> Vec<bool> {
    let dist = |a: &[f64], b: &[f64]| -> f64 {
        a.iter()
            .zip(b)
            .zip(scale)
            .map(|((x, y), s)| (x - y) * (x - y) / s)
            .sum()
    };
    let d = frames[0].len();
    let mut mean = vec![0.0; d];
    for f in frames {
        mean.iter_mut().zip(*f).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= frames.len() as f64);
    let far = |from: &[f64]| -> usize {
        (0..frames.len())
            .max_by(|a, b| dist(frames[*a], from).total_cmp(&dist(frames[*b], from)).then(b.cmp(a)))
            .expect("non-empty")
    };
    let a = far(&mean);
    let b = far(frames[a]);
    let mut centres = [frames[a].to_vec(), frames[b].to_vec()];
    let mut assign = vec![false; frames.len()];
    for _ in 0..20 {
        let mut changed = false;
        for (l, f) in frames.iter().enumerate() {
            let second = dist(f, &centres[1]) < dist(f, &centres[0]);
            changed |= second != assign[l];
            assign[l] = second;
        }
        for (c, centre) in centres.iter_mut().enumerate() {
            let members: Vec<&&[f64]> = frames
                .iter()
                .zip(&assign)
                .filter(|(_, a)| **a == (c == 1))
                .map(|(f, _)| f)
                .collect();
            if members.is_empty() {
                continue;
            }
            let mut m = vec![0.0; d];
            for f in &members {
                m.iter_mut().zip(**f).for_each(|(x, v)| *x += v);
            }
            m.iter_mut().for_each(|x| *x /= members.len() as f64);
            *centre = m;
        }
        if !changed {
            break;
        }
    }
    assign
}

/// Greedy BIC search over ergodic single-Gaussian noise HMMs.
///
/// Starting from one state, the state whose Viterbi-assigned frames have the
/// lowest average log-likelihood is split by 2-means, the model is retrained
/// by ergodic Baum-Welch, and the split is kept only if BIC improves.
pub fn bic_select_noise_states(
    seqs: &[Vec<Vec<f64>>],
    space: FeatureSpace,
    max_states: usize,
) -> Result<(Hmm, BicReport)> {
    if max_states == 0 {
        return Err(Error::InvalidConfig("max_states must be positive".into()));
    }
    let dim = validate_sequences(seqs, 1, Topology::Ergodic)?;
    let total_frames: usize = seqs.iter().map(Vec::len).sum();
    let data = TrainData {
        seqs,
        floor: global_floor(seqs, 1e-2)?,
    };
    let train_iters = 8;
    let mut model = uniform_segmentation(&data, 1, Topology::Ergodic)?;
    let mut ll = baum_welch_pass(&data, &model, Topology::Ergodic)?.1;
    let mut score = bic(ll, 1, dim, total_frames);
    let mut report = BicReport {
        candidates: vec![(1, ll, score)],
        selected: 1,
    };
    let frames = data.all_frames();
    let (_, global_var) = WeightedSampleSet::new(frames.clone(), vec![1.0; frames.len()])?.moments()?;
    let scale: Vec<f64> = global_var.iter().map(|v| v.max(1e-12)).collect();
    while model.priors.len() < max_states {
        let s = model.priors.len();
        let (log_pi, log_a, _) = model.log_parts(Topology::Ergodic);
        let mut assigned: Vec<Vec<usize>> = vec![Vec::new(); s];
        let mut sums = vec![0.0; s];
        let mut idx = 0;
        for seq in seqs {
            let b = model.emission_table(seq);
            let (path, _) = viterbi_path(&log_pi, &log_a, None, &b)?;
            for (t, p) in path.iter().enumerate() {
                assigned[*p].push(idx);
                sums[*p] += b[t][*p];
                idx += 1;
            }
        }
        let worst = (0..s)
            .filter(|i| assigned[*i].len() >= 4 * dim.max(1))
            .min_by(|a, b| (sums[*a] / assigned[*a].len() as f64).total_cmp(&(sums[*b] / assigned[*b].len() as f64)));
        let Some(worst) = worst else { break };
        let members: Vec<&[f64]> = assigned[worst].iter().map(|l| frames[*l]).collect();
        let split = two_means(&members, &scale);
        let mut emissions = model.emissions.clone();
        let mut halves = Vec::with_capacity(2);
        for side in [false, true] {
            let part: Vec<&[f64]> = members
                .iter()
                .zip(&split)
                .filter(|(_, a)| **a == side)
                .map(|(f, _)| *f)
                .collect();
            if part.is_empty() {
                break;
            }
            let ws = WeightedSampleSet::new(part.clone(), vec![1.0; part.len()])?;
            halves.push(Gmm::new(
                vec![weighted_gaussian_fit(&ws, CovarianceKind::Diagonal, &data.floor)?],
                CovarianceKind::Diagonal,
            )?);
        }
        if halves.len() < 2 {
            break;
        }
        emissions[worst] = halves.remove(0);
        emissions.push(halves.remove(0));
        let n = s + 1;
        let stay = 0.9;
        let transitions: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| if i == j { stay } else { (1.0 - stay) / (n - 1) as f64 })
                    .collect()
            })
            .collect();
        let mut candidate = Model {
            priors: vec![1.0 / n as f64; n],
            transitions,
            exit: vec![0.0; n],
            emissions,
        };
        let mut cand_ll = NEG_INF;
        for _ in 0..train_iters {
            let (next, l) = baum_welch_pass(&data, &candidate, Topology::Ergodic)?;
            candidate = next;
            cand_ll = l;
        }
        // log-likelihood of the final parameters
        cand_ll = baum_welch_pass(&data, &candidate, Topology::Ergodic).map_or(cand_ll, |(_, l)| l);
        let cand_score = bic(cand_ll, n, dim, total_frames);
        report.candidates.push((n, cand_ll, cand_score));
        if cand_score > score {
            model = candidate;
            score = cand_score;
            ll = cand_ll;
            report.selected = n;
        } else {
            break;
        }
    }
    let _ = ll;
    let hmm = Hmm::new(
        space,
        Topology::Ergodic,
        model.priors,
        model.transitions,
        model.exit,
        model.emissions,
    )?;
    Ok((hmm, report))
}

/// Flattens feature vectors into plain `[statics, deltas]` rows.
pub fn feature_rows(frames: &[crate::features::FeatureVector]) -> Vec<Vec<f64>> {
    frames.iter().map(|f| f.to_vec()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn gaussian_seq(rng: &mut ChaCha8Rng, means: &[[f64; 2]], per_state: usize) -> Vec<Vec<f64>> {
        let noise = Normal::new(0.0, 0.3).unwrap();
        means
            .iter()
            .flat_map(|m| {
                let len = per_state + rng.random_range(0..3);
                (0..len)
                    .map(|_| vec![m[0] + noise.sample(rng), m[1] + noise.sample(rng)])
                    .collect::<Vec<_>>()
            })
            .collect()
    }

    #[test]
    fn one_state_one_component_is_global_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let seqs: Vec<Vec<Vec<f64>>> = (0..4).map(|_| gaussian_seq(&mut rng, &[[0.0, 1.0]], 20)).collect();
        let hmm = hmm_train(&seqs, FeatureSpace::RawFilterbank, &HmmTrainConfig::left_to_right(1, 1)).unwrap();
        let all: Vec<Vec<f64>> = seqs.iter().flatten().cloned().collect();
        let ws = WeightedSampleSet::unweighted(&all);
        let floor = VarianceFloor::relative(&ws, 1e-2).unwrap();
        let direct = weighted_gaussian_fit(&ws, CovarianceKind::Diagonal, &floor).unwrap();
        let got = &hmm.emissions()[0].components()[0];
        for (a, b) in got.mean().iter().zip(direct.mean()) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in got.covariance().variances().iter().zip(direct.covariance().variances()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((hmm.transitions()[0][0] + hmm.exit()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn training_is_deterministic_and_stochastic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let means = [[0.0, 0.0], [3.0, 1.0], [-2.0, 4.0]];
        let seqs: Vec<Vec<Vec<f64>>> = (0..6).map(|_| gaussian_seq(&mut rng, &means, 12)).collect();
        let cfg = HmmTrainConfig::left_to_right(3, 2);
        let a = hmm_train(&seqs, FeatureSpace::RawFilterbank, &cfg).unwrap();
        let b = hmm_train(&seqs, FeatureSpace::RawFilterbank, &cfg).unwrap();
        assert_eq!(a, b);
        for (row, e) in a.transitions().iter().zip(a.exit()) {
            assert!((row.iter().sum::<f64>() + e - 1.0).abs() < 1e-10);
        }
        assert_eq!(a.emissions()[0].len(), 2);
        // states recover the generating means in order
        for (s, m) in means.iter().enumerate() {
            let g = &a.emissions()[s];
            let mean: Vec<f64> = (0..2)
                .map(|d| g.components().iter().map(|c| c.weight() * c.mean()[d]).sum())
                .collect();
            assert!((mean[0] - m[0]).abs() < 0.3 && (mean[1] - m[1]).abs() < 0.3);
        }
    }

    #[test]
    fn too_few_frames_is_an_error() {
        let seqs = vec![vec![vec![0.0], vec![1.0]]];
        assert!(matches!(
            hmm_train(&seqs, FeatureSpace::RawFilterbank, &HmmTrainConfig::left_to_right(3, 1)),
            Err(Error::TooFewFrames { frames: 2, states: 3 })
        ));
    }

    #[test]
    fn forward_matches_path_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let means = [[0.0, 0.0], [2.0, 2.0]];
        let seqs: Vec<Vec<Vec<f64>>> = (0..3).map(|_| gaussian_seq(&mut rng, &means, 6)).collect();
        let hmm = hmm_train(&seqs, FeatureSpace::RawFilterbank, &HmmTrainConfig::ergodic(2, 1)).unwrap();
        let obs = &seqs[0][..5];
        let b = hmm.emission_log_likelihoods(obs).unwrap();
        let mut terms = Vec::new();
        let mut best = NEG_INF;
        for code in 0..32usize {
            let path: Vec<usize> = (0..5).map(|t| (code >> t) & 1).collect();
            let mut v = hmm.priors()[path[0]].ln() + b[0][path[0]];
            for t in 1..5 {
                v += hmm.transitions()[path[t - 1]][path[t]].ln() + b[t][path[t]];
            }
            terms.push(v);
            best = best.max(v);
        }
        let fwd = hmm.log_likelihood(obs).unwrap();
        assert!((fwd - log_sum_exp(&terms)).abs() < 1e-9);
        let (_, vit) = hmm.viterbi(obs).unwrap();
        assert!((vit - best).abs() < 1e-9);
    }

    #[test]
    fn bic_respects_max_states_and_finds_regimes() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let homogeneous: Vec<Vec<f64>> = (0..400)
            .map(|_| vec![noise.sample(&mut rng), noise.sample(&mut rng)])
            .collect();
        let (h, rep) =
            bic_select_noise_states(std::slice::from_ref(&homogeneous), FeatureSpace::RawFilterbank, 4).unwrap();
        assert_eq!(h.num_states(), 1, "{rep:?}");
        let mut regimes = Vec::new();
        for block in 0..8 {
            let off = if block % 2 == 0 { 0.0 } else { 6.0 };
            for _ in 0..50 {
                regimes.push(vec![off + noise.sample(&mut rng), -off + noise.sample(&mut rng)]);
            }
        }
        let (h, rep) = bic_select_noise_states(&[regimes.clone()], FeatureSpace::RawFilterbank, 4).unwrap();
        assert_eq!(h.num_states(), 2, "{rep:?}");
        let (h, _) = bic_select_noise_states(&[regimes], FeatureSpace::RawFilterbank, 1).unwrap();
        assert_eq!(h.num_states(), 1);
    }
}
