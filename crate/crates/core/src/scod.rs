//! State-conditional observation distributions `p(y | sˣ = i, sⁿ = j)`.
//!
//! Three builders fill a grid with one mixture per (speech state, noise
//! state) pair:
//!
//! * VTS linearises the mismatch function at each pair of source component
//!   means and propagates the Gaussian moments.
//! * DPMC / IDPMC sample source features from the two state emissions, map
//!   them through the mismatch function and fit a Gaussian or a mixture.
//! * WSS weights stereo samples by importance ratios of the source-state
//!   likelihoods and fits each cell with weighted EM.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureSpace;
use crate::gmm::{
    em_fit, regularised_component, weighted_em_fit, weighted_gaussian_fit, Covariance, CovarianceKind, EmConfig,
    GaussianComponent, Gmm, VarianceFloor, WeightedSampleSet, DEFAULT_FLOOR_FRACTION, MIN_VARIANCE,
};
use crate::hmm::Hmm;
use crate::interaction::{MismatchModel, PhaseFactorMode};
use crate::math::{derive_seed, log_sum_exp, rng_for, stationary_distribution};
use crate::mixing::StereoUtterance;

/// Log-likelihood returned for unsupported cells.
pub const UNSUPPORTED_LOG_LIKELIHOOD: f64 = -1e6;

/// Cells whose total weight is below `SUPPORT_FACTOR · dim` are unsupported.
pub const SUPPORT_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScodMethod {
    Vts,
    Dpmc,
    Idpmc,
    Wss,
}

impl ScodMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            ScodMethod::Vts => "vts",
            ScodMethod::Dpmc => "dpmc",
            ScodMethod::Idpmc => "idpmc",
            ScodMethod::Wss => "wss",
        }
    }
}

impl fmt::Display for ScodMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScodMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "vts" => Ok(ScodMethod::Vts),
            "dpmc" => Ok(ScodMethod::Dpmc),
            "idpmc" => Ok(ScodMethod::Idpmc),
            "wss" => Ok(ScodMethod::Wss),
            _ => Err(Error::InvalidConfig(format!("unknown SCOD method `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", content = "gmm", rename_all = "lowercase")]
pub enum Cell {
    Populated(Gmm),
    Unsupported,
}

/// Per-cell build diagnostics.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub effective_weight: f64,
    pub samples: usize,
    pub iterations: usize,
    pub reseeds: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Table of observation mixtures indexed by `(speech state, noise state)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScodGrid {
    speech_states: usize,
    noise_states: usize,
    space: FeatureSpace,
    dim: usize,
    method: ScodMethod,
    cells: Vec<Cell>,
    report: Vec<CellReport>,
}

impl ScodGrid {
    pub fn new(
        speech_states: usize,
        noise_states: usize,
        space: FeatureSpace,
        method: ScodMethod,
        cells: Vec<Cell>,
        report: Vec<CellReport>,
    ) -> Result<Self> {
        let total = speech_states * noise_states;
        if total == 0 {
            return Err(Error::Empty("scod grid"));
        }
        if cells.len() != total || report.len() != total {
            return Err(Error::DimensionMismatch {
                expected: total,
                got: cells.len().min(report.len()),
            });
        }
        let mut dim = None;
        for c in &cells {
            if let Cell::Populated(g) = c {
                match dim {
                    None => dim = Some(g.dim()),
                    Some(d) if d != g.dim() => {
                        return Err(Error::DimensionMismatch {
                            expected: d,
                            got: g.dim(),
                        })
                    }
                    _ => {}
                }
            }
        }
        let dim = dim.ok_or(Error::AllCellsUnsupported)?;
        Ok(Self {
            speech_states,
            noise_states,
            space,
            dim,
            method,
            cells,
            report,
        })
    }

    pub fn speech_states(&self) -> usize {
        self.speech_states
    }

    pub fn noise_states(&self) -> usize {
        self.noise_states
    }

    pub fn space(&self) -> FeatureSpace {
        self.space
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn method(&self) -> ScodMethod {
        self.method
    }

    pub fn report(&self) -> &[CellReport] {
        &self.report
    }

    pub fn cell(&self, i: usize, j: usize) -> Result<&Cell> {
        if i >= self.speech_states || j >= self.noise_states {
            return Err(Error::IndexOutOfRange(i, j));
        }
        Ok(&self.cells[i * self.noise_states + j])
    }

    pub fn unsupported_cells(&self) -> usize {
        self.cells.iter().filter(|c| matches!(c, Cell::Unsupported)).count()
    }

    /// `log p(y | i, j)`, or [`UNSUPPORTED_LOG_LIKELIHOOD`] for an unsupported cell.
    pub fn log_likelihood(&self, i: usize, j: usize, y: &[f64]) -> Result<f64> {
        match self.cell(i, j)? {
            Cell::Populated(g) => g.log_likelihood(y),
            Cell::Unsupported => {
                if y.len() != self.dim {
                    return Err(Error::DimensionMismatch {
                        expected: self.dim,
                        got: y.len(),
                    });
                }
                Ok(UNSUPPORTED_LOG_LIKELIHOOD)
            }
        }
    }

    /// Log-likelihoods of every frame for one cell.
    pub fn batch_log_likelihood(&self, i: usize, j: usize, frames: &[Vec<f64>]) -> Result<Vec<f64>> {
        frames.iter().map(|y| self.log_likelihood(i, j, y)).collect()
    }

    /// Row-major `Sˣ × Sⁿ` table of `log p(y | i, j)` for one frame.
    pub fn frame_table(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: y.len(),
            });
        }
        Ok(self
            .cells
            .iter()
            .map(|c| match c {
                Cell::Populated(g) => g.log_likelihood_unchecked(y),
                Cell::Unsupported => UNSUPPORTED_LOG_LIKELIHOOD,
            })
            .collect())
    }
}

/// Emission mixtures and prior probabilities of one source's states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceStates {
    pub space: FeatureSpace,
    pub emissions: Vec<Gmm>,
    pub priors: Vec<f64>,
}

impl SourceStates {
    pub fn new(space: FeatureSpace, emissions: Vec<Gmm>, priors: Vec<f64>) -> Result<Self> {
        if emissions.is_empty() {
            return Err(Error::Empty("source states"));
        }
        if priors.len() != emissions.len() {
            return Err(Error::DimensionMismatch {
                expected: emissions.len(),
                got: priors.len(),
            });
        }
        if priors.iter().any(|p| !(*p > 0.0)) || (priors.iter().sum::<f64>() - 1.0).abs() > 1e-8 {
            return Err(Error::InvalidConfig(
                "source priors must be a positive distribution".into(),
            ));
        }
        Ok(Self {
            space,
            emissions,
            priors,
        })
    }

    /// States of an HMM with their stationary probabilities as priors.
    pub fn from_hmm(hmm: &Hmm) -> Result<Self> {
        let mut p = stationary_distribution(hmm.transitions());
        // transient states of a chain still deserve a little prior mass
        p.iter_mut().for_each(|v| *v = v.max(1e-6));
        let total: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= total);
        Self::new(hmm.space(), hmm.emissions().to_vec(), p)
    }

    pub fn with_uniform_priors(mut self) -> Self {
        let n = self.emissions.len() as f64;
        self.priors = vec![1.0 / n; self.emissions.len()];
        self
    }

    pub fn len(&self) -> usize {
        self.emissions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.emissions.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.emissions[0].dim()
    }

    pub fn log_likelihoods(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.emissions.iter().map(|g| g.log_likelihood(x)).collect()
    }
}

/// Build parameters shared by all methods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScodConfig {
    pub method: ScodMethod,
    /// Mixture size per cell (IDPMC, WSS); DPMC always fits one Gaussian.
    pub components: usize,
    pub covariance: CovarianceKindChoice,
    /// Samples per cell (DPMC, IDPMC).
    pub samples_per_cell: usize,
    pub max_iters: usize,
    pub phase: PhaseFactorMode,
    pub seed: u64,
}

/// Covariance structure for fitted cells; block-diagonal splits at the
/// static/delta boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CovarianceKindChoice {
    Diagonal,
    Full,
    BlockDiagonal,
}

impl CovarianceKindChoice {
    pub fn resolve(&self, dim: usize) -> CovarianceKind {
        match self {
            CovarianceKindChoice::Diagonal => CovarianceKind::Diagonal,
            CovarianceKindChoice::Full => CovarianceKind::Full,
            CovarianceKindChoice::BlockDiagonal => CovarianceKind::BlockDiagonal { split: dim / 2 },
        }
    }
}

impl ScodConfig {
    pub fn new(method: ScodMethod) -> Self {
        let (components, covariance) = match method {
            ScodMethod::Vts => (1, CovarianceKindChoice::BlockDiagonal),
            ScodMethod::Dpmc => (1, CovarianceKindChoice::BlockDiagonal),
            ScodMethod::Idpmc => (3, CovarianceKindChoice::BlockDiagonal),
            ScodMethod::Wss => (3, CovarianceKindChoice::Full),
        };
        Self {
            method,
            components,
            covariance,
            samples_per_cell: 5000,
            max_iters: 100,
            phase: PhaseFactorMode::Zero,
            seed: 0,
        }
    }
}

fn check_same_space(speech: &SourceStates, noise: &SourceStates, mm: &MismatchModel) -> Result<()> {
    if speech.space != noise.space {
        return Err(Error::SpaceMismatch {
            expected: speech.space.to_string(),
            got: noise.space.to_string(),
        });
    }
    if speech.dim() != noise.dim() || speech.dim() != 2 * mm.dim() {
        return Err(Error::DimensionMismatch {
            expected: 2 * mm.dim(),
            got: speech.dim().min(noise.dim()),
        });
    }
    Ok(())
}

fn split_blocks(m: &DMatrix<f64>, d: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    (m.view((0, 0), (d, d)).into_owned(), m.view((d, d), (d, d)).into_owned())
}

/// VTS cell: one compensated Gaussian per pair of source components.
/// Static mean `f(μx, μn)`, delta mean `G μxΔ + F μnΔ`, covariances
/// `G Σx Gᵀ + F Σn Fᵀ` per stream (block-diagonal).
pub fn build_vts(
    speech: &SourceStates,
    noise: &SourceStates,
    mm: &MismatchModel,
    cfg: &ScodConfig,
) -> Result<ScodGrid> {
    check_same_space(speech, noise, mm)?;
    let d = mm.dim();
    let mut sampler = cfg.phase.sampler();
    let mut cells = Vec::with_capacity(speech.len() * noise.len());
    let mut report = Vec::with_capacity(cells.capacity());
    for (i, gx) in speech.emissions.iter().enumerate() {
        for (j, gn) in noise.emissions.iter().enumerate() {
            let alpha = sampler.draw(d);
            let mut comps = Vec::with_capacity(gx.len() * gn.len());
            for cx in gx.components() {
                for cn in gn.components() {
                    let (mx, mn) = (cx.mean(), cn.mean());
                    let e = mm
                        .vts_expand(&mx[..d], None, &mn[..d], &alpha)
                        .map_err(|err| Error::Stage {
                            stage: "vts",
                            source: Box::new(Error::Numerical(format!("cell ({i}, {j}): {err}"))),
                        })?;
                    let dmean = &e.jac_x * DVector::from_column_slice(&mx[d..])
                        + &e.jac_n * DVector::from_column_slice(&mn[d..]);
                    let mut mean = e.g_value.clone();
                    mean.extend(dmean.iter());
                    let (sx_s, sx_d) = split_blocks(&cx.covariance().to_matrix(), d);
                    let (sn_s, sn_d) = split_blocks(&cn.covariance().to_matrix(), d);
                    let cs = &e.jac_x * sx_s * e.jac_x.transpose() + &e.jac_n * sn_s * e.jac_n.transpose();
                    let cd = &e.jac_x * sx_d * e.jac_x.transpose() + &e.jac_n * sn_d * e.jac_n.transpose();
                    let mut cov = DMatrix::zeros(2 * d, 2 * d);
                    for r in 0..d {
                        for c in 0..d {
                            cov[(r, c)] = 0.5 * (cs[(r, c)] + cs[(c, r)]);
                            cov[(d + r, d + c)] = 0.5 * (cd[(r, c)] + cd[(c, r)]);
                        }
                    }
                    let floor = VarianceFloor::uniform(2 * d, MIN_VARIANCE);
                    for k in 0..2 * d {
                        cov[(k, k)] = cov[(k, k)].max(floor.0[k]);
                    }
                    comps.push(regularised_component(
                        mean,
                        Covariance::Full(cov),
                        cx.log_weight() + cn.log_weight(),
                        &floor,
                    )?);
                }
            }
            cells.push(Cell::Populated(Gmm::new(
                comps,
                CovarianceKind::BlockDiagonal { split: d },
            )?));
            report.push(CellReport {
                effective_weight: 1.0,
                samples: 0,
                iterations: 0,
                reseeds: 0,
                note: None,
            });
        }
    }
    ScodGrid::new(speech.len(), noise.len(), speech.space, ScodMethod::Vts, cells, report)
}

/// One DPMC draw: source features from the two emissions and their image
/// under the mismatch function.
#[derive(Debug, Clone, PartialEq)]
pub struct DpmcSample {
    pub x: Vec<f64>,
    pub n: Vec<f64>,
    pub alpha: Vec<f64>,
    pub y: Vec<f64>,
}

/// Draws `count` DPMC samples for cell `(i, j)`.
pub fn dpmc_samples(
    speech: &Gmm,
    noise: &Gmm,
    mm: &MismatchModel,
    phase: PhaseFactorMode,
    count: usize,
    seed: u64,
) -> Result<Vec<DpmcSample>> {
    let d = mm.dim();
    let mut rng = rng_for(seed, &[0x64706d63]);
    let mut sampler = match phase {
        PhaseFactorMode::Sampled(s) => PhaseFactorMode::Sampled(derive_seed(s, &[seed])).sampler(),
        other => other.sampler(),
    };
    (0..count)
        .map(|_| {
            let x = speech.sample(&mut rng);
            let n = noise.sample(&mut rng);
            let alpha = sampler.draw(d);
            let (ys, yd) = mm.map_with_deltas((&x[..d], &x[d..]), (&n[..d], &n[d..]), &alpha)?;
            let mut y = ys;
            y.extend(yd);
            Ok(DpmcSample { x, n, alpha, y })
        })
        .collect()
}

/// DPMC (`K = 1`, Gaussian ML fit) or IDPMC (`K > 1`, standard EM) grid.
pub fn build_dpmc(
    speech: &SourceStates,
    noise: &SourceStates,
    mm: &MismatchModel,
    cfg: &ScodConfig,
) -> Result<ScodGrid> {
    check_same_space(speech, noise, mm)?;
    if cfg.samples_per_cell < 2 {
        return Err(Error::InvalidConfig(
            "at least two samples per cell are required".into(),
        ));
    }
    let dim = speech.dim();
    let kind = cfg.covariance.resolve(dim);
    let k = if cfg.method == ScodMethod::Dpmc {
        1
    } else {
        cfg.components.max(1)
    };
    let mut cells = Vec::with_capacity(speech.len() * noise.len());
    let mut report = Vec::with_capacity(cells.capacity());
    for (i, gx) in speech.emissions.iter().enumerate() {
        for (j, gn) in noise.emissions.iter().enumerate() {
            let cell_seed = derive_seed(cfg.seed, &[i as u64, j as u64]);
            let samples = dpmc_samples(gx, gn, mm, cfg.phase, cfg.samples_per_cell, cell_seed)?;
            let ys: Vec<&[f64]> = samples.iter().map(|s| s.y.as_slice()).collect();
            let mut em = EmConfig::new(k, kind, cell_seed);
            em.max_iters = cfg.max_iters;
            let mut rep = CellReport {
                effective_weight: ys.len() as f64,
                samples: ys.len(),
                ..CellReport::default()
            };
            let gmm = match em_fit(&ys, &em) {
                Ok((g, r)) => {
                    rep.iterations = r.iterations;
                    rep.reseeds = r.reseeds;
                    g
                }
                Err(e) if k > 1 => {
                    rep.note = Some(format!("mixture fit failed ({e}); single Gaussian used"));
                    em.components = 1;
                    em_fit(&ys, &em)?.0
                }
                Err(e) => return Err(e),
            };
            cells.push(Cell::Populated(gmm));
            report.push(rep);
        }
    }
    let method = if k == 1 { ScodMethod::Dpmc } else { ScodMethod::Idpmc };
    ScodGrid::new(speech.len(), noise.len(), speech.space, method, cells, report)
}

/// A corrupted observation with the source-state likelihoods of its clean
/// speech and noise frames.
#[derive(Debug, Clone, PartialEq)]
pub struct StereoSample {
    pub y: Vec<f64>,
    pub speech_loglik: Vec<f64>,
    pub noise_loglik: Vec<f64>,
}

/// Evaluates every frame's x under each speech state and n under each noise
/// state; only y and the two likelihood vectors are kept.
pub fn make_stereo_samples(
    corpus: &[StereoUtterance],
    speech: &SourceStates,
    noise: &SourceStates,
) -> Result<Vec<StereoSample>> {
    let mut out = Vec::new();
    for utt in corpus {
        for (fx, fn_) in [(&utt.x_features, speech), (&utt.n_features, noise)] {
            if let Some(f) = fx.first() {
                if f.space != fn_.space {
                    return Err(Error::SpaceMismatch {
                        expected: fn_.space.to_string(),
                        got: f.space.to_string(),
                    });
                }
            }
        }
        for ((x, n), y) in utt.x_features.iter().zip(&utt.n_features).zip(&utt.y_features) {
            out.push(StereoSample {
                y: y.to_vec(),
                speech_loglik: speech.log_likelihoods(&x.to_vec())?,
                noise_loglik: noise.log_likelihoods(&n.to_vec())?,
            });
        }
    }
    Ok(out)
}

/// `w_{l|i} = p(x_l|i) / Σ_i' p(x_l|i') p(i')`, from log-likelihoods.
pub fn source_weights(loglik: &[f64], priors: &[f64]) -> Vec<f64> {
    let joint: Vec<f64> = loglik.iter().zip(priors).map(|(l, p)| l + p.ln()).collect();
    let norm = log_sum_exp(&joint);
    loglik.iter().map(|l| (l - norm).exp()).collect()
}

/// Importance weights `w_{l|i,j} = w_{l|i} · w_{l|j}`, row-major `Sˣ × Sⁿ`.
pub fn wss_weights(sample: &StereoSample, speech_prior: &[f64], noise_prior: &[f64]) -> Vec<f64> {
    let wx = source_weights(&sample.speech_loglik, speech_prior);
    let wn = source_weights(&sample.noise_loglik, noise_prior);
    wx.iter().flat_map(|a| wn.iter().map(move |b| a * b)).collect()
}

/// WSS grid from stereo samples in the observation space `space`.
pub fn build_wss(
    samples: &[StereoSample],
    speech_prior: &[f64],
    noise_prior: &[f64],
    space: FeatureSpace,
    cfg: &ScodConfig,
) -> Result<ScodGrid> {
    let first = samples.first().ok_or(Error::Empty("stereo samples"))?;
    let (sx, sn) = (speech_prior.len(), noise_prior.len());
    if first.speech_loglik.len() != sx || first.noise_loglik.len() != sn {
        return Err(Error::DimensionMismatch {
            expected: sx,
            got: first.speech_loglik.len(),
        });
    }
    let dim = first.y.len();
    let kind = cfg.covariance.resolve(dim);
    let wx: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| source_weights(&s.speech_loglik, speech_prior))
        .collect();
    let wn: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| source_weights(&s.noise_loglik, noise_prior))
        .collect();
    let all: Vec<&[f64]> = samples.iter().map(|s| s.y.as_slice()).collect();
    let global = WeightedSampleSet::new(all.clone(), vec![1.0; all.len()])?;
    let floor = VarianceFloor::relative(&global, DEFAULT_FLOOR_FRACTION)?;
    let mut cells = Vec::with_capacity(sx * sn);
    let mut report = Vec::with_capacity(sx * sn);
    for i in 0..sx {
        for j in 0..sn {
            let weights: Vec<f64> = wx.iter().zip(&wn).map(|(a, b)| a[i] * b[j]).collect();
            let total: f64 = weights.iter().sum();
            let mut rep = CellReport {
                effective_weight: total,
                ..CellReport::default()
            };
            if !(total >= SUPPORT_FACTOR * dim as f64) {
                rep.note = Some("total weight below support threshold".into());
                cells.push(Cell::Unsupported);
                report.push(rep);
                continue;
            }
            // negligible weights only cost time
            let cut = total * 1e-12;
            let (ys, ws): (Vec<&[f64]>, Vec<f64>) = all
                .iter()
                .zip(&weights)
                .filter(|(_, w)| **w > cut)
                .map(|(y, w)| (*y, *w))
                .unzip();
            rep.samples = ys.len();
            let set = WeightedSampleSet::new(ys, ws)?;
            let k = cfg.components.max(1).min(set.support());
            let mut em = EmConfig::new(k, kind, derive_seed(cfg.seed, &[i as u64, j as u64]));
            em.max_iters = cfg.max_iters;
            em.floor = Some(floor.clone());
            let gmm = match weighted_em_fit(&set, &em) {
                Ok((g, r)) => {
                    rep.iterations = r.iterations;
                    rep.reseeds = r.reseeds;
                    g
                }
                Err(e) if k > 1 => {
                    rep.note = Some(format!("mixture fit failed ({e}); single Gaussian used"));
                    Gmm::new(vec![weighted_gaussian_fit(&set, kind, &floor)?], kind)?
                }
                Err(e) => return Err(e),
            };
            cells.push(Cell::Populated(gmm));
            report.push(rep);
        }
    }
    if cells.iter().all(|c| matches!(c, Cell::Unsupported)) {
        return Err(Error::AllCellsUnsupported);
    }
    ScodGrid::new(sx, sn, space, ScodMethod::Wss, cells, report)
}

/// Builds a grid of any method. `stereo` is required for WSS and ignored
/// otherwise; `mismatch` is required for VTS and DPMC.
pub fn build_grid(
    speech: &SourceStates,
    noise: &SourceStates,
    mismatch: Option<&MismatchModel>,
    stereo: Option<(&[StereoSample], FeatureSpace)>,
    cfg: &ScodConfig,
) -> Result<ScodGrid> {
    match cfg.method {
        ScodMethod::Wss => {
            let (samples, space) = stereo.ok_or_else(|| Error::InvalidConfig("WSS needs stereo samples".into()))?;
            build_wss(samples, &speech.priors, &noise.priors, space, cfg)
        }
        method => {
            let mm = mismatch.ok_or_else(|| Error::InvalidConfig(format!("{method} needs a mismatch model")))?;
            if method == ScodMethod::Vts {
                build_vts(speech, noise, mm, cfg)
            } else {
                build_dpmc(speech, noise, mm, cfg)
            }
        }
    }
}

/// Single-Gaussian diagonal mixture helper used by tests and tools.
pub fn diagonal_gmm(mean: Vec<f64>, var: Vec<f64>) -> Result<Gmm> {
    Ok(Gmm::single(GaussianComponent::new(
        mean,
        Covariance::Diagonal(var),
        0.0,
    )?))
}
