//! Gaussian mixtures: evaluation, weighted maximum-likelihood fitting and
//! EM for weighted samples.
//!
//! The weighted EM treats a sample weight as a (possibly fractional)
//! replication count: responsibilities are computed exactly as in standard
//! EM, and the M-step uses `w_l γ_l(k)` in place of `γ_l(k)`:
//!
//! ```text
//! W_k = Σ_l w_l γ_l(k)        W = Σ_l w_l
//! μ_k = Σ_l w_l γ_l(k) y_l / W_k
//! Σ_k = Σ_l w_l γ_l(k) (y_l − μ_k)(y_l − μ_k)ᵀ / W_k
//! π_k = W_k / W
//! ```

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{log_sum_exp, rng_for};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Absolute lower bound on any variance, applied after the relative floor.
pub const MIN_VARIANCE: f64 = 1e-8;

/// Default relative variance floor (fraction of the global weighted variance).
pub const DEFAULT_FLOOR_FRACTION: f64 = 1e-4;

/// Components whose responsibility mass drops below this fraction of the
/// total weight are reseeded.
const DEAD_COMPONENT_FRACTION: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovarianceKind {
    Diagonal,
    Full,
    /// Full blocks `[0, split)` and `[split, dim)` with zero cross terms.
    BlockDiagonal {
        split: usize,
    },
}

impl CovarianceKind {
    fn keeps(&self, a: usize, b: usize) -> bool {
        match *self {
            CovarianceKind::Diagonal => a == b,
            CovarianceKind::Full => true,
            CovarianceKind::BlockDiagonal { split } => (a < split) == (b < split),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Covariance {
    Diagonal(Vec<f64>),
    Full(DMatrix<f64>),
}

impl Covariance {
    pub fn dim(&self) -> usize {
        match self {
            Covariance::Diagonal(v) => v.len(),
            Covariance::Full(m) => m.nrows(),
        }
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        match self {
            Covariance::Diagonal(v) => DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(v)),
            Covariance::Full(m) => m.clone(),
        }
    }

    pub fn variances(&self) -> Vec<f64> {
        match self {
            Covariance::Diagonal(v) => v.clone(),
            Covariance::Full(m) => m.diagonal().iter().copied().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Factor {
    InverseVariances(Vec<f64>),
    /// Lower Cholesky factor, row-major, plus reciprocal diagonal.
    Cholesky {
        lower: Vec<f64>,
        inv_diag: Vec<f64>,
    },
}

/// One weighted Gaussian of a mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GaussianRepr", into = "GaussianRepr")]
pub struct GaussianComponent {
    mean: Vec<f64>,
    covariance: Covariance,
    log_weight: f64,
    factor: Factor,
    log_norm: f64,
}

#[derive(Serialize, Deserialize)]
struct GaussianRepr {
    log_weight: f64,
    mean: Vec<f64>,
    covariance: CovarianceRepr,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "form", content = "values", rename_all = "snake_case")]
enum CovarianceRepr {
    Diagonal(Vec<f64>),
    Full(Vec<Vec<f64>>),
}

impl From<GaussianComponent> for GaussianRepr {
    fn from(g: GaussianComponent) -> Self {
        let covariance = match g.covariance {
            Covariance::Diagonal(v) => CovarianceRepr::Diagonal(v),
            Covariance::Full(m) => {
                CovarianceRepr::Full((0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect())
            }
        };
        GaussianRepr {
            log_weight: g.log_weight,
            mean: g.mean,
            covariance,
        }
    }
}

impl TryFrom<GaussianRepr> for GaussianComponent {
    type Error = Error;

    fn try_from(r: GaussianRepr) -> Result<Self> {
        let covariance = match r.covariance {
            CovarianceRepr::Diagonal(v) => Covariance::Diagonal(v),
            CovarianceRepr::Full(rows) => {
                let d = rows.len();
                if rows.iter().any(|row| row.len() != d) {
                    return Err(Error::Corrupt("covariance matrix is not square".into()));
                }
                Covariance::Full(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
            }
        };
        GaussianComponent::new(r.mean, covariance, r.log_weight)
    }
}

impl GaussianComponent {
    pub fn new(mean: Vec<f64>, covariance: Covariance, log_weight: f64) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(Error::Empty("gaussian mean"));
        }
        if covariance.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: covariance.dim(),
            });
        }
        if mean.iter().any(|v| !v.is_finite()) || log_weight.is_nan() {
            return Err(Error::NonFinite("gaussian parameters"));
        }
        let (factor, log_det) = match &covariance {
            Covariance::Diagonal(v) => {
                if v.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
                    return Err(Error::Numerical("non-positive variance".into()));
                }
                (
                    Factor::InverseVariances(v.iter().map(|s| 1.0 / s).collect()),
                    v.iter().map(|s| s.ln()).sum::<f64>(),
                )
            }
            Covariance::Full(m) => {
                if m.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite("covariance"));
                }
                let chol = nalgebra::Cholesky::new(m.clone())
                    .ok_or_else(|| Error::Numerical("covariance is not positive definite".into()))?;
                let l = chol.l();
                let mut lower = vec![0.0; d * d];
                for i in 0..d {
                    for j in 0..=i {
                        lower[i * d + j] = l[(i, j)];
                    }
                }
                let inv_diag: Vec<f64> = (0..d).map(|i| 1.0 / l[(i, i)]).collect();
                let log_det = 2.0 * (0..d).map(|i| l[(i, i)].ln()).sum::<f64>();
                (Factor::Cholesky { lower, inv_diag }, log_det)
            }
        };
        Ok(Self {
            mean,
            covariance,
            log_weight,
            factor,
            log_norm: -0.5 * (d as f64 * LN_2PI + log_det),
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn covariance(&self) -> &Covariance {
        &self.covariance
    }

    pub fn log_weight(&self) -> f64 {
        self.log_weight
    }

    pub fn weight(&self) -> f64 {
        self.log_weight.exp()
    }

    pub fn with_log_weight(mut self, log_weight: f64) -> Self {
        self.log_weight = log_weight;
        self
    }

    /// `log N(y; μ, Σ)` without the mixture weight.
    pub fn log_density(&self, y: &[f64]) -> f64 {
        let d = self.mean.len();
        match &self.factor {
            Factor::InverseVariances(inv) => {
                let mut q = 0.0;
                for i in 0..d {
                    let z = y[i] - self.mean[i];
                    q += z * z * inv[i];
                }
                self.log_norm - 0.5 * q
            }
            Factor::Cholesky { lower, inv_diag } => {
                let mut stack = [0.0f64; 64];
                let mut heap;
                let z: &mut [f64] = if d <= 64 {
                    &mut stack[..d]
                } else {
                    heap = vec![0.0; d];
                    &mut heap
                };
                let mut q = 0.0;
                for i in 0..d {
                    let row = &lower[i * d..i * d + i];
                    let mut acc = y[i] - self.mean[i];
                    for (l, zk) in row.iter().zip(z.iter()) {
                        acc -= l * zk;
                    }
                    let zi = acc * inv_diag[i];
                    z[i] = zi;
                    q += zi * zi;
                }
                self.log_norm - 0.5 * q
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let d = self.dim();
        let eps: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        match &self.factor {
            Factor::InverseVariances(inv) => (0..d).map(|i| self.mean[i] + eps[i] / inv[i].sqrt()).collect(),
            Factor::Cholesky { lower, .. } => (0..d)
                .map(|i| self.mean[i] + (0..=i).map(|k| lower[i * d + k] * eps[k]).sum::<f64>())
                .collect(),
        }
    }
}

/// Finite mixture of Gaussians sharing one covariance structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gmm {
    kind: CovarianceKind,
    components: Vec<GaussianComponent>,
}

impl Gmm {
    pub fn new(components: Vec<GaussianComponent>, kind: CovarianceKind) -> Result<Self> {
        let first = components.first().ok_or(Error::Empty("mixture components"))?;
        let d = first.dim();
        if let Some(c) = components.iter().find(|c| c.dim() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: c.dim(),
            });
        }
        let total: f64 = components.iter().map(|c| c.weight()).sum();
        if (total - 1.0).abs() > 1e-8 {
            return Err(Error::Numerical(format!("mixture weights sum to {total}")));
        }
        Ok(Self { kind, components })
    }

    pub fn single(component: GaussianComponent) -> Self {
        let kind = match component.covariance {
            Covariance::Diagonal(_) => CovarianceKind::Diagonal,
            Covariance::Full(_) => CovarianceKind::Full,
        };
        Self {
            kind,
            components: vec![component.with_log_weight(0.0)],
        }
    }

    pub fn kind(&self) -> CovarianceKind {
        self.kind
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    /// `log Σ_k π_k N(y; μ_k, Σ_k)` via log-sum-exp.
    pub fn log_likelihood(&self, y: &[f64]) -> Result<f64> {
        if y.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: y.len(),
            });
        }
        Ok(self.log_likelihood_unchecked(y))
    }

    pub fn log_likelihood_unchecked(&self, y: &[f64]) -> f64 {
        if self.components.len() == 1 {
            let c = &self.components[0];
            return c.log_weight + c.log_density(y);
        }
        let mut max = f64::NEG_INFINITY;
        let mut stack = [0.0f64; 16];
        let mut heap;
        let joint: &mut [f64] = if self.components.len() <= 16 {
            &mut stack[..self.components.len()]
        } else {
            heap = vec![0.0; self.components.len()];
            &mut heap
        };
        for (j, c) in joint.iter_mut().zip(&self.components) {
            *j = c.log_weight + c.log_density(y);
            max = max.max(*j);
        }
        if max == f64::NEG_INFINITY {
            return max;
        }
        max + joint.iter().map(|j| (j - max).exp()).sum::<f64>().ln()
    }

    /// Posterior component probabilities; returns the log-likelihood too.
    fn responsibilities_into(&self, y: &[f64], out: &mut [f64]) -> f64 {
        for (o, c) in out.iter_mut().zip(&self.components) {
            *o = c.log_weight + c.log_density(y);
        }
        let norm = log_sum_exp(out);
        if norm == f64::NEG_INFINITY {
            let k = out.len() as f64;
            out.iter_mut().for_each(|o| *o = 1.0 / k);
        } else {
            out.iter_mut().for_each(|o| *o = (*o - norm).exp());
        }
        norm
    }

    /// `γ(k) ∝ π_k N(y; μ_k, Σ_k)`, normalised to one.
    pub fn responsibilities(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.components.len()];
        self.responsibilities_into(y, &mut out);
        out
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for c in &self.components {
            acc += c.weight();
            if u < acc {
                return c.sample(rng);
            }
        }
        self.components.last().expect("non-empty").sample(rng)
    }
}

/// Samples with nonnegative weights, borrowed from their owner.
#[derive(Debug, Clone)]
pub struct WeightedSampleSet<'a> {
    samples: Vec<&'a [f64]>,
    weights: Vec<f64>,
}

impl<'a> WeightedSampleSet<'a> {
    pub fn new(samples: Vec<&'a [f64]>, weights: Vec<f64>) -> Result<Self> {
        if samples.len() != weights.len() {
            return Err(Error::DimensionMismatch {
                expected: samples.len(),
                got: weights.len(),
            });
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidConfig("sample weights must be finite and >= 0".into()));
        }
        if let Some(first) = samples.first() {
            let d = first.len();
            if let Some(s) = samples.iter().find(|s| s.len() != d) {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: s.len(),
                });
            }
        }
        Ok(Self { samples, weights })
    }

    pub fn unweighted(samples: &'a [Vec<f64>]) -> Self {
        Self {
            samples: samples.iter().map(Vec::as_slice).collect(),
            weights: vec![1.0; samples.len()],
        }
    }

    pub fn samples(&self) -> &[&'a [f64]] {
        &self.samples
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples.first().map_or(0, |s| s.len())
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Number of samples with strictly positive weight.
    pub fn support(&self) -> usize {
        self.weights.iter().filter(|w| **w > 0.0).count()
    }

    /// Weighted mean and per-dimension variance.
    pub fn moments(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let total = self.total_weight();
        if !(total > 0.0) {
            return Err(Error::UnsupportedStatePair);
        }
        let d = self.dim();
        let mut mean = vec![0.0; d];
        for (s, w) in self.samples.iter().zip(&self.weights) {
            for i in 0..d {
                mean[i] += w * s[i];
            }
        }
        mean.iter_mut().for_each(|m| *m /= total);
        let mut var = vec![0.0; d];
        for (s, w) in self.samples.iter().zip(&self.weights) {
            for i in 0..d {
                let z = s[i] - mean[i];
                var[i] += w * z * z;
            }
        }
        var.iter_mut().for_each(|v| *v /= total);
        Ok((mean, var))
    }
}

/// Per-dimension lower bound on variances.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceFloor(pub Vec<f64>);

impl VarianceFloor {
    /// `max(fraction · global weighted variance, MIN_VARIANCE)` per dimension.
    pub fn relative(ws: &WeightedSampleSet<'_>, fraction: f64) -> Result<Self> {
        let (_, var) = ws.moments()?;
        Ok(Self(var.iter().map(|v| (fraction * v).max(MIN_VARIANCE)).collect()))
    }

    pub fn uniform(dim: usize, value: f64) -> Self {
        Self(vec![value.max(MIN_VARIANCE); dim])
    }
}

/// Turns scatter accumulators into a floored covariance of the given kind.
/// `scatter` holds the lower triangle row-major (`i*(i+1)/2 + j`) for full
/// kinds, or the diagonal for `Diagonal`.
fn finish_covariance(kind: CovarianceKind, d: usize, scatter: &[f64], total: f64, floor: &VarianceFloor) -> Covariance {
    match kind {
        CovarianceKind::Diagonal => {
            Covariance::Diagonal((0..d).map(|i| (scatter[i] / total).max(floor.0[i])).collect())
        }
        _ => {
            let mut m = DMatrix::zeros(d, d);
            for i in 0..d {
                for j in 0..=i {
                    if kind.keeps(i, j) {
                        let v = scatter[i * (i + 1) / 2 + j] / total;
                        m[(i, j)] = v;
                        m[(j, i)] = v;
                    }
                }
                m[(i, i)] = m[(i, i)].max(floor.0[i]);
            }
            Covariance::Full(m)
        }
    }
}

fn scatter_len(kind: CovarianceKind, d: usize) -> usize {
    match kind {
        CovarianceKind::Diagonal => d,
        _ => d * (d + 1) / 2,
    }
}

#[inline]
fn accumulate_scatter(kind: CovarianceKind, acc: &mut [f64], r: f64, y: &[f64], mean: &[f64]) {
    let d = mean.len();
    match kind {
        CovarianceKind::Diagonal => {
            for i in 0..d {
                let z = y[i] - mean[i];
                acc[i] += r * z * z;
            }
        }
        _ => {
            let mut stack = [0.0f64; 64];
            let mut heap;
            let z: &mut [f64] = if d <= 64 {
                &mut stack[..d]
            } else {
                heap = vec![0.0; d];
                &mut heap
            };
            for i in 0..d {
                z[i] = y[i] - mean[i];
            }
            let mut idx = 0;
            for i in 0..d {
                let rz = r * z[i];
                for zj in z.iter().take(i + 1) {
                    acc[idx] += rz * zj;
                    idx += 1;
                }
            }
        }
    }
}

/// Builds a component, adding a growing ridge if flooring alone leaves the
/// covariance singular (e.g. fewer samples than dimensions).
pub fn regularised_component(
    mean: Vec<f64>,
    covariance: Covariance,
    log_weight: f64,
    floor: &VarianceFloor,
) -> Result<GaussianComponent> {
    match GaussianComponent::new(mean.clone(), covariance.clone(), log_weight) {
        Ok(c) => Ok(c),
        Err(Error::Numerical(_)) => {
            let Covariance::Full(base) = covariance else {
                return Err(Error::Numerical("diagonal covariance below floor".into()));
            };
            let mut scale = 1.0;
            for _ in 0..12 {
                let mut m = base.clone();
                for i in 0..m.nrows() {
                    m[(i, i)] += scale * floor.0[i];
                }
                if let Ok(c) = GaussianComponent::new(mean.clone(), Covariance::Full(m), log_weight) {
                    return Ok(c);
                }
                scale *= 10.0;
            }
            Err(Error::Numerical("covariance could not be regularised".into()))
        }
        Err(e) => Err(e),
    }
}

/// Weighted maximum-likelihood Gaussian: `μ = Σ w y / W`,
/// `Σ = Σ w (y−μ)(y−μ)ᵀ / W`, then floored.
pub fn weighted_gaussian_fit(
    ws: &WeightedSampleSet<'_>,
    kind: CovarianceKind,
    floor: &VarianceFloor,
) -> Result<GaussianComponent> {
    let total = ws.total_weight();
    if !(total > 0.0) {
        return Err(Error::UnsupportedStatePair);
    }
    let d = ws.dim();
    let mut mean = vec![0.0; d];
    for (s, w) in ws.samples.iter().zip(&ws.weights) {
        if *w == 0.0 {
            continue;
        }
        for i in 0..d {
            mean[i] += w * s[i];
        }
    }
    mean.iter_mut().for_each(|m| *m /= total);
    let mut scatter = vec![0.0; scatter_len(kind, d)];
    for (s, w) in ws.samples.iter().zip(&ws.weights) {
        if *w == 0.0 {
            continue;
        }
        accumulate_scatter(kind, &mut scatter, *w, s, &mean);
    }
    let cov = finish_covariance(kind, d, &scatter, total, floor);
    regularised_component(mean, cov, 0.0, floor)
}

/// How EM obtains its starting mixture.
#[derive(Debug, Clone, PartialEq)]
pub enum EmInit {
    /// Weighted k-means++ seeding followed by a few weighted Lloyd passes.
    KMeansPlusPlus {
        seed: u64,
    },
    Given(Gmm),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmConfig {
    pub components: usize,
    pub kind: CovarianceKind,
    pub init: EmInit,
    pub max_iters: usize,
    /// Relative change of the weighted log-likelihood that ends the run.
    pub tol: f64,
    /// Explicit floor; defaults to [`DEFAULT_FLOOR_FRACTION`] of the data variance.
    pub floor: Option<VarianceFloor>,
}

impl EmConfig {
    pub fn new(components: usize, kind: CovarianceKind, seed: u64) -> Self {
        Self {
            components,
            kind,
            init: EmInit::KMeansPlusPlus { seed },
            max_iters: 100,
            tol: 1e-6,
            floor: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub iterations: usize,
    /// Weighted log-likelihood of each iterate, starting with the initial mixture.
    pub log_likelihoods: Vec<f64>,
    pub reseeds: usize,
    pub converged: bool,
}

/// Result of one EM iteration.
#[derive(Debug, Clone)]
pub struct EmStep {
    pub gmm: Gmm,
    /// Log-likelihood of the mixture the step started from.
    pub log_likelihood: f64,
    pub reseeded: Vec<usize>,
}

/// Picks the sample worst explained by the current mixture, preferring heavy
/// samples: `argmax_l log w_l − log p(y_l)`.
fn reseed_index(log_liks: &[f64], weights: Option<&[f64]>, taken: &[usize]) -> Option<usize> {
    let mut best = None;
    let mut best_score = f64::NEG_INFINITY;
    for (l, ll) in log_liks.iter().enumerate() {
        let w = weights.map_or(1.0, |w| w[l]);
        if w <= 0.0 || taken.contains(&l) {
            continue;
        }
        let score = w.ln() - ll;
        if score > best_score {
            best_score = score;
            best = Some(l);
        }
    }
    best
}

fn global_covariance(kind: CovarianceKind, floor: &VarianceFloor, var: &[f64]) -> Covariance {
    let v: Vec<f64> = var.iter().zip(&floor.0).map(|(v, f)| v.max(*f)).collect();
    match kind {
        CovarianceKind::Diagonal => Covariance::Diagonal(v),
        _ => Covariance::Full(DMatrix::from_diagonal(&nalgebra::DVector::from_vec(v))),
    }
}

/// One iteration of EM on weighted samples.
pub fn weighted_em_step(gmm: &Gmm, ws: &WeightedSampleSet<'_>, floor: &VarianceFloor) -> Result<EmStep> {
    let k = gmm.len();
    let d = gmm.dim();
    if ws.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: ws.dim(),
        });
    }
    let kind = gmm.kind();
    let n = ws.len();
    let mut gamma = vec![0.0; n * k];
    let mut log_liks = vec![0.0; n];
    let mut loglik = 0.0;
    for l in 0..n {
        if ws.weights[l] == 0.0 {
            continue;
        }
        let ll = gmm.responsibilities_into(ws.samples[l], &mut gamma[l * k..(l + 1) * k]);
        log_liks[l] = ll;
        loglik += ws.weights[l] * ll;
    }
    let total = ws.total_weight();
    let mut components = Vec::with_capacity(k);
    let mut reseeded = Vec::new();
    let mut taken = Vec::new();
    let mut moments = None;
    for c in 0..k {
        let mut wk = 0.0;
        let mut mean = vec![0.0; d];
        for l in 0..n {
            let w = ws.weights[l];
            if w == 0.0 {
                continue;
            }
            let r = w * gamma[l * k + c];
            wk += r;
            let y = ws.samples[l];
            for i in 0..d {
                mean[i] += r * y[i];
            }
        }
        if !(wk > DEAD_COMPONENT_FRACTION * total) {
            let idx = reseed_index(&log_liks, Some(&ws.weights), &taken).ok_or(Error::TooFewSamples {
                components: k,
                samples: ws.support(),
            })?;
            taken.push(idx);
            if moments.is_none() {
                moments = Some(ws.moments()?);
            }
            let (_, var) = moments.as_ref().expect("set above");
            let cov = global_covariance(kind, floor, var);
            components.push((ws.samples[idx].to_vec(), cov, (1.0 / k as f64).ln(), true));
            reseeded.push(c);
            continue;
        }
        mean.iter_mut().for_each(|m| *m /= wk);
        let mut scatter = vec![0.0; scatter_len(kind, d)];
        for l in 0..n {
            let w = ws.weights[l];
            if w == 0.0 {
                continue;
            }
            let r = w * gamma[l * k + c];
            accumulate_scatter(kind, &mut scatter, r, ws.samples[l], &mean);
        }
        let cov = finish_covariance(kind, d, &scatter, wk, floor);
        components.push((mean, cov, (wk / total).ln(), false));
    }
    let gmm = assemble(components, kind, floor, !reseeded.is_empty())?;
    Ok(EmStep {
        gmm,
        log_likelihood: loglik,
        reseeded,
    })
}

/// One iteration of standard (unweighted) EM.
pub fn standard_em_step(gmm: &Gmm, samples: &[&[f64]], floor: &VarianceFloor) -> Result<EmStep> {
    let k = gmm.len();
    let d = gmm.dim();
    if let Some(s) = samples.iter().find(|s| s.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: s.len(),
        });
    }
    let kind = gmm.kind();
    let n = samples.len();
    let mut gamma = vec![0.0; n * k];
    let mut log_liks = vec![0.0; n];
    let mut loglik = 0.0;
    for (l, y) in samples.iter().enumerate() {
        let ll = gmm.responsibilities_into(y, &mut gamma[l * k..(l + 1) * k]);
        log_liks[l] = ll;
        loglik += ll;
    }
    let count = n as f64;
    let mut components = Vec::with_capacity(k);
    let mut reseeded = Vec::new();
    let mut taken = Vec::new();
    for c in 0..k {
        let mut nk = 0.0;
        let mut mean = vec![0.0; d];
        for (l, y) in samples.iter().enumerate() {
            let r = gamma[l * k + c];
            nk += r;
            for i in 0..d {
                mean[i] += r * y[i];
            }
        }
        if !(nk > DEAD_COMPONENT_FRACTION * count) {
            let idx = reseed_index(&log_liks, None, &taken).ok_or(Error::TooFewSamples {
                components: k,
                samples: n,
            })?;
            taken.push(idx);
            let ws = WeightedSampleSet {
                samples: samples.to_vec(),
                weights: vec![1.0; n],
            };
            let (_, var) = ws.moments()?;
            components.push((
                samples[idx].to_vec(),
                global_covariance(kind, floor, &var),
                (1.0 / k as f64).ln(),
                true,
            ));
            reseeded.push(c);
            continue;
        }
        mean.iter_mut().for_each(|m| *m /= nk);
        let mut scatter = vec![0.0; scatter_len(kind, d)];
        for (l, y) in samples.iter().enumerate() {
            accumulate_scatter(kind, &mut scatter, gamma[l * k + c], y, &mean);
        }
        let cov = finish_covariance(kind, d, &scatter, nk, floor);
        components.push((mean, cov, (nk / count).ln(), false));
    }
    let gmm = assemble(components, kind, floor, !reseeded.is_empty())?;
    Ok(EmStep {
        gmm,
        log_likelihood: loglik,
        reseeded,
    })
}

fn assemble(
    parts: Vec<(Vec<f64>, Covariance, f64, bool)>,
    kind: CovarianceKind,
    floor: &VarianceFloor,
    renormalise: bool,
) -> Result<Gmm> {
    let mut log_weights: Vec<f64> = parts.iter().map(|p| p.2).collect();
    if renormalise {
        let norm = log_sum_exp(&log_weights);
        log_weights.iter_mut().for_each(|w| *w -= norm);
    }
    let components = parts
        .into_iter()
        .zip(log_weights)
        .map(|((mean, cov, _, _), lw)| regularised_component(mean, cov, lw, floor))
        .collect::<Result<Vec<_>>>()?;
    Gmm::new(components, kind)
}

fn normalised_distance(a: &[f64], b: &[f64], scale: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .zip(scale)
        .map(|((x, y), s)| (x - y) * (x - y) / s)
        .sum()
}

/// Weighted k-means++ seeding plus five Lloyd passes; each cluster then gets a
/// weighted Gaussian fit.
fn kmeans_init(
    ws: &WeightedSampleSet<'_>,
    k: usize,
    kind: CovarianceKind,
    floor: &VarianceFloor,
    seed: u64,
) -> Result<Gmm> {
    let mut rng = rng_for(seed, &[0x6b6d]);
    let (_, var) = ws.moments()?;
    let scale: Vec<f64> = var.iter().map(|v| v.max(MIN_VARIANCE)).collect();
    let positive: Vec<usize> = (0..ws.len()).filter(|l| ws.weights[*l] > 0.0).collect();
    let pick = |rng: &mut rand_chacha::ChaCha8Rng, scores: &[f64]| -> usize {
        let total: f64 = scores.iter().sum();
        if !(total > 0.0) {
            return positive[rng.random_range(0..positive.len())];
        }
        let mut u = rng.random::<f64>() * total;
        for (idx, s) in positive.iter().zip(scores) {
            u -= s;
            if u <= 0.0 {
                return *idx;
            }
        }
        *positive.last().expect("non-empty")
    };
    let first = pick(&mut rng, &positive.iter().map(|l| ws.weights[*l]).collect::<Vec<_>>());
    let mut centres: Vec<Vec<f64>> = vec![ws.samples[first].to_vec()];
    let mut nearest: Vec<f64> = positive
        .iter()
        .map(|l| normalised_distance(ws.samples[*l], &centres[0], &scale))
        .collect();
    while centres.len() < k {
        let scores: Vec<f64> = positive.iter().zip(&nearest).map(|(l, d)| ws.weights[*l] * d).collect();
        let idx = pick(&mut rng, &scores);
        let c = ws.samples[idx].to_vec();
        for (n, l) in nearest.iter_mut().zip(&positive) {
            *n = n.min(normalised_distance(ws.samples[*l], &c, &scale));
        }
        centres.push(c);
    }
    let d = ws.dim();
    let mut assignment = vec![0usize; positive.len()];
    for _ in 0..5 {
        for (a, l) in assignment.iter_mut().zip(&positive) {
            *a = (0..k)
                .min_by(|x, y| {
                    normalised_distance(ws.samples[*l], &centres[*x], &scale).total_cmp(&normalised_distance(
                        ws.samples[*l],
                        &centres[*y],
                        &scale,
                    ))
                })
                .expect("k >= 1");
        }
        let mut sums = vec![vec![0.0; d]; k];
        let mut mass = vec![0.0; k];
        for (a, l) in assignment.iter().zip(&positive) {
            let w = ws.weights[*l];
            mass[*a] += w;
            for i in 0..d {
                sums[*a][i] += w * ws.samples[*l][i];
            }
        }
        for c in 0..k {
            if mass[c] > 0.0 {
                centres[c] = sums[c].iter().map(|s| s / mass[c]).collect();
            }
        }
    }
    let total = ws.total_weight();
    let mut parts = Vec::with_capacity(k);
    for (c, centre) in centres.iter().enumerate() {
        let members: Vec<usize> = positive
            .iter()
            .zip(&assignment)
            .filter(|(_, a)| **a == c)
            .map(|(l, _)| *l)
            .collect();
        let mass: f64 = members.iter().map(|l| ws.weights[*l]).sum();
        if members.len() >= 2 && mass > 0.0 {
            let sub = WeightedSampleSet {
                samples: members.iter().map(|l| ws.samples[*l]).collect(),
                weights: members.iter().map(|l| ws.weights[*l]).collect(),
            };
            let g = weighted_gaussian_fit(&sub, kind, floor)?;
            parts.push((g.mean, g.covariance, (mass / total).ln(), false));
        } else {
            parts.push((
                centre.clone(),
                global_covariance(kind, floor, &var),
                (mass.max(1e-3 * total) / total).ln(),
                false,
            ));
        }
    }
    assemble(parts, kind, floor, true)
}

/// Fits a `K`-component mixture to weighted samples.
///
/// `K = 1` reduces to [`weighted_gaussian_fit`]. Otherwise iterates
/// [`weighted_em_step`] until the relative change of the weighted
/// log-likelihood drops below `tol` or `max_iters` is reached.
pub fn weighted_em_fit(ws: &WeightedSampleSet<'_>, cfg: &EmConfig) -> Result<(Gmm, FitReport)> {
    if cfg.components == 0 {
        return Err(Error::InvalidConfig("at least one component is required".into()));
    }
    if !(ws.total_weight() > 0.0) {
        return Err(Error::UnsupportedStatePair);
    }
    let support = ws.support();
    if cfg.components > support {
        return Err(Error::TooFewSamples {
            components: cfg.components,
            samples: support,
        });
    }
    let floor = match &cfg.floor {
        Some(f) => f.clone(),
        None => VarianceFloor::relative(ws, DEFAULT_FLOOR_FRACTION)?,
    };
    if cfg.components == 1 && !matches!(cfg.init, EmInit::Given(_)) {
        let g = weighted_gaussian_fit(ws, cfg.kind, &floor)?;
        let gmm = Gmm::new(vec![g], cfg.kind)?;
        let ll: f64 = ws
            .samples
            .iter()
            .zip(&ws.weights)
            .map(|(s, w)| {
                if *w > 0.0 {
                    w * gmm.log_likelihood_unchecked(s)
                } else {
                    0.0
                }
            })
            .sum();
        return Ok((
            gmm,
            FitReport {
                iterations: 1,
                log_likelihoods: vec![ll],
                reseeds: 0,
                converged: true,
            },
        ));
    }
    let mut gmm = match &cfg.init {
        EmInit::Given(g) => {
            if g.len() != cfg.components || g.dim() != ws.dim() {
                return Err(Error::InvalidConfig(
                    "initial mixture does not match the request".into(),
                ));
            }
            g.clone()
        }
        EmInit::KMeansPlusPlus { seed } => kmeans_init(ws, cfg.components, cfg.kind, &floor, *seed)?,
    };
    let mut report = FitReport::default();
    let mut previous: Option<f64> = None;
    for _ in 0..cfg.max_iters {
        let step = weighted_em_step(&gmm, ws, &floor)?;
        report.log_likelihoods.push(step.log_likelihood);
        if let Some(prev) = previous {
            if (step.log_likelihood - prev).abs() <= cfg.tol * prev.abs().max(1e-300) {
                report.converged = true;
                break;
            }
        }
        previous = Some(step.log_likelihood);
        report.reseeds += step.reseeded.len();
        report.iterations += 1;
        gmm = step.gmm;
    }
    Ok((gmm, report))
}

/// Standard EM on unweighted samples (used for IDPMC cells).
pub fn em_fit(samples: &[&[f64]], cfg: &EmConfig) -> Result<(Gmm, FitReport)> {
    let ws = WeightedSampleSet::new(samples.to_vec(), vec![1.0; samples.len()])?;
    if cfg.components == 0 {
        return Err(Error::InvalidConfig("at least one component is required".into()));
    }
    if cfg.components > samples.len() {
        return Err(Error::TooFewSamples {
            components: cfg.components,
            samples: samples.len(),
        });
    }
    let floor = match &cfg.floor {
        Some(f) => f.clone(),
        None => VarianceFloor::relative(&ws, DEFAULT_FLOOR_FRACTION)?,
    };
    let mut gmm = match &cfg.init {
        EmInit::Given(g) => g.clone(),
        EmInit::KMeansPlusPlus { seed } => {
            if cfg.components == 1 {
                Gmm::new(vec![weighted_gaussian_fit(&ws, cfg.kind, &floor)?], cfg.kind)?
            } else {
                kmeans_init(&ws, cfg.components, cfg.kind, &floor, *seed)?
            }
        }
    };
    let mut report = FitReport::default();
    let mut previous: Option<f64> = None;
    for _ in 0..cfg.max_iters {
        let step = standard_em_step(&gmm, samples, &floor)?;
        report.log_likelihoods.push(step.log_likelihood);
        if let Some(prev) = previous {
            if (step.log_likelihood - prev).abs() <= cfg.tol * prev.abs().max(1e-300) {
                report.converged = true;
                break;
            }
        }
        previous = Some(step.log_likelihood);
        report.reseeds += step.reseeded.len();
        report.iterations += 1;
        gmm = step.gmm;
    }
    Ok((gmm, report))
}
