//! Interaction between speech, channel and noise features.
//!
//! In the log filterbank domain with `a = C⁻¹(x + h)` and `b = C⁻¹n` the
//! corrupted feature is
//!
//! ```text
//! y = C · log( e^a + e^b + 2α ⊙ e^{(a+b)/2} )
//! ```
//!
//! which is exact per filter when `α` is the true phase factor of that frame.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{DctMatrix, FeatureConfig, FeatureSpace, FilterbankMatrix};
use crate::math::rng_for;

/// Floor applied to the filterbank energy before the logarithm.
pub const LOG_ARGUMENT_FLOOR: f64 = 1e-10;

/// How the per-filter phase factor α is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "value", rename_all = "snake_case")]
pub enum PhaseFactorMode {
    Zero,
    Constant(f64),
    /// i.i.d. uniform on `[−1, 1]` per filter and per draw.
    Sampled(u64),
}

impl PhaseFactorMode {
    /// True for constants outside the support `[−1, 1]` of a real phase factor.
    pub fn outside_support(&self) -> bool {
        matches!(self, PhaseFactorMode::Constant(v) if v.abs() > 1.0)
    }

    /// A fresh draw source for this mode.
    pub fn sampler(&self) -> PhaseSampler {
        PhaseSampler {
            mode: *self,
            rng: rng_for(
                match self {
                    PhaseFactorMode::Sampled(seed) => *seed,
                    _ => 0,
                },
                &[0xa1fa],
            ),
        }
    }
}

impl fmt::Display for PhaseFactorMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PhaseFactorMode::Zero => write!(f, "zero"),
            PhaseFactorMode::Constant(v) => write!(f, "const:{v}"),
            PhaseFactorMode::Sampled(seed) => write!(f, "sampled:{seed}"),
        }
    }
}

impl FromStr for PhaseFactorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || {
            Error::InvalidConfig(format!(
                "phase factor mode `{s}`; expected zero, const:<v> or sampled:<seed>"
            ))
        };
        if s == "zero" {
            return Ok(PhaseFactorMode::Zero);
        }
        if let Some(v) = s.strip_prefix("const:") {
            let v: f64 = v.parse().map_err(|_| bad())?;
            if !v.is_finite() {
                return Err(bad());
            }
            return Ok(PhaseFactorMode::Constant(v));
        }
        if let Some(v) = s.strip_prefix("sampled:") {
            return Ok(PhaseFactorMode::Sampled(v.parse().map_err(|_| bad())?));
        }
        Err(bad())
    }
}

/// Stateful α source; sampled mode advances its generator on every draw.
#[derive(Debug, Clone)]
pub struct PhaseSampler {
    mode: PhaseFactorMode,
    rng: rand_chacha::ChaCha8Rng,
}

impl PhaseSampler {
    pub fn draw(&mut self, num_filters: usize) -> Vec<f64> {
        match self.mode {
            PhaseFactorMode::Zero => vec![0.0; num_filters],
            PhaseFactorMode::Constant(v) => vec![v; num_filters],
            PhaseFactorMode::Sampled(_) => (0..num_filters).map(|_| self.rng.random_range(-1.0..=1.0)).collect(),
        }
    }
}

/// One α vector; sampled mode uses the first draw of its seed.
pub fn phase_alpha(mode: PhaseFactorMode, num_filters: usize) -> Vec<f64> {
    mode.sampler().draw(num_filters)
}

/// Per-filter phase factor of aligned one-sided spectra.
///
/// `α_i = Σ_k w_ik Re(X_k H_k N_k*) / √(X̄_i N̄_i)` with
/// `X̄_i = Σ_k w_ik |X_k H_k|²` and `N̄_i = Σ_k w_ik |N_k|²`; zero when either
/// energy vanishes. `h = None` is the identity channel.
pub fn true_alpha_from_spectra(
    x: &[Complex64],
    h: Option<&[Complex64]>,
    n: &[Complex64],
    fb: &FilterbankMatrix,
) -> Result<Vec<f64>> {
    let bins = fb.num_bins();
    if x.len() != bins || n.len() != bins || h.is_some_and(|h| h.len() != bins) {
        return Err(Error::DimensionMismatch {
            expected: bins,
            got: x.len().min(n.len()),
        });
    }
    let xh: Vec<Complex64> = match h {
        Some(h) => x.iter().zip(h).map(|(a, b)| a * b).collect(),
        None => x.to_vec(),
    };
    Ok(fb
        .rows()
        .iter()
        .map(|row| {
            let mut cross = 0.0;
            let mut ex = 0.0;
            let mut en = 0.0;
            for ((w, a), b) in row.iter().zip(&xh).zip(n) {
                if *w == 0.0 {
                    continue;
                }
                cross += w * (a * b.conj()).re;
                ex += w * a.norm_sqr();
                en += w * b.norm_sqr();
            }
            if ex > 0.0 && en > 0.0 {
                cross / (ex * en).sqrt()
            } else {
                0.0
            }
        })
        .collect())
}

/// First-order expansion of the mismatch function around `(x₀, h₀, n₀)`.
#[derive(Debug, Clone, PartialEq)]
pub struct VtsExpansion {
    pub x0: Vec<f64>,
    pub h0: Vec<f64>,
    pub n0: Vec<f64>,
    pub alpha: Vec<f64>,
    /// `f(x₀, h₀, n₀)`, the compensated static mean.
    pub g_value: Vec<f64>,
    /// `∂y/∂x` (also `∂y/∂h`).
    pub jac_x: DMatrix<f64>,
    /// `∂y/∂n`.
    pub jac_n: DMatrix<f64>,
    /// Filterbank-domain diagonal weights of `jac_x`.
    pub weights_x: Vec<f64>,
    /// Filterbank-domain diagonal weights of `jac_n`.
    pub weights_n: Vec<f64>,
}

struct LogDomain {
    log_arg: Vec<f64>,
    weights_x: Vec<f64>,
    weights_n: Vec<f64>,
    clamped: Option<usize>,
}

/// Mismatch function bound to a cepstral transform.
#[derive(Debug, Clone, PartialEq)]
pub struct MismatchModel {
    forward: DMatrix<f64>,
    inverse: DMatrix<f64>,
}

impl MismatchModel {
    /// Requires a square (invertible) DCT.
    pub fn from_dct(dct: &DctMatrix) -> Result<Self> {
        if !dct.is_square() {
            return Err(Error::InvalidConfig(
                "the mismatch function needs a square DCT (num_cepstra = num_filters)".into(),
            ));
        }
        Ok(Self {
            forward: dct.forward.clone(),
            inverse: dct.inverse.clone(),
        })
    }

    /// Log filterbank features: `C` is the identity.
    pub fn identity(num_filters: usize) -> Self {
        Self {
            forward: DMatrix::identity(num_filters, num_filters),
            inverse: DMatrix::identity(num_filters, num_filters),
        }
    }

    /// Model matching the static stream of a feature configuration.
    pub fn for_config(cfg: &FeatureConfig) -> Result<Self> {
        match cfg.space {
            FeatureSpace::Mfcc0d26 => Self::from_dct(&DctMatrix::orthonormal(cfg.num_cepstra, cfg.num_filters)?),
            FeatureSpace::LogMelFbd42 => Ok(Self::identity(cfg.num_filters)),
            FeatureSpace::RawFilterbank => Err(Error::InvalidConfig(
                "linear filterbank energies have no log-domain mismatch function".into(),
            )),
        }
    }

    pub fn dim(&self) -> usize {
        self.forward.nrows()
    }

    fn check(&self, v: &[f64], what: &'static str) -> Result<()> {
        if v.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: v.len(),
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(what));
        }
        Ok(())
    }

    fn log_domain(&self, x: &[f64], h: Option<&[f64]>, n: &[f64], alpha: &[f64]) -> Result<LogDomain> {
        self.check(x, "speech features")?;
        self.check(n, "noise features")?;
        if let Some(h) = h {
            self.check(h, "channel features")?;
        }
        if alpha.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: alpha.len(),
            });
        }
        let xh = match h {
            Some(h) => DVector::from_iterator(x.len(), x.iter().zip(h).map(|(a, b)| a + b)),
            None => DVector::from_column_slice(x),
        };
        let a = &self.inverse * xh;
        let b = &self.inverse * DVector::from_column_slice(n);
        let floor_ln = LOG_ARGUMENT_FLOOR.ln();
        let mut out = LogDomain {
            log_arg: Vec::with_capacity(a.len()),
            weights_x: Vec::with_capacity(a.len()),
            weights_n: Vec::with_capacity(a.len()),
            clamped: None,
        };
        for i in 0..a.len() {
            // shift by the larger exponent so that e^a, e^b never overflow
            let m = a[i].max(b[i]);
            let u = (a[i] - m).exp();
            let v = (b[i] - m).exp();
            let r = alpha[i] * (0.5 * (a[i] + b[i]) - m).exp();
            let s = u + v + 2.0 * r;
            let log_arg = if s > 0.0 { s.ln() + m } else { f64::NEG_INFINITY };
            if log_arg < floor_ln {
                out.log_arg.push(floor_ln);
                out.weights_x.push(0.0);
                out.weights_n.push(0.0);
                out.clamped.get_or_insert(i);
            } else {
                out.log_arg.push(log_arg);
                out.weights_x.push((u + r) / s);
                out.weights_n.push((v + r) / s);
            }
        }
        Ok(out)
    }

    /// `y = C · log(max(e^a + e^b + 2α e^{(a+b)/2}, floor))`.
    pub fn mismatch(&self, x: &[f64], h: Option<&[f64]>, n: &[f64], alpha: &[f64]) -> Result<Vec<f64>> {
        let ld = self.log_domain(x, h, n, alpha)?;
        let y = &self.forward * DVector::from_vec(ld.log_arg);
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("mismatch output"));
        }
        Ok(y.as_slice().to_vec())
    }

    /// Maps a static/delta source pair: statics through the mismatch
    /// function, deltas through the local Jacobians, `y_Δ = G x_Δ + F n_Δ`.
    /// Clamped filters contribute no delta.
    pub fn map_with_deltas(
        &self,
        x: (&[f64], &[f64]),
        n: (&[f64], &[f64]),
        alpha: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let ld = self.log_domain(x.0, None, n.0, alpha)?;
        if x.1.len() != self.dim() || n.1.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.1.len().min(n.1.len()),
            });
        }
        let dx = &self.inverse * DVector::from_column_slice(x.1);
        let dn = &self.inverse * DVector::from_column_slice(n.1);
        let mixed = DVector::from_iterator(
            dx.len(),
            (0..dx.len()).map(|i| ld.weights_x[i] * dx[i] + ld.weights_n[i] * dn[i]),
        );
        let y = &self.forward * DVector::from_vec(ld.log_arg);
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("mismatch output"));
        }
        Ok((y.as_slice().to_vec(), (&self.forward * mixed).as_slice().to_vec()))
    }

    /// Value and analytic Jacobians `G = C diag(∂/∂a) C⁻¹`, `F = C diag(∂/∂b) C⁻¹`
    /// with filterbank weights `(u + r)/(u + v + 2r)` and `(v + r)/(u + v + 2r)`.
    pub fn vts_expand(&self, x0: &[f64], h0: Option<&[f64]>, n0: &[f64], alpha: &[f64]) -> Result<VtsExpansion> {
        let ld = self.log_domain(x0, h0, n0, alpha)?;
        if let Some(i) = ld.clamped {
            return Err(Error::DegenerateExpansion(i));
        }
        let g_value = (&self.forward * DVector::from_column_slice(&ld.log_arg))
            .as_slice()
            .to_vec();
        let conj = |w: &[f64]| {
            let d = DMatrix::from_diagonal(&DVector::from_column_slice(w));
            &self.forward * d * &self.inverse
        };
        Ok(VtsExpansion {
            x0: x0.to_vec(),
            h0: h0.map_or_else(|| vec![0.0; x0.len()], <[f64]>::to_vec),
            n0: n0.to_vec(),
            alpha: alpha.to_vec(),
            g_value,
            jac_x: conj(&ld.weights_x),
            jac_n: conj(&ld.weights_n),
            weights_x: ld.weights_x,
            weights_n: ld.weights_n,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mfcc() -> MismatchModel {
        MismatchModel::from_dct(&DctMatrix::orthonormal(13, 13).unwrap()).unwrap()
    }

    fn dc_pattern(value: f64) -> Vec<f64> {
        let dct = DctMatrix::orthonormal(13, 13).unwrap();
        dct.to_cepstra(&DVector::from_element(13, value)).as_slice().to_vec()
    }

    fn random_point(rng: &mut ChaCha8Rng, spread: f64) -> Vec<f64> {
        (0..13).map(|_| rng.random_range(-spread..spread)).collect()
    }

    #[test]
    fn negligible_noise_leaves_speech() {
        let m = mfcc();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_point(&mut rng, 2.0);
        let n = dc_pattern(-200.0);
        let y = m.mismatch(&x, None, &n, &[0.0; 13]).unwrap();
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn equal_sources_double_or_quadruple() {
        let m = mfcc();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_point(&mut rng, 3.0);
        for (alpha, factor) in [(0.0, 2.0f64), (1.0, 4.0)] {
            let y = m.mismatch(&x, None, &x, &[alpha; 13]).unwrap();
            let shift = dc_pattern(factor.ln());
            for i in 0..13 {
                assert!((y[i] - (x[i] + shift[i])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn strongly_negative_alpha_is_clamped() {
        let m = mfcc();
        let x = vec![0.0; 13];
        let y = m.mismatch(&x, None, &x, &[-1.0; 13]).unwrap();
        let expected = dc_pattern(LOG_ARGUMENT_FLOOR.ln());
        for (a, b) in y.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!(matches!(
            m.vts_expand(&x, None, &x, &[-1.0; 13]),
            Err(Error::DegenerateExpansion(0))
        ));
    }

    #[test]
    fn phase_modes() {
        assert_eq!(phase_alpha(PhaseFactorMode::Zero, 4), vec![0.0; 4]);
        assert_eq!(phase_alpha(PhaseFactorMode::Constant(2.5), 3), vec![2.5; 3]);
        assert!(PhaseFactorMode::Constant(2.5).outside_support());
        assert!(!PhaseFactorMode::Constant(0.5).outside_support());
        let mut s = PhaseFactorMode::Sampled(7).sampler();
        let mut sum = 0.0;
        let mut n = 0usize;
        for _ in 0..10_000 {
            for a in s.draw(10) {
                assert!((-1.0..=1.0).contains(&a));
                sum += a;
                n += 1;
            }
        }
        assert!((sum / n as f64).abs() < 0.01);
        assert_eq!(
            phase_alpha(PhaseFactorMode::Sampled(3), 5),
            phase_alpha(PhaseFactorMode::Sampled(3), 5)
        );
    }

    #[test]
    fn mode_parsing_round_trips() {
        for text in ["zero", "const:2.5", "sampled:42"] {
            let m: PhaseFactorMode = text.parse().unwrap();
            assert_eq!(m.to_string(), text);
        }
        assert!("const:x".parse::<PhaseFactorMode>().is_err());
        assert!("half".parse::<PhaseFactorMode>().is_err());
    }

    #[test]
    fn single_bin_alpha_limits() {
        let fb = FilterbankMatrix::from_rows(vec![vec![0.0, 1.0, 0.0]]).unwrap();
        let x = vec![
            Complex64::new(0.0, 0.0),
            Complex64::new(2.0, 1.0),
            Complex64::new(0.0, 0.0),
        ];
        let same = vec![
            Complex64::new(0.0, 0.0),
            Complex64::new(4.0, 2.0),
            Complex64::new(0.0, 0.0),
        ];
        let quad = vec![
            Complex64::new(0.0, 0.0),
            Complex64::new(-1.0, 2.0),
            Complex64::new(0.0, 0.0),
        ];
        assert!((true_alpha_from_spectra(&x, None, &same, &fb).unwrap()[0] - 1.0).abs() < 1e-15);
        assert!(true_alpha_from_spectra(&x, None, &quad, &fb).unwrap()[0].abs() < 1e-15);
        let silent = vec![Complex64::new(0.0, 0.0); 3];
        assert_eq!(true_alpha_from_spectra(&x, None, &silent, &fb).unwrap()[0], 0.0);
    }

    #[test]
    fn symmetric_weights_are_half() {
        let m = mfcc();
        let x = dc_pattern(1.5);
        let e = m.vts_expand(&x, None, &x, &[0.0; 13]).unwrap();
        for (wx, wn) in e.weights_x.iter().zip(&e.weights_n) {
            assert!((wx - 0.5).abs() < 1e-12 && (wn - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn negligible_noise_jacobians() {
        let m = mfcc();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_point(&mut rng, 1.0);
        let e = m.vts_expand(&x, None, &dc_pattern(-100.0), &[0.0; 13]).unwrap();
        let id = DMatrix::<f64>::identity(13, 13);
        assert!((&e.jac_x - id).abs().max() < 1e-6);
        assert!(e.jac_n.abs().max() < 1e-6);
    }

    #[test]
    fn noise_energy_is_monotone() {
        let m = MismatchModel::identity(5);
        let x = vec![0.3, -1.0, 2.0, 0.0, 1.0];
        let mut n = vec![-1.0; 5];
        let mut prev = m.mismatch(&x, None, &n, &[0.0; 5]).unwrap();
        for step in 0..20 {
            n[step % 5] += 0.4;
            let y = m.mismatch(&x, None, &n, &[0.0; 5]).unwrap();
            for (a, b) in y.iter().zip(&prev) {
                assert!(a >= b);
            }
            prev = y;
        }
    }
}
