#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scodkit::decoder::Chain;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random log-space chain parameters. With `sparse`, about a fifth of the
/// transitions are log-zero (the diagonal is always kept).
#[derive(Debug, Clone)]
pub struct RawChain {
    pub log_priors: Vec<f64>,
    pub log_trans: Vec<f64>,
}

impl RawChain {
    pub fn random(rng: &mut ChaCha8Rng, s: usize, sparse: bool) -> Self {
        let log_priors = (0..s).map(|_| rng.random_range(-4.0..0.0)).collect();
        let log_trans = (0..s * s)
            .map(|k| {
                if sparse && k / s != k % s && rng.random_bool(0.2) {
                    f64::NEG_INFINITY
                } else {
                    rng.random_range(-4.0..0.0)
                }
            })
            .collect();
        Self { log_priors, log_trans }
    }

    /// Parameters drawn from a handful of values so that ties are common.
    pub fn coarse(rng: &mut ChaCha8Rng, s: usize) -> Self {
        let mut pick = || -(rng.random_range(0..3) as f64);
        Self {
            log_priors: (0..s).map(|_| pick()).collect(),
            log_trans: (0..s * s).map(|_| pick()).collect(),
        }
    }

    pub fn states(&self) -> usize {
        self.log_priors.len()
    }

    pub fn chain(&self) -> Chain {
        Chain::new(self.log_priors.clone(), self.log_trans.clone()).unwrap()
    }
}

pub fn random_emissions(rng: &mut ChaCha8Rng, t: usize, cells: usize) -> Vec<Vec<f64>> {
    (0..t)
        .map(|_| (0..cells).map(|_| rng.random_range(-10.0..0.0)).collect())
        .collect()
}

pub fn coarse_emissions(rng: &mut ChaCha8Rng, t: usize, cells: usize) -> Vec<Vec<f64>> {
    (0..t)
        .map(|_| (0..cells).map(|_| -(rng.random_range(0..3) as f64)).collect())
        .collect()
}

/// Score of a joint path, summed in time order.
pub fn joint_score(x: &RawChain, n: &RawChain, e: &[Vec<f64>], sp: &[usize], np: &[usize]) -> f64 {
    let sx = x.states();
    let sn = n.states();
    let mut s = x.log_priors[sp[0]] + n.log_priors[np[0]] + e[0][sp[0] * sn + np[0]];
    for t in 1..e.len() {
        s += x.log_trans[sp[t - 1] * sx + sp[t]] + n.log_trans[np[t - 1] * sn + np[t]] + e[t][sp[t] * sn + np[t]];
    }
    s
}

/// Best and second-best scores over every joint path, with the best path.
pub struct Enumerated {
    pub best: f64,
    pub second: f64,
    pub speech: Vec<usize>,
    pub noise: Vec<usize>,
}

pub fn enumerate(x: &RawChain, n: &RawChain, e: &[Vec<f64>]) -> Enumerated {
    let (sx, sn) = (x.states(), n.states());
    let m = sx * sn;
    let t_len = e.len();
    let mut out = Enumerated {
        best: f64::NEG_INFINITY,
        second: f64::NEG_INFINITY,
        speech: vec![0; t_len],
        noise: vec![0; t_len],
    };
    let mut joint = vec![0usize; t_len];
    let (mut sp, mut np) = (vec![0; t_len], vec![0; t_len]);
    loop {
        for t in 0..t_len {
            sp[t] = joint[t] / sn;
            np[t] = joint[t] % sn;
        }
        let s = joint_score(x, n, e, &sp, &np);
        if s > out.best {
            out.second = out.best;
            out.best = s;
            out.speech.clone_from(&sp);
            out.noise.clone_from(&np);
        } else if s > out.second {
            out.second = s;
        }
        // odometer over joint states, last frame fastest
        let mut k = t_len;
        loop {
            if k == 0 {
                return out;
            }
            k -= 1;
            joint[k] += 1;
            if joint[k] < m {
                break;
            }
            joint[k] = 0;
        }
    }
}

/// Minimum number of substitutions, deletions and insertions, found by
/// recursing over every alignment of `r` against `h`.
pub fn brute_force_edits(r: &[&str], h: &[&str]) -> usize {
    fn go(r: &[&str], h: &[&str]) -> usize {
        match (r.split_first(), h.split_first()) {
            (None, _) => h.len(),
            (_, None) => r.len(),
            (Some((a, rr)), Some((b, hh))) => {
                let sub = go(rr, hh) + usize::from(a != b);
                let del = go(rr, h) + 1;
                let ins = go(r, hh) + 1;
                sub.min(del).min(ins)
            }
        }
    }
    go(r, h)
}

/// Naive one-sided DFT of a zero-padded frame, bins `0..=size/2`.
pub fn naive_dft(frame: &[f64], size: usize) -> Vec<(f64, f64)> {
    (0..=size / 2)
        .map(|k| {
            let mut re = 0.0;
            let mut im = 0.0;
            for (t, v) in frame.iter().enumerate() {
                let w = -std::f64::consts::TAU * (k * t % size) as f64 / size as f64;
                re += v * w.cos();
                im += v * w.sin();
            }
            (re, im)
        })
        .collect()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

pub mod checks {
    use nalgebra::DVector;
    use rand::Rng;
    use rustfft::num_complex::Complex64;
    use scodkit::decoder::{factorial_viterbi_tables, megastate_viterbi_tables};
    use scodkit::features::{
        cepstra_from_energies, frame_and_window, power_spectrum, AudioSegment, DctMatrix, FeatureConfig, FeatureSpace,
        FilterbankMatrix,
    };
    use scodkit::gmm::{
        standard_em_step, weighted_em_step, Covariance, CovarianceKind, GaussianComponent, Gmm, VarianceFloor,
        WeightedSampleSet,
    };
    use scodkit::interaction::MismatchModel;
    use scodkit::persist;
    use scodkit::scod::{
        build_grid, source_weights, wss_weights, ScodConfig, ScodGrid, ScodMethod, SourceStates, StereoSample,
    };

    use super::{enumerate, joint_score, random_emissions, rel_err, rng, RawChain};

    /// Largest score divergence among factorial, mega-state and enumeration,
    /// and whether the paths agreed where the optimum is unique.
    pub struct DecoderOutcome {
        pub score_gap: f64,
        pub paths_agree: bool,
    }

    pub fn decoder_case(seed: u64) -> DecoderOutcome {
        let mut r = rng(seed);
        let sx = r.random_range(1..=4);
        let sn = r.random_range(1..=3);
        let t = r.random_range(1..=6);
        let sparse = r.random_bool(0.5);
        let x = RawChain::random(&mut r, sx, sparse);
        let n = RawChain::random(&mut r, sn, sparse);
        let e = random_emissions(&mut r, t, sx * sn);
        let f = factorial_viterbi_tables(&x.chain(), &n.chain(), &e, None).unwrap();
        let m = megastate_viterbi_tables(&x.chain(), &n.chain(), &e).unwrap();
        let oracle = enumerate(&x, &n, &e);
        let rescored = joint_score(&x, &n, &e, &f.speech_path, &f.noise_path);
        let score_gap = [
            (f.log_likelihood - m.log_likelihood).abs(),
            (f.log_likelihood - oracle.best).abs(),
            (rescored - oracle.best).abs(),
        ]
        .into_iter()
        .fold(0.0, f64::max);
        let mut paths_agree = f.speech_path == m.speech_path && f.noise_path == m.noise_path;
        if oracle.best - oracle.second > 1e-9 {
            paths_agree &= f.speech_path == oracle.speech && f.noise_path == oracle.noise;
        }
        DecoderOutcome { score_gap, paths_agree }
    }

    fn random_gmm(r: &mut rand_chacha::ChaCha8Rng, dim: usize) -> Gmm {
        let k = r.random_range(1..=3);
        let comps = (0..k)
            .map(|_| {
                let mean = (0..dim).map(|_| r.random_range(-3.0..3.0)).collect();
                let var = (0..dim).map(|_| r.random_range(0.1..2.0)).collect();
                GaussianComponent::new(mean, Covariance::Diagonal(var), -(k as f64).ln()).unwrap()
            })
            .collect();
        Gmm::new(comps, CovarianceKind::Diagonal).unwrap()
    }

    fn random_sources(r: &mut rand_chacha::ChaCha8Rng, states: usize, dim: usize) -> SourceStates {
        let emissions = (0..states).map(|_| random_gmm(r, dim)).collect();
        let raw: Vec<f64> = (0..states).map(|_| r.random_range(0.05..1.0)).collect();
        let total: f64 = raw.iter().sum();
        SourceStates::new(
            FeatureSpace::RawFilterbank,
            emissions,
            raw.iter().map(|p| p / total).collect(),
        )
        .unwrap()
    }

    /// Worst deviation of `Σ_i p(i) w_{l|i}` (and of the joint speech/noise
    /// version) from one over `samples` random stereo samples.
    pub fn importance_error(seed: u64, samples: usize) -> f64 {
        let mut r = rng(seed);
        let dim = r.random_range(1..=4);
        let (sx, sn) = (r.random_range(1..=6), r.random_range(1..=3));
        let speech = random_sources(&mut r, sx, dim);
        let noise = random_sources(&mut r, sn, dim);
        let mut worst: f64 = 0.0;
        for _ in 0..samples {
            // occasionally far from every state, where the raw likelihoods underflow
            let spread = if r.random_bool(0.1) { 40.0 } else { 4.0 };
            let x: Vec<f64> = (0..dim).map(|_| r.random_range(-spread..spread)).collect();
            let n: Vec<f64> = (0..dim).map(|_| r.random_range(-spread..spread)).collect();
            let s = StereoSample {
                y: x.clone(),
                speech_loglik: speech.log_likelihoods(&x).unwrap(),
                noise_loglik: noise.log_likelihoods(&n).unwrap(),
            };
            let wx = source_weights(&s.speech_loglik, &speech.priors);
            let total: f64 = wx.iter().zip(&speech.priors).map(|(w, p)| w * p).sum();
            worst = worst.max((total - 1.0).abs());
            let joint = wss_weights(&s, &speech.priors, &noise.priors);
            let sn = noise.priors.len();
            let total: f64 = joint
                .iter()
                .enumerate()
                .map(|(k, w)| w * speech.priors[k / sn] * noise.priors[k % sn])
                .sum();
            worst = worst.max((total - 1.0).abs());
        }
        worst
    }

    /// Errors of the per-bin and per-filter power decompositions and of the
    /// log-domain mismatch function on one random mixed frame, plus `max |α|`.
    pub struct MismatchOutcome {
        pub bin: f64,
        pub filter: f64,
        pub log_domain: f64,
        pub cepstral: f64,
        pub max_alpha: f64,
    }

    pub fn mismatch_frame(seed: u64) -> MismatchOutcome {
        let mut r = rng(seed);
        let cfg = FeatureConfig::mfcc0d26();
        let rate = 8000;
        let len = cfg.frame_length + 3 * cfg.hop_length;
        let tone = |r: &mut rand_chacha::ChaCha8Rng| {
            let f = r.random_range(100.0..3900.0);
            let a = r.random_range(0.1..2.0);
            let ph = r.random_range(0.0..std::f64::consts::TAU);
            move |t: usize| a * (std::f64::consts::TAU * f * t as f64 / rate as f64 + ph).sin()
        };
        let (t1, t2, t3) = (tone(&mut r), tone(&mut r), tone(&mut r));
        let gain = 10f64.powf(r.random_range(-1.5..1.5));
        let x: Vec<f64> = (0..len)
            .map(|t| t1(t) + t2(t) + 0.05 * r.random_range(-1.0..1.0))
            .collect();
        let n: Vec<f64> = (0..len).map(|t| gain * (t3(t) + r.random_range(-1.0..1.0))).collect();
        let y: Vec<f64> = x.iter().zip(&n).map(|(a, b)| a + b).collect();
        let frames = |v: Vec<f64>| frame_and_window(&AudioSegment::new(v, rate).unwrap(), &cfg).unwrap();
        let k = r.random_range(0..4);
        let (fx, fn_, fy) = (frames(x)[k].clone(), frames(n)[k].clone(), frames(y)[k].clone());

        let dx = super::naive_dft(&fx, cfg.fft_size);
        let dn = super::naive_dft(&fn_, cfg.fft_size);
        let py = power_spectrum(&fy, &cfg).unwrap();
        let mut bin: f64 = 0.0;
        for ((a, b), p) in dx.iter().zip(&dn).zip(&py) {
            let (mx, mn) = (a.0.hypot(a.1), b.0.hypot(b.1));
            let theta = a.1.atan2(a.0) - b.1.atan2(b.0);
            let expected = mx * mx + mn * mn + 2.0 * mx * mn * theta.cos();
            bin = bin.max((expected - p).abs() / (mx * mx + mn * mn).max(1e-300));
        }

        let fb = FilterbankMatrix::mel(cfg.num_filters, cfg.fft_size, rate, cfg.low_freq_hz, 4000.0).unwrap();
        let ex = fb.apply(&power_spectrum(&fx, &cfg).unwrap()).unwrap();
        let en = fb.apply(&power_spectrum(&fn_, &cfg).unwrap()).unwrap();
        let ey = fb.apply(&py).unwrap();
        let cx: Vec<Complex64> = dx.iter().map(|(a, b)| Complex64::new(*a, *b)).collect();
        let cn: Vec<Complex64> = dn.iter().map(|(a, b)| Complex64::new(*a, *b)).collect();
        let alpha = scodkit::interaction::true_alpha_from_spectra(&cx, None, &cn, &fb).unwrap();
        let mut filter: f64 = 0.0;
        for i in 0..ex.len() {
            let expected = ex[i] + en[i] + 2.0 * alpha[i] * (ex[i] * en[i]).sqrt();
            filter = filter.max(rel_err(expected, ey[i]));
        }

        let ln = |v: &[f64]| v.iter().map(|e| e.ln()).collect::<Vec<_>>();
        let ident = MismatchModel::identity(cfg.num_filters);
        let got = ident.mismatch(&ln(&ex), None, &ln(&en), &alpha).unwrap();
        let log_domain = got
            .iter()
            .zip(ln(&ey))
            .map(|(a, b)| (a - b).abs() / b.abs().max(1.0))
            .fold(0.0, f64::max);

        let dct = DctMatrix::orthonormal(cfg.num_cepstra, cfg.num_filters).unwrap();
        let mm = MismatchModel::from_dct(&dct).unwrap();
        let ceps = |e: &[f64]| cepstra_from_energies(e, &dct, 1e-300).unwrap();
        let got = mm.mismatch(&ceps(&ex), None, &ceps(&en), &alpha).unwrap();
        let cepstral = got
            .iter()
            .zip(ceps(&ey))
            .map(|(a, b)| (a - b).abs() / b.abs().max(1.0))
            .fold(0.0, f64::max);

        MismatchOutcome {
            bin,
            filter,
            log_domain,
            cepstral,
            max_alpha: alpha.iter().fold(0.0, |m, a| m.max(a.abs())),
        }
    }

    /// Max relative error of the analytic VTS Jacobians against central
    /// differences, and `max |w_x + w_n − 1|` of the filterbank weights.
    pub fn vts_gradient(seed: u64, alpha: f64, cepstral: bool) -> (f64, f64) {
        let mut r = rng(seed);
        let d = 13;
        let mm = if cepstral {
            MismatchModel::from_dct(&DctMatrix::orthonormal(d, d).unwrap()).unwrap()
        } else {
            MismatchModel::identity(d)
        };
        let dct = DctMatrix::orthonormal(d, d).unwrap();
        let point = |r: &mut rand_chacha::ChaCha8Rng| {
            let logs = DVector::from_iterator(d, (0..d).map(|_| r.random_range(-4.0..4.0)));
            if cepstral {
                dct.to_cepstra(&logs).as_slice().to_vec()
            } else {
                logs.as_slice().to_vec()
            }
        };
        let x0 = point(&mut r);
        let n0 = point(&mut r);
        let a = vec![alpha; d];
        let exp = mm.vts_expand(&x0, None, &n0, &a).unwrap();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for (jac, wrt_x) in [(&exp.jac_x, true), (&exp.jac_n, false)] {
            let mut diff: f64 = 0.0;
            for k in 0..d {
                let (mut p, mut m) = if wrt_x {
                    (x0.clone(), x0.clone())
                } else {
                    (n0.clone(), n0.clone())
                };
                p[k] += h;
                m[k] -= h;
                let (fp, fm) = if wrt_x {
                    (
                        mm.mismatch(&p, None, &n0, &a).unwrap(),
                        mm.mismatch(&m, None, &n0, &a).unwrap(),
                    )
                } else {
                    (
                        mm.mismatch(&x0, None, &p, &a).unwrap(),
                        mm.mismatch(&x0, None, &m, &a).unwrap(),
                    )
                };
                for i in 0..d {
                    diff = diff.max((jac[(i, k)] - (fp[i] - fm[i]) / (2.0 * h)).abs());
                }
            }
            worst = worst.max(diff / jac.abs().max());
        }
        let weight_sum = exp
            .weights_x
            .iter()
            .zip(&exp.weights_n)
            .map(|(a, b)| (a + b - 1.0).abs())
            .fold(0.0, f64::max);
        (worst, weight_sum)
    }

    /// Relative energy→cepstrum→energy error on the square 13-filter path.
    pub fn dct_round_trip(seed: u64) -> f64 {
        let mut r = rng(seed);
        let dct = DctMatrix::orthonormal(13, 13).unwrap();
        let e: Vec<f64> = (0..13).map(|_| 10f64.powf(r.random_range(-8.0..8.0))).collect();
        let c = cepstra_from_energies(&e, &dct, 1e-300).unwrap();
        let back = dct.to_log_energies(&DVector::from_vec(c));
        e.iter()
            .zip(back.iter())
            .map(|(a, l)| rel_err(*a, l.exp()))
            .fold(0.0, f64::max)
    }

    fn cepstral_sources(r: &mut rand_chacha::ChaCha8Rng, states: usize) -> SourceStates {
        let dct = DctMatrix::orthonormal(13, 13).unwrap();
        let emissions = (0..states)
            .map(|_| {
                let k = r.random_range(1..=2);
                let comps = (0..k)
                    .map(|_| {
                        let logs = DVector::from_iterator(13, (0..13).map(|_| r.random_range(-3.0..3.0)));
                        let mut mean = dct.to_cepstra(&logs).as_slice().to_vec();
                        mean.extend((0..13).map(|_| r.random_range(-0.3..0.3)));
                        let var = (0..26).map(|_| r.random_range(0.05..1.0)).collect();
                        GaussianComponent::new(mean, Covariance::Diagonal(var), -(k as f64).ln()).unwrap()
                    })
                    .collect();
                Gmm::new(comps, CovarianceKind::Diagonal).unwrap()
            })
            .collect();
        SourceStates::new(FeatureSpace::Mfcc0d26, emissions, vec![1.0 / states as f64; states]).unwrap()
    }

    /// Saves, loads and saves again one grid per method; returns whether
    /// every second save matched the first byte for byte and whether the
    /// loaded grids answered `queries` random likelihood queries exactly.
    pub fn persistence(seed: u64, queries: usize) -> (bool, bool) {
        let mut r = rng(seed);
        let speech = cepstral_sources(&mut r, 3);
        let noise = cepstral_sources(&mut r, 2);
        let mm = MismatchModel::for_config(&FeatureConfig::mfcc0d26()).unwrap();
        let samples: Vec<StereoSample> = (0..400)
            .map(|_| {
                let x: Vec<f64> = (0..26).map(|_| r.random_range(-3.0..3.0)).collect();
                let n: Vec<f64> = (0..26).map(|_| r.random_range(-3.0..3.0)).collect();
                StereoSample {
                    y: x.iter().zip(&n).map(|(a, b)| a.max(*b)).collect(),
                    speech_loglik: speech.log_likelihoods(&x).unwrap(),
                    noise_loglik: noise.log_likelihoods(&n).unwrap(),
                }
            })
            .collect();
        let mut bytes_equal = true;
        let mut queries_equal = true;
        for method in [ScodMethod::Vts, ScodMethod::Idpmc, ScodMethod::Wss] {
            let mut cfg = ScodConfig::new(method);
            cfg.samples_per_cell = 300;
            cfg.max_iters = 5;
            cfg.components = 2;
            cfg.seed = seed;
            let grid = build_grid(
                &speech,
                &noise,
                Some(&mm),
                Some((&samples, FeatureSpace::Mfcc0d26)),
                &cfg,
            )
            .unwrap();
            let first = persist::to_json(&grid).unwrap();
            let loaded: ScodGrid = persist::from_json(&first).unwrap();
            bytes_equal &= persist::to_json(&loaded).unwrap() == first;
            for _ in 0..queries {
                let (i, j) = (r.random_range(0..3), r.random_range(0..2));
                let y: Vec<f64> = (0..26).map(|_| r.random_range(-4.0..4.0)).collect();
                let a = grid.log_likelihood(i, j, &y).unwrap();
                let b = loaded.log_likelihood(i, j, &y).unwrap();
                queries_equal &= a.to_bits() == b.to_bits();
            }
        }
        (bytes_equal, queries_equal)
    }

    pub struct EmCase {
        pub data: Vec<Vec<f64>>,
        pub weights: Vec<f64>,
        pub init: Gmm,
    }

    pub fn em_case(seed: u64, n: usize, d: usize, k: usize, kind: CovarianceKind, max_weight: u32) -> EmCase {
        let mut r = rng(seed);
        // separated clusters of at least a dozen points keep every covariance well conditioned
        let centres: Vec<Vec<f64>> = (0..k)
            .map(|c| (0..d).map(|_| 8.0 * c as f64 + r.random_range(-1.0..1.0)).collect())
            .collect();
        let n = n.max(12 * k);
        let data: Vec<Vec<f64>> = (0..n)
            .map(|l| centres[l % k].iter().map(|c| c + r.random_range(-1.5..1.5)).collect())
            .collect();
        let mut weights: Vec<f64> = (0..n).map(|_| r.random_range(0..=max_weight) as f64).collect();
        // the initial means must carry weight
        for w in weights.iter_mut().take(k) {
            *w = w.max(1.0);
        }
        let components = (0..k)
            .map(|c| {
                let cov = match kind {
                    CovarianceKind::Diagonal => Covariance::Diagonal(vec![1.0; d]),
                    _ => Covariance::Full(nalgebra::DMatrix::identity(d, d)),
                };
                GaussianComponent::new(data[c].clone(), cov, -(k as f64).ln()).unwrap()
            })
            .collect();
        EmCase {
            data,
            weights,
            init: Gmm::new(components, kind).unwrap(),
        }
    }

    pub fn max_param_gap(a: &Gmm, b: &Gmm) -> f64 {
        let mut gap: f64 = 0.0;
        for (x, y) in a.components().iter().zip(b.components()) {
            for (u, v) in x.mean().iter().zip(y.mean()) {
                gap = gap.max((u - v).abs() / u.abs().max(1.0));
            }
            let (cx, cy) = (x.covariance().to_matrix(), y.covariance().to_matrix());
            for (u, v) in cx.iter().zip(cy.iter()) {
                gap = gap.max((u - v).abs() / u.abs().max(1.0));
            }
            gap = gap.max((x.weight() - y.weight()).abs());
        }
        gap
    }

    pub fn kind_of(full: bool) -> CovarianceKind {
        if full {
            CovarianceKind::Full
        } else {
            CovarianceKind::Diagonal
        }
    }

    /// Runs eight weighted and replicated EM iterations side by side.
    /// Returns the largest parameter gap, whether unit and power-of-two
    /// equal weights reproduced standard EM bit for bit, and whether the
    /// weighted log-likelihood never decreased.
    pub fn em_equivalence(seed: u64) -> (f64, bool, bool) {
        let mut r = rng(seed);
        let (n, d, k, full) = (
            r.random_range(8..40),
            r.random_range(1..4),
            r.random_range(1..4),
            r.random_bool(0.5),
        );
        let floor = VarianceFloor::uniform(d, 1e-2);
        let c = em_case(seed, n, d, k, kind_of(full), 5);
        let ws = WeightedSampleSet::new(c.data.iter().map(Vec::as_slice).collect(), c.weights.clone()).unwrap();
        let replicated: Vec<&[f64]> = c
            .data
            .iter()
            .zip(&c.weights)
            .flat_map(|(y, w)| std::iter::repeat_n(y.as_slice(), *w as usize))
            .collect();
        let (mut gw, mut gs) = (c.init.clone(), c.init.clone());
        let (mut gap, mut monotone, mut previous) = (0.0f64, true, f64::NEG_INFINITY);
        for _ in 0..8 {
            let a = weighted_em_step(&gw, &ws, &floor).unwrap();
            let b = standard_em_step(&gs, &replicated, &floor).unwrap();
            gap = gap.max(max_param_gap(&a.gmm, &b.gmm));
            monotone &= a.log_likelihood >= previous - 1e-9;
            previous = if a.reseeded.is_empty() {
                a.log_likelihood
            } else {
                f64::NEG_INFINITY
            };
            gw = a.gmm;
            gs = b.gmm;
        }
        let c = em_case(seed, n, d, k, kind_of(full), 1);
        let samples: Vec<&[f64]> = c.data.iter().map(Vec::as_slice).collect();
        let mut identical = true;
        for scale in [1.0, 2.0, 4.0] {
            let ws = WeightedSampleSet::new(samples.clone(), vec![scale; samples.len()]).unwrap();
            let (mut gw, mut gs) = (c.init.clone(), c.init.clone());
            for _ in 0..8 {
                let a = weighted_em_step(&gw, &ws, &floor).unwrap();
                let b = standard_em_step(&gs, &samples, &floor).unwrap();
                identical &= a.gmm == b.gmm;
                gw = a.gmm;
                gs = b.gmm;
            }
        }
        (gap, identical, monotone)
    }
}
