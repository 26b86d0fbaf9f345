mod common;

use common::checks::{
    dct_round_trip, decoder_case, em_equivalence, importance_error, mismatch_frame, persistence, vts_gradient,
};
use common::{random_emissions, rng, RawChain};
use scodkit::decoder::{factorial_viterbi_tables, megastate_viterbi_tables};
use scodkit::eval::{run_experiment, ExperimentConfig, NoiseModelSpec};
use scodkit::mixing::Snr;
use scodkit::scod::ScodMethod;
use std::time::{Duration, Instant};

struct Verdict {
    id: u32,
    pass: bool,
    // reported but not part of the exit status
    gating: bool,
    detail: String,
}

fn verdict(id: u32, pass: bool, detail: String) -> Verdict {
    Verdict {
        id,
        pass,
        gating: true,
        detail,
    }
}

fn decoder_equivalence() -> Verdict {
    let start = Instant::now();
    let (mut gap, mut agree) = (0.0f64, true);
    for seed in 0..200 {
        let o = decoder_case(seed);
        gap = gap.max(o.score_gap);
        agree &= o.paths_agree;
    }
    let elapsed = start.elapsed();
    verdict(
        1,
        gap <= 1e-9 && agree && elapsed < Duration::from_secs(60),
        format!("200 instances, max score gap {gap:.2e}, paths agree {agree}, {elapsed:.2?}"),
    )
}

fn weighted_em() -> Verdict {
    let (mut gap, mut identical, mut monotone) = (0.0f64, true, true);
    for seed in 0..60 {
        let (g, i, m) = em_equivalence(seed);
        gap = gap.max(g);
        identical &= i;
        monotone &= m;
    }
    verdict(
        2,
        gap <= 1e-10 && identical && monotone,
        format!(
            "60 datasets, max parameter gap {gap:.2e}, equal weights bit-identical {identical}, monotone {monotone}"
        ),
    )
}

fn importance_identity() -> Verdict {
    let worst = (0..10).map(|seed| importance_error(seed, 1000)).fold(0.0, f64::max);
    verdict(
        3,
        worst <= 1e-10,
        format!("10 source models x 1000 samples, max |sum - 1| {worst:.2e}"),
    )
}

fn mismatch_exactness() -> Verdict {
    let (mut worst, mut alpha) = (0.0f64, 0.0f64);
    for seed in 0..100 {
        let o = mismatch_frame(seed);
        worst = worst.max(o.bin).max(o.filter).max(o.log_domain).max(o.cepstral);
        alpha = alpha.max(o.max_alpha);
    }
    verdict(
        4,
        worst <= 1e-8 && alpha <= 1.0,
        format!("100 frames, max relative error {worst:.2e}, max |alpha| {alpha:.4}"),
    )
}

fn vts_jacobians() -> Verdict {
    let (mut jac, mut weights) = (0.0f64, 0.0f64);
    for seed in 0..100 {
        for alpha in [0.0, 2.5] {
            for cepstral in [false, true] {
                let (j, w) = vts_gradient(seed, alpha, cepstral);
                jac = jac.max(j);
                if alpha == 0.0 {
                    weights = weights.max(w);
                }
            }
        }
    }
    verdict(
        5,
        jac <= 1e-5 && weights <= 1e-10,
        format!("100 points, alpha in {{0, 2.5}}, max Jacobian error {jac:.2e}, weight sum error {weights:.2e}"),
    )
}

fn dct() -> Verdict {
    let worst = (0..1000).map(dct_round_trip).fold(0.0, f64::max);
    verdict(6, worst < 1e-8, format!("1000 vectors, max relative error {worst:.2e}"))
}

fn complexity() -> Verdict {
    let (sx, t) = (8usize, 100usize);
    let mut r = rng(7);
    let x = RawChain::random(&mut r, sx, false);
    let mut ratios = Vec::new();
    for sn in [2usize, 4, 8] {
        let n = RawChain::random(&mut r, sn, false);
        let e = random_emissions(&mut r, t, sx * sn);
        let f = factorial_viterbi_tables(&x.chain(), &n.chain(), &e, None).unwrap();
        let m = megastate_viterbi_tables(&x.chain(), &n.chain(), &e).unwrap();
        ratios.push((sn, m.op_count as f64 / f.op_count as f64));
    }
    let base = ratios[0].1;
    let proportional = ratios
        .iter()
        .all(|(sn, q)| ((q / base) / (*sn as f64 / 2.0) - 1.0).abs() <= 0.2);
    let analytic = ratios
        .iter()
        .all(|(sn, q)| (q - (sx * sn) as f64 / (sx + sn) as f64).abs() <= 1e-12);
    let shown: Vec<String> = ratios.iter().map(|(sn, q)| format!("Sn={sn}: {q:.3}")).collect();
    Verdict {
        id: 7,
        pass: proportional,
        gating: false,
        detail: format!(
            "mega/factorial op ratio {} (Sx={sx}, T={t}); growth proportional to Sn {proportional}; \
             equals SxSn/(Sx+Sn) {analytic}",
            shown.join(", ")
        ),
    }
}

fn trend_config(seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.corpus.utterances = 2500;
    cfg.corpus.seed = seed;
    cfg.seed = seed;
    cfg.max_train_utterances = Some(400);
    cfg.max_test_utterances = Some(500);
    cfg.scod.samples_per_cell = 1000;
    cfg.scod.max_iters = 30;
    cfg
}

fn trends() -> Verdict {
    let seeds: u64 = std::env::var("SCODKIT_TREND_SEEDS")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(10);
    let start = Instant::now();
    let (mut ordered, mut improved, mut tested) = (0, 0, usize::MAX);
    for seed in 1..=seeds {
        let out = run_experiment(&trend_config(seed)).unwrap();
        let at = |method: ScodMethod, states: &str| {
            out.table
                .rows
                .iter()
                .find(|r| r.snr_db == Snr(0.0) && r.method == method && r.noise_states == states)
                .map(|r| (r.accuracy, r.utterances))
                .unwrap()
        };
        let mut mean = |method| {
            let (a, n) = at(method, "single");
            let (b, _) = at(method, "multi");
            tested = tested.min(n);
            (a + b) / 2.0
        };
        let (vts, idpmc, wss) = (mean(ScodMethod::Vts), mean(ScodMethod::Idpmc), mean(ScodMethod::Wss));
        let gain = at(ScodMethod::Wss, "multi").0 - at(ScodMethod::Wss, "single").0;
        ordered += usize::from(wss >= idpmc && idpmc >= vts);
        improved += usize::from(gain > 0.0);
        println!(
            "  seed {seed}: 0 dB mean accuracy VTS {vts:.2} IDPMC {idpmc:.2} WSS {wss:.2}; WSS multi - single {gain:+.2}"
        );
    }
    let elapsed = start.elapsed();
    let need = (7 * seeds as usize).div_ceil(10);
    Verdict {
        id: 8,
        pass: ordered >= need && improved >= need && tested >= 500 && elapsed < Duration::from_secs(1800),
        gating: false,
        detail: format!(
            "{seeds} seeds, {tested} test utterances; ordering WSS >= IDPMC >= VTS in {ordered}, \
             multi-state gain in {improved} (need {need} each), {elapsed:.0?}"
        ),
    }
}

fn clean_sanity() -> Verdict {
    let mut cfg = ExperimentConfig::default();
    cfg.corpus.utterances = 1000;
    cfg.snrs = vec![Snr::CLEAN];
    cfg.methods = vec![ScodMethod::Vts, ScodMethod::Dpmc, ScodMethod::Idpmc, ScodMethod::Wss];
    cfg.noise_models = vec![NoiseModelSpec::Single];
    cfg.max_train_utterances = Some(400);
    cfg.max_test_utterances = Some(200);
    cfg.scod.samples_per_cell = 1000;
    cfg.scod.max_iters = 30;
    let out = run_experiment(&cfg).unwrap();
    let worst = out.table.rows.iter().map(|r| r.accuracy).fold(f64::INFINITY, f64::min);
    let shown: Vec<String> = out
        .table
        .rows
        .iter()
        .map(|r| format!("{} {:.2}", r.method, r.accuracy))
        .collect();
    verdict(9, worst >= 95.0, format!("clean accuracy {}", shown.join(", ")))
}

fn serialization() -> Verdict {
    let (mut bytes, mut queries) = (true, true);
    for seed in 0..3 {
        let (b, q) = persistence(seed, 100);
        bytes &= b;
        queries &= q;
    }
    verdict(
        10,
        bytes && queries,
        format!("VTS, IDPMC and WSS grids: save/load/save identical {bytes}, 100 queries exact {queries}"),
    )
}

fn main() {
    let checks: [fn() -> Verdict; 10] = [
        decoder_equivalence,
        weighted_em,
        importance_identity,
        mismatch_exactness,
        vts_jacobians,
        dct,
        complexity,
        trends,
        clean_sanity,
        serialization,
    ];
    let mut failed = Vec::new();
    for check in checks {
        let v = check();
        let status = if v.pass { "PASS" } else { "FAIL" };
        let note = if v.gating { "" } else { " [informational]" };
        println!("{status} criterion {}: {}{note}", v.id, v.detail);
        if v.gating && !v.pass {
            failed.push(v.id);
        }
    }
    if !failed.is_empty() {
        eprintln!("failing criteria: {failed:?}");
        std::process::exit(1);
    }
}
