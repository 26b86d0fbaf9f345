//! Small numeric helpers shared across modules.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Natural-log probability of an impossible event.
pub const LOG_ZERO: f64 = f64::NEG_INFINITY;

/// `log Σ exp(x_i)`; returns `-inf` for an empty slice or all `-inf` input.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub fn safe_ln(p: f64) -> f64 {
    if p > 0.0 {
        p.ln()
    } else {
        LOG_ZERO
    }
}

/// SplitMix64 finaliser, used to derive independent child seeds.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic child seed for `(seed, tags...)`.
pub fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(mix64(seed), |acc, t| mix64(acc ^ mix64(*t)))
}

pub fn rng_for(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, tags))
}

/// Stationary distribution of a row-stochastic matrix by power iteration.
/// Rows may be sub-stochastic (exit mass); they are renormalised first.
pub fn stationary_distribution(transitions: &[Vec<f64>]) -> Vec<f64> {
    let n = transitions.len();
    if n == 0 {
        return Vec::new();
    }
    let rows: Vec<Vec<f64>> = transitions
        .iter()
        .map(|r| {
            let s: f64 = r.iter().sum();
            if s > 0.0 {
                r.iter().map(|v| v / s).collect()
            } else {
                r.clone()
            }
        })
        .collect();
    let mut p = vec![1.0 / n as f64; n];
    for _ in 0..10_000 {
        let mut next = vec![0.0; n];
        for (i, row) in rows.iter().enumerate() {
            for (j, a) in row.iter().enumerate() {
                next[j] += p[i] * a;
            }
        }
        // lazy step guards against periodic chains
        for (nx, old) in next.iter_mut().zip(&p) {
            *nx = 0.5 * *nx + 0.5 * old;
        }
        let total: f64 = next.iter().sum();
        next.iter_mut().for_each(|v| *v /= total);
        let diff: f64 = next.iter().zip(&p).map(|(a, b)| (a - b).abs()).sum();
        p = next;
        if diff < 1e-14 {
            break;
        }
    }
    p
}
