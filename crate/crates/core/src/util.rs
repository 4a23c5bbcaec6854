//! Small numeric helpers shared across modules.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Sentinel log-probability for impossible events. Behaves correctly under
/// addition (absorbing) and `exp` (maps to 0).
pub const LOG_ZERO: f64 = f64::NEG_INFINITY;

/// True if a log-probability marks an impossible event.
pub fn is_log_zero(lp: f64) -> bool {
    lp == LOG_ZERO
}

/// `ln x` with `ln 0 = LOG_ZERO` instead of a NaN-prone edge.
pub fn safe_ln(x: f64) -> f64 {
    if x <= 0.0 {
        LOG_ZERO
    } else {
        x.ln()
    }
}

/// Numerically stable `log(sum(exp(xs)))`. Returns `LOG_ZERO` when every
/// entry is impossible.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(LOG_ZERO, f64::max);
    if is_log_zero(m) {
        return LOG_ZERO;
    }
    let s: f64 = xs.iter().map(|&x| (x - m).exp()).sum();
    m + s.ln()
}

/// Normalize log-weights into a probability vector.
/// Entries at `LOG_ZERO` map to exactly 0.
pub fn normalize_log_weights(log_w: &[f64]) -> Vec<f64> {
    let z = log_sum_exp(log_w);
    log_w
        .iter()
        .map(|&lw| if is_log_zero(lw) { 0.0 } else { (lw - z).exp() })
        .collect()
}

/// KL divergence of two finite distributions, with the 0 ln 0 = 0
/// convention. Infinite when `q` lacks mass somewhere `p` has it.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&pi, &qi)| if pi == 0.0 { 0.0 } else { pi * (safe_ln(pi) - safe_ln(qi)) })
        .sum()
}

/// Euclidean projection of `v` onto the probability simplex.
///
/// Sort-based algorithm: find the threshold t such that
/// `sum(max(v_i - t, 0)) = 1` and clip.
pub fn project_to_simplex(v: &[f64]) -> Vec<f64> {
    let n = v.len();
    assert!(n > 0, "cannot project an empty vector");
    let mut sorted: Vec<f64> = v.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cumsum = 0.0;
    let mut threshold = sorted[0] - 1.0;
    for (k, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - 1.0) / (k + 1) as f64;
        if k + 1 == n || sorted[k + 1] <= t {
            threshold = t;
            break;
        }
    }
    v.iter().map(|&x| (x - threshold).max(0.0)).collect()
}

/// SplitMix64 step, used to derive independent RNG streams from a master
/// seed plus a context tag without correlation between streams.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Deterministic sub-stream RNG for `(seed, tags...)`. The same inputs
/// always yield the same stream; distinct tags yield independent streams.
pub fn substream(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    let mut s = splitmix64(seed);
    for &t in tags {
        s = splitmix64(s ^ splitmix64(t));
    }
    ChaCha8Rng::seed_from_u64(s)
}

/// Draw an index from a probability row using inverse-CDF sampling.
/// Deterministic given the RNG state and stable across platforms.
pub fn sample_index(probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    use rand::Rng;
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Guard against accumulated rounding just below 1.
    probs.len() - 1
}
