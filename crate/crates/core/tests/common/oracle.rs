//! Reference implementations written without the library's helpers.
#![allow(dead_code)]

/// (name, reward_weight, time_weight, stability)
pub type PlainProfile = (String, f64, f64, f64);

/// (length, reward, time, run_time)
pub type PlainWeights = (f64, f64, f64, f64);

/// Scores every model and keeps the best; exact ties go to the model that
/// appears earliest in `order`, then by name.
pub fn select(
    code_length: u64,
    run_time: f64,
    recent: &str,
    profiles: &[PlainProfile],
    weights: PlainWeights,
    order: Option<&[String]>,
) -> String {
    let (wl, wr, wt, wrt) = weights;
    let scored: Vec<(&str, f64)> = profiles
        .iter()
        .map(|(name, r, t, s)| {
            let mut score = code_length as f64 * wl * r + wr * r - wt * t - wrt * run_time * r;
            if name == recent {
                score *= s;
            }
            (name.as_str(), score)
        })
        .collect();
    let best = scored.iter().map(|(_, s)| *s).fold(f64::NEG_INFINITY, f64::max);
    let mut tied: Vec<&str> = scored
        .iter()
        .filter(|(_, s)| *s == best)
        .map(|(n, _)| *n)
        .collect();
    let pos = |n: &str| {
        order
            .and_then(|o| o.iter().position(|m| m == n))
            .unwrap_or(usize::MAX)
    };
    tied.sort_by(|a, b| pos(a).cmp(&pos(b)).then(a.cmp(b)));
    tied[0].to_string()
}

/// e^x by Taylor series with pairwise-summed terms; only for |x| <= 2.
pub fn exp_series(x: f64) -> f64 {
    let mut terms = vec![1.0f64];
    let mut term = 1.0f64;
    for n in 1..60 {
        term *= x / n as f64;
        terms.push(term);
    }
    // small terms first
    terms.iter().rev().sum()
}

pub fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + exp_series(-2.0 * (x - 0.5)))
}

/// Percentile by sorting and indexing at `ceil(p * n / 100) - 1`.
pub fn percentile(values: &[u64], p: u64) -> u64 {
    let mut v = values.to_vec();
    v.sort();
    let n = v.len() as u64;
    let mut rank = p * n / 100;
    if rank * 100 < p * n {
        rank += 1;
    }
    v[rank.max(1) as usize - 1]
}

/// Reward of a task solved at loop `k` (1-based) when every failed round
/// fails both tiers, or of a task that never passes within `max_loops`.
pub fn session_reward(k: Option<usize>, max_loops: usize) -> f64 {
    let fail_round = -0.5 - 0.2;
    match k {
        Some(k) => (k - 1) as f64 * fail_round + 2.0 + 3.0,
        None => max_loops as f64 * fail_round,
    }
}

pub const TABLE1_TASKS: u64 = 702;

/// (model, solved at loops 1..=4, loop-5 column read as failures, average
/// running time in seconds for the fixed-model run)
pub const TABLE1: [(&str, [u64; 4], u64, f64); 3] = [
    ("ernie", [337, 60, 26, 14], 265, 137.5),
    ("llama", [317, 81, 32, 21], 251, 112.8),
    ("spark", [319, 48, 14, 4], 317, 57.7),
];
