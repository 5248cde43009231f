//! Greedy selection and the truncated-sampling baselines.
//!
//! Every support is a deterministic function of the distribution: tokens are
//! ranked by a strategy-specific key with ties going to the lowest token id,
//! and a prefix of that ranking is kept. Tokens with equal keys beyond the
//! cut are excluded.

use rand::Rng;

use crate::error::{Error, Result};
use crate::lm::TokenId;

/// Slack on cumulative-mass comparisons so that `0.1 + 0.2 >= 0.3` holds.
const MASS_EPSILON: f64 = 1e-12;

/// Resolution at which typical-sampling deviations are compared; deviations
/// closer than this count as ties.
const DEVIATION_RESOLUTION: f64 = 1e-12;

fn check(dist: &[f64]) -> Result<()> {
    if dist.is_empty() {
        return Err(Error::InvalidInput("empty distribution".into()));
    }
    if dist.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::InvalidInput(
            "distribution entries must be finite and non-negative".into(),
        ));
    }
    Ok(())
}

/// Index of the maximal probability, lowest id on ties.
pub fn greedy_step(dist: &[f64]) -> Result<TokenId> {
    check(dist)?;
    Ok(argmax(dist))
}

pub(crate) fn argmax(dist: &[f64]) -> TokenId {
    let mut best = 0;
    for (i, p) in dist.iter().enumerate().skip(1) {
        if *p > dist[best] {
            best = i;
        }
    }
    best as TokenId
}

/// Token ids by descending probability, ascending id among equals.
pub fn descending_order(dist: &[f64]) -> Vec<TokenId> {
    let mut ids: Vec<TokenId> = (0..dist.len() as TokenId).collect();
    ids.sort_by(|&a, &b| {
        dist[b as usize]
            .total_cmp(&dist[a as usize])
            .then(a.cmp(&b))
    });
    ids
}

/// The `k` most probable tokens; `k` is clamped to the vocabulary size.
pub fn top_k_support(dist: &[f64], k: usize) -> Vec<TokenId> {
    let mut order = descending_order(dist);
    order.truncate(k.max(1));
    order
}

fn mass_prefix(dist: &[f64], order: Vec<TokenId>, threshold: f64) -> Vec<TokenId> {
    let mut cum = 0.0;
    let mut support = Vec::new();
    for t in order {
        support.push(t);
        cum += dist[t as usize];
        if cum + MASS_EPSILON >= threshold {
            break;
        }
    }
    support
}

/// Smallest probability-descending prefix with mass at least `p`.
pub fn nucleus_support(dist: &[f64], p: f64) -> Vec<TokenId> {
    if p >= 1.0 {
        return (0..dist.len() as TokenId).collect();
    }
    mass_prefix(dist, descending_order(dist), p)
}

/// Entropy in nats over the positive entries.
pub fn entropy(dist: &[f64]) -> f64 {
    -dist
        .iter()
        .filter(|p| **p > 0.0)
        .map(|p| p * p.ln())
        .sum::<f64>()
}

/// Positive-probability tokens ranked by `|-ln p - H|`, then the smallest
/// prefix with mass at least `tau`.
pub fn typical_support(dist: &[f64], tau: f64) -> Vec<TokenId> {
    let h = entropy(dist);
    let mut ranked: Vec<(i64, TokenId)> = dist
        .iter()
        .enumerate()
        .filter(|(_, p)| **p > 0.0)
        .map(|(i, p)| {
            let deviation = (-p.ln() - h).abs();
            (
                (deviation / DEVIATION_RESOLUTION).round() as i64,
                i as TokenId,
            )
        })
        .collect();
    ranked.sort_unstable();
    let order: Vec<TokenId> = ranked.into_iter().map(|(_, t)| t).collect();
    if tau >= 1.0 {
        return order;
    }
    mass_prefix(dist, order, tau)
}

/// Draws from `dist` renormalized over `support`.
pub fn sample_from_support<R: Rng + ?Sized>(
    dist: &[f64],
    support: &[TokenId],
    rng: &mut R,
) -> TokenId {
    let total: f64 = support.iter().map(|&t| dist[t as usize]).sum();
    let u = rng.random::<f64>() * total;
    let mut cum = 0.0;
    let mut last_positive = support[0];
    for &t in support {
        let p = dist[t as usize];
        if p > 0.0 {
            cum += p;
            last_positive = t;
            if u < cum {
                return t;
            }
        }
    }
    last_positive
}

pub fn topk_sample_step<R: Rng + ?Sized>(dist: &[f64], k: usize, rng: &mut R) -> Result<TokenId> {
    check(dist)?;
    if k == 0 {
        return Err(Error::InvalidInput("top-k needs k >= 1".into()));
    }
    Ok(sample_from_support(dist, &top_k_support(dist, k), rng))
}

pub fn nucleus_sample_step<R: Rng + ?Sized>(dist: &[f64], p: f64, rng: &mut R) -> Result<TokenId> {
    check(dist)?;
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "nucleus p must lie in (0, 1], got {p}"
        )));
    }
    Ok(sample_from_support(dist, &nucleus_support(dist, p), rng))
}

pub fn typical_sample_step<R: Rng + ?Sized>(
    dist: &[f64],
    tau: f64,
    rng: &mut R,
) -> Result<TokenId> {
    check(dist)?;
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "typical tau must lie in (0, 1], got {tau}"
        )));
    }
    if dist.iter().all(|p| *p == 0.0) {
        return Err(Error::InvalidInput(
            "distribution has no positive entries".into(),
        ));
    }
    Ok(sample_from_support(dist, &typical_support(dist, tau), rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn frequencies(n: usize, draws: usize, mut draw: impl FnMut() -> TokenId) -> Vec<f64> {
        let mut counts = vec![0usize; n];
        for _ in 0..draws {
            counts[draw() as usize] += 1;
        }
        counts
            .into_iter()
            .map(|c| c as f64 / draws as f64)
            .collect()
    }

    #[test]
    fn greedy_examples() {
        assert_eq!(greedy_step(&[0.7, 0.2, 0.1]).unwrap(), 0);
        assert_eq!(greedy_step(&[0.4, 0.4, 0.2]).unwrap(), 0);
        assert_eq!(greedy_step(&[0.2, 0.4, 0.4]).unwrap(), 1);
        assert_eq!(greedy_step(&[1.0]).unwrap(), 0);
        assert!(greedy_step(&[]).is_err());
    }

    #[test]
    fn ordering_breaks_ties_by_id() {
        assert_eq!(descending_order(&[0.2, 0.4, 0.2, 0.4]), vec![1, 3, 0, 2]);
        assert_eq!(top_k_support(&[0.2, 0.4, 0.2, 0.4], 3), vec![1, 3, 0]);
        assert_eq!(top_k_support(&[0.5, 0.5], 7), vec![0, 1]);
    }

    #[test]
    fn top_k_one_is_greedy() {
        let dist = [0.1, 0.3, 0.3, 0.3];
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            assert_eq!(topk_sample_step(&dist, 1, &mut rng).unwrap(), 1);
        }
    }

    #[test]
    fn top_k_frequencies() {
        let dist = [0.5, 0.3, 0.2];
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let f = frequencies(3, 100_000, || topk_sample_step(&dist, 2, &mut rng).unwrap());
        assert_eq!(f[2], 0.0);
        assert!((f[0] - 0.625).abs() < 0.02, "{f:?}");
    }

    #[test]
    fn nucleus_supports() {
        assert_eq!(nucleus_support(&[0.9, 0.06, 0.04], 0.9), vec![0]);
        assert_eq!(nucleus_support(&[0.5, 0.3, 0.2], 0.75), vec![0, 1]);
        assert_eq!(nucleus_support(&[0.5, 0.3, 0.2], 0.8), vec![0, 1]);
        assert_eq!(nucleus_support(&[0.2, 0.3, 0.5], 1.0), vec![0, 1, 2]);
        // Equal-probability tokens beyond the cut are excluded.
        assert_eq!(nucleus_support(&[0.25; 4], 0.5), vec![0, 1]);
    }

    #[test]
    fn nucleus_never_leaves_support() {
        let dist = [0.9, 0.06, 0.04];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10_000 {
            assert_eq!(nucleus_sample_step(&dist, 0.9, &mut rng).unwrap(), 0);
        }
        assert!(nucleus_sample_step(&dist, 0.0, &mut rng).is_err());
        assert!(nucleus_sample_step(&dist, 1.5, &mut rng).is_err());
    }

    #[test]
    fn typical_supports() {
        // Uniform: every deviation is zero.
        assert_eq!(typical_support(&[0.25; 4], 0.3), vec![0, 1]);
        assert_eq!(typical_support(&[0.25; 4], 1.0), vec![0, 1, 2, 3]);
        // tau = 1 keeps exactly the positive tokens.
        assert_eq!(typical_support(&[0.5, 0.0, 0.5], 1.0), vec![0, 2]);
        // H = 1.5 ln 2, every deviation is ln(2)/2: a three-way tie -> lowest id.
        assert_eq!(typical_support(&[0.5, 0.25, 0.25], 0.5), vec![0]);
        // Deviations 0.336, 0.174, 0.580 -> ranking 1, 0, 2.
        assert_eq!(typical_support(&[0.5, 0.3, 0.2], 0.5), vec![1, 0]);
    }

    #[test]
    fn typical_rejects_bad_tau() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(typical_sample_step(&[0.5, 0.5], 0.0, &mut rng).is_err());
        assert!(typical_sample_step(&[0.5, 0.5], 1.01, &mut rng).is_err());
    }

    #[test]
    fn entropy_of_uniform() {
        assert!((entropy(&[0.25; 4]) - 4f64.ln()).abs() < 1e-15);
        assert_eq!(entropy(&[1.0, 0.0]), 0.0);
    }
}
