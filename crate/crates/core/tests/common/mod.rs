#![allow(dead_code)]

use std::path::PathBuf;

use ctgen::lm::{TableModel, TableRow, TokenId, Vocabulary, WindowVector};
use rand::Rng;

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

/// Probabilities from small integer weights, so exact ties and zeros are common.
pub fn random_distribution<R: Rng>(rng: &mut R, v: usize, allow_zero: bool) -> Vec<f64> {
    loop {
        let weights: Vec<u32> = (0..v)
            .map(|_| {
                let lo = if allow_zero { 0 } else { 1 };
                rng.random_range(lo..=6)
            })
            .collect();
        let total: u32 = weights.iter().sum();
        if total > 0 {
            return weights
                .iter()
                .map(|&w| f64::from(w) / f64::from(total))
                .collect();
        }
    }
}

/// Small integer vectors; the zero vector shows up occasionally.
pub fn random_vector<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|_| f64::from(rng.random_range(-2i32..=2)))
        .collect()
}

pub fn random_context<R: Rng>(rng: &mut R, v: usize, max_len: usize) -> Vec<TokenId> {
    let len = rng.random_range(1..=max_len);
    (0..len)
        .map(|_| rng.random_range(0..v as TokenId))
        .collect()
}

/// A table model with conditional rows up to `order` and window-vector overrides.
pub fn random_table<R: Rng>(rng: &mut R, v: usize, dim: usize, order: usize) -> TableModel {
    let vocab = Vocabulary::new(v, None).unwrap();
    let mut rows = vec![TableRow {
        context: Vec::new(),
        probs: random_distribution(rng, v, true),
    }];
    let mut seen = std::collections::HashSet::new();
    for _ in 0..rng.random_range(0..=2 * v) {
        let len = rng.random_range(1..=order.max(1));
        let context: Vec<TokenId> = (0..len)
            .map(|_| rng.random_range(0..v as TokenId))
            .collect();
        if seen.insert(context.clone()) {
            rows.push(TableRow {
                context,
                probs: random_distribution(rng, v, true),
            });
        }
    }
    let token_vectors = (0..v).map(|_| random_vector(rng, dim)).collect();
    let mut windows = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for _ in 0..rng.random_range(0..=v) {
        let len = rng.random_range(1..=2);
        let window: Vec<TokenId> = (0..len)
            .map(|_| rng.random_range(0..v as TokenId))
            .collect();
        if seen.insert(window.clone()) {
            windows.push(WindowVector {
                window,
                vector: random_vector(rng, dim),
            });
        }
    }
    TableModel::new(vocab, rows, token_vectors, windows).unwrap()
}

/// Unconditional model with identical token vectors.
pub fn uniform_table(v: usize) -> TableModel {
    let vocab = Vocabulary::new(v, None).unwrap();
    TableModel::unconditional(vocab, vec![1.0 / v as f64; v], vec![vec![1.0]; v]).unwrap()
}
