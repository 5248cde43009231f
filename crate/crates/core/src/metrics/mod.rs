//! Diversity, coherence, divergence-frontier closeness and the paired sign test.

mod coherence;
mod diversity;
mod features;
mod frontier;

use serde::{Deserialize, Serialize};

pub use coherence::{coherence, corpus_coherence, CoherenceScore};
pub use diversity::{
    corpus_diversity, diversity, rep_n, CorpusDiversity, DiversityReport, DIVERSITY_ORDERS,
};
pub use features::{bigram_hash, mean_representation, FeatureExtractor, DEFAULT_BIGRAM_DIM};
pub use frontier::{
    frontier_from_histograms, frontier_score, kl_divergence, kmeans, mixture_grid,
    truncate_for_frontier, CurvePoint, FrontierConfig, FrontierScore, DEFAULT_GRID_SIZE,
    DEFAULT_KMEANS_ITERATIONS, DEFAULT_SCALING_CONSTANT, FRONTIER_TRUNCATION,
};
pub use sign_test::{
    sign_test, sign_test_counts, two_sided_binomial_p, PairwiseComparison, SignTestResult, Verdict,
    SIGNIFICANCE_LEVEL,
};

/// Metric hyperparameters shared by benchmark, sweep and standalone metric runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricSettings {
    pub features: FeatureExtractor,
    /// `None` picks one bin per ten feature vectors.
    pub num_bins: Option<usize>,
    pub scaling_constant: f64,
    pub grid_size: usize,
    pub kmeans_iterations: usize,
    pub truncate: usize,
}

impl Default for MetricSettings {
    fn default() -> Self {
        Self {
            features: FeatureExtractor::default(),
            num_bins: None,
            scaling_constant: DEFAULT_SCALING_CONSTANT,
            grid_size: DEFAULT_GRID_SIZE,
            kmeans_iterations: DEFAULT_KMEANS_ITERATIONS,
            truncate: FRONTIER_TRUNCATION,
        }
    }
}

impl MetricSettings {
    pub fn frontier_config(&self, seed: u64) -> FrontierConfig {
        FrontierConfig {
            num_bins: self.num_bins,
            scaling_constant: self.scaling_constant,
            grid_size: self.grid_size,
            kmeans_iterations: self.kmeans_iterations,
            seed,
        }
    }
}
