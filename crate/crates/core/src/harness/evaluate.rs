use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::io::{read_jsonl, Id};
use crate::error::Result;
use crate::lm::{LanguageModel, TokenId};
use crate::metrics::{
    coherence, corpus_coherence, corpus_diversity, diversity, frontier_score,
    truncate_for_frontier, CoherenceScore, CorpusDiversity, DiversityReport, FrontierScore,
    MetricSettings,
};

pub const TOOL_NAME: &str = "ctgen";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// A continuation together with the prompt that conditioned it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub id: Id,
    #[serde(default)]
    pub prompt: Vec<TokenId>,
    pub continuation: Vec<TokenId>,
}

#[derive(Deserialize)]
struct SampleLine {
    #[serde(alias = "id")]
    prompt_id: Id,
    #[serde(default)]
    prompt: Vec<TokenId>,
    #[serde(alias = "tokens")]
    continuation: Vec<TokenId>,
}

/// Reads generation records or plain `{"id", "tokens"}` lines as samples.
pub fn load_samples(path: &Path) -> Result<Vec<Sample>> {
    let lines: Vec<SampleLine> = read_jsonl(path)?;
    Ok(lines
        .into_iter()
        .map(|l| Sample {
            id: l.prompt_id,
            prompt: l.prompt,
            continuation: l.continuation,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceMetrics {
    pub id: Id,
    pub diversity: DiversityReport,
    /// Absent when no scorer was given or scoring failed.
    pub coherence: Option<CoherenceScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusMetrics {
    pub count: usize,
    pub diversity: CorpusDiversity,
    /// Mean over non-degenerate instances.
    pub coherence: Option<f64>,
    pub coherence_degenerate: usize,
    pub coherence_failed: usize,
    pub frontier: Option<FrontierScore>,
    pub frontier_percent: Option<f64>,
}

/// Standalone metric document for a corpus of continuations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub tool: String,
    pub version: String,
    pub settings: MetricSettings,
    pub seed: u64,
    pub instances: Vec<InstanceMetrics>,
    pub corpus: CorpusMetrics,
}

/// Per-instance and corpus metrics. The frontier needs `references` and is
/// computed on continuations truncated to `settings.truncate` tokens.
pub fn evaluate(
    samples: &[Sample],
    references: Option<&[Sample]>,
    scorer: Option<&dyn LanguageModel>,
    settings: &MetricSettings,
    seed: u64,
) -> Result<(Vec<InstanceMetrics>, CorpusMetrics)> {
    let instances: Vec<InstanceMetrics> = samples
        .par_iter()
        .map(|s| {
            let coherence = scorer.filter(|_| !s.continuation.is_empty()).and_then(|m| {
                coherence(m, &s.prompt, &s.continuation)
                    .map_err(|e| log::warn!("coherence for {} failed: {e}", s.id))
                    .ok()
            });
            InstanceMetrics {
                id: s.id.clone(),
                diversity: diversity(&s.continuation),
                coherence,
            }
        })
        .collect();

    let scored: Vec<&CoherenceScore> = instances
        .iter()
        .filter_map(|i| i.coherence.as_ref())
        .collect();
    let (coherence_mean, coherence_degenerate) = corpus_coherence(scored.iter().copied());
    let coherence_failed = if scorer.is_some() {
        samples.len() - scored.len()
    } else {
        0
    };

    let frontier = match references {
        Some(refs) if !refs.is_empty() && !samples.is_empty() => {
            let features = |set: &[Sample]| -> Result<Vec<Vec<f64>>> {
                set.par_iter()
                    .map(|s| {
                        settings.features.extract(
                            scorer,
                            &s.prompt,
                            truncate_for_frontier(&s.continuation, settings.truncate),
                        )
                    })
                    .collect()
            };
            let p = features(refs)?;
            let q = features(samples)?;
            Some(frontier_score(&p, &q, &settings.frontier_config(seed))?)
        }
        _ => None,
    };

    let diversity = corpus_diversity(instances.iter().map(|i| &i.diversity));
    let corpus = CorpusMetrics {
        count: samples.len(),
        diversity,
        coherence: coherence_mean,
        coherence_degenerate,
        coherence_failed,
        frontier_percent: frontier.as_ref().map(|f| 100.0 * f.value),
        frontier,
    };
    Ok((instances, corpus))
}

pub fn metric_report(
    samples: &[Sample],
    references: Option<&[Sample]>,
    scorer: Option<&dyn LanguageModel>,
    settings: &MetricSettings,
    seed: u64,
) -> Result<MetricReport> {
    let (instances, corpus) = evaluate(samples, references, scorer, settings, seed)?;
    Ok(MetricReport {
        tool: TOOL_NAME.into(),
        version: TOOL_VERSION.into(),
        settings: *settings,
        seed,
        instances,
        corpus,
    })
}
