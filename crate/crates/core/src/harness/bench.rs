use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{Models, RunConfig, SystemSpec};
use super::evaluate::{evaluate, CorpusMetrics, Sample, TOOL_NAME, TOOL_VERSION};
use super::io::Id;
use super::prompts::{load_prompts, load_texts, Prompt, Rejection};
use crate::decoding::{DecodeSpec, Decoder, GenerationRecord};
use crate::error::{Error, Result};
use crate::lm::TokenId;
use crate::metrics::{CoherenceScore, DiversityReport, MetricSettings};

/// Stable per-generation seed, so adding or reordering systems never changes another's outputs.
pub fn derive_seed(master_seed: u64, system: &str, prompt_index: usize) -> u64 {
    let mut h = Sha256::new();
    h.update(master_seed.to_le_bytes());
    h.update((system.len() as u64).to_le_bytes());
    h.update(system.as_bytes());
    h.update((prompt_index as u64).to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub system: String,
    pub prompt_id: Id,
    pub prompt_index: usize,
    #[serde(flatten)]
    pub generation: GenerationRecord,
}

impl RunRecord {
    pub fn sample(&self) -> Sample {
        Sample {
            id: self.prompt_id.clone(),
            prompt: self.generation.prompt.clone(),
            continuation: self.generation.continuation.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub system: String,
    pub prompt_id: Id,
    pub prompt_index: usize,
    pub seed: u64,
    pub error: String,
    /// True when the backend, not the input, failed.
    pub backend: bool,
    pub partial: Vec<TokenId>,
}

/// Generates every system on every prompt in parallel; output is ordered by
/// system then prompt index regardless of scheduling.
pub fn generate_all(
    models: &Models,
    systems: &[SystemSpec],
    prompts: &[Prompt],
    max_length: usize,
    master_seed: u64,
) -> (Vec<RunRecord>, Vec<Failure>) {
    let mut decoder = Decoder::new(models.model.as_ref());
    if let Some(a) = &models.amateur {
        decoder = decoder.with_amateur(a.as_ref());
    }
    let jobs: Vec<(&SystemSpec, usize, &Prompt)> = systems
        .iter()
        .flat_map(|s| prompts.iter().enumerate().map(move |(i, p)| (s, i, p)))
        .collect();
    let outcomes: Vec<std::result::Result<RunRecord, Failure>> = jobs
        .par_iter()
        .map(|&(system, index, prompt)| {
            let seed = derive_seed(master_seed, &system.name, index);
            decoder
                .generate(&prompt.tokens, &system.decode, max_length, seed)
                .map(|generation| RunRecord {
                    system: system.name.clone(),
                    prompt_id: prompt.id.clone(),
                    prompt_index: index,
                    generation,
                })
                .map_err(|e| {
                    log::warn!("{} on prompt {}: {e}", system.name, prompt.id);
                    Failure {
                        system: system.name.clone(),
                        prompt_id: prompt.id.clone(),
                        prompt_index: index,
                        seed,
                        backend: e.is_backend(),
                        partial: match &e {
                            Error::Generation { partial, .. } => partial.clone(),
                            _ => Vec::new(),
                        },
                        error: e.to_string(),
                    }
                })
        })
        .collect();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for o in outcomes {
        match o {
            Ok(r) => records.push(r),
            Err(f) => failures.push(f),
        }
    }
    (records, failures)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    #[serde(flatten)]
    pub run: RunRecord,
    pub diversity: DiversityReport,
    pub coherence: Option<CoherenceScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemSummary {
    pub system: String,
    pub decode: DecodeSpec,
    pub generated: usize,
    pub failed: usize,
    pub metrics: CorpusMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub tool: String,
    pub version: String,
    pub benchmark: String,
    pub prompt_length: usize,
    pub max_length: usize,
    pub seed: u64,
    pub metric_settings: MetricSettings,
    pub feature_extractor: String,
    pub systems: Vec<SystemSpec>,
    pub prompt_count: usize,
    pub rejected_prompts: Vec<Rejection>,
    pub reference_count: usize,
    pub failure_count: usize,
    pub summary: Vec<SystemSummary>,
    pub instances: Vec<InstanceRecord>,
    pub failures: Vec<Failure>,
}

impl BenchmarkReport {
    /// Pretty JSON with a trailing newline; byte-identical for identical runs.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn table(&self) -> String {
        render_table(&self.summary)
    }
}

/// Prompts and references for a config, with references paired to prompts by id.
pub struct BenchmarkInputs {
    pub prompts: Vec<Prompt>,
    pub rejected: Vec<Rejection>,
    pub references: Option<Vec<Sample>>,
}

pub fn load_inputs(config: &RunConfig, models: &Models) -> Result<BenchmarkInputs> {
    let bench = &config.benchmark;
    let set = load_prompts(
        &bench.prompt_file,
        bench.prompt_length,
        models.codec.as_ref(),
    )?;
    let vocab = models.model.vocab();
    for p in &set.prompts {
        vocab
            .check_tokens(&p.tokens)
            .map_err(|e| Error::InvalidInput(format!("prompt {}: {e}", p.id)))?;
    }
    let references = match &bench.reference_file {
        Some(path) => {
            let texts = load_texts(path, models.codec.as_ref())?;
            let samples = texts
                .into_iter()
                .map(|t| Sample {
                    prompt: set
                        .prompts
                        .iter()
                        .find(|p| p.id == t.id)
                        .map(|p| p.tokens.clone())
                        .unwrap_or_default(),
                    id: t.id,
                    continuation: t.tokens,
                })
                .collect();
            Some(samples)
        }
        None => None,
    };
    Ok(BenchmarkInputs {
        prompts: set.prompts,
        rejected: set.rejected,
        references,
    })
}

/// Generation plus metrics for an explicit system list; shared by benchmarks and sweeps.
pub(crate) fn run_systems(
    config: &RunConfig,
    models: &Models,
    inputs: &BenchmarkInputs,
    systems: &[SystemSpec],
) -> Result<(Vec<SystemSummary>, Vec<InstanceRecord>, Vec<Failure>)> {
    let (records, failures) = generate_all(
        models,
        systems,
        &inputs.prompts,
        config.benchmark.max_length,
        config.seed,
    );
    let mut summary = Vec::with_capacity(systems.len());
    let mut instances = Vec::with_capacity(records.len());
    for system in systems {
        let runs: Vec<&RunRecord> = records.iter().filter(|r| r.system == system.name).collect();
        let samples: Vec<Sample> = runs.iter().map(|r| r.sample()).collect();
        let (metrics, corpus) = evaluate(
            &samples,
            inputs.references.as_deref(),
            Some(models.scorer.as_ref()),
            &config.metrics,
            config.seed,
        )?;
        for (run, m) in runs.into_iter().zip(metrics) {
            instances.push(InstanceRecord {
                run: run.clone(),
                diversity: m.diversity,
                coherence: m.coherence,
            });
        }
        summary.push(SystemSummary {
            system: system.name.clone(),
            decode: system.decode,
            generated: samples.len(),
            failed: failures.iter().filter(|f| f.system == system.name).count(),
            metrics: corpus,
        });
    }
    Ok((summary, instances, failures))
}

pub fn run_benchmark(config: &RunConfig, models: &Models) -> Result<BenchmarkReport> {
    config.validate()?;
    let inputs = load_inputs(config, models)?;
    let (summary, instances, failures) = run_systems(config, models, &inputs, &config.systems)?;
    Ok(BenchmarkReport {
        tool: TOOL_NAME.into(),
        version: TOOL_VERSION.into(),
        benchmark: config.benchmark.name.clone(),
        prompt_length: config.benchmark.prompt_length,
        max_length: config.benchmark.max_length,
        seed: config.seed,
        metric_settings: config.metrics,
        feature_extractor: config.metrics.features.name().into(),
        systems: config.systems.clone(),
        prompt_count: inputs.prompts.len(),
        rejected_prompts: inputs.rejected,
        reference_count: inputs.references.as_ref().map_or(0, Vec::len),
        failure_count: failures.len(),
        summary,
        instances,
        failures,
    })
}

/// Plain-text table with diversity and frontier as percentages and coherence raw.
pub fn render_table(summary: &[SystemSummary]) -> String {
    let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.2}"));
    let header = ["Method", "div.(%)", "MAUVE(%)", "coh."].map(String::from);
    let rows: Vec<[String; 4]> = summary
        .iter()
        .map(|s| {
            [
                s.system.clone(),
                fmt(s.metrics.diversity.diversity_percent),
                fmt(s.metrics.frontier_percent),
                fmt(s.metrics.coherence),
            ]
        })
        .collect();
    let mut widths = header.clone().map(|h| h.len());
    for r in &rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cells: &[String; 4]| {
        let mut s = format!("{:<w$}", cells[0], w = widths[0]);
        for (c, w) in cells[1..].iter().zip(&widths[1..]) {
            s.push_str(&format!(" | {c:>w$}", w = *w));
        }
        s.trim_end().to_string() + "\n"
    };
    let mut out = line(&header);
    out.push_str(
        &widths
            .iter()
            .map(|w| "-".repeat(*w))
            .collect::<Vec<_>>()
            .join("-|-"),
    );
    out.push('\n');
    for r in &rows {
        out.push_str(&line(r));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_are_stable_and_distinct() {
        assert_eq!(derive_seed(1, "cs", 0), derive_seed(1, "cs", 0));
        assert_ne!(derive_seed(1, "cs", 0), derive_seed(1, "cs", 1));
        assert_ne!(derive_seed(1, "cs", 0), derive_seed(2, "cs", 0));
        assert_ne!(derive_seed(1, "cs", 0), derive_seed(1, "greedy", 0));
        // Length prefix separates ("ab", index) from ("a", ...) style collisions.
        assert_ne!(derive_seed(0, "a", 0), derive_seed(0, "", 0));
    }

    #[test]
    fn table_layout() {
        let summary = vec![SystemSummary {
            system: "greedy".into(),
            decode: DecodeSpec::Greedy,
            generated: 1,
            failed: 0,
            metrics: CorpusMetrics {
                count: 1,
                diversity: crate::metrics::corpus_diversity(&[crate::metrics::diversity(&[
                    1, 2, 3, 4,
                ])]),
                coherence: Some(-1.5),
                coherence_degenerate: 0,
                coherence_failed: 0,
                frontier: None,
                frontier_percent: None,
            },
        }];
        let t = render_table(&summary);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines[0], "Method | div.(%) | MAUVE(%) |  coh.");
        assert_eq!(lines[2], "greedy |  100.00 |        - | -1.50");
    }
}
