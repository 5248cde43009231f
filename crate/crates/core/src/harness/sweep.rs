use serde::{Deserialize, Serialize};

use super::bench::{load_inputs, run_systems, SystemSummary};
use super::config::{Models, RunConfig, SystemSpec};
use super::evaluate::{TOOL_NAME, TOOL_VERSION};
use crate::decoding::{DecodeSpec, DEFAULT_CS_ALPHA};
use crate::error::{Error, Result};

/// Contrastive-search sweep over an inclusive `k` range at a fixed `alpha`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub k_min: usize,
    pub k_max: usize,
    pub alpha: f64,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            k_min: 2,
            k_max: 10,
            alpha: DEFAULT_CS_ALPHA,
        }
    }
}

impl SweepSpec {
    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        if self.k_min < 1 || self.k_min > self.k_max || self.k_max > vocab_size {
            return Err(Error::InvalidInput(format!(
                "k range [{}, {}] must satisfy 1 <= k_min <= k_max <= vocabulary size {vocab_size}",
                self.k_min, self.k_max
            )));
        }
        DecodeSpec::ContrastiveSearch {
            k: self.k_min,
            alpha: self.alpha,
        }
        .validate()
    }

    pub fn systems(&self) -> Vec<SystemSpec> {
        (self.k_min..=self.k_max)
            .map(|k| SystemSpec {
                name: format!("cs-k{k}"),
                decode: DecodeSpec::ContrastiveSearch {
                    k,
                    alpha: self.alpha,
                },
            })
            .collect()
    }
}

/// One plot-ready point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub label: String,
    pub strategy: String,
    pub baseline: bool,
    pub k: Option<usize>,
    pub alpha: Option<f64>,
    pub generated: usize,
    pub failed: usize,
    pub coherence: Option<f64>,
    pub diversity: Option<f64>,
    pub diversity_percent: Option<f64>,
    pub frontier: Option<f64>,
    pub frontier_percent: Option<f64>,
}

impl SweepRow {
    fn from_summary(s: &SystemSummary, baseline: bool) -> Self {
        let (k, alpha) = match s.decode {
            DecodeSpec::ContrastiveSearch { k, alpha } => (Some(k), Some(alpha)),
            DecodeSpec::TopK { k } => (Some(k), None),
            DecodeSpec::ContrastiveDecoding { alpha, .. } => (None, Some(alpha)),
            _ => (None, None),
        };
        let m = &s.metrics;
        Self {
            label: s.system.clone(),
            strategy: s.decode.strategy_name().into(),
            baseline,
            k,
            alpha,
            generated: s.generated,
            failed: s.failed,
            coherence: m.coherence,
            diversity: m.diversity.diversity,
            diversity_percent: m.diversity.diversity_percent,
            frontier: m.frontier.as_ref().map(|f| f.value),
            frontier_percent: m.frontier_percent,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub tool: String,
    pub version: String,
    pub benchmark: String,
    pub seed: u64,
    pub sweep: SweepSpec,
    pub feature_extractor: String,
    pub failure_count: usize,
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn to_csv(&self) -> Result<String> {
        rows_to_csv(&self.rows)
    }
}

pub fn rows_to_csv(rows: &[SweepRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)
            .map_err(|e| Error::InvalidInput(format!("csv: {e}")))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::InvalidInput(format!("csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::InvalidInput(format!("csv: {e}")))
}

pub fn rows_from_csv(text: &str) -> Result<Vec<SweepRow>> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::InvalidInput(format!("csv: {e}")))
}

/// Sweep rows first, then one row per configured system as a baseline.
pub fn run_sweep(spec: &SweepSpec, config: &RunConfig, models: &Models) -> Result<SweepReport> {
    config.validate()?;
    spec.validate(models.model.vocab().size())?;
    let sweep_systems = spec.systems();
    if let Some(clash) = config
        .systems
        .iter()
        .find(|b| sweep_systems.iter().any(|s| s.name == b.name))
    {
        return Err(Error::InvalidInput(format!(
            "baseline name {:?} collides with a sweep row",
            clash.name
        )));
    }
    let systems: Vec<SystemSpec> = sweep_systems
        .iter()
        .chain(&config.systems)
        .cloned()
        .collect();
    let inputs = load_inputs(config, models)?;
    let (summary, _, failures) = run_systems(config, models, &inputs, &systems)?;
    let rows = summary
        .iter()
        .enumerate()
        .map(|(i, s)| SweepRow::from_summary(s, i >= sweep_systems.len()))
        .collect();
    Ok(SweepReport {
        tool: TOOL_NAME.into(),
        version: TOOL_VERSION.into(),
        benchmark: config.benchmark.name.clone(),
        seed: config.seed,
        sweep: *spec,
        feature_extractor: config.metrics.features.name().into(),
        failure_count: failures.len(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_range_has_nine_rows() {
        let s = SweepSpec::default();
        let systems = s.systems();
        assert_eq!(systems.len(), 9);
        assert_eq!(systems[0].name, "cs-k2");
        assert_eq!(
            systems[8].decode,
            DecodeSpec::ContrastiveSearch { k: 10, alpha: 0.6 }
        );
    }

    #[test]
    fn range_validation() {
        assert!(SweepSpec {
            k_min: 3,
            k_max: 3,
            alpha: 0.6
        }
        .validate(5)
        .is_ok());
        assert!(SweepSpec {
            k_min: 0,
            k_max: 3,
            alpha: 0.6
        }
        .validate(5)
        .is_err());
        assert!(SweepSpec {
            k_min: 4,
            k_max: 3,
            alpha: 0.6
        }
        .validate(5)
        .is_err());
        assert!(SweepSpec {
            k_min: 2,
            k_max: 10,
            alpha: 0.6
        }
        .validate(5)
        .is_err());
        assert!(SweepSpec {
            k_min: 2,
            k_max: 3,
            alpha: 1.5
        }
        .validate(5)
        .is_err());
    }

    #[test]
    fn csv_round_trip() {
        let rows = vec![
            SweepRow {
                label: "cs-k2".into(),
                strategy: "contrastive-search".into(),
                baseline: false,
                k: Some(2),
                alpha: Some(0.6),
                generated: 3,
                failed: 0,
                coherence: Some(-1.234_567_890_123),
                diversity: Some(0.1),
                diversity_percent: Some(10.000000000000002),
                frontier: None,
                frontier_percent: None,
            },
            SweepRow {
                label: "greedy".into(),
                strategy: "greedy".into(),
                baseline: true,
                k: None,
                alpha: None,
                generated: 3,
                failed: 1,
                coherence: None,
                diversity: Some(0.0),
                diversity_percent: Some(0.0),
                frontier: Some(0.5),
                frontier_percent: Some(50.0),
            },
        ];
        let text = rows_to_csv(&rows).unwrap();
        assert!(text.starts_with("label,strategy,baseline,k,alpha,"));
        assert_eq!(rows_from_csv(&text).unwrap(), rows);
    }
}
