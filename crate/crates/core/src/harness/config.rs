use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::io::read_json;
use super::prompts::DEFAULT_PROMPT_LENGTH;
use crate::decoding::{DecodeSpec, DEFAULT_MAX_LENGTH};
use crate::error::{Error, Result};
use crate::lm::{load_toy_model, LanguageModel, RemoteModel, DEFAULT_TIMEOUT};
use crate::metrics::MetricSettings;
use crate::text::TextCodec;

/// Environment variable naming the backend used when a config omits `model`.
pub const ENDPOINT_ENV: &str = "CTGEN_ENDPOINT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkSpec {
    pub name: String,
    pub prompt_file: PathBuf,
    #[serde(default = "default_prompt_length")]
    pub prompt_length: usize,
    #[serde(default = "default_max_length")]
    pub max_length: usize,
    /// Human continuations for the frontier metric.
    #[serde(default)]
    pub reference_file: Option<PathBuf>,
}

fn default_prompt_length() -> usize {
    DEFAULT_PROMPT_LENGTH
}

fn default_max_length() -> usize {
    DEFAULT_MAX_LENGTH
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub name: String,
    pub decode: DecodeSpec,
}

/// Either an in-process toy model spec file or a wire-protocol endpoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum ModelSource {
    Toy(PathBuf),
    Endpoint(String),
}

impl ModelSource {
    fn resolve(self, base: &Path) -> Self {
        match self {
            ModelSource::Toy(p) => ModelSource::Toy(base.join(p)),
            e => e,
        }
    }

    pub fn open(&self, timeout: Duration) -> Result<(Arc<dyn LanguageModel>, Option<TextCodec>)> {
        match self {
            ModelSource::Toy(path) => {
                let toy = load_toy_model(path)?;
                Ok((toy.model, toy.codec))
            }
            ModelSource::Endpoint(addr) => {
                Ok((Arc::new(RemoteModel::connect(addr, timeout)?), None))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub benchmark: BenchmarkSpec,
    pub systems: Vec<SystemSpec>,
    /// Falls back to the endpoint in `CTGEN_ENDPOINT`.
    #[serde(default)]
    pub model: Option<ModelSource>,
    /// Required when any system uses contrastive decoding.
    #[serde(default)]
    pub amateur: Option<ModelSource>,
    /// Coherence scorer; defaults to `model`.
    #[serde(default)]
    pub scorer: Option<ModelSource>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub metrics: MetricSettings,
    #[serde(default)]
    pub timeout_ms: Option<u64>,
}

impl RunConfig {
    /// Reads a config, resolving relative file paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut config: RunConfig = read_json(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        config.validate()?;
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        self.benchmark.prompt_file = base.join(&self.benchmark.prompt_file);
        if let Some(r) = &self.benchmark.reference_file {
            self.benchmark.reference_file = Some(base.join(r));
        }
        for source in [&mut self.model, &mut self.amateur, &mut self.scorer] {
            *source = source.take().map(|s| s.resolve(base));
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if self.benchmark.prompt_length == 0 {
            return bad("prompt_length must be at least 1".into());
        }
        if self.benchmark.max_length == 0 {
            return bad("max_length must be at least 1".into());
        }
        let mut names = HashSet::new();
        for s in &self.systems {
            if !names.insert(s.name.as_str()) {
                return bad(format!("duplicate system name {:?}", s.name.as_str()));
            }
            s.decode.validate()?;
        }
        if self.systems.iter().any(|s| s.decode.needs_amateur()) && self.amateur.is_none() {
            return bad("contrastive decoding systems need an `amateur` model".into());
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        self.timeout_ms
            .map_or(DEFAULT_TIMEOUT, Duration::from_millis)
    }

    /// Instantiates the configured models.
    pub fn open_models(&self) -> Result<Models> {
        let model_source = match &self.model {
            Some(m) => m.clone(),
            None => match std::env::var(ENDPOINT_ENV) {
                Ok(addr) if !addr.is_empty() => ModelSource::Endpoint(addr),
                _ => {
                    return Err(Error::InvalidInput(format!(
                        "no `model` configured and {ENDPOINT_ENV} is unset"
                    )))
                }
            },
        };
        let timeout = self.timeout();
        let (model, codec) = model_source.open(timeout)?;
        let needs_amateur = self.systems.iter().any(|s| s.decode.needs_amateur());
        let amateur = match (&self.amateur, needs_amateur) {
            (Some(a), true) => Some(a.open(timeout)?.0),
            _ => None,
        };
        let scorer = match &self.scorer {
            Some(s) => s.open(timeout)?.0,
            None => Arc::clone(&model),
        };
        Ok(Models {
            model,
            amateur,
            scorer,
            codec,
        })
    }
}

/// Opened models for one run.
#[derive(Clone)]
pub struct Models {
    pub model: Arc<dyn LanguageModel>,
    pub amateur: Option<Arc<dyn LanguageModel>>,
    pub scorer: Arc<dyn LanguageModel>,
    /// Present when the model was built from a text corpus.
    pub codec: Option<TextCodec>,
}
