use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use ctgen::decoding::{
    DecodeSpec, Decoder, StepTrace, DEFAULT_CD_ALPHA, DEFAULT_CD_AMATEUR_TEMPERATURE,
    DEFAULT_CS_ALPHA, DEFAULT_CS_K, DEFAULT_MAX_LENGTH, DEFAULT_NUCLEUS_P, DEFAULT_TOP_K,
    DEFAULT_TYPICAL_TAU,
};
use ctgen::harness::{
    derive_seed, load_prompts, load_samples, metric_report, pairwise_export, pairwise_ingest,
    read_jsonl, run_benchmark, run_sweep, to_jsonl, write_file, Id, KeyRow, ModelSource, RunConfig,
    RunRecord, SweepSpec, VerdictRow, DEFAULT_PROMPT_LENGTH,
};
use ctgen::lm::{load_toy_model, LanguageModel, Server};
use ctgen::metrics::{
    FeatureExtractor, MetricSettings, PairwiseComparison, SignTestResult, DEFAULT_BIGRAM_DIM,
    DEFAULT_GRID_SIZE, DEFAULT_KMEANS_ITERATIONS, DEFAULT_SCALING_CONSTANT, FRONTIER_TRUNCATION,
};
use ctgen::text::TextCodec;
use ctgen::{Error, Result};

/// Contrastive search, contrastive decoding and generation metrics.
#[derive(Debug, Parser)]
#[command(name = "ctgen", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate continuations for a prompt file.
    Generate(GenerateArgs),
    /// Run every system of a config and report metrics.
    Bench(BenchArgs),
    /// Sweep contrastive search over a range of k.
    Sweep(SweepArgs),
    /// Score continuations against human references.
    Metrics(MetricsArgs),
    /// Write a blind pairwise worksheet and its key.
    PairExport(PairExportArgs),
    /// De-blind graded verdicts and run the sign test.
    PairIngest(PairIngestArgs),
    /// Serve a toy model over the wire protocol.
    ServeToy(ServeToyArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Strategy {
    Greedy,
    TopK,
    Nucleus,
    Typical,
    ContrastiveDecoding,
    ContrastiveSearch,
}

#[derive(Debug, Args)]
struct Runtime {
    /// Worker threads (default: logical cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// Backend connect and read timeout in milliseconds.
    #[arg(long, default_value_t = 30_000)]
    timeout_ms: u64,
}

impl Runtime {
    fn apply(&self) -> Result<()> {
        if let Some(j) = self.jobs {
            if j == 0 {
                return Err(Error::InvalidInput("--jobs must be at least 1".into()));
            }
            rayon::ThreadPoolBuilder::new()
                .num_threads(j)
                .build_global()
                .map_err(|e| Error::InvalidInput(format!("worker pool: {e}")))?;
        }
        Ok(())
    }

    fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }
}

#[derive(Debug, Args)]
struct GenerateArgs {
    /// Toy model spec file.
    #[arg(
        long,
        conflicts_with = "endpoint",
        required_unless_present = "endpoint"
    )]
    model: Option<PathBuf>,
    /// Wire-protocol backend address (host:port).
    #[arg(long)]
    endpoint: Option<String>,
    /// Amateur toy model spec for contrastive decoding.
    #[arg(long, conflicts_with = "amateur_endpoint")]
    amateur: Option<PathBuf>,
    /// Amateur backend address for contrastive decoding.
    #[arg(long)]
    amateur_endpoint: Option<String>,
    #[arg(long, value_enum)]
    strategy: Strategy,
    /// Candidate count for top-k and contrastive search [50 / 5].
    #[arg(long)]
    k: Option<usize>,
    /// Plausibility threshold (contrastive decoding) or penalty weight (contrastive search) [0.1 / 0.6].
    #[arg(long)]
    alpha: Option<f64>,
    /// Nucleus mass [0.95].
    #[arg(long)]
    p: Option<f64>,
    /// Typical-sampling mass [0.95].
    #[arg(long)]
    tau: Option<f64>,
    /// Amateur temperature for contrastive decoding [0.5].
    #[arg(long)]
    amateur_temperature: Option<f64>,
    /// Prompt file (JSON Lines).
    #[arg(long)]
    prompts: PathBuf,
    #[arg(long, default_value_t = DEFAULT_PROMPT_LENGTH)]
    prompt_length: usize,
    #[arg(long, default_value_t = DEFAULT_MAX_LENGTH)]
    max_length: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// System name written into each record (default: the strategy name).
    #[arg(long)]
    name: Option<String>,
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write per-step candidate traces to this file.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[command(flatten)]
    runtime: Runtime,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Run config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Report file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the plain-text table here instead of standard error.
    #[arg(long)]
    table: Option<PathBuf>,
    #[command(flatten)]
    runtime: Runtime,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value_t = 2)]
    k_min: usize,
    #[arg(long, default_value_t = 10)]
    k_max: usize,
    #[arg(long, default_value_t = DEFAULT_CS_ALPHA)]
    alpha: f64,
    /// CSV table; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the full JSON dataset.
    #[arg(long)]
    json: Option<PathBuf>,
    #[command(flatten)]
    runtime: Runtime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Features {
    BigramHash,
    MeanRepresentation,
}

#[derive(Debug, Args)]
struct MetricsArgs {
    /// Generation records or `{"id","tokens"}` lines.
    #[arg(long)]
    continuations: PathBuf,
    /// Human continuations; enables the frontier score.
    #[arg(long)]
    references: Option<PathBuf>,
    /// Tokens kept per text for the frontier score.
    #[arg(long, default_value_t = FRONTIER_TRUNCATION)]
    truncate: usize,
    /// Toy scorer spec; enables coherence.
    #[arg(long, conflicts_with = "scorer_endpoint")]
    scorer: Option<PathBuf>,
    /// Scorer backend address; enables coherence.
    #[arg(long)]
    scorer_endpoint: Option<String>,
    #[arg(long, value_enum, default_value_t = Features::BigramHash)]
    features: Features,
    /// Hash buckets for bigram features.
    #[arg(long, default_value_t = DEFAULT_BIGRAM_DIM)]
    feature_dim: usize,
    /// Cluster count (default: one per ten texts).
    #[arg(long)]
    bins: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_SCALING_CONSTANT)]
    scaling_constant: f64,
    #[arg(long, default_value_t = DEFAULT_GRID_SIZE)]
    grid_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    runtime: Runtime,
}

#[derive(Debug, Args)]
struct PairExportArgs {
    /// Generation records of system A.
    #[arg(long)]
    a: PathBuf,
    /// Generation records of system B.
    #[arg(long)]
    b: PathBuf,
    /// Prompt ids to include, one per line (default: all of A).
    #[arg(long)]
    prompt_ids: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    order_seed: u64,
    /// Toy model spec whose text vocabulary decodes passages.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    worksheet: PathBuf,
    #[arg(long)]
    key: PathBuf,
}

#[derive(Debug, Args)]
struct PairIngestArgs {
    /// Verdict lines `{"row_id", "verdict": first|second|neutral}`.
    #[arg(long)]
    verdicts: PathBuf,
    #[arg(long)]
    key: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ServeToyArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    /// Port to listen on; 0 picks a free one.
    #[arg(long, default_value_t = 0)]
    port: u16,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_backend() { 2 } else { 1 })
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Generate(a) => generate(a),
        Command::Bench(a) => bench(a),
        Command::Sweep(a) => sweep(a),
        Command::Metrics(a) => metrics(a),
        Command::PairExport(a) => pair_export(a),
        Command::PairIngest(a) => pair_ingest(a),
        Command::ServeToy(a) => serve_toy(a),
    }
}

fn emit(out: Option<&Path>, content: &str) -> Result<()> {
    match out {
        Some(path) => write_file(path, content.as_bytes()),
        None => std::io::stdout()
            .write_all(content.as_bytes())
            .map_err(|e| Error::Io {
                path: "<stdout>".into(),
                source: e,
            }),
    }
}

type Opened = (Arc<dyn LanguageModel>, Option<TextCodec>);

fn open_source(
    toy: Option<&PathBuf>,
    endpoint: Option<&String>,
    timeout: Duration,
) -> Result<Option<Opened>> {
    let source = match (toy, endpoint) {
        (Some(p), _) => ModelSource::Toy(p.clone()),
        (None, Some(e)) => ModelSource::Endpoint(e.clone()),
        (None, None) => return Ok(None),
    };
    source.open(timeout).map(Some)
}

fn decode_spec(a: &GenerateArgs) -> Result<DecodeSpec> {
    let unused = |flag: &str, set: bool| {
        if set {
            log::warn!("--{flag} has no effect with this strategy");
        }
    };
    let spec = match a.strategy {
        Strategy::Greedy => DecodeSpec::Greedy,
        Strategy::TopK => DecodeSpec::TopK {
            k: a.k.unwrap_or(DEFAULT_TOP_K),
        },
        Strategy::Nucleus => DecodeSpec::Nucleus {
            p: a.p.unwrap_or(DEFAULT_NUCLEUS_P),
        },
        Strategy::Typical => DecodeSpec::Typical {
            tau: a.tau.unwrap_or(DEFAULT_TYPICAL_TAU),
        },
        Strategy::ContrastiveDecoding => DecodeSpec::ContrastiveDecoding {
            alpha: a.alpha.unwrap_or(DEFAULT_CD_ALPHA),
            amateur_temperature: a
                .amateur_temperature
                .unwrap_or(DEFAULT_CD_AMATEUR_TEMPERATURE),
        },
        Strategy::ContrastiveSearch => DecodeSpec::ContrastiveSearch {
            k: a.k.unwrap_or(DEFAULT_CS_K),
            alpha: a.alpha.unwrap_or(DEFAULT_CS_ALPHA),
        },
    };
    let s = a.strategy;
    unused(
        "k",
        a.k.is_some() && !matches!(s, Strategy::TopK | Strategy::ContrastiveSearch),
    );
    unused(
        "alpha",
        a.alpha.is_some()
            && !matches!(
                s,
                Strategy::ContrastiveDecoding | Strategy::ContrastiveSearch
            ),
    );
    unused("p", a.p.is_some() && s != Strategy::Nucleus);
    unused("tau", a.tau.is_some() && s != Strategy::Typical);
    unused(
        "amateur-temperature",
        a.amateur_temperature.is_some() && s != Strategy::ContrastiveDecoding,
    );
    spec.validate()?;
    Ok(spec)
}

#[derive(serde::Serialize)]
struct TraceLine<'a> {
    prompt_id: &'a Id,
    #[serde(flatten)]
    step: &'a StepTrace,
}

fn generate(a: GenerateArgs) -> Result<()> {
    a.runtime.apply()?;
    let spec = decode_spec(&a)?;
    let timeout = a.runtime.timeout();
    let (model, codec) = open_source(a.model.as_ref(), a.endpoint.as_ref(), timeout)?
        .ok_or_else(|| Error::InvalidInput("--model or --endpoint is required".into()))?;
    let amateur = open_source(a.amateur.as_ref(), a.amateur_endpoint.as_ref(), timeout)?;
    if spec.needs_amateur() && amateur.is_none() {
        return Err(Error::InvalidInput(
            "contrastive decoding needs --amateur or --amateur-endpoint".into(),
        ));
    }
    let prompts = load_prompts(&a.prompts, a.prompt_length, codec.as_ref())?.prompts;
    let name = a
        .name
        .clone()
        .unwrap_or_else(|| spec.strategy_name().to_string());

    let mut decoder = Decoder::new(model.as_ref());
    if let Some((am, _)) = &amateur {
        decoder = decoder.with_amateur(am.as_ref());
    }
    let want_trace = a.trace.is_some();
    let results: Vec<Result<(RunRecord, Vec<StepTrace>)>> = prompts
        .par_iter()
        .enumerate()
        .map(|(index, prompt)| {
            let seed = derive_seed(a.seed, &name, index);
            let mut steps = Vec::new();
            let generation =
                decoder.generate_traced(&prompt.tokens, &spec, a.max_length, seed, |t| {
                    if want_trace {
                        steps.push(t.clone());
                    }
                })?;
            let record = RunRecord {
                system: name.clone(),
                prompt_id: prompt.id.clone(),
                prompt_index: index,
                generation,
            };
            Ok((record, steps))
        })
        .collect();

    let mut records = Vec::new();
    let mut traces = String::new();
    let mut first_error = None;
    for (prompt, r) in prompts.iter().zip(results) {
        match r {
            Ok((record, steps)) => {
                for step in &steps {
                    traces.push_str(&serde_json::to_string(&TraceLine {
                        prompt_id: &prompt.id,
                        step,
                    })?);
                    traces.push('\n');
                }
                records.push(record);
            }
            Err(e) => {
                eprintln!("prompt {}: {e}", prompt.id);
                first_error.get_or_insert(e);
            }
        }
    }
    emit(a.out.as_deref(), &to_jsonl(&records)?)?;
    if let Some(path) = &a.trace {
        write_file(path, traces.as_bytes())?;
    }
    first_error.map_or(Ok(()), Err)
}

fn bench(a: BenchArgs) -> Result<()> {
    a.runtime.apply()?;
    let mut config = RunConfig::load(&a.config)?;
    config.timeout_ms.get_or_insert(a.runtime.timeout_ms);
    let models = config.open_models()?;
    let report = run_benchmark(&config, &models)?;
    emit(a.out.as_deref(), &report.to_json()?)?;
    let table = report.table();
    match &a.table {
        Some(path) => write_file(path, table.as_bytes())?,
        None => eprint!("{table}"),
    }
    if report.failure_count > 0 {
        eprintln!(
            "{} generation(s) failed; see the report's failures",
            report.failure_count
        );
    }
    Ok(())
}

fn sweep(a: SweepArgs) -> Result<()> {
    a.runtime.apply()?;
    let mut config = RunConfig::load(&a.config)?;
    config.timeout_ms.get_or_insert(a.runtime.timeout_ms);
    let models = config.open_models()?;
    let spec = SweepSpec {
        k_min: a.k_min,
        k_max: a.k_max,
        alpha: a.alpha,
    };
    let report = run_sweep(&spec, &config, &models)?;
    emit(a.out.as_deref(), &report.to_csv()?)?;
    if let Some(path) = &a.json {
        write_file(path, report.to_json()?.as_bytes())?;
    }
    Ok(())
}

fn metrics(a: MetricsArgs) -> Result<()> {
    a.runtime.apply()?;
    let scorer = open_source(
        a.scorer.as_ref(),
        a.scorer_endpoint.as_ref(),
        a.runtime.timeout(),
    )?
    .map(|(m, _)| m);
    let features = match a.features {
        Features::BigramHash => FeatureExtractor::BigramHash { dim: a.feature_dim },
        Features::MeanRepresentation => FeatureExtractor::MeanRepresentation,
    };
    if features.needs_model() && scorer.is_none() {
        return Err(Error::InvalidInput(
            "--features mean-representation needs --scorer or --scorer-endpoint".into(),
        ));
    }
    let settings = MetricSettings {
        features,
        num_bins: a.bins,
        scaling_constant: a.scaling_constant,
        grid_size: a.grid_size,
        kmeans_iterations: DEFAULT_KMEANS_ITERATIONS,
        truncate: a.truncate,
    };
    let samples = load_samples(&a.continuations)?;
    let references = a.references.as_deref().map(load_samples).transpose()?;
    let report = metric_report(
        &samples,
        references.as_deref(),
        scorer.as_deref(),
        &settings,
        a.seed,
    )?;
    emit(
        a.out.as_deref(),
        &(serde_json::to_string_pretty(&report)? + "\n"),
    )
}

fn pair_export(a: PairExportArgs) -> Result<()> {
    let records_a: Vec<RunRecord> = read_jsonl(&a.a)?;
    let records_b: Vec<RunRecord> = read_jsonl(&a.b)?;
    let ids = match &a.prompt_ids {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?;
            Some(
                text.lines()
                    .map(str::trim)
                    .filter(|l| !l.is_empty())
                    .map(|l| Id(l.to_string()))
                    .collect::<Vec<_>>(),
            )
        }
        None => None,
    };
    let codec = match &a.model {
        Some(path) => load_toy_model(path)?.codec,
        None => None,
    };
    let (sheet, key) = pairwise_export(
        &records_a,
        &records_b,
        ids.as_deref(),
        a.order_seed,
        codec.as_ref(),
    )?;
    write_file(&a.worksheet, to_jsonl(&sheet)?.as_bytes())?;
    write_file(&a.key, to_jsonl(&key)?.as_bytes())?;
    eprintln!("wrote {} worksheet rows", sheet.len());
    Ok(())
}

#[derive(serde::Serialize)]
struct IngestReport {
    result: SignTestResult,
    comparisons: Vec<PairwiseComparison>,
}

fn pair_ingest(a: PairIngestArgs) -> Result<()> {
    let verdicts: Vec<VerdictRow> = read_jsonl(&a.verdicts)?;
    let key: Vec<KeyRow> = read_jsonl(&a.key)?;
    let (comparisons, result) = pairwise_ingest(&verdicts, &key)?;
    eprintln!(
        "A wins {}, B wins {}, neutral {}: p = {:.6}{}",
        result.wins_a,
        result.wins_b,
        result.neutrals,
        result.p_value,
        if result.significant {
            " (significant)"
        } else {
            ""
        }
    );
    let report = IngestReport {
        result,
        comparisons,
    };
    emit(
        a.out.as_deref(),
        &(serde_json::to_string_pretty(&report)? + "\n"),
    )
}

fn serve_toy(a: ServeToyArgs) -> Result<()> {
    let toy = load_toy_model(&a.model)?;
    let server = Server::bind((a.host.as_str(), a.port), toy.model)?;
    eprintln!("listening on {}", server.local_addr()?);
    server.run()
}
