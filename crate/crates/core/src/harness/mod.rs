//! Prompt ingestion, benchmark and sweep orchestration, and pairwise-evaluation files.

mod bench;
mod config;
mod evaluate;
mod io;
mod pairwise;
mod prompts;
mod sweep;

pub use bench::{
    derive_seed, generate_all, load_inputs, render_table, run_benchmark, BenchmarkInputs,
    BenchmarkReport, Failure, InstanceRecord, RunRecord, SystemSummary,
};
pub use config::{BenchmarkSpec, ModelSource, Models, RunConfig, SystemSpec, ENDPOINT_ENV};
pub use evaluate::{
    evaluate, load_samples, metric_report, CorpusMetrics, InstanceMetrics, MetricReport, Sample,
    TOOL_NAME, TOOL_VERSION,
};
pub use io::{read_json, read_jsonl, to_jsonl, write_file, write_jsonl, Id};
pub use pairwise::{
    pairwise_export, pairwise_ingest, KeyRow, Passage, Preference, VerdictRow, WorksheetRow,
};
pub use prompts::{
    load_prompts, load_texts, Prompt, PromptLine, PromptSet, Rejection, DEFAULT_PROMPT_LENGTH,
};
pub use sweep::{rows_from_csv, rows_to_csv, run_sweep, SweepReport, SweepRow, SweepSpec};
