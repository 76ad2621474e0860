//! The staged pipeline: generate -> run -> gate -> score -> report.
//!
//! Each stage writes its outputs into the run directory and records a
//! fingerprint of its inputs in `pipeline_state.json`. Re-invoking the
//! pipeline skips stages whose fingerprint and outputs are unchanged, so an
//! interrupted experiment resumes where it stopped; `force` reruns
//! everything. Every stage failure carries the stage name so the CLI can
//! exit with that stage's code.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::adjudicator::AdjudicatorClient;
use crate::backend::{HttpBackend, ModelBackend, RetryPolicy};
use crate::canonical;
use crate::error::{Error, Result};
use crate::gate::{gate_records, run_benchmark, CaseRecord, GateVerdict, RunConfig, RunManifest};
use crate::generator::{generate_benchmark, BenchmarkManifest, GenerationSpec};
use crate::matcher::ShortFormRegistry;
use crate::pool::load_atom_pool;
use crate::prompt::{PromptVariant, VariantId};
use crate::report::{build_report_bundle, write_report_bundle};
use crate::scripted::{ScriptedBackend, ScriptedModelParams};
use crate::stats::{score_run, Scores, DEFAULT_BOOTSTRAP_B};

pub const BENCHMARK_FILE: &str = "benchmark.json";
pub const RECORDS_FILE: &str = "records.jsonl";
pub const RUN_MANIFEST_FILE: &str = "run_manifest.json";
pub const VERDICTS_FILE: &str = "verdicts.jsonl";
pub const SCORES_FILE: &str = "scores.json";
pub const REPORT_DIR: &str = "report";
pub const STATE_FILE: &str = "pipeline_state.json";

// ---------------------------------------------------------------------------
// Stages and stage-tagged errors
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Generate,
    Run,
    Gate,
    Score,
    Report,
}

impl Stage {
    pub fn exit_code(self) -> i32 {
        match self {
            Stage::Generate => 10,
            Stage::Run => 20,
            Stage::Gate => 30,
            Stage::Score => 40,
            Stage::Report => 50,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::Generate => "generate",
            Stage::Run => "run",
            Stage::Gate => "gate",
            Stage::Score => "score",
            Stage::Report => "report",
        }
    }
}

/// An error tagged with the pipeline stage it occurred in.
#[derive(Debug)]
pub struct StageError {
    pub stage: Stage,
    pub source: Error,
}

impl std::fmt::Display for StageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} stage failed: {}", self.stage.name(), self.source)
    }
}

impl std::error::Error for StageError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.source)
    }
}

trait AtStage<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, StageError>;
}

impl<T> AtStage<T> for Result<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, StageError> {
        self.map_err(|source| StageError { stage, source })
    }
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Which model answers the probes.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendConfig {
    /// The seeded synthetic model with known success probabilities.
    Scripted {
        params: ScriptedModelParams,
        #[serde(default)]
        model_id: Option<String>,
    },
    /// An OpenAI-compatible chat-completions endpoint.
    Http {
        endpoint: String,
        model_id: String,
        #[serde(default)]
        max_retries: Option<u32>,
        #[serde(default)]
        timeout_secs: Option<u64>,
    },
}

impl BackendConfig {
    pub fn build(&self) -> Result<Box<dyn ModelBackend>> {
        match self {
            BackendConfig::Scripted { params, model_id } => {
                let backend = match model_id {
                    Some(id) => ScriptedBackend::with_model_id(params.clone(), id)?,
                    None => ScriptedBackend::new(params.clone())?,
                };
                Ok(Box::new(backend))
            }
            BackendConfig::Http {
                endpoint,
                model_id,
                max_retries,
                timeout_secs,
            } => {
                let retry = RetryPolicy {
                    max_retries: max_retries.unwrap_or(RetryPolicy::default().max_retries),
                    ..RetryPolicy::default()
                };
                let timeout = Duration::from_secs(timeout_secs.unwrap_or(60));
                let backend = HttpBackend::with_options(endpoint, model_id, retry, timeout)?;
                Ok(Box::new(backend))
            }
        }
    }
}

fn default_parallelism() -> usize {
    4
}

/// The experiment definition: pool, benchmark spec, model, and knobs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Path to the atom-pool JSON file.
    pub pool: PathBuf,
    /// Benchmark spec: "builtin:d4v2", "builtin:synthetic", or a JSON path.
    pub spec: String,
    pub seed: u64,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub variant: VariantId,
    pub backend: BackendConfig,
    #[serde(default)]
    pub bootstrap_b: Option<u32>,
    /// Seed for interval resampling; defaults to the run seed.
    #[serde(default)]
    pub ci_seed: Option<u64>,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default)]
    pub run_id: Option<String>,
    /// Optional short-form registry JSON for the matcher.
    #[serde(default)]
    pub short_forms: Option<PathBuf>,
    /// Route rule-tier rejects to the adjudicator endpoint from the
    /// environment.
    #[serde(default)]
    pub adjudicate: bool,
}

impl PipelineConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }

    pub fn bootstrap_b(&self) -> u32 {
        self.bootstrap_b.unwrap_or(DEFAULT_BOOTSTRAP_B)
    }

    pub fn ci_seed(&self) -> u64 {
        self.ci_seed.unwrap_or(self.seed)
    }

    pub fn registry(&self) -> Result<ShortFormRegistry> {
        match &self.short_forms {
            Some(path) => ShortFormRegistry::from_json_file(path),
            None => Ok(ShortFormRegistry::builtin()),
        }
    }
}

// ---------------------------------------------------------------------------
// File helpers
// ---------------------------------------------------------------------------

/// Write items as one JSON object per line.
pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    for item in items {
        let line = serde_json::to_string(item).map_err(|e| Error::json(path, e))?;
        out.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Read a JSONL file, one object per non-empty line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    BufReader::new(file)
        .lines()
        .filter_map(|line| match line {
            Ok(l) if l.trim().is_empty() => None,
            Ok(l) => Some(serde_json::from_str(&l).map_err(|e| Error::json(path, e))),
            Err(e) => Some(Err(Error::io(path, e))),
        })
        .collect()
}

pub fn write_json_pretty<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

/// SHA-256 of a file's bytes; the records hash in scores and provenance.
pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(canonical::sha256_hex(&bytes))
}

// ---------------------------------------------------------------------------
// Stage skipping
// ---------------------------------------------------------------------------

#[derive(Debug, Default, Serialize, Deserialize)]
struct PipelineState {
    fingerprints: BTreeMap<String, String>,
}

impl PipelineState {
    fn load(dir: &Path) -> PipelineState {
        read_json(&dir.join(STATE_FILE)).unwrap_or_default()
    }

    fn save(&self, dir: &Path) -> Result<()> {
        write_json_pretty(&dir.join(STATE_FILE), self)
    }

    fn fresh(&self, stage: Stage, fingerprint: &str, outputs: &[PathBuf]) -> bool {
        self.fingerprints.get(stage.name()).map(String::as_str) == Some(fingerprint)
            && outputs.iter().all(|p| p.exists())
    }

    fn record(&mut self, stage: Stage, fingerprint: String) {
        self.fingerprints.insert(stage.name().to_string(), fingerprint);
    }
}

fn fingerprint(parts: &[&str]) -> String {
    canonical::sha256_hex(parts.join("\u{1f}").as_bytes())
}

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

/// What the pipeline produced, with which stages were skipped as up to date.
#[derive(Debug)]
pub struct PipelineSummary {
    pub out_dir: PathBuf,
    pub run_id: String,
    pub cases: usize,
    pub records: usize,
    pub skipped: Vec<Stage>,
}

/// Execute all stages, skipping those whose inputs and outputs are
/// unchanged unless `force` is set.
pub fn run_pipeline(
    config: &PipelineConfig,
    force: bool,
) -> std::result::Result<PipelineSummary, StageError> {
    fs::create_dir_all(&config.out_dir)
        .map_err(|e| Error::io(&config.out_dir, e))
        .at(Stage::Generate)?;
    let mut state = if force {
        PipelineState::default()
    } else {
        PipelineState::load(&config.out_dir)
    };
    let mut skipped = Vec::new();

    // Generate.
    let pool = load_atom_pool(&config.pool).at(Stage::Generate)?;
    let spec = GenerationSpec::resolve(&config.spec).at(Stage::Generate)?;
    let spec_json = serde_json::to_string(&spec)
        .map_err(|e| Error::json(&config.out_dir, e))
        .at(Stage::Generate)?;
    let gen_fp = fingerprint(&["generate", pool.hash(), &spec_json, &config.seed.to_string()]);
    let benchmark_path = config.out_dir.join(BENCHMARK_FILE);
    let manifest: BenchmarkManifest = if state.fresh(Stage::Generate, &gen_fp, &[benchmark_path.clone()]) {
        skipped.push(Stage::Generate);
        BenchmarkManifest::load(&benchmark_path).at(Stage::Generate)?
    } else {
        let manifest = generate_benchmark(&pool, &spec, config.seed).at(Stage::Generate)?;
        manifest.save(&benchmark_path).at(Stage::Generate)?;
        state.record(Stage::Generate, gen_fp);
        state.save(&config.out_dir).at(Stage::Generate)?;
        manifest
    };

    // Run.
    let backend_json = serde_json::to_string(&config.backend)
        .map_err(|e| Error::json(&config.out_dir, e))
        .at(Stage::Run)?;
    let run_fp = fingerprint(&[
        "run",
        &manifest.hash(),
        &backend_json,
        config.variant.as_str(),
        &config.seed.to_string(),
        config.run_id.as_deref().unwrap_or(""),
        if config.adjudicate { "adjudicated" } else { "plain" },
    ]);
    let records_path = config.out_dir.join(RECORDS_FILE);
    let run_manifest_path = config.out_dir.join(RUN_MANIFEST_FILE);
    let (records, run_manifest): (Vec<CaseRecord>, RunManifest) = if state.fresh(
        Stage::Run,
        &run_fp,
        &[records_path.clone(), run_manifest_path.clone()],
    ) {
        skipped.push(Stage::Run);
        (
            read_jsonl(&records_path).at(Stage::Run)?,
            read_json(&run_manifest_path).at(Stage::Run)?,
        )
    } else {
        let backend = config.backend.build().at(Stage::Run)?;
        let adjudicator: Option<AdjudicatorClient> = if config.adjudicate {
            match AdjudicatorClient::from_env().at(Stage::Run)? {
                Some(client) => Some(client),
                None => {
                    return Err(StageError {
                        stage: Stage::Run,
                        source: Error::Config(
                            "adjudication requested but the adjudicator endpoint \
                             environment is not set"
                                .into(),
                        ),
                    })
                }
            }
        } else {
            None
        };
        let run_cfg = RunConfig {
            variant: PromptVariant::from_id(config.variant),
            run_id: config.run_id.clone(),
            seed: config.seed,
            parallelism: config.parallelism,
            registry: config.registry().at(Stage::Run)?,
        };
        let output = run_benchmark(
            &manifest,
            &pool,
            backend.as_ref(),
            adjudicator.as_ref(),
            &run_cfg,
        )
        .at(Stage::Run)?;
        write_jsonl(&records_path, &output.records).at(Stage::Run)?;
        write_json_pretty(&run_manifest_path, &output.run_manifest).at(Stage::Run)?;
        state.record(Stage::Run, run_fp);
        state.save(&config.out_dir).at(Stage::Run)?;
        (output.records, output.run_manifest)
    };
    let records_hash = file_sha256(&records_path).at(Stage::Run)?;

    // Gate.
    let gate_fp = fingerprint(&["gate", &records_hash, &manifest.hash()]);
    let verdicts_path = config.out_dir.join(VERDICTS_FILE);
    let verdicts: Vec<GateVerdict> = if state.fresh(Stage::Gate, &gate_fp, &[verdicts_path.clone()]) {
        skipped.push(Stage::Gate);
        read_jsonl(&verdicts_path).at(Stage::Gate)?
    } else {
        let verdicts = gate_records(&manifest, &records).at(Stage::Gate)?;
        write_jsonl(&verdicts_path, &verdicts).at(Stage::Gate)?;
        state.record(Stage::Gate, gate_fp);
        state.save(&config.out_dir).at(Stage::Gate)?;
        verdicts
    };

    // Score.
    let verdicts_hash = file_sha256(&verdicts_path).at(Stage::Score)?;
    let score_fp = fingerprint(&[
        "score",
        &records_hash,
        &verdicts_hash,
        &config.bootstrap_b().to_string(),
        &config.ci_seed().to_string(),
    ]);
    let scores_path = config.out_dir.join(SCORES_FILE);
    let scores: Scores = if state.fresh(Stage::Score, &score_fp, &[scores_path.clone()]) {
        skipped.push(Stage::Score);
        read_json(&scores_path).at(Stage::Score)?
    } else {
        let scores = score_run(
            &run_manifest,
            &records,
            &verdicts,
            config.bootstrap_b(),
            config.ci_seed(),
            &records_hash,
        )
        .at(Stage::Score)?;
        write_json_pretty(&scores_path, &scores).at(Stage::Score)?;
        state.record(Stage::Score, score_fp);
        state.save(&config.out_dir).at(Stage::Score)?;
        scores
    };

    // Report.
    let scores_hash = file_sha256(&scores_path).at(Stage::Report)?;
    let report_fp = fingerprint(&["report", &scores_hash]);
    let report_dir = config.out_dir.join(REPORT_DIR);
    if state.fresh(Stage::Report, &report_fp, &[report_dir.join("provenance.json")]) {
        skipped.push(Stage::Report);
    } else {
        let bundle = build_report_bundle(std::slice::from_ref(&scores)).at(Stage::Report)?;
        write_report_bundle(&bundle, &report_dir).at(Stage::Report)?;
        state.record(Stage::Report, report_fp);
        state.save(&config.out_dir).at(Stage::Report)?;
    }

    Ok(PipelineSummary {
        out_dir: config.out_dir.clone(),
        run_id: run_manifest.run_id,
        cases: manifest.cases.len(),
        records: records.len(),
        skipped,
    })
}
