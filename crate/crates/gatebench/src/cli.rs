//! Command-line interface: staged subcommands over the library, a JSON
//! config file for experiment definitions, and stage-named exit codes
//! (10 generate, 20 run, 30 gate, 40 score/decompose, 50 report).

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::adjudicator::AdjudicatorClient;
use crate::error::{Error, Result};
use crate::gate::{gate_records, run_benchmark, CaseRecord, GateVerdict, RunConfig, RunManifest};
use crate::generator::{generate_benchmark, BenchmarkManifest, GenerationSpec};
use crate::pipeline::{
    file_sha256, read_json, read_jsonl, run_pipeline, write_json_pretty, write_jsonl,
    PipelineConfig, Stage, BENCHMARK_FILE, RECORDS_FILE, RUN_MANIFEST_FILE, SCORES_FILE,
    VERDICTS_FILE,
};
use crate::pool::load_atom_pool;
use crate::prompt::PromptVariant;
use crate::report::{build_report_bundle, write_report_bundle};
use crate::stats::{decompose, score_run, Scores, DEFAULT_BOOTSTRAP_B};

#[derive(Debug, Parser)]
#[command(
    name = "gatebench",
    version,
    about = "Double-gated evaluation of multi-hop composition in language models"
)]
pub struct Cli {
    /// Experiment config file (JSON); required by `run` and `pipeline`.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override the config's generation/run seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Override the config's output directory.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Recompute stages even when their outputs are up to date.
    #[arg(long, global = true)]
    pub force: bool,
    /// Override the number of concurrent model queries.
    #[arg(long, global = true)]
    pub parallelism: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a benchmark manifest from an atom pool and a spec.
    Generate {
        /// Atom pool JSON (falls back to the config).
        #[arg(long)]
        pool: Option<PathBuf>,
        /// "builtin:d4v2", "builtin:synthetic", or a spec JSON path.
        #[arg(long)]
        spec: Option<String>,
        /// Output path (default: <out-dir>/benchmark.json).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Query the configured model over a benchmark, writing records.
    Run {
        /// Benchmark manifest (default: <out-dir>/benchmark.json).
        #[arg(long)]
        benchmark: Option<PathBuf>,
        /// Records output (default: <out-dir>/records.jsonl).
        #[arg(long)]
        records: Option<PathBuf>,
    },
    /// Apply the double gate to a run's records.
    Gate {
        /// Benchmark manifest the records were produced from.
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        records: PathBuf,
        /// Verdicts output (default: <out-dir>/verdicts.jsonl).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compute scores (rates, intervals, d50) from records and verdicts.
    Score {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        verdicts: PathBuf,
        /// Run manifest written by `run` (default: sibling run_manifest.json).
        #[arg(long)]
        run_manifest: Option<PathBuf>,
        /// Bootstrap replicate count.
        #[arg(long = "B", default_value_t = DEFAULT_BOOTSTRAP_B)]
        bootstrap_b: u32,
        /// Scores output (default: <out-dir>/scores.json).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Three-channel comparison of two scored runs on one benchmark.
    Decompose {
        /// Scores JSON of the reference run.
        #[arg(long)]
        run_a: PathBuf,
        /// Scores JSON of the comparator run.
        #[arg(long)]
        run_b: PathBuf,
        /// Report output (default: decomposition.json next to run_a).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render tables, curves, and provenance for one or more scored runs.
    Report {
        /// Scores files (repeatable).
        #[arg(long = "scores", required = true)]
        scores: Vec<PathBuf>,
        /// Report directory (default: <out-dir>/report).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run generate -> run -> gate -> score -> report end to end.
    Pipeline,
}

/// Load the config file and fold in the global CLI overrides.
fn effective_config(cli: &Cli) -> Result<PipelineConfig> {
    let path = cli.config.as_ref().ok_or_else(|| {
        Error::Config("this command needs --config <file> for the experiment definition".into())
    })?;
    let mut config = PipelineConfig::from_json_file(path)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out_dir) = &cli.out_dir {
        config.out_dir = out_dir.clone();
    }
    if let Some(parallelism) = cli.parallelism {
        config.parallelism = parallelism;
    }
    Ok(config)
}

fn out_dir(cli: &Cli) -> Result<PathBuf> {
    if let Some(dir) = &cli.out_dir {
        return Ok(dir.clone());
    }
    if cli.config.is_some() {
        return Ok(effective_config(cli)?.out_dir);
    }
    Err(Error::Config(
        "no output location: pass --out-dir or a --config with out_dir".into(),
    ))
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    Ok(())
}

fn cmd_generate(
    cli: &Cli,
    pool: &Option<PathBuf>,
    spec: &Option<String>,
    out: &Option<PathBuf>,
) -> Result<()> {
    let config = if pool.is_none() || spec.is_none() || cli.seed.is_none() {
        Some(effective_config(cli)?)
    } else {
        None
    };
    let pool_path = pool
        .clone()
        .or_else(|| config.as_ref().map(|c| c.pool.clone()))
        .ok_or_else(|| Error::Config("no atom pool: pass --pool or --config".into()))?;
    let spec_arg = spec
        .clone()
        .or_else(|| config.as_ref().map(|c| c.spec.clone()))
        .ok_or_else(|| Error::Config("no spec: pass --spec or --config".into()))?;
    let seed = cli
        .seed
        .or_else(|| config.as_ref().map(|c| c.seed))
        .ok_or_else(|| Error::Config("no seed: pass --seed or --config".into()))?;
    let out_path = match out {
        Some(path) => path.clone(),
        None => out_dir(cli)?.join(BENCHMARK_FILE),
    };

    let pool = load_atom_pool(&pool_path)?;
    let spec = GenerationSpec::resolve(&spec_arg)?;
    let manifest = generate_benchmark(&pool, &spec, seed)?;
    ensure_parent(&out_path)?;
    manifest.save(&out_path)?;
    println!(
        "wrote {} ({} cases, manifest hash {})",
        out_path.display(),
        manifest.cases.len(),
        manifest.hash()
    );
    Ok(())
}

fn cmd_run(cli: &Cli, benchmark: &Option<PathBuf>, records: &Option<PathBuf>) -> Result<()> {
    let config = effective_config(cli)?;
    let benchmark_path = benchmark
        .clone()
        .unwrap_or_else(|| config.out_dir.join(BENCHMARK_FILE));
    let records_path = records
        .clone()
        .unwrap_or_else(|| config.out_dir.join(RECORDS_FILE));

    let pool = load_atom_pool(&config.pool)?;
    let manifest = BenchmarkManifest::load(&benchmark_path)?;
    let backend = config.backend.build()?;
    let adjudicator = if config.adjudicate {
        Some(AdjudicatorClient::from_env()?.ok_or_else(|| {
            Error::Config(
                "adjudication requested but the adjudicator endpoint environment is not set"
                    .into(),
            )
        })?)
    } else {
        None
    };
    let run_cfg = RunConfig {
        variant: PromptVariant::from_id(config.variant),
        run_id: config.run_id.clone(),
        seed: config.seed,
        parallelism: config.parallelism,
        registry: config.registry()?,
    };
    let output = run_benchmark(
        &manifest,
        &pool,
        backend.as_ref(),
        adjudicator.as_ref(),
        &run_cfg,
    )?;
    ensure_parent(&records_path)?;
    write_jsonl(&records_path, &output.records)?;
    let manifest_path = records_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(RUN_MANIFEST_FILE);
    write_json_pretty(&manifest_path, &output.run_manifest)?;
    println!(
        "wrote {} ({} records, run {})",
        records_path.display(),
        output.records.len(),
        output.run_manifest.run_id
    );
    Ok(())
}

fn cmd_gate(cli: &Cli, manifest: &Path, records: &Path, out: &Option<PathBuf>) -> Result<()> {
    let out_path = match out {
        Some(path) => path.clone(),
        None => out_dir(cli)?.join(VERDICTS_FILE),
    };
    let manifest = BenchmarkManifest::load(manifest)?;
    let records: Vec<CaseRecord> = read_jsonl(records)?;
    let verdicts = gate_records(&manifest, &records)?;
    let passed = verdicts.iter().filter(|v| v.double_gate_pass).count();
    ensure_parent(&out_path)?;
    write_jsonl(&out_path, &verdicts)?;
    println!(
        "wrote {} ({} cases, {} double-gate passes)",
        out_path.display(),
        verdicts.len(),
        passed
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_score(
    cli: &Cli,
    records_path: &Path,
    verdicts_path: &Path,
    run_manifest: &Option<PathBuf>,
    bootstrap_b: u32,
    out: &Option<PathBuf>,
) -> Result<()> {
    let manifest_path = run_manifest.clone().unwrap_or_else(|| {
        records_path
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join(RUN_MANIFEST_FILE)
    });
    let out_path = match out {
        Some(path) => path.clone(),
        None => out_dir(cli)?.join(SCORES_FILE),
    };
    let run: RunManifest = read_json(&manifest_path)?;
    let records: Vec<CaseRecord> = read_jsonl(records_path)?;
    let verdicts: Vec<GateVerdict> = read_jsonl(verdicts_path)?;
    let records_hash = file_sha256(records_path)?;
    let ci_seed = cli.seed.unwrap_or(run.seed);
    let scores = score_run(&run, &records, &verdicts, bootstrap_b, ci_seed, &records_hash)?;
    ensure_parent(&out_path)?;
    write_json_pretty(&out_path, &scores)?;
    println!("wrote {} (run {})", out_path.display(), scores.run_id);
    Ok(())
}

fn cmd_decompose(run_a: &Path, run_b: &Path, out: &Option<PathBuf>) -> Result<()> {
    let out_path = match out {
        Some(path) => path.clone(),
        None => run_a
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join("decomposition.json"),
    };
    let a: Scores = read_json(run_a)?;
    let b: Scores = read_json(run_b)?;
    let report = decompose(&a, &b)?;
    ensure_parent(&out_path)?;
    write_json_pretty(&out_path, &report)?;
    println!(
        "wrote {} (delta_atom {:+.1} pp, matched: {})",
        out_path.display(),
        report.delta_atom_pp,
        report.matched
    );
    Ok(())
}

fn cmd_report(cli: &Cli, scores_paths: &[PathBuf], out: &Option<PathBuf>) -> Result<()> {
    let out_path = match out {
        Some(path) => path.clone(),
        None => out_dir(cli)?.join("report"),
    };
    let scores: Vec<Scores> = scores_paths
        .iter()
        .map(|p| read_json(p))
        .collect::<Result<_>>()?;
    let bundle = build_report_bundle(&scores)?;
    write_report_bundle(&bundle, &out_path)?;
    for note in &bundle.notes {
        eprintln!("note: {note}");
    }
    println!(
        "wrote {} ({} tables, {} curves)",
        out_path.display(),
        bundle.tables.len(),
        bundle.curves.len()
    );
    Ok(())
}

/// Run the parsed command; errors map to the owning stage's exit code.
pub fn dispatch(cli: &Cli) -> i32 {
    let (stage, result): (Stage, Result<()>) = match &cli.command {
        Command::Generate { pool, spec, out } => (Stage::Generate, cmd_generate(cli, pool, spec, out)),
        Command::Run { benchmark, records } => (Stage::Run, cmd_run(cli, benchmark, records)),
        Command::Gate {
            manifest,
            records,
            out,
        } => (Stage::Gate, cmd_gate(cli, manifest, records, out)),
        Command::Score {
            records,
            verdicts,
            run_manifest,
            bootstrap_b,
            out,
        } => (
            Stage::Score,
            cmd_score(cli, records, verdicts, run_manifest, *bootstrap_b, out),
        ),
        Command::Decompose { run_a, run_b, out } => {
            (Stage::Score, cmd_decompose(run_a, run_b, out))
        }
        Command::Report { scores, out } => (Stage::Report, cmd_report(cli, scores, out)),
        Command::Pipeline => {
            let config = match effective_config(cli) {
                Ok(config) => config,
                Err(e) => {
                    eprintln!("error: {e}");
                    return Stage::Generate.exit_code();
                }
            };
            return match run_pipeline(&config, cli.force) {
                Ok(summary) => {
                    let skipped: Vec<&str> =
                        summary.skipped.iter().map(|s| s.name()).collect();
                    println!(
                        "pipeline complete: run {} ({} cases, {} records) in {}{}",
                        summary.run_id,
                        summary.cases,
                        summary.records,
                        summary.out_dir.display(),
                        if skipped.is_empty() {
                            String::new()
                        } else {
                            format!("; up to date: {}", skipped.join(", "))
                        }
                    );
                    0
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    e.stage.exit_code()
                }
            };
        }
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            stage.exit_code()
        }
    }
}

/// Parse the process arguments and run. Returns the process exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    dispatch(&cli)
}
