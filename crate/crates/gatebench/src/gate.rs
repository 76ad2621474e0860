//! Gate engine: drives a model over a benchmark and applies the double gate.
//!
//! A case passes the atomic gate when every constituent atom is stable (all
//! four paraphrase probes consistency-matched), and the sub-question gate
//! when every sub-question is answered correctly in isolation. The double
//! gate is their conjunction; the single gate is the sub-question gate alone
//! and exists to quantify how much lenient gating conflates retrieval failure
//! with composition failure. Residual composition failure is a wrong main
//! answer on a double-gated case.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::adjudicator::AdjudicatorClient;
use crate::backend::{ModelBackend, Probe, ProbeKind, QuerySpec};
use crate::canonical;
use crate::error::{Error, Result};
use crate::extract::extract_answer;
use crate::generator::{BenchmarkManifest, CompositionCase, Family, OPTION_LABELS};
use crate::matcher::{
    match_answer, match_ordering, MatchContext, MatchVerdict, OrderingItem, RejectReason,
    RuleFired, ShortFormRegistry,
};
use crate::pool::{AtomPool, Granularity};
use crate::prompt::{build_prompt, PromptVariant, VariantId};

/// Warning prefix marking a record whose query never completed; such cases
/// become gate-indeterminate rather than failures.
pub const TRANSPORT_FAILURE_PREFIX: &str = "transport_failure";
/// Warning prefix marking an adjudicator error (rule verdict kept).
pub const ADJUDICATOR_ERROR_PREFIX: &str = "adjudicator_error";

/// Timestamp written by deterministic backends so reruns stay byte-identical.
pub const DETERMINISTIC_TIMESTAMP: &str = "1970-01-01T00:00:00Z";

/// Whether facts must come from model memory or the prompt's evidence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    ClosedBook,
    InContext,
}

impl Mode {
    pub fn for_variant(variant: VariantId) -> Mode {
        if variant == VariantId::InContextEvidence {
            Mode::InContext
        } else {
            Mode::ClosedBook
        }
    }
}

/// One scored probe, as written to the records stream.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaseRecord {
    pub record_id: String,
    pub case_id: String,
    pub kind: ProbeKind,
    pub atom_id: Option<String>,
    pub probe_index: Option<u8>,
    pub family: Family,
    pub depth: u32,
    pub depth_bin: u32,
    pub prompt_variant: VariantId,
    pub mode: Mode,
    pub model_id: String,
    pub prompt: String,
    pub raw_output: String,
    pub extracted_answer: Option<String>,
    pub abstained: bool,
    pub format_ok: bool,
    pub match_exact: bool,
    pub match_consistency: bool,
    pub rule_fired: RuleFired,
    pub reject_reason: Option<RejectReason>,
    pub warnings: Vec<String>,
    pub timestamp: String,
    pub run_id: String,
    pub seed: u64,
}

impl CaseRecord {
    pub fn transport_failed(&self) -> bool {
        self.warnings
            .iter()
            .any(|w| w.starts_with(TRANSPORT_FAILURE_PREFIX))
    }
}

/// Run-level provenance written next to the records stream.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub model_id: String,
    pub variant: VariantId,
    pub mode: Mode,
    pub seed: u64,
    pub manifest_hash: String,
    pub pool_hash: String,
    pub deterministic: bool,
    pub started_at: String,
    pub finished_at: String,
    /// Record counts by probe kind.
    pub record_counts: BTreeMap<String, u64>,
}

/// Options for one run.
pub struct RunConfig {
    pub variant: PromptVariant,
    /// Derived from the run's identity when not given.
    pub run_id: Option<String>,
    pub seed: u64,
    pub parallelism: usize,
    pub registry: ShortFormRegistry,
}

/// The records plus run provenance.
pub struct RunOutput {
    pub records: Vec<CaseRecord>,
    pub run_manifest: RunManifest,
}

// ---------------------------------------------------------------------------
// Probe construction
// ---------------------------------------------------------------------------

/// Gold ordering for a rank case: option labels sorted by year.
pub fn ordering_items(case: &CompositionCase, pool: &AtomPool) -> Result<Vec<OrderingItem>> {
    let mut with_years: Vec<(i32, usize, &str)> = Vec::with_capacity(case.atom_ids.len());
    for (pos, atom_id) in case.atom_ids.iter().enumerate() {
        let atom = pool.get(atom_id).ok_or_else(|| Error::MissingAtom {
            case_id: case.case_id.clone(),
            atom_id: atom_id.clone(),
        })?;
        with_years.push((atom.canonical_value.year, pos, &atom.entity));
    }
    with_years.sort();
    Ok(with_years
        .into_iter()
        .map(|(_, pos, entity)| OrderingItem {
            label: OPTION_LABELS[pos].to_string(),
            name: entity.to_string(),
        })
        .collect())
}

/// Competing answer options for a case's main question.
fn main_options(case: &CompositionCase, pool: &AtomPool) -> Vec<String> {
    let entity = |atom_id: &String| pool.get(atom_id).map(|a| a.entity.clone());
    match case.family {
        Family::TemporalRank => case.atom_ids.iter().filter_map(entity).collect(),
        Family::TemporalSuccessor => case.atom_ids[1..].iter().filter_map(entity).collect(),
        Family::TemporalIntervalDecoy => case.atom_ids[2..].iter().filter_map(entity).collect(),
        Family::PairFarControl => case.atom_ids.iter().filter_map(entity).collect(),
        Family::Kinship | Family::Spatial => {
            let mut seen = BTreeSet::new();
            case.sub_questions
                .iter()
                .map(|sq| sq.gold_answer.clone())
                .filter(|g| seen.insert(g.clone()))
                .collect()
        }
        Family::Numerical => Vec::new(),
    }
}

fn build_probes(
    manifest: &BenchmarkManifest,
    pool: &AtomPool,
    variant: &PromptVariant,
    mode: Mode,
) -> Result<Vec<Probe>> {
    let mut probes = Vec::new();
    for case in &manifest.cases {
        let evidence: Option<&[String]> = match mode {
            Mode::InContext => Some(
                case.evidence_blocks
                    .as_deref()
                    .ok_or_else(|| {
                        Error::Config(format!(
                            "case {} has no evidence blocks but the run is in-context",
                            case.case_id
                        ))
                    })?,
            ),
            Mode::ClosedBook => None,
        };
        let knowable = !(case.family.is_synthetic() && mode == Mode::ClosedBook);
        let synthetic_atoms = case.evidence_blocks.is_some();

        // Atom probes: four paraphrases per pool atom. Synthetic atoms have
        // no pool entry or paraphrase set; their stability is derived from
        // sub-questions at gate time.
        if !synthetic_atoms {
            for atom_id in &case.atom_ids {
                let atom = pool.get(atom_id).ok_or_else(|| Error::MissingAtom {
                    case_id: case.case_id.clone(),
                    atom_id: atom_id.clone(),
                })?;
                for (idx, paraphrase) in atom.paraphrases.iter().enumerate() {
                    probes.push(Probe {
                        record_id: format!("{}/atom/{}/{}", case.case_id, atom_id, idx),
                        case_id: case.case_id.clone(),
                        kind: ProbeKind::AtomProbe,
                        atom_id: Some(atom_id.clone()),
                        probe_index: Some(idx as u8),
                        family: case.family,
                        depth: case.depth,
                        depth_bin: case.depth_bin,
                        question: paraphrase.clone(),
                        prompt: build_prompt(paraphrase, variant, evidence)?,
                        gold_answer: atom.gold_answer.clone(),
                        gold_is_knowable: true,
                        options: Vec::new(),
                        ordering: None,
                        case_atom_ids: case.atom_ids.clone(),
                        required_granularity: atom.granularity,
                    });
                }
            }
        }

        // Sub-questions, aligned with atoms.
        for (i, sq) in case.sub_questions.iter().enumerate() {
            let granularity = pool
                .get(&case.atom_ids[i])
                .map(|a| a.granularity)
                .unwrap_or(Granularity::Year);
            probes.push(Probe {
                record_id: format!("{}/subq/{}", case.case_id, i),
                case_id: case.case_id.clone(),
                kind: ProbeKind::SubQuestion,
                atom_id: Some(case.atom_ids[i].clone()),
                probe_index: None,
                family: case.family,
                depth: case.depth,
                depth_bin: case.depth_bin,
                question: sq.text.clone(),
                prompt: build_prompt(&sq.text, variant, evidence)?,
                gold_answer: sq.gold_answer.clone(),
                gold_is_knowable: knowable,
                options: Vec::new(),
                ordering: None,
                case_atom_ids: case.atom_ids.clone(),
                required_granularity: granularity,
            });
        }

        // The main question.
        let ordering = if case.family.is_ordering() {
            Some(ordering_items(case, pool)?)
        } else {
            None
        };
        probes.push(Probe {
            record_id: format!("{}/main", case.case_id),
            case_id: case.case_id.clone(),
            kind: ProbeKind::Main,
            atom_id: None,
            probe_index: None,
            family: case.family,
            depth: case.depth,
            depth_bin: case.depth_bin,
            question: case.main_question.clone(),
            prompt: build_prompt(&case.main_question, variant, evidence)?,
            gold_answer: case.gold_answer.clone(),
            gold_is_knowable: knowable,
            options: main_options(case, pool),
            ordering,
            case_atom_ids: case.atom_ids.clone(),
            required_granularity: Granularity::Year,
        });
    }
    Ok(probes)
}

// ---------------------------------------------------------------------------
// Run loop
// ---------------------------------------------------------------------------

fn derive_run_id(manifest_hash: &str, model_id: &str, variant: VariantId, seed: u64) -> String {
    let fingerprint = format!("{manifest_hash}|{model_id}|{variant}|{seed}");
    let digest = canonical::sha256_hex(fingerprint.as_bytes());
    format!("run-{}", &digest[..12])
}

fn now_rfc3339() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

/// Query every probe of a benchmark and score the responses.
pub fn run_benchmark(
    manifest: &BenchmarkManifest,
    pool: &AtomPool,
    backend: &dyn ModelBackend,
    adjudicator: Option<&AdjudicatorClient>,
    cfg: &RunConfig,
) -> Result<RunOutput> {
    if manifest.cases.is_empty() {
        return Err(Error::EmptyInput("benchmark manifest has no cases".into()));
    }
    if manifest.pool_hash != pool.hash() {
        return Err(Error::ManifestMismatch {
            a: manifest.pool_hash.clone(),
            b: pool.hash().to_string(),
        });
    }
    let mode = Mode::for_variant(cfg.variant.id);
    let probes = build_probes(manifest, pool, &cfg.variant, mode)?;
    let manifest_hash = manifest.hash();
    let run_id = cfg
        .run_id
        .clone()
        .unwrap_or_else(|| derive_run_id(&manifest_hash, backend.model_id(), cfg.variant.id, cfg.seed));
    let deterministic = backend.deterministic();
    let started_at = if deterministic {
        DETERMINISTIC_TIMESTAMP.to_string()
    } else {
        now_rfc3339()
    };
    let spec = QuerySpec::for_variant(backend.model_id(), &cfg.variant);

    let slots: Mutex<Vec<Option<CaseRecord>>> = Mutex::new(vec![None; probes.len()]);
    let cursor = AtomicUsize::new(0);
    let workers = cfg.parallelism.max(1).min(probes.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = cursor.fetch_add(1, Ordering::Relaxed);
                if i >= probes.len() {
                    break;
                }
                let record = process_probe(
                    &probes[i],
                    backend,
                    adjudicator,
                    &spec,
                    cfg,
                    mode,
                    &run_id,
                    deterministic,
                );
                slots.lock().expect("worker poisoned the slots").insert_record(i, record);
            });
        }
    });
    let records: Vec<CaseRecord> = slots
        .into_inner()
        .expect("workers finished")
        .into_iter()
        .map(|r| r.expect("every probe produced a record"))
        .collect();

    let finished_at = if deterministic {
        DETERMINISTIC_TIMESTAMP.to_string()
    } else {
        now_rfc3339()
    };
    let mut record_counts: BTreeMap<String, u64> = BTreeMap::new();
    for record in &records {
        let key = match record.kind {
            ProbeKind::AtomProbe => "atom_probe",
            ProbeKind::SubQuestion => "sub_question",
            ProbeKind::Main => "main",
        };
        *record_counts.entry(key.to_string()).or_default() += 1;
    }

    Ok(RunOutput {
        records,
        run_manifest: RunManifest {
            run_id,
            model_id: backend.model_id().to_string(),
            variant: cfg.variant.id,
            mode,
            seed: cfg.seed,
            manifest_hash,
            pool_hash: manifest.pool_hash.clone(),
            deterministic,
            started_at,
            finished_at,
            record_counts,
        },
    })
}

trait SlotInsert {
    fn insert_record(&mut self, i: usize, record: CaseRecord);
}

impl SlotInsert for Vec<Option<CaseRecord>> {
    fn insert_record(&mut self, i: usize, record: CaseRecord) {
        self[i] = Some(record);
    }
}

#[allow(clippy::too_many_arguments)]
fn process_probe(
    probe: &Probe,
    backend: &dyn ModelBackend,
    adjudicator: Option<&AdjudicatorClient>,
    spec: &QuerySpec,
    cfg: &RunConfig,
    mode: Mode,
    run_id: &str,
    deterministic: bool,
) -> CaseRecord {
    let timestamp = if deterministic {
        DETERMINISTIC_TIMESTAMP.to_string()
    } else {
        now_rfc3339()
    };
    let mut record = CaseRecord {
        record_id: probe.record_id.clone(),
        case_id: probe.case_id.clone(),
        kind: probe.kind,
        atom_id: probe.atom_id.clone(),
        probe_index: probe.probe_index,
        family: probe.family,
        depth: probe.depth,
        depth_bin: probe.depth_bin,
        prompt_variant: cfg.variant.id,
        mode,
        model_id: backend.model_id().to_string(),
        prompt: probe.prompt.clone(),
        raw_output: String::new(),
        extracted_answer: None,
        abstained: false,
        format_ok: false,
        match_exact: false,
        match_consistency: false,
        rule_fired: RuleFired::None,
        reject_reason: None,
        warnings: Vec::new(),
        timestamp,
        run_id: run_id.to_string(),
        seed: cfg.seed,
    };

    let response = match backend.query(probe, spec) {
        Ok(response) => response,
        Err(err) => {
            record
                .warnings
                .push(format!("{TRANSPORT_FAILURE_PREFIX}: {err}"));
            return record;
        }
    };
    record.raw_output = response.raw_text;

    let extraction = extract_answer(&record.raw_output, cfg.variant.id);
    record.abstained = extraction.abstained;
    record.format_ok = extraction.format_ok;
    record.extracted_answer = extraction.extracted_answer;

    let verdict = match record.extracted_answer.as_deref() {
        None => MatchVerdict {
            exact: false,
            consistency: false,
            rule_fired: RuleFired::None,
            reject_reason: Some(RejectReason::FormatViolation),
        },
        Some(candidate) => match &probe.ordering {
            Some(items) => match_ordering(candidate, items, &cfg.registry),
            None => {
                let ctx = MatchContext {
                    gold_is_knowable: probe.gold_is_knowable,
                    options: &probe.options,
                    granularity: probe.required_granularity,
                };
                match_answer(candidate, &probe.gold_answer, &ctx, &cfg.registry)
            }
        },
    };
    record.match_exact = verdict.exact;
    record.match_consistency = verdict.consistency;
    record.rule_fired = verdict.rule_fired;
    record.reject_reason = verdict.reject_reason;

    // Rule-tier reject with an actual candidate: give the adjudicator a say.
    if !record.match_consistency && adjudicator.is_some() {
        if let Some(candidate) = record.extracted_answer.clone() {
            if !candidate.trim().is_empty() {
                match adjudicator
                    .expect("checked above")
                    .adjudicate(&probe.question, &probe.gold_answer, &candidate)
                {
                    Ok(true) => {
                        record.match_consistency = true;
                        record.rule_fired = RuleFired::Paraphrase;
                        record.reject_reason = None;
                    }
                    Ok(false) => {}
                    Err(err) => {
                        record
                            .warnings
                            .push(format!("{ADJUDICATOR_ERROR_PREFIX}: {err}"));
                    }
                }
            }
        }
    }
    record
}

// ---------------------------------------------------------------------------
// Gate evaluation
// ---------------------------------------------------------------------------

/// Artifact conditions flagged on a verdict for downstream triage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactFlag {
    /// The main answer violated the output format contract.
    FormatArtifact,
    /// The model abstained on a knowable main question.
    OverAbstention,
}

/// Gate outcome for one case.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GateVerdict {
    pub case_id: String,
    pub family: Family,
    pub depth: u32,
    pub depth_bin: u32,
    /// Per-atom stability (all four paraphrase probes consistency-matched;
    /// for synthetic atoms, the aligned sub-question's verdict).
    pub atoms_stable: BTreeMap<String, bool>,
    pub atomic_gate_pass: bool,
    pub subq_gate_pass: bool,
    pub double_gate_pass: bool,
    pub single_gate_pass: bool,
    pub main_correct: bool,
    /// Wrong main answer despite passing the double gate.
    pub residual_failure: bool,
    pub artifact_flags: Vec<ArtifactFlag>,
    /// True when transport failures make this case unjudgeable; excluded
    /// from every population downstream.
    pub indeterminate: bool,
}

/// Stability of one atom from its four paraphrase-probe records.
pub fn compute_stability(atom_id: &str, records: &[&CaseRecord]) -> Result<bool> {
    if records.len() != 4 {
        return Err(Error::Protocol(format!(
            "atom {atom_id} has {} probe records, expected 4",
            records.len()
        )));
    }
    let indices: BTreeSet<u8> = records.iter().filter_map(|r| r.probe_index).collect();
    if indices != BTreeSet::from([0, 1, 2, 3]) {
        return Err(Error::Protocol(format!(
            "atom {atom_id} probe indices are not 0-3"
        )));
    }
    Ok(records.iter().all(|r| r.match_consistency))
}

/// Apply the double-gate protocol to one case's records.
pub fn gate_case(case: &CompositionCase, records: &[&CaseRecord]) -> Result<GateVerdict> {
    let mut verdict = GateVerdict {
        case_id: case.case_id.clone(),
        family: case.family,
        depth: case.depth,
        depth_bin: case.depth_bin,
        atoms_stable: BTreeMap::new(),
        atomic_gate_pass: false,
        subq_gate_pass: false,
        double_gate_pass: false,
        single_gate_pass: false,
        main_correct: false,
        residual_failure: false,
        artifact_flags: Vec::new(),
        indeterminate: false,
    };

    if records.iter().any(|r| r.transport_failed()) {
        verdict.indeterminate = true;
        return Ok(verdict);
    }

    let mut atom_probes: BTreeMap<&str, Vec<&CaseRecord>> = BTreeMap::new();
    let mut subq: Vec<&CaseRecord> = Vec::new();
    let mut mains: Vec<&CaseRecord> = Vec::new();
    for record in records {
        match record.kind {
            ProbeKind::AtomProbe => {
                let atom_id = record.atom_id.as_deref().ok_or_else(|| {
                    Error::Protocol(format!("atom probe {} lacks atom_id", record.record_id))
                })?;
                atom_probes.entry(atom_id).or_default().push(record);
            }
            ProbeKind::SubQuestion => subq.push(record),
            ProbeKind::Main => mains.push(record),
        }
    }

    let main = match mains.as_slice() {
        [only] => *only,
        other => {
            return Err(Error::Protocol(format!(
                "case {} has {} main records, expected 1",
                case.case_id,
                other.len()
            )))
        }
    };

    // Sub-question records must cover the case's atoms exactly.
    if subq.len() != case.sub_questions.len() {
        return Err(Error::Protocol(format!(
            "case {} has {} sub-question records, expected {}",
            case.case_id,
            subq.len(),
            case.sub_questions.len()
        )));
    }
    let subq_atoms: BTreeSet<&str> = subq.iter().filter_map(|r| r.atom_id.as_deref()).collect();
    let case_atoms: BTreeSet<&str> = case.atom_ids.iter().map(String::as_str).collect();
    if subq_atoms != case_atoms {
        return Err(Error::Protocol(format!(
            "case {} sub-question records do not cover its atoms",
            case.case_id
        )));
    }

    if atom_probes.is_empty() {
        // Synthetic case: atom stability is the aligned sub-question verdict.
        if case.evidence_blocks.is_none() {
            return Err(Error::Protocol(format!(
                "case {} has no atom-probe records and no evidence blocks",
                case.case_id
            )));
        }
        let by_atom: BTreeMap<&str, bool> = subq
            .iter()
            .filter_map(|r| r.atom_id.as_deref().map(|a| (a, r.match_consistency)))
            .collect();
        for atom_id in &case.atom_ids {
            let stable = *by_atom.get(atom_id.as_str()).expect("coverage checked");
            verdict.atoms_stable.insert(atom_id.clone(), stable);
        }
    } else {
        if atom_probes.len() != case.atom_ids.len() {
            return Err(Error::Protocol(format!(
                "case {} has atom probes for {} atoms, expected {}",
                case.case_id,
                atom_probes.len(),
                case.atom_ids.len()
            )));
        }
        for atom_id in &case.atom_ids {
            let probes = atom_probes.get(atom_id.as_str()).ok_or_else(|| {
                Error::Protocol(format!(
                    "case {} lacks probe records for atom {atom_id}",
                    case.case_id
                ))
            })?;
            let stable = compute_stability(atom_id, probes)?;
            verdict.atoms_stable.insert(atom_id.clone(), stable);
        }
    }

    verdict.atomic_gate_pass = verdict.atoms_stable.values().all(|&s| s);
    verdict.subq_gate_pass = subq.iter().all(|r| r.match_consistency);
    verdict.double_gate_pass = verdict.atomic_gate_pass && verdict.subq_gate_pass;
    verdict.single_gate_pass = verdict.subq_gate_pass;
    verdict.main_correct = main.match_consistency;
    verdict.residual_failure = verdict.double_gate_pass && !verdict.main_correct;
    if !main.format_ok {
        verdict.artifact_flags.push(ArtifactFlag::FormatArtifact);
    }
    if main.abstained && main.reject_reason == Some(RejectReason::AbstentionOnKnowable) {
        verdict.artifact_flags.push(ArtifactFlag::OverAbstention);
    }
    Ok(verdict)
}

/// Gate every case of a manifest against its records.
pub fn gate_records(
    manifest: &BenchmarkManifest,
    records: &[CaseRecord],
) -> Result<Vec<GateVerdict>> {
    let mut by_case: BTreeMap<&str, Vec<&CaseRecord>> = BTreeMap::new();
    let known: BTreeSet<&str> = manifest.cases.iter().map(|c| c.case_id.as_str()).collect();
    for record in records {
        if !known.contains(record.case_id.as_str()) {
            return Err(Error::Protocol(format!(
                "record {} references unknown case {}",
                record.record_id, record.case_id
            )));
        }
        by_case.entry(record.case_id.as_str()).or_default().push(record);
    }
    manifest
        .cases
        .iter()
        .map(|case| {
            let case_records = by_case.get(case.case_id.as_str()).ok_or_else(|| {
                Error::Protocol(format!("case {} has no records", case.case_id))
            })?;
            gate_case(case, case_records)
        })
        .collect()
}

/// Comparison of the single-gate and double-gate populations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GatePopulationStats {
    pub single_gate_n: u64,
    pub double_gate_n: u64,
    /// Fraction of the single-gate population the atomic gate removes.
    pub removed_fraction: f64,
    pub single_gate_failure_rate: f64,
    pub double_gate_failure_rate: f64,
    /// How much the lenient gate inflates the failure rate, in percentage
    /// points (single minus double).
    pub inflation_pp: f64,
}

/// Contrast main-question failure rates under single vs double gating.
pub fn gate_population_stats(verdicts: &[GateVerdict]) -> Result<GatePopulationStats> {
    let usable: Vec<&GateVerdict> = verdicts.iter().filter(|v| !v.indeterminate).collect();
    let single: Vec<&&GateVerdict> = usable.iter().filter(|v| v.single_gate_pass).collect();
    if single.is_empty() {
        return Err(Error::EmptyInput(
            "no case passed the single gate; population stats undefined".into(),
        ));
    }
    let double: Vec<&&GateVerdict> = usable.iter().filter(|v| v.double_gate_pass).collect();
    let single_n = single.len() as u64;
    let double_n = double.len() as u64;
    let single_fail = single.iter().filter(|v| !v.main_correct).count() as f64;
    let single_rate = single_fail / single_n as f64;
    let double_rate = if double_n == 0 {
        0.0
    } else {
        double.iter().filter(|v| !v.main_correct).count() as f64 / double_n as f64
    };
    Ok(GatePopulationStats {
        single_gate_n: single_n,
        double_gate_n: double_n,
        removed_fraction: (single_n - double_n) as f64 / single_n as f64,
        single_gate_failure_rate: single_rate,
        double_gate_failure_rate: double_rate,
        inflation_pp: (single_rate - double_rate) * 100.0,
    })
}
