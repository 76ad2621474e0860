//! Acceptance suite: ten criteria covering reference-statistic recomputation
//! and oracle/property checks against the scripted backend. Each test prints
//! one `ACCEPTANCE Cn (name): PASS|FAIL` line so a run of this target doubles
//! as a conformance report.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::panic::AssertUnwindSafe;
use std::path::{Path, PathBuf};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{Beta, ContinuousCDF};

use gatebench::backend::{HttpBackend, ModelBackend, Probe, ProbeKind, QuerySpec, RetryPolicy};
use gatebench::error::TransportError;
use gatebench::gate::{
    gate_records, run_benchmark, CaseRecord, GateVerdict, Mode, RunConfig,
    TRANSPORT_FAILURE_PREFIX,
};
use gatebench::generator::{
    generate_benchmark, CompositionCase, Family, GenerationSpec, SpecCell, OPTION_LABELS,
};
use gatebench::matcher::{
    match_answer, match_ordering, MatchContext, OrderingItem, RejectReason, RuleFired,
    ShortFormRegistry, ABSTENTION_TOKEN,
};
use gatebench::pool::{load_atom_pool, AtomPool, Granularity};
use gatebench::prompt::{PromptVariant, VariantId};
use gatebench::scripted::{AtomCorrectProb, ScriptedBackend, ScriptedModelParams};
use gatebench::stats::{
    atomic_stability, clopper_pearson, critical_depth, residual_failure_by_depth, Censoring,
    DepthStats, Scores, StabilityStats,
};

const POOL_PATH: &str = "data/pool_d4v2.json";

/// Run one criterion body and print its verdict line; re-panic on failure so
/// the test still fails.
fn criterion<F: FnOnce()>(n: u32, name: &str, body: F) {
    let outcome = std::panic::catch_unwind(AssertUnwindSafe(body));
    match outcome {
        Ok(()) => println!("ACCEPTANCE C{n} ({name}): PASS"),
        Err(payload) => {
            println!("ACCEPTANCE C{n} ({name}): FAIL");
            std::panic::resume_unwind(payload);
        }
    }
}

// ---------------------------------------------------------------------------
// Shared builders
// ---------------------------------------------------------------------------

fn verdict(case_id: &str, depth_bin: u32, double_pass: bool, main_correct: bool) -> GateVerdict {
    GateVerdict {
        case_id: case_id.to_string(),
        family: Family::TemporalRank,
        depth: depth_bin,
        depth_bin,
        atoms_stable: BTreeMap::new(),
        atomic_gate_pass: double_pass,
        subq_gate_pass: double_pass,
        double_gate_pass: double_pass,
        single_gate_pass: double_pass,
        main_correct,
        residual_failure: double_pass && !main_correct,
        artifact_flags: Vec::new(),
        indeterminate: false,
    }
}

/// Verdicts with `fail` wrong mains among `n` double-gate passers per bin.
fn bin_verdicts(table: &[(u32, u64, u64)]) -> Vec<GateVerdict> {
    let mut verdicts = Vec::new();
    for &(bin, fail, n) in table {
        for i in 0..n {
            verdicts.push(verdict(&format!("c{bin}-{i}"), bin, true, i >= fail));
        }
    }
    verdicts
}

fn atom_record(case: &str, atom: &str, index: u8, matched: bool) -> CaseRecord {
    CaseRecord {
        record_id: format!("{case}/atom/{atom}/{index}"),
        case_id: case.to_string(),
        kind: ProbeKind::AtomProbe,
        atom_id: Some(atom.to_string()),
        probe_index: Some(index),
        family: Family::TemporalRank,
        depth: 4,
        depth_bin: 4,
        prompt_variant: VariantId::V1XmlReasoning,
        mode: Mode::ClosedBook,
        model_id: "fixture".to_string(),
        prompt: String::new(),
        raw_output: String::new(),
        extracted_answer: Some("1969".to_string()),
        abstained: false,
        format_ok: true,
        match_exact: matched,
        match_consistency: matched,
        rule_fired: if matched { RuleFired::ExactNorm } else { RuleFired::None },
        reject_reason: if matched { None } else { Some(RejectReason::Contradiction) },
        warnings: Vec::new(),
        timestamp: "1970-01-01T00:00:00Z".to_string(),
        run_id: "fixture-run".to_string(),
        seed: 0,
    }
}

/// A minimal Scores shell around precomputed depth statistics.
fn scores_shell(
    model_id: &str,
    stability: Option<StabilityStats>,
    depth_stats: BTreeMap<u32, DepthStats>,
    d50: Option<gatebench::stats::D50Estimate>,
) -> Scores {
    Scores {
        model_id: model_id.to_string(),
        run_id: "fixture-run".to_string(),
        variant: VariantId::V1XmlReasoning,
        mode: Mode::ClosedBook,
        seed: 0,
        manifest_hash: "fixture-manifest".to_string(),
        pool_hash: "fixture-pool".to_string(),
        records_hash: "fixture-records".to_string(),
        bootstrap_b: 400,
        ci_seed: 7,
        stability,
        depth_stats,
        single_gate_depth_stats: BTreeMap::new(),
        d50,
        per_family: BTreeMap::new(),
        gate_population: None,
    }
}

fn shipped_pool() -> AtomPool {
    load_atom_pool(Path::new(POOL_PATH)).expect("bundled pool loads")
}

fn run_config(seed: u64) -> RunConfig {
    RunConfig {
        variant: PromptVariant::from_id(VariantId::V1XmlReasoning),
        run_id: None,
        seed,
        parallelism: 4,
        registry: ShortFormRegistry::builtin(),
    }
}

fn scripted_params(seed: u64) -> ScriptedModelParams {
    ScriptedModelParams {
        atom_correct_prob: AtomCorrectProb::Scalar(1.0),
        paraphrase_flip_prob: 0.0,
        comp_success_prob: BTreeMap::new(),
        abstain_prob: 0.0,
        format_violation_prob: 0.0,
        unstable_comp_fail_prob: 0.0,
        seed,
    }
}

// ---------------------------------------------------------------------------
// C1: depth-table recomputation from reference failure counts
// ---------------------------------------------------------------------------

#[test]
fn c01_table1_recomputation() {
    criterion(1, "table1_recomputation", || {
        let table: [(u32, u64, u64, f64); 4] = [
            (2, 3, 25, 12.0),
            (4, 37, 53, 69.8),
            (6, 30, 38, 78.9),
            (8, 30, 37, 81.1),
        ];
        let counts: Vec<(u32, u64, u64)> = table.iter().map(|&(b, f, n, _)| (b, f, n)).collect();
        let stats = residual_failure_by_depth(&bin_verdicts(&counts), 400, 7).unwrap();
        for &(bin, fail, n, expected_pct) in &table {
            let s = &stats[&bin];
            assert_eq!(s.n_gate_pass, n);
            assert_eq!(s.n_fail, fail);
            assert!(
                (s.rate * 100.0 - expected_pct).abs() <= 0.05,
                "bin {bin}: {} vs {expected_pct}",
                s.rate * 100.0
            );
            assert!(!s.suppressed && !s.caution, "bin {bin} flags");
        }

        // Caption rules: n < 5 suppresses the cell, 5 <= n < 15 gets a dagger.
        let small = residual_failure_by_depth(
            &bin_verdicts(&[(2, 3, 4), (4, 11, 11), (6, 10, 20), (8, 10, 20)]),
            400,
            7,
        )
        .unwrap();
        assert!(small[&2].suppressed);
        assert!(small[&4].caution && !small[&4].suppressed);
        assert!(!small[&6].caution && !small[&6].suppressed);

        let csv =
            gatebench::report::render_main_table(&[scores_shell("m", None, small, None)]).unwrap();
        let row = csv.lines().nth(1).unwrap();
        assert_eq!(row, "m,--,--,100.0 (11)\u{2020},50.0 (20),50.0 (20)");
    });
}

// ---------------------------------------------------------------------------
// C2: joint stability approximations
// ---------------------------------------------------------------------------

#[test]
fn c02_joint_stability() {
    criterion(2, "joint_stability", || {
        // 250 atoms x 4 probes with `misses` single-probe failures leaves a
        // per-probe rate of (1000 - misses) / 1000.
        let build = |misses: usize| -> Vec<CaseRecord> {
            let mut records = Vec::new();
            for a in 0..250 {
                for idx in 0..4u8 {
                    let miss = idx == 0 && a < misses;
                    records.push(atom_record(&format!("case-{a}"), &format!("atom-{a}"), idx, !miss));
                }
            }
            records
        };

        let stable_877 = atomic_stability(&build(123)).unwrap();
        assert!((stable_877.per_probe_rate - 0.877).abs() < 1e-12);
        let joint2 = stable_877.joint_at_k[&2] * 100.0;
        assert!((joint2 - 76.9).abs() < 0.05, "0.877^2 -> {joint2}");
        assert!((joint2 - 77.0).abs() <= 0.5);

        let stable_899 = atomic_stability(&build(101)).unwrap();
        assert!((stable_899.per_probe_rate - 0.899).abs() < 1e-12);
        let joint2 = stable_899.joint_at_k[&2] * 100.0;
        assert!((joint2 - 80.8).abs() < 0.05, "0.899^2 -> {joint2}");
        assert!((joint2 - 81.0).abs() <= 0.5);
    });
}

// ---------------------------------------------------------------------------
// C3: critical-depth interpolation and censoring
// ---------------------------------------------------------------------------

#[test]
fn c03_d50_interpolation() {
    criterion(3, "d50_interpolation", || {
        let stats = residual_failure_by_depth(
            &bin_verdicts(&[(2, 3, 25), (4, 37, 53), (6, 30, 38), (8, 30, 37)]),
            400,
            7,
        )
        .unwrap();
        let est = critical_depth(&stats).unwrap();
        let point = est.point.expect("crossing exists");
        assert!(point > 3.2 && point < 3.5, "point {point}");
        let (lo, hi) = est.band.expect("band exists");
        assert!(lo >= 3.0 && hi <= 5.0, "band [{lo}; {hi}]");
        assert!(lo <= point && point <= hi);
        assert_eq!(est.censored, None);

        // A row already past 50% at its shallowest bin is censored below.
        let early = residual_failure_by_depth(
            &bin_verdicts(&[(4, 11, 20), (6, 14, 20), (8, 16, 20)]),
            400,
            7,
        )
        .unwrap();
        let censored = critical_depth(&early).unwrap();
        assert_eq!(censored.censored, Some(Censoring::BelowMin));
        assert_eq!(censored.point, None);
        assert_eq!(censored.first_bin_over_half, Some(4));

        let table = gatebench::report::render_critical_depth_table(&[scores_shell(
            "m",
            None,
            early,
            Some(censored),
        )])
        .unwrap();
        assert!(table.contains("m,aggregate,<4"), "{table}");
    });
}

// ---------------------------------------------------------------------------
// C4: Clopper-Pearson bounds and coverage
// ---------------------------------------------------------------------------

#[test]
fn c04_clopper_pearson_correctness() {
    criterion(4, "clopper_pearson_correctness", || {
        let (lo, hi) = clopper_pearson(0, 17, 0.05).unwrap();
        assert_eq!(lo, 0.0);
        let oracle = 1.0 - 0.025f64.powf(1.0 / 17.0);
        assert!((hi - oracle).abs() < 1e-12, "{hi} vs {oracle}");
        assert!((hi - 0.195).abs() <= 0.001);

        // Interior case against the beta-quantile oracle directly.
        let (lo, hi) = clopper_pearson(5, 20, 0.05).unwrap();
        let beta_lo = Beta::new(5.0, 16.0).unwrap().inverse_cdf(0.025);
        let beta_hi = Beta::new(6.0, 15.0).unwrap().inverse_cdf(0.975);
        assert!((lo - beta_lo).abs() < 1e-9);
        assert!((hi - beta_hi).abs() < 1e-9);

        // Coverage at n=20 over 1,000 simulated draws per true rate.
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for p in [0.1, 0.5, 0.9] {
            let mut covered = 0u32;
            for _ in 0..1000 {
                let k = (0..20).filter(|_| rng.gen::<f64>() < p).count() as u64;
                let (lo, hi) = clopper_pearson(k, 20, 0.05).unwrap();
                if lo <= p && p <= hi {
                    covered += 1;
                }
            }
            assert!(covered >= 930, "coverage at p={p}: {covered}/1000");
        }
    });
}

// ---------------------------------------------------------------------------
// C5: estimand recovery on the scripted oracle
// ---------------------------------------------------------------------------

fn depth4_manifest(pool: &AtomPool) -> gatebench::generator::BenchmarkManifest {
    let spec = GenerationSpec {
        cells: vec![
            SpecCell { family: Family::TemporalRank, depth: 4, n: 30 },
            SpecCell { family: Family::TemporalSuccessor, depth: 4, n: 30 },
        ],
    };
    generate_benchmark(pool, &spec, 11).unwrap()
}

#[test]
fn c05_estimand_recovery() {
    criterion(5, "estimand_recovery", || {
        let pool = shipped_pool();
        let manifest = depth4_manifest(&pool);
        let f_star = 0.698;

        // Perfectly stable atoms: every case passes both gates, and the CP
        // interval on the measured depth-4 failure rate should cover the
        // scripted failure probability in >= 93 of 100 seeded runs.
        let mut covered = 0u32;
        for seed in 0..100u64 {
            let mut params = scripted_params(seed);
            params.comp_success_prob.insert("4".to_string(), 1.0 - f_star);
            let backend = ScriptedBackend::new(params).unwrap();
            let out = run_benchmark(&manifest, &pool, &backend, None, &run_config(seed)).unwrap();
            let verdicts = gate_records(&manifest, &out.records).unwrap();
            assert!(verdicts.iter().all(|v| v.double_gate_pass && !v.indeterminate));
            let n = verdicts.len() as u64;
            let k = verdicts.iter().filter(|v| !v.main_correct).count() as u64;
            let (lo, hi) = clopper_pearson(k, n, 0.05).unwrap();
            if lo <= f_star && f_star <= hi {
                covered += 1;
            }
        }
        assert!(covered >= 93, "CP covered f* in {covered}/100 runs");

        // Unstable atoms whose instability drags the main answer down: the
        // single gate keeps those cases, so its failure rate must sit at or
        // above the double-gate rate in every seeded run.
        let mut directional = 0u32;
        for seed in 0..100u64 {
            let mut params = scripted_params(seed);
            params.atom_correct_prob = AtomCorrectProb::Scalar(0.9);
            params.paraphrase_flip_prob = 0.02;
            params.unstable_comp_fail_prob = 1.0;
            params.comp_success_prob.insert("4".to_string(), 0.6);
            let backend = ScriptedBackend::new(params).unwrap();
            let out = run_benchmark(&manifest, &pool, &backend, None, &run_config(seed)).unwrap();
            let verdicts = gate_records(&manifest, &out.records).unwrap();

            let rate = |keep: &dyn Fn(&&GateVerdict) -> bool| -> Option<f64> {
                let kept: Vec<&GateVerdict> =
                    verdicts.iter().filter(|v| !v.indeterminate).filter(keep).collect();
                if kept.is_empty() {
                    return None;
                }
                let fails = kept.iter().filter(|v| !v.main_correct).count();
                Some(fails as f64 / kept.len() as f64)
            };
            let single = rate(&|v| v.single_gate_pass).expect("single-gate population");
            let double = rate(&|v| v.double_gate_pass).expect("double-gate population");
            if single >= double - 1e-12 {
                directional += 1;
            }
        }
        assert_eq!(directional, 100, "single >= double held in {directional}/100 runs");
    });
}

// ---------------------------------------------------------------------------
// C6: gate engine vs brute-force oracle, and gate monotonicity
// ---------------------------------------------------------------------------

/// Re-derive one case's verdict directly from its records.
fn brute_force_verdict(records: &[&CaseRecord]) -> (bool, bool, bool, bool) {
    let indeterminate = records.iter().any(|r| r.transport_failed());

    let mut by_atom: BTreeMap<&str, Vec<&CaseRecord>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.kind == ProbeKind::AtomProbe) {
        by_atom.entry(r.atom_id.as_deref().unwrap()).or_default().push(r);
    }
    let atoms_stable = by_atom.values().all(|probes| probes.iter().all(|r| r.match_consistency));

    let subq_pass = records
        .iter()
        .filter(|r| r.kind == ProbeKind::SubQuestion)
        .all(|r| r.match_consistency);

    let main_correct = records
        .iter()
        .find(|r| r.kind == ProbeKind::Main)
        .map(|r| r.match_consistency)
        .unwrap_or(false);

    (indeterminate, atoms_stable, subq_pass, main_correct)
}

#[test]
fn c06_gate_oracle_equivalence() {
    criterion(6, "gate_oracle_equivalence", || {
        let pool = shipped_pool();
        let spec = GenerationSpec {
            cells: vec![
                SpecCell { family: Family::TemporalRank, depth: 4, n: 10 },
                SpecCell { family: Family::TemporalSuccessor, depth: 4, n: 10 },
                SpecCell { family: Family::TemporalIntervalDecoy, depth: 4, n: 10 },
                SpecCell { family: Family::PairFarControl, depth: 2, n: 10 },
                SpecCell { family: Family::TemporalRank, depth: 6, n: 10 },
            ],
        };
        let manifest = generate_benchmark(&pool, &spec, 5).unwrap();
        assert_eq!(manifest.cases.len(), 50);

        let mut params = scripted_params(1234);
        params.atom_correct_prob = AtomCorrectProb::Scalar(0.8);
        params.paraphrase_flip_prob = 0.1;
        params.abstain_prob = 0.05;
        params.format_violation_prob = 0.05;
        params.comp_success_prob =
            BTreeMap::from([("2".to_string(), 0.9), ("4".to_string(), 0.6), ("6".to_string(), 0.4)]);
        let backend = ScriptedBackend::new(params).unwrap();
        let out = run_benchmark(&manifest, &pool, &backend, None, &run_config(5)).unwrap();

        // Sprinkle transport failures so indeterminate handling is exercised.
        let mut records = out.records;
        for i in (0..records.len()).step_by(97) {
            records[i].warnings.push(format!("{TRANSPORT_FAILURE_PREFIX}: injected outage"));
        }

        let verds = gate_records(&manifest, &records).unwrap();
        assert_eq!(verds.len(), 50);
        let mut agree = 0;
        for v in &verds {
            let case_records: Vec<&CaseRecord> =
                records.iter().filter(|r| r.case_id == v.case_id).collect();
            let (ind, stable, subq, main) = brute_force_verdict(&case_records);
            assert_eq!(v.indeterminate, ind, "{}", v.case_id);
            if !ind {
                assert_eq!(v.atomic_gate_pass, stable, "{}", v.case_id);
                assert_eq!(v.subq_gate_pass, subq, "{}", v.case_id);
                assert_eq!(v.double_gate_pass, stable && subq, "{}", v.case_id);
                assert_eq!(v.single_gate_pass, subq, "{}", v.case_id);
                assert_eq!(v.main_correct, main, "{}", v.case_id);
                assert_eq!(v.residual_failure, stable && subq && !main, "{}", v.case_id);
            }
            agree += 1;
        }
        assert_eq!(agree, 50);

        // Monotonicity: a double-gate pass implies a single-gate pass on
        // every fuzzed record set.
        let small_spec = GenerationSpec {
            cells: vec![
                SpecCell { family: Family::TemporalRank, depth: 4, n: 3 },
                SpecCell { family: Family::PairFarControl, depth: 2, n: 2 },
            ],
        };
        let small_manifest = generate_benchmark(&pool, &small_spec, 6).unwrap();
        let base = run_benchmark(
            &small_manifest,
            &pool,
            &ScriptedBackend::new(scripted_params(7)).unwrap(),
            None,
            &run_config(7),
        )
        .unwrap()
        .records;

        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..10_000 {
            let mut fuzzed = base.clone();
            for r in &mut fuzzed {
                r.match_consistency = rng.gen_bool(0.5);
                r.match_exact = r.match_consistency && rng.gen_bool(0.7);
                r.format_ok = rng.gen_bool(0.8);
                r.abstained = rng.gen_bool(0.1);
                if rng.gen_bool(0.02) {
                    r.warnings.push(format!("{TRANSPORT_FAILURE_PREFIX}: fuzz"));
                }
            }
            for v in gate_records(&small_manifest, &fuzzed).unwrap() {
                if !v.indeterminate && v.double_gate_pass {
                    assert!(v.single_gate_pass, "double pass without single pass");
                }
            }
        }
    });
}

// ---------------------------------------------------------------------------
// C7: matcher rule suite
// ---------------------------------------------------------------------------

#[test]
fn c07_matcher_rule_suite() {
    criterion(7, "matcher_rule_suite", || {
        let reg = ShortFormRegistry::builtin();
        let ctx = MatchContext::knowable();

        // Exact-after-normalization.
        let v = match_answer("The Battle of Hastings.", "the Battle of Hastings", &ctx, &reg);
        assert!(v.exact && v.consistency && v.rule_fired == RuleFired::ExactNorm);
        let v = match_answer("the Battle of Agincourt", "the Battle of Hastings", &ctx, &reg);
        assert!(!v.consistency && v.reject_reason == Some(RejectReason::WrongEntity));

        // BC/BCE era equivalence.
        let v = match_answer("490 BC", "490 BCE", &ctx, &reg);
        assert!(v.consistency && v.rule_fired == RuleFired::BceEquiv);
        let v = match_answer("490", "490 BCE", &ctx, &reg);
        assert!(!v.consistency && v.reject_reason == Some(RejectReason::Contradiction));

        // +-1 year tolerance, contradiction beyond it.
        let v = match_answer("1970", "1969", &ctx, &reg);
        assert!(v.consistency && !v.exact && v.rule_fired == RuleFired::YearTolerance);
        let v = match_answer("1972", "1969", &ctx, &reg);
        assert!(!v.consistency && v.reject_reason == Some(RejectReason::Contradiction));

        // Partial names: unambiguous surname accepted, ambiguous rejected.
        let v = match_answer("Armstrong", "Neil Armstrong", &ctx, &reg);
        assert!(v.consistency && v.rule_fired == RuleFired::PartialName);
        let options = vec!["Neil Armstrong".to_string(), "Louis Armstrong".to_string()];
        let ambiguous = MatchContext {
            gold_is_knowable: true,
            options: &options,
            granularity: Granularity::Year,
        };
        let v = match_answer("Armstrong", "Neil Armstrong", &ambiguous, &reg);
        assert!(!v.consistency && v.reject_reason == Some(RejectReason::WrongEntity));
        let v = match_answer("Louis Armstrong", "Neil Armstrong", &ctx, &reg);
        assert!(!v.consistency && v.reject_reason == Some(RejectReason::WrongEntity));

        // Registered short forms connect across the alias.
        let v = match_answer("WWI", "World War I", &ctx, &reg);
        assert!(v.consistency);

        // Abstention: valid only on unknowable golds.
        let unknowable = MatchContext {
            gold_is_knowable: false,
            options: &[],
            granularity: Granularity::Year,
        };
        let v = match_answer(ABSTENTION_TOKEN, "1969", &unknowable, &reg);
        assert!(v.consistency && v.rule_fired == RuleFired::AbstentionValid);
        let v = match_answer(ABSTENTION_TOKEN, "1969", &ctx, &reg);
        assert!(!v.consistency && v.reject_reason == Some(RejectReason::AbstentionOnKnowable));

        // Granularity: a bare year is incomplete for a month-level gold.
        let month_ctx = MatchContext {
            gold_is_knowable: true,
            options: &[],
            granularity: Granularity::Month,
        };
        let v = match_answer("1969", "July 1969", &month_ctx, &reg);
        assert!(!v.consistency && v.reject_reason == Some(RejectReason::Incomplete));
        let v = match_answer("July 1969", "July 1969", &month_ctx, &reg);
        assert!(v.consistency);

        // Ordering: complete correct order passes, short answer is
        // incomplete, full-length wrong order contradicts.
        let items: Vec<OrderingItem> = [("A", "first event"), ("B", "second event"), ("C", "third event")]
            .iter()
            .map(|(l, n)| OrderingItem { label: l.to_string(), name: n.to_string() })
            .collect();
        let v = match_ordering("A, B, C", &items, &reg);
        assert!(v.consistency);
        let v = match_ordering("A, B", &items, &reg);
        assert!(!v.consistency && v.reject_reason == Some(RejectReason::Incomplete));
        let v = match_ordering("C, B, A", &items, &reg);
        assert!(!v.consistency && v.reject_reason == Some(RejectReason::Contradiction));
    });
}

// ---------------------------------------------------------------------------
// C8: generator shape and gold oracle consistency
// ---------------------------------------------------------------------------

fn year_of(pool: &AtomPool, atom_id: &str) -> i64 {
    i64::from(pool.get(atom_id).expect("case atoms exist in pool").canonical_value.year)
}

fn entity_of<'p>(pool: &'p AtomPool, atom_id: &str) -> &'p str {
    &pool.get(atom_id).expect("case atoms exist in pool").entity
}

fn check_case_gold(pool: &AtomPool, case: &CompositionCase) {
    assert_eq!(case.sub_questions.len(), case.atom_ids.len(), "{}", case.case_id);
    match case.family {
        Family::TemporalRank => {
            let mut order: Vec<usize> = (0..case.atom_ids.len()).collect();
            order.sort_by_key(|&i| year_of(pool, &case.atom_ids[i]));
            let expected: Vec<&str> = order.iter().map(|&i| OPTION_LABELS[i]).collect();
            assert_eq!(case.gold_answer, expected.join(", "), "{}", case.case_id);
        }
        Family::TemporalSuccessor => {
            let ref_year = year_of(pool, &case.atom_ids[0]);
            let mut after = Vec::new();
            let mut before = Vec::new();
            for id in &case.atom_ids[1..] {
                let y = year_of(pool, id);
                if y >= ref_year + 2 {
                    after.push(id);
                } else if y <= ref_year - 2 {
                    before.push(id);
                } else {
                    panic!("{}: candidate inside the successor margin", case.case_id);
                }
            }
            let target = match (after.len(), before.len()) {
                (1, _) => after[0],
                (_, 1) => before[0],
                other => panic!("{}: no unique target side {other:?}", case.case_id),
            };
            assert_eq!(case.gold_answer, entity_of(pool, target), "{}", case.case_id);
        }
        Family::TemporalIntervalDecoy => {
            let lo = year_of(pool, &case.atom_ids[0]);
            let hi = year_of(pool, &case.atom_ids[1]);
            assert!(lo < hi, "{}", case.case_id);
            let inside: Vec<&String> = case.atom_ids[2..]
                .iter()
                .filter(|id| {
                    let y = year_of(pool, id);
                    y > lo && y < hi
                })
                .collect();
            assert_eq!(inside.len(), 1, "{}: exactly one inside candidate", case.case_id);
            let y = year_of(pool, inside[0]);
            assert!(y >= lo + 5 && y <= hi - 5, "{}: inside margin", case.case_id);
            for id in &case.atom_ids[2..] {
                let y = year_of(pool, id);
                if id != inside[0] {
                    assert!(y <= lo - 5 || y >= hi + 5, "{}: decoy margin", case.case_id);
                }
            }
            assert_eq!(case.gold_answer, entity_of(pool, inside[0]), "{}", case.case_id);
        }
        Family::PairFarControl => {
            assert_eq!(case.atom_ids.len(), 2);
            let (a, b) = (&case.atom_ids[0], &case.atom_ids[1]);
            let (ya, yb) = (year_of(pool, a), year_of(pool, b));
            assert!((ya - yb).abs() > 50, "{}: separation", case.case_id);
            let earlier = if ya < yb { a } else { b };
            assert_eq!(case.gold_answer, entity_of(pool, earlier), "{}", case.case_id);
        }
        other => panic!("unexpected family {other:?} from the temporal builtin"),
    }
}

#[test]
fn c08_generator_shape() {
    criterion(8, "generator_shape", || {
        let pool = shipped_pool();
        for seed in [1u64, 2, 40289] {
            let manifest = generate_benchmark(&pool, &GenerationSpec::builtin_d4v2(), seed).unwrap();
            assert_eq!(manifest.cases.len(), 390);

            let expected_counts: BTreeMap<String, u32> = [
                ("temporal_rank:4", 30),
                ("temporal_rank:6", 30),
                ("temporal_rank:8", 30),
                ("temporal_successor:4", 30),
                ("temporal_successor:6", 30),
                ("temporal_successor:8", 30),
                ("temporal_interval_decoy:4", 30),
                ("temporal_interval_decoy:6", 30),
                ("temporal_interval_decoy:7", 30),
                ("temporal_interval_decoy:8", 30),
                ("temporal_interval_decoy:9", 30),
                ("temporal_interval_decoy:11", 30),
                ("pair_far_control:2", 30),
            ]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
            assert_eq!(manifest.counts, expected_counts, "seed {seed}");

            let mut ids = BTreeSet::new();
            for case in &manifest.cases {
                assert!(ids.insert(case.case_id.clone()), "duplicate {}", case.case_id);
                let bin_ok = case.depth_bin == case.depth
                    || matches!((case.depth, case.depth_bin), (7, 4) | (9, 6) | (11, 8));
                assert!(bin_ok, "{}: depth {} bin {}", case.case_id, case.depth, case.depth_bin);
                check_case_gold(&pool, case);
            }
        }
    });
}

// ---------------------------------------------------------------------------
// C9: end-to-end pipeline determinism
// ---------------------------------------------------------------------------

fn dir_snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                // The stage ledger holds fingerprints, not run outputs.
                if rel != "pipeline_state.json" {
                    out.insert(rel, std::fs::read(&path).unwrap());
                }
            }
        }
    }
    out
}

#[test]
fn c09_end_to_end_determinism() {
    criterion(9, "end_to_end_determinism", || {
        let tmp = tempfile::tempdir().unwrap();
        let spec_path = tmp.path().join("spec.json");
        let spec = GenerationSpec {
            cells: vec![
                SpecCell { family: Family::TemporalRank, depth: 4, n: 8 },
                SpecCell { family: Family::TemporalRank, depth: 6, n: 8 },
                SpecCell { family: Family::PairFarControl, depth: 2, n: 5 },
            ],
        };
        std::fs::write(&spec_path, serde_json::to_string(&spec).unwrap()).unwrap();

        let config_for = |out_dir: PathBuf| gatebench::pipeline::PipelineConfig {
            pool: PathBuf::from(POOL_PATH),
            spec: spec_path.to_string_lossy().into_owned(),
            seed: 23,
            out_dir,
            variant: VariantId::V1XmlReasoning,
            backend: gatebench::pipeline::BackendConfig::Scripted {
                params: ScriptedModelParams {
                    atom_correct_prob: AtomCorrectProb::Scalar(0.9),
                    paraphrase_flip_prob: 0.05,
                    comp_success_prob: BTreeMap::from([
                        ("2".to_string(), 0.9),
                        ("4".to_string(), 0.6),
                        ("6".to_string(), 0.3),
                    ]),
                    abstain_prob: 0.02,
                    format_violation_prob: 0.02,
                    unstable_comp_fail_prob: 0.5,
                    seed: 77,
                },
                model_id: Some("scripted-fixture".to_string()),
            },
            bootstrap_b: Some(400),
            ci_seed: None,
            parallelism: 4,
            run_id: None,
            short_forms: None,
            adjudicate: false,
        };

        let dir_a = tmp.path().join("a");
        let dir_b = tmp.path().join("b");
        gatebench::pipeline::run_pipeline(&config_for(dir_a.clone()), true).unwrap();
        gatebench::pipeline::run_pipeline(&config_for(dir_b.clone()), true).unwrap();

        let snap_a = dir_snapshot(&dir_a);
        let snap_b = dir_snapshot(&dir_b);
        assert_eq!(
            snap_a.keys().collect::<Vec<_>>(),
            snap_b.keys().collect::<Vec<_>>(),
            "output file sets differ"
        );
        for (name, bytes) in &snap_a {
            assert_eq!(bytes, &snap_b[name], "{name} differs between runs");
        }
        for required in ["records.jsonl", "verdicts.jsonl", "scores.json", "report/main_table.csv"] {
            assert!(snap_a.contains_key(required), "missing {required}");
        }

        // Forced rerun into the same directory rewrites identical bytes.
        gatebench::pipeline::run_pipeline(&config_for(dir_a.clone()), true).unwrap();
        assert_eq!(snap_a, dir_snapshot(&dir_a));
    });
}

// ---------------------------------------------------------------------------
// C10: HTTP request contract and retry policy
// ---------------------------------------------------------------------------

fn main_probe(prompt: &str) -> Probe {
    Probe {
        record_id: "case-x/main".to_string(),
        case_id: "case-x".to_string(),
        kind: ProbeKind::Main,
        atom_id: None,
        probe_index: None,
        family: Family::PairFarControl,
        depth: 2,
        depth_bin: 2,
        question: prompt.to_string(),
        prompt: prompt.to_string(),
        gold_answer: "1969".to_string(),
        gold_is_knowable: true,
        options: Vec::new(),
        ordering: None,
        case_atom_ids: Vec::new(),
        required_granularity: Granularity::Year,
    }
}

fn fast_backend(url: &str) -> HttpBackend {
    HttpBackend::with_options(
        url,
        "model-x",
        RetryPolicy { max_retries: 3, base_delay: Duration::from_millis(5) },
        Duration::from_secs(5),
    )
    .unwrap()
    .with_api_key(Some("sk-test".to_string()))
}

#[test]
fn c10_http_contract() {
    criterion(10, "http_contract", || {
        let probe = main_probe("In which year did the first crewed Moon landing occur?");

        // Request shape for the standard, chain-of-thought, and plain
        // variants.
        let server = common::MockServer::start(vec![common::CannedResponse::completion(
            "<answer>1969</answer>",
        )]);
        let backend = fast_backend(server.url());
        for variant in [VariantId::V1XmlReasoning, VariantId::CotXml, VariantId::V3Plain] {
            let spec = QuerySpec::for_variant("model-x", &PromptVariant::from_id(variant));
            backend.query(&probe, &spec).unwrap();
        }
        let requests = server.requests();
        drop(server);
        assert_eq!(requests.len(), 3);
        for req in &requests {
            assert_eq!(req.method, "POST");
            assert_eq!(req.path, "/v1/chat/completions");
            assert_eq!(req.header("authorization"), Some("Bearer sk-test"));
            let body = req.json();
            assert_eq!(body["model"], "model-x");
            assert_eq!(body["temperature"].as_f64(), Some(0.0));
            assert_eq!(body["messages"][0]["role"], "user");
            assert_eq!(body["messages"][0]["content"], probe.prompt);
        }
        assert_eq!(requests[0].json()["max_tokens"].as_u64(), Some(512));
        assert_eq!(requests[0].json()["stop"], serde_json::json!(["</answer>"]));
        assert_eq!(requests[1].json()["max_tokens"].as_u64(), Some(1024));
        assert_eq!(requests[1].json()["stop"], serde_json::json!(["</answer>"]));
        assert_eq!(requests[2].json()["max_tokens"].as_u64(), Some(512));
        assert!(requests[2].json().get("stop").is_none(), "plain variant sends no stop");

        let spec = QuerySpec::for_variant("model-x", &PromptVariant::from_id(VariantId::V1XmlReasoning));

        // Two 429s then success: three attempts, one answer.
        let server = common::MockServer::start(vec![
            common::CannedResponse::new(429, "{}"),
            common::CannedResponse::new(429, "{}"),
            common::CannedResponse::completion("<answer>1969</answer>"),
        ]);
        let response = fast_backend(server.url()).query(&probe, &spec).unwrap();
        assert_eq!(server.hits(), 3);
        assert_eq!(response.raw_text, "<answer>1969</answer>");
        assert_eq!(response.transport_meta.get("attempts").map(String::as_str), Some("3"));
        drop(server);

        // Persistent 500: retries exhausted after max_retries + 1 attempts.
        let server = common::MockServer::start(vec![common::CannedResponse::new(500, "boom")]);
        let err = fast_backend(server.url()).query(&probe, &spec).unwrap_err();
        assert!(matches!(err, TransportError::Exhausted { attempts: 4, .. }), "{err}");
        assert_eq!(server.hits(), 4);
        drop(server);

        // 404 is fatal immediately; no retry.
        let server = common::MockServer::start(vec![common::CannedResponse::new(404, "no such route")]);
        let err = fast_backend(server.url()).query(&probe, &spec).unwrap_err();
        assert!(matches!(err, TransportError::Fatal { status: 404, .. }), "{err}");
        assert_eq!(server.hits(), 1);
    });
}
