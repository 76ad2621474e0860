//! Statistics over gated runs: per-depth residual failure with bootstrap and
//! Clopper–Pearson intervals, atomic stability, critical-depth estimation,
//! and the three-channel decomposition between two runs.
//!
//! Everything here is deterministic given its inputs: bootstrap resampling
//! derives a private substream seed per depth bin from the run's CI seed, so
//! re-scoring a run byte-reproduces every interval.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF};

use crate::backend::ProbeKind;
use crate::canonical;
use crate::error::{Error, Result};
use crate::gate::{gate_population_stats, CaseRecord, GatePopulationStats, GateVerdict, Mode, RunManifest};
use crate::generator::Family;
use crate::prompt::VariantId;

/// Bootstrap replicate count used when the caller does not override it.
pub const DEFAULT_BOOTSTRAP_B: u32 = 2000;
/// Bins with fewer gate-passing cases than this are suppressed in reports.
pub const SUPPRESSION_MIN_N: u64 = 5;
/// Bins below this population are reported but flagged as low-confidence.
pub const CAUTION_MIN_N: u64 = 15;
/// Two runs are "matched" on atomic stability when their per-probe rates
/// differ by at most this many percentage points.
pub const MATCHED_ATOM_WINDOW_PP: f64 = 2.0;

// ---------------------------------------------------------------------------
// Interval machinery
// ---------------------------------------------------------------------------

/// Exact (Clopper–Pearson) two-sided binomial interval for k successes in n
/// trials at significance `alpha`.
pub fn clopper_pearson(k: u64, n: u64, alpha: f64) -> Result<(f64, f64)> {
    if n == 0 {
        return Err(Error::EmptyInput(
            "Clopper-Pearson interval needs at least one trial".into(),
        ));
    }
    if k > n {
        return Err(Error::Config(format!(
            "Clopper-Pearson called with k={k} > n={n}"
        )));
    }
    if !(0.0..1.0).contains(&alpha) || alpha <= 0.0 {
        return Err(Error::Config(format!(
            "Clopper-Pearson alpha must be in (0, 1), got {alpha}"
        )));
    }
    let kf = k as f64;
    let nf = n as f64;
    let lower = if k == 0 {
        0.0
    } else {
        Beta::new(kf, nf - kf + 1.0)
            .map_err(|e| Error::Config(format!("beta distribution: {e}")))?
            .inverse_cdf(alpha / 2.0)
    };
    let upper = if k == n {
        1.0
    } else {
        Beta::new(kf + 1.0, nf - kf)
            .map_err(|e| Error::Config(format!("beta distribution: {e}")))?
            .inverse_cdf(1.0 - alpha / 2.0)
    };
    Ok((lower, upper))
}

/// Percentile bootstrap CI for the mean of binary outcomes: `b` seeded
/// resamples, 2.5th/97.5th percentiles of the resampled means.
pub fn bootstrap_ci(outcomes: &[bool], b: u32, seed: u64) -> Result<(f64, f64)> {
    if outcomes.is_empty() {
        return Err(Error::EmptyInput("bootstrap over zero outcomes".into()));
    }
    if b == 0 {
        return Err(Error::Config("bootstrap needs at least one replicate".into()));
    }
    let n = outcomes.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means: Vec<f64> = (0..b)
        .map(|_| {
            let hits = (0..n).filter(|_| outcomes[rng.gen_range(0..n)]).count();
            hits as f64 / n as f64
        })
        .collect();
    means.sort_by(|a, b| a.partial_cmp(b).expect("means are finite"));
    let pick = |q: f64| means[((q * (b - 1) as f64).round() as usize).min(means.len() - 1)];
    Ok((pick(0.025), pick(0.975)))
}

/// Substream seed for one labeled statistic, derived so every bin and table
/// gets an independent, reproducible stream from a single CI seed.
fn substream_seed(base: u64, label: &str) -> u64 {
    let digest = canonical::sha256_hex(format!("bootstrap|{base}|{label}").as_bytes());
    u64::from_str_radix(&digest[..16], 16).expect("sha256 output is hex")
}

// ---------------------------------------------------------------------------
// Per-depth failure rates
// ---------------------------------------------------------------------------

/// Failure statistics of one depth bin's gate-passing population.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DepthStats {
    pub depth_bin: u32,
    /// Cases in this bin that passed the gate (the denominator).
    pub n_gate_pass: u64,
    pub n_fail: u64,
    /// n_fail / n_gate_pass; 0.0 when the bin is empty (and suppressed).
    pub rate: f64,
    /// Bootstrap percentile interval.
    pub ci_low: f64,
    pub ci_high: f64,
    /// Exact binomial interval.
    pub cp_low: f64,
    pub cp_high: f64,
    /// Too few cases to report (n < 5); reports render these as omitted.
    pub suppressed: bool,
    /// Reportable but small (n < 15); reports mark these.
    pub caution: bool,
}

fn depth_stats_for(depth_bin: u32, outcomes: &[bool], b: u32, seed: u64) -> Result<DepthStats> {
    let n = outcomes.len() as u64;
    if n == 0 {
        // An empty bin exists in the benchmark but has no gate survivors;
        // it is suppressed and its bounds are vacuous.
        return Ok(DepthStats {
            depth_bin,
            n_gate_pass: 0,
            n_fail: 0,
            rate: 0.0,
            ci_low: 0.0,
            ci_high: 1.0,
            cp_low: 0.0,
            cp_high: 1.0,
            suppressed: true,
            caution: true,
        });
    }
    let fails = outcomes.iter().filter(|&&f| f).count() as u64;
    let (ci_low, ci_high) = bootstrap_ci(outcomes, b, seed)?;
    let (cp_low, cp_high) = clopper_pearson(fails, n, 0.05)?;
    Ok(DepthStats {
        depth_bin,
        n_gate_pass: n,
        n_fail: fails,
        rate: fails as f64 / n as f64,
        ci_low,
        ci_high,
        cp_low,
        cp_high,
        suppressed: n < SUPPRESSION_MIN_N,
        caution: n < CAUTION_MIN_N,
    })
}

/// Which gate defines the population a failure rate is computed over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateSelector {
    /// Atomic stability and sub-question gates together.
    Double,
    /// Sub-question gate alone (the lenient baseline).
    Single,
}

impl GateSelector {
    fn label(self) -> &'static str {
        match self {
            GateSelector::Double => "double",
            GateSelector::Single => "single",
        }
    }

    fn passes(self, v: &GateVerdict) -> bool {
        match self {
            GateSelector::Double => v.double_gate_pass,
            GateSelector::Single => v.single_gate_pass,
        }
    }
}

/// Main-question failure rate per depth bin over the chosen gate population.
/// Indeterminate verdicts are excluded; bins with no survivors appear as
/// suppressed entries so tables can show the full depth ladder.
pub fn failure_by_depth(
    verdicts: &[GateVerdict],
    gate: GateSelector,
    bootstrap_b: u32,
    seed: u64,
) -> Result<BTreeMap<u32, DepthStats>> {
    let mut outcomes: BTreeMap<u32, Vec<bool>> = BTreeMap::new();
    for v in verdicts.iter().filter(|v| !v.indeterminate) {
        let bin = outcomes.entry(v.depth_bin).or_default();
        if gate.passes(v) {
            bin.push(!v.main_correct);
        }
    }
    outcomes
        .into_iter()
        .map(|(bin, flags)| {
            let seed = substream_seed(seed, &format!("{}|{bin}", gate.label()));
            Ok((bin, depth_stats_for(bin, &flags, bootstrap_b, seed)?))
        })
        .collect()
}

/// Residual composition failure R(d): wrong mains over the double-gated
/// population, per depth bin.
pub fn residual_failure_by_depth(
    verdicts: &[GateVerdict],
    bootstrap_b: u32,
    seed: u64,
) -> Result<BTreeMap<u32, DepthStats>> {
    failure_by_depth(verdicts, GateSelector::Double, bootstrap_b, seed)
}

/// Failure rate under the lenient single gate, for the conflation contrast.
pub fn single_gate_failure_by_depth(
    verdicts: &[GateVerdict],
    bootstrap_b: u32,
    seed: u64,
) -> Result<BTreeMap<u32, DepthStats>> {
    failure_by_depth(verdicts, GateSelector::Single, bootstrap_b, seed)
}

// ---------------------------------------------------------------------------
// Atomic stability
// ---------------------------------------------------------------------------

/// Stability of the model's atomic knowledge under paraphrase.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StabilityStats {
    /// Consistency-matched atom probes / all atom probes.
    pub per_probe_rate: f64,
    /// Facts whose every probe matched / all probed facts.
    pub per_fact_rate: f64,
    /// Independence approximation of P(all atoms stable) for a case of k
    /// atoms: per_probe_rate^k.
    pub joint_at_k: BTreeMap<u32, f64>,
}

/// Depths the joint-stability approximation is reported at.
const JOINT_KS: [u32; 4] = [2, 4, 6, 8];

/// Aggregate paraphrase stability over a run's atom-probe records.
/// Transport-failed probes say nothing about the model and are excluded.
pub fn atomic_stability(records: &[CaseRecord]) -> Result<StabilityStats> {
    let probes: Vec<&CaseRecord> = records
        .iter()
        .filter(|r| r.kind == ProbeKind::AtomProbe && !r.transport_failed())
        .collect();
    if probes.is_empty() {
        return Err(Error::EmptyInput(
            "stability needs at least one atom-probe record".into(),
        ));
    }
    let matched = probes.iter().filter(|r| r.match_consistency).count();
    let per_probe_rate = matched as f64 / probes.len() as f64;

    let mut fact_ok: BTreeMap<&str, bool> = BTreeMap::new();
    for probe in &probes {
        let atom_id = probe.atom_id.as_deref().ok_or_else(|| {
            Error::Protocol(format!("atom probe {} lacks atom_id", probe.record_id))
        })?;
        let entry = fact_ok.entry(atom_id).or_insert(true);
        *entry &= probe.match_consistency;
    }
    let stable = fact_ok.values().filter(|&&ok| ok).count();
    let per_fact_rate = stable as f64 / fact_ok.len() as f64;

    let joint_at_k = JOINT_KS
        .iter()
        .map(|&k| (k, per_probe_rate.powi(k as i32)))
        .collect();
    Ok(StabilityStats {
        per_probe_rate,
        per_fact_rate,
        joint_at_k,
    })
}

// ---------------------------------------------------------------------------
// Critical depth
// ---------------------------------------------------------------------------

/// Why a d50 point estimate could not be interpolated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Censoring {
    /// Already past 50% failure at the shallowest reportable bin.
    BelowMin,
    /// Never reaches 50% failure within the measured depths.
    AboveMax,
}

/// The depth at which residual failure crosses 50%, linearly interpolated
/// between the bracketing bins.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct D50Estimate {
    pub point: Option<f64>,
    /// Uncertainty band from re-interpolating with the bins' exact binomial
    /// bounds, clamped to the bracketing interval.
    pub band: Option<(f64, f64)>,
    pub censored: Option<Censoring>,
    /// The discrete auxiliary: shallowest bin whose rate is >= 0.5.
    pub first_bin_over_half: Option<u32>,
    /// Reportable depth range, for rendering censored results.
    pub min_bin: u32,
    pub max_bin: u32,
}

/// Where the line through (d_i, r_i), (d_j, r_j) crosses 0.5, clamped to
/// [d_i, d_j]. A flat or inverted segment collapses to the nearest end.
fn interpolate_crossing(d_i: f64, r_i: f64, d_j: f64, r_j: f64) -> f64 {
    if r_j <= r_i {
        return if r_i >= 0.5 { d_i } else { d_j };
    }
    let t = (0.5 - r_i) / (r_j - r_i);
    (d_i + t * (d_j - d_i)).clamp(d_i, d_j)
}

/// Estimate the critical depth from per-bin failure stats. Suppressed bins
/// are ignored entirely; at least two reportable bins are required.
pub fn critical_depth(depth_stats: &BTreeMap<u32, DepthStats>) -> Result<D50Estimate> {
    let bins: Vec<&DepthStats> = depth_stats.values().filter(|s| !s.suppressed).collect();
    if bins.len() < 2 {
        return Err(Error::CriticalDepth(format!(
            "critical depth needs at least 2 reportable bins, found {}",
            bins.len()
        )));
    }
    let min_bin = bins.first().expect("nonempty").depth_bin;
    let max_bin = bins.last().expect("nonempty").depth_bin;
    let first_over = bins.iter().find(|s| s.rate >= 0.5).map(|s| s.depth_bin);

    if bins[0].rate >= 0.5 {
        return Ok(D50Estimate {
            point: None,
            band: None,
            censored: Some(Censoring::BelowMin),
            first_bin_over_half: first_over,
            min_bin,
            max_bin,
        });
    }
    let bracket = bins
        .windows(2)
        .find(|w| w[0].rate < 0.5 && w[1].rate >= 0.5);
    let Some([lo, hi]) = bracket else {
        return Ok(D50Estimate {
            point: None,
            band: None,
            censored: Some(Censoring::AboveMax),
            first_bin_over_half: first_over,
            min_bin,
            max_bin,
        });
    };
    let (d_i, d_j) = (lo.depth_bin as f64, hi.depth_bin as f64);
    let point = interpolate_crossing(d_i, lo.rate, d_j, hi.rate);
    // Tilt the segment through opposite corners of the bins' exact-binomial
    // rectangles; the two crossings bound where the true curve could cross.
    let tilt_a = interpolate_crossing(d_i, lo.cp_high, d_j, hi.cp_low);
    let tilt_b = interpolate_crossing(d_i, lo.cp_low, d_j, hi.cp_high);
    let band = (tilt_a.min(tilt_b), tilt_a.max(tilt_b));
    Ok(D50Estimate {
        point: Some(point),
        band: Some(band),
        censored: None,
        first_bin_over_half: first_over,
        min_bin,
        max_bin,
    })
}

// ---------------------------------------------------------------------------
// Scores
// ---------------------------------------------------------------------------

/// Per-family slice of the depth analysis.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FamilyScores {
    pub depth_stats: BTreeMap<u32, DepthStats>,
    pub d50: Option<D50Estimate>,
}

/// Everything a scored run reports, with full provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scores {
    pub model_id: String,
    pub run_id: String,
    pub variant: VariantId,
    pub mode: Mode,
    pub seed: u64,
    pub manifest_hash: String,
    pub pool_hash: String,
    /// SHA-256 of the records stream the scores were computed from.
    pub records_hash: String,
    pub bootstrap_b: u32,
    pub ci_seed: u64,
    /// Absent for runs with no atom probes (in-context synthetic runs).
    pub stability: Option<StabilityStats>,
    /// Residual failure per depth bin (double-gate population).
    pub depth_stats: BTreeMap<u32, DepthStats>,
    /// Failure per depth bin under the lenient single gate.
    pub single_gate_depth_stats: BTreeMap<u32, DepthStats>,
    pub d50: Option<D50Estimate>,
    pub per_family: BTreeMap<String, FamilyScores>,
    /// Absent when no case passed even the single gate.
    pub gate_population: Option<GatePopulationStats>,
}

/// Score one run end to end.
pub fn score_run(
    run: &RunManifest,
    records: &[CaseRecord],
    verdicts: &[GateVerdict],
    bootstrap_b: u32,
    ci_seed: u64,
    records_hash: &str,
) -> Result<Scores> {
    if verdicts.is_empty() {
        return Err(Error::EmptyInput("no verdicts to score".into()));
    }
    let has_atom_probes = records
        .iter()
        .any(|r| r.kind == ProbeKind::AtomProbe && !r.transport_failed());
    let stability = if has_atom_probes {
        Some(atomic_stability(records)?)
    } else {
        None
    };
    let depth_stats = residual_failure_by_depth(verdicts, bootstrap_b, ci_seed)?;
    let single_gate_depth_stats = single_gate_failure_by_depth(verdicts, bootstrap_b, ci_seed)?;
    let d50 = critical_depth(&depth_stats).ok();

    let families: BTreeSet<Family> = verdicts.iter().map(|v| v.family).collect();
    let mut per_family = BTreeMap::new();
    for family in families {
        let slice: Vec<GateVerdict> = verdicts
            .iter()
            .filter(|v| v.family == family)
            .cloned()
            .collect();
        let seed = substream_seed(ci_seed, &format!("family|{}", family.as_str()));
        let stats = residual_failure_by_depth(&slice, bootstrap_b, seed)?;
        let d50 = critical_depth(&stats).ok();
        per_family.insert(
            family.as_str().to_string(),
            FamilyScores {
                depth_stats: stats,
                d50,
            },
        );
    }
    let gate_population = gate_population_stats(verdicts).ok();

    Ok(Scores {
        model_id: run.model_id.clone(),
        run_id: run.run_id.clone(),
        variant: run.variant,
        mode: run.mode,
        seed: run.seed,
        manifest_hash: run.manifest_hash.clone(),
        pool_hash: run.pool_hash.clone(),
        records_hash: records_hash.to_string(),
        bootstrap_b,
        ci_seed,
        stability,
        depth_stats,
        single_gate_depth_stats,
        d50,
        per_family,
        gate_population,
    })
}

// ---------------------------------------------------------------------------
// Decomposition
// ---------------------------------------------------------------------------

/// Three-channel difference between two runs on the same benchmark:
/// atomic stability, per-depth composition, and critical depth.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecompositionReport {
    pub reference_run: String,
    pub comparator_run: String,
    pub reference_model: String,
    pub comparator_model: String,
    /// Per-probe stability difference (reference minus comparator), in
    /// percentage points.
    pub delta_atom_pp: f64,
    /// Residual-failure difference per depth bin, only for bins reportable
    /// in both runs.
    pub delta_comp_pp: BTreeMap<u32, f64>,
    /// Difference of d50 midpoints; absent when either run's d50 is
    /// censored or unavailable.
    pub delta_depth: Option<f64>,
    /// Whether the stability difference is within the matched window, i.e.
    /// composition differences are attributable to composition.
    pub matched: bool,
}

fn d50_midpoint(d50: &Option<D50Estimate>) -> Option<f64> {
    let est = d50.as_ref()?;
    match (&est.band, est.point) {
        (Some((low, high)), _) => Some((low + high) / 2.0),
        (None, Some(point)) => Some(point),
        _ => None,
    }
}

/// Contrast two scored runs channel by channel. Both must have been scored
/// on the same benchmark manifest.
pub fn decompose(reference: &Scores, comparator: &Scores) -> Result<DecompositionReport> {
    if reference.manifest_hash != comparator.manifest_hash {
        return Err(Error::ManifestMismatch {
            a: reference.manifest_hash.clone(),
            b: comparator.manifest_hash.clone(),
        });
    }
    let (s_ref, s_cmp) = match (&reference.stability, &comparator.stability) {
        (Some(a), Some(b)) => (a.per_probe_rate, b.per_probe_rate),
        _ => {
            return Err(Error::Protocol(
                "decomposition needs atomic stability on both runs".into(),
            ))
        }
    };
    let delta_atom_pp = (s_ref - s_cmp) * 100.0;

    let mut delta_comp_pp = BTreeMap::new();
    for (bin, a) in &reference.depth_stats {
        if a.suppressed {
            continue;
        }
        if let Some(b) = comparator.depth_stats.get(bin) {
            if !b.suppressed {
                delta_comp_pp.insert(*bin, (a.rate - b.rate) * 100.0);
            }
        }
    }
    let delta_depth = match (d50_midpoint(&reference.d50), d50_midpoint(&comparator.d50)) {
        (Some(a), Some(b)) => Some(a - b),
        _ => None,
    };
    Ok(DecompositionReport {
        reference_run: reference.run_id.clone(),
        comparator_run: comparator.run_id.clone(),
        reference_model: reference.model_id.clone(),
        comparator_model: comparator.model_id.clone(),
        delta_atom_pp,
        delta_comp_pp,
        delta_depth,
        matched: delta_atom_pp.abs() <= MATCHED_ATOM_WINDOW_PP,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::gate::GateVerdict;

    /// A determinate verdict with the given gate outcomes.
    pub(crate) fn verdict(
        case_id: &str,
        depth_bin: u32,
        double_pass: bool,
        single_pass: bool,
        main_correct: bool,
    ) -> GateVerdict {
        assert!(single_pass || !double_pass, "double gate implies single");
        GateVerdict {
            case_id: case_id.to_string(),
            family: Family::TemporalRank,
            depth: depth_bin,
            depth_bin,
            atoms_stable: BTreeMap::new(),
            atomic_gate_pass: double_pass,
            subq_gate_pass: single_pass,
            double_gate_pass: double_pass,
            single_gate_pass: single_pass,
            main_correct,
            residual_failure: double_pass && !main_correct,
            artifact_flags: vec![],
            indeterminate: false,
        }
    }

    /// Verdicts giving `fails` failures among `n` double-gated cases per bin.
    fn bin_verdicts(spec: &[(u32, u64, u64)]) -> Vec<GateVerdict> {
        let mut out = Vec::new();
        for &(bin, fails, n) in spec {
            for i in 0..n {
                out.push(verdict(
                    &format!("c-{bin}-{i}"),
                    bin,
                    true,
                    true,
                    i >= fails,
                ));
            }
        }
        out
    }

    #[test]
    fn clopper_pearson_closed_forms() {
        let (low, high) = clopper_pearson(0, 17, 0.05).unwrap();
        assert_eq!(low, 0.0);
        // Exact zero-failure upper bound: 1 - (alpha/2)^(1/n).
        let expected = 1.0 - (0.025f64).powf(1.0 / 17.0);
        assert!((high - expected).abs() < 1e-9, "got {high}, want {expected}");
        assert!((high - 0.19506).abs() < 1e-4);

        let (low, high) = clopper_pearson(17, 17, 0.05).unwrap();
        assert_eq!(high, 1.0);
        assert!((low - (0.025f64).powf(1.0 / 17.0)).abs() < 1e-9);
    }

    #[test]
    fn clopper_pearson_brackets_the_rate() {
        let (low, high) = clopper_pearson(3, 25, 0.05).unwrap();
        assert!(low < 3.0 / 25.0 && 3.0 / 25.0 < high);
        assert!(low > 0.0 && high < 1.0);
        assert!(clopper_pearson(0, 0, 0.05).is_err());
        assert!(clopper_pearson(5, 3, 0.05).is_err());
    }

    #[test]
    fn bootstrap_is_seeded_and_degenerate_cases_collapse() {
        let outcomes: Vec<bool> = (0..40).map(|i| i % 3 == 0).collect();
        let a = bootstrap_ci(&outcomes, 500, 9).unwrap();
        let b = bootstrap_ci(&outcomes, 500, 9).unwrap();
        assert_eq!(a, b);
        let c = bootstrap_ci(&outcomes, 500, 10).unwrap();
        assert!(a != c, "different seeds should give different resamples");

        assert_eq!(bootstrap_ci(&[true; 8], 200, 1).unwrap(), (1.0, 1.0));
        assert_eq!(bootstrap_ci(&[false; 8], 200, 1).unwrap(), (0.0, 0.0));
        assert!(bootstrap_ci(&[], 200, 1).is_err());
        let rate = outcomes.iter().filter(|&&o| o).count() as f64 / outcomes.len() as f64;
        assert!(a.0 <= rate && rate <= a.1);
    }

    #[test]
    fn depth_rates_match_their_counts() {
        let verdicts = bin_verdicts(&[(2, 3, 25), (4, 37, 53), (6, 30, 38), (8, 30, 37)]);
        let stats = residual_failure_by_depth(&verdicts, 400, 7).unwrap();
        let pct = |bin: u32| (stats[&bin].rate * 1000.0).round() / 10.0;
        assert_eq!(pct(2), 12.0);
        assert_eq!(pct(4), 69.8);
        assert_eq!(pct(6), 78.9);
        assert_eq!(pct(8), 81.1);
        for s in stats.values() {
            assert!(!s.suppressed && !s.caution);
            assert!(s.ci_low <= s.rate && s.rate <= s.ci_high);
            assert!(s.cp_low <= s.rate && s.rate <= s.cp_high);
        }
    }

    #[test]
    fn small_bins_are_flagged_and_empty_bins_suppressed() {
        let mut verdicts = bin_verdicts(&[(2, 1, 4), (4, 5, 14), (6, 10, 20)]);
        // Bin 8 exists in the population but nobody passed the gate.
        verdicts.push(verdict("c-8-0", 8, false, true, false));
        let stats = residual_failure_by_depth(&verdicts, 200, 3).unwrap();
        assert!(stats[&2].suppressed && stats[&2].caution);
        assert!(!stats[&4].suppressed && stats[&4].caution);
        assert!(!stats[&6].suppressed && !stats[&6].caution);
        assert!(stats[&8].suppressed);
        assert_eq!(stats[&8].n_gate_pass, 0);
    }

    #[test]
    fn single_gate_population_is_a_superset() {
        let mut verdicts = bin_verdicts(&[(4, 10, 30)]);
        // Five more cases pass only the single gate and all fail the main.
        for i in 0..5 {
            verdicts.push(verdict(&format!("s-{i}"), 4, false, true, false));
        }
        let double = residual_failure_by_depth(&verdicts, 200, 5).unwrap();
        let single = single_gate_failure_by_depth(&verdicts, 200, 5).unwrap();
        assert_eq!(double[&4].n_gate_pass, 30);
        assert_eq!(single[&4].n_gate_pass, 35);
        assert!(single[&4].rate > double[&4].rate);
    }

    #[test]
    fn stability_rates_and_joint_approximation() {
        use crate::backend::ProbeKind;
        use crate::gate::tests::blank_record;
        let mut records = Vec::new();
        // Two atoms x 4 probes; one probe of atom b fails: per-probe 7/8,
        // per-fact 1/2.
        for atom in ["a", "b"] {
            for idx in 0..4u8 {
                let mut r = blank_record("c1", ProbeKind::AtomProbe);
                r.record_id = format!("c1/atom/{atom}/{idx}");
                r.atom_id = Some(atom.into());
                r.probe_index = Some(idx);
                r.match_consistency = !(atom == "b" && idx == 2);
                records.push(r);
            }
        }
        let stats = atomic_stability(&records).unwrap();
        assert!((stats.per_probe_rate - 0.875).abs() < 1e-12);
        assert!((stats.per_fact_rate - 0.5).abs() < 1e-12);
        assert!((stats.joint_at_k[&2] - 0.875f64.powi(2)).abs() < 1e-12);
        assert!((stats.joint_at_k[&8] - 0.875f64.powi(8)).abs() < 1e-12);
        // The headline approximations: 0.877^2 ~ 77%, 0.899^2 ~ 81%.
        assert!((0.877f64.powi(2) - 0.77).abs() < 0.005);
        assert!((0.899f64.powi(2) - 0.81).abs() < 0.005);
    }

    #[test]
    fn stability_rejects_empty_and_ignores_transport_failures() {
        use crate::backend::ProbeKind;
        use crate::gate::tests::blank_record;
        assert!(atomic_stability(&[]).is_err());
        let mut r = blank_record("c1", ProbeKind::AtomProbe);
        r.atom_id = Some("a".into());
        r.probe_index = Some(0);
        r.match_consistency = false;
        r.warnings.push("transport_failure: timeout".into());
        assert!(atomic_stability(&[r]).is_err(), "only failed transport leaves nothing");
    }

    fn stats_from_counts(spec: &[(u32, u64, u64)]) -> BTreeMap<u32, DepthStats> {
        let verdicts = bin_verdicts(spec);
        residual_failure_by_depth(&verdicts, 200, 11).unwrap()
    }

    #[test]
    fn critical_depth_interpolates_the_bracketing_bins() {
        // 12.0% at depth 2, 69.8% at depth 4: crossing at ~3.31.
        let stats = stats_from_counts(&[(2, 3, 25), (4, 37, 53), (6, 30, 38), (8, 30, 37)]);
        let d50 = critical_depth(&stats).unwrap();
        let point = d50.point.unwrap();
        assert!((point - 3.3146).abs() < 0.01, "got {point}");
        let (low, high) = d50.band.unwrap();
        assert!((2.0..=4.0).contains(&low) && (2.0..=4.0).contains(&high));
        assert!(low <= point && point <= high);
        assert_eq!(d50.first_bin_over_half, Some(4));
        assert_eq!(d50.censored, None);
    }

    #[test]
    fn critical_depth_censoring() {
        let below = critical_depth(&stats_from_counts(&[(4, 28, 30), (6, 29, 30)])).unwrap();
        assert_eq!(below.censored, Some(Censoring::BelowMin));
        assert_eq!(below.point, None);
        assert_eq!(below.first_bin_over_half, Some(4));
        assert_eq!(below.min_bin, 4);

        let above = critical_depth(&stats_from_counts(&[(2, 0, 30), (4, 2, 30)])).unwrap();
        assert_eq!(above.censored, Some(Censoring::AboveMax));
        assert_eq!(above.first_bin_over_half, None);
        assert_eq!(above.max_bin, 4);
    }

    #[test]
    fn critical_depth_needs_two_reportable_bins() {
        assert!(critical_depth(&stats_from_counts(&[(2, 1, 30)])).is_err());
        // Suppressed bins don't count toward the minimum.
        let stats = stats_from_counts(&[(2, 0, 3), (4, 1, 4)]);
        assert!(critical_depth(&stats).is_err());
        // ... and don't participate in bracketing.
        let stats = stats_from_counts(&[(2, 1, 30), (4, 4, 4), (6, 25, 30)]);
        let d50 = critical_depth(&stats).unwrap();
        let point = d50.point.unwrap();
        assert!((2.0..=6.0).contains(&point));
    }

    #[test]
    fn interpolation_is_monotone_in_the_lower_rate() {
        // Raising the lower-bin rate moves the crossing strictly left.
        let points: Vec<f64> = [0.05, 0.15, 0.25, 0.35, 0.45]
            .iter()
            .map(|&r_i| interpolate_crossing(2.0, r_i, 4.0, 0.8))
            .collect();
        for pair in points.windows(2) {
            assert!(pair[1] < pair[0]);
        }
        for p in &points {
            assert!((2.0..=4.0).contains(p));
        }
    }

    #[test]
    fn decompose_identity_and_window() {
        let verdicts = bin_verdicts(&[(2, 3, 25), (4, 37, 53), (6, 30, 38)]);
        let records = {
            use crate::backend::ProbeKind;
            use crate::gate::tests::blank_record;
            let mut rs = Vec::new();
            for idx in 0..4u8 {
                let mut r = blank_record("c1", ProbeKind::AtomProbe);
                r.atom_id = Some("a".into());
                r.probe_index = Some(idx);
                rs.push(r);
            }
            rs
        };
        let run = RunManifest {
            run_id: "run-a".into(),
            model_id: "m".into(),
            variant: VariantId::V1XmlReasoning,
            mode: Mode::ClosedBook,
            seed: 1,
            manifest_hash: "h".into(),
            pool_hash: "p".into(),
            deterministic: true,
            started_at: "1970-01-01T00:00:00Z".into(),
            finished_at: "1970-01-01T00:00:00Z".into(),
            record_counts: BTreeMap::new(),
        };
        let scores = score_run(&run, &records, &verdicts, 200, 5, "rh").unwrap();
        let report = decompose(&scores, &scores).unwrap();
        assert_eq!(report.delta_atom_pp, 0.0);
        assert!(report.matched);
        assert!(report.delta_comp_pp.values().all(|&d| d == 0.0));
        assert_eq!(report.delta_depth, Some(0.0));

        let mut other = scores.clone();
        other.stability.as_mut().unwrap().per_probe_rate -= 0.10;
        let report = decompose(&scores, &other).unwrap();
        assert!((report.delta_atom_pp - 10.0).abs() < 1e-9);
        assert!(!report.matched, "10 pp apart is outside the matched window");

        let mut mismatched = scores.clone();
        mismatched.manifest_hash = "other".into();
        assert!(decompose(&scores, &mismatched).is_err());
    }

    #[test]
    fn score_run_assembles_all_blocks() {
        let verdicts = bin_verdicts(&[(2, 3, 25), (4, 37, 53), (6, 30, 38), (8, 30, 37)]);
        let run = RunManifest {
            run_id: "run-a".into(),
            model_id: "m".into(),
            variant: VariantId::V2XmlAnswerOnly,
            mode: Mode::ClosedBook,
            seed: 1,
            manifest_hash: "h".into(),
            pool_hash: "p".into(),
            deterministic: true,
            started_at: "1970-01-01T00:00:00Z".into(),
            finished_at: "1970-01-01T00:00:00Z".into(),
            record_counts: BTreeMap::new(),
        };
        let scores = score_run(&run, &[], &verdicts, 200, 5, "rh").unwrap();
        assert!(scores.stability.is_none(), "no atom probes in this fixture");
        assert_eq!(scores.depth_stats.len(), 4);
        assert!(scores.d50.is_some());
        assert_eq!(scores.per_family.len(), 1);
        let pop = scores.gate_population.as_ref().unwrap();
        assert_eq!(pop.single_gate_n, pop.double_gate_n);
        assert_eq!(pop.removed_fraction, 0.0);
        // Scoring twice yields byte-identical JSON.
        let again = score_run(&run, &[], &verdicts, 200, 5, "rh").unwrap();
        assert_eq!(
            serde_json::to_string(&scores).unwrap(),
            serde_json::to_string(&again).unwrap()
        );
    }
}
