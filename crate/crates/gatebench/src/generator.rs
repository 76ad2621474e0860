//! Benchmark generation: composition cases from the atom pool, plus
//! synthetic in-context families.
//!
//! Generation is a pure function of (pool, spec, seed). Each case draws from
//! its own hash-derived RNG stream, so inserting or removing a spec cell
//! never perturbs the other cells' cases.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::canonical;
use crate::error::{Error, Result};
use crate::pool::{AtomFact, AtomPool};

/// Option labels for multiple-choice questions (depth <= 11 candidates).
pub const OPTION_LABELS: [&str; 12] =
    ["A", "B", "C", "D", "E", "F", "G", "H", "I", "J", "K", "L"];

/// Minimum year gap between a successor reference and every candidate.
pub const SUCCESSOR_MARGIN_YEARS: i64 = 2;
/// Minimum year distance between interval candidates and both boundaries.
pub const INTERVAL_MARGIN_YEARS: i64 = 5;
/// Minimum separation for the far-pair control family.
pub const CONTROL_SEPARATION_YEARS: i64 = 50;

const MAX_SAMPLE_ATTEMPTS: u32 = 2000;

/// Task family of a composition case.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    TemporalRank,
    TemporalSuccessor,
    TemporalIntervalDecoy,
    PairFarControl,
    Kinship,
    Numerical,
    Spatial,
}

impl Family {
    pub fn as_str(&self) -> &'static str {
        match self {
            Family::TemporalRank => "temporal_rank",
            Family::TemporalSuccessor => "temporal_successor",
            Family::TemporalIntervalDecoy => "temporal_interval_decoy",
            Family::PairFarControl => "pair_far_control",
            Family::Kinship => "kinship",
            Family::Numerical => "numerical",
            Family::Spatial => "spatial",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "temporal_rank" => Ok(Family::TemporalRank),
            "temporal_successor" => Ok(Family::TemporalSuccessor),
            "temporal_interval_decoy" => Ok(Family::TemporalIntervalDecoy),
            "pair_far_control" => Ok(Family::PairFarControl),
            "kinship" => Ok(Family::Kinship),
            "numerical" => Ok(Family::Numerical),
            "spatial" => Ok(Family::Spatial),
            other => Err(Error::Config(format!("unknown family `{other}`"))),
        }
    }

    /// Synthetic families ship their facts as in-context evidence.
    pub fn is_synthetic(&self) -> bool {
        matches!(self, Family::Kinship | Family::Numerical | Family::Spatial)
    }

    /// Rank answers are sequences; everything else is a scalar answer.
    pub fn is_ordering(&self) -> bool {
        matches!(self, Family::TemporalRank)
    }

    /// Atoms a case of this family needs at a given depth.
    pub fn atoms_per_case(&self, depth: u32) -> u32 {
        match self {
            // 2 interval boundaries + `depth` candidates.
            Family::TemporalIntervalDecoy => depth + 2,
            Family::PairFarControl => 2,
            _ => depth,
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Map a temporal family's raw depth onto its reporting bin.
///
/// The odd interval-decoy depths form a parallel ladder binned with the even
/// ladder three steps down; the control family keeps its own bin at 2.
pub fn depth_bin(family: Family, depth: u32) -> Result<u32> {
    if family.is_synthetic() {
        return Ok(depth);
    }
    match depth {
        2 => Ok(2),
        4 => Ok(4),
        6 => Ok(6),
        8 => Ok(8),
        7 => Ok(4),
        9 => Ok(6),
        11 => Ok(8),
        other => Err(Error::InfeasibleSpec {
            family: family.as_str().into(),
            depth: other,
            reason: "no depth bin is defined for this depth".into(),
        }),
    }
}

/// One sub-question probing a single atom in isolation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubQuestion {
    pub text: String,
    pub gold_answer: String,
}

/// One composition case: a main question plus its per-atom sub-questions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompositionCase {
    pub case_id: String,
    pub family: Family,
    pub depth: u32,
    pub depth_bin: u32,
    /// For multiple-choice families, index 0 is the reference (successor) or
    /// indices 0-1 the interval boundaries (decoy); the remaining ids are in
    /// displayed option order. Rank stores all ids in option order.
    pub atom_ids: Vec<String>,
    pub main_question: String,
    /// Aligned with `atom_ids`.
    pub sub_questions: Vec<SubQuestion>,
    pub gold_answer: String,
    /// Present only for synthetic families: numbered evidence sentences.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evidence_blocks: Option<Vec<String>>,
}

/// One cell of a generation spec: n cases of a family at a depth.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SpecCell {
    pub family: Family,
    pub depth: u32,
    pub n: u32,
}

/// What to generate: a list of (family, depth, count) cells.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerationSpec {
    pub cells: Vec<SpecCell>,
}

impl GenerationSpec {
    /// The full 390-case benchmark: rank and successor at depths 4/6/8,
    /// interval decoy at 4/6/7/8/9/11, far-pair control at 2, 30 cases each.
    pub fn builtin_d4v2() -> Self {
        let mut cells = Vec::new();
        for depth in [4, 6, 8] {
            cells.push(SpecCell { family: Family::TemporalRank, depth, n: 30 });
            cells.push(SpecCell { family: Family::TemporalSuccessor, depth, n: 30 });
        }
        for depth in [4, 6, 7, 8, 9, 11] {
            cells.push(SpecCell { family: Family::TemporalIntervalDecoy, depth, n: 30 });
        }
        cells.push(SpecCell { family: Family::PairFarControl, depth: 2, n: 30 });
        GenerationSpec { cells }
    }

    /// The synthetic in-context suite: 33 cases per family at depth 3.
    pub fn builtin_synthetic() -> Self {
        GenerationSpec {
            cells: [Family::Kinship, Family::Numerical, Family::Spatial]
                .into_iter()
                .map(|family| SpecCell { family, depth: 3, n: 33 })
                .collect(),
        }
    }

    /// Resolve a CLI spec argument: `builtin:<name>` or a JSON file path.
    pub fn resolve(arg: &str) -> Result<Self> {
        if let Some(name) = arg.strip_prefix("builtin:") {
            match name {
                "d4v2" => Ok(Self::builtin_d4v2()),
                "synthetic" => Ok(Self::builtin_synthetic()),
                other => Err(Error::Config(format!("unknown builtin spec `{other}`"))),
            }
        } else {
            Self::from_json_file(Path::new(arg))
        }
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
    }

    fn validate(&self) -> Result<()> {
        if self.cells.is_empty() {
            return Err(Error::EmptyInput("generation spec has no cells".into()));
        }
        let mut seen = BTreeSet::new();
        for cell in &self.cells {
            if cell.n == 0 {
                return Err(Error::Config(format!(
                    "cell {}:{} requests zero cases",
                    cell.family, cell.depth
                )));
            }
            if cell.family == Family::PairFarControl && cell.depth != 2 {
                return Err(Error::InfeasibleSpec {
                    family: cell.family.as_str().into(),
                    depth: cell.depth,
                    reason: "the far-pair control family only exists at depth 2".into(),
                });
            }
            if cell.depth < 2 && !cell.family.is_synthetic() {
                return Err(Error::InfeasibleSpec {
                    family: cell.family.as_str().into(),
                    depth: cell.depth,
                    reason: "temporal families need depth >= 2".into(),
                });
            }
            if cell.family.is_synthetic() && cell.depth < 1 {
                return Err(Error::InfeasibleSpec {
                    family: cell.family.as_str().into(),
                    depth: cell.depth,
                    reason: "synthetic families need depth >= 1".into(),
                });
            }
            if !seen.insert((cell.family, cell.depth)) {
                return Err(Error::Config(format!(
                    "duplicate spec cell {}:{}",
                    cell.family, cell.depth
                )));
            }
        }
        Ok(())
    }
}

/// A generated benchmark: the cases plus the provenance needed to rerun them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkManifest {
    pub pool_hash: String,
    pub seed: u64,
    /// "family:depth" -> case count.
    pub counts: BTreeMap<String, u32>,
    pub cases: Vec<CompositionCase>,
}

impl BenchmarkManifest {
    /// Content hash over the canonical JSON form of the whole manifest.
    pub fn hash(&self) -> String {
        canonical::hash_serializable(self)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
    }
}

/// Derive an independent RNG stream for one case.
fn case_rng(seed: u64, family: Family, depth: u32, index: u32) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(b"case");
    hasher.update(seed.to_le_bytes());
    hasher.update(family.as_str().as_bytes());
    hasher.update(depth.to_le_bytes());
    hasher.update(index.to_le_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

/// Generate the full benchmark for a spec against a pool.
pub fn generate_benchmark(
    pool: &AtomPool,
    spec: &GenerationSpec,
    seed: u64,
) -> Result<BenchmarkManifest> {
    spec.validate()?;

    // Feasibility precheck: every temporal cell must fit in the pool.
    for cell in &spec.cells {
        if cell.family.is_synthetic() {
            continue;
        }
        depth_bin(cell.family, cell.depth)?;
        let needed = cell.family.atoms_per_case(cell.depth) as usize;
        if needed > pool.len() {
            return Err(Error::InfeasibleSpec {
                family: cell.family.as_str().into(),
                depth: cell.depth,
                reason: format!(
                    "each case needs {needed} distinct atoms but the pool has {}",
                    pool.len()
                ),
            });
        }
    }

    let mut cells = spec.cells.clone();
    cells.sort_by(|a, b| (a.family, a.depth).cmp(&(b.family, b.depth)));

    let mut cases = Vec::new();
    let mut counts = BTreeMap::new();
    for cell in &cells {
        counts.insert(format!("{}:{}", cell.family, cell.depth), cell.n);
        for index in 0..cell.n {
            let case_id = format!("{}-d{:02}-{:03}", cell.family, cell.depth, index);
            let mut rng = case_rng(seed, cell.family, cell.depth, index);
            let case = if cell.family.is_synthetic() {
                build_synthetic_case(cell.family, cell.depth, &case_id, &mut rng, pool)?
            } else {
                build_temporal_case(cell.family, cell.depth, &case_id, &mut rng, pool)?
            };
            debug_assert_eq!(
                case.atom_ids.len(),
                cell.family.atoms_per_case(cell.depth) as usize
            );
            debug_assert_eq!(case.atom_ids.len(), case.sub_questions.len());
            cases.push(case);
        }
    }

    Ok(BenchmarkManifest {
        pool_hash: pool.hash().to_string(),
        seed,
        counts,
        cases,
    })
}

/// Generate one synthetic family directly (without a spec).
pub fn generate_synthetic_family(
    family: Family,
    n: u32,
    depth: u32,
    seed: u64,
    pool: &AtomPool,
) -> Result<Vec<CompositionCase>> {
    if !family.is_synthetic() {
        return Err(Error::Config(format!(
            "{family} is not a synthetic family"
        )));
    }
    let spec = GenerationSpec {
        cells: vec![SpecCell { family, depth, n }],
    };
    Ok(generate_benchmark(pool, &spec, seed)?.cases)
}

// ---------------------------------------------------------------------------
// Temporal families
// ---------------------------------------------------------------------------

fn sub_question_for(atom: &AtomFact) -> SubQuestion {
    SubQuestion {
        text: format!("In which year did {} occur?", atom.entity),
        gold_answer: atom.gold_answer.clone(),
    }
}

fn render_options(entities: &[&str]) -> String {
    entities
        .iter()
        .enumerate()
        .map(|(i, e)| format!("({}) {e}", OPTION_LABELS[i]))
        .collect::<Vec<_>>()
        .join(", ")
}

fn infeasible(family: Family, depth: u32, reason: &str) -> Error {
    Error::InfeasibleSpec {
        family: family.as_str().into(),
        depth,
        reason: reason.into(),
    }
}

fn build_temporal_case(
    family: Family,
    depth: u32,
    case_id: &str,
    rng: &mut ChaCha8Rng,
    pool: &AtomPool,
) -> Result<CompositionCase> {
    let atoms: Vec<&AtomFact> = pool.atoms().iter().collect();
    for _ in 0..MAX_SAMPLE_ATTEMPTS {
        let drawn = match family {
            Family::TemporalRank => try_rank(depth, rng, &atoms),
            Family::TemporalSuccessor => try_successor(depth, rng, &atoms),
            Family::TemporalIntervalDecoy => try_interval(depth, rng, &atoms),
            Family::PairFarControl => try_control(rng, &atoms),
            _ => unreachable!("synthetic families are built elsewhere"),
        };
        if let Some((atom_refs, main_question, gold_answer)) = drawn {
            let atom_ids: Vec<String> =
                atom_refs.iter().map(|a| a.atom_id.clone()).collect();
            debug_assert_eq!(
                atom_ids.iter().collect::<BTreeSet<_>>().len(),
                atom_ids.len(),
                "atom reuse within a case"
            );
            let sub_questions = atom_refs.iter().map(|a| sub_question_for(a)).collect();
            return Ok(CompositionCase {
                case_id: case_id.to_string(),
                family,
                depth,
                depth_bin: depth_bin(family, depth)?,
                atom_ids,
                main_question,
                sub_questions,
                gold_answer,
                evidence_blocks: None,
            });
        }
    }
    Err(infeasible(
        family,
        depth,
        &format!("no valid case found in {MAX_SAMPLE_ATTEMPTS} sampling attempts"),
    ))
}

type Drawn<'a> = (Vec<&'a AtomFact>, String, String);

fn sample_distinct<'a>(
    rng: &mut ChaCha8Rng,
    atoms: &[&'a AtomFact],
    k: usize,
) -> Vec<&'a AtomFact> {
    let mut indices: Vec<usize> = (0..atoms.len()).collect();
    indices.shuffle(rng);
    indices.truncate(k);
    indices.into_iter().map(|i| atoms[i]).collect()
}

fn try_rank<'a>(depth: u32, rng: &mut ChaCha8Rng, atoms: &[&'a AtomFact]) -> Option<Drawn<'a>> {
    let picked = sample_distinct(rng, atoms, depth as usize);
    let years: BTreeSet<i32> = picked.iter().map(|a| a.canonical_value.year).collect();
    if years.len() != picked.len() {
        return None; // need pairwise-distinct years
    }
    let entities: Vec<&str> = picked.iter().map(|a| a.entity.as_str()).collect();
    let question = format!(
        "Rank these events from earliest to latest: {}.",
        render_options(&entities)
    );
    let mut order: Vec<usize> = (0..picked.len()).collect();
    order.sort_by_key(|&i| picked[i].canonical_value.year);
    let gold = order
        .iter()
        .map(|&i| OPTION_LABELS[i])
        .collect::<Vec<_>>()
        .join(", ");
    Some((picked, question, gold))
}

fn try_successor<'a>(
    depth: u32,
    rng: &mut ChaCha8Rng,
    atoms: &[&'a AtomFact],
) -> Option<Drawn<'a>> {
    let after = rng.gen_bool(0.5);
    let reference = atoms[rng.gen_range(0..atoms.len())];
    let ref_year = i64::from(reference.canonical_value.year);
    let later: Vec<&&AtomFact> = atoms
        .iter()
        .filter(|a| i64::from(a.canonical_value.year) >= ref_year + SUCCESSOR_MARGIN_YEARS)
        .collect();
    let earlier: Vec<&&AtomFact> = atoms
        .iter()
        .filter(|a| i64::from(a.canonical_value.year) <= ref_year - SUCCESSOR_MARGIN_YEARS)
        .collect();
    let (target_side, distractor_side) = if after {
        (&later, &earlier)
    } else {
        (&earlier, &later)
    };
    let n_distractors = depth as usize - 2;
    if target_side.is_empty() || distractor_side.len() < n_distractors {
        return None;
    }
    let target = *target_side[rng.gen_range(0..target_side.len())];
    let distractor_refs: Vec<&AtomFact> = {
        let all: Vec<&AtomFact> = distractor_side.iter().map(|a| **a).collect();
        sample_distinct(rng, &all, n_distractors)
    };
    let mut options: Vec<&AtomFact> = Vec::with_capacity(depth as usize - 1);
    options.push(target);
    options.extend(distractor_refs);
    options.shuffle(rng);

    let entities: Vec<&str> = options.iter().map(|a| a.entity.as_str()).collect();
    let direction = if after { "after" } else { "before" };
    let question = format!(
        "Which of these events happened {direction} {}? {}",
        reference.entity,
        render_options(&entities)
    );
    let mut picked = vec![reference];
    picked.extend(options);
    Some((picked, question, target.entity.clone()))
}

fn try_interval<'a>(
    depth: u32,
    rng: &mut ChaCha8Rng,
    atoms: &[&'a AtomFact],
) -> Option<Drawn<'a>> {
    let inside = atoms[rng.gen_range(0..atoms.len())];
    let inside_year = i64::from(inside.canonical_value.year);
    let lows: Vec<&&AtomFact> = atoms
        .iter()
        .filter(|a| i64::from(a.canonical_value.year) <= inside_year - INTERVAL_MARGIN_YEARS)
        .collect();
    let highs: Vec<&&AtomFact> = atoms
        .iter()
        .filter(|a| i64::from(a.canonical_value.year) >= inside_year + INTERVAL_MARGIN_YEARS)
        .collect();
    if lows.is_empty() || highs.is_empty() {
        return None;
    }
    let lo = *lows[rng.gen_range(0..lows.len())];
    let hi = *highs[rng.gen_range(0..highs.len())];
    let lo_year = i64::from(lo.canonical_value.year);
    let hi_year = i64::from(hi.canonical_value.year);

    let n_decoys = depth as usize - 1;
    let outside: Vec<&AtomFact> = atoms
        .iter()
        .filter(|a| {
            let y = i64::from(a.canonical_value.year);
            (y <= lo_year - INTERVAL_MARGIN_YEARS || y >= hi_year + INTERVAL_MARGIN_YEARS)
                && a.atom_id != lo.atom_id
                && a.atom_id != hi.atom_id
        })
        .map(|a| *a)
        .collect();
    if outside.len() < n_decoys {
        return None;
    }
    let decoys = sample_distinct(rng, &outside, n_decoys);
    let mut options: Vec<&AtomFact> = Vec::with_capacity(depth as usize);
    options.push(inside);
    options.extend(decoys);
    options.shuffle(rng);

    let entities: Vec<&str> = options.iter().map(|a| a.entity.as_str()).collect();
    let question = format!(
        "Which of these events occurred between {} and {}? {}",
        lo.entity,
        hi.entity,
        render_options(&entities)
    );
    let mut picked = vec![lo, hi];
    picked.extend(options);
    Some((picked, question, inside.entity.clone()))
}

fn try_control<'a>(rng: &mut ChaCha8Rng, atoms: &[&'a AtomFact]) -> Option<Drawn<'a>> {
    let picked = sample_distinct(rng, atoms, 2);
    let (a, b) = (picked[0], picked[1]);
    if a.canonical_value.year_distance(&b.canonical_value) <= CONTROL_SEPARATION_YEARS {
        return None;
    }
    let question = format!("What came first, {} or {}?", a.entity, b.entity);
    let gold = if a.canonical_value.year < b.canonical_value.year {
        a.entity.clone()
    } else {
        b.entity.clone()
    };
    Some((picked, question, gold))
}

// ---------------------------------------------------------------------------
// Synthetic families
// ---------------------------------------------------------------------------

const ONSETS: [&str; 14] = [
    "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z",
];
const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];
const CODAS: [&str; 6] = ["", "n", "r", "l", "s", "m"];

/// Seeded generator of pronounceable fictional names that collide with
/// neither the pool's entities nor each other within a case.
struct NameForge {
    screen: Vec<String>,
    used: BTreeSet<String>,
}

impl NameForge {
    fn new(pool: &AtomPool) -> Self {
        NameForge {
            screen: pool.entity_screen(),
            used: BTreeSet::new(),
        }
    }

    fn syllable(rng: &mut ChaCha8Rng, with_coda: bool) -> String {
        let mut s = String::new();
        s.push_str(ONSETS[rng.gen_range(0..ONSETS.len())]);
        s.push_str(VOWELS[rng.gen_range(0..VOWELS.len())]);
        if with_coda {
            s.push_str(CODAS[rng.gen_range(0..CODAS.len())]);
        }
        s
    }

    /// A fresh lowercase name of 2-3 syllables.
    fn fresh(&mut self, rng: &mut ChaCha8Rng) -> String {
        loop {
            let syllables = rng.gen_range(2..=3);
            let mut name = String::new();
            for i in 0..syllables {
                name.push_str(&Self::syllable(rng, i + 1 == syllables));
            }
            let clashes = self.used.contains(&name)
                || self
                    .screen
                    .iter()
                    .any(|e| e.contains(&name) || name.contains(e.as_str()));
            if !clashes {
                self.used.insert(name.clone());
                return name;
            }
        }
    }

    /// A fresh capitalized person name.
    fn fresh_person(&mut self, rng: &mut ChaCha8Rng) -> String {
        let name = self.fresh(rng);
        let mut chars = name.chars();
        let first = chars.next().expect("names are nonempty");
        format!("{}{}", first.to_uppercase(), chars.as_str())
    }
}

fn synthetic_atom_ids(case_id: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{case_id}-f{i}")).collect()
}

/// Number, shuffle, and prefix evidence sentences.
fn finalize_evidence(sentences: Vec<String>, rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut shuffled = sentences;
    shuffled.shuffle(rng);
    shuffled
        .into_iter()
        .enumerate()
        .map(|(i, s)| format!("[Evidence {}] {s}", i + 1))
        .collect()
}

fn build_synthetic_case(
    family: Family,
    depth: u32,
    case_id: &str,
    rng: &mut ChaCha8Rng,
    pool: &AtomPool,
) -> Result<CompositionCase> {
    let mut forge = NameForge::new(pool);
    let d = depth as usize;
    let (sentences, sub_questions, main_question, gold_answer) = match family {
        Family::Kinship => {
            // persons[0] is the distant ancestor; persons[d] is the query person.
            let persons: Vec<String> = (0..=d).map(|_| forge.fresh_person(rng)).collect();
            let sentences: Vec<String> = (0..d)
                .map(|i| format!("{} is the mother of {}.", persons[i], persons[i + 1]))
                .collect();
            let subs: Vec<SubQuestion> = (0..d)
                .map(|i| SubQuestion {
                    text: format!("Who is the mother of {}?", persons[i + 1]),
                    gold_answer: persons[i].clone(),
                })
                .collect();
            let generations = if d == 1 {
                "1 generation".to_string()
            } else {
                format!("{d} generations")
            };
            let main = format!(
                "Who is the matrilineal ancestor of {} exactly {generations} up?",
                persons[d]
            );
            (sentences, subs, main, persons[0].clone())
        }
        Family::Numerical => {
            let objects: Vec<String> = (0..d).map(|_| forge.fresh(rng)).collect();
            let base: i64 = rng.gen_range(10..=40);
            let mut values = vec![base];
            let mut sentences =
                vec![format!("The {} has a value of {base}.", objects[0])];
            let mut subs = vec![SubQuestion {
                text: format!("What is the value of the {}?", objects[0]),
                gold_answer: base.to_string(),
            }];
            for i in 1..d {
                let k: i64 = rng.gen_range(2..=7);
                let prev = values[i - 1];
                let greater = if prev - k < 1 {
                    true
                } else if prev + k > 99 {
                    false
                } else {
                    rng.gen_bool(0.5)
                };
                let (word, value) = if greater {
                    ("greater", prev + k)
                } else {
                    ("smaller", prev - k)
                };
                values.push(value);
                sentences.push(format!(
                    "The {} has a value {k} {word} than the {}.",
                    objects[i],
                    objects[i - 1]
                ));
                subs.push(SubQuestion {
                    text: format!(
                        "By how much does the value of the {} differ from the value of the {}?",
                        objects[i],
                        objects[i - 1]
                    ),
                    gold_answer: k.to_string(),
                });
            }
            let main = format!("What is the value of the {}?", objects[d - 1]);
            let gold = values[d - 1].to_string();
            (sentences, subs, main, gold)
        }
        Family::Spatial => {
            // objects[0] is the anchor; each fact steps one position east.
            let objects: Vec<String> = (0..=d).map(|_| forge.fresh(rng)).collect();
            let sentences: Vec<String> = (0..d)
                .map(|i| {
                    format!(
                        "The {} is immediately east of the {}.",
                        objects[i + 1],
                        objects[i]
                    )
                })
                .collect();
            let subs: Vec<SubQuestion> = (0..d)
                .map(|i| SubQuestion {
                    text: format!("Which object is immediately east of the {}?", objects[i]),
                    gold_answer: format!("the {}", objects[i + 1]),
                })
                .collect();
            let positions = if d == 1 {
                "1 position".to_string()
            } else {
                format!("{d} positions")
            };
            let main = format!(
                "Which object lies {positions} east of the {}?",
                objects[0]
            );
            let gold = format!("the {}", objects[d]);
            (sentences, subs, main, gold)
        }
        _ => unreachable!("temporal families are built elsewhere"),
    };

    Ok(CompositionCase {
        case_id: case_id.to_string(),
        family,
        depth,
        depth_bin: depth_bin(family, depth)?,
        atom_ids: synthetic_atom_ids(case_id, sub_questions.len()),
        main_question,
        sub_questions,
        gold_answer,
        evidence_blocks: Some(finalize_evidence(sentences, rng)),
    })
}

// ---------------------------------------------------------------------------
// Gold oracle
// ---------------------------------------------------------------------------

/// Recompute a case's gold answer from first principles: pool years for the
/// temporal families, the evidence text itself for synthetic families. Used
/// to cross-check stored golds.
pub fn gold_answer_oracle(case: &CompositionCase, pool: &AtomPool) -> Result<String> {
    if case.family.is_synthetic() {
        return synthetic_gold_from_evidence(case);
    }
    let lookup = |atom_id: &str| -> Result<&AtomFact> {
        pool.get(atom_id).ok_or_else(|| Error::MissingAtom {
            case_id: case.case_id.clone(),
            atom_id: atom_id.to_string(),
        })
    };
    let atoms: Vec<&AtomFact> = case
        .atom_ids
        .iter()
        .map(|id| lookup(id))
        .collect::<Result<_>>()?;

    match case.family {
        Family::TemporalRank => {
            let mut order: Vec<usize> = (0..atoms.len()).collect();
            order.sort_by_key(|&i| atoms[i].canonical_value.year);
            Ok(order
                .iter()
                .map(|&i| OPTION_LABELS[i])
                .collect::<Vec<_>>()
                .join(", "))
        }
        Family::TemporalSuccessor => {
            let after = case.main_question.contains(" happened after ");
            let before = case.main_question.contains(" happened before ");
            if after == before {
                return Err(Error::Protocol(format!(
                    "case {} has no readable direction in its question",
                    case.case_id
                )));
            }
            let ref_year = atoms[0].canonical_value.year;
            let satisfying: Vec<&&AtomFact> = atoms[1..]
                .iter()
                .filter(|a| {
                    if after {
                        a.canonical_value.year > ref_year
                    } else {
                        a.canonical_value.year < ref_year
                    }
                })
                .collect();
            match satisfying.as_slice() {
                [only] => Ok(only.entity.clone()),
                other => Err(Error::Protocol(format!(
                    "case {} has {} satisfying candidates, expected exactly 1",
                    case.case_id,
                    other.len()
                ))),
            }
        }
        Family::TemporalIntervalDecoy => {
            let y0 = atoms[0].canonical_value.year;
            let y1 = atoms[1].canonical_value.year;
            let (lo, hi) = (y0.min(y1), y0.max(y1));
            let inside: Vec<&&AtomFact> = atoms[2..]
                .iter()
                .filter(|a| a.canonical_value.year > lo && a.canonical_value.year < hi)
                .collect();
            match inside.as_slice() {
                [only] => Ok(only.entity.clone()),
                other => Err(Error::Protocol(format!(
                    "case {} has {} candidates inside the interval, expected exactly 1",
                    case.case_id,
                    other.len()
                ))),
            }
        }
        Family::PairFarControl => {
            let (a, b) = (atoms[0], atoms[1]);
            if a.canonical_value.year == b.canonical_value.year {
                return Err(Error::Protocol(format!(
                    "case {} control pair shares a year",
                    case.case_id
                )));
            }
            Ok(if a.canonical_value.year < b.canonical_value.year {
                a.entity.clone()
            } else {
                b.entity.clone()
            })
        }
        _ => unreachable!(),
    }
}

fn strip_evidence_prefix(line: &str) -> Result<&str> {
    let rest = line
        .strip_prefix("[Evidence ")
        .and_then(|r| r.split_once("] "))
        .map(|(_, sentence)| sentence);
    rest.ok_or_else(|| Error::Protocol(format!("evidence line lacks its prefix: `{line}`")))
}

fn synthetic_gold_from_evidence(case: &CompositionCase) -> Result<String> {
    let blocks = case.evidence_blocks.as_ref().ok_or_else(|| {
        Error::Protocol(format!(
            "synthetic case {} has no evidence blocks",
            case.case_id
        ))
    })?;
    let sentences: Vec<&str> = blocks
        .iter()
        .map(|b| strip_evidence_prefix(b))
        .collect::<Result<_>>()?;
    let bad = |detail: &str| Error::Protocol(format!("case {}: {detail}", case.case_id));

    match case.family {
        Family::Kinship => {
            // "A is the mother of B." => mother_of[B] = A
            let mut mother_of: BTreeMap<&str, &str> = BTreeMap::new();
            for s in &sentences {
                let s = s.strip_suffix('.').ok_or_else(|| bad("missing period"))?;
                let (a, b) = s
                    .split_once(" is the mother of ")
                    .ok_or_else(|| bad("unparseable kinship sentence"))?;
                mother_of.insert(b, a);
            }
            let mothers: BTreeSet<&str> = mother_of.values().copied().collect();
            let start = mother_of
                .keys()
                .copied()
                .find(|child| !mothers.contains(child))
                .ok_or_else(|| bad("no chain end found"))?;
            let mut current = start;
            let mut steps = 0;
            while let Some(&mother) = mother_of.get(current) {
                current = mother;
                steps += 1;
            }
            if steps != case.depth {
                return Err(bad(&format!(
                    "chain length {steps} does not match depth {}",
                    case.depth
                )));
            }
            Ok(current.to_string())
        }
        Family::Numerical => {
            enum Def<'a> {
                Base(i64),
                Offset { k: i64, greater: bool, from: &'a str },
            }
            let mut defs: BTreeMap<&str, Def> = BTreeMap::new();
            let mut referenced: BTreeSet<&str> = BTreeSet::new();
            for s in &sentences {
                let s = s
                    .strip_prefix("The ")
                    .and_then(|s| s.strip_suffix('.'))
                    .ok_or_else(|| bad("unparseable numerical sentence"))?;
                if let Some((obj, v)) = s.split_once(" has a value of ") {
                    let v: i64 = v.parse().map_err(|_| bad("unparseable base value"))?;
                    defs.insert(obj, Def::Base(v));
                } else if let Some((obj, rest)) = s.split_once(" has a value ") {
                    let (k_word, tail) = rest
                        .split_once(' ')
                        .ok_or_else(|| bad("unparseable offset"))?;
                    let k: i64 = k_word.parse().map_err(|_| bad("unparseable offset"))?;
                    let (greater, from) = if let Some(from) = tail.strip_prefix("greater than the ")
                    {
                        (true, from)
                    } else if let Some(from) = tail.strip_prefix("smaller than the ") {
                        (false, from)
                    } else {
                        return Err(bad("unparseable offset direction"));
                    };
                    referenced.insert(from);
                    defs.insert(obj, Def::Offset { k, greater, from });
                } else {
                    return Err(bad("unparseable numerical sentence"));
                }
            }
            let terminal = defs
                .keys()
                .copied()
                .find(|obj| !referenced.contains(obj))
                .ok_or_else(|| bad("no terminal object"))?;
            // Walk the chain to the base, depth-bounded to catch cycles.
            let mut chain = Vec::new();
            let mut current = terminal;
            loop {
                match defs.get(current) {
                    Some(Def::Base(v)) => {
                        let mut value = *v;
                        for (k, greater) in chain.iter().rev() {
                            value += if *greater { *k } else { -k };
                        }
                        return Ok(value.to_string());
                    }
                    Some(Def::Offset { k, greater, from }) => {
                        chain.push((*k, *greater));
                        if chain.len() > sentences.len() {
                            return Err(bad("offset chain does not terminate"));
                        }
                        current = from;
                    }
                    None => return Err(bad("offset references an undefined object")),
                }
            }
        }
        Family::Spatial => {
            // "The A is immediately east of the B." => east_of[B] = A
            let mut east_of: BTreeMap<&str, &str> = BTreeMap::new();
            for s in &sentences {
                let s = s
                    .strip_prefix("The ")
                    .and_then(|s| s.strip_suffix('.'))
                    .ok_or_else(|| bad("unparseable spatial sentence"))?;
                let (a, b) = s
                    .split_once(" is immediately east of the ")
                    .ok_or_else(|| bad("unparseable spatial sentence"))?;
                east_of.insert(b, a);
            }
            let easts: BTreeSet<&str> = east_of.values().copied().collect();
            let start = east_of
                .keys()
                .copied()
                .find(|obj| !easts.contains(obj))
                .ok_or_else(|| bad("no western anchor found"))?;
            let mut current = start;
            let mut steps = 0;
            while let Some(&next) = east_of.get(current) {
                current = next;
                steps += 1;
            }
            if steps != case.depth {
                return Err(bad(&format!(
                    "walk length {steps} does not match depth {}",
                    case.depth
                )));
            }
            Ok(format!("the {current}"))
        }
        _ => unreachable!(),
    }
}
