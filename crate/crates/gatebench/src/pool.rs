//! Atomic fact pool: temporal facts with paraphrase sets.
//!
//! A pool is the raw material for the temporal benchmark families. Each atom
//! is a dated event with exactly four paraphrased probe questions, a gold
//! answer, and a canonical temporal value the matcher scores against.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::canonical;
use crate::error::{Error, Result};
use crate::matcher;

/// Number of paraphrase probes every pool atom must ship.
pub const PARAPHRASES_PER_ATOM: usize = 4;

/// A calendar value at year, month, or day resolution.
///
/// Years are signed: negative years denote BCE (year -200 renders as 200 BCE).
/// `day` may only be present when `month` is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemporalValue {
    pub year: i32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub month: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub day: Option<u8>,
}

impl TemporalValue {
    pub fn year(year: i32) -> Self {
        TemporalValue {
            year,
            month: None,
            day: None,
        }
    }

    /// True for years before the common era.
    pub fn is_bce(&self) -> bool {
        self.year < 0
    }

    /// Absolute distance in years, ignoring month/day.
    pub fn year_distance(&self, other: &TemporalValue) -> i64 {
        (i64::from(self.year) - i64::from(other.year)).abs()
    }
}

impl fmt::Display for TemporalValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.year < 0 {
            write!(f, "{} BCE", -self.year)
        } else {
            write!(f, "{}", self.year)
        }
    }
}

/// Topical category of a pool atom.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Political,
    Scientific,
    Cultural,
    Sports,
    Tech,
}

/// Resolution the matcher must hold a candidate answer to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    #[default]
    Year,
    Month,
    Day,
}

/// One dated fact with its probe paraphrases.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AtomFact {
    pub atom_id: String,
    /// Declarative sentence stating the fact.
    pub statement: String,
    pub canonical_value: TemporalValue,
    /// Noun phrase naming the event (used verbatim in composed questions).
    pub entity: String,
    pub category: Category,
    /// Exactly four interrogative paraphrases probing the same fact.
    pub paraphrases: Vec<String>,
    /// Answer string the matcher scores probe responses against.
    pub gold_answer: String,
    /// Resolution required of candidate answers; defaults to year.
    #[serde(default, skip_serializing_if = "is_default_granularity")]
    pub granularity: Granularity,
}

fn is_default_granularity(g: &Granularity) -> bool {
    *g == Granularity::Year
}

/// A validated set of atoms with stable iteration order and a content hash.
#[derive(Debug, Clone)]
pub struct AtomPool {
    atoms: Vec<AtomFact>,
    by_id: BTreeMap<String, usize>,
    hash: String,
}

impl AtomPool {
    /// Validate a list of atoms and compute the pool hash.
    pub fn new(atoms: Vec<AtomFact>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::EmptyInput("atom pool has no atoms".into()));
        }
        let mut by_id = BTreeMap::new();
        for (idx, atom) in atoms.iter().enumerate() {
            validate_atom(atom)?;
            if by_id.insert(atom.atom_id.clone(), idx).is_some() {
                return Err(Error::PoolValidation {
                    atom_id: atom.atom_id.clone(),
                    reason: "duplicate atom_id".into(),
                });
            }
        }
        let hash = canonical::hash_serializable(&atoms);
        Ok(AtomPool {
            atoms,
            by_id,
            hash,
        })
    }

    /// Atoms in file order.
    pub fn atoms(&self) -> &[AtomFact] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn get(&self, atom_id: &str) -> Option<&AtomFact> {
        self.by_id.get(atom_id).map(|&i| &self.atoms[i])
    }

    /// SHA-256 over the canonical JSON form of the atom list.
    pub fn hash(&self) -> &str {
        &self.hash
    }

    /// Lowercased entity phrases, used to screen synthetic names against
    /// collisions with real pool entities.
    pub fn entity_screen(&self) -> Vec<String> {
        self.atoms
            .iter()
            .map(|a| a.entity.to_lowercase())
            .collect()
    }
}

fn validate_atom(atom: &AtomFact) -> Result<()> {
    let fail = |reason: &str| {
        Err(Error::PoolValidation {
            atom_id: atom.atom_id.clone(),
            reason: reason.into(),
        })
    };
    if atom.atom_id.trim().is_empty() {
        return Err(Error::PoolValidation {
            atom_id: "<blank>".into(),
            reason: "empty atom_id".into(),
        });
    }
    if atom.paraphrases.len() != PARAPHRASES_PER_ATOM {
        return fail(&format!(
            "expected exactly {PARAPHRASES_PER_ATOM} paraphrases, found {}",
            atom.paraphrases.len()
        ));
    }
    if atom.paraphrases.iter().any(|p| p.trim().is_empty()) {
        return fail("paraphrase text is empty");
    }
    if atom.entity.trim().is_empty() {
        return fail("entity is empty");
    }
    if atom.statement.trim().is_empty() {
        return fail("statement is empty");
    }
    if atom.canonical_value.day.is_some() && atom.canonical_value.month.is_none() {
        return fail("day set without month");
    }
    if let Some(m) = atom.canonical_value.month {
        if !(1..=12).contains(&m) {
            return fail("month out of range");
        }
    }
    if let Some(d) = atom.canonical_value.day {
        if !(1..=31).contains(&d) {
            return fail("day out of range");
        }
    }
    // The gold answer must resolve to the canonical value under the same
    // normalizer the matcher uses, otherwise probe scoring would be
    // inconsistent with the pool's declared value.
    let norm = matcher::normalize(&atom.gold_answer);
    match norm.value {
        Some(v) if v.year == atom.canonical_value.year => Ok(()),
        Some(v) => fail(&format!(
            "gold_answer normalizes to year {} but canonical_value.year is {}",
            v.year, atom.canonical_value.year
        )),
        None => fail("gold_answer does not normalize to a temporal value"),
    }
}

/// Load and validate a pool from a JSON file (a top-level array of atoms).
pub fn load_atom_pool(path: &Path) -> Result<AtomPool> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    let atoms: Vec<AtomFact> = serde_json::from_str(&text)
        .map_err(|e| Error::json(path.display().to_string(), e))?;
    AtomPool::new(atoms)
}
