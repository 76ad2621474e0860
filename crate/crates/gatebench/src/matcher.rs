//! Deterministic answer matching.
//!
//! Two verdict tiers are reported for every probe: `exact` (normalized string
//! equality, strict) and `consistency` (exact plus a fixed cascade of
//! equivalence rules). The cascade order is part of the protocol and must not
//! be reordered:
//!
//! 1. exact match after normalization
//! 2. BCE/CE era equivalence
//! 3. +/- 1 year tolerance for temporal answers
//! 4. partial-name match (unambiguous token subsequence or registered short form)
//! 5. abstention handling
//!
//! Anything that falls through is rejected with the most specific applicable
//! reason. The optional external adjudicator (see `adjudicator`) is only ever
//! consulted on rule-tier rejections, never to overturn an accept.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pool::{Granularity, TemporalValue};

/// Exact abstention token; comparison is case-sensitive and whitespace-tolerant.
pub const ABSTENTION_TOKEN: &str = "INSUFFICIENT_EVIDENCE";

/// Measured precision of the rule tier against human adjudication on the
/// reference annotation set. Reported for context, not asserted by tests.
pub const RULE_TIER_REFERENCE_PRECISION: f64 = 0.892;
/// Measured recall of the rule tier on the same reference annotation set.
pub const RULE_TIER_REFERENCE_RECALL: f64 = 0.565;

/// Which rule produced a consistency accept (or `None` on reject).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleFired {
    ExactNorm,
    BceEquiv,
    PartialName,
    /// Accept granted by the external adjudicator after a rule-tier reject.
    Paraphrase,
    YearTolerance,
    AbstentionValid,
    None,
}

/// Most specific reason a candidate was rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    /// Temporal values at least 2 years apart, or a wrong full-resolution date,
    /// or a full-length ordering in the wrong order.
    Contradiction,
    /// Candidate names or dates a different thing than the gold.
    WrongEntity,
    /// Candidate is missing required resolution or ordering elements.
    Incomplete,
    /// Empty or unusable candidate text.
    FormatViolation,
    /// Abstained although the gold answer is knowable.
    AbstentionOnKnowable,
}

/// Outcome of matching one candidate against one gold answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MatchVerdict {
    pub exact: bool,
    pub consistency: bool,
    pub rule_fired: RuleFired,
    pub reject_reason: Option<RejectReason>,
}

impl MatchVerdict {
    fn accept(exact: bool, rule: RuleFired) -> Self {
        MatchVerdict {
            exact,
            consistency: true,
            rule_fired: rule,
            reject_reason: None,
        }
    }

    fn reject(reason: RejectReason) -> Self {
        MatchVerdict {
            exact: false,
            consistency: false,
            rule_fired: RuleFired::None,
            reject_reason: Some(reason),
        }
    }
}

/// Per-probe information the rules need beyond the two answer strings.
#[derive(Debug, Clone)]
pub struct MatchContext<'a> {
    /// False only when the gold cannot be derived from what the model was
    /// given (synthetic evidence questions asked closed-book). Controls
    /// whether abstention is a valid answer.
    pub gold_is_knowable: bool,
    /// The case's answer options (entity phrases). Partial-name matches must
    /// be unambiguous among these.
    pub options: &'a [String],
    /// Resolution the candidate must reach for temporal golds.
    pub granularity: Granularity,
}

impl<'a> MatchContext<'a> {
    /// A knowable, year-granularity probe with no competing options.
    pub fn knowable() -> MatchContext<'static> {
        MatchContext {
            gold_is_knowable: true,
            options: &[],
            granularity: Granularity::Year,
        }
    }
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

/// A candidate or gold answer after normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    /// Lowercased, punctuation-stripped, whitespace-collapsed text.
    pub text: String,
    /// Temporal value parsed from the text, if any.
    pub value: Option<TemporalValue>,
    /// True when the text contains nothing but the parsed date tokens.
    pub date_only: bool,
    /// True when the parsed year carried a BC/BCE era marker.
    pub has_bce_marker: bool,
}

const MONTHS: [(&str, u8); 24] = [
    ("january", 1),
    ("february", 2),
    ("march", 3),
    ("april", 4),
    ("may", 5),
    ("june", 6),
    ("july", 7),
    ("august", 8),
    ("september", 9),
    ("october", 10),
    ("november", 11),
    ("december", 12),
    ("jan", 1),
    ("feb", 2),
    ("mar", 3),
    ("apr", 4),
    ("jun", 6),
    ("jul", 7),
    ("aug", 8),
    ("sep", 9),
    ("sept", 9),
    ("oct", 10),
    ("nov", 11),
    ("dec", 12),
];

fn month_number(token: &str) -> Option<u8> {
    MONTHS.iter().find(|(m, _)| *m == token).map(|&(_, n)| n)
}

fn era_sign(token: &str) -> Option<i32> {
    match token {
        "bc" | "bce" => Some(-1),
        "ad" | "ce" => Some(1),
        _ => None,
    }
}

/// Lowercase, delete periods/apostrophes, map other punctuation to spaces,
/// collapse whitespace, then parse a temporal value from the token stream.
pub fn normalize(answer: &str) -> Normalized {
    let mut cleaned = String::with_capacity(answer.len());
    for ch in answer.chars() {
        let lower = ch.to_lowercase().next().unwrap_or(ch);
        match lower {
            // Deleted outright so "U.S." -> "us" and "don't" -> "dont".
            '.' | '\'' | '\u{2019}' => {}
            c if c.is_alphanumeric() => cleaned.push(c),
            _ => cleaned.push(' '),
        }
    }
    let tokens: Vec<&str> = cleaned.split_whitespace().collect();
    let text = tokens.join(" ");

    let parsed = parse_temporal(&tokens);
    let (value, has_bce_marker, date_token_idx) = match parsed {
        Some(p) => (Some(p.value), p.bce_marker, p.consumed),
        None => (None, false, Vec::new()),
    };
    let date_only = value.is_some()
        && tokens
            .iter()
            .enumerate()
            .all(|(i, _)| date_token_idx.contains(&i));

    Normalized {
        text,
        value,
        date_only,
        has_bce_marker,
    }
}

struct ParsedTemporal {
    value: TemporalValue,
    bce_marker: bool,
    /// Token indices consumed by the date (for the date_only test).
    consumed: Vec<usize>,
}

/// Parse the first temporal value from normalized tokens.
///
/// A year is either an era-marked number ("200 bce", "79 ad", "200bc") of any
/// magnitude, or a bare 3-5 digit number. Bare 1-2 digit numbers are never
/// years, so small-integer arithmetic answers can't trip year tolerance.
fn parse_temporal(tokens: &[&str]) -> Option<ParsedTemporal> {
    let mut year: Option<(i32, bool, usize)> = None; // (signed year, bce, idx)
    let mut era_consumed: Option<usize> = None;

    for (i, tok) in tokens.iter().enumerate() {
        // "200bc" fused form.
        if let Some(stripped) = strip_fused_era(tok) {
            let (digits, sign, bce) = stripped;
            if let Ok(y) = digits.parse::<i32>() {
                year = Some((sign * y, bce, i));
                break;
            }
        }
        if tok.chars().all(|c| c.is_ascii_digit()) {
            // Era marker may precede ("ad 79") or follow ("79 ad").
            let following = tokens.get(i + 1).and_then(|t| era_sign(t));
            let preceding = if i > 0 { era_sign(tokens[i - 1]) } else { None };
            let marker = following.or(preceding);
            let marker_idx = if following.is_some() {
                Some(i + 1)
            } else if preceding.is_some() {
                Some(i - 1)
            } else {
                None
            };
            let digits = tok.len();
            if let Some(sign) = marker {
                if let Ok(y) = tok.parse::<i32>() {
                    year = Some((sign * y, sign < 0, i));
                    era_consumed = marker_idx;
                    break;
                }
            } else if (3..=5).contains(&digits) {
                if let Ok(y) = tok.parse::<i32>() {
                    year = Some((y, false, i));
                    break;
                }
            }
        }
    }

    let (y, bce, year_idx) = year?;
    let mut consumed = vec![year_idx];
    if let Some(idx) = era_consumed {
        consumed.push(idx);
    }

    // Month: a month token adjacent to the year or to a day number next to it,
    // scanning the two tokens on either side of the year.
    let mut month: Option<u8> = None;
    let mut day: Option<u8> = None;
    let window: Vec<usize> = (year_idx.saturating_sub(2)..=year_idx + 2)
        .filter(|&j| j != year_idx && j < tokens.len())
        .collect();
    for &j in &window {
        if month.is_none() {
            if let Some(m) = month_number(tokens[j]) {
                month = Some(m);
                consumed.push(j);
                // Day: 1-2 digit number directly next to the month token.
                for dj in [j.wrapping_sub(1), j + 1] {
                    if dj < tokens.len() && !consumed.contains(&dj) {
                        let t = tokens[dj];
                        if t.len() <= 2 && t.chars().all(|c| c.is_ascii_digit()) {
                            if let Ok(d) = t.parse::<u8>() {
                                if (1..=31).contains(&d) {
                                    day = Some(d);
                                    consumed.push(dj);
                                    break;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    if month.is_none() {
        day = None;
    }

    Some(ParsedTemporal {
        value: TemporalValue { year: y, month, day },
        bce_marker: bce,
        consumed,
    })
}

/// Split "200bc" style fused tokens into (digits, sign, is_bce).
fn strip_fused_era(token: &str) -> Option<(&str, i32, bool)> {
    for (suffix, sign, bce) in [
        ("bce", -1, true),
        ("bc", -1, true),
        ("ce", 1, false),
        ("ad", 1, false),
    ] {
        if let Some(digits) = token.strip_suffix(suffix) {
            if !digits.is_empty() && digits.chars().all(|c| c.is_ascii_digit()) {
                return Some((digits, sign, bce));
            }
        }
    }
    None
}

// ---------------------------------------------------------------------------
// Short-form registry
// ---------------------------------------------------------------------------

/// Registered short forms: alias -> canonical entity, both stored normalized.
///
/// Lets "WWI" match "World War I" even though the token-subsequence rule
/// cannot (too short, not a subsequence).
#[derive(Debug, Clone, Default)]
pub struct ShortFormRegistry {
    map: BTreeMap<String, String>,
}

impl ShortFormRegistry {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Common war/state abbreviations used by the bundled pool.
    pub fn builtin() -> Self {
        let mut reg = Self::default();
        for (alias, canonical) in [
            ("WWI", "World War I"),
            ("WW1", "World War I"),
            ("WWII", "World War II"),
            ("WW2", "World War II"),
            ("US", "United States"),
            ("USA", "United States"),
            ("UK", "United Kingdom"),
            ("USSR", "Soviet Union"),
        ] {
            reg.insert(alias, canonical);
        }
        reg
    }

    /// Load from a JSON object of alias -> canonical strings.
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let raw: BTreeMap<String, String> = serde_json::from_str(&text)
            .map_err(|e| Error::json(path.display().to_string(), e))?;
        let mut reg = Self::default();
        for (alias, canonical) in raw {
            reg.insert(&alias, &canonical);
        }
        Ok(reg)
    }

    pub fn insert(&mut self, alias: &str, canonical: &str) {
        self.map
            .insert(normalize(alias).text, normalize(canonical).text);
    }

    /// True when one side is a registered short form of the other.
    fn connects(&self, a: &str, b: &str) -> bool {
        self.map.get(a).map(String::as_str) == Some(b)
            || self.map.get(b).map(String::as_str) == Some(a)
    }
}

// ---------------------------------------------------------------------------
// Scalar matching
// ---------------------------------------------------------------------------

/// Match a candidate answer against a gold answer.
pub fn match_answer(
    candidate: &str,
    gold: &str,
    ctx: &MatchContext,
    registry: &ShortFormRegistry,
) -> MatchVerdict {
    let trimmed = candidate.trim();
    if trimmed.is_empty() {
        return MatchVerdict::reject(RejectReason::FormatViolation);
    }
    if trimmed == ABSTENTION_TOKEN {
        if ctx.gold_is_knowable {
            return MatchVerdict::reject(RejectReason::AbstentionOnKnowable);
        }
        let exact = gold.trim() == ABSTENTION_TOKEN;
        return MatchVerdict::accept(exact, RuleFired::AbstentionValid);
    }

    let nc = normalize(candidate);
    let ng = normalize(gold);
    if nc.text.is_empty() {
        return MatchVerdict::reject(RejectReason::FormatViolation);
    }

    // Rule 1: exact after normalization. Pure-date answers compare by value so
    // "1876 AD" equals "1876"; BCE-marked equality is rule 2's job.
    if nc.text == ng.text {
        return MatchVerdict::accept(true, RuleFired::ExactNorm);
    }
    if nc.date_only && ng.date_only && !nc.has_bce_marker && !ng.has_bce_marker {
        if let (Some(vc), Some(vg)) = (nc.value, ng.value) {
            if temporal_equal(&vc, &vg, ctx.granularity) == TemporalCmp::Equal {
                return MatchVerdict::accept(true, RuleFired::ExactNorm);
            }
        }
    }

    // Rule 2: BCE/CE era equivalence (accepted, but never exact).
    if nc.date_only && ng.date_only && (nc.has_bce_marker || ng.has_bce_marker) {
        if let (Some(vc), Some(vg)) = (nc.value, ng.value) {
            if temporal_equal(&vc, &vg, ctx.granularity) == TemporalCmp::Equal {
                return MatchVerdict::accept(false, RuleFired::BceEquiv);
            }
        }
    }

    // Rule 3: +/- 1 year tolerance, year granularity only.
    if ctx.granularity == Granularity::Year {
        if let (Some(vc), Some(vg)) = (nc.value, ng.value) {
            if vc.year_distance(&vg) <= 1 {
                return MatchVerdict::accept(false, RuleFired::YearTolerance);
            }
        }
    }

    // Rule 4: partial name. Registered short forms first, then an unambiguous
    // token subsequence of at least 4 characters carrying a content token.
    if registry.connects(&nc.text, &ng.text) {
        return MatchVerdict::accept(false, RuleFired::PartialName);
    }
    if partial_name_matches(&nc, &ng, ctx) {
        return MatchVerdict::accept(false, RuleFired::PartialName);
    }

    // Rejection: pick the most specific reason.
    if let (Some(vc), Some(vg)) = (nc.value, ng.value) {
        match temporal_equal(&vc, &vg, ctx.granularity) {
            TemporalCmp::MissingResolution => {
                return MatchVerdict::reject(RejectReason::Incomplete)
            }
            _ if vc.year_distance(&vg) >= 2 => {
                return MatchVerdict::reject(RejectReason::Contradiction)
            }
            // Same or adjacent year but conflicting month/day at a finer
            // required granularity.
            _ => return MatchVerdict::reject(RejectReason::Contradiction),
        }
    }
    MatchVerdict::reject(RejectReason::WrongEntity)
}

#[derive(Debug, PartialEq, Eq)]
enum TemporalCmp {
    Equal,
    /// Candidate lacks month/day the required granularity demands.
    MissingResolution,
    Different,
}

/// Compare candidate vs gold values at the required granularity. The
/// candidate must supply at least the gold's resolution up to `granularity`.
fn temporal_equal(candidate: &TemporalValue, gold: &TemporalValue, g: Granularity) -> TemporalCmp {
    if candidate.year != gold.year {
        return TemporalCmp::Different;
    }
    if matches!(g, Granularity::Month | Granularity::Day) {
        if let Some(gm) = gold.month {
            match candidate.month {
                None => return TemporalCmp::MissingResolution,
                Some(cm) if cm != gm => return TemporalCmp::Different,
                _ => {}
            }
        }
    }
    if g == Granularity::Day {
        if let Some(gd) = gold.day {
            match candidate.day {
                None => return TemporalCmp::MissingResolution,
                Some(cd) if cd != gd => return TemporalCmp::Different,
                _ => {}
            }
        }
    }
    TemporalCmp::Equal
}

const STOPWORDS: [&str; 8] = ["the", "of", "a", "an", "in", "on", "at", "and"];

fn partial_name_matches(nc: &Normalized, ng: &Normalized, ctx: &MatchContext) -> bool {
    // This tier identifies named entities; a string that is purely a date
    // ("1969", "July 1969") identifies nothing by name.
    if nc.date_only || ng.date_only {
        return false;
    }
    if nc.text.chars().count() < 4 {
        return false;
    }
    let cand_tokens: Vec<&str> = nc.text.split_whitespace().collect();
    // An identification needs at least one content token; "of the" names nothing.
    if !cand_tokens
        .iter()
        .any(|t| t.len() >= 3 && !STOPWORDS.contains(t))
    {
        return false;
    }
    let gold_tokens: Vec<&str> = ng.text.split_whitespace().collect();
    if !is_token_subsequence(&cand_tokens, &gold_tokens) {
        return false;
    }
    // Unambiguous: must not also be a subsequence of a distinct option.
    for option in ctx.options {
        let no = normalize(option);
        if no.text == ng.text {
            continue;
        }
        let opt_tokens: Vec<&str> = no.text.split_whitespace().collect();
        if is_token_subsequence(&cand_tokens, &opt_tokens) {
            return false;
        }
    }
    true
}

/// True when `needle` tokens appear in `haystack` in order (gaps allowed).
fn is_token_subsequence(needle: &[&str], haystack: &[&str]) -> bool {
    if needle.is_empty() {
        return false;
    }
    let mut it = haystack.iter();
    needle.iter().all(|n| it.any(|h| h == n))
}

// ---------------------------------------------------------------------------
// Ordering matching
// ---------------------------------------------------------------------------

/// One slot of a gold ordering: the option label shown in the question and
/// the entity phrase it labels.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OrderingItem {
    pub label: String,
    pub name: String,
}

/// Match a candidate sequence against a gold ordering.
///
/// `items` is the gold ordering, earliest first. Elements may be option
/// labels or entity names; delimiters may be commas, semicolons, newlines,
/// arrows, or the word "then".
pub fn match_ordering(
    candidate: &str,
    items: &[OrderingItem],
    registry: &ShortFormRegistry,
) -> MatchVerdict {
    let trimmed = candidate.trim();
    if trimmed.is_empty() {
        return MatchVerdict::reject(RejectReason::FormatViolation);
    }
    if trimmed == ABSTENTION_TOKEN {
        // Ordering golds are always derivable, so abstention is never valid.
        return MatchVerdict::reject(RejectReason::AbstentionOnKnowable);
    }
    if items.is_empty() {
        return MatchVerdict::reject(RejectReason::FormatViolation);
    }

    let elements = split_sequence(trimmed, items.len());
    if elements.is_empty() {
        return MatchVerdict::reject(RejectReason::FormatViolation);
    }
    if elements.len() != items.len() {
        return MatchVerdict::reject(RejectReason::Incomplete);
    }

    // Resolve each element to an item; names must stay unambiguous among the
    // other items' names.
    let names: Vec<String> = items.iter().map(|it| it.name.clone()).collect();
    let mut all_exact = true;
    let mut resolved: Vec<usize> = Vec::with_capacity(elements.len());
    for elem in &elements {
        let ne = normalize(elem);
        let mut hit: Option<(usize, bool)> = None;
        for (idx, item) in items.iter().enumerate() {
            if ne.text == normalize(&item.label).text {
                hit = Some((idx, true));
                break;
            }
            let ctx = MatchContext {
                gold_is_knowable: true,
                options: &names,
                granularity: Granularity::Year,
            };
            let v = match_answer(elem, &item.name, &ctx, registry);
            if v.consistency {
                hit = Some((idx, v.exact));
                break;
            }
        }
        match hit {
            Some((idx, exact)) => {
                all_exact &= exact;
                resolved.push(idx);
            }
            None => return MatchVerdict::reject(RejectReason::WrongEntity),
        }
    }

    if resolved.iter().enumerate().all(|(k, &idx)| k == idx) {
        MatchVerdict::accept(all_exact, RuleFired::ExactNorm)
    } else {
        // Right elements, wrong order (or duplicated slots): contradiction.
        MatchVerdict::reject(RejectReason::Contradiction)
    }
}

/// Split a candidate ordering into elements.
fn split_sequence(text: &str, expected: usize) -> Vec<String> {
    let mut s = text.to_string();
    for arrow in ["->", "=>", "\u{2192}", "\u{21d2}"] {
        s = s.replace(arrow, ",");
    }
    // " then " as a delimiter word, case-insensitive. Scanned byte-wise: the
    // pattern is ASCII, so `i` always lands on a char boundary.
    let bytes = s.as_bytes();
    let mut rebuilt = String::with_capacity(s.len());
    let mut i = 0;
    while i < bytes.len() {
        if i + 6 <= bytes.len() && bytes[i..i + 6].eq_ignore_ascii_case(b" then ") {
            rebuilt.push(',');
            i += 6;
        } else {
            let ch = s[i..].chars().next().unwrap();
            rebuilt.push(ch);
            i += ch.len_utf8();
        }
    }
    let parts: Vec<String> = rebuilt
        .split([',', ';', '\n'])
        .map(|p| p.trim())
        .filter(|p| !p.is_empty())
        .map(str::to_string)
        .collect();
    if parts.len() == 1 && expected > 1 {
        // "C D A B": whitespace-delimited labels only — every token must be
        // short enough to be a label, and the count must line up.
        let tokens: Vec<&str> = parts[0].split_whitespace().collect();
        if tokens.len() == expected && tokens.iter().all(|t| t.chars().count() <= 2) {
            return tokens.iter().map(|t| t.to_string()).collect();
        }
    }
    parts
}
