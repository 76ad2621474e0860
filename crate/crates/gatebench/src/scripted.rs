//! Scripted backend: a deterministic counterfeit model with dial-a-rate
//! behavior, used for protocol validation and end-to-end tests.
//!
//! Every behavioral coin flip is a pure function of the seed and the probe's
//! identity, hashed through SHA-256. Atom-level draws are keyed by
//! (atom_id, probe_index) — not by case — which mimics a temperature-0 model
//! answering identical prompts identically and makes per-fact stability
//! well-defined when cases share atoms.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backend::{BackendResponse, ModelBackend, Probe, ProbeKind, QuerySpec};
use crate::error::{Error, Result, TransportError};
use crate::matcher::{normalize, ABSTENTION_TOKEN};
use crate::pool::TemporalValue;
use crate::prompt::VariantId;

/// Per-atom knowledge rate: one scalar for every atom, or a map from atom_id
/// to rate (missing atoms fall back to the `"default"` key, else 1.0).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AtomCorrectProb {
    Scalar(f64),
    PerAtom(BTreeMap<String, f64>),
}

impl AtomCorrectProb {
    fn rate_for(&self, atom_id: &str) -> f64 {
        match self {
            AtomCorrectProb::Scalar(p) => *p,
            AtomCorrectProb::PerAtom(map) => map
                .get(atom_id)
                .or_else(|| map.get("default"))
                .copied()
                .unwrap_or(1.0),
        }
    }

    fn validate(&self) -> Result<()> {
        let check = |p: f64| -> Result<()> {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(Error::Config(format!("probability {p} outside [0, 1]")))
            }
        };
        match self {
            AtomCorrectProb::Scalar(p) => check(*p),
            AtomCorrectProb::PerAtom(map) => map.values().try_for_each(|&p| check(p)),
        }
    }
}

/// Behavior dials for the scripted model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScriptedModelParams {
    /// Probability an atom is "known" (drives atom probes and sub-questions).
    pub atom_correct_prob: AtomCorrectProb,
    /// Per-paraphrase probability that a known atom still answers wrong.
    pub paraphrase_flip_prob: f64,
    /// Probability a main question composes correctly, per depth bin
    /// (stringified bin -> rate).
    pub comp_success_prob: BTreeMap<String, f64>,
    /// Probability any probe abstains instead of answering.
    pub abstain_prob: f64,
    /// Probability any probe emits format-violating output.
    pub format_violation_prob: f64,
    /// Extra main-question failure probability for cases containing an atom
    /// that fails its stability probes. At 1.0, instability guarantees a
    /// wrong main answer, which makes single-gate failure rates structurally
    /// exceed double-gate rates.
    #[serde(default)]
    pub unstable_comp_fail_prob: f64,
    pub seed: u64,
}

impl ScriptedModelParams {
    pub fn validate(&self) -> Result<()> {
        self.atom_correct_prob.validate()?;
        for (name, p) in [
            ("paraphrase_flip_prob", self.paraphrase_flip_prob),
            ("abstain_prob", self.abstain_prob),
            ("format_violation_prob", self.format_violation_prob),
            ("unstable_comp_fail_prob", self.unstable_comp_fail_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} {p} outside [0, 1]")));
            }
        }
        for (bin, p) in &self.comp_success_prob {
            if bin.parse::<u32>().is_err() {
                return Err(Error::Config(format!(
                    "comp_success_prob key `{bin}` is not a depth bin"
                )));
            }
            if !(0.0..=1.0).contains(p) {
                return Err(Error::Config(format!(
                    "comp_success_prob[{bin}] {p} outside [0, 1]"
                )));
            }
        }
        Ok(())
    }

    pub fn from_json_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let params: ScriptedModelParams = serde_json::from_str(&text)
            .map_err(|e| Error::json(path.display().to_string(), e))?;
        params.validate()?;
        Ok(params)
    }

    fn comp_rate(&self, depth_bin: u32) -> f64 {
        self.comp_success_prob
            .get(&depth_bin.to_string())
            .or_else(|| self.comp_success_prob.get("default"))
            .copied()
            .unwrap_or(0.0)
    }
}

/// The deterministic scripted model.
pub struct ScriptedBackend {
    params: ScriptedModelParams,
    model_id: String,
}

impl ScriptedBackend {
    pub fn new(params: ScriptedModelParams) -> Result<Self> {
        Self::with_model_id(params, "scripted")
    }

    pub fn with_model_id(params: ScriptedModelParams, model_id: &str) -> Result<Self> {
        params.validate()?;
        Ok(ScriptedBackend {
            params,
            model_id: model_id.to_string(),
        })
    }

    /// Uniform [0,1) draw keyed by the seed and a part list.
    fn unit(&self, parts: &[&str]) -> f64 {
        let mut hasher = Sha256::new();
        hasher.update(b"scripted");
        hasher.update(self.params.seed.to_le_bytes());
        for part in parts {
            hasher.update([0x1f]);
            hasher.update(part.as_bytes());
        }
        let digest = hasher.finalize();
        let x = u64::from_be_bytes(digest[..8].try_into().expect("8 bytes"));
        // Top 53 bits give a uniform double in [0, 1).
        (x >> 11) as f64 / (1u64 << 53) as f64
    }

    fn knows_atom(&self, atom_id: &str) -> bool {
        self.unit(&["know", atom_id]) < self.params.atom_correct_prob.rate_for(atom_id)
    }

    fn flips_paraphrase(&self, atom_id: &str, probe_index: u8) -> bool {
        self.unit(&["flip", atom_id, &probe_index.to_string()]) < self.params.paraphrase_flip_prob
    }

    /// Whether this atom would fail its 4-probe stability check.
    fn atom_unstable(&self, atom_id: &str) -> bool {
        !self.knows_atom(atom_id)
            || (0..4).any(|idx| self.flips_paraphrase(atom_id, idx))
    }

    fn is_correct(&self, probe: &Probe) -> bool {
        match probe.kind {
            ProbeKind::AtomProbe => {
                let atom_id = probe.atom_id.as_deref().unwrap_or("");
                let idx = probe.probe_index.unwrap_or(0);
                self.knows_atom(atom_id) && !self.flips_paraphrase(atom_id, idx)
            }
            // The sub-question shares the atom's knowledge draw: a model that
            // knows a fact answers any phrasing of it.
            ProbeKind::SubQuestion => {
                let atom_id = probe.atom_id.as_deref().unwrap_or("");
                self.knows_atom(atom_id)
            }
            ProbeKind::Main => {
                let composes = self.unit(&["comp", &probe.case_id])
                    < self.params.comp_rate(probe.depth_bin);
                let has_unstable = probe
                    .case_atom_ids
                    .iter()
                    .any(|atom_id| self.atom_unstable(atom_id));
                let penalized = has_unstable
                    && self.unit(&["penalty", &probe.case_id])
                        < self.params.unstable_comp_fail_prob;
                composes && !penalized
            }
        }
    }

    /// Identity parts shared by every behavioral draw of one probe, chosen so
    /// identical questions get identical behavior regardless of which case
    /// asked them.
    fn draw_identity<'a>(probe: &'a Probe, index_buf: &'a str) -> Vec<&'a str> {
        match probe.kind {
            ProbeKind::AtomProbe => {
                vec!["atom", probe.atom_id.as_deref().unwrap_or(""), index_buf]
            }
            ProbeKind::SubQuestion => vec!["subq", probe.atom_id.as_deref().unwrap_or("")],
            ProbeKind::Main => vec!["main", &probe.case_id],
        }
    }

    fn wrong_answer(&self, probe: &Probe) -> String {
        // Wrong answers key off the same identity as the behavioral draws so
        // an unstable atom tells the same wrong story to every asking case.
        let index_buf = probe.probe_index.unwrap_or(0).to_string();
        let identity = Self::draw_identity(probe, &index_buf);
        let salted = |salt: &str| {
            let mut parts = vec![salt];
            parts.extend(&identity);
            self.unit(&parts)
        };
        // Rank mains: swap the first two labels of the gold ordering.
        if let Some(items) = &probe.ordering {
            if items.len() >= 2 {
                let mut labels: Vec<&str> = items.iter().map(|i| i.label.as_str()).collect();
                labels.swap(0, 1);
                return labels.join(", ");
            }
        }
        // Multiple choice: deterministically pick a non-gold option.
        let wrong_options: Vec<&String> = probe
            .options
            .iter()
            .filter(|o| **o != probe.gold_answer)
            .collect();
        if !wrong_options.is_empty() {
            let pick = salted("wrongpick");
            let idx = ((pick * wrong_options.len() as f64) as usize).min(wrong_options.len() - 1);
            return wrong_options[idx].clone();
        }
        // Numeric golds: perturb by 2-9, far enough to defeat year tolerance.
        let gold_norm = normalize(&probe.gold_answer);
        let delta = 2 + (salted("delta") * 8.0) as i64;
        let negative = salted("deltasign") < 0.5;
        if let Some(value) = gold_norm.value {
            let year = i64::from(value.year) + if negative { -delta } else { delta };
            return TemporalValue::year(year as i32).to_string();
        }
        if let Ok(n) = probe.gold_answer.trim().parse::<i64>() {
            let wrong = if negative && n - delta >= 0 { n - delta } else { n + delta };
            return wrong.to_string();
        }
        "an unrecorded event".to_string()
    }

    fn render(&self, variant: VariantId, answer: &str) -> String {
        if variant.is_xml() {
            format!("<reasoning>Recalled directly.</reasoning>\n<answer>{answer}</answer>")
        } else {
            answer.to_string()
        }
    }

    fn render_malformed(&self, variant: VariantId) -> String {
        if variant.is_xml() {
            // An unterminated reasoning span with no answer element.
            "<reasoning>The recollection trails off without committing to a value".to_string()
        } else {
            String::new()
        }
    }

    /// The full deterministic response for a probe.
    pub fn respond(&self, probe: &Probe, variant: VariantId) -> String {
        let index_buf = probe.probe_index.unwrap_or(0).to_string();
        let identity = Self::draw_identity(probe, &index_buf);

        let mut fmt_parts = vec!["fmt"];
        fmt_parts.extend(&identity);
        if self.unit(&fmt_parts) < self.params.format_violation_prob {
            return self.render_malformed(variant);
        }
        let mut abstain_parts = vec!["abstain"];
        abstain_parts.extend(&identity);
        if self.unit(&abstain_parts) < self.params.abstain_prob {
            return self.render(variant, ABSTENTION_TOKEN);
        }
        if self.is_correct(probe) {
            self.render(variant, &probe.gold_answer)
        } else {
            let wrong = self.wrong_answer(probe);
            self.render(variant, &wrong)
        }
    }
}

impl ModelBackend for ScriptedBackend {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn deterministic(&self) -> bool {
        true
    }

    fn query(
        &self,
        probe: &Probe,
        spec: &QuerySpec,
    ) -> std::result::Result<BackendResponse, TransportError> {
        let raw_text = self.respond(probe, spec.variant);
        let mut meta = BTreeMap::new();
        meta.insert("backend".into(), "scripted".into());
        Ok(BackendResponse {
            raw_text,
            latency_ms: 0,
            transport_meta: meta,
        })
    }
}
