//! Caption adjudication by a chat model: two yes/no prompts per item, one
//! asking whether the generated caption covers the ground truth, one whether
//! it could replace it.

mod client;
mod ratelimit;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::derive_seed;

pub use client::{judge_corpus, ChatBackend, HttpBackend, JudgeConfig, TransportError};
pub use ratelimit::TokenBucket;

pub const PROMPT_COVERAGE: &str = "There is one remote sensing image caption1 \u{2018}{ground_truth}\u{2019}, and there is another remote sensing image caption2 \u{2018}{generated}\u{2019}. Does remote sensing image caption2 cover all the objects and visual relations shown in remote sensing image caption1? Only answer yes or no without any explanation.";

pub const PROMPT_SUBSTITUTE: &str = "There is one remote sensing image caption1 \u{2018}{ground_truth}\u{2019}, and there is another remote sensing image caption2 \u{2018}{generated}\u{2019}. Based on remote sensing image caption1 and your understanding, do you think remote sensing image caption2 can be used as another caption? Only answer yes or no without any explanation.";

#[derive(Debug, thiserror::Error)]
pub enum JudgeError {
    #[error("{0} caption is empty")]
    EmptyCaption(&'static str),
    #[error("item {0} has no ground-truth captions")]
    NoGroundTruth(String),
    #[error("prompt template for variant {variant} lacks `{placeholder}`")]
    Template { variant: u8, placeholder: &'static str },
    #[error("aborted: {failed} of {total} requests failed at the transport level")]
    TooManyTransportFailures { failed: usize, total: usize },
    #[error("verdict log: {0}")]
    Log(#[from] std::io::Error),
    #[error("verdict log line {line}: {source}")]
    LogParse { line: usize, source: serde_json::Error },
    #[error("verdict log mixes judge settings: {0}")]
    MixedSettings(String),
    #[error("http client: {0}")]
    Client(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Variant {
    /// Does the generated caption cover every object and relation?
    Coverage = 1,
    /// Could the generated caption serve as another caption?
    Substitute = 2,
}

impl Variant {
    pub const BOTH: [Variant; 2] = [Variant::Coverage, Variant::Substitute];
}

impl From<Variant> for u8 {
    fn from(v: Variant) -> u8 {
        v as u8
    }
}

impl TryFrom<u8> for Variant {
    type Error = String;
    fn try_from(v: u8) -> Result<Self, String> {
        match v {
            1 => Ok(Variant::Coverage),
            2 => Ok(Variant::Substitute),
            _ => Err(format!("prompt variant must be 1 or 2, got {v}")),
        }
    }
}

/// Prompt texts with `{ground_truth}` and `{generated}` placeholders.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplates {
    pub coverage: String,
    pub substitute: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            coverage: PROMPT_COVERAGE.to_string(),
            substitute: PROMPT_SUBSTITUTE.to_string(),
        }
    }
}

impl PromptTemplates {
    pub fn get(&self, variant: Variant) -> &str {
        match variant {
            Variant::Coverage => &self.coverage,
            Variant::Substitute => &self.substitute,
        }
    }

    pub fn validate(&self) -> Result<(), JudgeError> {
        for v in Variant::BOTH {
            for placeholder in ["{ground_truth}", "{generated}"] {
                if !self.get(v).contains(placeholder) {
                    return Err(JudgeError::Template {
                        variant: v as u8,
                        placeholder,
                    });
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgePrompt {
    pub variant: Variant,
    pub ground_truth: String,
    pub generated: String,
    pub rendered: String,
}

pub fn build_prompt(variant: Variant, ground_truth: &str, generated: &str) -> Result<JudgePrompt, JudgeError> {
    build_prompt_with(&PromptTemplates::default(), variant, ground_truth, generated)
}

/// Single-pass substitution: caption text containing a placeholder is not
/// expanded again.
pub fn build_prompt_with(
    templates: &PromptTemplates,
    variant: Variant,
    ground_truth: &str,
    generated: &str,
) -> Result<JudgePrompt, JudgeError> {
    if ground_truth.trim().is_empty() {
        return Err(JudgeError::EmptyCaption("ground-truth"));
    }
    if generated.trim().is_empty() {
        return Err(JudgeError::EmptyCaption("generated"));
    }
    let template = templates.get(variant);
    let mut rendered = String::with_capacity(template.len() + ground_truth.len() + generated.len());
    let mut rest = template;
    while let Some(pos) = rest.find('{') {
        rendered.push_str(&rest[..pos]);
        let tail = &rest[pos..];
        if let Some(t) = tail.strip_prefix("{ground_truth}") {
            rendered.push_str(ground_truth);
            rest = t;
        } else if let Some(t) = tail.strip_prefix("{generated}") {
            rendered.push_str(generated);
            rest = t;
        } else {
            rendered.push('{');
            rest = &tail[1..];
        }
    }
    rendered.push_str(rest);
    Ok(JudgePrompt {
        variant,
        ground_truth: ground_truth.to_string(),
        generated: generated.to_string(),
        rendered,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Yes,
    No,
    Unparseable,
}

/// Leading word, case-insensitive, ignoring surrounding punctuation.
pub fn parse_verdict(response: &str) -> Verdict {
    let first = response
        .trim_start_matches(|c: char| !c.is_alphanumeric())
        .split(|c: char| !c.is_alphanumeric())
        .next()
        .unwrap_or("");
    match first.to_lowercase().as_str() {
        "yes" => Verdict::Yes,
        "no" => Verdict::No,
        _ => Verdict::Unparseable,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeItem {
    pub item_id: String,
    pub ground_truths: Vec<String>,
    pub generated: String,
}

/// Which ground-truth caption an item is judged against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "policy")]
pub enum ReferencePolicy {
    /// One caption chosen at random per item, seeded by item id.
    Seeded { seed: u64 },
    First,
}

impl Default for ReferencePolicy {
    fn default() -> Self {
        ReferencePolicy::Seeded { seed: 0 }
    }
}

pub fn select_reference(item: &JudgeItem, policy: ReferencePolicy) -> Result<&str, JudgeError> {
    if item.ground_truths.is_empty() {
        return Err(JudgeError::NoGroundTruth(item.item_id.clone()));
    }
    let idx = match policy {
        ReferencePolicy::First => 0,
        ReferencePolicy::Seeded { seed } => {
            (derive_seed(seed, &["judge-reference", &item.item_id]) % item.ground_truths.len() as u64) as usize
        }
    };
    Ok(&item.ground_truths[idx])
}

/// One persisted line of the verdict log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub item_id: String,
    pub variant: Variant,
    pub verdict: Verdict,
    pub raw_response: String,
    pub attempts: u32,
    /// The final attempt failed in transport rather than returning text.
    #[serde(default)]
    pub transport_failure: bool,
    pub ground_truth: String,
    pub generated: String,
    pub model: String,
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeSummary {
    pub items: usize,
    pub accuracy_1: f64,
    pub accuracy_2: f64,
    pub unparseable_rate_1: f64,
    pub unparseable_rate_2: f64,
    pub transport_failures: usize,
    pub model: String,
    pub temperature: f64,
}

/// Pure function of the verdicts: unparseable counts as "no" and is also
/// reported on its own. Order of the verdicts does not matter.
pub fn aggregate(verdicts: &[JudgeVerdict]) -> Result<JudgeSummary, JudgeError> {
    let settings: BTreeSet<(String, String)> = verdicts
        .iter()
        .map(|v| (v.model.clone(), v.temperature.to_string()))
        .collect();
    if settings.len() > 1 {
        return Err(JudgeError::MixedSettings(format!("{settings:?}")));
    }
    let items: BTreeSet<&str> = verdicts.iter().map(|v| v.item_id.as_str()).collect();
    let mut yes: BTreeMap<Variant, usize> = BTreeMap::new();
    let mut unparseable: BTreeMap<Variant, usize> = BTreeMap::new();
    for v in verdicts {
        match v.verdict {
            Verdict::Yes => *yes.entry(v.variant).or_default() += 1,
            Verdict::Unparseable => *unparseable.entry(v.variant).or_default() += 1,
            Verdict::No => {}
        }
    }
    let n = items.len();
    let rate = |m: &BTreeMap<Variant, usize>, v| if n == 0 { 0.0 } else { m.get(&v).copied().unwrap_or(0) as f64 / n as f64 };
    let first = verdicts.first();
    Ok(JudgeSummary {
        items: n,
        accuracy_1: rate(&yes, Variant::Coverage),
        accuracy_2: rate(&yes, Variant::Substitute),
        unparseable_rate_1: rate(&unparseable, Variant::Coverage),
        unparseable_rate_2: rate(&unparseable, Variant::Substitute),
        transport_failures: verdicts.iter().filter(|v| v.transport_failure).count(),
        model: first.map(|v| v.model.clone()).unwrap_or_default(),
        temperature: first.map(|v| v.temperature).unwrap_or(0.0),
    })
}

/// Reads a verdict log, skipping a torn final line.
pub fn read_verdict_log(path: &Path) -> Result<Vec<JudgeVerdict>, JudgeError> {
    let text = std::fs::read_to_string(path)?;
    let lines: Vec<&str> = text.lines().collect();
    let mut out = Vec::new();
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(v) => out.push(v),
            Err(_) if i + 1 == lines.len() && !text.ends_with('\n') => break,
            Err(source) => return Err(JudgeError::LogParse { line: i + 1, source }),
        }
    }
    Ok(out)
}

/// Re-aggregates a finished run from its log alone.
pub fn reaggregate(path: &Path) -> Result<JudgeSummary, JudgeError> {
    aggregate(&read_verdict_log(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coverage_prompt_substitutes_both_captions() {
        let p = build_prompt(Variant::Coverage, "a", "b").unwrap();
        assert!(p.rendered.contains("caption1 \u{2018}a\u{2019}"));
        assert!(p.rendered.contains("caption2 \u{2018}b\u{2019}"));
        assert!(p.rendered.contains("cover all the objects and visual relations"));
    }

    #[test]
    fn substitute_prompt_ends_with_constraint() {
        let p = build_prompt(Variant::Substitute, "a", "b").unwrap();
        assert!(p.rendered.ends_with("Only answer yes or no without any explanation."));
        assert!(p.rendered.contains("can be used as another caption"));
    }

    #[test]
    fn captions_are_not_rescanned() {
        let p = build_prompt(Variant::Coverage, "{generated}", "x").unwrap();
        assert!(p.rendered.contains("\u{2018}{generated}\u{2019}"));
    }

    #[test]
    fn empty_caption_rejected() {
        assert!(build_prompt(Variant::Coverage, " ", "b").is_err());
        assert!(build_prompt(Variant::Coverage, "a", "").is_err());
    }

    #[test]
    fn verdict_parsing() {
        assert_eq!(parse_verdict("Yes."), Verdict::Yes);
        assert_eq!(parse_verdict("no"), Verdict::No);
        assert_eq!(parse_verdict("  \"NO\", because"), Verdict::No);
        assert_eq!(parse_verdict("It depends on…"), Verdict::Unparseable);
        assert_eq!(parse_verdict("yesterday"), Verdict::Unparseable);
        assert_eq!(parse_verdict(""), Verdict::Unparseable);
    }

    #[test]
    fn seeded_reference_is_stable() {
        let item = JudgeItem {
            item_id: "7".into(),
            ground_truths: (0..5).map(|i| format!("c{i}")).collect(),
            generated: "g".into(),
        };
        let p = ReferencePolicy::Seeded { seed: 3 };
        assert_eq!(select_reference(&item, p).unwrap(), select_reference(&item, p).unwrap());
        assert_eq!(select_reference(&item, ReferencePolicy::First).unwrap(), "c0");
    }

    #[test]
    fn unparseable_counts_as_no() {
        let v = |id: &str, variant, verdict| JudgeVerdict {
            item_id: id.into(),
            variant,
            verdict,
            raw_response: String::new(),
            attempts: 1,
            transport_failure: false,
            ground_truth: "g".into(),
            generated: "x".into(),
            model: "m".into(),
            temperature: 0.0,
        };
        let s = aggregate(&[
            v("1", Variant::Coverage, Verdict::Yes),
            v("2", Variant::Coverage, Verdict::Unparseable),
            v("1", Variant::Substitute, Verdict::No),
            v("2", Variant::Substitute, Verdict::Yes),
        ])
        .unwrap();
        assert_eq!((s.items, s.accuracy_1, s.accuracy_2, s.unparseable_rate_1), (2, 0.5, 0.5, 0.5));
    }
}
