//! Captioning, grounding and VQA metrics, implemented from their formulas.
//!
//! Caption metrics share one tokenizer: lowercase, every non-alphanumeric
//! character becomes a space, split on whitespace. Absolute values therefore
//! differ from toolkits with other tokenizers.

mod bleu;
mod cider;
mod grounding;
mod meteor;
mod report;
mod rouge;
mod vqa;

pub use bleu::{bleu, bleu_all};
pub use cider::{cider, length_ratio, CIDER_SIGMA};
pub use grounding::{
    grounding_accuracy, iou, phrase_grounding, GroundingItem, GroundingScore, GtSpace, PhraseGroundingItem,
    PhraseGroundingScore,
};
pub use meteor::{meteor_lite, meteor_pair, MeteorAlignment, METEOR_ALPHA, METEOR_BETA, METEOR_GAMMA};
pub use report::{
    evaluate, EvalOptions, EvalRecord, GroundTruth, MetricReport, Prediction, EVAL_TASKS,
};
pub use rouge::{lcs_len, rouge_l, ROUGE_BETA};
pub use vqa::{normalize_answer, vqa_accuracy, VqaItem, VqaScore, UNCATEGORIZED};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("item {index} has no references")]
    NoReferences { index: usize },
    #[error("IDF degenerate: CIDEr needs at least 2 corpus items, got {items}")]
    IdfDegenerate { items: usize },
    #[error("BLEU order must be 1..=4, got {0}")]
    BadOrder(usize),
    #[error("reference {item_id}: {message}")]
    Reference { item_id: String, message: String },
}

pub fn tokenize(text: &str) -> Vec<String> {
    let cleaned: String = text
        .chars()
        .flat_map(char::to_lowercase)
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect();
    cleaned.split_whitespace().map(str::to_string).collect()
}

/// One caption item after tokenization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaptionItem {
    pub candidate: Vec<String>,
    pub references: Vec<Vec<String>>,
}

impl CaptionItem {
    pub fn new(candidate: &str, references: &[impl AsRef<str>]) -> Self {
        Self {
            candidate: tokenize(candidate),
            references: references.iter().map(|r| tokenize(r.as_ref())).collect(),
        }
    }
}

fn check_corpus(corpus: &[CaptionItem]) -> Result<(), MetricError> {
    if corpus.is_empty() {
        return Err(MetricError::EmptyCorpus);
    }
    match corpus.iter().position(|i| i.references.is_empty()) {
        Some(index) => Err(MetricError::NoReferences { index }),
        None => Ok(()),
    }
}

/// N-gram counts of `tokens` for one order.
fn ngram_counts(tokens: &[String], n: usize) -> std::collections::BTreeMap<&[String], usize> {
    let mut counts = std::collections::BTreeMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Mean in input order, so the result does not depend on thread scheduling.
fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}
