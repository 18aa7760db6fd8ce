use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Category name for records that carry none.
pub const UNCATEGORIZED: &str = "all";

/// Lowercase, trim, drop trailing punctuation.
pub fn normalize_answer(answer: &str) -> String {
    answer
        .trim()
        .to_lowercase()
        .trim_end_matches(|c: char| c.is_ascii_punctuation() || c.is_whitespace())
        .to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VqaItem {
    pub prediction_text: String,
    pub gt_answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VqaScore {
    /// Accuracy per category, in [0, 1].
    pub per_category: BTreeMap<String, f64>,
    /// Unweighted mean of the category accuracies: the headline figure.
    pub macro_average: f64,
    /// Pooled over all items.
    pub micro_average: f64,
    pub items: usize,
}

pub fn vqa_accuracy(items: &[VqaItem]) -> VqaScore {
    let mut tally: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for item in items {
        let cat = item.category.clone().unwrap_or_else(|| UNCATEGORIZED.to_string());
        let entry = tally.entry(cat).or_default();
        entry.1 += 1;
        if normalize_answer(&item.prediction_text) == normalize_answer(&item.gt_answer) {
            entry.0 += 1;
        }
    }
    let per_category: BTreeMap<String, f64> = tally
        .iter()
        .map(|(k, &(hit, n))| (k.clone(), hit as f64 / n as f64))
        .collect();
    let hits: usize = tally.values().map(|t| t.0).sum();
    let macro_average = if per_category.is_empty() {
        0.0
    } else {
        per_category.values().sum::<f64>() / per_category.len() as f64
    };
    VqaScore {
        macro_average,
        micro_average: if items.is_empty() { 0.0 } else { hits as f64 / items.len() as f64 },
        per_category,
        items: items.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn item(p: &str, g: &str, c: &str) -> VqaItem {
        VqaItem {
            prediction_text: p.into(),
            gt_answer: g.into(),
            category: Some(c.into()),
        }
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize_answer(" Yes. "), "yes");
        assert_eq!(normalize_answer("No!?"), "no");
        assert_eq!(normalize_answer("0.5"), "0.5");
    }

    #[test]
    fn macro_over_categories() {
        let mut items: Vec<_> = (0..5).map(|i| item(if i < 4 { "yes" } else { "no" }, "yes", "presence")).collect();
        items.extend((0..5).map(|i| item(if i < 3 { "more" } else { "less" }, "more", "comparison")));
        let s = vqa_accuracy(&items);
        assert!((s.macro_average - 0.7).abs() < 1e-12);
        assert!((s.micro_average - 0.7).abs() < 1e-12);
        assert_eq!(s.per_category["presence"], 0.8);
    }

    #[test]
    fn micro_differs_when_unbalanced() {
        let mut items = vec![item("yes", "yes", "a")];
        items.extend((0..3).map(|_| item("no", "yes", "b")));
        let s = vqa_accuracy(&items);
        assert_eq!(s.macro_average, 0.5);
        assert_eq!(s.micro_average, 0.25);
    }

    #[test]
    fn uncategorized_form_all() {
        let s = vqa_accuracy(&[VqaItem {
            prediction_text: "Yes.".into(),
            gt_answer: "yes".into(),
            category: None,
        }]);
        assert_eq!(s.per_category[UNCATEGORIZED], 1.0);
    }
}
