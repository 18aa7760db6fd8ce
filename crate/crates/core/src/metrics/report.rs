use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::{
    bleu_all, cider, grounding_accuracy, length_ratio, meteor_lite, phrase_grounding, rouge_l, vqa_accuracy,
    CaptionItem, GroundingItem, GtSpace, MetricError, PhraseGroundingItem, VqaItem,
};
use crate::domain::{PixelBox, TaskKind, ValidationError};

/// Tasks `evaluate` knows how to score.
pub const EVAL_TASKS: [TaskKind; 7] = TaskKind::ALL;

/// One line of a prediction file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub item_id: String,
    pub prediction_text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GroundTruth {
    Captions {
        references: Vec<String>,
    },
    Answer {
        gt_answer: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        category: Option<String>,
    },
    Boxes {
        gt_boxes: Vec<PixelBox>,
        width: u32,
        height: u32,
    },
    Box {
        gt_box: PixelBox,
        width: u32,
        height: u32,
    },
}

/// One line of a reference file. A prediction may be inlined; a separate
/// prediction file takes precedence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub item_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prediction_text: Option<String>,
    #[serde(flatten)]
    pub gt: GroundTruth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub task: TaskKind,
    pub dataset_id: String,
    /// Headline scores in percent (CIDEr likewise ×100), in table order.
    pub scores: BTreeMap<String, f64>,
    pub columns: Vec<String>,
    /// Secondary figures: length ratio, parse failures, micro average.
    pub details: BTreeMap<String, f64>,
    pub items: usize,
    pub missing_predictions: usize,
}

impl MetricReport {
    pub fn check_ranges(&self) -> Result<(), ValidationError> {
        for (k, v) in &self.scores {
            let ok = if k == "CIDEr" { *v >= 0.0 } else { (0.0..=100.0 + 1e-9).contains(v) };
            if !ok || !v.is_finite() {
                return Err(ValidationError::new(format!("scores.{k}"), format!("{v} out of range")));
            }
        }
        Ok(())
    }

    /// Text table: one header row of metric names, one row of scores.
    pub fn render_table(&self) -> String {
        let label = format!("{} ({})", self.dataset_id, self.task);
        let widths: Vec<usize> = self.columns.iter().map(|c| c.len().max(7)).collect();
        let lw = label.len().max(7);
        let mut header = format!("{:<lw$}", "Dataset");
        let mut row = format!("{label:<lw$}");
        for (c, w) in self.columns.iter().zip(&widths) {
            header.push_str(&format!("  {c:>w$}"));
            row.push_str(&format!("  {:>w$.2}", self.scores[c]));
        }
        let mut out = format!("{header}\n{row}\n");
        for (k, v) in &self.details {
            out.push_str(&format!("  {k}: {v:.4}\n"));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub threshold: f64,
    pub gt_space: GtSpace,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            gt_space: GtSpace::Grid,
        }
    }
}

fn wrong_gt(item_id: &str, want: &str) -> MetricError {
    MetricError::Reference {
        item_id: item_id.to_string(),
        message: format!("expected {want} ground truth"),
    }
}

/// Scores `records` for `task`. Predictions are joined on `item_id`; items
/// without one are scored against an empty prediction and counted.
pub fn evaluate(
    task: TaskKind,
    dataset_id: &str,
    records: &[EvalRecord],
    predictions: &[Prediction],
    options: EvalOptions,
) -> Result<MetricReport, MetricError> {
    if records.is_empty() {
        return Err(MetricError::EmptyCorpus);
    }
    let by_id: HashMap<&str, &str> = predictions
        .iter()
        .map(|p| (p.item_id.as_str(), p.prediction_text.as_str()))
        .collect();
    let mut missing = 0;
    let preds: Vec<String> = records
        .iter()
        .map(|r| match by_id.get(r.item_id.as_str()).copied().or(r.prediction_text.as_deref()) {
            Some(p) => p.to_string(),
            None => {
                missing += 1;
                String::new()
            }
        })
        .collect();

    let mut scores = BTreeMap::new();
    let mut details = BTreeMap::new();
    let mut columns: Vec<String> = Vec::new();
    let mut put = |scores: &mut BTreeMap<String, f64>, name: &str, v: f64| {
        columns.push(name.to_string());
        scores.insert(name.to_string(), v * 100.0);
    };

    match task {
        TaskKind::ImageCaption | TaskKind::VideoCaption | TaskKind::ReferringExpressionGeneration => {
            let corpus = records
                .iter()
                .zip(&preds)
                .map(|(r, p)| match &r.gt {
                    GroundTruth::Captions { references } => Ok(CaptionItem::new(p, references)),
                    _ => Err(wrong_gt(&r.item_id, "caption")),
                })
                .collect::<Result<Vec<_>, _>>()?;
            let b = bleu_all(&corpus)?;
            for (n, v) in b.iter().enumerate() {
                put(&mut scores, &format!("BLEU-{}", n + 1), *v);
            }
            put(&mut scores, "METEOR", meteor_lite(&corpus)?);
            put(&mut scores, "ROUGE_L", rouge_l(&corpus)?);
            put(&mut scores, "CIDEr", cider(&corpus)?);
            details.insert("length_ratio".into(), length_ratio(&corpus)?);
        }
        TaskKind::VisualGrounding => {
            let items = records
                .iter()
                .zip(&preds)
                .map(|(r, p)| match &r.gt {
                    GroundTruth::Box { gt_box, width, height } => Ok(GroundingItem {
                        prediction_text: p.clone(),
                        gt_box: *gt_box,
                        width: *width,
                        height: *height,
                    }),
                    _ => Err(wrong_gt(&r.item_id, "single box")),
                })
                .collect::<Result<Vec<_>, _>>()?;
            let s = grounding_accuracy(&items, options.threshold, options.gt_space);
            put(&mut scores, &format!("Acc@{}", options.threshold), s.accuracy);
            details.insert("parse_failure_rate".into(), s.parse_failure_rate);
        }
        TaskKind::PhraseGrounding => {
            let items = records
                .iter()
                .zip(&preds)
                .map(|(r, p)| match &r.gt {
                    GroundTruth::Boxes { gt_boxes, width, height } => Ok(PhraseGroundingItem {
                        prediction_text: p.clone(),
                        gt_boxes: gt_boxes.clone(),
                        width: *width,
                        height: *height,
                    }),
                    _ => Err(wrong_gt(&r.item_id, "box list")),
                })
                .collect::<Result<Vec<_>, _>>()?;
            let s = phrase_grounding(&items, options.threshold, options.gt_space);
            put(&mut scores, "Precision", s.precision);
            put(&mut scores, "Recall", s.recall);
            put(&mut scores, "F1", s.f1);
        }
        TaskKind::Vqa | TaskKind::SceneClassification => {
            let items = records
                .iter()
                .zip(&preds)
                .map(|(r, p)| match &r.gt {
                    GroundTruth::Answer { gt_answer, category } => Ok(VqaItem {
                        prediction_text: p.clone(),
                        gt_answer: gt_answer.clone(),
                        category: category.clone(),
                    }),
                    _ => Err(wrong_gt(&r.item_id, "answer")),
                })
                .collect::<Result<Vec<_>, _>>()?;
            let s = vqa_accuracy(&items);
            for (cat, acc) in &s.per_category {
                put(&mut scores, cat, *acc);
            }
            put(&mut scores, "Average Acc", s.macro_average);
            details.insert("micro_average".into(), s.micro_average * 100.0);
        }
    }
    Ok(MetricReport {
        task,
        dataset_id: dataset_id.to_string(),
        scores,
        columns,
        details,
        items: records.len(),
        missing_predictions: missing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jsonl::parse_jsonl;

    #[test]
    fn reference_lines_pick_their_shape() {
        let text = r#"{"item_id":"1","references":["a b","c d"]}
{"item_id":"2","gt_answer":"yes","category":"presence"}
{"item_id":"3","gt_box":{"x1":0,"y1":0,"x2":10,"y2":10},"width":100,"height":100}
{"item_id":"4","gt_boxes":[{"x1":0,"y1":0,"x2":10,"y2":10}],"width":100,"height":100,"prediction_text":"{<0><0><10><10>}"}
"#;
        let recs: Vec<EvalRecord> = parse_jsonl(text).unwrap();
        assert!(matches!(recs[0].gt, GroundTruth::Captions { .. }));
        assert!(matches!(recs[1].gt, GroundTruth::Answer { .. }));
        assert!(matches!(recs[2].gt, GroundTruth::Box { .. }));
        assert!(matches!(recs[3].gt, GroundTruth::Boxes { .. }));
        assert!(recs[3].prediction_text.is_some());
    }

    #[test]
    fn caption_report_columns_and_missing() {
        let recs = vec![
            EvalRecord { item_id: "a".into(), prediction_text: None, gt: GroundTruth::Captions { references: vec!["many green trees".into()] } },
            EvalRecord { item_id: "b".into(), prediction_text: None, gt: GroundTruth::Captions { references: vec!["a river".into()] } },
        ];
        let preds = vec![Prediction { item_id: "a".into(), prediction_text: "many green trees".into() }];
        let r = evaluate(TaskKind::ImageCaption, "UCM", &recs, &preds, EvalOptions::default()).unwrap();
        assert_eq!(r.columns, ["BLEU-1", "BLEU-2", "BLEU-3", "BLEU-4", "METEOR", "ROUGE_L", "CIDEr"]);
        assert_eq!(r.missing_predictions, 1);
        r.check_ranges().unwrap();
        assert!(r.render_table().contains("ROUGE_L"));
    }

    #[test]
    fn vqa_report_has_average_last() {
        let rec = |id: &str, a: &str, c: &str| EvalRecord {
            item_id: id.into(),
            prediction_text: Some(a.into()),
            gt: GroundTruth::Answer { gt_answer: "yes".into(), category: Some(c.into()) },
        };
        let recs = vec![rec("1", "yes", "presence"), rec("2", "no", "comparison")];
        let r = evaluate(TaskKind::Vqa, "RSVQA-LR", &recs, &[], EvalOptions::default()).unwrap();
        assert_eq!(r.columns, ["comparison", "presence", "Average Acc"]);
        assert_eq!(r.scores["Average Acc"], 50.0);
    }

    #[test]
    fn wrong_shape_is_reported() {
        let recs = vec![EvalRecord { item_id: "x".into(), prediction_text: None, gt: GroundTruth::Answer { gt_answer: "y".into(), category: None } }];
        let err = evaluate(TaskKind::VisualGrounding, "d", &recs, &[], EvalOptions::default()).unwrap_err();
        assert!(err.to_string().contains("x"));
    }
}
