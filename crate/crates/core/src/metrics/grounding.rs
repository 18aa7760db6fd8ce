use serde::{Deserialize, Serialize};

use crate::domain::PixelBox;
use crate::geotext::{self, dequantize_box, normalize_box, quantize_box, UnitBox};

/// Intersection over union in the unit square. Two identical zero-area
/// boxes count as a perfect match.
pub fn iou(a: &UnitBox, b: &UnitBox) -> f64 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return if a == b { 1.0 } else { 0.0 };
    }
    (inter / union).clamp(0.0, 1.0)
}

/// What the predicted box is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GtSpace {
    /// The ground truth as the model could express it: quantized to the
    /// 0–100 grid, then mapped back to the unit square.
    #[default]
    Grid,
    /// The exact normalized ground truth.
    Continuous,
}

fn gt_unit(gt: &PixelBox, width: u32, height: u32, space: GtSpace) -> UnitBox {
    match (space, quantize_box(gt, width, height)) {
        (GtSpace::Grid, Ok(q)) => dequantize_box(&q),
        _ => normalize_box(gt, width, height),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingItem {
    pub prediction_text: String,
    pub gt_box: PixelBox,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundingScore {
    pub accuracy: f64,
    pub parse_failure_rate: f64,
    pub items: usize,
    pub correct: usize,
    pub parse_failures: usize,
}

/// Acc@threshold on the first parsed box of each prediction. Predictions
/// without a parseable box count as failures.
pub fn grounding_accuracy(items: &[GroundingItem], threshold: f64, space: GtSpace) -> GroundingScore {
    let mut correct = 0;
    let mut failures = 0;
    for item in items {
        match geotext::parse_boxes(&item.prediction_text).boxes.first() {
            None => failures += 1,
            Some(q) => {
                let gt = gt_unit(&item.gt_box, item.width, item.height, space);
                if iou(&dequantize_box(q), &gt) >= threshold {
                    correct += 1;
                }
            }
        }
    }
    let n = items.len();
    let frac = |k: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
    GroundingScore {
        accuracy: frac(correct),
        parse_failure_rate: frac(failures),
        items: n,
        correct,
        parse_failures: failures,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhraseGroundingItem {
    pub prediction_text: String,
    pub gt_boxes: Vec<PixelBox>,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhraseGroundingScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub predicted: usize,
    pub ground_truth: usize,
    pub matched: usize,
}

/// Greedy one-to-one matching by descending IoU, pooled over all items.
pub fn phrase_grounding(items: &[PhraseGroundingItem], threshold: f64, space: GtSpace) -> PhraseGroundingScore {
    let (mut predicted, mut ground_truth, mut matched) = (0, 0, 0);
    for item in items {
        let preds: Vec<UnitBox> = geotext::parse_boxes(&item.prediction_text)
            .boxes
            .iter()
            .map(dequantize_box)
            .collect();
        let gts: Vec<UnitBox> = item
            .gt_boxes
            .iter()
            .map(|b| gt_unit(b, item.width, item.height, space))
            .collect();
        let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
        for (i, p) in preds.iter().enumerate() {
            for (j, g) in gts.iter().enumerate() {
                let v = iou(p, g);
                if v >= threshold {
                    pairs.push((v, i, j));
                }
            }
        }
        pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut used_p = vec![false; preds.len()];
        let mut used_g = vec![false; gts.len()];
        for (_, i, j) in pairs {
            if !used_p[i] && !used_g[j] {
                used_p[i] = true;
                used_g[j] = true;
                matched += 1;
            }
        }
        predicted += preds.len();
        ground_truth += gts.len();
    }
    let precision = if predicted == 0 { 0.0 } else { matched as f64 / predicted as f64 };
    let recall = if ground_truth == 0 { 0.0 } else { matched as f64 / ground_truth as f64 };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    PhraseGroundingScore {
        precision,
        recall,
        f1,
        predicted,
        ground_truth,
        matched,
    }
}
