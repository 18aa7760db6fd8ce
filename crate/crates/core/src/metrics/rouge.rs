use rayon::prelude::*;

use super::{check_corpus, mean, CaptionItem, MetricError};

pub const ROUGE_BETA: f64 = 1.2;

pub fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn f_lcs(cand: &[String], reference: &[String]) -> f64 {
    let lcs = lcs_len(cand, reference);
    if lcs == 0 {
        return 0.0;
    }
    let p = lcs as f64 / cand.len() as f64;
    let r = lcs as f64 / reference.len() as f64;
    let b2 = ROUGE_BETA * ROUGE_BETA;
    (1.0 + b2) * p * r / (r + b2 * p)
}

/// Mean over items of the best per-reference LCS F-measure.
pub fn rouge_l(corpus: &[CaptionItem]) -> Result<f64, MetricError> {
    check_corpus(corpus)?;
    let scores: Vec<f64> = corpus
        .par_iter()
        .map(|item| {
            item.references
                .iter()
                .map(|r| f_lcs(&item.candidate, r))
                .fold(0.0, f64::max)
        })
        .collect();
    Ok(mean(&scores))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_case() {
        let corpus = [CaptionItem::new("a b c d", &["a c d"])];
        let expected = (2.44 * 0.75) / (1.0 + 1.44 * 0.75);
        assert!((rouge_l(&corpus).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 0.8798).abs() < 1e-4);
    }

    #[test]
    fn identical_and_disjoint() {
        assert_eq!(rouge_l(&[CaptionItem::new("x y z", &["x y z"])]).unwrap(), 1.0);
        assert_eq!(rouge_l(&[CaptionItem::new("x y z", &["p q"])]).unwrap(), 0.0);
    }
}
