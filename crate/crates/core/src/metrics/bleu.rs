use rayon::prelude::*;

use super::{check_corpus, ngram_counts, CaptionItem, MetricError};

struct ItemStats {
    clipped: [usize; 4],
    total: [usize; 4],
    cand_len: usize,
    ref_len: usize,
}

fn item_stats(item: &CaptionItem) -> ItemStats {
    let mut clipped = [0; 4];
    let mut total = [0; 4];
    for n in 1..=4 {
        let cand = ngram_counts(&item.candidate, n);
        let refs: Vec<_> = item.references.iter().map(|r| ngram_counts(r, n)).collect();
        for (gram, count) in cand {
            let max_ref = refs.iter().map(|r| r.get(gram).copied().unwrap_or(0)).max().unwrap_or(0);
            clipped[n - 1] += count.min(max_ref);
        }
        total[n - 1] = item.candidate.len().saturating_sub(n - 1);
    }
    let c = item.candidate.len();
    // Closest reference length; ties go to the shorter reference.
    let ref_len = item
        .references
        .iter()
        .map(|r| r.len())
        .min_by_key(|&r| (r.abs_diff(c), r))
        .unwrap_or(0);
    ItemStats {
        clipped,
        total,
        cand_len: c,
        ref_len,
    }
}

/// Corpus BLEU-1..=4 at once. Unsmoothed: a zero precision at any order up
/// to n gives 0.
pub fn bleu_all(corpus: &[CaptionItem]) -> Result<[f64; 4], MetricError> {
    check_corpus(corpus)?;
    let stats: Vec<ItemStats> = corpus.par_iter().map(item_stats).collect();
    let mut clipped = [0usize; 4];
    let mut total = [0usize; 4];
    let (mut c, mut r) = (0usize, 0usize);
    for s in &stats {
        for k in 0..4 {
            clipped[k] += s.clipped[k];
            total[k] += s.total[k];
        }
        c += s.cand_len;
        r += s.ref_len;
    }
    let bp = if c == 0 {
        0.0
    } else if c > r {
        1.0
    } else {
        (1.0 - r as f64 / c as f64).exp()
    };
    let mut out = [0.0; 4];
    // Geometric mean as a root of the product: exact for n = 1.
    let mut product = 1.0;
    for n in 1..=4 {
        let p = if total[n - 1] == 0 { 0.0 } else { clipped[n - 1] as f64 / total[n - 1] as f64 };
        product *= p;
        out[n - 1] = bp * product.powf(1.0 / n as f64);
    }
    Ok(out)
}

pub fn bleu(corpus: &[CaptionItem], n: usize) -> Result<f64, MetricError> {
    if !(1..=4).contains(&n) {
        return Err(MetricError::BadOrder(n));
    }
    Ok(bleu_all(corpus)?[n - 1])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clipped_unigram_hand_case() {
        // "the" occurs once in the reference, so 1 of 4 candidate unigrams
        // survives clipping; c = 4 > r = 2 keeps BP at 1.
        let corpus = [CaptionItem::new("the the the the", &["the cat"])];
        assert_eq!(bleu(&corpus, 1).unwrap(), 0.25);
    }

    #[test]
    fn identical_is_one() {
        let corpus = [CaptionItem::new("many planes are parked near the terminal", &["many planes are parked near the terminal"])];
        for n in 1..=4 {
            assert!((bleu(&corpus, n).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn brevity_penalty_applies_to_short_candidates() {
        let corpus = [CaptionItem::new("a b", &["a b c d"])];
        assert!((bleu(&corpus, 1).unwrap() - (-1.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn closest_reference_tie_prefers_shorter() {
        // c = 3; refs of length 2 and 4 are equally close, r = 2 ⇒ BP = 1.
        let corpus = [CaptionItem::new("a b c", &["a b c d", "a b"])];
        assert_eq!(bleu(&corpus, 1).unwrap(), 1.0);
    }

    #[test]
    fn errors() {
        assert_eq!(bleu(&[], 1), Err(MetricError::EmptyCorpus));
        assert_eq!(bleu(&[CaptionItem::new("a", &["a"])], 5), Err(MetricError::BadOrder(5)));
        let none: [&str; 0] = [];
        assert!(matches!(bleu(&[CaptionItem::new("a", &none)], 1), Err(MetricError::NoReferences { index: 0 })));
    }
}
