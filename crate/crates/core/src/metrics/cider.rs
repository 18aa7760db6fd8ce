use std::collections::{BTreeMap, HashMap, HashSet};

use rayon::prelude::*;

use super::{check_corpus, mean, ngram_counts, CaptionItem, MetricError};

pub const CIDER_SIGMA: f64 = 6.0;

// Ordered, so sums do not depend on hash seeds.
type Vector<'a> = BTreeMap<&'a [String], f64>;

/// TF-IDF vectors for orders 1..=4, their norms, and the token length.
struct Doc<'a> {
    vecs: [Vector<'a>; 4],
    norms: [f64; 4],
    len: usize,
}

fn doc<'a>(tokens: &'a [String], df: &HashMap<&[String], usize>, log_n: f64) -> Doc<'a> {
    let mut vecs: [Vector<'a>; 4] = Default::default();
    let mut norms = [0.0; 4];
    for n in 1..=4 {
        for (gram, tf) in ngram_counts(tokens, n) {
            let d = df.get(gram).copied().unwrap_or(0).max(1) as f64;
            let w = tf as f64 * (log_n - d.ln());
            norms[n - 1] += w * w;
            vecs[n - 1].insert(gram, w);
        }
        norms[n - 1] = norms[n - 1].sqrt();
    }
    Doc {
        vecs,
        norms,
        len: tokens.len(),
    }
}

fn similarity(hyp: &Doc<'_>, reference: &Doc<'_>) -> f64 {
    let delta = hyp.len as f64 - reference.len as f64;
    let gauss = (-(delta * delta) / (2.0 * CIDER_SIGMA * CIDER_SIGMA)).exp();
    let mut total = 0.0;
    for n in 0..4 {
        let mut val = 0.0;
        for (gram, &h) in &hyp.vecs[n] {
            if let Some(&r) = reference.vecs[n].get(gram) {
                val += h.min(r) * r;
            }
        }
        if hyp.norms[n] != 0.0 && reference.norms[n] != 0.0 {
            val /= hyp.norms[n] * reference.norms[n];
        }
        total += val * gauss;
    }
    total / 4.0
}

/// Corpus CIDEr-D: n = 1..=4, clipped TF-IDF cosine with a gaussian length
/// penalty (σ = 6), averaged over references and scaled by 10. Document
/// frequencies come from the references of the evaluated corpus.
pub fn cider(corpus: &[CaptionItem]) -> Result<f64, MetricError> {
    check_corpus(corpus)?;
    if corpus.len() < 2 {
        return Err(MetricError::IdfDegenerate { items: corpus.len() });
    }
    // Each item counts once per n-gram, however many references contain it.
    let mut df: HashMap<&[String], usize> = HashMap::new();
    for item in corpus {
        let mut seen: HashSet<&[String]> = HashSet::new();
        for r in &item.references {
            for n in 1..=4 {
                if r.len() >= n {
                    seen.extend(r.windows(n));
                }
            }
        }
        for g in seen {
            *df.entry(g).or_insert(0) += 1;
        }
    }
    let log_n = (corpus.len() as f64).ln();
    let scores: Vec<f64> = corpus
        .par_iter()
        .map(|item| {
            let hyp = doc(&item.candidate, &df, log_n);
            let sims: Vec<f64> = item
                .references
                .iter()
                .map(|r| similarity(&hyp, &doc(r, &df, log_n)))
                .collect();
            mean(&sims) * 10.0
        })
        .collect();
    Ok(mean(&scores))
}

/// Mean candidate length over mean reference length, in tokens. Long
/// generations are penalized hard by CIDEr, so it is reported alongside.
pub fn length_ratio(corpus: &[CaptionItem]) -> Result<f64, MetricError> {
    check_corpus(corpus)?;
    let cand: usize = corpus.iter().map(|i| i.candidate.len()).sum();
    let refs: f64 = corpus
        .iter()
        .map(|i| i.references.iter().map(Vec::len).sum::<usize>() as f64 / i.references.len() as f64)
        .sum();
    Ok(if refs == 0.0 { 0.0 } else { cand as f64 / refs })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_item_is_degenerate() {
        let err = cider(&[CaptionItem::new("a b", &["a b"])]).unwrap_err();
        assert!(err.to_string().contains("IDF degenerate"));
    }

    #[test]
    fn zero_overlap_is_zero() {
        let corpus = [
            CaptionItem::new("p q r", &["a b c"]),
            CaptionItem::new("s t", &["d e f"]),
        ];
        assert_eq!(cider(&corpus).unwrap(), 0.0);
    }

    #[test]
    fn per_item_scores_bounded() {
        let corpus = [
            CaptionItem::new("many cars on the road", &["many cars on the road", "cars parked on a road"]),
            CaptionItem::new("a green field", &["a large green field"]),
            CaptionItem::new("white boats", &["boats in a harbor"]),
        ];
        let s = cider(&corpus).unwrap();
        assert!(s > 0.0 && s <= 10.0);
    }

    #[test]
    fn ratio() {
        let corpus = [CaptionItem::new("a b c d", &["a b", "a b c d e f"]), CaptionItem::new("x y", &["x y"])];
        assert!((length_ratio(&corpus).unwrap() - 6.0 / 6.0).abs() < 1e-12);
    }
}
