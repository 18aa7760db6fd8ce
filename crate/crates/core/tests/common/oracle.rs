//! Slow, literal evaluations of the captioning metric formulas. Nothing here
//! shares code with the library: n-grams live in plain vectors, LCS is found
//! by subset enumeration and METEOR by trying every alignment.

pub type Item = (Vec<String>, Vec<Vec<String>>);

fn ngrams(t: &[String], n: usize) -> Vec<Vec<String>> {
    if t.len() < n {
        return Vec::new();
    }
    (0..=t.len() - n).map(|i| t[i..i + n].to_vec()).collect()
}

fn occurrences(list: &[Vec<String>], g: &[String]) -> usize {
    list.iter().filter(|x| x.as_slice() == g).count()
}

fn distinct(list: &[Vec<String>]) -> Vec<Vec<String>> {
    let mut out: Vec<Vec<String>> = Vec::new();
    for g in list {
        if !out.contains(g) {
            out.push(g.clone());
        }
    }
    out
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// BP · exp(Σ_{k≤n} (1/n) log p_k), corpus-level, unsmoothed.
pub fn bleu(items: &[Item], n: usize) -> f64 {
    let mut log_sum = 0.0;
    for k in 1..=n {
        let (mut clipped, mut total) = (0usize, 0usize);
        for (cand, refs) in items {
            let cg = ngrams(cand, k);
            total += cg.len();
            for g in distinct(&cg) {
                let max_ref = refs.iter().map(|r| occurrences(&ngrams(r, k), &g)).max().unwrap_or(0);
                clipped += occurrences(&cg, &g).min(max_ref);
            }
        }
        if clipped == 0 {
            return 0.0;
        }
        log_sum += (clipped as f64 / total as f64).ln() / n as f64;
    }
    let c: usize = items.iter().map(|(cand, _)| cand.len()).sum();
    let mut r = 0usize;
    for (cand, refs) in items {
        let mut best = refs[0].len();
        for rf in refs {
            let (d, bd) = (rf.len().abs_diff(cand.len()), best.abs_diff(cand.len()));
            if d < bd || (d == bd && rf.len() < best) {
                best = rf.len();
            }
        }
        r += best;
    }
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    bp * log_sum.exp()
}

fn is_subsequence(sub: &[&String], of: &[String]) -> bool {
    let mut it = of.iter();
    sub.iter().all(|s| it.any(|x| x == *s))
}

/// Longest common subsequence by trying every subset of `a`.
pub fn lcs(a: &[String], b: &[String]) -> usize {
    assert!(a.len() <= 16, "oracle LCS is exponential");
    let mut best = 0;
    for mask in 0u32..(1 << a.len()) {
        let size = mask.count_ones() as usize;
        if size <= best {
            continue;
        }
        let sub: Vec<&String> = (0..a.len()).filter(|i| mask & (1 << i) != 0).map(|i| &a[i]).collect();
        if is_subsequence(&sub, b) {
            best = size;
        }
    }
    best
}

pub fn rouge_l(items: &[Item]) -> f64 {
    let beta2 = 1.2f64 * 1.2;
    let per_item: Vec<f64> = items
        .iter()
        .map(|(cand, refs)| {
            refs.iter()
                .map(|r| {
                    let l = lcs(cand, r) as f64;
                    if l == 0.0 {
                        return 0.0;
                    }
                    let (p, rc) = (l / cand.len() as f64, l / r.len() as f64);
                    (1.0 + beta2) * p * rc / (rc + beta2 * p)
                })
                .fold(0.0, f64::max)
        })
        .collect();
    mean(&per_item)
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct Key {
    exact: usize,
    stem: usize,
    /// Negated chunk count, so that larger keys are better throughout.
    neg_chunks: isize,
}

fn chunks(links: &[Option<usize>]) -> usize {
    let mut count = 0;
    for i in 0..links.len() {
        if let Some(r) = links[i] {
            let continues = i > 0 && links[i - 1].is_some_and(|p| p + 1 == r);
            if !continues {
                count += 1;
            }
        }
    }
    count
}

#[allow(clippy::too_many_arguments)]
fn search(
    i: usize,
    cand: &[String],
    reference: &[String],
    cs: &[String],
    rs: &[String],
    used: &mut Vec<bool>,
    links: &mut Vec<Option<usize>>,
    counts: (usize, usize),
    best: &mut Option<Key>,
) {
    if let Some(b) = best {
        // Even matching every remaining word exactly cannot catch up.
        if counts.0 + (cand.len() - i) < b.exact {
            return;
        }
    }
    if i == cand.len() {
        let key = Key {
            exact: counts.0,
            stem: counts.1,
            neg_chunks: -(chunks(links) as isize),
        };
        if best.is_none_or(|b| key > b) {
            *best = Some(key);
        }
        return;
    }
    links.push(None);
    search(i + 1, cand, reference, cs, rs, used, links, counts, best);
    links.pop();
    for j in 0..reference.len() {
        if used[j] {
            continue;
        }
        let next = if cand[i] == reference[j] {
            (counts.0 + 1, counts.1)
        } else if cs[i] == rs[j] {
            (counts.0, counts.1 + 1)
        } else {
            continue;
        };
        used[j] = true;
        links.push(Some(j));
        search(i + 1, cand, reference, cs, rs, used, links, next, best);
        links.pop();
        used[j] = false;
    }
}

/// Exact + stem METEOR of one pair: the alignment with the most exact
/// matches, then most stem matches, then fewest chunks.
pub fn meteor_pair(cand: &[String], reference: &[String], stem: &dyn Fn(&str) -> String) -> f64 {
    let cs: Vec<String> = cand.iter().map(|w| stem(w)).collect();
    let rs: Vec<String> = reference.iter().map(|w| stem(w)).collect();
    let mut best = None;
    search(0, cand, reference, &cs, &rs, &mut vec![false; reference.len()], &mut Vec::new(), (0, 0), &mut best);
    let key = best.expect("the empty alignment always exists");
    let m = (key.exact + key.stem) as f64;
    if m == 0.0 {
        return 0.0;
    }
    let ch = -key.neg_chunks as f64;
    let (p, r) = (m / cand.len() as f64, m / reference.len() as f64);
    let (alpha, beta, gamma) = (0.9, 3.0, 0.5);
    let fmean = p * r / (alpha * p + (1.0 - alpha) * r);
    fmean * (1.0 - gamma * (ch / m).powf(beta))
}

pub fn meteor(items: &[Item], stem: &dyn Fn(&str) -> String) -> f64 {
    let per_item: Vec<f64> = items
        .iter()
        .map(|(cand, refs)| refs.iter().map(|r| meteor_pair(cand, r, stem)).fold(0.0, f64::max))
        .collect();
    mean(&per_item)
}

/// CIDEr-D: n = 1..4, IDF over per-item reference n-gram sets, clipped
/// TF-IDF cosine, gaussian length penalty σ = 6, ×10.
pub fn cider(items: &[Item]) -> f64 {
    let n_items = items.len() as f64;
    let mut df: Vec<(Vec<String>, usize)> = Vec::new();
    for (_, refs) in items {
        let mut seen: Vec<Vec<String>> = Vec::new();
        for r in refs {
            for n in 1..=4 {
                for g in ngrams(r, n) {
                    if !seen.contains(&g) {
                        seen.push(g);
                    }
                }
            }
        }
        for g in seen {
            match df.iter_mut().find(|(x, _)| *x == g) {
                Some(e) => e.1 += 1,
                None => df.push((g, 1)),
            }
        }
    }
    let weight_vec = |t: &[String], n: usize| -> Vec<(Vec<String>, f64)> {
        let grams = ngrams(t, n);
        distinct(&grams)
            .into_iter()
            .map(|g| {
                let tf = occurrences(&grams, &g) as f64;
                let d = df.iter().find(|(x, _)| *x == g).map_or(0, |e| e.1).max(1) as f64;
                let w = tf * (n_items.ln() - d.ln());
                (g, w)
            })
            .collect()
    };
    let norm = |v: &[(Vec<String>, f64)]| v.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
    let per_item: Vec<f64> = items
        .iter()
        .map(|(cand, refs)| {
            let sims: Vec<f64> = refs
                .iter()
                .map(|r| {
                    let delta = cand.len() as f64 - r.len() as f64;
                    let gauss = (-delta * delta / (2.0 * 36.0)).exp();
                    let mut total = 0.0;
                    for n in 1..=4 {
                        let (h, rv) = (weight_vec(cand, n), weight_vec(r, n));
                        let mut val = 0.0;
                        for (g, wh) in &h {
                            if let Some((_, wr)) = rv.iter().find(|(x, _)| x == g) {
                                val += wh.min(*wr) * wr;
                            }
                        }
                        let (nh, nr) = (norm(&h), norm(&rv));
                        if nh != 0.0 && nr != 0.0 {
                            val /= nh * nr;
                        }
                        total += val * gauss;
                    }
                    total / 4.0
                })
                .collect();
            10.0 * mean(&sims)
        })
        .collect();
    mean(&per_item)
}
