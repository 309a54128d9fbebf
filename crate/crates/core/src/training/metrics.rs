//! Corpus BLEU with add-one smoothing and a TF-IDF n-gram cosine score.
//!
//! Token sequences are expected with PAD/BOS/EOS already stripped.

use std::collections::{BTreeMap, BTreeSet};

pub type Ngrams<'a> = BTreeMap<&'a [usize], usize>;

pub fn ngrams(tokens: &[usize], n: usize) -> Ngrams<'_> {
    let mut out = BTreeMap::new();
    if n > 0 && tokens.len() >= n {
        for w in tokens.windows(n) {
            *out.entry(w).or_insert(0) += 1;
        }
    }
    out
}

/// BLEU-1..BLEU-4 over a corpus.
///
/// Unigram precision is `matches / candidates`; higher orders use
/// `(matches + 1) / (candidates + 1)`. Matches are clipped by the maximum
/// count in any one reference. The brevity penalty compares the total
/// candidate length with the summed reference lengths closest to each
/// candidate (shorter on ties).
pub fn corpus_bleu(candidates: &[Vec<usize>], references: &[Vec<Vec<usize>>]) -> [f64; 4] {
    assert_eq!(candidates.len(), references.len(), "one reference set per candidate");
    let mut matches = [0usize; 4];
    let mut totals = [0usize; 4];
    let (mut cand_len, mut ref_len) = (0usize, 0usize);
    for (cand, refs) in candidates.iter().zip(references) {
        cand_len += cand.len();
        ref_len += refs
            .iter()
            .map(Vec::len)
            .min_by_key(|&l| (l.abs_diff(cand.len()), l))
            .unwrap_or(0);
        for n in 1..=4 {
            let counts = ngrams(cand, n);
            let mut max_ref: BTreeMap<&[usize], usize> = BTreeMap::new();
            for r in refs {
                for (g, c) in ngrams(r, n) {
                    let e = max_ref.entry(g).or_insert(0);
                    *e = (*e).max(c);
                }
            }
            for (g, c) in &counts {
                matches[n - 1] += (*c).min(max_ref.get(g).copied().unwrap_or(0));
                totals[n - 1] += c;
            }
        }
    }
    if cand_len == 0 || matches[0] == 0 {
        return [0.0; 4];
    }
    let bp = if cand_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    };
    let mut log_p = [0.0; 4];
    log_p[0] = (matches[0] as f64 / totals[0] as f64).ln();
    for n in 1..4 {
        log_p[n] = ((matches[n] + 1) as f64 / (totals[n] + 1) as f64).ln();
    }
    let mut out = [0.0; 4];
    for n in 0..4 {
        let mean = log_p[..=n].iter().sum::<f64>() / (n + 1) as f64;
        out[n] = bp * mean.exp();
    }
    out
}

/// Smoothed BLEU-4 of one candidate against its references.
pub fn sentence_bleu4(candidate: &[usize], references: &[Vec<usize>]) -> f64 {
    corpus_bleu(&[candidate.to_vec()], &[references.to_vec()])[3]
}

/// Document frequencies of n-grams (n = 1..4) over reference sets; each
/// set counts as one document.
#[derive(Clone, Debug, Default)]
pub struct IdfTable {
    docs: usize,
    df: BTreeMap<Vec<usize>, usize>,
}

impl IdfTable {
    pub fn new(reference_sets: &[Vec<Vec<usize>>]) -> Self {
        let mut df = BTreeMap::new();
        for refs in reference_sets {
            let mut seen: BTreeSet<&[usize]> = BTreeSet::new();
            for r in refs {
                for n in 1..=4 {
                    seen.extend(ngrams(r, n).into_keys());
                }
            }
            for g in seen {
                *df.entry(g.to_vec()).or_insert(0) += 1;
            }
        }
        IdfTable {
            docs: reference_sets.len(),
            df,
        }
    }

    /// `ln((1 + N) / (1 + df)) + 1`, positive even for n-grams in every document.
    pub fn idf(&self, gram: &[usize]) -> f64 {
        let df = self.df.get(gram).copied().unwrap_or(0);
        ((1 + self.docs) as f64 / (1 + df) as f64).ln() + 1.0
    }

    fn vector<'a>(&self, tokens: &'a [usize], n: usize) -> BTreeMap<&'a [usize], f64> {
        let counts = ngrams(tokens, n);
        let total: usize = counts.values().sum();
        counts
            .into_iter()
            .map(|(g, c)| (g, c as f64 / total as f64 * self.idf(g)))
            .collect()
    }
}

fn cosine(a: &BTreeMap<&[usize], f64>, b: &BTreeMap<&[usize], f64>) -> f64 {
    let dot: f64 = a.iter().filter_map(|(g, x)| b.get(g).map(|y| x * y)).sum();
    let na = a.values().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.values().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Mean over references of the TF-IDF cosine averaged over the orders
/// n = 1..4 that the reference has. Clamped to `[0, 1]`.
pub fn cider_lite(candidate: &[usize], references: &[Vec<usize>], idf: &IdfTable) -> f64 {
    if candidate.is_empty() || references.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for r in references {
        let mut sum = 0.0;
        let mut orders = 0;
        for n in 1..=4 {
            let rv = idf.vector(r, n);
            if rv.is_empty() {
                continue;
            }
            orders += 1;
            sum += cosine(&idf.vector(candidate, n), &rv);
        }
        if orders > 0 {
            total += sum / orders as f64;
        }
    }
    (total / references.len() as f64).clamp(0.0, 1.0)
}
