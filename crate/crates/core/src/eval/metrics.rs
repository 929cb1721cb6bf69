//! Hashtag F1, corpus BLEU and ROUGE-L over token sequences.

use std::collections::{HashMap, HashSet};
use std::hash::Hash;

use crate::{CsmnError, Result};

/// Harmonic mean of precision and recall over tag sets; 0 when nothing overlaps.
pub fn f1_hashtags<T: Eq + Hash>(pred: &[T], gt: &[T]) -> Result<f64> {
    let gt: HashSet<&T> = gt.iter().collect();
    if gt.is_empty() {
        return Err(CsmnError::Metric("F1 needs a non-empty reference tag set".into()));
    }
    let pred: HashSet<&T> = pred.iter().collect();
    let hit = pred.intersection(&gt).count();
    if hit == 0 {
        return Ok(0.0);
    }
    let precision = hit as f64 / pred.len() as f64;
    let recall = hit as f64 / gt.len() as f64;
    Ok(2.0 / (1.0 / precision + 1.0 / recall))
}

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_default() += 1;
        }
    }
    counts
}

/// Clipped n-gram matches and candidate n-gram total for one pair.
fn clipped<T: Eq + Hash>(pred: &[T], reference: &[T], n: usize) -> (usize, usize) {
    let refs = ngram_counts(reference, n);
    let mut matched = 0;
    for (gram, count) in ngram_counts(pred, n) {
        matched += count.min(refs.get(gram).copied().unwrap_or(0));
    }
    (matched, pred.len().saturating_sub(n - 1))
}

fn brevity_penalty(candidate: usize, reference: usize) -> f64 {
    if candidate > reference {
        1.0
    } else if candidate == 0 {
        0.0
    } else {
        (1.0 - reference as f64 / candidate as f64).exp()
    }
}

/// Corpus-level BLEU-`n`: modified n-gram precisions pooled over all pairs,
/// uniform geometric mean over orders 1..=n, one brevity penalty. Unsmoothed,
/// so a zero precision at any order gives 0.
pub fn bleu<T: Eq + Hash>(pairs: &[(Vec<T>, Vec<T>)], n: usize) -> Result<f64> {
    if pairs.is_empty() {
        return Err(CsmnError::Metric("BLEU over an empty corpus".into()));
    }
    if !(1..=4).contains(&n) {
        return Err(CsmnError::Metric(format!("BLEU order {n} outside 1..=4")));
    }
    let mut log_sum = 0.0;
    for k in 1..=n {
        let (mut matched, mut total) = (0, 0);
        for (pred, reference) in pairs {
            let (m, t) = clipped(pred, reference, k);
            matched += m;
            total += t;
        }
        if matched == 0 {
            return Ok(0.0);
        }
        log_sum += (matched as f64 / total as f64).ln();
    }
    let c: usize = pairs.iter().map(|(p, _)| p.len()).sum();
    let r: usize = pairs.iter().map(|(_, r)| r.len()).sum();
    Ok(brevity_penalty(c, r) * (log_sum / n as f64).exp())
}

/// Sentence BLEU with add-one smoothing on orders above 1, for inspecting single outputs.
pub fn sentence_bleu_smoothed<T: Eq + Hash>(pred: &[T], reference: &[T], n: usize) -> f64 {
    let mut log_sum = 0.0;
    for k in 1..=n {
        let (m, t) = clipped(pred, reference, k);
        let p = if k == 1 {
            if m == 0 {
                return 0.0;
            }
            m as f64 / t as f64
        } else {
            (m as f64 + 1.0) / (t as f64 + 1.0)
        };
        log_sum += p.ln();
    }
    brevity_penalty(pred.len(), reference.len()) * (log_sum / n as f64).exp()
}

/// Length of the longest common subsequence.
pub fn lcs_len<T: Eq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub const ROUGE_BETA: f64 = 1.2;

/// LCS F-measure `(1+β²)PR / (R + β²P)` for one pair.
pub fn rouge_l_pair<T: Eq>(pred: &[T], reference: &[T]) -> f64 {
    let lcs = lcs_len(pred, reference);
    if lcs == 0 {
        return 0.0;
    }
    let p = lcs as f64 / pred.len() as f64;
    let r = lcs as f64 / reference.len() as f64;
    let b2 = ROUGE_BETA * ROUGE_BETA;
    (1.0 + b2) * p * r / (r + b2 * p)
}

/// Mean ROUGE-L over pairs.
pub fn rouge_l<T: Eq>(pairs: &[(Vec<T>, Vec<T>)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(CsmnError::Metric("ROUGE-L over an empty corpus".into()));
    }
    Ok(pairs.iter().map(|(p, r)| rouge_l_pair(p, r)).sum::<f64>() / pairs.len() as f64)
}
