//! Report-text overlap metrics on word tokens.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::tokenizer::split_words;

/// Pseudo-count given to an n-gram order without matches.
pub const SMOOTHING_EPSILON: f64 = 1e-4;

/// LCS F-measure weighting of recall over precision.
pub const ROUGE_BETA: f64 = 1.2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BleuScore {
    pub value: f64,
    /// Clipped precision per order, before smoothing.
    pub precisions: Vec<f64>,
    pub brevity_penalty: f64,
    /// Some order had no match and was smoothed.
    pub smoothed: bool,
    pub empty_candidate: bool,
}

fn ngram_counts<S: AsRef<str>>(words: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut out = HashMap::new();
    if words.len() >= n {
        for w in words.windows(n) {
            *out.entry(w.iter().map(AsRef::as_ref).collect()).or_insert(0) += 1;
        }
    }
    out
}

/// BLEU with clipped n-gram precisions of orders `1..=n`, uniform
/// geometric mean and brevity penalty `exp(1 - r/c)` for `c < r`.
///
/// Orders with no clipped match get `SMOOTHING_EPSILON` matches (flagged).
/// Orders where neither side has any n-gram are left out of the mean.
pub fn bleu<S: AsRef<str>>(candidate: &[S], reference: &[S], n: usize) -> Result<BleuScore> {
    if !(1..=4).contains(&n) {
        return Err(Error::Domain(format!("BLEU order {n} outside 1..=4")));
    }
    if candidate.is_empty() {
        return Ok(BleuScore {
            value: 0.0,
            precisions: vec![0.0; n],
            brevity_penalty: 0.0,
            smoothed: false,
            empty_candidate: true,
        });
    }
    let mut log_sum = 0.0;
    let mut orders = 0;
    let mut precisions = Vec::with_capacity(n);
    let mut smoothed = false;
    for k in 1..=n {
        let cand = ngram_counts(candidate, k);
        let refs = ngram_counts(reference, k);
        let total: usize = cand.values().sum();
        if total == 0 && refs.is_empty() {
            precisions.push(1.0);
            continue;
        }
        let clipped: usize = cand.iter().map(|(g, &c)| c.min(refs.get(g).copied().unwrap_or(0))).sum();
        let p = if total == 0 { 0.0 } else { clipped as f64 / total as f64 };
        precisions.push(p);
        let p_eff = if clipped == 0 {
            smoothed = true;
            SMOOTHING_EPSILON / total.max(1) as f64
        } else {
            p
        };
        log_sum += p_eff.ln();
        orders += 1;
    }
    let (c, r) = (candidate.len() as f64, reference.len() as f64);
    let brevity_penalty = if c < r { (1.0 - r / c).exp() } else { 1.0 };
    let mean = if orders == 0 { 1.0 } else { (log_sum / orders as f64).exp() };
    Ok(BleuScore {
        value: (brevity_penalty * mean).clamp(0.0, 1.0),
        precisions,
        brevity_penalty,
        smoothed,
        empty_candidate: false,
    })
}

pub fn bleu_text(candidate: &str, reference: &str, n: usize) -> Result<BleuScore> {
    bleu(&split_words(candidate), &split_words(reference), n)
}

pub fn lcs_len<S: AsRef<str>>(a: &[S], b: &[S]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x.as_ref() == y.as_ref() {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L F-measure `(1 + b^2) P R / (R + b^2 P)` with `b = ROUGE_BETA`.
/// Two empty sequences score 1.
pub fn rouge_l<S: AsRef<str>>(candidate: &[S], reference: &[S]) -> f64 {
    if candidate.is_empty() && reference.is_empty() {
        return 1.0;
    }
    let l = lcs_len(candidate, reference);
    if l == 0 {
        return 0.0;
    }
    let p = l as f64 / candidate.len() as f64;
    let r = l as f64 / reference.len() as f64;
    let b2 = ROUGE_BETA * ROUGE_BETA;
    (1.0 + b2) * p * r / (r + b2 * p)
}

pub fn rouge_l_text(candidate: &str, reference: &str) -> f64 {
    rouge_l(&split_words(candidate), &split_words(reference))
}

/// BLEU-1..4 and ROUGE-L of one candidate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextScores {
    pub bleu: [f64; 4],
    pub rouge_l: f64,
    pub smoothed: bool,
    pub empty_candidate: bool,
}

pub fn text_scores<S: AsRef<str>>(candidate: &[S], reference: &[S]) -> Result<TextScores> {
    let mut bleu_values = [0.0; 4];
    let mut smoothed = false;
    let mut empty = false;
    for n in 1..=4 {
        let b = bleu(candidate, reference, n)?;
        bleu_values[n - 1] = b.value;
        smoothed |= b.smoothed;
        empty |= b.empty_candidate;
    }
    Ok(TextScores {
        bleu: bleu_values,
        rouge_l: rouge_l(candidate, reference),
        smoothed,
        empty_candidate: empty,
    })
}
