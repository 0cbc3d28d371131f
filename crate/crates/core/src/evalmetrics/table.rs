//! Per-method leaderboards rendered as CSV.

use serde::{Deserialize, Serialize};

use super::seg::SegScores;
use super::text::TextScores;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegResult {
    pub method: String,
    pub study: String,
    pub scores: SegScores,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegRow {
    pub method: String,
    pub dsc: f64,
    pub fnv: f64,
    pub fpv: f64,
    pub studies: usize,
    /// Studies left out of the DSC mean because both masks were empty.
    pub dsc_excluded: usize,
}

/// Groups `items` by method in order of first appearance.
fn by_method<'a, T>(items: &'a [T], method: impl Fn(&T) -> &str) -> Vec<(String, Vec<&'a T>)> {
    let mut groups: Vec<(String, Vec<&T>)> = Vec::new();
    for it in items {
        let m = method(it);
        match groups.iter_mut().find(|(k, _)| k == m) {
            Some((_, v)) => v.push(it),
            None => groups.push((m.to_string(), vec![it])),
        }
    }
    groups
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Per-method means of per-study scores. With `exclude_both_empty`,
/// studies whose DSC is 1 only by the empty-mask convention do not enter
/// the DSC mean.
pub fn score_table(results: &[SegResult], exclude_both_empty: bool) -> Result<Vec<SegRow>> {
    if results.is_empty() {
        return Err(Error::Domain("no scored studies".into()));
    }
    Ok(by_method(results, |r| &r.method)
        .into_iter()
        .map(|(method, rs)| {
            let kept: Vec<f64> = rs
                .iter()
                .filter(|r| !(exclude_both_empty && r.scores.dsc_both_empty))
                .map(|r| r.scores.dsc)
                .collect();
            SegRow {
                dsc_excluded: rs.len() - kept.len(),
                dsc: mean(kept.into_iter()),
                fnv: mean(rs.iter().map(|r| r.scores.fnv)),
                fpv: mean(rs.iter().map(|r| r.scores.fpv)),
                studies: rs.len(),
                method,
            }
        })
        .collect())
}

fn fmt4(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v:.4}")
    }
}

pub fn seg_csv(rows: &[SegRow]) -> String {
    let mut out = String::from("method,dsc,fnv,fpv\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.method, fmt4(r.dsc), fmt4(r.fnv), fmt4(r.fpv)));
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextResult {
    pub method: String,
    pub study: String,
    pub scores: TextScores,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextRow {
    pub method: String,
    pub bleu: [f64; 4],
    pub rouge_l: f64,
    pub studies: usize,
}

pub fn text_table(results: &[TextResult]) -> Result<Vec<TextRow>> {
    if results.is_empty() {
        return Err(Error::Domain("no scored reports".into()));
    }
    Ok(by_method(results, |r| &r.method)
        .into_iter()
        .map(|(method, rs)| TextRow {
            bleu: [0, 1, 2, 3].map(|k| mean(rs.iter().map(|r| r.scores.bleu[k]))),
            rouge_l: mean(rs.iter().map(|r| r.scores.rouge_l)),
            studies: rs.len(),
            method,
        })
        .collect())
}

/// Report-generation table; METEOR and CIDEr are not computed and are left empty.
pub fn text_csv(rows: &[TextRow]) -> String {
    let mut out = String::from("method,bleu_1,bleu_2,bleu_3,bleu_4,meteor,rouge_l,cider\n");
    for r in rows {
        let b = r.bleu.map(fmt4);
        out.push_str(&format!(
            "{},{},{},{},{},,{},\n",
            r.method,
            b[0],
            b[1],
            b[2],
            b[3],
            fmt4(r.rouge_l)
        ));
    }
    out
}
