//! Covariance, correlation and false-discovery control over organ features.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::features::{exclusion_mask, OrganFeatureMatrix};
use crate::anatomy::ClassId;
use crate::error::{Error, Result};

/// Minimum complete pairs for a correlation test.
pub const MIN_CORRELATION_PAIRS: usize = 3;

fn complete_pairs(x: &[Option<f64>], y: &[Option<f64>]) -> (Vec<f64>, Vec<f64>) {
    x.iter()
        .zip(y)
        .filter_map(|(a, b)| Some(((*a)?, (*b)?)))
        .unzip()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Two-pass sample covariance; `None` below two pairs.
pub fn covariance(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (mx, my) = (mean(x), mean(y));
    let s: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    Some(s / (x.len() - 1) as f64)
}

/// Pearson correlation; `None` below [`MIN_CORRELATION_PAIRS`] pairs or when
/// either side has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < MIN_CORRELATION_PAIRS {
        return None;
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Two-sided p-value of `r` over `n` pairs from Student's t with `n - 2`
/// degrees of freedom.
pub fn correlation_p_value(r: f64, n: usize) -> Result<f64> {
    if n < MIN_CORRELATION_PAIRS {
        return Err(Error::Domain(format!("{n} pairs is too few for a correlation test")));
    }
    if r.abs() >= 1.0 {
        return Ok(0.0);
    }
    let df = (n - 2) as f64;
    let t = r * (df / (1.0 - r * r)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Numeric(e.to_string()))?;
    Ok((2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BhResult {
    pub significant: Vec<bool>,
    /// Adjusted p-values in input order.
    pub q: Vec<f64>,
}

/// Benjamini–Hochberg step-up at level `alpha`.
pub fn bh_fdr(pvals: &[f64], alpha: f64) -> BhResult {
    let m = pvals.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| pvals[a].total_cmp(&pvals[b]));
    // Largest rank i with p_(i) <= i alpha / m.
    let cutoff = (1..=m)
        .rev()
        .find(|&i| pvals[order[i - 1]] <= i as f64 * alpha / m as f64)
        .unwrap_or(0);
    let mut significant = vec![false; m];
    for &k in &order[..cutoff] {
        significant[k] = true;
    }
    let mut q = vec![0.0; m];
    let mut running = 1.0f64;
    for i in (1..=m).rev() {
        let k = order[i - 1];
        running = running.min(m as f64 * pvals[k] / i as f64);
        q[k] = running;
    }
    BhResult { significant, q }
}

/// Symmetric organ x organ matrix; `None` where fewer than two subjects
/// have both organs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrganMatrix {
    pub organs: Vec<ClassId>,
    pub values: Vec<Vec<Option<f64>>>,
    #[serde(default)]
    pub excluded: Vec<ClassId>,
}

impl OrganMatrix {
    pub fn get(&self, a: ClassId, b: ClassId) -> Option<f64> {
        let i = self.organs.iter().position(|&c| c == a)?;
        let j = self.organs.iter().position(|&c| c == b)?;
        self.values[i][j]
    }

    pub fn exclude_organs(&self, classes: &[ClassId]) -> Result<Self> {
        let drop = exclusion_mask(&self.organs, classes)?;
        let keep: Vec<usize> = (0..self.organs.len()).filter(|&i| !drop[i]).collect();
        let mut excluded = self.excluded.clone();
        excluded.extend_from_slice(classes);
        Ok(Self {
            organs: keep.iter().map(|&i| self.organs[i]).collect(),
            values: keep
                .iter()
                .map(|&i| keep.iter().map(|&j| self.values[i][j]).collect())
                .collect(),
            excluded,
        })
    }

    /// Largest absolute entry and its organ pair.
    pub fn max_abs(&self) -> Option<(ClassId, ClassId, f64)> {
        let mut best: Option<(ClassId, ClassId, f64)> = None;
        for i in 0..self.organs.len() {
            for j in i..self.organs.len() {
                if let Some(v) = self.values[i][j] {
                    if best.map_or(true, |b| v.abs() > b.2.abs()) {
                        best = Some((self.organs[i], self.organs[j], v));
                    }
                }
            }
        }
        best
    }

    /// CSV with organ ids as row and column headers; absent entries empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("organ");
        for c in &self.organs {
            out.push_str(&format!(",{c}"));
        }
        out.push('\n');
        for (c, row) in self.organs.iter().zip(&self.values) {
            out.push_str(&c.to_string());
            for v in row {
                match v {
                    Some(v) => out.push_str(&format!(",{v}")),
                    None => out.push(','),
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Per-column z-scores over present values; constant columns become absent.
fn standardize(features: &OrganFeatureMatrix) -> Vec<Vec<Option<f64>>> {
    (0..features.organs.len())
        .map(|o| {
            let col = features.column(o);
            let present: Vec<f64> = col.iter().flatten().copied().collect();
            let sd = covariance(&present, &present).map(f64::sqrt).filter(|&s| s > 0.0);
            let m = if present.is_empty() { 0.0 } else { mean(&present) };
            col.iter().map(|v| Some((v.as_ref()? - m) / sd?)).collect()
        })
        .collect()
}

/// Pairwise-complete sample covariance between organ columns, optionally on
/// z-scored features.
pub fn covariance_matrix(features: &OrganFeatureMatrix, standardized: bool) -> OrganMatrix {
    let columns: Vec<Vec<Option<f64>>> = if standardized {
        standardize(features)
    } else {
        (0..features.organs.len()).map(|o| features.column(o)).collect()
    };
    let k = columns.len();
    let mut values = vec![vec![None; k]; k];
    for i in 0..k {
        for j in i..k {
            let (x, y) = complete_pairs(&columns[i], &columns[j]);
            let c = covariance(&x, &y);
            values[i][j] = c;
            values[j][i] = c;
        }
    }
    OrganMatrix {
        organs: features.organs.clone(),
        values,
        excluded: features.excluded.clone(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairDelta {
    pub a: ClassId,
    pub b: ClassId,
    pub delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovarianceDifference {
    /// `A - B`.
    pub matrix: OrganMatrix,
    /// Unique pairs (diagonal included) by decreasing `|delta|`.
    pub ranking: Vec<PairDelta>,
}

impl CovarianceDifference {
    pub fn ranking_csv(&self) -> String {
        let mut out = String::from("rank,organ_a,organ_b,delta\n");
        for (i, p) in self.ranking.iter().enumerate() {
            out.push_str(&format!("{},{},{},{}\n", i + 1, p.a, p.b, p.delta));
        }
        out
    }
}

/// `D = A - B` with the `top_k` largest `|D|` entries ranked. Entries absent
/// in either matrix are absent in `D` and unranked.
pub fn covariance_difference(a: &OrganMatrix, b: &OrganMatrix, top_k: usize) -> Result<CovarianceDifference> {
    if a.organs != b.organs {
        return Err(Error::Consistency(format!(
            "covariance organ subsets differ ({} vs {} organs)",
            a.organs.len(),
            b.organs.len()
        )));
    }
    let k = a.organs.len();
    let values: Vec<Vec<Option<f64>>> = (0..k)
        .map(|i| (0..k).map(|j| Some(a.values[i][j]? - b.values[i][j]?)).collect())
        .collect();
    let mut ranking = Vec::new();
    for i in 0..k {
        for j in i..k {
            if let Some(delta) = values[i][j] {
                ranking.push(PairDelta {
                    a: a.organs[i],
                    b: a.organs[j],
                    delta,
                });
            }
        }
    }
    // Stable: ties keep matrix order.
    ranking.sort_by(|x, y| y.delta.abs().total_cmp(&x.delta.abs()));
    ranking.truncate(top_k);
    Ok(CovarianceDifference {
        matrix: OrganMatrix {
            organs: a.organs.clone(),
            values,
            excluded: a.excluded.clone(),
        },
        ranking,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairTest {
    pub a: ClassId,
    pub b: ClassId,
    pub n: usize,
    pub r: f64,
    pub p: f64,
    pub q: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub a: ClassId,
    pub b: ClassId,
    pub r: f64,
    pub p: f64,
    pub q: f64,
    pub positive: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InteractionNetwork {
    pub nodes: Vec<ClassId>,
    pub edges: Vec<Edge>,
    /// Every pair that entered the FDR correction.
    pub tested: Vec<PairTest>,
    pub degrees: BTreeMap<ClassId, usize>,
    /// Pairs left untested and why.
    pub audit: Vec<String>,
    pub r_threshold: f64,
    pub alpha: f64,
}

/// Pearson network: an edge joins two organs iff `|r| >= r_threshold` and
/// the BH-adjusted `q < alpha` over all tested pairs.
pub fn correlation_network(features: &OrganFeatureMatrix, r_threshold: f64, alpha: f64) -> Result<InteractionNetwork> {
    if !(0.0..=1.0).contains(&r_threshold) {
        return Err(Error::Config(format!("correlation threshold {r_threshold} outside [0, 1]")));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Config(format!("FDR level {alpha} outside (0, 1]")));
    }
    let k = features.organs.len();
    let columns: Vec<Vec<Option<f64>>> = (0..k).map(|o| features.column(o)).collect();
    let mut tested = Vec::new();
    let mut audit = Vec::new();
    for i in 0..k {
        for j in i + 1..k {
            let (a, b) = (features.organs[i], features.organs[j]);
            let (x, y) = complete_pairs(&columns[i], &columns[j]);
            if x.len() < MIN_CORRELATION_PAIRS {
                audit.push(format!("{a}-{b}: {} complete pairs", x.len()));
                continue;
            }
            let Some(r) = pearson(&x, &y) else {
                audit.push(format!("{a}-{b}: zero variance"));
                continue;
            };
            tested.push(PairTest {
                a,
                b,
                n: x.len(),
                r,
                p: correlation_p_value(r, x.len())?,
                q: f64::NAN,
            });
        }
    }
    let bh = bh_fdr(&tested.iter().map(|t| t.p).collect::<Vec<_>>(), alpha);
    for (t, q) in tested.iter_mut().zip(&bh.q) {
        t.q = *q;
    }
    let edges: Vec<Edge> = tested
        .iter()
        .filter(|t| t.r.abs() >= r_threshold && t.q < alpha)
        .map(|t| Edge {
            a: t.a,
            b: t.b,
            r: t.r,
            p: t.p,
            q: t.q,
            positive: t.r > 0.0,
        })
        .collect();
    let mut degrees: BTreeMap<ClassId, usize> = features.organs.iter().map(|&c| (c, 0)).collect();
    for e in &edges {
        *degrees.get_mut(&e.a).unwrap() += 1;
        *degrees.get_mut(&e.b).unwrap() += 1;
    }
    Ok(InteractionNetwork {
        nodes: features.organs.clone(),
        edges,
        tested,
        degrees,
        audit,
        r_threshold,
        alpha,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(cols: &[&[f64]]) -> OrganFeatureMatrix {
        let n = cols[0].len();
        OrganFeatureMatrix::new(
            (1..=cols.len() as u16).collect(),
            (0..n).map(|i| i.to_string()).collect(),
            vec![30.0; n],
            (0..n).map(|s| cols.iter().map(|c| Some(c[s])).collect()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn covariance_by_hand() {
        let m = matrix(&[&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0], &[5.0, 5.0, 5.0]]);
        let c = covariance_matrix(&m, false);
        assert_eq!(c.get(1, 2), Some(2.0));
        assert_eq!(c.get(1, 1), Some(1.0));
        assert_eq!(c.get(3, 3), Some(0.0));
        let z = covariance_matrix(&m, true);
        assert!((z.get(1, 2).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(z.get(3, 3), None);
    }

    #[test]
    fn pairwise_complete() {
        let mut m = matrix(&[&[1.0, 2.0, 3.0], &[2.0, 4.0, 7.0]]);
        m.values[2][1] = None;
        let c = covariance_matrix(&m, false);
        assert_eq!(c.get(1, 2), Some(1.0));
        m.values[1][0] = None;
        assert_eq!(covariance_matrix(&m, false).get(1, 2), None);
    }

    #[test]
    fn bh_by_hand() {
        let r = bh_fdr(&[0.01, 0.02, 0.03, 0.5], 0.05);
        assert_eq!(r.significant, vec![true, true, true, false]);
        assert!((r.q[0] - 0.04).abs() < 1e-15 && (r.q[3] - 0.5).abs() < 1e-15);
        assert!(bh_fdr(&[1.0; 5], 0.05).significant.iter().all(|s| !s));
        assert!(bh_fdr(&[0.04], 0.05).significant[0]);
        // Step-up: a later small enough rank rescues earlier ones.
        assert_eq!(bh_fdr(&[0.03, 0.04], 0.05).significant, vec![true, true]);
    }

    #[test]
    fn p_values() {
        assert_eq!(correlation_p_value(1.0, 10).unwrap(), 0.0);
        assert!((correlation_p_value(0.0, 10).unwrap() - 1.0).abs() < 1e-12);
        // r = 0.5, n = 12: t = 0.5 sqrt(10 / 0.75) = 1.8257, two-sided p = 0.0980.
        assert!((correlation_p_value(0.5, 12).unwrap() - 0.0980).abs() < 5e-4);
        assert!(correlation_p_value(0.5, 2).is_err());
    }

    #[test]
    fn collinear_pair_is_an_edge() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v - 1.0).collect();
        let z = [1.0; 10];
        let net = correlation_network(&matrix(&[&x, &y, &z]), 0.5, 0.05).unwrap();
        assert_eq!(net.edges.len(), 1);
        assert_eq!((net.edges[0].a, net.edges[0].b, net.edges[0].r), (1, 2, 1.0));
        assert!(net.edges[0].positive);
        assert_eq!(net.audit.len(), 2);
        assert_eq!(net.degrees[&1], 1);
        assert_eq!(net.degrees[&3], 0);
    }

    #[test]
    fn threshold_is_conjunctive() {
        // Strongly significant but weak correlation: never an edge.
        let n = 2000;
        let x: Vec<f64> = (0..n).map(|i| ((i * 7919) % 1000) as f64).collect();
        let y: Vec<f64> = (0..n).map(|i| ((i * 104729) % 997) as f64).collect();
        // Near-uncorrelated columns of similar spread, mixed to r ~ 0.49.
        let target: f64 = 0.49;
        let w = target / (1.0 - target * target).sqrt();
        let mixed: Vec<f64> = x.iter().zip(&y).map(|(a, b)| w * a + b).collect();
        let r = pearson(&x, &mixed).unwrap();
        assert!(r < 0.5 && r > 0.4, "{r}");
        let net = correlation_network(&matrix(&[&x, &mixed]), 0.5, 0.05).unwrap();
        assert!(net.tested[0].q < 0.05);
        assert!(net.edges.is_empty());
    }

    #[test]
    fn difference_ranking() {
        let a = covariance_matrix(&matrix(&[&[1.0, 2.0, 3.0], &[1.0, 0.0, 1.0]]), false);
        let d = covariance_difference(&a, &a, 10).unwrap();
        assert!(d.ranking.iter().all(|p| p.delta == 0.0));
        assert_eq!(d.ranking.len(), 3);
        assert_eq!(covariance_difference(&a, &a, 1).unwrap().ranking.len(), 1);
        let b = a.exclude_organs(&[2]).unwrap();
        assert!(matches!(covariance_difference(&a, &b, 3), Err(Error::Consistency(_))));
    }
}
