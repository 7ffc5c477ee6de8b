//! Ranking metrics over a single ranked list.
//!
//! The `*_rels` and `*_grades` variants take relevance in rank order; the
//! id-based variants look it up from a relevant set or grade map.

use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::EvalError;

pub const PRECISION_CUTOFFS: [usize; 4] = [3, 5, 7, 10];
pub const HITS_CUTOFFS: [usize; 4] = [1, 3, 5, 10];
pub const NDCG_CUTOFFS: [usize; 4] = [3, 5, 10, 15];
pub const DEFAULT_BINARIZE: u32 = 2;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NdcgGain {
    /// gain(g) = g
    #[default]
    Linear,
    /// gain(g) = 2^g - 1
    Exp,
}

impl NdcgGain {
    pub fn gain(self, grade: u32) -> f64 {
        match self {
            NdcgGain::Linear => grade as f64,
            NdcgGain::Exp => 2f64.powi(grade as i32) - 1.0,
        }
    }
}

impl FromStr for NdcgGain {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "linear" => Ok(NdcgGain::Linear),
            "exp" => Ok(NdcgGain::Exp),
            other => Err(EvalError::Invalid(format!(
                "ndcg gain must be \"linear\" or \"exp\", got \"{other}\""
            ))),
        }
    }
}

/// Mean of precision@r over the ranks r holding a relevant item. `total`
/// is the number of relevant items in the pool; 0 is an error.
pub fn average_precision_rels(rels: &[bool], total: usize) -> Result<f64, EvalError> {
    if total == 0 {
        return Err(EvalError::NoRelevant);
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, &r) in rels.iter().enumerate() {
        if r {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Ok(sum / total as f64)
}

pub fn reciprocal_rank_rels(rels: &[bool]) -> f64 {
    rels.iter()
        .position(|&r| r)
        .map_or(0.0, |i| 1.0 / (i + 1) as f64)
}

/// `|relevant ∩ top-k| / k`; the denominator stays `k` for short lists.
pub fn precision_at_rels(rels: &[bool], k: usize) -> f64 {
    assert!(k >= 1, "cutoff must be at least 1");
    rels.iter().take(k).filter(|&&r| r).count() as f64 / k as f64
}

pub fn hits_at_rels(rels: &[bool], k: usize) -> f64 {
    assert!(k >= 1, "cutoff must be at least 1");
    if rels.iter().take(k).any(|&r| r) {
        1.0
    } else {
        0.0
    }
}

fn dcg(grades: impl Iterator<Item = u32>, k: usize, gain: NdcgGain) -> f64 {
    grades
        .take(k)
        .enumerate()
        .map(|(i, g)| gain.gain(g) / ((i + 2) as f64).log2())
        .sum()
}

/// `grades` in rank order; `pool` holds every candidate's grade and defines
/// the ideal ordering. 0 when the ideal DCG is 0.
pub fn ndcg_at_grades(grades: &[u32], pool: &[u32], k: usize, gain: NdcgGain) -> f64 {
    let mut ideal = pool.to_vec();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg = dcg(ideal.into_iter(), k, gain);
    if idcg == 0.0 {
        return 0.0;
    }
    dcg(grades.iter().copied(), k, gain) / idcg
}

fn rels_of<S: AsRef<str>>(ranking: &[S], relevant: &BTreeSet<String>) -> Vec<bool> {
    ranking.iter().map(|g| relevant.contains(g.as_ref())).collect()
}

pub fn average_precision<S: AsRef<str>>(
    ranking: &[S],
    relevant: &BTreeSet<String>,
) -> Result<f64, EvalError> {
    average_precision_rels(&rels_of(ranking, relevant), relevant.len())
}

pub fn reciprocal_rank<S: AsRef<str>>(ranking: &[S], relevant: &BTreeSet<String>) -> f64 {
    reciprocal_rank_rels(&rels_of(ranking, relevant))
}

pub fn precision_at<S: AsRef<str>>(ranking: &[S], relevant: &BTreeSet<String>, k: usize) -> f64 {
    precision_at_rels(&rels_of(ranking, relevant), k)
}

pub fn hits_at<S: AsRef<str>>(ranking: &[S], relevant: &BTreeSet<String>, k: usize) -> f64 {
    hits_at_rels(&rels_of(ranking, relevant), k)
}

pub fn ndcg_at<S: AsRef<str>>(
    ranking: &[S],
    grades: &BTreeMap<String, u32>,
    k: usize,
    gain: NdcgGain,
) -> f64 {
    let ranked: Vec<u32> = ranking
        .iter()
        .map(|g| grades.get(g.as_ref()).copied().unwrap_or(0))
        .collect();
    let pool: Vec<u32> = grades.values().copied().collect();
    ndcg_at_grades(&ranked, &pool, k, gain)
}

/// One row of the results table. Serializes as a flat object keyed by
/// [`JSON_KEYS`].
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MetricValues {
    pub ap: f64,
    pub mrr: f64,
    pub precision: [f64; 4],
    pub hits: [f64; 4],
    pub ndcg: [f64; 4],
}

/// JSON keys in column order.
pub const JSON_KEYS: [&str; 14] = [
    "AP", "MRR", "P@3", "P@5", "P@7", "P@10", "HITS@1", "HITS@3", "HITS@5", "HITS@10", "NDCG@3",
    "NDCG@5", "NDCG@10", "NDCG@15",
];

impl Serialize for MetricValues {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        let mut m = s.serialize_map(Some(JSON_KEYS.len()))?;
        for (k, v) in JSON_KEYS.iter().zip(self.columns()) {
            m.serialize_entry(k, &v)?;
        }
        m.end()
    }
}

impl<'de> Deserialize<'de> for MetricValues {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let map = BTreeMap::<String, f64>::deserialize(d)?;
        let mut cols = [0.0; 14];
        for (c, k) in cols.iter_mut().zip(JSON_KEYS) {
            *c = *map
                .get(k)
                .ok_or_else(|| serde::de::Error::custom(format!("missing metric \"{k}\"")))?;
        }
        Ok(Self::from_columns(cols))
    }
}

impl MetricValues {
    /// Relevance in rank order, the number of relevant items in the pool,
    /// and graded labels in rank order plus for the whole pool.
    pub fn compute(rels: &[bool], relevant: usize, grades: &[u32], pool: &[u32], gain: NdcgGain) -> Self {
        Self {
            ap: average_precision_rels(rels, relevant).unwrap_or(0.0),
            mrr: reciprocal_rank_rels(rels),
            precision: PRECISION_CUTOFFS.map(|k| precision_at_rels(rels, k)),
            hits: HITS_CUTOFFS.map(|k| hits_at_rels(rels, k)),
            ndcg: NDCG_CUTOFFS.map(|k| ndcg_at_grades(grades, pool, k, gain)),
        }
    }

    /// Columns in table order.
    pub fn columns(&self) -> [f64; 14] {
        let mut out = [0.0; 14];
        out[0] = self.ap;
        out[1] = self.mrr;
        out[2..6].copy_from_slice(&self.precision);
        out[6..10].copy_from_slice(&self.hits);
        out[10..14].copy_from_slice(&self.ndcg);
        out
    }

    pub fn mean(rows: &[MetricValues]) -> Self {
        let n = rows.len().max(1) as f64;
        let mut acc = [0.0; 14];
        for r in rows {
            for (a, v) in acc.iter_mut().zip(r.columns()) {
                *a += v;
            }
        }
        Self::from_columns(acc.map(|v| v / n))
    }

    pub fn from_columns(m: [f64; 14]) -> Self {
        Self {
            ap: m[0],
            mrr: m[1],
            precision: [m[2], m[3], m[4], m[5]],
            hits: [m[6], m[7], m[8], m[9]],
            ndcg: [m[10], m[11], m[12], m[13]],
        }
    }
}

pub const COLUMN_NAMES: [&str; 14] = [
    "AP", "MRR", "P@3", "P@5", "P@7", "P@10", "H@1", "H@3", "H@5", "H@10", "N@3", "N@5", "N@10",
    "N@15",
];

/// Expected AP of a uniformly random ordering of `n` items of which `r` are
/// relevant: `(1/n)·[H_n + (r-1)/(n-1)·(n - H_n)]`, with `H_n` the n-th
/// harmonic number. 0 when `r` is 0.
pub fn expected_random_ap(n: usize, r: usize) -> f64 {
    assert!(r <= n, "more relevant items than candidates");
    if r == 0 {
        return 0.0;
    }
    if n == 1 {
        return 1.0;
    }
    let h: f64 = (1..=n).map(|i| 1.0 / i as f64).sum();
    let nf = n as f64;
    (h + (r as f64 - 1.0) / (nf - 1.0) * (nf - h)) / nf
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ap_examples() {
        let ap = average_precision_rels(&[true, false, true], 2).unwrap();
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
        assert_eq!(average_precision_rels(&[true, true, true], 3).unwrap(), 1.0);
        assert!((average_precision_rels(&[false, false, false, true], 1).unwrap() - 0.25).abs() < 1e-15);
        assert!(average_precision_rels(&[false], 0).is_err());
    }

    #[test]
    fn rr_examples() {
        assert_eq!(reciprocal_rank_rels(&[false, true]), 0.5);
        assert_eq!(reciprocal_rank_rels(&[true]), 1.0);
        assert_eq!(reciprocal_rank_rels(&[false, false]), 0.0);
    }

    #[test]
    fn precision_and_hits_examples() {
        let r = [true, false, true, false];
        assert!((precision_at_rels(&r, 3) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(hits_at_rels(&r, 3), 1.0);
        assert_eq!(precision_at_rels(&[false, true], 1), 0.0);
        assert_eq!(hits_at_rels(&[false, true], 1), 0.0);
        assert_eq!(precision_at_rels(&[true, true], 10), 0.2);
    }

    #[test]
    fn ndcg_examples() {
        assert_eq!(ndcg_at_grades(&[3, 2, 0], &[0, 2, 3], 3, NdcgGain::Linear), 1.0);
        let v = ndcg_at_grades(&[0, 3], &[0, 3], 2, NdcgGain::Linear);
        assert!((v - (3.0 / 3f64.log2()) / 3.0).abs() < 1e-12);
        assert!((v - 0.6309).abs() < 1e-4);
        assert_eq!(ndcg_at_grades(&[0, 0], &[0, 0], 2, NdcgGain::Linear), 0.0);
        assert_eq!(NdcgGain::Exp.gain(3), 7.0);
    }

    #[test]
    fn id_based_wrappers() {
        let rel: BTreeSet<String> = ["b".to_string()].into();
        assert_eq!(reciprocal_rank(&["a", "b"], &rel), 0.5);
        let grades: BTreeMap<String, u32> = [("a".to_string(), 0), ("b".to_string(), 3)].into();
        assert!((ndcg_at(&["a", "b"], &grades, 2, NdcgGain::Linear) - 0.6309).abs() < 1e-4);
    }

    #[test]
    fn expected_ap_boundaries() {
        assert_eq!(expected_random_ap(5, 5), 1.0);
        assert!((expected_random_ap(4, 1) - (1.0 + 0.5 + 1.0 / 3.0 + 0.25) / 4.0).abs() < 1e-12);
        assert_eq!(expected_random_ap(5, 0), 0.0);
    }
}
