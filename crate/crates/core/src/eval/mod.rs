//! Offline evaluation: ranking metrics against graded gold standards, the
//! results table, and cost projection for rerank runs.

mod cost;
mod gold;
pub mod metrics;

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cost::{
    format_cost_table, load_usage, project_all, project_cost, CostProjection, RunUsage, PROJECTION_KS,
};
pub use gold::{
    load_rankings, parse_rankings, rankings_to_json, synthetic_gold, Candidate, GoldQuery, GoldStandard,
    Rankings,
};
pub use metrics::{expected_random_ap, MetricValues, NdcgGain, COLUMN_NAMES, DEFAULT_BINARIZE};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("io error: {0}")]
    Io(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("{0}")]
    Invalid(String),
    #[error("relevant set is empty")]
    NoRelevant,
    #[error("no ranking for query \"{0}\"")]
    MissingQuery(String),
    #[error("ranking for query \"{query_id}\" contains \"{gui_id}\", which is not in its candidate pool")]
    ForeignGui { query_id: String, gui_id: String },
    #[error("ranking for query \"{query_id}\" does not cover its candidate pool: {reason}")]
    IncompletePool { query_id: String, reason: String },
    #[error("no usage records")]
    EmptyUsage,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Grades at or above this count as relevant for binary metrics.
    pub binarize: u32,
    pub gain: NdcgGain,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            binarize: DEFAULT_BINARIZE,
            gain: NdcgGain::Linear,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryMetrics {
    pub query_id: String,
    pub relevant: usize,
    pub values: MetricValues,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub binarize: u32,
    pub gain: NdcgGain,
    pub per_query: Vec<QueryMetrics>,
    pub mean: MetricValues,
    /// Queries without any relevant candidate; they score AP = MRR = 0.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub no_relevant: Vec<String>,
}

/// Scores every gold query. Each ranking must be a permutation of that
/// query's candidate pool; rankings for queries absent from the gold
/// standard are ignored.
pub fn evaluate_run(gold: &GoldStandard, rankings: &Rankings, config: EvalConfig) -> Result<MetricReport, EvalError> {
    let mut per_query = Vec::with_capacity(gold.queries.len());
    let mut no_relevant = Vec::new();
    for q in &gold.queries {
        let ranking = rankings
            .get(&q.query_id)
            .ok_or_else(|| EvalError::MissingQuery(q.query_id.clone()))?;
        let grades = q.grades();
        let mut seen = BTreeSet::new();
        for g in ranking {
            if !grades.contains_key(g) {
                return Err(EvalError::ForeignGui {
                    query_id: q.query_id.clone(),
                    gui_id: g.clone(),
                });
            }
            if !seen.insert(g.as_str()) {
                return Err(EvalError::IncompletePool {
                    query_id: q.query_id.clone(),
                    reason: format!("\"{g}\" appears twice"),
                });
            }
        }
        if seen.len() != grades.len() {
            return Err(EvalError::IncompletePool {
                query_id: q.query_id.clone(),
                reason: format!("{} of {} candidates ranked", seen.len(), grades.len()),
            });
        }
        let ranked: Vec<u32> = ranking.iter().map(|g| grades[g]).collect();
        let rels: Vec<bool> = ranked.iter().map(|&g| g >= config.binarize).collect();
        let relevant = q.relevant(config.binarize).len();
        if relevant == 0 {
            no_relevant.push(q.query_id.clone());
        }
        let pool: Vec<u32> = grades.values().copied().collect();
        per_query.push(QueryMetrics {
            query_id: q.query_id.clone(),
            relevant,
            values: MetricValues::compute(&rels, relevant, &ranked, &pool, config.gain),
        });
    }
    let rows: Vec<MetricValues> = per_query.iter().map(|q| q.values).collect();
    Ok(MetricReport {
        binarize: config.binarize,
        gain: config.gain,
        mean: MetricValues::mean(&rows),
        per_query,
        no_relevant,
    })
}

/// Mean over gold queries of [`expected_random_ap`] for each query's pool
/// size and relevant count.
pub fn expected_random_map(gold: &GoldStandard, binarize: u32) -> f64 {
    let n = gold.queries.len().max(1) as f64;
    gold.queries
        .iter()
        .map(|q| expected_random_ap(q.candidates.len(), q.relevant(binarize).len()))
        .sum::<f64>()
        / n
}

/// One table row: group label (e.g. "Text"), run label, values.
pub struct TableRow<'a> {
    pub group: &'a str,
    pub label: &'a str,
    pub values: &'a MetricValues,
}

/// Results table with columns AP, MRR, P@3/5/7/10, H@1/3/5/10,
/// N@3/5/10/15, three decimals.
pub fn format_metric_table(rows: &[TableRow<'_>]) -> String {
    let mut cells: Vec<Vec<String>> = Vec::new();
    let mut header = vec![String::new(), String::new()];
    header.extend(COLUMN_NAMES.iter().map(|s| s.to_string()));
    cells.push(header);
    for r in rows {
        let mut row = vec![r.group.to_string(), r.label.to_string()];
        row.extend(r.values.columns().iter().map(|v| format!("{v:.3}")));
        cells.push(row);
    }
    cost::render(&cells, 2)
}

impl MetricReport {
    pub fn table(&self, group: &str, label: &str) -> String {
        let mut out = format_metric_table(&[TableRow {
            group,
            label,
            values: &self.mean,
        }]);
        let _ = writeln!(
            out,
            "{} queries; relevant = grade >= {}; NDCG gain {}",
            self.per_query.len(),
            self.binarize,
            match self.gain {
                NdcgGain::Linear => "linear",
                NdcgGain::Exp => "exp",
            }
        );
        if !self.no_relevant.is_empty() {
            let _ = writeln!(
                out,
                "{} queries have no relevant candidate and score AP = MRR = 0",
                self.no_relevant.len()
            );
        }
        out
    }
}
