//! Stage-one ranking: query decomposition into per-dimension positive and
//! negative constraints, and the weighted constrained cosine score.
//!
//! For a GUI `g` and an active dimension `d`:
//!
//! ```text
//! pos_sim(g) = max over positive phrases p of cos(e(p), e(g, d))   (0 if none)
//! neg_sim(g) = max(0, max over negative phrases n of cos(e(n), e(g, d)))
//! s_d(g)     = clamp(pos_sim(g) - λ·neg_sim(g), -1, 1)
//! total(g)   = Σ_d w_d·s_d(g) / Σ_d w_d
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::dataset::DimensionSet;
use crate::gateway::stub::{DECOMPOSITION_SCHEMA, REQUIREMENT_CLOSE, REQUIREMENT_OPEN};
use crate::gateway::{Gateway, GatewayError, ResponseSchema, Schema, UsageMeter};
use crate::index::{EmbeddingIndex, IndexError};

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("empty query")]
    EmptyQuery,
    #[error("no active dimension: every dimension lacks constraints or has weight 0")]
    NoActiveDimensions,
    #[error("dimension \"{0}\" has no constraints to score")]
    NoConstraints(String),
    #[error("unknown dimension \"{0}\"")]
    UnknownDimension(String),
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Constraints {
    pub positives: Vec<String>,
    pub negatives: Vec<String>,
}

impl Constraints {
    pub fn is_empty(&self) -> bool {
        self.positives.is_empty() && self.negatives.is_empty()
    }
}

/// Per-dimension constraint phrases extracted from a requirement.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DecomposedQuery {
    pub query: String,
    pub dimensions: BTreeMap<String, Constraints>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub diagnostics: Vec<String>,
}

impl DecomposedQuery {
    pub fn new(query: &str) -> Self {
        Self {
            query: query.to_string(),
            ..Self::default()
        }
    }

    pub fn with(mut self, dimension: &str, positives: &[&str], negatives: &[&str]) -> Self {
        let c = self.dimensions.entry(dimension.to_string()).or_default();
        c.positives.extend(positives.iter().map(|s| s.to_string()));
        c.negatives.extend(negatives.iter().map(|s| s.to_string()));
        self
    }

    pub fn constraints(&self, dimension: &str) -> Option<&Constraints> {
        self.dimensions.get(dimension)
    }
}

/// Non-negative per-dimension weights.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WeightProfile(BTreeMap<String, f64>);

impl WeightProfile {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_defaults(dimensions: &DimensionSet) -> Self {
        Self(dimensions.default_weights())
    }

    pub fn set(&mut self, dimension: &str, weight: f64) -> Result<(), RetrievalError> {
        if !(weight.is_finite() && weight >= 0.0) {
            return Err(RetrievalError::InvalidWeights(format!(
                "weight for \"{dimension}\" must be a non-negative number"
            )));
        }
        self.0.insert(dimension.to_string(), weight);
        Ok(())
    }

    pub fn with(mut self, dimension: &str, weight: f64) -> Self {
        self.set(dimension, weight).expect("valid weight");
        self
    }

    pub fn get(&self, dimension: &str) -> f64 {
        self.0.get(dimension).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.0.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self(self.0.iter().map(|(k, v)| (k.clone(), v * factor)).collect())
    }

    /// Dimension defaults overridden by `overrides`; unknown ids are errors.
    pub fn resolve(dimensions: &DimensionSet, overrides: &WeightProfile) -> Result<Self, RetrievalError> {
        let mut w = Self::from_defaults(dimensions);
        for (k, v) in overrides.iter() {
            if !dimensions.contains(k) {
                return Err(RetrievalError::UnknownDimension(k.to_string()));
            }
            w.set(k, v)?;
        }
        Ok(w)
    }
}

impl FromStr for WeightProfile {
    type Err = RetrievalError;

    /// Parses `domain=1,design=2.5`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut w = WeightProfile::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part.split_once('=').ok_or_else(|| {
                RetrievalError::InvalidWeights(format!("expected id=weight, got \"{part}\""))
            })?;
            let v: f64 = v.trim().parse().map_err(|_| {
                RetrievalError::InvalidWeights(format!("\"{}\" is not a number", v.trim()))
            })?;
            w.set(k.trim(), v)?;
        }
        Ok(w)
    }
}

impl fmt::Display for WeightProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|(k, v)| format!("{k}={v}")).collect();
        f.write_str(&parts.join(","))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoringConfig {
    /// Multiplier λ on the negative similarity inside `s_d`.
    pub negative_weight: f64,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self {
            negative_weight: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DimensionScore {
    pub pos: f64,
    pub neg: f64,
    pub s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageOneEntry {
    pub gui_id: String,
    pub total: f64,
    pub per_dimension: BTreeMap<String, DimensionScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageOneResult {
    /// Active dimensions and their weights, in dimension-set order.
    pub active: Vec<(String, f64)>,
    /// Descending by total, ties by ascending gui_id.
    pub entries: Vec<StageOneEntry>,
}

impl StageOneResult {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn truncated(mut self, top: usize) -> Self {
        self.entries.truncate(top);
        self
    }

    pub fn gui_ids(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.gui_id.as_str()).collect()
    }
}

pub fn decomposition_schema(dimensions: &DimensionSet) -> ResponseSchema {
    let constraint = Schema::object([
        ("positives", Schema::array(Schema::Text)),
        ("negatives", Schema::array(Schema::Text)),
    ]);
    ResponseSchema::new(
        DECOMPOSITION_SCHEMA,
        Schema::optional_object(dimensions.iter().map(|d| (d.id.clone(), constraint.clone()))),
    )
}

pub fn build_decomposition_prompt(query: &str, dimensions: &DimensionSet) -> String {
    let mut prompt = String::from(
        "You help search a repository of graphical user interface screenshots. Decompose the \
         user's requirement into constraints along these search dimensions:\n",
    );
    for d in dimensions {
        prompt.push_str(&format!("- \"{}\" ({}): {}\n", d.id, d.name, d.description));
    }
    prompt.push_str(
        "\nFor every dimension, list short phrases the GUI SHOULD match (\"positives\") and \
         phrases it must NOT match (\"negatives\"). Put negated or excluded aspects only in \
         \"negatives\", without the negation word (\"not dark\" becomes the negative \"dark\"). \
         Use empty lists for dimensions the requirement does not mention. Return one JSON object \
         keyed by dimension id, each value of the form {\"positives\": [...], \"negatives\": [...]}.\n\n",
    );
    prompt.push_str(REQUIREMENT_OPEN);
    prompt.push('\n');
    prompt.push_str(query);
    prompt.push('\n');
    prompt.push_str(REQUIREMENT_CLOSE);
    prompt
}

fn clean_phrases(v: &Value) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for p in v.as_array().into_iter().flatten().filter_map(Value::as_str) {
        let p = p.trim();
        if !p.is_empty() && !out.iter().any(|q| q == p) {
            out.push(p.to_string());
        }
    }
    out
}

/// Turns a validated model reply into a [`DecomposedQuery`]; unknown
/// dimension ids are dropped with a diagnostic.
pub fn parse_decomposition(query: &str, value: &Value, dimensions: &DimensionSet) -> DecomposedQuery {
    let mut out = DecomposedQuery::new(query);
    if let Some(obj) = value.as_object() {
        for (k, v) in obj {
            if !dimensions.contains(k) {
                tracing::warn!(dimension = %k, "model returned an unknown dimension; dropped");
                out.diagnostics.push(format!("dropped unknown dimension \"{k}\""));
                continue;
            }
            let c = Constraints {
                positives: clean_phrases(&v["positives"]),
                negatives: clean_phrases(&v["negatives"]),
            };
            if !c.is_empty() {
                out.dimensions.insert(k.clone(), c);
            }
        }
    }
    out
}

/// Zero-shot LLM decomposition. When the model extracts nothing at all, the
/// raw query becomes a positive phrase on every dimension so the search still
/// has something to score.
pub fn decompose_query(
    query: &str,
    dimensions: &DimensionSet,
    gateway: &Gateway,
) -> Result<(DecomposedQuery, UsageMeter), RetrievalError> {
    let query = query.trim();
    if query.is_empty() {
        return Err(RetrievalError::EmptyQuery);
    }
    let prompt = build_decomposition_prompt(query, dimensions);
    let (value, meter) = gateway.complete_text(&prompt, &decomposition_schema(dimensions))?;
    let mut decomposed = parse_decomposition(query, &value, dimensions);
    if decomposed.dimensions.is_empty() {
        decomposed
            .diagnostics
            .push("no constraints extracted; using the raw query on every dimension".into());
        for d in dimensions {
            decomposed.dimensions.insert(
                d.id.clone(),
                Constraints {
                    positives: vec![query.to_string()],
                    negatives: Vec::new(),
                },
            );
        }
    }
    Ok((decomposed, meter))
}

/// Per-GUI scores for one dimension from already-embedded phrases.
pub fn score_dimension_vectors(
    index: &EmbeddingIndex,
    dimension_id: &str,
    positives: &[Vec<f32>],
    negatives: &[Vec<f32>],
    config: ScoringConfig,
) -> Result<Vec<DimensionScore>, RetrievalError> {
    if positives.is_empty() && negatives.is_empty() {
        return Err(RetrievalError::NoConstraints(dimension_id.to_string()));
    }
    // `floor` is the value with no phrases and a lower bound otherwise.
    let max_sims = |phrases: &[Vec<f32>], floor: f64| -> Result<Vec<f64>, RetrievalError> {
        let start = if phrases.is_empty() { 0.0 } else { floor };
        let mut best = vec![start; index.gui_count()];
        for p in phrases {
            for (b, s) in best.iter_mut().zip(index.similarity(dimension_id, p)?) {
                *b = b.max(s);
            }
        }
        Ok(best)
    };
    // An anti-correlated negative phrase must never raise a score.
    let pos = max_sims(positives, f64::NEG_INFINITY)?;
    let neg = max_sims(negatives, 0.0)?;
    Ok(pos
        .into_iter()
        .zip(neg)
        .map(|(p, n)| DimensionScore {
            pos: p,
            neg: n,
            s: (p - config.negative_weight * n).clamp(-1.0, 1.0),
        })
        .collect())
}

/// Embeds the phrases with `embedder` (which must match the index model) and
/// scores one dimension.
pub fn score_dimension(
    index: &EmbeddingIndex,
    dimension_id: &str,
    positives: &[String],
    negatives: &[String],
    embedder: &Gateway,
    config: ScoringConfig,
) -> Result<(Vec<DimensionScore>, UsageMeter), RetrievalError> {
    if !index.dimensions().contains(dimension_id) {
        return Err(RetrievalError::UnknownDimension(dimension_id.to_string()));
    }
    if positives.is_empty() && negatives.is_empty() {
        return Err(RetrievalError::NoConstraints(dimension_id.to_string()));
    }
    let all: Vec<String> = positives.iter().chain(negatives).cloned().collect();
    let (mut vectors, meter) = embedder.embed_text(&all)?;
    let neg_vecs = vectors.split_off(positives.len());
    let scores = score_dimension_vectors(index, dimension_id, &vectors, &neg_vecs, config)?;
    Ok((scores, meter))
}

/// Quantization step for normalized weights. Snapping `w_d / Σw` to this
/// grid makes totals bit-identical under any common scaling of the weights.
const WEIGHT_GRID: f64 = 4_294_967_296.0; // 2^32

pub(crate) fn normalized_weights(weights: &[f64]) -> Vec<f64> {
    let sum: f64 = weights.iter().sum();
    weights
        .iter()
        .map(|w| (w / sum * WEIGHT_GRID).round() / WEIGHT_GRID)
        .collect()
}

/// Dimensions that carry constraints and a positive weight, in
/// dimension-set order.
pub fn active_dimensions(
    dimensions: &DimensionSet,
    decomposed: &DecomposedQuery,
    weights: &WeightProfile,
) -> Vec<(String, f64)> {
    dimensions
        .iter()
        .filter(|d| decomposed.constraints(&d.id).is_some_and(|c| !c.is_empty()))
        .map(|d| (d.id.clone(), weights.get(&d.id)))
        .filter(|(_, w)| *w > 0.0)
        .collect()
}

/// Combines per-dimension scores into ranked totals.
pub fn rank_scores(
    gui_ids: &[String],
    active: Vec<(String, f64)>,
    per_dimension: Vec<Vec<DimensionScore>>,
) -> Result<StageOneResult, RetrievalError> {
    if active.is_empty() {
        return Err(RetrievalError::NoActiveDimensions);
    }
    let raw: Vec<f64> = active.iter().map(|(_, w)| *w).collect();
    let norm = normalized_weights(&raw);
    let norm_sum: f64 = norm.iter().sum();
    let mut entries: Vec<StageOneEntry> = gui_ids
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let weighted: f64 = norm
                .iter()
                .zip(&per_dimension)
                .map(|(w, scores)| w * scores[i].s)
                .sum();
            StageOneEntry {
                gui_id: g.clone(),
                total: (weighted / norm_sum).clamp(-1.0, 1.0),
                per_dimension: active
                    .iter()
                    .zip(&per_dimension)
                    .map(|((d, _), scores)| (d.clone(), scores[i]))
                    .collect(),
            }
        })
        .collect();
    entries.sort_by(|a, b| {
        b.total
            .total_cmp(&a.total)
            .then_with(|| a.gui_id.cmp(&b.gui_id))
    });
    Ok(StageOneResult { active, entries })
}

/// Scores every GUI in the index against the decomposed query.
pub fn stage_one_rank(
    index: &EmbeddingIndex,
    decomposed: &DecomposedQuery,
    weights: &WeightProfile,
    embedder: &Gateway,
    config: ScoringConfig,
) -> Result<(StageOneResult, UsageMeter), RetrievalError> {
    for k in decomposed.dimensions.keys() {
        if !index.dimensions().contains(k) {
            return Err(RetrievalError::UnknownDimension(k.clone()));
        }
    }
    let active = active_dimensions(index.dimensions(), decomposed, weights);
    if active.is_empty() {
        return Err(RetrievalError::NoActiveDimensions);
    }
    let mut usage = UsageMeter::default();
    let mut per_dimension = Vec::with_capacity(active.len());
    for (d, _) in &active {
        let c = decomposed.constraints(d).expect("active dimensions have constraints");
        let (scores, meter) =
            score_dimension(index, d, &c.positives, &c.negatives, embedder, config)?;
        usage.merge(&meter);
        per_dimension.push(scores);
    }
    Ok((rank_scores(index.gui_ids(), active, per_dimension)?, usage))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchResponse {
    pub decomposition: DecomposedQuery,
    pub weights: WeightProfile,
    pub result: StageOneResult,
    /// Decomposition call.
    pub usage: UsageMeter,
    /// Embedding of constraint phrases.
    pub embed_usage: UsageMeter,
}

/// Decompose, then rank. `top` truncates the returned list.
pub fn search(
    index: &EmbeddingIndex,
    query: &str,
    overrides: &WeightProfile,
    top: Option<usize>,
    decomposer: &Gateway,
    embedder: &Gateway,
    config: ScoringConfig,
) -> Result<SearchResponse, RetrievalError> {
    let weights = WeightProfile::resolve(index.dimensions(), overrides)?;
    let (decomposition, usage) = decompose_query(query, index.dimensions(), decomposer)?;
    let (result, embed_usage) = stage_one_rank(index, &decomposition, &weights, embedder, config)?;
    let result = match top {
        Some(n) => result.truncated(n),
        None => result,
    };
    Ok(SearchResponse {
        decomposition,
        weights,
        result,
        usage,
        embed_usage,
    })
}
