//! Stage-two reranking: each head candidate is scored 0 to 100 on every
//! weighted dimension by one model call, from its annotations (text mode) or
//! its screenshot (image mode).

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::dataset::{AnnotationStore, DimensionSet, SearchDimension};
use crate::gateway::schema::as_integer;
use crate::gateway::{
    mime_for_path, Gateway, GatewayError, ImageInput, ResponseSchema, Schema, UsageMeter,
};
use crate::retrieval::{RetrievalError, StageOneResult, WeightProfile};

pub const RERANK_SCHEMA: &str = "rerank_scores";
pub const DEFAULT_K: usize = 100;
pub const DEFAULT_BATCH_SIZE: usize = 1;
pub const FLAG_CLAMPED: &str = "clamped";
pub const FLAG_FAILED: &str = "scoring_failed";

#[derive(Debug, Error)]
pub enum RerankError {
    #[error("invalid rerank request: {0}")]
    InvalidRequest(String),
    #[error("stage-one result is empty")]
    EmptyCandidates,
    #[error("no dimension has a positive weight")]
    NoWeightedDimensions,
    #[error("GUI \"{gui_id}\" has no annotation for dimension \"{dimension}\"")]
    MissingAnnotation { gui_id: String, dimension: String },
    #[error("cannot read screenshot of GUI \"{gui_id}\": {reason}")]
    MissingImage { gui_id: String, reason: String },
    #[error("provider failure after {scored} of {attempted} candidates: {message}")]
    ProviderDown {
        message: String,
        scored: usize,
        attempted: usize,
        usage: UsageMeter,
    },
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RerankMode {
    Text,
    Image,
}

impl FromStr for RerankMode {
    type Err = RerankError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "text" => Ok(RerankMode::Text),
            "image" => Ok(RerankMode::Image),
            other => Err(RerankError::InvalidRequest(format!(
                "mode must be \"text\" or \"image\", got \"{other}\""
            ))),
        }
    }
}

impl fmt::Display for RerankMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RerankMode::Text => "text",
            RerankMode::Image => "image",
        })
    }
}

#[derive(Debug, Clone)]
pub struct RerankRequest {
    pub query: String,
    pub mode: RerankMode,
    pub k: usize,
    /// Overrides on top of the dimension defaults.
    pub weights: WeightProfile,
    /// Head candidates claimed per worker step.
    pub batch_size: usize,
    pub width: usize,
}

impl RerankRequest {
    pub fn new(query: &str, mode: RerankMode) -> Self {
        Self {
            query: query.to_string(),
            mode,
            k: DEFAULT_K,
            weights: WeightProfile::new(),
            batch_size: DEFAULT_BATCH_SIZE,
            width: crate::gateway::DEFAULT_CONCURRENCY,
        }
    }

    pub fn validate(&self) -> Result<(), RerankError> {
        if self.query.trim().is_empty() {
            return Err(RerankError::InvalidRequest("empty query".into()));
        }
        if self.k == 0 {
            return Err(RerankError::InvalidRequest("k must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(RerankError::InvalidRequest("batch size must be at least 1".into()));
        }
        if self.width == 0 {
            return Err(RerankError::InvalidRequest("width must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankScore {
    pub gui_id: String,
    pub scores: BTreeMap<String, i64>,
    pub aggregate: f64,
    pub usage: UsageMeter,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalEntry {
    pub rank: usize,
    pub gui_id: String,
    pub stage_one_total: f64,
    pub reranked: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aggregate: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub scores: BTreeMap<String, i64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

/// Reranked head followed by the untouched stage-one tail. `elapsed` is
/// measured wall time and is excluded from equality and serialization.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FinalRanking {
    pub mode: RerankMode,
    pub k: usize,
    pub model: String,
    pub weights: BTreeMap<String, f64>,
    pub entries: Vec<FinalEntry>,
    pub usage: UsageMeter,
    #[serde(skip)]
    pub elapsed: Duration,
}

impl PartialEq for FinalRanking {
    fn eq(&self, other: &Self) -> bool {
        self.mode == other.mode
            && self.k == other.k
            && self.model == other.model
            && self.weights == other.weights
            && self.entries == other.entries
            && self.usage == other.usage
    }
}

impl FinalRanking {
    pub fn head_len(&self) -> usize {
        self.entries.iter().filter(|e| e.reranked).count()
    }

    pub fn gui_ids(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.gui_id.as_str()).collect()
    }

    pub fn flagged(&self) -> impl Iterator<Item = &FinalEntry> {
        self.entries.iter().filter(|e| !e.flags.is_empty())
    }
}

/// `Σ w_d·score_d / (100·Σ w_d)` over dimensions with `w_d > 0`.
pub fn aggregate(scores: &BTreeMap<String, i64>, weights: &[(String, f64)]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (d, w) in weights.iter().filter(|(_, w)| *w > 0.0) {
        num += w * scores.get(d).copied().unwrap_or(0) as f64;
        den += w;
    }
    if den == 0.0 {
        0.0
    } else {
        num / (100.0 * den)
    }
}

pub fn rerank_schema(dimensions: &[&SearchDimension]) -> ResponseSchema {
    ResponseSchema::new(
        RERANK_SCHEMA,
        Schema::object(dimensions.iter().map(|d| (d.id.clone(), Schema::integer(0, 100)))),
    )
}

/// Prompt text for one candidate. In text mode `annotations` supplies the
/// candidate's description per dimension; in image mode the screenshot is
/// attached separately as the single image of the request.
pub fn build_rerank_prompt(
    query: &str,
    dimensions: &[&SearchDimension],
    mode: RerankMode,
    annotations: Option<&BTreeMap<String, String>>,
) -> String {
    let mut p = String::from(
        "You judge how well a graphical user interface matches a user's requirement. Score \
         the match separately for each of these dimensions with an integer from 0 (no match) \
         to 100 (perfect match):\n",
    );
    for d in dimensions {
        p.push_str(&format!("- \"{}\" ({}): {}\n", d.id, d.name, d.description));
    }
    p.push_str("\nRequirement:\n");
    p.push_str(query);
    p.push_str("\n\n");
    match mode {
        RerankMode::Text => {
            p.push_str("The GUI is described as follows:\n");
            if let Some(a) = annotations {
                for d in dimensions {
                    if let Some(text) = a.get(&d.id) {
                        p.push_str(&format!("- {}: {}\n", d.id, text));
                    }
                }
            }
        }
        RerankMode::Image => p.push_str("The GUI is shown in the attached screenshot.\n"),
    }
    p.push_str(
        "\nReturn one JSON object keyed by dimension id with an integer score for each, and \
         nothing else.",
    );
    p
}

/// Integer scores for every id in `dimensions`, clamped to [0, 100].
/// Returns the scores and whether any value had to be clamped.
pub fn parse_scores(
    value: &Value,
    dimensions: &[&str],
) -> Result<(BTreeMap<String, i64>, bool), String> {
    let obj = value
        .as_object()
        .ok_or_else(|| format!("expected an object of scores, got {value}"))?;
    let mut out = BTreeMap::new();
    let mut clamped = false;
    for d in dimensions {
        let v = obj.get(*d).ok_or_else(|| format!("missing score for \"{d}\""))?;
        let n = as_integer(v).ok_or_else(|| format!("score for \"{d}\" is not an integer: {v}"))?;
        let c = n.clamp(0, 100);
        clamped |= c != n;
        out.insert(d.to_string(), c);
    }
    Ok((out, clamped))
}

enum Payload {
    Text(BTreeMap<String, String>),
    Image(Vec<u8>, &'static str),
}

enum Outcome {
    Scored(RerankScore),
    Failed(String, UsageMeter),
}

/// Reranks the top `request.k` stage-one candidates.
pub fn rerank(
    stage1: &StageOneResult,
    request: &RerankRequest,
    dimensions: &DimensionSet,
    store: &AnnotationStore,
    gateway: &Gateway,
) -> Result<FinalRanking, RerankError> {
    request.validate()?;
    if stage1.is_empty() {
        return Err(RerankError::EmptyCandidates);
    }
    let weights = WeightProfile::resolve(dimensions, &request.weights)?;
    let weighted: Vec<&SearchDimension> =
        dimensions.iter().filter(|d| weights.get(&d.id) > 0.0).collect();
    if weighted.is_empty() {
        return Err(RerankError::NoWeightedDimensions);
    }
    let weight_list: Vec<(String, f64)> =
        weighted.iter().map(|d| (d.id.clone(), weights.get(&d.id))).collect();
    let ids: Vec<&str> = weighted.iter().map(|d| d.id.as_str()).collect();
    let schema = rerank_schema(&weighted);
    let started = Instant::now();

    let head = &stage1.entries[..request.k.min(stage1.len())];

    // Gather payloads first so precondition failures surface before any call.
    let mut payloads = Vec::with_capacity(head.len());
    for e in head {
        let payload = match request.mode {
            RerankMode::Text => {
                let stored = store.get(&e.gui_id);
                let mut a = BTreeMap::new();
                for d in &ids {
                    let text = stored.and_then(|s| s.annotations.get(*d)).ok_or_else(|| {
                        RerankError::MissingAnnotation {
                            gui_id: e.gui_id.clone(),
                            dimension: d.to_string(),
                        }
                    })?;
                    a.insert(d.to_string(), text.clone());
                }
                Payload::Text(a)
            }
            RerankMode::Image => {
                let path = store.image_file(&e.gui_id).ok_or_else(|| RerankError::MissingImage {
                    gui_id: e.gui_id.clone(),
                    reason: "not in the annotation store".into(),
                })?;
                let bytes = std::fs::read(&path).map_err(|err| RerankError::MissingImage {
                    gui_id: e.gui_id.clone(),
                    reason: format!("{}: {err}", path.display()),
                })?;
                if bytes.is_empty() {
                    return Err(RerankError::MissingImage {
                        gui_id: e.gui_id.clone(),
                        reason: format!("{} is empty", path.display()),
                    });
                }
                Payload::Image(bytes, mime_for_path(&path))
            }
        };
        payloads.push(payload);
    }

    let score_one = |i: usize| -> Result<Outcome, GatewayError> {
        let gui_id = &head[i].gui_id;
        let parse = |v: &Value| parse_scores(v, &ids);
        let result = match &payloads[i] {
            Payload::Text(a) => {
                let prompt = build_rerank_prompt(&request.query, &weighted, request.mode, Some(a));
                gateway.complete_validated(&prompt, None, &schema, parse)
            }
            Payload::Image(bytes, mime) => {
                let prompt = build_rerank_prompt(&request.query, &weighted, request.mode, None);
                let image = ImageInput { bytes, mime };
                gateway.complete_validated(&prompt, Some(image), &schema, parse)
            }
        };
        match result {
            Ok(((scores, clamped), usage)) => Ok(Outcome::Scored(RerankScore {
                gui_id: gui_id.clone(),
                aggregate: aggregate(&scores, &weight_list),
                scores,
                usage,
                flags: if clamped { vec![FLAG_CLAMPED.into()] } else { Vec::new() },
            })),
            Err(e @ (GatewayError::Rejected(_) | GatewayError::Capability { .. })) => Err(e),
            Err(e) => {
                tracing::warn!(%gui_id, error = %e, "rerank scoring failed");
                let usage = UsageMeter {
                    request_count: match &e {
                        GatewayError::Transport { attempts, .. }
                        | GatewayError::SchemaViolation { attempts, .. } => *attempts as u64,
                        _ => 0,
                    },
                    ..UsageMeter::default()
                };
                Ok(Outcome::Failed(e.to_string(), usage))
            }
        }
    };

    // Results are keyed by head position, never by arrival order.
    let results: Mutex<Vec<Option<Outcome>>> = Mutex::new((0..head.len()).map(|_| None).collect());
    let abort: Mutex<Option<GatewayError>> = Mutex::new(None);
    let cursor = AtomicUsize::new(0);
    let workers = request.width.min(head.len().div_ceil(request.batch_size)).max(1);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                if abort.lock().unwrap().is_some() {
                    break;
                }
                let start = cursor.fetch_add(request.batch_size, Ordering::SeqCst);
                if start >= head.len() {
                    break;
                }
                for i in start..(start + request.batch_size).min(head.len()) {
                    match score_one(i) {
                        Ok(outcome) => results.lock().unwrap()[i] = Some(outcome),
                        Err(e) => {
                            abort.lock().unwrap().get_or_insert(e);
                            return;
                        }
                    }
                }
            });
        }
    });
    let results = results.into_inner().unwrap();

    let mut usage = UsageMeter::default();
    let mut scored = Vec::with_capacity(head.len());
    let mut failed = 0;
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Some(Outcome::Scored(s)) => {
                usage.merge(&s.usage);
                scored.push((i, s));
            }
            Some(Outcome::Failed(msg, meter)) => {
                usage.merge(&meter);
                failed += 1;
                scored.push((
                    i,
                    RerankScore {
                        gui_id: head[i].gui_id.clone(),
                        scores: ids.iter().map(|d| (d.to_string(), 0)).collect(),
                        aggregate: 0.0,
                        usage: meter,
                        flags: vec![FLAG_FAILED.into(), msg],
                    },
                ));
            }
            None => {}
        }
    }
    if let Some(e) = abort.into_inner().unwrap() {
        return Err(RerankError::ProviderDown {
            message: e.to_string(),
            scored: scored.len() - failed,
            attempted: head.len(),
            usage,
        });
    }

    scored.sort_by(|(ia, a), (ib, b)| {
        b.aggregate
            .total_cmp(&a.aggregate)
            .then_with(|| head[*ib].total.total_cmp(&head[*ia].total))
            .then_with(|| a.gui_id.cmp(&b.gui_id))
    });
    let mut entries: Vec<FinalEntry> = scored
        .into_iter()
        .map(|(i, s)| FinalEntry {
            rank: 0,
            gui_id: s.gui_id,
            stage_one_total: head[i].total,
            reranked: true,
            aggregate: Some(s.aggregate),
            scores: s.scores,
            flags: s.flags,
        })
        .collect();
    entries.extend(stage1.entries[head.len()..].iter().map(|e| FinalEntry {
        rank: 0,
        gui_id: e.gui_id.clone(),
        stage_one_total: e.total,
        reranked: false,
        aggregate: None,
        scores: BTreeMap::new(),
        flags: Vec::new(),
    }));
    for (i, e) in entries.iter_mut().enumerate() {
        e.rank = i + 1;
    }

    Ok(FinalRanking {
        mode: request.mode,
        k: request.k,
        model: gateway.model_id(),
        weights: weight_list.into_iter().collect(),
        entries,
        usage,
        elapsed: started.elapsed(),
    })
}
