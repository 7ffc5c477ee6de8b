//! Gold-standard relevance judgments and ranking files.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EvalError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub gui_id: String,
    pub grade: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldQuery {
    pub query_id: String,
    #[serde(default)]
    pub text: String,
    pub candidates: Vec<Candidate>,
}

impl GoldQuery {
    pub fn grades(&self) -> BTreeMap<String, u32> {
        self.candidates
            .iter()
            .map(|c| (c.gui_id.clone(), c.grade))
            .collect()
    }

    pub fn relevant(&self, threshold: u32) -> BTreeSet<String> {
        self.candidates
            .iter()
            .filter(|c| c.grade >= threshold)
            .map(|c| c.gui_id.clone())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldStandard {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_grade: Option<u32>,
    pub queries: Vec<GoldQuery>,
}

/// query_id to ranked gui_ids.
pub type Rankings = BTreeMap<String, Vec<String>>;

impl GoldStandard {
    pub fn new(queries: Vec<GoldQuery>) -> Result<Self, EvalError> {
        let g = Self {
            max_grade: None,
            queries,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        let mut seen = BTreeSet::new();
        for q in &self.queries {
            if !seen.insert(q.query_id.as_str()) {
                return Err(EvalError::Invalid(format!("duplicate query_id \"{}\"", q.query_id)));
            }
            if q.candidates.is_empty() {
                return Err(EvalError::Invalid(format!("query \"{}\" has no candidates", q.query_id)));
            }
            let mut guis = BTreeSet::new();
            for c in &q.candidates {
                if !guis.insert(c.gui_id.as_str()) {
                    return Err(EvalError::Invalid(format!(
                        "query \"{}\" lists \"{}\" twice",
                        q.query_id, c.gui_id
                    )));
                }
                if let Some(max) = self.max_grade {
                    if c.grade > max {
                        return Err(EvalError::Invalid(format!(
                            "query \"{}\": grade {} of \"{}\" exceeds max grade {max}",
                            q.query_id, c.grade, c.gui_id
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn get(&self, query_id: &str) -> Option<&GoldQuery> {
        self.queries.iter().find(|q| q.query_id == query_id)
    }

    pub fn from_json(text: &str) -> Result<Self, EvalError> {
        let g: GoldStandard =
            serde_json::from_str(text).map_err(|e| EvalError::Parse(e.to_string()))?;
        g.validate()?;
        Ok(g)
    }

    /// CSV with a header naming `query_id`, `gui_id`, `grade` and optionally
    /// `text`. Query order follows first appearance.
    pub fn from_csv(text: &str) -> Result<Self, EvalError> {
        #[derive(Deserialize)]
        struct Row {
            query_id: String,
            gui_id: String,
            grade: u32,
            #[serde(default)]
            text: Option<String>,
        }
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let mut queries: Vec<GoldQuery> = Vec::new();
        for (i, row) in reader.deserialize::<Row>().enumerate() {
            let row = row.map_err(|e| EvalError::Parse(format!("csv row {}: {e}", i + 1)))?;
            let pos = match queries.iter().position(|q| q.query_id == row.query_id) {
                Some(p) => p,
                None => {
                    queries.push(GoldQuery {
                        query_id: row.query_id.clone(),
                        text: String::new(),
                        candidates: Vec::new(),
                    });
                    queries.len() - 1
                }
            };
            let q = &mut queries[pos];
            if let Some(t) = row.text.filter(|t| !t.is_empty()) {
                if q.text.is_empty() {
                    q.text = t;
                }
            }
            q.candidates.push(Candidate {
                gui_id: row.gui_id,
                grade: row.grade,
            });
        }
        GoldStandard::new(queries)
    }

    /// JSON, or CSV when the extension is `.csv`.
    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| EvalError::Io(format!("{}: {e}", path.display())))?;
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
            Self::from_csv(&text)
        } else {
            Self::from_json(&text)
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("gold standard serializes")
    }

    /// Candidates sorted by grade descending, ties by gui_id.
    pub fn oracle_rankings(&self) -> Rankings {
        self.queries
            .iter()
            .map(|q| {
                let mut c: Vec<&Candidate> = q.candidates.iter().collect();
                c.sort_by(|a, b| b.grade.cmp(&a.grade).then_with(|| a.gui_id.cmp(&b.gui_id)));
                (q.query_id.clone(), c.into_iter().map(|c| c.gui_id.clone()).collect())
            })
            .collect()
    }

    pub fn reversed_oracle_rankings(&self) -> Rankings {
        self.oracle_rankings()
            .into_iter()
            .map(|(q, mut r)| {
                r.reverse();
                (q, r)
            })
            .collect()
    }

    /// Uniformly shuffled candidate pools.
    pub fn random_rankings(&self, seed: u64) -> Rankings {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.queries
            .iter()
            .map(|q| {
                let mut r: Vec<String> = q.candidates.iter().map(|c| c.gui_id.clone()).collect();
                r.shuffle(&mut rng);
                (q.query_id.clone(), r)
            })
            .collect()
    }
}

/// Random gold standard with grades uniform in `0..=max_grade`.
pub fn synthetic_gold(queries: usize, candidates: usize, max_grade: u32, seed: u64) -> GoldStandard {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    GoldStandard {
        max_grade: Some(max_grade),
        queries: (0..queries)
            .map(|q| GoldQuery {
                query_id: format!("q{:03}", q + 1),
                text: format!("synthetic query {}", q + 1),
                candidates: (0..candidates)
                    .map(|c| Candidate {
                        gui_id: format!("q{:03}-gui{:02}", q + 1, c + 1),
                        grade: rng.random_range(0..=max_grade),
                    })
                    .collect(),
            })
            .collect(),
    }
}

/// Reads a rankings file: a JSON object mapping query ids to arrays of
/// gui ids, optionally wrapped as `{"rankings": {...}}`. Array elements may
/// also be objects carrying a `gui_id` field, as in search output.
pub fn load_rankings(path: &Path) -> Result<Rankings, EvalError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| EvalError::Io(format!("{}: {e}", path.display())))?;
    parse_rankings(&text)
}

pub fn parse_rankings(text: &str) -> Result<Rankings, EvalError> {
    let v: serde_json::Value =
        serde_json::from_str(text).map_err(|e| EvalError::Parse(e.to_string()))?;
    let obj = v
        .get("rankings")
        .unwrap_or(&v)
        .as_object()
        .ok_or_else(|| EvalError::Parse("rankings must be a JSON object".into()))?;
    let mut out = Rankings::new();
    for (q, list) in obj {
        let items = list
            .as_array()
            .ok_or_else(|| EvalError::Parse(format!("ranking for \"{q}\" is not an array")))?;
        let ids = items
            .iter()
            .map(|it| {
                it.as_str()
                    .or_else(|| it.get("gui_id").and_then(|g| g.as_str()))
                    .map(str::to_string)
                    .ok_or_else(|| EvalError::Parse(format!("bad entry in ranking for \"{q}\": {it}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        out.insert(q.clone(), ids);
    }
    Ok(out)
}

pub fn rankings_to_json(rankings: &Rankings) -> String {
    serde_json::to_string_pretty(rankings).expect("rankings serialize")
}
