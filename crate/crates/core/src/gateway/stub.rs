//! Deterministic offline provider.
//!
//! Every reply is a pure function of the request: structured values are
//! derived from SHA-256 of the prompt (plus image bytes), embeddings from
//! hashed word features. Nothing here touches the network or the clock, so
//! stub runs are reproducible across machines.

use std::time::Duration;

use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use super::schema::{ResponseSchema, Schema};
use super::{ChatReply, ChatRequest, EmbedReply, Provider, ProviderError};

/// Width of stub embedding vectors.
pub const STUB_EMBED_WIDTH: usize = 64;

/// Schema name the stub answers with a rule-based query decomposition.
pub const DECOMPOSITION_SCHEMA: &str = "query_decomposition";

pub const REQUIREMENT_OPEN: &str = "<requirement>";
pub const REQUIREMENT_CLOSE: &str = "</requirement>";

#[derive(Debug, Clone, Default)]
pub struct StubProvider {
    canned: Vec<(String, String)>,
}

impl StubProvider {
    pub fn new() -> Self {
        Self::default()
    }

    /// Replies with `reply` verbatim whenever the prompt contains `trigger`.
    /// The first matching trigger wins.
    pub fn with_canned(mut self, trigger: &str, reply: Value) -> Self {
        self.canned.push((trigger.to_string(), reply.to_string()));
        self
    }

    fn reply_for(&self, request: &ChatRequest<'_>) -> String {
        if let Some((_, reply)) = self
            .canned
            .iter()
            .find(|(trigger, _)| request.prompt.contains(trigger.as_str()))
        {
            return reply.clone();
        }
        if request.schema.name == DECOMPOSITION_SCHEMA {
            if let (Some(requirement), Schema::Object(fields)) =
                (extract_requirement(request.prompt), &request.schema.root)
            {
                let dims: Vec<&str> = fields.iter().map(|f| f.key.as_str()).collect();
                return heuristic_decomposition(requirement, &dims).to_string();
            }
        }
        let mut seed = request.prompt.as_bytes().to_vec();
        if let Some(img) = &request.image {
            seed.extend_from_slice(img.bytes);
        }
        generate(&request.schema.root, &seed, None).to_string()
    }
}

impl Provider for StubProvider {
    fn name(&self) -> &str {
        "stub"
    }

    fn supports_images(&self) -> bool {
        true
    }

    fn chat(&self, request: &ChatRequest<'_>) -> Result<ChatReply, ProviderError> {
        let text = self.reply_for(request);
        let mut input_tokens = approx_tokens(request.prompt);
        if let Some(img) = &request.image {
            input_tokens += 85 + (img.bytes.len() as u64).div_ceil(256);
        }
        let output_tokens = approx_tokens(&text);
        Ok(ChatReply {
            text,
            input_tokens,
            output_tokens,
            latency: Some(synthetic_latency(input_tokens, output_tokens)),
        })
    }

    fn embed(
        &self,
        _model: &str,
        texts: &[String],
        _timeout: Duration,
    ) -> Result<EmbedReply, ProviderError> {
        let vectors: Vec<Vec<f32>> = texts.iter().map(|t| stub_embedding(t)).collect();
        let input_tokens: u64 = texts.iter().map(|t| words(t).len().max(1) as u64).sum();
        Ok(EmbedReply {
            vectors,
            input_tokens,
            latency: Some(synthetic_latency(input_tokens, 0)),
        })
    }
}

/// Roughly four characters per token, at least one.
fn approx_tokens(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4).max(1)
}

fn synthetic_latency(input_tokens: u64, output_tokens: u64) -> Duration {
    Duration::from_micros(20_000 + 50 * input_tokens + 1_000 * output_tokens)
}

/// First eight bytes of SHA-256, big-endian.
pub fn hash64(bytes: &[u8]) -> u64 {
    let digest = Sha256::digest(bytes);
    u64::from_be_bytes(digest[..8].try_into().expect("sha256 has 32 bytes"))
}

fn child_seed(seed: &[u8], part: &str) -> Vec<u8> {
    let mut s = seed.to_vec();
    s.push(b'/');
    s.extend_from_slice(part.as_bytes());
    s
}

fn generate(schema: &Schema, seed: &[u8], key: Option<&str>) -> Value {
    match schema {
        Schema::Integer { min, max } => {
            let span = (max - min).unsigned_abs() + 1;
            json!(*min.min(max) + (hash64(seed) % span) as i64)
        }
        Schema::Text => Value::String(stub_phrase(seed, key)),
        Schema::Array(item) => {
            let n = hash64(seed) % 3;
            (0..n)
                .map(|i| generate(item, &child_seed(seed, &i.to_string()), key))
                .collect()
        }
        Schema::Object(fields) => {
            let mut obj = Map::new();
            for f in fields {
                obj.insert(
                    f.key.clone(),
                    generate(&f.schema, &child_seed(seed, &f.key), Some(&f.key)),
                );
            }
            Value::Object(obj)
        }
    }
}

fn vocabulary(key: Option<&str>) -> &'static [&'static str] {
    match key {
        Some("domain") => &[
            "food delivery", "banking", "fitness", "travel", "shopping", "social network",
            "news", "music streaming", "weather", "education", "health", "real estate",
        ],
        Some("functionality") => &[
            "login", "sign up", "search", "checkout", "settings", "profile editing",
            "messaging", "map navigation", "booking", "payment", "media playback", "onboarding",
        ],
        Some("design") => &[
            "modern", "dark", "light", "minimal", "colorful", "flat", "material", "blue",
            "green", "red", "white background", "card based",
        ],
        Some("gui_components") => &[
            "button", "text field", "list", "tab bar", "map", "image grid", "navigation drawer",
            "toolbar", "checkbox", "slider", "search bar", "floating action button",
        ],
        Some("displayed_text") => &[
            "Welcome", "Sign in", "Continue", "Order now", "Settings", "Search", "Your cart",
            "Profile", "Book now", "Play", "Forgot password", "Checkout",
        ],
        _ => &[
            "screen", "content", "header", "footer", "overview", "details", "summary", "panel",
        ],
    }
}

/// Two or three distinct vocabulary entries picked by the seed.
fn stub_phrase(seed: &[u8], key: Option<&str>) -> String {
    let vocab = vocabulary(key);
    let h = hash64(seed);
    let count = 2 + (h % 2) as usize;
    let mut picked: Vec<&str> = Vec::with_capacity(count);
    let mut state = h;
    while picked.len() < count.min(vocab.len()) {
        state = hash64(&state.to_be_bytes());
        let w = vocab[(state % vocab.len() as u64) as usize];
        if !picked.contains(&w) {
            picked.push(w);
        }
    }
    picked.join(", ")
}

/// Lowercased alphanumeric runs.
pub fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Pseudo-random direction for one feature, components in [-1, 1].
fn feature_vector(feature: &str) -> [f64; STUB_EMBED_WIDTH] {
    let mut out = [0.0; STUB_EMBED_WIDTH];
    for (block, chunk) in out.chunks_mut(32).enumerate() {
        let mut h = Sha256::new();
        h.update(feature.as_bytes());
        h.update([block as u8]);
        let digest = h.finalize();
        for (x, b) in chunk.iter_mut().zip(digest.iter()) {
            *x = (f64::from(*b) - 127.5) / 127.5;
        }
    }
    out
}

/// Stub embedding: the sum of per-word hashed directions, L2-normalized.
/// Texts with no alphanumeric words hash as a single feature. Equal texts
/// give equal vectors and texts sharing words have positive overlap.
pub fn stub_embedding(text: &str) -> Vec<f32> {
    let mut acc = [0.0f64; STUB_EMBED_WIDTH];
    let ws = words(text);
    let features: Vec<String> = if ws.is_empty() {
        vec![text.to_string()]
    } else {
        ws
    };
    for f in &features {
        for (a, x) in acc.iter_mut().zip(feature_vector(f)) {
            *a += x;
        }
    }
    let norm = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
    acc.iter().map(|x| (x / norm) as f32).collect()
}

pub fn extract_requirement(prompt: &str) -> Option<&str> {
    let start = prompt.find(REQUIREMENT_OPEN)? + REQUIREMENT_OPEN.len();
    let end = start + prompt[start..].find(REQUIREMENT_CLOSE)?;
    Some(prompt[start..end].trim())
}

const NEGATIONS: &[&str] = &["not", "no", "without", "avoid", "except", "non", "never"];

const FILLER: &[&str] = &[
    "a", "an", "the", "with", "for", "of", "that", "which", "has", "have", "having", "is", "are",
    "be", "looking", "look", "looks", "design", "style", "styled", "screen", "screens", "app",
    "application", "page", "ui", "gui", "interface", "view", "i", "want", "need", "show", "shows",
    "showing", "some", "any", "should", "like", "in", "on", "to", "it",
];

fn cue_words(dim: &str) -> &'static [&'static str] {
    match dim {
        "design" => &[
            "modern", "dark", "light", "minimal", "minimalist", "colorful", "colourful", "flat",
            "material", "blue", "green", "red", "white", "black", "yellow", "purple", "orange",
            "color", "colour", "theme", "style", "design", "looking", "clean", "elegant",
            "gradient", "bright", "retro",
        ],
        "gui_components" => &[
            "button", "buttons", "field", "fields", "list", "tab", "tabs", "map", "image",
            "images", "grid", "drawer", "toolbar", "checkbox", "slider", "bar", "menu", "icon",
            "icons", "form", "input", "carousel", "dialog", "switch", "toggle",
        ],
        "functionality" => &[
            "login", "log", "sign", "signin", "signup", "register", "registration", "search",
            "checkout", "pay", "payment", "settings", "profile", "chat", "message", "messaging",
            "book", "booking", "navigate", "navigation", "play", "upload", "share", "order",
            "filter", "edit", "compose",
        ],
        "domain" => &[
            "food", "delivery", "restaurant", "bank", "banking", "fitness", "travel", "shopping",
            "shop", "news", "music", "weather", "education", "health", "hotel", "finance",
            "social", "game", "sports", "recipe", "taxi", "dating", "store",
        ],
        _ => &[],
    }
}

/// Rule-based decomposition used by the offline stub: clauses split on
/// punctuation and conjunctions, negation words flip polarity, and each
/// clause goes to the dimension whose cue words it mentions most (quoted
/// text goes to `displayed_text`).
pub fn heuristic_decomposition(requirement: &str, dims: &[&str]) -> Value {
    let mut out: Vec<(Vec<String>, Vec<String>)> = vec![(Vec::new(), Vec::new()); dims.len()];
    let lowered = requirement.to_lowercase();
    let mut clauses: Vec<String> = vec![lowered];
    for sep in [",", ";", ".", " but ", " and ", " while "] {
        clauses = clauses
            .iter()
            .flat_map(|c| c.split(sep).map(str::to_string).collect::<Vec<_>>())
            .collect();
    }

    let text_dim = dims.iter().position(|d| *d == "displayed_text");
    for clause in clauses {
        let ws = words(&clause);
        if ws.is_empty() {
            continue;
        }
        let negative = ws.iter().any(|w| NEGATIONS.contains(&w.as_str()));
        let quoted: Vec<&str> = clause.split('"').skip(1).step_by(2).collect();
        if let (Some(ti), false) = (text_dim, quoted.is_empty()) {
            for q in quoted.iter().filter(|q| !q.trim().is_empty()) {
                let slot = &mut out[ti];
                let list = if negative { &mut slot.1 } else { &mut slot.0 };
                list.push(q.trim().to_string());
            }
            continue;
        }
        let best = dims
            .iter()
            .enumerate()
            .map(|(i, d)| {
                let cues = cue_words(d);
                (i, ws.iter().filter(|w| cues.contains(&w.as_str())).count())
            })
            .filter(|(_, n)| *n > 0)
            .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
            .or_else(|| dims.iter().position(|d| *d == "domain"))
            .unwrap_or(0);
        let phrase: Vec<&str> = ws
            .iter()
            .map(String::as_str)
            .filter(|w| !NEGATIONS.contains(w) && !FILLER.contains(w))
            .collect();
        if phrase.is_empty() {
            continue;
        }
        let slot = &mut out[best];
        let list = if negative { &mut slot.1 } else { &mut slot.0 };
        list.push(phrase.join(" "));
    }

    let mut obj = Map::new();
    for (d, (pos, neg)) in dims.iter().zip(out) {
        obj.insert(d.to_string(), json!({"positives": pos, "negatives": neg}));
    }
    Value::Object(obj)
}

/// Schema-shaped value the stub would produce for `schema` given `seed`;
/// exposed for tests that recompute stub replies.
pub fn stub_value(schema: &ResponseSchema, seed: &[u8]) -> Value {
    generate(&schema.root, seed, None)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cosine(a: &[f32], b: &[f32]) -> f64 {
        a.iter().zip(b).map(|(x, y)| f64::from(*x) * f64::from(*y)).sum()
    }

    #[test]
    fn embedding_is_unit_and_deterministic() {
        let a = stub_embedding("a");
        let norm: f64 = a.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
        assert_eq!(a, stub_embedding("a"));
        assert_eq!(a.len(), STUB_EMBED_WIDTH);
    }

    #[test]
    fn distinct_texts_are_not_parallel() {
        let (a, b) = (stub_embedding("a"), stub_embedding("b"));
        // Independent recomputation of the single-feature direction for "a".
        let digest0 = Sha256::digest([b"a".as_slice(), &[0u8]].concat());
        let x0 = (f64::from(digest0[0]) - 127.5) / 127.5;
        let raw = feature_vector("a");
        let n = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((f64::from(a[0]) - x0 / n).abs() < 1e-6);
        assert!(cosine(&a, &b) < 1.0);
    }

    #[test]
    fn shared_words_overlap_more_than_disjoint_ones() {
        let base = stub_embedding("modern dark login");
        let near = stub_embedding("modern dark");
        let far = stub_embedding("banking weather");
        assert!(cosine(&base, &near) > cosine(&base, &far));
    }

    #[test]
    fn decomposes_the_modern_not_dark_example() {
        let dims = ["domain", "functionality", "design", "gui_components", "displayed_text"];
        let v = heuristic_decomposition("modern looking design, not dark", &dims);
        assert_eq!(v["design"]["positives"], json!(["modern"]));
        assert_eq!(v["design"]["negatives"], json!(["dark"]));
        assert_eq!(v["domain"]["positives"], json!([]));
    }

    #[test]
    fn quoted_text_goes_to_displayed_text() {
        let dims = ["domain", "displayed_text"];
        let v = heuristic_decomposition("a screen saying \"Order now\"", &dims);
        assert_eq!(v["displayed_text"]["positives"], json!(["order now"]));
    }

    #[test]
    fn requirement_extraction() {
        assert_eq!(
            extract_requirement("x\n<requirement>\n find me \n</requirement>\ny"),
            Some("find me")
        );
        assert_eq!(extract_requirement("nothing"), None);
    }

    #[test]
    fn generated_phrases_are_non_empty_and_distinct_words() {
        let p = stub_phrase(b"seed", Some("design"));
        let parts: Vec<&str> = p.split(", ").collect();
        assert!(parts.len() >= 2);
        assert!(parts.iter().all(|w| vocabulary(Some("design")).contains(w)));
    }
}
