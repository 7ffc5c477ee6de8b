//! One interface over chat/embedding model providers.
//!
//! [`Gateway`] wraps a [`Provider`] with the request ceiling, retry loop,
//! structured-output validation and usage metering. Providers only move
//! bytes; everything else lives here.

mod http;
mod limiter;
pub mod schema;
pub mod stub;
mod usage;

use std::fmt;
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub use http::{AnthropicProvider, GoogleProvider, OpenAiProvider};
pub use limiter::{Limiter, Permit};
pub use schema::{Field, ResponseSchema, Schema};
pub use stub::StubProvider;
pub use usage::{cost_of, ModelPrice, PriceTable, UsageMeter};

pub const DEFAULT_TEMPERATURE: f64 = 0.05;
pub const DEFAULT_MAX_RETRIES: u32 = 2;
pub const DEFAULT_CONCURRENCY: usize = 10;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("provider \"{provider}\" does not support {capability}")]
    Capability {
        provider: String,
        capability: String,
    },
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport {
        attempts: u32,
        message: String,
        raw: Option<String>,
    },
    #[error("reply violated the expected schema after {attempts} attempt(s): {message}")]
    SchemaViolation {
        attempts: u32,
        message: String,
        raw: String,
    },
    #[error("provider rejected the request: {0}")]
    Rejected(String),
    #[error("unknown model \"{0}\"")]
    UnknownModel(String),
    #[error("configuration error: {0}")]
    Config(String),
}

/// Errors a provider reports for a single attempt.
#[derive(Debug, Clone, Error)]
pub enum ProviderError {
    /// Network errors, timeouts, 429 and 5xx; worth retrying.
    #[error("{message}")]
    Transient { message: String, raw: Option<String> },
    /// Auth failures and other 4xx; not retried.
    #[error("{0}")]
    Fatal(String),
    #[error("{0} is not supported")]
    Unsupported(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    OpenAi,
    Google,
    Anthropic,
    Stub,
}

impl ProviderKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ProviderKind::OpenAi => "openai",
            ProviderKind::Google => "google",
            ProviderKind::Anthropic => "anthropic",
            ProviderKind::Stub => "stub",
        }
    }

    /// Best guess from a model name: `gpt-*`, `o*`, `text-embedding-*` are
    /// OpenAI, `gemini*`/`text-embedding-004` Google, `claude*` Anthropic.
    pub fn infer(model: &str) -> Option<Self> {
        let m = model.to_ascii_lowercase();
        if m.starts_with("stub") {
            Some(ProviderKind::Stub)
        } else if m.starts_with("gemini") || m.starts_with("text-embedding-004") || m.starts_with("gemini-embedding") {
            Some(ProviderKind::Google)
        } else if m.starts_with("claude") {
            Some(ProviderKind::Anthropic)
        } else if m.starts_with("gpt") || m.starts_with("text-embedding") || m.starts_with('o') {
            Some(ProviderKind::OpenAi)
        } else {
            None
        }
    }
}

impl fmt::Display for ProviderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ProviderKind {
    type Err = GatewayError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "openai" => Ok(ProviderKind::OpenAi),
            "google" | "gemini" => Ok(ProviderKind::Google),
            "anthropic" => Ok(ProviderKind::Anthropic),
            "stub" => Ok(ProviderKind::Stub),
            other => Err(GatewayError::Config(format!("unknown provider \"{other}\""))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub provider: ProviderKind,
    pub model: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_timeout", with = "usage::duration_secs")]
    pub timeout: Duration,
}

fn default_temperature() -> f64 {
    DEFAULT_TEMPERATURE
}

fn default_retries() -> u32 {
    DEFAULT_MAX_RETRIES
}

fn default_timeout() -> Duration {
    Duration::from_secs(120)
}

impl ModelConfig {
    pub fn new(provider: ProviderKind, model: &str) -> Self {
        Self {
            provider,
            model: model.to_string(),
            temperature: DEFAULT_TEMPERATURE,
            max_retries: DEFAULT_MAX_RETRIES,
            timeout: default_timeout(),
        }
    }

    /// Provider inferred from the model name.
    pub fn for_model(model: &str) -> Result<Self, GatewayError> {
        let provider = ProviderKind::infer(model).ok_or_else(|| {
            GatewayError::Config(format!(
                "cannot infer a provider for model \"{model}\"; set it explicitly"
            ))
        })?;
        Ok(Self::new(provider, model))
    }

    pub fn stub(model: &str) -> Self {
        Self::new(ProviderKind::Stub, model)
    }

    /// Identity recorded in artifacts produced with this config. Stub output
    /// is tagged so it can never be mistaken for a real model's.
    pub fn model_id(&self) -> String {
        match self.provider {
            ProviderKind::Stub => format!("stub/{}", self.model),
            _ => self.model.clone(),
        }
    }

    /// Inverse of [`ModelConfig::model_id`].
    pub fn from_model_id(id: &str) -> Result<Self, GatewayError> {
        match id.strip_prefix("stub/") {
            Some(model) => Ok(Self::stub(model)),
            None => Self::for_model(id),
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(GatewayError::Config(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.model.trim().is_empty() {
            return Err(GatewayError::Config("empty model name".into()));
        }
        Ok(())
    }
}

/// Exponential backoff: `initial * 2^n`, capped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Backoff {
    pub initial: Duration,
    pub cap: Duration,
}

impl Default for Backoff {
    fn default() -> Self {
        Self {
            initial: Duration::from_millis(500),
            cap: Duration::from_secs(8),
        }
    }
}

impl Backoff {
    pub fn none() -> Self {
        Self {
            initial: Duration::ZERO,
            cap: Duration::ZERO,
        }
    }

    /// Delay before retry number `retry` (0-based).
    pub fn delay(&self, retry: u32) -> Duration {
        let factor = 2u32.saturating_pow(retry.min(31));
        self.initial.saturating_mul(factor).min(self.cap)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ImageInput<'a> {
    pub bytes: &'a [u8],
    pub mime: &'a str,
}

impl<'a> ImageInput<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self {
            bytes,
            mime: sniff_mime(bytes),
        }
    }
}

/// Image content type from magic bytes, defaulting to PNG.
pub fn sniff_mime(bytes: &[u8]) -> &'static str {
    if bytes.starts_with(&[0xFF, 0xD8, 0xFF]) {
        "image/jpeg"
    } else if bytes.starts_with(b"GIF8") {
        "image/gif"
    } else if bytes.len() >= 12 && &bytes[0..4] == b"RIFF" && &bytes[8..12] == b"WEBP" {
        "image/webp"
    } else {
        "image/png"
    }
}

pub fn mime_for_path(path: &Path) -> &'static str {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .as_deref()
    {
        Some("jpg") | Some("jpeg") => "image/jpeg",
        Some("gif") => "image/gif",
        Some("webp") => "image/webp",
        _ => "image/png",
    }
}

pub struct ChatRequest<'a> {
    pub model: &'a str,
    pub temperature: f64,
    pub prompt: &'a str,
    pub image: Option<ImageInput<'a>>,
    pub schema: &'a ResponseSchema,
    pub timeout: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatReply {
    pub text: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
    /// Provider-reported latency; the gateway measures it when absent.
    pub latency: Option<Duration>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbedReply {
    pub vectors: Vec<Vec<f32>>,
    pub input_tokens: u64,
    pub latency: Option<Duration>,
}

pub trait Provider: Send + Sync {
    fn name(&self) -> &str;

    fn supports_images(&self) -> bool;

    fn chat(&self, request: &ChatRequest<'_>) -> Result<ChatReply, ProviderError>;

    fn embed(&self, model: &str, texts: &[String], timeout: Duration)
        -> Result<EmbedReply, ProviderError>;
}

/// Builds the provider for a config. Network providers read
/// `<PROVIDER>_API_KEY` (and optionally `<PROVIDER>_BASE_URL`).
pub fn provider_for(config: &ModelConfig) -> Result<Arc<dyn Provider>, GatewayError> {
    Ok(match config.provider {
        ProviderKind::Stub => Arc::new(StubProvider::new()),
        ProviderKind::OpenAi => Arc::new(OpenAiProvider::from_env()?),
        ProviderKind::Google => Arc::new(GoogleProvider::from_env()?),
        ProviderKind::Anthropic => Arc::new(AnthropicProvider::from_env()?),
    })
}

const CORRECTIVE_INSTRUCTION: &str = "\n\nYour previous reply could not be used: ";

/// Model access with retries, validation, metering and a shared ceiling on
/// in-flight requests. Cheap to clone; clones share the limiter.
#[derive(Clone)]
pub struct Gateway {
    provider: Arc<dyn Provider>,
    config: ModelConfig,
    limiter: Arc<Limiter>,
    backoff: Backoff,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway")
            .field("provider", &self.provider.name())
            .field("config", &self.config)
            .finish()
    }
}

impl Gateway {
    pub fn new(config: ModelConfig) -> Result<Self, GatewayError> {
        config.validate()?;
        let provider = provider_for(&config)?;
        Ok(Self::with_provider(config, provider))
    }

    pub fn with_provider(config: ModelConfig, provider: Arc<dyn Provider>) -> Self {
        Self {
            provider,
            config,
            limiter: Arc::new(Limiter::new(DEFAULT_CONCURRENCY)),
            backoff: Backoff::default(),
        }
    }

    pub fn with_limiter(mut self, limiter: Arc<Limiter>) -> Self {
        self.limiter = limiter;
        self
    }

    pub fn with_backoff(mut self, backoff: Backoff) -> Self {
        self.backoff = backoff;
        self
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn model_id(&self) -> String {
        self.config.model_id()
    }

    pub fn supports_images(&self) -> bool {
        self.provider.supports_images()
    }

    pub fn complete_text(
        &self,
        prompt: &str,
        schema: &ResponseSchema,
    ) -> Result<(Value, UsageMeter), GatewayError> {
        self.complete_validated(prompt, None, schema, |v| Ok(v.clone()))
    }

    pub fn complete_with_image(
        &self,
        prompt: &str,
        image: ImageInput<'_>,
        schema: &ResponseSchema,
    ) -> Result<(Value, UsageMeter), GatewayError> {
        self.complete_validated(prompt, Some(image), schema, |v| Ok(v.clone()))
    }

    /// Chat completion whose reply must satisfy `schema` and then `parse`.
    /// Either failing counts as a schema violation and triggers a retry with
    /// a corrective note appended to the prompt. At most `1 + max_retries`
    /// attempts are made; the meter covers every attempt.
    pub fn complete_validated<T>(
        &self,
        prompt: &str,
        image: Option<ImageInput<'_>>,
        schema: &ResponseSchema,
        parse: impl Fn(&Value) -> Result<T, String>,
    ) -> Result<(T, UsageMeter), GatewayError> {
        if prompt.trim().is_empty() {
            return Err(GatewayError::Precondition("empty prompt".into()));
        }
        if let Some(img) = &image {
            if img.bytes.is_empty() {
                return Err(GatewayError::Precondition("empty image".into()));
            }
            if !self.provider.supports_images() {
                return Err(GatewayError::Capability {
                    provider: self.provider.name().to_string(),
                    capability: "image input".into(),
                });
            }
        }

        let max_attempts = 1 + self.config.max_retries;
        let mut meter = UsageMeter::default();
        let mut current_prompt = prompt.to_string();
        let mut attempt = 0;
        loop {
            attempt += 1;
            let request = ChatRequest {
                model: &self.config.model,
                temperature: self.config.temperature,
                prompt: &current_prompt,
                image,
                schema,
                timeout: self.config.timeout,
            };
            let started = Instant::now();
            let result = {
                let _permit = self.limiter.acquire();
                self.provider.chat(&request)
            };
            match result {
                Ok(reply) => {
                    meter.merge(&UsageMeter {
                        input_tokens: reply.input_tokens,
                        output_tokens: reply.output_tokens,
                        wall_time: reply.latency.unwrap_or_else(|| started.elapsed()),
                        request_count: 1,
                    });
                    let problem = match schema::extract_json(&reply.text) {
                        None => "the reply was not valid JSON".to_string(),
                        Some(value) => match schema.validate(&value).and_then(|_| parse(&value)) {
                            Ok(parsed) => return Ok((parsed, meter)),
                            Err(msg) => msg,
                        },
                    };
                    if attempt >= max_attempts {
                        return Err(GatewayError::SchemaViolation {
                            attempts: attempt,
                            message: problem,
                            raw: reply.text,
                        });
                    }
                    tracing::debug!(attempt, %problem, "schema violation, retrying");
                    current_prompt = format!(
                        "{prompt}{CORRECTIVE_INSTRUCTION}{problem}. Reply with one JSON value that matches the schema exactly, with no other text."
                    );
                }
                Err(ProviderError::Transient { message, raw }) => {
                    meter.request_count += 1;
                    if attempt >= max_attempts {
                        return Err(GatewayError::Transport {
                            attempts: attempt,
                            message,
                            raw,
                        });
                    }
                    tracing::debug!(attempt, %message, "transient provider failure, retrying");
                    std::thread::sleep(self.backoff.delay(attempt - 1));
                }
                Err(ProviderError::Fatal(message)) => return Err(GatewayError::Rejected(message)),
                Err(ProviderError::Unsupported(what)) => {
                    return Err(GatewayError::Capability {
                        provider: self.provider.name().to_string(),
                        capability: what,
                    })
                }
            }
        }
    }

    /// Embeds texts, returning one L2-normalized vector per input.
    pub fn embed_text(&self, texts: &[String]) -> Result<(Vec<Vec<f32>>, UsageMeter), GatewayError> {
        if texts.is_empty() {
            return Err(GatewayError::Precondition("no texts to embed".into()));
        }
        if let Some(i) = texts.iter().position(|t| t.trim().is_empty()) {
            return Err(GatewayError::Precondition(format!("text {i} is empty")));
        }
        let max_attempts = 1 + self.config.max_retries;
        let mut meter = UsageMeter::default();
        let mut attempt = 0;
        loop {
            attempt += 1;
            let started = Instant::now();
            let result = {
                let _permit = self.limiter.acquire();
                self.provider.embed(&self.config.model, texts, self.config.timeout)
            };
            match result {
                Ok(reply) => {
                    meter.merge(&UsageMeter {
                        input_tokens: reply.input_tokens,
                        output_tokens: 0,
                        wall_time: reply.latency.unwrap_or_else(|| started.elapsed()),
                        request_count: 1,
                    });
                    if reply.vectors.len() != texts.len() {
                        return Err(GatewayError::Rejected(format!(
                            "provider returned {} vectors for {} texts",
                            reply.vectors.len(),
                            texts.len()
                        )));
                    }
                    let width = reply.vectors.first().map_or(0, Vec::len);
                    let mut out = Vec::with_capacity(reply.vectors.len());
                    for (i, v) in reply.vectors.into_iter().enumerate() {
                        if v.len() != width || width == 0 {
                            return Err(GatewayError::Rejected(format!(
                                "vector {i} has width {} (expected {width})",
                                v.len()
                            )));
                        }
                        out.push(normalize(v).ok_or_else(|| {
                            GatewayError::Rejected(format!("vector {i} has zero or non-finite norm"))
                        })?);
                    }
                    return Ok((out, meter));
                }
                Err(ProviderError::Transient { message, raw }) => {
                    meter.request_count += 1;
                    if attempt >= max_attempts {
                        return Err(GatewayError::Transport {
                            attempts: attempt,
                            message,
                            raw,
                        });
                    }
                    std::thread::sleep(self.backoff.delay(attempt - 1));
                }
                Err(ProviderError::Fatal(message)) => return Err(GatewayError::Rejected(message)),
                Err(ProviderError::Unsupported(what)) => {
                    return Err(GatewayError::Capability {
                        provider: self.provider.name().to_string(),
                        capability: what,
                    })
                }
            }
        }
    }
}

/// Scales `v` to unit L2 norm (accumulated in f64).
pub fn normalize(mut v: Vec<f32>) -> Option<Vec<f32>> {
    let norm = v.iter().map(|x| f64::from(*x) * f64::from(*x)).sum::<f64>().sqrt();
    if !norm.is_finite() || norm == 0.0 {
        return None;
    }
    for x in &mut v {
        *x = (f64::from(*x) / norm) as f32;
    }
    Some(v)
}
