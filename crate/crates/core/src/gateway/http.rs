//! HTTP providers: OpenAI, Google Gemini and Anthropic wire formats.

use std::time::{Duration, Instant};

use base64::Engine;
use serde_json::{json, Value};

use super::{ChatReply, ChatRequest, EmbedReply, GatewayError, Provider, ProviderError};

fn env_key(var: &str) -> Result<String, GatewayError> {
    std::env::var(var)
        .ok()
        .filter(|k| !k.trim().is_empty())
        .ok_or_else(|| GatewayError::Config(format!("{var} is not set")))
}

fn env_base(var: &str, default: &str) -> String {
    std::env::var(var)
        .ok()
        .filter(|b| !b.trim().is_empty())
        .unwrap_or_else(|| default.to_string())
        .trim_end_matches('/')
        .to_string()
}

fn post_json(
    url: &str,
    headers: &[(&str, String)],
    body: &Value,
    timeout: Duration,
) -> Result<Value, ProviderError> {
    let agent = ureq::Agent::config_builder()
        .timeout_global(Some(timeout))
        .http_status_as_error(false)
        .build()
        .new_agent();
    let mut req = agent.post(url);
    for (k, v) in headers {
        req = req.header(*k, v.as_str());
    }
    let mut resp = req.send_json(body).map_err(|e| ProviderError::Transient {
        message: format!("request to {url} failed: {e}"),
        raw: None,
    })?;
    let status = resp.status().as_u16();
    let text = resp
        .body_mut()
        .read_to_string()
        .map_err(|e| ProviderError::Transient {
            message: format!("reading response body failed: {e}"),
            raw: None,
        })?;
    classify_status(status, &text)?;
    serde_json::from_str(&text).map_err(|e| ProviderError::Transient {
        message: format!("response is not JSON: {e}"),
        raw: Some(text),
    })
}

/// 429 and 5xx are retryable; any other non-2xx is fatal.
fn classify_status(status: u16, body: &str) -> Result<(), ProviderError> {
    match status {
        200..=299 => Ok(()),
        408 | 429 | 500..=599 => Err(ProviderError::Transient {
            message: format!("HTTP {status}"),
            raw: Some(body.to_string()),
        }),
        _ => Err(ProviderError::Fatal(format!("HTTP {status}: {body}"))),
    }
}

fn malformed(what: &str, body: &Value) -> ProviderError {
    ProviderError::Transient {
        message: format!("malformed provider response: missing {what}"),
        raw: Some(body.to_string()),
    }
}

fn b64(bytes: &[u8]) -> String {
    base64::engine::general_purpose::STANDARD.encode(bytes)
}

fn schema_hint(request: &ChatRequest<'_>) -> String {
    format!(
        "{}\n\nRespond with JSON only, matching this JSON Schema:\n{}",
        request.prompt,
        request.schema.to_json_schema()
    )
}

#[derive(Debug, Clone)]
pub struct OpenAiProvider {
    api_key: String,
    base_url: String,
}

impl OpenAiProvider {
    pub fn new(api_key: &str, base_url: &str) -> Self {
        Self {
            api_key: api_key.to_string(),
            base_url: base_url.trim_end_matches('/').to_string(),
        }
    }

    pub fn from_env() -> Result<Self, GatewayError> {
        Ok(Self::new(
            &env_key("OPENAI_API_KEY")?,
            &env_base("OPENAI_BASE_URL", "https://api.openai.com/v1"),
        ))
    }

    pub fn chat_body(request: &ChatRequest<'_>) -> Value {
        let mut content = vec![json!({"type": "text", "text": schema_hint(request)})];
        if let Some(img) = &request.image {
            content.push(json!({
                "type": "image_url",
                "image_url": {"url": format!("data:{};base64,{}", img.mime, b64(img.bytes))}
            }));
        }
        json!({
            "model": request.model,
            "temperature": request.temperature,
            "messages": [{"role": "user", "content": content}],
            "response_format": {"type": "json_object"}
        })
    }

    pub fn parse_chat(body: &Value) -> Result<ChatReply, ProviderError> {
        let text = body["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| malformed("choices[0].message.content", body))?;
        Ok(ChatReply {
            text: text.to_string(),
            input_tokens: body["usage"]["prompt_tokens"].as_u64().unwrap_or(0),
            output_tokens: body["usage"]["completion_tokens"].as_u64().unwrap_or(0),
            latency: None,
        })
    }

    pub fn parse_embeddings(body: &Value, expected: usize) -> Result<EmbedReply, ProviderError> {
        let data = body["data"]
            .as_array()
            .ok_or_else(|| malformed("data", body))?;
        let mut vectors = vec![Vec::new(); expected];
        for item in data {
            let index = item["index"].as_u64().unwrap_or(0) as usize;
            let v = item["embedding"]
                .as_array()
                .ok_or_else(|| malformed("data[].embedding", body))?
                .iter()
                .map(|x| x.as_f64().unwrap_or(f64::NAN) as f32)
                .collect();
            if index < expected {
                vectors[index] = v;
            }
        }
        Ok(EmbedReply {
            vectors,
            input_tokens: body["usage"]["prompt_tokens"].as_u64().unwrap_or(0),
            latency: None,
        })
    }

    fn auth(&self) -> Vec<(&'static str, String)> {
        vec![("Authorization", format!("Bearer {}", self.api_key))]
    }
}

impl Provider for OpenAiProvider {
    fn name(&self) -> &str {
        "openai"
    }

    fn supports_images(&self) -> bool {
        true
    }

    fn chat(&self, request: &ChatRequest<'_>) -> Result<ChatReply, ProviderError> {
        let started = Instant::now();
        let body = post_json(
            &format!("{}/chat/completions", self.base_url),
            &self.auth(),
            &Self::chat_body(request),
            request.timeout,
        )?;
        let mut reply = Self::parse_chat(&body)?;
        reply.latency = Some(started.elapsed());
        Ok(reply)
    }

    fn embed(&self, model: &str, texts: &[String], timeout: Duration) -> Result<EmbedReply, ProviderError> {
        let started = Instant::now();
        let body = post_json(
            &format!("{}/embeddings", self.base_url),
            &self.auth(),
            &json!({"model": model, "input": texts}),
            timeout,
        )?;
        let mut reply = Self::parse_embeddings(&body, texts.len())?;
        reply.latency = Some(started.elapsed());
        Ok(reply)
    }
}

#[derive(Debug, Clone)]
pub struct AnthropicProvider {
    api_key: String,
    base_url: String,
}

impl AnthropicProvider {
    pub fn new(api_key: &str, base_url: &str) -> Self {
        Self {
            api_key: api_key.to_string(),
            base_url: base_url.trim_end_matches('/').to_string(),
        }
    }

    pub fn from_env() -> Result<Self, GatewayError> {
        Ok(Self::new(
            &env_key("ANTHROPIC_API_KEY")?,
            &env_base("ANTHROPIC_BASE_URL", "https://api.anthropic.com/v1"),
        ))
    }

    pub fn chat_body(request: &ChatRequest<'_>) -> Value {
        let mut content = Vec::new();
        if let Some(img) = &request.image {
            content.push(json!({
                "type": "image",
                "source": {"type": "base64", "media_type": img.mime, "data": b64(img.bytes)}
            }));
        }
        content.push(json!({"type": "text", "text": schema_hint(request)}));
        json!({
            "model": request.model,
            "max_tokens": 1024,
            "temperature": request.temperature,
            "messages": [{"role": "user", "content": content}]
        })
    }

    pub fn parse_chat(body: &Value) -> Result<ChatReply, ProviderError> {
        let text: String = body["content"]
            .as_array()
            .ok_or_else(|| malformed("content", body))?
            .iter()
            .filter_map(|part| part["text"].as_str())
            .collect();
        Ok(ChatReply {
            text,
            input_tokens: body["usage"]["input_tokens"].as_u64().unwrap_or(0),
            output_tokens: body["usage"]["output_tokens"].as_u64().unwrap_or(0),
            latency: None,
        })
    }
}

impl Provider for AnthropicProvider {
    fn name(&self) -> &str {
        "anthropic"
    }

    fn supports_images(&self) -> bool {
        true
    }

    fn chat(&self, request: &ChatRequest<'_>) -> Result<ChatReply, ProviderError> {
        let started = Instant::now();
        let body = post_json(
            &format!("{}/messages", self.base_url),
            &[
                ("x-api-key", self.api_key.clone()),
                ("anthropic-version", "2023-06-01".to_string()),
            ],
            &Self::chat_body(request),
            request.timeout,
        )?;
        let mut reply = Self::parse_chat(&body)?;
        reply.latency = Some(started.elapsed());
        Ok(reply)
    }

    fn embed(&self, _: &str, _: &[String], _: Duration) -> Result<EmbedReply, ProviderError> {
        Err(ProviderError::Unsupported("embeddings".into()))
    }
}

#[derive(Debug, Clone)]
pub struct GoogleProvider {
    api_key: String,
    base_url: String,
}

impl GoogleProvider {
    pub fn new(api_key: &str, base_url: &str) -> Self {
        Self {
            api_key: api_key.to_string(),
            base_url: base_url.trim_end_matches('/').to_string(),
        }
    }

    pub fn from_env() -> Result<Self, GatewayError> {
        Ok(Self::new(
            &env_key("GOOGLE_API_KEY")?,
            &env_base(
                "GOOGLE_BASE_URL",
                "https://generativelanguage.googleapis.com/v1beta",
            ),
        ))
    }

    pub fn chat_body(request: &ChatRequest<'_>) -> Value {
        let mut parts = vec![json!({"text": schema_hint(request)})];
        if let Some(img) = &request.image {
            parts.push(json!({"inline_data": {"mime_type": img.mime, "data": b64(img.bytes)}}));
        }
        json!({
            "contents": [{"role": "user", "parts": parts}],
            "generationConfig": {
                "temperature": request.temperature,
                "responseMimeType": "application/json"
            }
        })
    }

    pub fn parse_chat(body: &Value) -> Result<ChatReply, ProviderError> {
        let text: String = body["candidates"][0]["content"]["parts"]
            .as_array()
            .ok_or_else(|| malformed("candidates[0].content.parts", body))?
            .iter()
            .filter_map(|p| p["text"].as_str())
            .collect();
        Ok(ChatReply {
            text,
            input_tokens: body["usageMetadata"]["promptTokenCount"].as_u64().unwrap_or(0),
            output_tokens: body["usageMetadata"]["candidatesTokenCount"]
                .as_u64()
                .unwrap_or(0),
            latency: None,
        })
    }

    pub fn parse_embeddings(body: &Value) -> Result<EmbedReply, ProviderError> {
        let vectors = body["embeddings"]
            .as_array()
            .ok_or_else(|| malformed("embeddings", body))?
            .iter()
            .map(|e| {
                e["values"]
                    .as_array()
                    .map(|vs| vs.iter().map(|x| x.as_f64().unwrap_or(f64::NAN) as f32).collect())
                    .ok_or_else(|| malformed("embeddings[].values", body))
            })
            .collect::<Result<Vec<Vec<f32>>, _>>()?;
        Ok(EmbedReply {
            vectors,
            // batchEmbedContents does not report usage.
            input_tokens: 0,
            latency: None,
        })
    }
}

impl Provider for GoogleProvider {
    fn name(&self) -> &str {
        "google"
    }

    fn supports_images(&self) -> bool {
        true
    }

    fn chat(&self, request: &ChatRequest<'_>) -> Result<ChatReply, ProviderError> {
        let started = Instant::now();
        let body = post_json(
            &format!("{}/models/{}:generateContent", self.base_url, request.model),
            &[("x-goog-api-key", self.api_key.clone())],
            &Self::chat_body(request),
            request.timeout,
        )?;
        let mut reply = Self::parse_chat(&body)?;
        reply.latency = Some(started.elapsed());
        Ok(reply)
    }

    fn embed(&self, model: &str, texts: &[String], timeout: Duration) -> Result<EmbedReply, ProviderError> {
        let started = Instant::now();
        let requests: Vec<Value> = texts
            .iter()
            .map(|t| json!({"model": format!("models/{model}"), "content": {"parts": [{"text": t}]}}))
            .collect();
        let body = post_json(
            &format!("{}/models/{}:batchEmbedContents", self.base_url, model),
            &[("x-goog-api-key", self.api_key.clone())],
            &json!({"requests": requests}),
            timeout,
        )?;
        let mut reply = Self::parse_embeddings(&body)?;
        reply.latency = Some(started.elapsed());
        Ok(reply)
    }
}
