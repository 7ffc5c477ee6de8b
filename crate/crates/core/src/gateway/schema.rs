//! Structured-output schemas: prompt rendering, validation and JSON
//! extraction from free-form model replies.

use serde_json::{json, Map, Value};

#[derive(Debug, Clone, PartialEq)]
pub enum Schema {
    /// Integer value. The bounds describe the requested range; consumers
    /// clamp, validation only checks integrality.
    Integer { min: i64, max: i64 },
    /// Non-empty string.
    Text,
    Array(Box<Schema>),
    /// Object with the listed keys, in order. Extra keys are tolerated.
    Object(Vec<Field>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub key: String,
    pub schema: Schema,
    pub required: bool,
}

/// A named top-level schema. The name travels with the request so that
/// offline providers can recognise the task.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseSchema {
    pub name: String,
    pub root: Schema,
}

impl ResponseSchema {
    pub fn new(name: &str, root: Schema) -> Self {
        Self {
            name: name.to_string(),
            root,
        }
    }

    pub fn validate(&self, value: &Value) -> Result<(), String> {
        self.root.validate(value, "$")
    }

    /// JSON Schema rendering, embedded verbatim in prompts.
    pub fn to_json_schema(&self) -> Value {
        self.root.to_json_schema()
    }
}

impl Schema {
    pub fn integer(min: i64, max: i64) -> Self {
        Schema::Integer { min, max }
    }

    pub fn array(item: Schema) -> Self {
        Schema::Array(Box::new(item))
    }

    pub fn object<I, K>(fields: I) -> Self
    where
        I: IntoIterator<Item = (K, Schema)>,
        K: Into<String>,
    {
        Schema::Object(
            fields
                .into_iter()
                .map(|(k, schema)| Field {
                    key: k.into(),
                    schema,
                    required: true,
                })
                .collect(),
        )
    }

    /// Object whose keys may be omitted.
    pub fn optional_object<I, K>(fields: I) -> Self
    where
        I: IntoIterator<Item = (K, Schema)>,
        K: Into<String>,
    {
        Schema::Object(
            fields
                .into_iter()
                .map(|(k, schema)| Field {
                    key: k.into(),
                    schema,
                    required: false,
                })
                .collect(),
        )
    }

    fn validate(&self, value: &Value, at: &str) -> Result<(), String> {
        match self {
            Schema::Integer { .. } => {
                if as_integer(value).is_some() {
                    Ok(())
                } else {
                    Err(format!("{at}: expected an integer, got {value}"))
                }
            }
            Schema::Text => match value.as_str() {
                Some(s) if !s.trim().is_empty() => Ok(()),
                Some(_) => Err(format!("{at}: empty string")),
                None => Err(format!("{at}: expected a string, got {value}")),
            },
            Schema::Array(item) => {
                let items = value
                    .as_array()
                    .ok_or_else(|| format!("{at}: expected an array, got {value}"))?;
                for (i, v) in items.iter().enumerate() {
                    item.validate(v, &format!("{at}[{i}]"))?;
                }
                Ok(())
            }
            Schema::Object(fields) => {
                let obj = value
                    .as_object()
                    .ok_or_else(|| format!("{at}: expected an object, got {value}"))?;
                for f in fields {
                    match obj.get(&f.key) {
                        Some(v) => f.schema.validate(v, &format!("{at}.{}", f.key))?,
                        None if f.required => {
                            return Err(format!("{at}: missing key \"{}\"", f.key))
                        }
                        None => {}
                    }
                }
                Ok(())
            }
        }
    }

    fn to_json_schema(&self) -> Value {
        match self {
            Schema::Integer { min, max } => {
                json!({"type": "integer", "minimum": min, "maximum": max})
            }
            Schema::Text => json!({"type": "string", "minLength": 1}),
            Schema::Array(item) => json!({"type": "array", "items": item.to_json_schema()}),
            Schema::Object(fields) => {
                let mut props = Map::new();
                for f in fields {
                    props.insert(f.key.clone(), f.schema.to_json_schema());
                }
                let required: Vec<&str> = fields
                    .iter()
                    .filter(|f| f.required)
                    .map(|f| f.key.as_str())
                    .collect();
                json!({"type": "object", "properties": props, "required": required})
            }
        }
    }
}

/// Integer view of a JSON number; floats with no fractional part count.
pub fn as_integer(value: &Value) -> Option<i64> {
    if let Some(i) = value.as_i64() {
        return Some(i);
    }
    let f = value.as_f64()?;
    (f.fract() == 0.0 && f.abs() < 9.0e15).then_some(f as i64)
}

/// Pulls the first JSON value out of a model reply, tolerating markdown code
/// fences and leading/trailing prose.
pub fn extract_json(raw: &str) -> Option<Value> {
    let trimmed = raw.trim();
    if let Ok(v) = serde_json::from_str(trimmed) {
        return Some(v);
    }
    if let Some(start) = trimmed.find("```") {
        let rest = &trimmed[start + 3..];
        let rest = rest.strip_prefix("json").unwrap_or(rest);
        if let Some(end) = rest.find("```") {
            if let Ok(v) = serde_json::from_str(rest[..end].trim()) {
                return Some(v);
            }
        }
    }
    for (open, close) in [('{', '}'), ('[', ']')] {
        if let (Some(s), Some(e)) = (trimmed.find(open), trimmed.rfind(close)) {
            if s < e {
                if let Ok(v) = serde_json::from_str(&trimmed[s..=e]) {
                    return Some(v);
                }
            }
        }
    }
    None
}
