//! Token/request metering and price-table costing.

use std::collections::BTreeMap;
use std::ops::{Add, AddAssign};
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::GatewayError;

/// Usage accumulated over one or more model requests. Merging is plain
/// field-wise addition, so it is associative and commutative with
/// `UsageMeter::default()` as the zero.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageMeter {
    pub input_tokens: u64,
    pub output_tokens: u64,
    /// Sum of per-request latencies (not wall-clock of a concurrent run).
    #[serde(with = "duration_secs")]
    pub wall_time: Duration,
    pub request_count: u64,
}

impl UsageMeter {
    pub fn merge(&mut self, other: &UsageMeter) {
        self.input_tokens += other.input_tokens;
        self.output_tokens += other.output_tokens;
        self.wall_time += other.wall_time;
        self.request_count += other.request_count;
    }

    pub fn merged(mut self, other: &UsageMeter) -> Self {
        self.merge(other);
        self
    }
}

impl Add for UsageMeter {
    type Output = UsageMeter;

    fn add(self, rhs: Self) -> Self::Output {
        self.merged(&rhs)
    }
}

impl AddAssign for UsageMeter {
    fn add_assign(&mut self, rhs: Self) {
        self.merge(&rhs);
    }
}

impl std::iter::Sum for UsageMeter {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(UsageMeter::default(), Add::add)
    }
}

pub(crate) mod duration_secs {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let secs = f64::deserialize(d)?;
        Duration::try_from_secs_f64(secs).map_err(serde::de::Error::custom)
    }
}

/// USD per one million tokens.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelPrice {
    pub input_per_1m: f64,
    pub output_per_1m: f64,
}

impl ModelPrice {
    /// Linear in both token counts; fractional counts are allowed so per-GUI
    /// means can be priced directly.
    pub fn cost(&self, input_tokens: f64, output_tokens: f64) -> f64 {
        input_tokens * self.input_per_1m / 1_000_000.0
            + output_tokens * self.output_per_1m / 1_000_000.0
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PriceTable {
    prices: BTreeMap<String, ModelPrice>,
}

impl PriceTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Prices used when no `prices.json` is configured (USD, mid-2025 list
    /// prices for the GPT-4.1 family and the default embedding model).
    pub fn builtin() -> Self {
        let mut t = Self::new();
        t.insert("gpt-4.1", 2.00, 8.00);
        t.insert("gpt-4.1-mini", 0.40, 1.60);
        t.insert("gpt-4.1-nano", 0.10, 0.40);
        t.insert("text-embedding-3-small", 0.02, 0.0);
        t.insert("text-embedding-3-large", 0.13, 0.0);
        t
    }

    pub fn insert(&mut self, model: &str, input_per_1m: f64, output_per_1m: f64) {
        assert!(input_per_1m >= 0.0 && output_per_1m >= 0.0, "prices must be non-negative");
        self.prices.insert(
            model.to_string(),
            ModelPrice {
                input_per_1m,
                output_per_1m,
            },
        );
    }

    pub fn get(&self, model: &str) -> Option<&ModelPrice> {
        self.prices.get(model)
    }

    pub fn from_json(text: &str) -> Result<Self, GatewayError> {
        let table: PriceTable = serde_json::from_str(text)
            .map_err(|e| GatewayError::Config(format!("invalid price table: {e}")))?;
        if let Some((model, _)) = table
            .prices
            .iter()
            .find(|(_, p)| !(p.input_per_1m >= 0.0 && p.output_per_1m >= 0.0))
        {
            return Err(GatewayError::Config(format!(
                "negative price for model \"{model}\""
            )));
        }
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GatewayError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

/// Cost of a metered run. Stub runs (`stub/<model>`) are priced as the model
/// they stand in for.
pub fn cost_of(meter: &UsageMeter, model: &str, prices: &PriceTable) -> Result<f64, GatewayError> {
    let name = model.strip_prefix("stub/").unwrap_or(model);
    let price = prices
        .get(name)
        .ok_or_else(|| GatewayError::UnknownModel(name.to_string()))?;
    Ok(price.cost(meter.input_tokens as f64, meter.output_tokens as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn meter(i: u64, o: u64, ms: u64, n: u64) -> UsageMeter {
        UsageMeter {
            input_tokens: i,
            output_tokens: o,
            wall_time: Duration::from_millis(ms),
            request_count: n,
        }
    }

    #[test]
    fn cost_matches_reported_text_and_image_rows() {
        let prices = PriceTable::builtin();
        let text = cost_of(&meter(17_977, 600, 0, 100), "gpt-4.1", &prices).unwrap();
        assert!((text - 0.040754).abs() < 1e-12);
        assert_eq!(format!("{text:.3}"), "0.041");
        let image = cost_of(&meter(108_902, 600, 0, 100), "gpt-4.1", &prices).unwrap();
        assert!((image - 0.222604).abs() < 1e-12);
        assert_eq!(format!("{image:.3}"), "0.223");
        assert_eq!(cost_of(&UsageMeter::default(), "gpt-4.1", &prices).unwrap(), 0.0);
    }

    #[test]
    fn unknown_model_is_an_error() {
        let err = cost_of(&meter(1, 1, 0, 1), "mystery", &PriceTable::builtin()).unwrap_err();
        assert!(matches!(err, GatewayError::UnknownModel(m) if m == "mystery"));
    }

    #[test]
    fn price_table_json_shape() {
        let t = PriceTable::from_json(r#"{"m":{"input_per_1m":1.5,"output_per_1m":3}}"#).unwrap();
        assert_eq!(t.get("m").unwrap().output_per_1m, 3.0);
        assert!(PriceTable::from_json(r#"{"m":{"input_per_1m":-1,"output_per_1m":3}}"#).is_err());
    }

    fn arb_meter() -> impl Strategy<Value = UsageMeter> {
        (0u64..1 << 40, 0u64..1 << 40, 0u64..1 << 30, 0u64..1 << 20)
            .prop_map(|(i, o, ms, n)| meter(i, o, ms, n))
    }

    proptest! {
        #[test]
        fn merge_is_a_commutative_monoid(a in arb_meter(), b in arb_meter(), c in arb_meter()) {
            prop_assert_eq!(a + b, b + a);
            prop_assert_eq!((a + b) + c, a + (b + c));
            prop_assert_eq!(a + UsageMeter::default(), a);
        }

        #[test]
        fn cost_is_linear(i1 in 0u64..10_000_000, o1 in 0u64..10_000_000,
                          i2 in 0u64..10_000_000, o2 in 0u64..10_000_000) {
            let prices = PriceTable::builtin();
            let a = meter(i1, o1, 0, 1);
            let b = meter(i2, o2, 0, 1);
            let sum = cost_of(&(a + b), "gpt-4.1", &prices).unwrap();
            let parts = cost_of(&a, "gpt-4.1", &prices).unwrap() + cost_of(&b, "gpt-4.1", &prices).unwrap();
            prop_assert!((sum - parts).abs() <= 1e-9 * sum.max(1.0));
        }
    }
}
