use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::TokenUsage;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CostError {
    #[error("no price entry for model `{0}`")]
    UnknownModel(String),
    #[error("invalid price table: {0}")]
    Invalid(String),
}

/// USD per one million tokens.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelPrice {
    pub input: f64,
    pub cached_input: f64,
    pub output: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PriceTable(BTreeMap<String, ModelPrice>);

impl PriceTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Published rates for the default planner and executor models.
    pub fn reference() -> Self {
        let mut table = Self::new();
        table.insert(
            "gpt-4o-mini",
            ModelPrice {
                input: 0.15,
                cached_input: 0.08,
                output: 0.60,
            },
        );
        table.insert(
            "gpt-4.1",
            ModelPrice {
                input: 2.00,
                cached_input: 0.50,
                output: 8.00,
            },
        );
        table
    }

    pub fn insert(&mut self, model_id: impl Into<String>, price: ModelPrice) {
        self.0.insert(model_id.into(), price);
    }

    pub fn get(&self, model_id: &str) -> Option<&ModelPrice> {
        self.0.get(model_id)
    }

    pub fn from_json_str(text: &str) -> Result<Self, CostError> {
        let table: Self = serde_json::from_str(text).map_err(|e| CostError::Invalid(e.to_string()))?;
        table.check()?;
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self, CostError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CostError::Invalid(format!("{}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    fn check(&self) -> Result<(), CostError> {
        for (model, p) in &self.0 {
            if [p.input, p.cached_input, p.output]
                .iter()
                .any(|v| !v.is_finite() || *v < 0.0)
            {
                return Err(CostError::Invalid(format!("negative or non-finite price for `{model}`")));
            }
        }
        Ok(())
    }
}

/// Dollar cost of `usage` at `model_id`'s rates. Cached input tokens are
/// billed at the cached rate and the rest of the input at the full rate.
pub fn cost_of(usage: &TokenUsage, model_id: &str, prices: &PriceTable) -> Result<f64, CostError> {
    let p = prices
        .get(model_id)
        .ok_or_else(|| CostError::UnknownModel(model_id.to_string()))?;
    let cached = usage.cached_input_tokens.min(usage.input_tokens);
    let fresh = usage.input_tokens - cached;
    Ok((fresh as f64 * p.input + cached as f64 * p.cached_input + usage.output_tokens as f64 * p.output)
        / 1_000_000.0)
}
