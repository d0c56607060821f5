//! Token-to-cost accounting.
//!
//! Prices are configuration, not code: the engine only ever sees USD per
//! 1K tokens for the models a run is allowed to use.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::LlmResponse;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelPrice {
    /// USD per 1K prompt tokens.
    pub input_per_1k: f64,
    /// USD per 1K completion tokens.
    pub output_per_1k: f64,
}

#[derive(Debug, Error, PartialEq)]
#[error("no price configured for model '{0}'")]
pub struct UnknownModelError(pub String);

/// Per-model prices. Lookup of an unconfigured model is an error: silent
/// zero-cost accounting would corrupt the reward.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CostTable(pub BTreeMap<String, ModelPrice>);

impl CostTable {
    pub fn new() -> Self {
        CostTable(BTreeMap::new())
    }

    pub fn with_model(
        mut self,
        model: impl Into<String>,
        input_per_1k: f64,
        output_per_1k: f64,
    ) -> Self {
        self.0.insert(
            model.into(),
            ModelPrice {
                input_per_1k,
                output_per_1k,
            },
        );
        self
    }

    pub fn price(&self, model: &str) -> Result<ModelPrice, UnknownModelError> {
        self.0
            .get(model)
            .copied()
            .ok_or_else(|| UnknownModelError(model.to_string()))
    }

    pub fn validate(&self) -> Result<(), String> {
        for (model, price) in &self.0 {
            if price.input_per_1k < 0.0 || price.output_per_1k < 0.0 {
                return Err(format!("negative price for model '{model}'"));
            }
        }
        Ok(())
    }
}

/// USD cost of one response: linear in each token count.
pub fn cost_of(
    response: &LlmResponse,
    model: &str,
    table: &CostTable,
) -> Result<f64, UnknownModelError> {
    let price = table.price(model)?;
    Ok(response.prompt_tokens as f64 / 1000.0 * price.input_per_1k
        + response.completion_tokens as f64 / 1000.0 * price.output_per_1k)
}
