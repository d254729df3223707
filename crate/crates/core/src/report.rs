//! Machine-readable run reports.
//!
//! Keys are emitted in sorted order and every float is rounded to 12
//! significant digits before printing, so identical runs give identical bytes.

use serde::{Deserialize, Serialize};
use serde_json::{Number, Value};

use crate::error::{Error, Result};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const SIGNIFICANT_DIGITS: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Config {
    pub model: Option<String>,
    pub state: Option<String>,
    pub plan: Option<Vec<String>>,
    pub trials: Option<u64>,
    pub seed: Option<u64>,
    pub tool_version: String,
}

impl Config {
    pub fn new() -> Self {
        Config { model: None, state: None, plan: None, trials: None, seed: None, tool_version: TOOL_VERSION.to_string() }
    }
}

impl Default for Config {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: &str, pass: bool, detail: impl Into<String>) -> Self {
        Check { name: name.to_string(), pass, detail: detail.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub command: String,
    pub config: Config,
    pub results: Value,
    pub checks: Vec<Check>,
}

impl Report {
    pub fn new<T: Serialize>(command: &str, config: Config, results: &T, checks: Vec<Check>) -> Result<Self> {
        let results = serde_json::to_value(results).map_err(|e| Error::consistency(format!("serialize results: {e}")))?;
        Ok(Report { command: command.to_string(), config, results: canonicalize(results), checks })
    }

    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    /// Canonical text form: sorted keys, rounded floats, trailing newline.
    pub fn to_json(&self) -> String {
        let value = canonicalize(serde_json::to_value(self).expect("report is always serializable"));
        let mut s = serde_json::to_string_pretty(&value).expect("value is always serializable");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::validation(format!("invalid report JSON: {e}")))
    }
}

/// Rounds `x` to `SIGNIFICANT_DIGITS` significant digits.
pub fn round_significant(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return if x == 0.0 { 0.0 } else { x };
    }
    format!("{:.*e}", SIGNIFICANT_DIGITS - 1, x).parse().unwrap_or(x)
}

/// Rounds every float in the tree; integers and everything else pass through.
pub fn canonicalize(value: Value) -> Value {
    match value {
        Value::Number(n) if n.is_f64() => {
            let x = n.as_f64().unwrap_or(0.0);
            Number::from_f64(round_significant(x)).map_or(Value::Null, Value::Number)
        }
        Value::Array(items) => Value::Array(items.into_iter().map(canonicalize).collect()),
        Value::Object(map) => Value::Object(map.into_iter().map(|(k, v)| (k, canonicalize(v))).collect()),
        other => other,
    }
}
