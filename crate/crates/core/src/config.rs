//! Non-differentiable operator arguments (`lambd`, `index`, target shapes, ...).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Precision;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ConfigValue {
    Bool(bool),
    Int(i64),
    Float(f64),
    Precision(Precision),
    Shape(Vec<usize>),
}

/// Named configuration arguments, ordered by key for stable serialization.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Config(BTreeMap<String, ConfigValue>);

impl Config {
    pub fn new() -> Self {
        Config(BTreeMap::new())
    }

    pub fn with(mut self, key: &str, value: ConfigValue) -> Self {
        self.0.insert(key.to_string(), value);
        self
    }

    pub fn set(&mut self, key: &str, value: ConfigValue) {
        self.0.insert(key.to_string(), value);
    }

    pub fn get(&self, key: &str) -> Option<&ConfigValue> {
        self.0.get(key)
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ConfigValue)> {
        self.0.iter()
    }

    pub fn float(&self, op: &str, key: &str) -> Result<f64> {
        match self.0.get(key) {
            Some(ConfigValue::Float(v)) => Ok(*v),
            Some(ConfigValue::Int(v)) => Ok(*v as f64),
            Some(other) => Err(Error::config(op, format!("`{key}` must be a number, got {other:?}"))),
            None => Err(Error::config(op, format!("missing `{key}`"))),
        }
    }

    pub fn float_or(&self, op: &str, key: &str, default: f64) -> Result<f64> {
        if self.0.contains_key(key) {
            self.float(op, key)
        } else {
            Ok(default)
        }
    }

    pub fn int(&self, op: &str, key: &str) -> Result<i64> {
        match self.0.get(key) {
            Some(ConfigValue::Int(v)) => Ok(*v),
            Some(ConfigValue::Float(v)) if v.fract() == 0.0 => Ok(*v as i64),
            Some(other) => Err(Error::config(op, format!("`{key}` must be an integer, got {other:?}"))),
            None => Err(Error::config(op, format!("missing `{key}`"))),
        }
    }

    pub fn int_or(&self, op: &str, key: &str, default: i64) -> Result<i64> {
        if self.0.contains_key(key) {
            self.int(op, key)
        } else {
            Ok(default)
        }
    }

    pub fn bool_or(&self, op: &str, key: &str, default: bool) -> Result<bool> {
        match self.0.get(key) {
            Some(ConfigValue::Bool(v)) => Ok(*v),
            Some(other) => Err(Error::config(op, format!("`{key}` must be a bool, got {other:?}"))),
            None => Ok(default),
        }
    }

    pub fn precision(&self, op: &str, key: &str) -> Result<Precision> {
        match self.0.get(key) {
            Some(ConfigValue::Precision(p)) => Ok(*p),
            Some(other) => Err(Error::config(op, format!("`{key}` must be a precision, got {other:?}"))),
            None => Err(Error::config(op, format!("missing `{key}`"))),
        }
    }

    pub fn shape(&self, op: &str, key: &str) -> Result<Vec<usize>> {
        match self.0.get(key) {
            Some(ConfigValue::Shape(s)) => Ok(s.clone()),
            // An empty JSON array cannot be told apart from an empty shape.
            Some(other) => Err(Error::config(op, format!("`{key}` must be a shape, got {other:?}"))),
            None => Err(Error::config(op, format!("missing `{key}`"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip_keeps_kinds() {
        let cfg = Config::new()
            .with("lambd", ConfigValue::Float(0.5))
            .with("index", ConfigValue::Int(-3))
            .with("precision", ConfigValue::Precision(Precision::F16))
            .with("shape", ConfigValue::Shape(vec![2, 3]));
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(text, r#"{"index":-3,"lambd":0.5,"precision":"f16","shape":[2,3]}"#);
        let back: Config = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn integer_literal_reads_as_float() {
        let cfg: Config = serde_json::from_str(r#"{"lambd": 0}"#).unwrap();
        assert_eq!(cfg.float("hardshrink", "lambd").unwrap(), 0.0);
        assert!(cfg.int("x", "missing").is_err());
    }
}
