//! `--config` support: a JSON object whose keys mirror the command's flag
//! names (dashes as underscores). Explicit flags always win; these getters
//! only fill the gaps.

use std::path::{Path, PathBuf};

use lingua_adapt::{Error, Result};
use serde_json::{Map, Value};

pub struct Overlay(Map<String, Value>);

impl Overlay {
    /// Empty overlay when no config file was given.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Overlay(Map::new()));
        };
        let text = std::fs::read_to_string(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::FileNotFound(path.to_path_buf())
            } else {
                Error::Io(e)
            }
        })?;
        let value: Value = serde_json::from_str(&text)
            .map_err(|e| Error::InvalidArgument(format!("config file: {e}")))?;
        match value {
            Value::Object(map) => Ok(Overlay(map)),
            _ => Err(Error::InvalidArgument(
                "config file must hold a JSON object".to_string(),
            )),
        }
    }

    fn get(&self, key: &str) -> Option<&Value> {
        self.0.get(key)
    }

    pub fn path(&self, key: &str) -> Result<Option<PathBuf>> {
        Ok(self.string(key)?.map(PathBuf::from))
    }

    pub fn string(&self, key: &str) -> Result<Option<String>> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(_) => Err(bad_type(key, "a string")),
        }
    }

    pub fn usize(&self, key: &str) -> Result<Option<usize>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => match v.as_u64() {
                Some(n) => Ok(Some(n as usize)),
                None => Err(bad_type(key, "a non-negative integer")),
            },
        }
    }

    pub fn u64(&self, key: &str) -> Result<Option<u64>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => match v.as_u64() {
                Some(n) => Ok(Some(n)),
                None => Err(bad_type(key, "a non-negative integer")),
            },
        }
    }

    pub fn f64(&self, key: &str) -> Result<Option<f64>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => match v.as_f64() {
                Some(x) => Ok(Some(x)),
                None => Err(bad_type(key, "a number")),
            },
        }
    }

    pub fn bool(&self, key: &str) -> Result<Option<bool>> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::Bool(b)) => Ok(Some(*b)),
            Some(_) => Err(bad_type(key, "a boolean")),
        }
    }
}

fn bad_type(key: &str, expected: &str) -> Error {
    Error::InvalidArgument(format!("config key {key:?} must be {expected}"))
}

/// The error for a value present neither as a flag nor in the config file.
pub fn missing(flag: &str) -> Error {
    Error::InvalidArgument(format!(
        "--{flag} is required (pass the flag or set it in --config)"
    ))
}
