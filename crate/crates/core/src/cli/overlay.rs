//! `key=value` configuration files layered over serde structs.

use std::collections::BTreeMap;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Source {
    Default,
    File,
    Flag,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Default => "default",
            Source::File => "file",
            Source::Flag => "flag",
        }
    }
}

/// Parses `key = value` lines; blank lines and `#` comments are skipped.
pub fn parse_kv(text: &str, source_name: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::parse(source_name, format!("line {}", i + 1), "expected key=value")
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn coerce(existing: &Value, raw: &str) -> Value {
    let parsed = serde_json::from_str::<Value>(raw).ok();
    if existing.is_array() || (existing.is_null() && raw.contains(',')) {
        if let Some(Value::Array(a)) = parsed {
            return Value::Array(a);
        }
        return Value::Array(
            raw.split(',')
                .map(|s| serde_json::from_str(s.trim()).unwrap_or_else(|_| Value::String(s.trim().into())))
                .collect(),
        );
    }
    parsed.unwrap_or_else(|| Value::String(raw.to_string()))
}

/// A set of serde structs (by section name) whose fields can be overridden
/// by flat keys. Tracks where every value came from.
pub struct Layered {
    sections: Vec<(&'static str, Map<String, Value>)>,
    sources: BTreeMap<String, Source>,
}

impl Layered {
    pub fn new() -> Self {
        Layered {
            sections: Vec::new(),
            sources: BTreeMap::new(),
        }
    }

    pub fn section<T: Serialize>(mut self, name: &'static str, value: &T) -> Self {
        let Value::Object(map) = serde_json::to_value(value).expect("config serializes") else {
            panic!("configuration section {name} is not a struct");
        };
        for k in map.keys() {
            self.sources.insert(k.clone(), Source::Default);
        }
        self.sections.push((name, map));
        self
    }

    /// Sets `key` in every section that has it.
    pub fn set(&mut self, key: &str, raw: &str, source: Source) -> Result<()> {
        let mut found = false;
        for (_, map) in &mut self.sections {
            if let Some(existing) = map.get(key) {
                let v = coerce(existing, raw);
                map.insert(key.to_string(), v);
                found = true;
            }
        }
        if found {
            self.sources.insert(key.to_string(), source);
            return Ok(());
        }
        let known: Vec<&String> = self.sources.keys().collect();
        Err(Error::Config(format!("unknown configuration key {key:?} (known: {known:?})")))
    }

    pub fn get<T: DeserializeOwned>(&self, name: &str) -> Result<T> {
        let (_, map) = self
            .sections
            .iter()
            .find(|(n, _)| *n == name)
            .expect("section registered");
        serde_json::from_value(Value::Object(map.clone()))
            .map_err(|e| Error::Config(format!("invalid {name} configuration: {e}")))
    }

    /// `key = value  # source` lines, sorted by section then key.
    pub fn describe(&self) -> String {
        let mut out = String::new();
        for (name, map) in &self.sections {
            out.push_str(&format!("[{name}]\n"));
            for (k, v) in map {
                out.push_str(&format!("{k} = {v}  # {}\n", self.sources[k].as_str()));
            }
        }
        out
    }
}

impl Default for Layered {
    fn default() -> Self {
        Self::new()
    }
}
