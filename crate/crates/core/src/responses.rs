//! Inputs and generated responses, and their JSON Lines files.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputRecord {
    pub id: String,
    pub prompt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resources: Option<BTreeMap<String, String>>,
}

impl InputRecord {
    pub fn new(id: impl Into<String>, prompt: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            prompt: prompt.into(),
            resources: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Response {
    pub id: String,
    pub output: String,
}

impl Response {
    pub fn new(id: impl Into<String>, output: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            output: output.into(),
        }
    }
}

/// Responses generated by one candidate over a fixed, ordered input list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseSet {
    pub alpha: f64,
    pub responses: Vec<Response>,
}

impl ResponseSet {
    pub fn new(alpha: f64, responses: Vec<Response>) -> Self {
        Self { alpha, responses }
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.responses.iter().map(|r| r.id.as_str())
    }

    /// Error unless `other` covers the same ids in the same order.
    pub fn check_aligned(&self, other: &ResponseSet) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::MisalignedResponses(format!(
                "{} vs {} responses",
                self.len(),
                other.len()
            )));
        }
        if let Some((a, b)) = self.ids().zip(other.ids()).find(|(a, b)| a != b) {
            return Err(Error::MisalignedResponses(format!("id `{a}` vs `{b}`")));
        }
        Ok(())
    }
}

pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| {
            Error::Format(format!("{}:{}: {e}", path.display(), lineno + 1))
        })?;
        out.push(value);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, rows: &[T]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for row in rows {
        serde_json::to_writer(&mut out, row)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Read an inputs file, rejecting duplicate ids.
pub fn read_inputs(path: impl AsRef<Path>) -> Result<Vec<InputRecord>> {
    let inputs: Vec<InputRecord> = read_jsonl(path.as_ref())?;
    let mut seen = std::collections::HashSet::new();
    for input in &inputs {
        if !seen.insert(input.id.as_str()) {
            return Err(Error::Format(format!(
                "{}: duplicate input id `{}`",
                path.as_ref().display(),
                input.id
            )));
        }
    }
    Ok(inputs)
}
