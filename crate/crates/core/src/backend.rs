//! Generation backends: produce one response per input for a checkpoint.
//!
//! Backends must be deterministic (greedy decoding): the same checkpoint and
//! inputs must always yield the same outputs.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::responses::{read_jsonl, write_jsonl, InputRecord, Response, ResponseSet};
use crate::store::Checkpoint;
use crate::toy::{toy_generate_for, ToyTaskSpec};

pub const TIMEOUT_ENV: &str = "ADAMMS_BACKEND_TIMEOUT_SECS";
pub const DEFAULT_TIMEOUT_SECS: u64 = 3600;

pub trait Generator: Sync {
    /// Outputs for `inputs`, one per input.
    fn generate(&self, checkpoint: &Path, inputs: &[InputRecord]) -> Result<Vec<Response>>;

    /// Maximum number of concurrent invocations.
    fn capacity(&self) -> usize {
        1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Process,
    Toy,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendDescriptor {
    pub kind: BackendKind,
    /// Shell command with `{checkpoint}`, `{inputs}` and `{out}` slots.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command_template: Option<String>,
    #[serde(default = "one")]
    pub capacity: usize,
    /// Invoke twice per candidate and fail on any difference.
    #[serde(default)]
    pub self_check: bool,
    /// Task definition for the toy backend.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub toy_spec: Option<PathBuf>,
}

fn one() -> usize {
    1
}

impl BackendDescriptor {
    pub fn process(command_template: impl Into<String>) -> Self {
        Self {
            kind: BackendKind::Process,
            command_template: Some(command_template.into()),
            capacity: 1,
            self_check: false,
            toy_spec: None,
        }
    }

    pub fn toy(spec_path: impl Into<PathBuf>) -> Self {
        Self {
            kind: BackendKind::Toy,
            command_template: None,
            capacity: 1,
            self_check: false,
            toy_spec: Some(spec_path.into()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.capacity == 0 {
            return Err(Error::Config("backend capacity must be positive".into()));
        }
        match self.kind {
            BackendKind::Process => {
                let template = self.command_template.as_deref().unwrap_or("");
                if template.trim().is_empty() {
                    return Err(Error::Config("process backend needs command_template".into()));
                }
                for slot in ["{checkpoint}", "{inputs}", "{out}"] {
                    if !template.contains(slot) {
                        return Err(Error::Config(format!(
                            "command_template is missing the {slot} slot"
                        )));
                    }
                }
            }
            BackendKind::Toy => {
                if self.toy_spec.is_none() {
                    return Err(Error::Config("toy backend needs toy_spec".into()));
                }
            }
        }
        Ok(())
    }

    /// Instantiate the backend; `scratch` holds per-invocation files.
    pub fn build(&self, scratch: impl Into<PathBuf>) -> Result<Box<dyn Generator>> {
        self.validate()?;
        Ok(match self.kind {
            BackendKind::Process => Box::new(
                ProcessBackend::new(self.command_template.clone().unwrap_or_default(), scratch)
                    .with_capacity(self.capacity),
            ),
            BackendKind::Toy => {
                let spec = ToyTaskSpec::load(self.toy_spec.as_ref().expect("validated"))?;
                Box::new(ToyBackend::new(spec).with_capacity(self.capacity))
            }
        })
    }
}

/// Run `backend` and check the protocol: exactly one response per input, in
/// input order. With `self_check`, a second invocation must agree exactly.
pub fn generate(
    backend: &dyn Generator,
    checkpoint: &Path,
    inputs: &[InputRecord],
    alpha: f64,
    self_check: bool,
) -> Result<ResponseSet> {
    let responses = align(backend.generate(checkpoint, inputs)?, inputs)?;
    if self_check {
        let again = align(backend.generate(checkpoint, inputs)?, inputs)?;
        if let Some((a, b)) = responses.iter().zip(&again).find(|(a, b)| a != b) {
            return Err(Error::NondeterministicBackend(format!(
                "input `{}` produced {:?} then {:?}",
                a.id, a.output, b.output
            )));
        }
    }
    Ok(ResponseSet::new(alpha, responses))
}

fn align(responses: Vec<Response>, inputs: &[InputRecord]) -> Result<Vec<Response>> {
    if responses.len() == inputs.len()
        && responses.iter().zip(inputs).all(|(r, i)| r.id == i.id)
    {
        return Ok(responses);
    }
    let total = responses.len();
    let mut by_id: HashMap<String, Response> = HashMap::with_capacity(total);
    for r in responses {
        if by_id.contains_key(&r.id) {
            return Err(Error::BackendProtocolError(format!("duplicate response id `{}`", r.id)));
        }
        by_id.insert(r.id.clone(), r);
    }
    let aligned = inputs
        .iter()
        .map(|i| {
            by_id.remove(&i.id).ok_or_else(|| {
                Error::BackendProtocolError(format!(
                    "no response for input `{}` ({total} responses for {} inputs)",
                    i.id,
                    inputs.len()
                ))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if let Some(extra) = by_id.keys().next() {
        return Err(Error::BackendProtocolError(format!("response for unknown input `{extra}`")));
    }
    Ok(aligned)
}

/// External process adapter: substitutes the three paths into the command
/// template, runs it through `sh -c`, and reads the JSON Lines response file.
pub struct ProcessBackend {
    template: String,
    scratch: PathBuf,
    capacity: usize,
    timeout: Duration,
}

static INVOCATION: AtomicU64 = AtomicU64::new(0);

fn shell_quote(path: &Path) -> String {
    format!("'{}'", path.display().to_string().replace('\'', r"'\''"))
}

impl ProcessBackend {
    pub fn new(template: impl Into<String>, scratch: impl Into<PathBuf>) -> Self {
        let timeout = std::env::var(TIMEOUT_ENV)
            .ok()
            .and_then(|v| v.trim().parse().ok())
            .unwrap_or(DEFAULT_TIMEOUT_SECS);
        Self {
            template: template.into(),
            scratch: scratch.into(),
            capacity: 1,
            timeout: Duration::from_secs(timeout),
        }
    }

    pub fn with_capacity(mut self, capacity: usize) -> Self {
        self.capacity = capacity.max(1);
        self
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn command_line(&self, checkpoint: &Path, inputs: &Path, out: &Path) -> String {
        self.template
            .replace("{checkpoint}", &shell_quote(checkpoint))
            .replace("{inputs}", &shell_quote(inputs))
            .replace("{out}", &shell_quote(out))
    }

    fn run(&self, checkpoint: &Path, inputs_path: &Path, out_path: &Path, log_path: &Path) -> Result<()> {
        let log = std::fs::File::create(log_path).map_err(|e| Error::io(log_path, e))?;
        let log_err = log.try_clone().map_err(|e| Error::io(log_path, e))?;
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(self.command_line(checkpoint, inputs_path, out_path))
            .stdin(Stdio::null())
            .stdout(log)
            .stderr(log_err)
            .spawn()
            .map_err(|e| Error::BackendProcessFailed {
                code: None,
                diagnostics: format!("spawn failed: {e}"),
            })?;

        let started = Instant::now();
        let status = loop {
            match child.try_wait() {
                Ok(Some(status)) => break status,
                Ok(None) if started.elapsed() >= self.timeout => {
                    let _ = child.kill();
                    let _ = child.wait();
                    return Err(Error::BackendProcessFailed {
                        code: None,
                        diagnostics: format!(
                            "timed out after {}s; {}",
                            self.timeout.as_secs(),
                            tail(log_path)
                        ),
                    });
                }
                Ok(None) => std::thread::sleep(Duration::from_millis(10)),
                Err(e) => return Err(Error::io(checkpoint, e)),
            }
        };
        if !status.success() {
            return Err(Error::BackendProcessFailed {
                code: status.code(),
                diagnostics: tail(log_path),
            });
        }
        Ok(())
    }
}

fn tail(path: &Path) -> String {
    let text = std::fs::read_to_string(path).unwrap_or_default();
    let start = text.len().saturating_sub(2000);
    let start = (start..text.len()).find(|&i| text.is_char_boundary(i)).unwrap_or(text.len());
    text[start..].trim().to_string()
}

impl Generator for ProcessBackend {
    fn generate(&self, checkpoint: &Path, inputs: &[InputRecord]) -> Result<Vec<Response>> {
        std::fs::create_dir_all(&self.scratch).map_err(|e| Error::io(&self.scratch, e))?;
        let n = INVOCATION.fetch_add(1, Ordering::Relaxed);
        let stem = format!("gen-{}-{n}", std::process::id());
        let inputs_path = self.scratch.join(format!("{stem}.inputs.jsonl"));
        let out_path = self.scratch.join(format!("{stem}.out.jsonl"));
        let log_path = self.scratch.join(format!("{stem}.log"));
        write_jsonl(&inputs_path, inputs)?;

        let result = self.run(checkpoint, &inputs_path, &out_path, &log_path).and_then(|_| {
            if !out_path.exists() {
                return Err(Error::BackendProtocolError(format!(
                    "backend exited 0 but wrote no response file {}",
                    out_path.display()
                )));
            }
            read_jsonl::<Response>(&out_path)
                .map_err(|e| Error::BackendProtocolError(format!("unreadable response file: {e}")))
        });
        for p in [&inputs_path, &out_path, &log_path] {
            let _ = std::fs::remove_file(p);
        }
        result
    }

    fn capacity(&self) -> usize {
        self.capacity
    }
}

/// Reads the toy parameter vector from the checkpoint and answers in-process.
pub struct ToyBackend {
    spec: ToyTaskSpec,
    capacity: usize,
}

impl ToyBackend {
    pub fn new(spec: ToyTaskSpec) -> Self {
        Self { spec, capacity: 1 }
    }

    pub fn with_capacity(mut self, capacity: usize) -> Self {
        self.capacity = capacity.max(1);
        self
    }

    pub fn spec(&self) -> &ToyTaskSpec {
        &self.spec
    }
}

impl Generator for ToyBackend {
    fn generate(&self, checkpoint: &Path, inputs: &[InputRecord]) -> Result<Vec<Response>> {
        let params = Checkpoint::open(checkpoint)?
            .read_tensor(&self.spec.param_tensor)?
            .to_f32();
        let ids: Vec<String> = inputs.iter().map(|i| i.id.clone()).collect();
        Ok(toy_generate_for(&self.spec, &params, &ids)?.responses)
    }

    fn capacity(&self) -> usize {
        self.capacity
    }
}
