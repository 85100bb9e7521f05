use std::path::{Path, PathBuf};

use adamms_core::backend::{BackendDescriptor, BackendKind};
use adamms_core::merge::MergeRecipe;
use adamms_core::search::{build_grid, CandidateGrid, Metric, DEFAULT_HI, DEFAULT_LO, DEFAULT_STEP, DEFAULT_SUBSET};
use adamms_core::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default = "default_lo")]
    pub lo: f64,
    #[serde(default = "default_hi")]
    pub hi: f64,
    #[serde(default = "default_step")]
    pub step: f64,
}

fn default_lo() -> f64 {
    DEFAULT_LO
}
fn default_hi() -> f64 {
    DEFAULT_HI
}
fn default_step() -> f64 {
    DEFAULT_STEP
}
fn default_subset() -> usize {
    DEFAULT_SUBSET
}
fn default_workdir() -> PathBuf {
    PathBuf::from("adamms-work")
}
fn default_recipe() -> MergeRecipe {
    MergeRecipe::linear(adamms_core::merge::DEFAULT_ALPHA)
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            lo: DEFAULT_LO,
            hi: DEFAULT_HI,
            step: DEFAULT_STEP,
        }
    }
}

impl GridConfig {
    pub fn build(&self) -> Result<CandidateGrid> {
        build_grid(self.lo, self.hi, self.step)
    }
}

/// Everything a `merge` or `search` run needs. Relative paths in a config
/// file are resolved against the file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<String>,
    #[serde(default)]
    pub base_path: Option<PathBuf>,
    #[serde(default)]
    pub donor_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pivot_path: Option<PathBuf>,
    /// Mapping rules; without it only same-name, same-shape tensors are paired.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rules_path: Option<PathBuf>,
    #[serde(default = "default_recipe")]
    pub recipe: MergeRecipe,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default = "default_subset")]
    pub subset_n: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backend: Option<BackendDescriptor>,
    #[serde(default = "default_workdir")]
    pub workdir: PathBuf,
    #[serde(default)]
    pub metric: Metric,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inputs_path: Option<PathBuf>,
    /// Merged checkpoint; defaults to `<workdir>/merged.safetensors`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_path: Option<PathBuf>,
    /// Search report; defaults to `<workdir>/report.json`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report_path: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let dir = path.parent().unwrap_or(Path::new(""));
        config.resolve_relative_to(dir);
        Ok(config)
    }

    fn resolve_relative_to(&mut self, dir: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        for p in [
            &mut self.base_path,
            &mut self.donor_path,
            &mut self.pivot_path,
            &mut self.rules_path,
            &mut self.inputs_path,
            &mut self.output_path,
            &mut self.report_path,
            &mut self.recipe.pivot_path,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        fix(&mut self.workdir);
        if let Some(spec) = self.backend.as_mut().and_then(|b| b.toy_spec.as_mut()) {
            fix(spec);
        }
    }

    pub fn base(&self) -> Result<&Path> {
        required(&self.base_path, "base_path")
    }

    pub fn donor(&self) -> Result<&Path> {
        required(&self.donor_path, "donor_path")
    }

    pub fn inputs(&self) -> Result<&Path> {
        required(&self.inputs_path, "inputs_path")
    }

    pub fn output(&self) -> PathBuf {
        self.output_path
            .clone()
            .unwrap_or_else(|| self.workdir.join("merged.safetensors"))
    }

    pub fn report(&self) -> PathBuf {
        self.report_path
            .clone()
            .unwrap_or_else(|| self.workdir.join("report.json"))
    }

    /// The recipe with the top-level pivot filled in.
    pub fn effective_recipe(&self) -> MergeRecipe {
        let mut recipe = self.recipe.clone();
        if recipe.pivot_path.is_none() {
            recipe.pivot_path = self.pivot_path.clone();
        }
        recipe
    }

    pub fn backend(&self) -> Result<&BackendDescriptor> {
        let backend = self
            .backend
            .as_ref()
            .ok_or_else(|| Error::Config("missing field `backend`".into()))?;
        backend.validate()?;
        if backend.kind == BackendKind::Toy {
            let spec = backend.toy_spec.as_deref().expect("validated");
            if !spec.exists() {
                return Err(Error::Config(format!("toy spec {} not found", spec.display())));
            }
        }
        Ok(backend)
    }

    pub fn to_value(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

fn required<'a>(p: &'a Option<PathBuf>, field: &str) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| Error::Config(format!("missing field `{field}` (set it in the config or by flag)")))
}
