//! Per-tensor merging strategies and the streaming recipe runner.
//!
//! All arithmetic decodes to f32, accumulates in f64, and re-encodes to the
//! base tensor's dtype with round-to-nearest-even. φ-mapped tensors are copied
//! from the base byte for byte under every strategy.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mapping::ResolvedMapping;
use crate::store::{
    sum_sq, Checkpoint, CheckpointManifest, CheckpointWriter, Dtype, TensorEntry, TensorInfo,
    TensorLayout,
};

pub const DEFAULT_ALPHA: f64 = 0.5;
pub const DEFAULT_TRIM_DENSITY: f64 = 0.2;
pub const DEFAULT_DROP_RATE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    LinearInterpolation,
    TaskArithmetic,
    Ties,
    DareLinear,
    DareTies,
    Metagpt,
}

impl Strategy {
    pub fn needs_pivot(self) -> bool {
        self != Strategy::LinearInterpolation
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MergeRecipe {
    pub strategy: Strategy,
    /// Weight of the donor. Task-vector strategies weight the base and donor
    /// task vectors by `(1 - alpha, alpha)`.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_trim_density")]
    pub trim_density: f64,
    #[serde(default = "default_drop_rate")]
    pub drop_rate: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pivot_path: Option<PathBuf>,
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}
fn default_trim_density() -> f64 {
    DEFAULT_TRIM_DENSITY
}
fn default_drop_rate() -> f64 {
    DEFAULT_DROP_RATE
}

impl MergeRecipe {
    pub fn linear(alpha: f64) -> Self {
        Self {
            strategy: Strategy::LinearInterpolation,
            alpha,
            trim_density: DEFAULT_TRIM_DENSITY,
            drop_rate: DEFAULT_DROP_RATE,
            seed: 0,
            pivot_path: None,
        }
    }

    pub fn with_pivot(strategy: Strategy, alpha: f64, pivot: impl Into<PathBuf>) -> Self {
        Self {
            strategy,
            pivot_path: Some(pivot.into()),
            ..Self::linear(alpha)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidRecipe(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if !(self.trim_density > 0.0 && self.trim_density <= 1.0) {
            return Err(Error::InvalidRecipe(format!(
                "trim_density {} outside (0, 1]",
                self.trim_density
            )));
        }
        if !(0.0..1.0).contains(&self.drop_rate) {
            return Err(Error::InvalidRecipe(format!(
                "drop_rate {} outside [0, 1)",
                self.drop_rate
            )));
        }
        if self.strategy.needs_pivot() && self.pivot_path.is_none() {
            return Err(Error::InvalidRecipe(format!(
                "{:?} needs pivot_path",
                self.strategy
            )));
        }
        Ok(())
    }
}

fn check_same_shape(a: &TensorEntry, b: &TensorEntry) -> Result<()> {
    if a.shape != b.shape {
        return Err(Error::ShapeMismatch {
            name: if a.name == b.name {
                a.name.clone()
            } else {
                format!("{} / {}", a.name, b.name)
            },
            left: a.shape.clone(),
            right: b.shape.clone(),
        });
    }
    Ok(())
}

fn to_f32_vec(values: impl Iterator<Item = f64>) -> Vec<f32> {
    values.map(|v| v as f32).collect()
}

fn encode_like(template: &TensorEntry, values: &[f32]) -> TensorEntry {
    TensorEntry {
        name: template.name.clone(),
        dtype: template.dtype,
        shape: template.shape.clone(),
        data: crate::store::encode_f32(values, template.dtype),
    }
}

/// `(1 - alpha) * base + alpha * donor`; φ (`None`) returns the base unchanged.
pub fn merge_linear(
    base: &TensorEntry,
    donor: Option<&TensorEntry>,
    alpha: f64,
) -> Result<TensorEntry> {
    let Some(donor) = donor else {
        return Ok(base.clone());
    };
    check_same_shape(base, donor)?;
    if alpha == 0.0 {
        return Ok(base.clone());
    }
    let values = lerp(&base.to_f32(), &donor.to_f32(), alpha);
    Ok(encode_like(base, &values))
}

fn lerp(base: &[f32], donor: &[f32], alpha: f64) -> Vec<f32> {
    let keep = 1.0 - alpha;
    to_f32_vec(
        base.iter()
            .zip(donor)
            .map(|(&b, &d)| keep * f64::from(b) + alpha * f64::from(d)),
    )
}

/// `model - pivot` as an f32 tensor named after `model`.
pub fn task_vector(model: &TensorEntry, pivot: &TensorEntry) -> Result<TensorEntry> {
    check_same_shape(model, pivot)?;
    let values = to_f32_vec(
        model
            .to_f32()
            .into_iter()
            .zip(pivot.to_f32())
            .map(|(m, p)| f64::from(m) - f64::from(p)),
    );
    TensorEntry::from_f32(model.name.clone(), Dtype::F32, model.shape.clone(), &values)
}

/// `pivot + sum_i coeffs[i] * taus[i]`, in the pivot's dtype.
pub fn merge_task_arithmetic(
    pivot: &TensorEntry,
    taus: &[TensorEntry],
    coeffs: &[f64],
) -> Result<TensorEntry> {
    if taus.len() != coeffs.len() {
        return Err(Error::ShapeMismatch {
            name: pivot.name.clone(),
            left: vec![taus.len()],
            right: vec![coeffs.len()],
        });
    }
    for tau in taus {
        check_same_shape(pivot, tau)?;
    }
    let decoded: Vec<Vec<f32>> = taus.iter().map(TensorEntry::to_f32).collect();
    let mut acc: Vec<f64> = pivot.to_f32().into_iter().map(f64::from).collect();
    for (tau, &c) in decoded.iter().zip(coeffs) {
        for (a, &t) in acc.iter_mut().zip(tau) {
            *a += c * f64::from(t);
        }
    }
    Ok(encode_like(pivot, &to_f32_vec(acc.into_iter())))
}

/// Number of elements TIES keeps out of `n` at `density`.
pub fn trim_keep_count(n: usize, density: f64) -> usize {
    // Guard against products like 3 * (2/3) landing a hair above an integer.
    ((density * n as f64 - 1e-9).ceil().max(0.0) as usize).min(n)
}

/// Zero all but the `k` largest-magnitude entries; equal magnitudes at the
/// cutoff keep the lower flat index.
pub(crate) fn trim_top_k(values: &[f32], k: usize) -> Vec<f32> {
    let n = values.len();
    if k >= n {
        return values.to_vec();
    }
    let mut out = vec![0.0f32; n];
    if k == 0 {
        return out;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.select_nth_unstable_by(k - 1, |&a, &b| {
        values[b]
            .abs()
            .total_cmp(&values[a].abs())
            .then(a.cmp(&b))
    });
    for &i in &order[..k] {
        out[i] = values[i];
    }
    out
}

/// Trim, elect sign and disjoint-merge with per-model weights.
///
/// The elected sign is that of `sum_i w_i t_i` (zero elects +); the output is
/// `sum w_i t_i / sum w_i` over the trimmed values agreeing with it, or 0.
pub(crate) fn ties_kernel(taus: &[Vec<f32>], weights: &[f64], density: f64) -> Vec<f32> {
    let n = taus.first().map_or(0, Vec::len);
    let k = trim_keep_count(n, density);
    let trimmed: Vec<Vec<f32>> = taus.iter().map(|t| trim_top_k(t, k)).collect();
    (0..n)
        .map(|j| {
            let total: f64 = trimmed
                .iter()
                .zip(weights)
                .map(|(t, &w)| w * f64::from(t[j]))
                .sum();
            let positive = total >= 0.0;
            let mut num = 0.0f64;
            let mut den = 0.0f64;
            for (t, &w) in trimmed.iter().zip(weights) {
                let v = t[j];
                if v != 0.0 && (v > 0.0) == positive && w > 0.0 {
                    num += w * f64::from(v);
                    den += w;
                }
            }
            if den > 0.0 {
                (num / den) as f32
            } else {
                0.0
            }
        })
        .collect()
}

/// Unweighted TIES merge of task vectors.
pub fn ties_merge(taus: &[TensorEntry], trim_density: f64) -> Result<TensorEntry> {
    let Some(first) = taus.first() else {
        return Err(Error::InvalidRecipe("ties needs at least one task vector".into()));
    };
    if !(trim_density > 0.0 && trim_density <= 1.0) {
        return Err(Error::InvalidRecipe(format!(
            "trim_density {trim_density} outside (0, 1]"
        )));
    }
    for tau in &taus[1..] {
        check_same_shape(first, tau)?;
    }
    let decoded: Vec<Vec<f32>> = taus.iter().map(TensorEntry::to_f32).collect();
    let weights = vec![1.0; taus.len()];
    Ok(encode_like(first, &ties_kernel(&decoded, &weights, trim_density)))
}

/// Random stream for DARE, keyed by `(seed, key)` only.
fn dare_rng(seed: u64, key: &str) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(key.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 32];
    bytes.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(bytes)
}

pub(crate) fn dare_in_place(values: &mut [f32], drop_rate: f64, seed: u64, key: &str) {
    if drop_rate == 0.0 {
        return;
    }
    let mut rng = dare_rng(seed, key);
    let scale = 1.0 / (1.0 - drop_rate);
    for v in values.iter_mut() {
        let u: f64 = rng.random();
        *v = if u < drop_rate {
            0.0
        } else {
            (f64::from(*v) * scale) as f32
        };
    }
}

/// Drop each element with probability `drop_rate` and rescale survivors by
/// `1 / (1 - drop_rate)`. The mask depends only on `(seed, tensor_name)` and
/// the element index.
pub fn dare_transform(
    tau: &TensorEntry,
    drop_rate: f64,
    seed: u64,
    tensor_name: &str,
) -> Result<TensorEntry> {
    if !(0.0..1.0).contains(&drop_rate) {
        return Err(Error::InvalidRecipe(format!(
            "drop_rate {drop_rate} outside [0, 1)"
        )));
    }
    if drop_rate == 0.0 {
        return Ok(tau.clone());
    }
    let mut values = tau.to_f32();
    dare_in_place(&mut values, drop_rate, seed, tensor_name);
    Ok(encode_like(tau, &values))
}

/// `norm_sq[i] / sum(norm_sq)`.
pub fn metagpt_coefficients_from_norms(norms_sq: &[f64]) -> Result<Vec<f64>> {
    if norms_sq.len() < 2 {
        return Err(Error::InvalidRecipe(
            "metagpt needs at least two task vectors".into(),
        ));
    }
    let total: f64 = norms_sq.iter().sum();
    if total <= 0.0 {
        return Err(Error::DegenerateTaskVectors);
    }
    Ok(norms_sq.iter().map(|n| n / total).collect())
}

/// Closed-form MetaGPT scaling coefficients, one per whole-model task vector.
pub fn metagpt_coefficients(task_vectors: &[Vec<TensorEntry>]) -> Result<Vec<f64>> {
    if let Some(first) = task_vectors.first() {
        let layout: BTreeMap<&str, &[usize]> = first
            .iter()
            .map(|t| (t.name.as_str(), t.shape.as_slice()))
            .collect();
        for tv in &task_vectors[1..] {
            let other: BTreeMap<&str, &[usize]> =
                tv.iter().map(|t| (t.name.as_str(), t.shape.as_slice())).collect();
            if other != layout {
                return Err(Error::ShapeMismatch {
                    name: "task vector parameter sets differ".into(),
                    left: vec![layout.len()],
                    right: vec![other.len()],
                });
            }
        }
    }
    let norms = task_vectors
        .iter()
        .map(|tv| {
            tv.iter()
                .map(crate::store::tensor_norm_sq)
                .sum::<Result<f64>>()
        })
        .collect::<Result<Vec<f64>>>()?;
    metagpt_coefficients_from_norms(&norms)
}

/// Tracks payload bytes held by an in-flight merge.
#[derive(Debug, Default)]
pub struct PayloadMeter {
    current: AtomicU64,
    peak: AtomicU64,
}

impl PayloadMeter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn hold(&self, bytes: u64) -> PayloadGuard<'_> {
        let now = self.current.fetch_add(bytes, Ordering::SeqCst) + bytes;
        self.peak.fetch_max(now, Ordering::SeqCst);
        PayloadGuard { meter: self, bytes }
    }

    pub fn peak(&self) -> u64 {
        self.peak.load(Ordering::SeqCst)
    }
}

#[must_use]
pub struct PayloadGuard<'a> {
    meter: &'a PayloadMeter,
    bytes: u64,
}

impl Drop for PayloadGuard<'_> {
    fn drop(&mut self) {
        self.meter.current.fetch_sub(self.bytes, Ordering::SeqCst);
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Worker threads for per-tensor merges; 0 uses the rayon default.
    pub threads: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MergeStats {
    pub merged_tensors: usize,
    pub copied_tensors: usize,
    /// Peak payload bytes (inputs, intermediates and output) held at once.
    pub peak_payload_bytes: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metagpt_coefficients: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct MergeOutcome {
    pub manifest: CheckpointManifest,
    pub stats: MergeStats,
}

struct MergeContext<'a> {
    recipe: &'a MergeRecipe,
    base: &'a Checkpoint,
    donor: &'a Checkpoint,
    pivot: Option<&'a Checkpoint>,
    mapping: &'a ResolvedMapping,
    coefficients: Option<(f64, f64)>,
    meter: &'a PayloadMeter,
}

struct Sources {
    base: TensorEntry,
    donor: TensorEntry,
    pivot: Option<TensorEntry>,
}

impl MergeContext<'_> {
    fn load(&self, info: &TensorInfo, target: &str) -> Result<Sources> {
        let base = self.base.read_info(info)?;
        let donor_info = self.donor.manifest().get(target).ok_or_else(|| {
            Error::MappingTargetMissing {
                rule: "resolved mapping".into(),
                base: info.name.clone(),
                target: target.to_string(),
            }
        })?;
        let donor = self.donor.read_info(donor_info)?;
        check_same_shape(&base, &donor)?;
        let pivot = match self.pivot {
            Some(pivot) => {
                let pinfo = pivot.manifest().get(&info.name).ok_or_else(|| {
                    Error::MappingTargetMissing {
                        rule: "pivot".into(),
                        base: info.name.clone(),
                        target: info.name.clone(),
                    }
                })?;
                let p = pivot.read_info(pinfo)?;
                check_same_shape(&base, &p)?;
                Some(p)
            }
            None => None,
        };
        Ok(Sources { base, donor, pivot })
    }

    fn task_vectors(&self, src: &Sources) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let p: Vec<f64> = src
            .pivot
            .as_ref()
            .map(|p| p.to_f32().into_iter().map(f64::from).collect())
            .unwrap_or_default();
        let t1 = src
            .base
            .to_f32()
            .into_iter()
            .zip(&p)
            .map(|(b, p)| f64::from(b) - p)
            .collect();
        let t2 = src
            .donor
            .to_f32()
            .into_iter()
            .zip(&p)
            .map(|(d, p)| f64::from(d) - p)
            .collect();
        (p, t1, t2)
    }

    fn merge_one(&self, info: &TensorInfo) -> Result<(TensorEntry, Option<PayloadGuard<'_>>, bool)> {
        let Some(target) = self.mapping.target(&info.name) else {
            let base = self.base.read_info(info)?;
            let guard = self.meter.hold(base.data.len() as u64);
            return Ok((base, Some(guard), false));
        };
        let src = self.load(info, target)?;
        let raw_bytes = src.base.data.len()
            + src.donor.data.len()
            + src.pivot.as_ref().map_or(0, |p| p.data.len());
        // Decoded f32 copies plus f64 task vectors for the pivot strategies.
        let work_bytes = info.numel() as u64 * if src.pivot.is_some() { 4 * 2 + 8 * 3 } else { 4 * 3 };
        let guard = self.meter.hold(raw_bytes as u64 + work_bytes);

        let r = self.recipe;
        let alpha = r.alpha;
        let out = match r.strategy {
            Strategy::LinearInterpolation => merge_linear(&src.base, Some(&src.donor), alpha)?,
            Strategy::TaskArithmetic => {
                let (p, t1, t2) = self.task_vectors(&src);
                weighted(&src.base, &p, &t1, &t2, 1.0 - alpha, alpha)
            }
            Strategy::Metagpt => {
                let (c1, c2) = self.coefficients.expect("metagpt coefficients computed");
                let (p, t1, t2) = self.task_vectors(&src);
                weighted(&src.base, &p, &t1, &t2, c1, c2)
            }
            Strategy::DareLinear => {
                let (p, t1, t2) = self.task_vectors(&src);
                let (t1, t2) = self.dare_pair(&info.name, &t1, &t2);
                let t1: Vec<f64> = t1.into_iter().map(f64::from).collect();
                let t2: Vec<f64> = t2.into_iter().map(f64::from).collect();
                weighted(&src.base, &p, &t1, &t2, 1.0 - alpha, alpha)
            }
            Strategy::Ties | Strategy::DareTies => {
                let (p, t1, t2) = self.task_vectors(&src);
                let (t1, t2) = if r.strategy == Strategy::DareTies {
                    self.dare_pair(&info.name, &t1, &t2)
                } else {
                    (to_f32_vec(t1.into_iter()), to_f32_vec(t2.into_iter()))
                };
                let merged = ties_kernel(&[t1, t2], &[1.0 - alpha, alpha], r.trim_density);
                let values = to_f32_vec(p.iter().zip(&merged).map(|(&p, &m)| p + f64::from(m)));
                encode_like(&src.base, &values)
            }
        };
        let out_guard = self.meter.hold(out.data.len() as u64);
        drop(guard);
        Ok((out, Some(out_guard), true))
    }

    fn dare_pair(&self, name: &str, t1: &[f64], t2: &[f64]) -> (Vec<f32>, Vec<f32>) {
        let r = self.recipe;
        let mut a = to_f32_vec(t1.iter().copied());
        let mut b = to_f32_vec(t2.iter().copied());
        dare_in_place(&mut a, r.drop_rate, r.seed, &format!("base/{name}"));
        dare_in_place(&mut b, r.drop_rate, r.seed, &format!("donor/{name}"));
        (a, b)
    }

    fn norms(&self, info: &TensorInfo) -> Result<(f64, f64)> {
        let Some(target) = self.mapping.target(&info.name) else {
            return Ok((0.0, 0.0));
        };
        let src = self.load(info, target)?;
        let _guard = self.meter.hold(
            (src.base.data.len() + src.donor.data.len()) as u64 + info.numel() as u64 * 24,
        );
        let (_, t1, t2) = self.task_vectors(&src);
        let sq = |t: &[f64]| t.iter().map(|v| v * v).sum::<f64>();
        Ok((sq(&t1), sq(&t2)))
    }
}

fn weighted(
    template: &TensorEntry,
    pivot: &[f64],
    t1: &[f64],
    t2: &[f64],
    c1: f64,
    c2: f64,
) -> TensorEntry {
    let values = to_f32_vec(
        pivot
            .iter()
            .zip(t1.iter().zip(t2))
            .map(|(&p, (&a, &b))| p + c1 * a + c2 * b),
    );
    encode_like(template, &values)
}

fn partial_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".partial");
    out.with_file_name(name)
}

/// Merge `base` and `donor` tensor by tensor into `out_path`.
pub fn run_recipe(
    recipe: &MergeRecipe,
    base: &Checkpoint,
    donor: &Checkpoint,
    mapping: &ResolvedMapping,
    out_path: impl AsRef<Path>,
) -> Result<CheckpointManifest> {
    run_recipe_with(recipe, base, donor, mapping, out_path, &RunOptions::default())
        .map(|o| o.manifest)
}

pub fn run_recipe_with(
    recipe: &MergeRecipe,
    base: &Checkpoint,
    donor: &Checkpoint,
    mapping: &ResolvedMapping,
    out_path: impl AsRef<Path>,
    options: &RunOptions,
) -> Result<MergeOutcome> {
    recipe.validate()?;
    let out_path = out_path.as_ref();
    let base_manifest = base.manifest();
    if mapping.pairs.len() != base_manifest.len()
        || base_manifest.names().any(|n| !mapping.pairs.contains_key(n))
    {
        return Err(Error::InvalidRecipe(
            "mapping was not resolved against this base checkpoint".into(),
        ));
    }
    let pivot = match (&recipe.pivot_path, recipe.strategy.needs_pivot()) {
        (Some(path), true) => Some(Checkpoint::open(path)?),
        _ => None,
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let workers = pool.current_num_threads().max(1);
    let meter = PayloadMeter::new();
    let mut ctx = MergeContext {
        recipe,
        base,
        donor,
        pivot: pivot.as_ref(),
        mapping,
        coefficients: None,
        meter: &meter,
    };

    if recipe.strategy == Strategy::Metagpt {
        let per_tensor: Vec<(f64, f64)> = pool.install(|| {
            base_manifest
                .entries
                .par_iter()
                .map(|info| ctx.norms(info))
                .collect::<Result<Vec<_>>>()
        })?;
        // Sequential sum keeps the coefficients independent of scheduling.
        let (n1, n2) = per_tensor
            .iter()
            .fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
        let c = metagpt_coefficients_from_norms(&[n1, n2])?;
        ctx.coefficients = Some((c[0], c[1]));
    }

    let tmp = partial_path(out_path);
    let result = (|| {
        let layouts = base_manifest.entries.iter().map(TensorLayout::from).collect();
        let mut writer = CheckpointWriter::create(&tmp, layouts, base_manifest.metadata.clone())?;
        let mut merged = 0;
        let mut copied = 0;
        for chunk in base_manifest.entries.chunks(workers) {
            let outputs = pool.install(|| {
                chunk
                    .par_iter()
                    .map(|info| ctx.merge_one(info))
                    .collect::<Result<Vec<_>>>()
            })?;
            for (entry, guard, was_merged) in outputs {
                writer.write_tensor(&entry)?;
                drop(guard);
                if was_merged {
                    merged += 1;
                } else {
                    copied += 1;
                }
            }
        }
        writer.finish()?;
        Ok((merged, copied))
    })();

    match result {
        Ok((merged_tensors, copied_tensors)) => {
            std::fs::rename(&tmp, out_path).map_err(|e| Error::io(out_path, e))?;
            let mut manifest = crate::store::read_checkpoint(out_path)?;
            manifest.source_path = out_path.to_path_buf();
            Ok(MergeOutcome {
                manifest,
                stats: MergeStats {
                    merged_tensors,
                    copied_tensors,
                    peak_payload_bytes: meter.peak(),
                    metagpt_coefficients: ctx.coefficients.map(|(a, b)| vec![a, b]),
                },
            })
        }
        Err(e) => {
            let _ = std::fs::remove_file(&tmp);
            Err(e)
        }
    }
}

/// Sum of squares of `model - pivot` over a whole checkpoint; used for
/// reporting and tests.
pub fn checkpoint_task_norm_sq(model: &Checkpoint, pivot: &Checkpoint) -> Result<f64> {
    let mut total = 0.0;
    for info in &model.manifest().entries {
        let m = model.read_info(info)?;
        let p = pivot.read_tensor(&info.name)?;
        total += sum_sq(&task_vector(&m, &p)?.to_f32());
    }
    Ok(total)
}
