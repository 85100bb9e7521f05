//! Unsupervised selection of the interpolation coefficient.
//!
//! Each candidate alpha on a monotonic grid is merged and run on a small,
//! unlabeled input subset. Candidate `i` (1-based, interior only) scores
//! `D_i = diff(G_i, G_{i-1}) + diff(G_i, G_{i+1})`, and the candidate with the
//! lowest score wins; ties go to the smaller alpha.

use std::collections::{BTreeMap, VecDeque};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backend::{generate, Generator};
use crate::embed::{cosine_similarity, Embedder};
use crate::error::{Error, Result};
use crate::mapping::ResolvedMapping;
use crate::merge::{run_recipe_with, MergeRecipe, RunOptions};
use crate::responses::{write_jsonl, InputRecord, ResponseSet};
use crate::store::Checkpoint;

pub const DEFAULT_LO: f64 = 0.0;
pub const DEFAULT_HI: f64 = 0.6;
pub const DEFAULT_STEP: f64 = 0.1;
pub const DEFAULT_SUBSET: usize = 100;

const GAP_TOLERANCE: f64 = 1e-12;

/// Published per-task selections on the default grid, as `reported` reports.
pub const REPORTED_SELECTIONS: &str = include_str!("../fixtures/reported_selections.json");

fn round12(x: f64) -> f64 {
    (x * 1e12).round() / 1e12
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateGrid {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
    pub alphas: Vec<f64>,
}

impl CandidateGrid {
    pub fn len(&self) -> usize {
        self.alphas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alphas.is_empty()
    }

    /// Alpha at a 1-based candidate position.
    pub fn alpha_at(&self, index: usize) -> Option<f64> {
        index.checked_sub(1).and_then(|i| self.alphas.get(i).copied())
    }

    pub fn validate(&self) -> Result<()> {
        let rebuilt = build_grid(self.lo, self.hi, self.step)?;
        if rebuilt.alphas.len() != self.alphas.len()
            || rebuilt
                .alphas
                .iter()
                .zip(&self.alphas)
                .any(|(a, b)| (a - b).abs() > GAP_TOLERANCE)
        {
            return Err(Error::InvalidGrid(format!(
                "alphas {:?} do not match lo={} hi={} step={}",
                self.alphas, self.lo, self.hi, self.step
            )));
        }
        Ok(())
    }
}

impl Default for CandidateGrid {
    fn default() -> Self {
        build_grid(DEFAULT_LO, DEFAULT_HI, DEFAULT_STEP).expect("default grid is valid")
    }
}

/// `lo, lo + step, ..., hi` inclusive.
pub fn build_grid(lo: f64, hi: f64, step: f64) -> Result<CandidateGrid> {
    if !(0.0 <= lo && lo < hi && hi <= 1.0) {
        return Err(Error::InvalidGrid(format!("need 0 <= lo < hi <= 1, got [{lo}, {hi}]")));
    }
    if !step.is_finite() || step <= 0.0 {
        return Err(Error::InvalidGrid(format!("step must be positive, got {step}")));
    }
    let span = (hi - lo) / step;
    let steps = span.round();
    if steps < 2.0 {
        return Err(Error::GridTooSmall(steps as usize + 1));
    }
    if (span - steps).abs() > 1e-9 {
        return Err(Error::InvalidGrid(format!(
            "step {step} does not divide [{lo}, {hi}]"
        )));
    }
    let alphas: Vec<f64> = (0..=steps as usize)
        .map(|i| round12(lo + i as f64 * step))
        .collect();
    Ok(CandidateGrid { lo, hi, step, alphas })
}

/// Up to `n` ids sampled uniformly without replacement, in original order.
pub fn sample_subset(input_ids: &[String], n: usize, seed: u64) -> Result<Vec<String>> {
    if input_ids.is_empty() {
        return Err(Error::NoInputs);
    }
    if n == 0 {
        return Err(Error::Config("subset size must be at least 1".into()));
    }
    if n >= input_ids.len() {
        return Ok(input_ids.to_vec());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, input_ids.len(), n).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| input_ids[i].clone()).collect())
}

fn normalize(output: &str) -> &str {
    output.trim()
}

/// Number of positions whose whitespace-trimmed outputs differ.
pub fn diff_exact(a: &ResponseSet, b: &ResponseSet) -> Result<usize> {
    a.check_aligned(b)?;
    Ok(a.responses
        .iter()
        .zip(&b.responses)
        .filter(|(x, y)| normalize(&x.output) != normalize(&y.output))
        .count())
}

/// `sum(1 - cos(embed(a_j), embed(b_j)))`, each term clamped to [0, 2].
pub fn diff_embedding(a: &ResponseSet, b: &ResponseSet, embedder: &dyn Embedder) -> Result<f64> {
    a.check_aligned(b)?;
    let differing: Vec<(&str, &str)> = a
        .responses
        .iter()
        .zip(&b.responses)
        .map(|(x, y)| (normalize(&x.output), normalize(&y.output)))
        .filter(|(x, y)| x != y)
        .collect();
    if differing.is_empty() {
        return Ok(0.0);
    }
    let texts: Vec<&str> = differing.iter().flat_map(|(x, y)| [*x, *y]).collect();
    let vectors = embedder.embed(&texts)?;
    if vectors.len() != texts.len() {
        return Err(Error::EmbeddingBackendError(format!(
            "{} vectors for {} texts",
            vectors.len(),
            texts.len()
        )));
    }
    let dim = vectors[0].len();
    if vectors.iter().any(|v| v.len() != dim) {
        return Err(Error::EmbeddingBackendError("vectors of mixed dimension".into()));
    }
    Ok(vectors
        .chunks_exact(2)
        .map(|pair| (1.0 - cosine_similarity(&pair[0], &pair[1])).clamp(0.0, 2.0))
        .sum())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Exact,
    Embedding,
}

/// Pairwise differences between adjacent candidates and the per-candidate
/// totals `D`, keyed by 1-based position `2..=n-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacentDiffs {
    pub pairs: Vec<f64>,
    pub d: BTreeMap<usize, f64>,
}

pub fn adjacent_difference<F>(sets: &[ResponseSet], mut metric: F) -> Result<AdjacentDiffs>
where
    F: FnMut(&ResponseSet, &ResponseSet) -> Result<f64>,
{
    if sets.len() < 3 {
        return Err(Error::GridTooSmall(sets.len()));
    }
    let pairs = sets
        .windows(2)
        .map(|w| metric(&w[0], &w[1]))
        .collect::<Result<Vec<_>>>()?;
    let d = (2..sets.len())
        .map(|i| (i, pairs[i - 2] + pairs[i - 1]))
        .collect();
    Ok(AdjacentDiffs { pairs, d })
}

/// The interior candidate with the lowest `D`; ties go to the smaller alpha.
/// Returns `(alpha, 1-based index)`.
pub fn select_alpha(d: &BTreeMap<usize, f64>, grid: &CandidateGrid) -> Result<(f64, usize)> {
    let mut best: Option<(usize, f64)> = None;
    for (&i, &score) in d {
        if best.is_none_or(|(_, s)| score < s) {
            best = Some((i, score));
        }
    }
    let (index, _) = best.ok_or(Error::GridTooSmall(grid.len()))?;
    let alpha = grid
        .alpha_at(index)
        .ok_or_else(|| Error::InvalidGrid(format!("D index {index} outside grid")))?;
    Ok((alpha, index))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    /// Produced by a search run; diff counts and D are present.
    #[default]
    Computed,
    /// Transcribed selection (e.g. a published table); only the choice is recorded.
    Reported,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairDiff {
    /// 1-based candidate positions.
    pub left: usize,
    pub right: usize,
    pub left_alpha: f64,
    pub right_alpha: f64,
    pub diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureInfo {
    pub alpha: f64,
    pub error: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<String>,
    #[serde(default)]
    pub provenance: Provenance,
    pub complete: bool,
    pub grid: CandidateGrid,
    #[serde(default)]
    pub metric: Metric,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub subset_ids: Vec<String>,
    #[serde(default)]
    pub pair_diffs: Vec<PairDiff>,
    #[serde(rename = "D", default)]
    pub d: BTreeMap<usize, f64>,
    #[serde(default)]
    pub selected_alpha: Option<f64>,
    #[serde(default)]
    pub selected_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<FailureInfo>,
    /// Effective configuration of the run that produced the report.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

impl SearchReport {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Error::Format(format!("search report: {m}"));
        self.grid.validate()?;
        let n = self.grid.len();
        if let Some(index) = self.selected_index {
            if index < 2 || index > n - 1 {
                return Err(bad(format!("selected index {index} is not an interior candidate")));
            }
            let alpha = self.grid.alpha_at(index).unwrap_or(f64::NAN);
            if self.selected_alpha != Some(alpha) {
                return Err(bad(format!(
                    "selected_alpha {:?} does not match grid position {index} ({alpha})",
                    self.selected_alpha
                )));
            }
        } else if self.selected_alpha.is_some() {
            return Err(bad("selected_alpha without selected_index".into()));
        }
        if self.provenance == Provenance::Reported {
            return Ok(());
        }
        if self.complete {
            let keys: Vec<usize> = self.d.keys().copied().collect();
            if keys != (2..n).collect::<Vec<_>>() {
                return Err(bad(format!("D defined at {keys:?}, expected 2..={}", n - 1)));
            }
            if self.pair_diffs.len() != n - 1 {
                return Err(bad(format!("{} pair diffs for {n} candidates", self.pair_diffs.len())));
            }
            let (_, index) = select_alpha(&self.d, &self.grid)?;
            if self.selected_index != Some(index) {
                return Err(bad(format!(
                    "selected index {:?} does not attain min D (index {index})",
                    self.selected_index
                )));
            }
        }
        Ok(())
    }

    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Human-readable summary.
    pub fn render(&self) -> String {
        let mut out = String::new();
        if let Some(task) = &self.task {
            out.push_str(&format!("task: {task}\n"));
        }
        out.push_str(&format!(
            "grid: [{}, {}] step {} ({} candidates), metric {:?}, {} inputs\n",
            self.grid.lo,
            self.grid.hi,
            self.grid.step,
            self.grid.len(),
            self.metric,
            self.subset_ids.len()
        ));
        if !self.pair_diffs.is_empty() {
            out.push_str("  alpha      D\n");
            for (i, alpha) in self.grid.alphas.iter().enumerate() {
                let d = self
                    .d
                    .get(&(i + 1))
                    .map_or_else(|| "-".to_string(), |v| format!("{v}"));
                let mark = if self.selected_index == Some(i + 1) { "  <- selected" } else { "" };
                out.push_str(&format!("  {alpha:<8} {d:>6}{mark}\n"));
            }
        }
        match (self.selected_alpha, &self.failure) {
            (Some(a), _) => out.push_str(&format!("selected alpha: {a}\n")),
            (None, Some(f)) => out.push_str(&format!(
                "incomplete: candidate alpha={} failed with {}: {}\n",
                f.alpha, f.error, f.message
            )),
            (None, None) => out.push_str("no selection\n"),
        }
        out
    }
}

/// Load one report or an array of reports, validating each.
pub fn load_reports(path: impl AsRef<Path>) -> Result<Vec<SearchReport>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_reports(&text)
}

pub fn parse_reports(text: &str) -> Result<Vec<SearchReport>> {
    let reports: Vec<SearchReport> = if text.trim_start().starts_with('[') {
        serde_json::from_str(text)?
    } else {
        vec![serde_json::from_str(text)?]
    };
    for r in &reports {
        r.validate()?;
    }
    Ok(reports)
}

/// One row per report: the task label and its selected alpha.
pub fn render_selection_table(reports: &[SearchReport]) -> String {
    let label = |r: &SearchReport| r.task.clone().unwrap_or_else(|| "-".into());
    let width = reports.iter().map(|r| label(r).len()).max().unwrap_or(0).max(4);
    let mut header = format!("{:<9}", "");
    let mut row = format!("{:<9}", "selected");
    for r in reports {
        header.push_str(&format!(" {:>width$}", label(r)));
        let a = r.selected_alpha.map_or_else(|| "-".into(), |a| format!("{a}"));
        row.push_str(&format!(" {a:>width$}"));
    }
    format!("{}\n{}\n", header.trim_end(), row)
}

/// Compare an unsupervised selection with the best candidate under labeled
/// per-candidate scores (one per grid point; NaN marks an unscored candidate).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionComparison {
    pub selected_alpha: f64,
    pub supervised_alpha: f64,
    pub distance: f64,
    pub selected_score: f64,
    pub best_score: f64,
}

pub fn compare_with_supervised(report: &SearchReport, scores: &[f64]) -> Result<SelectionComparison> {
    if scores.len() != report.grid.len() {
        return Err(Error::MisalignedResponses(format!(
            "{} scores for {} candidates",
            scores.len(),
            report.grid.len()
        )));
    }
    let index = report
        .selected_index
        .ok_or_else(|| Error::Format("report has no selection".into()))?;
    let best = scores
        .iter()
        .enumerate()
        .filter(|(_, s)| !s.is_nan())
        .fold(None, |best: Option<usize>, (i, &s)| match best {
            Some(b) if scores[b] >= s => Some(b),
            _ => Some(i),
        })
        .ok_or_else(|| Error::Config("no scored candidates".into()))?;
    let selected_alpha = report.grid.alphas[index - 1];
    let supervised_alpha = report.grid.alphas[best];
    Ok(SelectionComparison {
        selected_alpha,
        supervised_alpha,
        distance: round12((selected_alpha - supervised_alpha).abs()),
        selected_score: scores[index - 1],
        best_score: scores[best],
    })
}

pub struct SearchRequest<'a> {
    pub base: &'a Checkpoint,
    pub donor: &'a Checkpoint,
    pub mapping: &'a ResolvedMapping,
    pub grid: CandidateGrid,
    pub inputs: &'a [InputRecord],
    pub subset_n: usize,
    pub seed: u64,
    pub metric: Metric,
    /// Required for [`Metric::Embedding`].
    pub embedder: Option<&'a dyn Embedder>,
    /// Candidate checkpoints and response files go here.
    pub workdir: PathBuf,
    pub keep_candidates: bool,
    pub self_check: bool,
    /// Merge worker threads (0: rayon default).
    pub threads: usize,
    /// Where to write the checkpoint at the selected alpha.
    pub output: Option<PathBuf>,
}

impl<'a> SearchRequest<'a> {
    pub fn new(
        base: &'a Checkpoint,
        donor: &'a Checkpoint,
        mapping: &'a ResolvedMapping,
        inputs: &'a [InputRecord],
        workdir: impl Into<PathBuf>,
    ) -> Self {
        Self {
            base,
            donor,
            mapping,
            grid: CandidateGrid::default(),
            inputs,
            subset_n: DEFAULT_SUBSET,
            seed: 0,
            metric: Metric::Exact,
            embedder: None,
            workdir: workdir.into(),
            keep_candidates: false,
            self_check: false,
            threads: 0,
            output: None,
        }
    }
}

#[derive(Debug)]
pub struct SearchOutcome {
    pub report: SearchReport,
    /// Response sets in grid order.
    pub responses: Vec<ResponseSet>,
    pub output: Option<PathBuf>,
}

/// A failed search: the error plus an incomplete report of what finished.
#[derive(Debug)]
pub struct SearchAborted {
    pub report: Box<SearchReport>,
    pub error: Error,
}

impl From<SearchAborted> for Error {
    fn from(a: SearchAborted) -> Self {
        a.error
    }
}

fn candidate_path(workdir: &Path, index: usize) -> PathBuf {
    workdir.join("candidates").join(format!("candidate_{index:03}.safetensors"))
}

/// Merge every candidate, generate on the sampled subset, and select alpha.
pub fn search(req: &SearchRequest<'_>, backend: &dyn Generator) -> Result<SearchOutcome, SearchAborted> {
    let empty_report = |req: &SearchRequest<'_>| SearchReport {
        task: None,
        provenance: Provenance::Computed,
        complete: false,
        grid: req.grid.clone(),
        metric: req.metric,
        seed: req.seed,
        subset_ids: Vec::new(),
        pair_diffs: Vec::new(),
        d: BTreeMap::new(),
        selected_alpha: None,
        selected_index: None,
        failure: None,
        config: None,
    };
    let abort = |report: SearchReport, error: Error| SearchAborted { report: Box::new(report), error };

    let prepared = (|| {
        req.grid.validate()?;
        if req.grid.len() < 3 {
            return Err(Error::GridTooSmall(req.grid.len()));
        }
        if req.metric == Metric::Embedding && req.embedder.is_none() {
            return Err(Error::Config("embedding metric needs an embedder".into()));
        }
        let ids: Vec<String> = req.inputs.iter().map(|i| i.id.clone()).collect();
        let subset_ids = sample_subset(&ids, req.subset_n, req.seed)?;
        for dir in [req.workdir.join("candidates"), req.workdir.join("responses")] {
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        Ok(subset_ids)
    })();
    let subset_ids = match prepared {
        Ok(ids) => ids,
        Err(e) => return Err(abort(empty_report(req), e)),
    };
    let wanted: std::collections::HashSet<&str> = subset_ids.iter().map(String::as_str).collect();
    let subset: Vec<InputRecord> = req
        .inputs
        .iter()
        .filter(|i| wanted.contains(i.id.as_str()))
        .cloned()
        .collect();

    let (sets, failure) = collect_responses(req, backend, &subset);

    let mut report = empty_report(req);
    report.subset_ids = subset_ids;
    let alphas = &req.grid.alphas;
    let metric = |a: &ResponseSet, b: &ResponseSet| -> Result<f64> {
        match req.metric {
            Metric::Exact => diff_exact(a, b).map(|d| d as f64),
            Metric::Embedding => diff_embedding(a, b, req.embedder.expect("checked above")),
        }
    };

    if let Some((index, error)) = failure {
        // Partial report: whatever adjacent pairs completed before the failure.
        for i in 0..sets.len().saturating_sub(1) {
            if let (Some(a), Some(b)) = (&sets[i], &sets[i + 1]) {
                if let Ok(diff) = metric(a, b) {
                    report.pair_diffs.push(PairDiff {
                        left: i + 1,
                        right: i + 2,
                        left_alpha: alphas[i],
                        right_alpha: alphas[i + 1],
                        diff,
                    });
                }
            }
        }
        for i in 2..alphas.len() {
            let left = report.pair_diffs.iter().find(|p| p.right == i);
            let right = report.pair_diffs.iter().find(|p| p.left == i);
            if let (Some(l), Some(r)) = (left, right) {
                report.d.insert(i, l.diff + r.diff);
            }
        }
        let alpha = alphas[index];
        report.failure = Some(FailureInfo {
            alpha,
            error: error.name().to_string(),
            message: error.to_string(),
        });
        return Err(abort(
            report,
            Error::CandidateFailed {
                alpha,
                source: Box::new(error),
            },
        ));
    }

    let sets: Vec<ResponseSet> = sets.into_iter().map(|s| s.expect("all candidates ran")).collect();
    let finished = (|| {
        let diffs = adjacent_difference(&sets, metric)?;
        let (alpha, index) = select_alpha(&diffs.d, &req.grid)?;
        Ok((diffs, alpha, index))
    })();
    let (diffs, alpha, index) = match finished {
        Ok(v) => v,
        Err(e) => return Err(abort(report, e)),
    };
    report.pair_diffs = diffs
        .pairs
        .iter()
        .enumerate()
        .map(|(i, &diff)| PairDiff {
            left: i + 1,
            right: i + 2,
            left_alpha: alphas[i],
            right_alpha: alphas[i + 1],
            diff,
        })
        .collect();
    report.d = diffs.d;
    report.selected_alpha = Some(alpha);
    report.selected_index = Some(index);
    report.complete = true;

    let output = match &req.output {
        None => None,
        Some(out) => {
            let kept = candidate_path(&req.workdir, index);
            let placed = if req.keep_candidates && kept.exists() {
                std::fs::copy(&kept, out).map(|_| ()).map_err(|e| Error::io(out, e))
            } else {
                run_recipe_with(
                    &MergeRecipe::linear(alpha),
                    req.base,
                    req.donor,
                    req.mapping,
                    out,
                    &RunOptions { threads: req.threads },
                )
                .map(|_| ())
            };
            if let Err(e) = placed {
                report.complete = false;
                return Err(abort(report, e));
            }
            Some(out.clone())
        }
    };

    Ok(SearchOutcome {
        report,
        responses: sets,
        output,
    })
}

type Collected = (Vec<Option<ResponseSet>>, Option<(usize, Error)>);

/// Build candidates in grid order; generation for built candidates may
/// overlap with building the next one, up to the backend's capacity.
fn collect_responses(req: &SearchRequest<'_>, backend: &dyn Generator, subset: &[InputRecord]) -> Collected {
    let n = req.grid.len();
    let capacity = backend.capacity().max(1);
    let mut sets: Vec<Option<ResponseSet>> = vec![None; n];
    let mut failure: Option<(usize, Error)> = None;

    let record = |failure: &mut Option<(usize, Error)>, index: usize, error: Error| {
        if failure.as_ref().is_none_or(|(i, _)| index < *i) {
            *failure = Some((index, error));
        }
    };

    std::thread::scope(|scope| {
        let mut inflight = VecDeque::new();
        let settle = |handle: std::thread::ScopedJoinHandle<'_, (usize, Result<ResponseSet>)>,
                      sets: &mut Vec<Option<ResponseSet>>,
                      failure: &mut Option<(usize, Error)>| {
            let (index, result) = handle.join().expect("generation thread panicked");
            match result {
                Ok(set) => sets[index] = Some(set),
                Err(e) => record(failure, index, e),
            }
        };

        for (index, &alpha) in req.grid.alphas.iter().enumerate() {
            if failure.is_some() {
                break;
            }
            while inflight.len() >= capacity {
                settle(inflight.pop_front().unwrap(), &mut sets, &mut failure);
            }
            if failure.is_some() {
                break;
            }
            let path = candidate_path(&req.workdir, index + 1);
            let built = run_recipe_with(
                &MergeRecipe::linear(alpha),
                req.base,
                req.donor,
                req.mapping,
                &path,
                &RunOptions { threads: req.threads },
            );
            if let Err(e) = built {
                record(&mut failure, index, e);
                break;
            }
            log::info!("candidate {} (alpha={alpha}) built", index + 1);
            let keep = req.keep_candidates;
            let self_check = req.self_check;
            let responses_path = req.workdir.join("responses").join(format!("candidate_{:03}.jsonl", index + 1));
            inflight.push_back(scope.spawn(move || {
                let result = generate(backend, &path, subset, alpha, self_check).and_then(|set| {
                    write_jsonl(&responses_path, &set.responses)?;
                    Ok(set)
                });
                if !keep {
                    let _ = std::fs::remove_file(&path);
                }
                (index, result)
            }));
        }
        while let Some(handle) = inflight.pop_front() {
            settle(handle, &mut sets, &mut failure);
        }
    });
    (sets, failure)
}
