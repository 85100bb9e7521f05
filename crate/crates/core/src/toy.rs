//! Desk-scale stand-in for a generative model with an exactly computable
//! accuracy landscape.
//!
//! Each input `j` scores every vocabulary entry with a linear form of the
//! parameter vector, `score[v] = params . projection_j[:, v]`, and answers
//! with the argmax (ties to the lowest vocabulary index). Along the
//! interpolation path `params(alpha) = (1 - alpha) p1 + alpha p2` every score
//! is a line in alpha, so the answer is piecewise constant with finitely many
//! flip points.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::responses::{InputRecord, Response, ResponseSet};
use crate::store::{write_checkpoint, Dtype, TensorEntry};

pub const DEFAULT_PARAM_TENSOR: &str = "toy.params";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyTaskSpec {
    pub vocab: Vec<String>,
    pub input_count: usize,
    pub param_dim: usize,
    /// Correct vocabulary index per input.
    pub truth: Vec<usize>,
    /// Per input, a row-major `param_dim x vocab.len()` matrix.
    pub projections: Vec<Vec<f32>>,
    pub seed: u64,
    #[serde(default = "default_param_tensor")]
    pub param_tensor: String,
}

fn default_param_tensor() -> String {
    DEFAULT_PARAM_TENSOR.to_string()
}

pub fn toy_input_id(j: usize) -> String {
    format!("t{j:05}")
}

fn parse_input_id(id: &str) -> Option<usize> {
    id.strip_prefix('t')?.parse().ok()
}

fn vocab_words(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("ans{i:02}")).collect()
}

impl ToyTaskSpec {
    /// Random projections with entries in [-1, 1) and random truth labels.
    pub fn random(seed: u64, vocab_size: usize, input_count: usize, param_dim: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let projections = (0..input_count)
            .map(|_| {
                (0..param_dim * vocab_size)
                    .map(|_| rng.random_range(-1.0f32..1.0))
                    .collect()
            })
            .collect();
        let truth = (0..input_count)
            .map(|_| rng.random_range(0..vocab_size))
            .collect();
        Self {
            vocab: vocab_words(vocab_size),
            input_count,
            param_dim,
            truth,
            projections,
            seed,
            param_tensor: default_param_tensor(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |detail: String| Error::Config(format!("toy spec: {detail}"));
        if self.vocab.is_empty() || self.param_dim == 0 || self.input_count == 0 {
            return Err(bad("vocab, param_dim and input_count must be positive".into()));
        }
        if self.truth.len() != self.input_count || self.projections.len() != self.input_count {
            return Err(bad("truth/projections length differs from input_count".into()));
        }
        if self.truth.iter().any(|&t| t >= self.vocab.len()) {
            return Err(bad("truth index outside vocab".into()));
        }
        let width = self.param_dim * self.vocab.len();
        if self.projections.iter().any(|p| p.len() != width) {
            return Err(bad(format!("projection rows must hold {width} values")));
        }
        Ok(())
    }

    pub fn inputs(&self) -> Vec<InputRecord> {
        (0..self.input_count)
            .map(|j| InputRecord::new(toy_input_id(j), format!("toy question {j}")))
            .collect()
    }

    pub fn input_ids(&self) -> Vec<String> {
        (0..self.input_count).map(toy_input_id).collect()
    }

    pub fn index_of(&self, id: &str) -> Result<usize> {
        parse_input_id(id)
            .filter(|&j| j < self.input_count && toy_input_id(j) == id)
            .ok_or_else(|| Error::MisalignedResponses(format!("unknown toy input id `{id}`")))
    }

    /// Vocabulary index chosen for input `j`.
    pub fn answer(&self, j: usize, params: &[f32]) -> usize {
        let vocab = self.vocab.len();
        let proj = &self.projections[j];
        let mut best = 0usize;
        let mut best_score = f64::NEG_INFINITY;
        for v in 0..vocab {
            let score: f64 = params
                .iter()
                .enumerate()
                .map(|(k, &p)| f64::from(p) * f64::from(proj[k * vocab + v]))
                .sum();
            if score > best_score {
                best = v;
                best_score = score;
            }
        }
        best
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: Self = serde_json::from_str(&text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_vec(self)?).map_err(|e| Error::io(path, e))
    }
}

/// Responses for every input of the task.
pub fn toy_generate(spec: &ToyTaskSpec, params: &[f32]) -> Result<ResponseSet> {
    toy_generate_for(spec, params, &spec.input_ids())
}

/// Responses for the given input ids, in order.
pub fn toy_generate_for(spec: &ToyTaskSpec, params: &[f32], ids: &[String]) -> Result<ResponseSet> {
    if params.len() != spec.param_dim {
        return Err(Error::ShapeError {
            name: spec.param_tensor.clone(),
            detail: format!("{} parameters, task expects {}", params.len(), spec.param_dim),
        });
    }
    let responses = ids
        .iter()
        .map(|id| {
            let j = spec.index_of(id)?;
            Ok(Response::new(id.clone(), spec.vocab[spec.answer(j, params)].clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ResponseSet::new(f64::NAN, responses))
}

/// Fraction of responses equal to the correct answer.
pub fn toy_accuracy(spec: &ToyTaskSpec, responses: &ResponseSet) -> Result<f64> {
    if responses.is_empty() {
        return Err(Error::MisalignedResponses("no responses".into()));
    }
    let mut correct = 0usize;
    for r in &responses.responses {
        let j = spec.index_of(&r.id)?;
        if r.output == spec.vocab[spec.truth[j]] {
            correct += 1;
        }
    }
    Ok(correct as f64 / responses.len() as f64)
}

/// Knobs for [`single_peaked`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandscapeParams {
    pub input_count: usize,
    pub vocab_size: usize,
    /// Fraction of inputs the interpolated model can answer at all.
    pub solvable_fraction: f64,
    /// Range of the landscape's peak location.
    pub center_range: (f64, f64),
    /// Range of the half-width of the interval every solvable input gets right.
    pub plateau_half_width: (f64, f64),
    /// Mean extra reach of each solvable input's correct interval past the plateau.
    pub mean_extra_width: f64,
    /// Gap range between answer flips outside an input's correct interval.
    pub flip_gap: (f64, f64),
}

impl Default for LandscapeParams {
    fn default() -> Self {
        Self {
            input_count: 300,
            vocab_size: 64,
            solvable_fraction: 0.6,
            center_range: (0.15, 0.45),
            plateau_half_width: (0.05, 0.1),
            mean_extra_width: 0.15,
            flip_gap: (0.03, 0.12),
        }
    }
}

/// A toy task together with the two endpoint parameter vectors.
#[derive(Debug, Clone)]
pub struct ToyLab {
    pub spec: ToyTaskSpec,
    pub base_params: Vec<f32>,
    pub donor_params: Vec<f32>,
    pub center: f64,
}

impl ToyLab {
    pub fn params_at(&self, alpha: f64) -> Vec<f32> {
        self.base_params
            .iter()
            .zip(&self.donor_params)
            .map(|(&b, &d)| ((1.0 - alpha) * f64::from(b) + alpha * f64::from(d)) as f32)
            .collect()
    }

    /// Exact accuracy over all inputs at `alpha`.
    pub fn accuracy_at(&self, alpha: f64) -> f64 {
        let params = self.params_at(alpha);
        toy_accuracy(&self.spec, &toy_generate(&self.spec, &params).unwrap()).unwrap()
    }

    /// Write base/donor checkpoints, the task spec and the inputs file.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<ToyLabFiles> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let files = ToyLabFiles {
            base: dir.join("base.safetensors"),
            donor: dir.join("donor.safetensors"),
            spec: dir.join("toy_spec.json"),
            inputs: dir.join("inputs.jsonl"),
        };
        let tensor = |values: &[f32]| {
            TensorEntry::from_f32(
                self.spec.param_tensor.clone(),
                Dtype::F32,
                vec![values.len()],
                values,
            )
        };
        write_checkpoint([tensor(&self.base_params)?], &files.base)?;
        write_checkpoint([tensor(&self.donor_params)?], &files.donor)?;
        self.spec.save(&files.spec)?;
        crate::responses::write_jsonl(&files.inputs, &self.spec.inputs())?;
        Ok(files)
    }
}

#[derive(Debug, Clone)]
pub struct ToyLabFiles {
    pub base: PathBuf,
    pub donor: PathBuf,
    pub spec: PathBuf,
    pub inputs: PathBuf,
}

/// Breakpoints walking away from `start` in `direction` until leaving [0, 1].
fn flips_from(rng: &mut ChaCha8Rng, start: f64, direction: f64, gap: (f64, f64)) -> Vec<f64> {
    let mut points = Vec::new();
    let mut t = start;
    loop {
        t += direction * rng.random_range(gap.0..gap.1);
        if !(0.0..=1.0).contains(&t) {
            break;
        }
        points.push(t);
    }
    points
}

/// A task whose accuracy along the interpolation path is single-peaked.
///
/// Solvable inputs are answered correctly on one interval that contains a
/// shared plateau around the peak; away from it their answers drift through
/// a sequence of wrong answers. Unsolvable inputs drift everywhere. The base
/// model sits at `[1, 0]` and the donor at `[0, 1]`, so each input's score
/// for a vocabulary entry is the line `intercept + slope * alpha`.
pub fn single_peaked(seed: u64, params: &LandscapeParams) -> ToyLab {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab = params.vocab_size;
    let center = rng.random_range(params.center_range.0..params.center_range.1);
    let half = rng.random_range(params.plateau_half_width.0..params.plateau_half_width.1);

    let mut truth = Vec::with_capacity(params.input_count);
    let mut projections = Vec::with_capacity(params.input_count);
    for _ in 0..params.input_count {
        let correct = rng.random_range(0..vocab);
        let solvable = rng.random_bool(params.solvable_fraction);
        // Breakpoints of the upper envelope and the segment answered correctly.
        let (breaks, correct_segment) = if solvable {
            let extra = |rng: &mut ChaCha8Rng| -params.mean_extra_width * (1.0 - rng.random::<f64>()).ln();
            let left = (center - half - extra(&mut rng)).max(0.0);
            let right = (center + half + extra(&mut rng)).min(1.0);
            let mut before = flips_from(&mut rng, left, -1.0, params.flip_gap);
            before.reverse();
            let after = flips_from(&mut rng, right, 1.0, params.flip_gap);
            let mut breaks = before;
            if left > 0.0 {
                breaks.push(left);
            }
            let segment = Some(breaks.len());
            if right < 1.0 {
                breaks.push(right);
            }
            breaks.extend(after);
            (breaks, segment)
        } else {
            let start = rng.random_range(0.0..params.flip_gap.1);
            let mut breaks = vec![start];
            breaks.extend(flips_from(&mut rng, start, 1.0, params.flip_gap));
            (breaks, None)
        };

        let segments = breaks.len() + 1;
        assert!(segments < vocab, "vocab too small for {segments} answer segments");
        let mut labels: Vec<usize> = (0..vocab).filter(|&v| v != correct).collect();
        labels.shuffle(&mut rng);
        labels.truncate(segments);
        if let Some(k) = correct_segment {
            labels[k] = correct;
        }

        // Convex envelope: increasing slopes, continuous at each breakpoint.
        let mut lines = Vec::with_capacity(segments);
        let (mut slope, mut intercept) = (0.0f64, 0.0f64);
        lines.push((intercept, slope));
        for &b in &breaks {
            let next = slope + rng.random_range(0.5..1.5);
            intercept += (slope - next) * b;
            slope = next;
            lines.push((intercept, slope));
        }
        let floor = lines
            .iter()
            .flat_map(|&(c, s)| [c, c + s])
            .fold(f64::INFINITY, f64::min)
            - 1.0;

        let mut proj = vec![0.0f32; 2 * vocab];
        for v in 0..vocab {
            proj[v] = floor as f32;
            proj[vocab + v] = floor as f32;
        }
        for (&label, &(c, s)) in labels.iter().zip(&lines) {
            proj[label] = c as f32;
            proj[vocab + label] = (c + s) as f32;
        }
        truth.push(correct);
        projections.push(proj);
    }

    ToyLab {
        spec: ToyTaskSpec {
            vocab: vocab_words(vocab),
            input_count: params.input_count,
            param_dim: 2,
            truth,
            projections,
            seed,
            param_tensor: default_param_tensor(),
        },
        base_params: vec![1.0, 0.0],
        donor_params: vec![0.0, 1.0],
        center,
    }
}
