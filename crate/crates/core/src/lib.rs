//! Checkpoint merging for models that share a language backbone, plus an
//! unsupervised search for the interpolation coefficient.

pub mod backend;
pub mod embed;
pub mod error;
pub mod mapping;
pub mod merge;
pub mod responses;
pub mod search;
pub mod store;
pub mod toy;

pub use backend::{generate, BackendDescriptor, BackendKind, Generator, ProcessBackend, ToyBackend};
pub use embed::{BagOfWordsEmbedder, Embedder};
pub use error::{Error, ErrorClass, Result};
pub use mapping::{resolve_mapping, MappingRule, ResolvedMapping, RuleKind};
pub use merge::{run_recipe, run_recipe_with, MergeRecipe, RunOptions, Strategy};
pub use responses::{InputRecord, Response, ResponseSet};
pub use search::{build_grid, search, CandidateGrid, Metric, SearchReport, SearchRequest};
pub use store::{file_sha256, read_checkpoint, write_checkpoint, Checkpoint, CheckpointManifest, Dtype, TensorEntry};
