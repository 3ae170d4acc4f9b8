//! Dataset ingestion, the synthetic benchmark, and checkpoint persistence.
//!
//! Everything on disk is a plain-text `key: value` manifest plus raw binary
//! blobs of little-endian `f32` values in row-major order — bit-exact and
//! trivially writable from any feature-extraction pipeline.

mod benchmark;
mod checkpoint;
mod dataset;
mod format;

pub use benchmark::{
    benchmark_class_means, generate_synthetic_benchmark, SyntheticBenchmarkSpec,
};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use dataset::{
    load_dataset, save_dataset, save_synthesized_set, ClassId, FeatureDataset, GzslData, Split,
};
pub(crate) use dataset::{train_indices as dataset_train_indices, train_indices_of_class};
pub use format::{fingerprint64, read_blob_f32, write_blob_f32, Manifest, FORMAT_VERSION};

use thiserror::Error;

/// Errors raised while loading, validating, or writing data files.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("manifest line {line} is not a `key: value` pair")]
    MalformedManifest { line: usize },
    #[error("manifest is missing key `{key}`")]
    MissingKey { key: String },
    #[error("manifest value for `{key}` is invalid: {value}")]
    BadValue { key: String, value: String },
    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: String, expected: u32 },
    #[error("manifest kind `{found}` does not match expected `{expected}`")]
    KindMismatch { found: String, expected: String },
    #[error("blob {path} is truncated or oversized: {got} bytes, expected {expected}")]
    TruncatedBlob {
        path: String,
        got: usize,
        expected: usize,
    },
    #[error("shape mismatch in {what}: expected {expected}, got {got}")]
    ShapeMismatch {
        what: String,
        expected: usize,
        got: usize,
    },
    #[error("seen and unseen class sets overlap (class {class})")]
    OverlappingClassSets { class: ClassId },
    #[error("class {class} is in neither the seen nor the unseen set")]
    UnassignedClass { class: ClassId },
    #[error("sample {sample} has out-of-range label {label}")]
    LabelOutOfRange { sample: usize, label: usize },
    #[error("training split leaks unseen class {label} at sample {sample}")]
    TrainLeakage { sample: usize, label: ClassId },
    #[error("non-finite value in {what} at index {index}")]
    NonFiniteValue { what: String, index: usize },
    #[error("invalid specification: {0}")]
    InvalidSpec(String),
}
