//! On-disk formats, synthetic corpora and checkpoints.

pub mod binfmt;
pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod pgm;
pub mod scenes;

pub use checkpoint::{read_checkpoint, write_checkpoint, TrainingMeta};
pub use dataset::{generate_dataset, load_pairs, load_raw, synthesize, DatasetConfig, DatasetManifest, ManifestEntry, Split};
pub use error::{IoError, Result};
