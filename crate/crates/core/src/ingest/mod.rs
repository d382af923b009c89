//! Reading and writing datasets: embedding files, per-episode files,
//! manifests and synthetic cohorts.

pub mod dataset;
pub mod embeddings;
pub mod episode_io;
pub mod synth;
pub mod tokenize;

pub use dataset::{assign_splits, Dataset, DatasetManifest, Exclusions, ManifestEntry, Split, MANIFEST_FILE};
pub use embeddings::{read_embeddings, write_embeddings};
pub use episode_io::{
    assemble_episode, read_episode, read_raw_episode, write_raw_episode, IngestOptions, LabelsRecord, NoteRecord,
    RawEpisode,
};
pub use synth::{generate_synthetic, SignalPlan, SyntheticConfig};
pub use tokenize::{tokenize, words};
