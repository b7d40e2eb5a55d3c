//! Series ingestion, sliding windows and the planted-permutation synthetic
//! task.

mod series;
mod synth;
mod window;

pub use series::{format_timestamp, ingest_csv, parse_timestamp, IngestSchema, SeriesTable};
pub use synth::{
    invert_permutation, synthesize, PermutationSidecar, SyntheticTask, SyntheticTaskSpec,
};
pub use window::{make_windows, NormStats, Split, WindowConfig, WindowedDataset};
