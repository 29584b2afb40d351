//! Feature bundles on disk and in memory, modality merging, subject splits
//! and synthetic data.

mod bundle;
pub mod container;
mod merge;
mod split;
mod synthetic;

use std::io;
use std::path::Path;

use thiserror::Error;

pub use bundle::{
    import_text, read_bundle, write_bundle, FeatureBundle, SampleInfo, BUNDLE_MAGIC, BUNDLE_VERSION,
};
pub(crate) use bundle::{layout_header_lines, parse_header};
pub use container::FormatError;
pub use merge::merge_modalities;
pub use split::{
    combinations, make_split, read_split_file, subject_splits, write_split_file, Split, SplitRule,
};
pub use synthetic::{generate_synthetic, SyntheticData, SyntheticSpec};

use crate::layout::LayoutError;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error("invalid bundle: {0}")]
    InvalidBundle(String),
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("sample mismatch: {0}")]
    SampleMismatch(String),
    #[error("part structure mismatch: {0}")]
    PartStructureMismatch(String),
    #[error("modality '{0}' appears in more than one bundle")]
    DuplicateModality(String),
    #[error("unknown subject {0}")]
    UnknownSubject(u32),
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
}

impl DataError {
    pub(crate) fn io(path: &Path, source: io::Error) -> Self {
        DataError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
