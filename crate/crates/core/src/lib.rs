//! Discovers a multi-label label space from an unlabeled corpus and a short
//! description of the classification objective, then classifies documents
//! against it and evaluates the result.
//!
//! The pipeline: [`corpus`] chunks documents, [`keyphrase`] prompts a
//! generation model for dominant keyphrases per chunk, [`cluster`] embeds and
//! clusters them, [`labelspace`] turns clusters into deduplicated labels,
//! [`classifier`] assigns ranked labels by entailment, [`refine`] grows the
//! space with long-tail labels, and [`eval`] measures coverage and P@k.

pub mod classifier;
pub mod cluster;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod gateway;
pub mod keyphrase;
pub mod labelspace;
pub mod pipeline;
pub mod refine;
pub mod review;
pub mod synthetic;

pub use error::{Error, ErrorClass, Result};

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
pub fn write_atomic(path: &std::path::Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
