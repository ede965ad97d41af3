//! Container formats, occlusion summarization, CSV import and the synthetic
//! embedding generator.
//!
//! All integers are little-endian and all floats IEEE-754 binary32 unless
//! stated otherwise. Readers load the whole file and validate magic, version
//! and exact length before returning anything.

mod bytes;
mod checkpoint;
mod csv_import;
mod embeddings;
mod occlusion;
mod synth;
mod templates;

pub use checkpoint::{Checkpoint, Classifier, LabelMap, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use csv_import::read_csv;
pub use embeddings::{EmbeddingContainer, EmbeddingLayout, EMBEDDING_MAGIC, EMBEDDING_VERSION};
pub use occlusion::summarize_occlusion;
pub use synth::{generate_synthetic, OcclusionProfile, SynthSpec};
pub use templates::{TemplateContainer, TemplateRecord, TEMPLATE_HEADER_LEN, TEMPLATE_MAGIC, TEMPLATE_VERSION};

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Writes `bytes` to a sibling temporary file, syncs it and renames it over
/// `path`, so a failed write never leaves a partial file at `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidInput(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}
