use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One face: `n` per-patch embeddings, a visibility flag per patch and the
/// identity/media labels. `aux`, when present, is a whole-face embedding
/// appended to every patch input by the augmented head.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchEmbeddingRecord {
    pub subject: u32,
    pub media: u32,
    pub patches: Vec<Vec<f32>>,
    pub visible: Vec<bool>,
    pub aux: Option<Vec<f32>>,
}

impl PatchEmbeddingRecord {
    pub fn n_patches(&self) -> usize {
        self.patches.len()
    }

    pub fn visible_count(&self) -> usize {
        self.visible.iter().filter(|&&v| v).count()
    }

    pub fn all_occluded(&self) -> bool {
        self.visible.iter().all(|&v| !v)
    }

    pub fn all_visible(&self) -> bool {
        self.visible.iter().all(|&v| v)
    }

    /// Checks patch count, per-patch dimensions, auxiliary dimension and
    /// finiteness against a declared layout.
    pub fn validate(&self, dims: &[usize], aux_dim: usize) -> Result<()> {
        if self.patches.len() != dims.len() {
            return Err(Error::shape("patch count", dims.len(), self.patches.len()));
        }
        if self.visible.len() != dims.len() {
            return Err(Error::shape("occlusion vector length", dims.len(), self.visible.len()));
        }
        for (i, (p, &d)) in self.patches.iter().zip(dims).enumerate() {
            if p.len() != d {
                return Err(Error::shape(format!("patch {i} dimension"), d, p.len()));
            }
            if p.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "patch {i} of subject {} media {}",
                    self.subject, self.media
                )));
            }
        }
        match (&self.aux, aux_dim) {
            (None, 0) => {}
            (None, d) => return Err(Error::shape("auxiliary vector", d, "none")),
            (Some(a), d) if a.len() != d => return Err(Error::shape("auxiliary vector", d, a.len())),
            (Some(a), _) => {
                if a.iter().any(|x| !x.is_finite()) {
                    return Err(Error::NonFinite("auxiliary vector".into()));
                }
            }
        }
        Ok(())
    }

    pub fn dims(&self) -> Vec<usize> {
        self.patches.iter().map(Vec::len).collect()
    }
}

/// Fixed-length template; stored raw (not length-normalized).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompactTemplate(pub Vec<f32>);

impl CompactTemplate {
    pub fn new(values: Vec<f32>) -> Self {
        CompactTemplate(values)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn norm(&self) -> f32 {
        crate::numerics::norm(&self.0)
    }

    /// Zero vector: cannot take part in cosine matching.
    pub fn is_degenerate(&self) -> bool {
        self.0.iter().all(|&x| x == 0.0)
    }

    pub fn serialized_len(&self) -> usize {
        4 * self.0.len()
    }
}
