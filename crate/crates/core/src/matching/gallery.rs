use rayon::prelude::*;

use super::metrics::IdentificationReport;
use crate::data_io::TemplateRecord;
use crate::error::{Error, Result};
use crate::heads::CompactTemplate;
use crate::numerics::{dot, Matrix};

/// Enrolled templates with cached norms. Rows keep their raw values so that
/// pooled or re-exported templates are not altered by normalization.
#[derive(Clone, Debug)]
pub struct Gallery {
    templates: Matrix<f32>,
    norms: Vec<f32>,
    inv_norms: Vec<f32>,
    subjects: Vec<u32>,
}

impl Gallery {
    pub fn new(templates: &[CompactTemplate], subjects: &[u32]) -> Result<Self> {
        if templates.len() != subjects.len() {
            return Err(Error::shape("gallery labels", templates.len(), subjects.len()));
        }
        let first = templates
            .first()
            .ok_or_else(|| Error::InvalidInput("empty gallery".into()))?;
        let d = first.dim();
        let mut data = Vec::with_capacity(d * templates.len());
        let mut norms = Vec::with_capacity(templates.len());
        for (i, t) in templates.iter().enumerate() {
            if t.dim() != d {
                return Err(Error::shape(format!("gallery template {i}"), d, t.dim()));
            }
            let n = t.norm();
            if !(n > 0.0) || !n.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "gallery template {i} (subject {}) has zero or non-finite norm",
                    subjects[i]
                )));
            }
            norms.push(n);
            data.extend_from_slice(t.values());
        }
        let templates = Matrix::from_vec(templates.len(), d, data)?;
        Ok(Gallery {
            templates,
            inv_norms: norms.iter().map(|n| 1.0 / n).collect(),
            norms,
            subjects: subjects.to_vec(),
        })
    }

    pub fn from_records(records: &[TemplateRecord]) -> Result<Self> {
        let ts: Vec<CompactTemplate> = records.iter().map(|r| r.template.clone()).collect();
        let subjects: Vec<u32> = records.iter().map(|r| r.subject).collect();
        Self::new(&ts, &subjects)
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.templates.cols()
    }

    pub fn subjects(&self) -> &[u32] {
        &self.subjects
    }

    pub fn norms(&self) -> &[f32] {
        &self.norms
    }

    pub fn template(&self, j: usize) -> &[f32] {
        self.templates.row(j)
    }

    pub fn contains_subject(&self, subject: u32) -> bool {
        self.subjects.contains(&subject)
    }

    /// Cosine scores of one probe against every entry, written to `out`.
    pub fn scores_into(&self, probe: &[f32], out: &mut [f32]) -> Result<()> {
        let inv = self.probe_scale(probe)?;
        self.dots_into(probe, inv, out);
        Ok(())
    }

    pub fn scores(&self, probe: &[f32]) -> Result<Vec<f32>> {
        let mut out = vec![0.0; self.len()];
        self.scores_into(probe, &mut out)?;
        Ok(out)
    }

    pub(crate) fn probe_scale(&self, probe: &[f32]) -> Result<f32> {
        if probe.len() != self.dim() {
            return Err(Error::shape("probe template", self.dim(), probe.len()));
        }
        let n = dot(probe, probe).sqrt();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::InvalidInput("probe template has zero or non-finite norm".into()));
        }
        Ok(1.0 / n)
    }

    #[inline]
    pub(crate) fn dots_into(&self, probe: &[f32], probe_inv: f32, out: &mut [f32]) {
        for ((o, g), &inv) in out.iter_mut().zip(self.templates.row_iter()).zip(&self.inv_norms) {
            *o = dot(probe, g) * inv * probe_inv;
        }
    }

    /// 1-based rank of the best-scoring entry of `subject`. Entries
    /// scoring equal to it rank ahead only if they come earlier.
    pub fn rank_of(&self, scores: &[f32], subject: u32) -> Option<usize> {
        let mut best: Option<(usize, f32)> = None;
        for (j, (&s, &y)) in scores.iter().zip(&self.subjects).enumerate() {
            if y == subject && best.is_none_or(|(_, b)| s > b) {
                best = Some((j, s));
            }
        }
        let (jt, st) = best?;
        let ahead = scores
            .iter()
            .enumerate()
            .filter(|&(j, &s)| s > st || (s == st && j < jt))
            .count();
        Some(ahead + 1)
    }
}

/// Closed-set identification of labeled probes. Probes whose subject is not
/// enrolled are excluded and counted.
pub fn identify(probes: &[TemplateRecord], gallery: &Gallery) -> Result<IdentificationReport> {
    let ranks: Vec<Option<usize>> = probes
        .par_iter()
        .enumerate()
        .map_init(
            || vec![0f32; gallery.len()],
            |buf, (i, p)| {
                if !gallery.contains_subject(p.subject) {
                    return Ok(None);
                }
                gallery
                    .scores_into(p.template.values(), buf)
                    .map_err(|e| Error::InvalidInput(format!("probe {i}: {e}")))?;
                Ok(gallery.rank_of(buf, p.subject))
            },
        )
        .collect::<Result<_>>()?;
    let excluded = ranks.iter().filter(|r| r.is_none()).count();
    let ranks: Vec<usize> = ranks.into_iter().flatten().collect();
    IdentificationReport::from_ranks(ranks, excluded, gallery.len())
}
