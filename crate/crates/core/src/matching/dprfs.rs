use crate::error::{Error, Result};
use crate::heads::PatchEmbeddingRecord;
use crate::numerics::dot;

/// Score given to a pair with no commonly visible patch unless configured
/// otherwise. Such pairs are also flagged.
pub const ZERO_OVERLAP_SCORE: f64 = 0.0;

/// The uncompressed representation: all patch embeddings plus visibility.
#[derive(Clone, Debug, PartialEq)]
pub struct DprfsTemplate {
    pub patches: Vec<Vec<f32>>,
    pub visible: Vec<bool>,
}

impl DprfsTemplate {
    pub fn new(patches: Vec<Vec<f32>>, visible: Vec<bool>) -> Result<Self> {
        if patches.len() != visible.len() {
            return Err(Error::shape("visibility flags", patches.len(), visible.len()));
        }
        Ok(DprfsTemplate { patches, visible })
    }

    pub fn from_record(r: &PatchEmbeddingRecord) -> Self {
        DprfsTemplate {
            patches: r.patches.clone(),
            visible: r.visible.clone(),
        }
    }

    pub fn dims(&self) -> Vec<usize> {
        self.patches.iter().map(Vec::len).collect()
    }

    /// Bytes taken by the concatenated patch vectors as 32-bit floats.
    pub fn payload_len(&self) -> usize {
        4 * self.patches.iter().map(Vec::len).sum::<usize>()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DprfsScore {
    pub value: f64,
    /// Number of patches visible in both templates.
    pub overlap: usize,
}

impl DprfsScore {
    pub fn flagged(&self) -> bool {
        self.overlap == 0
    }
}

fn check_dims(a: &DprfsTemplate, b: &DprfsTemplate) -> Result<()> {
    if a.patches.len() != b.patches.len() {
        return Err(Error::shape("patch count", a.patches.len(), b.patches.len()));
    }
    for (i, (x, y)) in a.patches.iter().zip(&b.patches).enumerate() {
        if x.len() != y.len() {
            return Err(Error::shape(format!("patch {i}"), x.len(), y.len()));
        }
    }
    Ok(())
}

fn patch_cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0f64, 0f64, 0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (f64::from(x), f64::from(y));
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    // a zero patch carries no direction; it counts as orthogonal
    if aa == 0.0 || bb == 0.0 {
        0.0
    } else {
        ab / (aa.sqrt() * bb.sqrt())
    }
}

/// Mean per-patch cosine over the patches visible in both templates.
pub fn dprfs_score(a: &DprfsTemplate, b: &DprfsTemplate) -> Result<DprfsScore> {
    check_dims(a, b)?;
    let mut total = 0.0;
    let mut overlap = 0;
    for i in 0..a.patches.len() {
        if a.visible[i] && b.visible[i] {
            total += patch_cosine(&a.patches[i], &b.patches[i]);
            overlap += 1;
        }
    }
    let value = if overlap == 0 { ZERO_OVERLAP_SCORE } else { total / overlap as f64 };
    Ok(DprfsScore { value, overlap })
}

/// Prepared form for repeated masked matching: every patch is stored unit
/// normalized in one flat buffer and visibility is packed into a bit mask,
/// so a comparison is one mask intersection plus a dot per common patch.
#[derive(Clone, Debug)]
pub struct DprfsGallery {
    dims: Vec<usize>,
    offsets: Vec<usize>,
    stride: usize,
    data: Vec<f32>,
    masks: Vec<u64>,
    sentinel: f64,
}

impl DprfsGallery {
    pub fn new(templates: &[DprfsTemplate]) -> Result<Self> {
        Self::with_sentinel(templates, ZERO_OVERLAP_SCORE)
    }

    pub fn with_sentinel(templates: &[DprfsTemplate], sentinel: f64) -> Result<Self> {
        let first = templates
            .first()
            .ok_or_else(|| Error::InvalidInput("empty template set".into()))?;
        let dims = first.dims();
        if dims.len() > 64 {
            return Err(Error::InvalidInput(format!("at most 64 patches supported, got {}", dims.len())));
        }
        let mut offsets = Vec::with_capacity(dims.len());
        let mut stride = 0;
        for &d in &dims {
            offsets.push(stride);
            stride += d;
        }
        let mut g = DprfsGallery {
            dims,
            offsets,
            stride,
            data: Vec::with_capacity(stride * templates.len()),
            masks: Vec::with_capacity(templates.len()),
            sentinel,
        };
        for t in templates {
            check_dims(first, t)?;
            let (row, mask) = g.prepare(t);
            g.data.extend_from_slice(&row);
            g.masks.push(mask);
        }
        Ok(g)
    }

    fn prepare(&self, t: &DprfsTemplate) -> (Vec<f32>, u64) {
        let mut row = Vec::with_capacity(self.stride);
        let mut mask = 0u64;
        for (i, p) in t.patches.iter().enumerate() {
            let n = p.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
            let inv = if n > 0.0 { 1.0 / n } else { 0.0 };
            row.extend(p.iter().map(|&x| (f64::from(x) * inv) as f32));
            if t.visible[i] {
                mask |= 1 << i;
            }
        }
        (row, mask)
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    pub fn prepare_probe(&self, t: &DprfsTemplate) -> Result<PreparedProbe> {
        if t.dims() != self.dims {
            return Err(Error::shape("probe patch dims", format!("{:?}", self.dims), format!("{:?}", t.dims())));
        }
        let (row, mask) = self.prepare(t);
        Ok(PreparedProbe { row, mask })
    }

    #[inline]
    pub fn score(&self, probe: &PreparedProbe, j: usize) -> DprfsScore {
        let mut common = probe.mask & self.masks[j];
        let overlap = common.count_ones() as usize;
        if overlap == 0 {
            return DprfsScore { value: self.sentinel, overlap };
        }
        let g = &self.data[j * self.stride..(j + 1) * self.stride];
        let mut total = 0f32;
        while common != 0 {
            let i = common.trailing_zeros() as usize;
            common &= common - 1;
            let (o, d) = (self.offsets[i], self.dims[i]);
            total += dot(&probe.row[o..o + d], &g[o..o + d]);
        }
        DprfsScore {
            value: f64::from(total) / overlap as f64,
            overlap,
        }
    }

    /// Scores of one probe against every entry.
    pub fn scores_into(&self, probe: &PreparedProbe, out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate().take(self.len()) {
            *o = self.score(probe, j).value;
        }
    }
}

#[derive(Clone, Debug)]
pub struct PreparedProbe {
    row: Vec<f32>,
    mask: u64,
}
