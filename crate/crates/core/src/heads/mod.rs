//! Fusion heads mapping `(patch embeddings, occlusion vector)` to a compact
//! template.
//!
//! * [`HeadKind::Ogctl`]: per patch, `t̂_i = BN_i(m_i · P_i(x_i))`, then
//!   `t = Σ t̂_i`. Gating happens before normalization, so an occluded patch
//!   contributes `−γ_i μ_i / √(σ²_i + ε) + β_i` whatever its content.
//! * [`HeadKind::OgctlPlus`]: same, with each patch input extended by the
//!   auxiliary embedding, `[x_i ‖ aux]`.
//! * [`HeadKind::A3`]: per-patch projections to `D/n`, concatenated, no gating.
//! * [`HeadKind::A4`]: one projection over the concatenation of all patches.
//!
//! `P_i` is a [`Projection`]: `d_in → hidden (PReLU) → D`.

mod mlp;
mod norm;
mod record;

pub use mlp::{Projection, ProjectionCache, ProjectionGrads, PRELU_INIT};
pub use norm::{BatchNorm, NormCache, NormConfig, NormStats};
pub use record::{CompactTemplate, PatchEmbeddingRecord};

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Real, SeededRng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum HeadKind {
    Ogctl,
    OgctlPlus,
    A3,
    A4,
}

impl HeadKind {
    pub fn as_str(self) -> &'static str {
        match self {
            HeadKind::Ogctl => "ogctl",
            HeadKind::OgctlPlus => "ogctl+",
            HeadKind::A3 => "a3",
            HeadKind::A4 => "a4",
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            HeadKind::Ogctl => 0,
            HeadKind::OgctlPlus => 1,
            HeadKind::A3 => 2,
            HeadKind::A4 => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            0 => HeadKind::Ogctl,
            1 => HeadKind::OgctlPlus,
            2 => HeadKind::A3,
            3 => HeadKind::A4,
            _ => return None,
        })
    }

    /// Whether this head gates patches and carries per-patch normalization.
    pub fn is_gated(self) -> bool {
        matches!(self, HeadKind::Ogctl | HeadKind::OgctlPlus)
    }
}

impl fmt::Display for HeadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ogctl" => Ok(HeadKind::Ogctl),
            "ogctl+" | "ogctl-plus" | "ogctlplus" => Ok(HeadKind::OgctlPlus),
            "a3" => Ok(HeadKind::A3),
            "a4" => Ok(HeadKind::A4),
            other => Err(Error::InvalidInput(format!("unknown head kind {other:?}"))),
        }
    }
}

pub const DEFAULT_PATCHES: usize = 8;
pub const DEFAULT_PATCH_DIM: usize = 512;
pub const DEFAULT_HIDDEN: usize = 64;
pub const DEFAULT_TEMPLATE_DIM: usize = 128;

#[derive(Clone, Debug, PartialEq)]
pub struct HeadConfig {
    pub kind: HeadKind,
    pub patch_dims: Vec<usize>,
    pub aux_dim: usize,
    pub hidden: usize,
    pub template_dim: usize,
    pub norm: NormConfig,
}

impl HeadConfig {
    pub fn new(kind: HeadKind, patch_dims: Vec<usize>, aux_dim: usize) -> Self {
        HeadConfig {
            kind,
            patch_dims,
            aux_dim,
            hidden: DEFAULT_HIDDEN,
            template_dim: DEFAULT_TEMPLATE_DIM,
            norm: NormConfig::default(),
        }
    }

    pub fn n_patches(&self) -> usize {
        self.patch_dims.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_patches();
        if n == 0 {
            return Err(Error::InvalidInput("head needs at least one patch".into()));
        }
        if self.patch_dims.contains(&0) || self.hidden == 0 || self.template_dim == 0 {
            return Err(Error::InvalidInput(format!(
                "dimensions must be positive (patch dims {:?}, hidden {}, template {})",
                self.patch_dims, self.hidden, self.template_dim
            )));
        }
        match self.kind {
            HeadKind::A3 if !self.template_dim.is_multiple_of(n) => Err(Error::InvalidInput(format!(
                "a3 head: template dim {} not divisible by {n} patches",
                self.template_dim
            ))),
            HeadKind::OgctlPlus if self.aux_dim == 0 => Err(Error::InvalidInput(
                "ogctl+ head needs a nonzero auxiliary dimension".into(),
            )),
            _ => Ok(()),
        }
    }

    /// `(input, output)` dimension of every projection branch.
    pub fn branch_shapes(&self) -> Vec<(usize, usize)> {
        let n = self.n_patches();
        match self.kind {
            HeadKind::Ogctl => self.patch_dims.iter().map(|&d| (d, self.template_dim)).collect(),
            HeadKind::OgctlPlus => self
                .patch_dims
                .iter()
                .map(|&d| (d + self.aux_dim, self.template_dim))
                .collect(),
            HeadKind::A3 => self
                .patch_dims
                .iter()
                .map(|&d| (d, self.template_dim / n))
                .collect(),
            HeadKind::A4 => vec![(self.patch_dims.iter().sum(), self.template_dim)],
        }
    }
}

/// Learnable state of a head, plus normalization running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams<T> {
    pub config: HeadConfig,
    pub branches: Vec<Projection<T>>,
    /// One per patch for gated heads, empty otherwise.
    pub norms: Vec<BatchNorm<T>>,
}

/// Activations kept by a training-mode forward pass.
#[derive(Clone, Debug)]
pub struct HeadCache<T> {
    rows: usize,
    branches: Vec<ProjectionCache<T>>,
    visible: Vec<Vec<bool>>,
    norms: Vec<NormCache<T>>,
}

impl<T> HeadCache<T> {
    pub fn rows(&self) -> usize {
        self.rows
    }
}

/// Gradients aligned with [`HeadParams::block_names`].
#[derive(Clone, Debug)]
pub struct HeadGrads<T> {
    pub blocks: Vec<Vec<T>>,
    /// Gradient w.r.t. each branch's input matrix (for gated heads, the
    /// per-patch input including any auxiliary columns).
    pub inputs: Option<Vec<Matrix<T>>>,
}

impl<T: Real> HeadParams<T> {
    pub fn init(config: HeadConfig, rng: &mut SeededRng) -> Result<Self> {
        config.validate()?;
        let branches = config
            .branch_shapes()
            .into_iter()
            .map(|(i, o)| Projection::init(rng, i, config.hidden, o))
            .collect();
        let norms = if config.kind.is_gated() {
            (0..config.n_patches())
                .map(|_| BatchNorm::new(config.template_dim))
                .collect()
        } else {
            Vec::new()
        };
        Ok(HeadParams {
            config,
            branches,
            norms,
        })
    }

    pub fn kind(&self) -> HeadKind {
        self.config.kind
    }

    pub fn template_dim(&self) -> usize {
        self.config.template_dim
    }

    pub fn cast<U: Real>(&self) -> HeadParams<U> {
        HeadParams {
            config: self.config.clone(),
            branches: self.branches.iter().map(Projection::cast).collect(),
            norms: self.norms.iter().map(BatchNorm::cast).collect(),
        }
    }

    pub fn block_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for i in 0..self.branches.len() {
            let prefix = if self.kind() == HeadKind::A4 {
                "fused".to_string()
            } else {
                format!("patch{i}")
            };
            for part in ["w1", "b1", "prelu", "w2", "b2"] {
                names.push(format!("{prefix}.{part}"));
            }
            if i < self.norms.len() {
                names.push(format!("{prefix}.gamma"));
                names.push(format!("{prefix}.beta"));
            }
        }
        names
    }

    pub fn blocks(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = Vec::new();
        for (i, b) in self.branches.iter().enumerate() {
            out.push(b.w1.as_slice());
            out.push(&b.b1);
            out.push(&b.slope);
            out.push(b.w2.as_slice());
            out.push(&b.b2);
            if let Some(n) = self.norms.get(i) {
                out.push(&n.gamma);
                out.push(&n.beta);
            }
        }
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::new();
        let mut norms = self.norms.iter_mut();
        for b in self.branches.iter_mut() {
            out.push(b.w1.as_mut_slice());
            out.push(&mut b.b1);
            out.push(&mut b.slope);
            out.push(b.w2.as_mut_slice());
            out.push(&mut b.b2);
            if let Some(n) = norms.next() {
                out.push(&mut n.gamma);
                out.push(&mut n.beta);
            }
        }
        out
    }

    pub fn set_blocks(&mut self, values: &[Vec<T>]) -> Result<()> {
        let mut blocks = self.blocks_mut();
        if blocks.len() != values.len() {
            return Err(Error::shape("head parameter blocks", blocks.len(), values.len()));
        }
        for (i, (dst, src)) in blocks.iter_mut().zip(values).enumerate() {
            if dst.len() != src.len() {
                return Err(Error::shape(format!("head block {i}"), dst.len(), src.len()));
            }
            dst.copy_from_slice(src);
        }
        Ok(())
    }

    pub fn stats_populated(&self) -> bool {
        self.norms.iter().all(|n| n.populated)
    }

    fn check_record(&self, rec: &PatchEmbeddingRecord) -> Result<()> {
        let aux_dim = if self.kind() == HeadKind::OgctlPlus {
            self.config.aux_dim
        } else {
            rec.aux.as_ref().map_or(0, Vec::len)
        };
        rec.validate(&self.config.patch_dims, aux_dim)
    }

    /// Builds each branch's `K × d_in` input matrix.
    fn branch_inputs(&self, batch: &[&PatchEmbeddingRecord]) -> Result<Vec<Matrix<T>>> {
        for rec in batch {
            self.check_record(rec)?;
        }
        let k = batch.len();
        let shapes = self.config.branch_shapes();
        let mut inputs: Vec<Matrix<T>> = shapes.iter().map(|&(d, _)| Matrix::zeros(k, d)).collect();
        for (r, rec) in batch.iter().enumerate() {
            match self.kind() {
                HeadKind::Ogctl | HeadKind::A3 => {
                    for (m, p) in inputs.iter_mut().zip(&rec.patches) {
                        fill(m.row_mut(r), p);
                    }
                }
                HeadKind::OgctlPlus => {
                    let aux = rec.aux.as_deref().unwrap_or(&[]);
                    for (m, p) in inputs.iter_mut().zip(&rec.patches) {
                        let row = m.row_mut(r);
                        fill(&mut row[..p.len()], p);
                        fill(&mut row[p.len()..], aux);
                    }
                }
                HeadKind::A4 => {
                    let row = inputs[0].row_mut(r);
                    let mut off = 0;
                    for p in &rec.patches {
                        fill(&mut row[off..off + p.len()], p);
                        off += p.len();
                    }
                }
            }
        }
        Ok(inputs)
    }

    fn visibility(batch: &[&PatchEmbeddingRecord], n: usize) -> Vec<Vec<bool>> {
        (0..n)
            .map(|i| batch.iter().map(|rec| rec.visible[i]).collect())
            .collect()
    }

    /// Inference-mode templates for a batch, one row per record.
    pub fn forward_infer(&self, batch: &[&PatchEmbeddingRecord]) -> Result<Matrix<T>> {
        if self.kind().is_gated() && !self.stats_populated() {
            return Err(Error::Precondition(
                "normalization running statistics are not populated (head never trained)".into(),
            ));
        }
        let inputs = self.branch_inputs(batch)?;
        let k = batch.len();
        let dim = self.template_dim();
        let mut t = Matrix::zeros(k, dim);
        match self.kind() {
            HeadKind::Ogctl | HeadKind::OgctlPlus => {
                let visible = Self::visibility(batch, self.config.n_patches());
                for (i, x) in inputs.iter().enumerate() {
                    let mut z = self.branches[i].forward(x)?;
                    gate(&mut z, &visible[i]);
                    self.norms[i].forward_infer(&mut z, self.config.norm.eps);
                    t.add_assign(&z);
                }
            }
            HeadKind::A3 => {
                let chunk = dim / self.config.n_patches();
                for (i, x) in inputs.iter().enumerate() {
                    let y = self.branches[i].forward(x)?;
                    for r in 0..k {
                        t.row_mut(r)[i * chunk..(i + 1) * chunk].copy_from_slice(y.row(r));
                    }
                }
            }
            HeadKind::A4 => t = self.branches[0].forward(&inputs[0])?,
        }
        Ok(t)
    }

    /// Training-mode forward pass: normalization uses batch statistics.
    pub fn forward_train(&self, batch: &[&PatchEmbeddingRecord]) -> Result<(Matrix<T>, HeadCache<T>)> {
        if self.kind().is_gated() && batch.len() < 2 {
            return Err(Error::Precondition(format!(
                "batch statistics need at least 2 records, got {}",
                batch.len()
            )));
        }
        let inputs = self.branch_inputs(batch)?;
        let k = batch.len();
        let dim = self.template_dim();
        let n = self.config.n_patches();
        let visible = Self::visibility(batch, n);
        let mut t = Matrix::zeros(k, dim);
        let mut branch_caches = Vec::with_capacity(inputs.len());
        let mut norm_caches = Vec::new();
        for (i, x) in inputs.into_iter().enumerate() {
            let (mut y, cache) = self.branches[i].forward_cached(x)?;
            branch_caches.push(cache);
            match self.kind() {
                HeadKind::Ogctl | HeadKind::OgctlPlus => {
                    gate(&mut y, &visible[i]);
                    let weights = match self.config.norm.stats {
                        NormStats::AllRows => vec![T::one(); k],
                        NormStats::VisibleOnly => visible[i]
                            .iter()
                            .map(|&v| if v { T::one() } else { T::zero() })
                            .collect(),
                    };
                    let (out, nc) = self.norms[i].forward_train(&y, weights, self.config.norm.eps);
                    norm_caches.push(nc);
                    t.add_assign(&out);
                }
                HeadKind::A3 => {
                    let chunk = dim / n;
                    for r in 0..k {
                        t.row_mut(r)[i * chunk..(i + 1) * chunk].copy_from_slice(y.row(r));
                    }
                }
                HeadKind::A4 => t = y,
            }
        }
        Ok((
            t,
            HeadCache {
                rows: k,
                branches: branch_caches,
                visible,
                norms: norm_caches,
            },
        ))
    }

    /// Folds the batch statistics of `cache` into the running estimates.
    pub fn update_running_stats(&mut self, cache: &HeadCache<T>) {
        let momentum = self.config.norm.momentum;
        for (bn, nc) in self.norms.iter_mut().zip(&cache.norms) {
            bn.update_running(nc, momentum);
        }
    }

    /// Exact gradients of a scalar loss given `dL/dt` for every batch row.
    pub fn backward(&self, cache: &HeadCache<T>, d_templates: &Matrix<T>, want_inputs: bool) -> Result<HeadGrads<T>> {
        if cache.branches.len() != self.branches.len() {
            return Err(Error::Precondition("cache does not belong to this head".into()));
        }
        if d_templates.shape() != (cache.rows, self.template_dim()) {
            return Err(Error::shape(
                "template gradient",
                format!("{}x{}", cache.rows, self.template_dim()),
                format!("{}x{}", d_templates.rows(), d_templates.cols()),
            ));
        }
        let n = self.config.n_patches();
        let mut blocks = Vec::new();
        let mut inputs = want_inputs.then(Vec::new);
        for (i, branch) in self.branches.iter().enumerate() {
            let (dy, norm_grads) = match self.kind() {
                HeadKind::Ogctl | HeadKind::OgctlPlus => {
                    let (mut dz, dgamma, dbeta) = self.norms[i].backward(&cache.norms[i], d_templates);
                    gate(&mut dz, &cache.visible[i]);
                    (dz, Some((dgamma, dbeta)))
                }
                HeadKind::A3 => {
                    let chunk = self.template_dim() / n;
                    let mut dy = Matrix::zeros(cache.rows, chunk);
                    for r in 0..cache.rows {
                        dy.row_mut(r)
                            .copy_from_slice(&d_templates.row(r)[i * chunk..(i + 1) * chunk]);
                    }
                    (dy, None)
                }
                HeadKind::A4 => (d_templates.clone(), None),
            };
            let mut g = branch.backward(&cache.branches[i], &dy, want_inputs)?;
            if let Some(inputs) = inputs.as_mut() {
                inputs.push(g.input.take().expect("requested input gradient"));
            }
            blocks.extend(g.into_blocks());
            if let Some((dgamma, dbeta)) = norm_grads {
                blocks.push(dgamma);
                blocks.push(dbeta);
            }
        }
        Ok(HeadGrads { blocks, inputs })
    }

    /// Per-patch contributions `t̂_i` (inference mode); only for gated heads.
    pub fn patch_contributions(&self, rec: &PatchEmbeddingRecord) -> Result<Vec<Vec<T>>> {
        if !self.kind().is_gated() {
            return Err(Error::Precondition(format!(
                "{} head has no per-patch contributions",
                self.kind()
            )));
        }
        if !self.stats_populated() {
            return Err(Error::Precondition("normalization statistics not populated".into()));
        }
        let inputs = self.branch_inputs(&[rec])?;
        let mut out = Vec::with_capacity(inputs.len());
        for (i, x) in inputs.iter().enumerate() {
            let mut z = self.branches[i].forward(x)?;
            gate(&mut z, &[rec.visible[i]]);
            self.norms[i].forward_infer(&mut z, self.config.norm.eps);
            out.push(z.into_vec());
        }
        Ok(out)
    }

    /// What an occluded patch `i` adds to every template.
    pub fn occluded_contribution(&self, i: usize) -> Option<Vec<T>> {
        self.norms.get(i).map(|bn| bn.zero_input_output(self.config.norm.eps))
    }

    pub fn encode(&self, rec: &PatchEmbeddingRecord) -> Result<CompactTemplate> {
        let t = self.forward_infer(&[rec])?;
        Ok(CompactTemplate(crate::numerics::cast_slice(t.row(0))))
    }

    pub fn encode_batch(&self, recs: &[PatchEmbeddingRecord]) -> Result<Vec<CompactTemplate>> {
        let refs: Vec<&PatchEmbeddingRecord> = recs.iter().collect();
        let mut out = Vec::with_capacity(recs.len());
        for chunk in refs.chunks(256) {
            let t = self.forward_infer(chunk)?;
            out.extend(t.row_iter().map(|r| CompactTemplate(crate::numerics::cast_slice(r))));
        }
        Ok(out)
    }
}

fn fill<T: Real>(dst: &mut [T], src: &[f32]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = T::lit(f64::from(s));
    }
}

/// Row-wise multiplication by a binary flag. Written as a select so that
/// gated rows are exactly `+0` regardless of the projected values.
fn gate<T: Real>(z: &mut Matrix<T>, visible: &[bool]) {
    for (r, &v) in visible.iter().enumerate() {
        if !v {
            z.row_mut(r).iter_mut().for_each(|x| *x = T::zero());
        }
    }
}
