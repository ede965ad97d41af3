use std::path::Path;

use super::bytes::{ByteReader, ByteWriter};
use super::embeddings::EmbeddingLayout;
use crate::error::{Error, Result};
use crate::heads::{HeadConfig, HeadKind, HeadParams, NormConfig, NormStats};
use crate::losses::{ClassProjection, LambdaSchedule, MarginForm, SoftmaxClassifier};
use crate::numerics::{AdamConfig, AdamState, Matrix, RngState, SeededRng};
use crate::trainer::{LossKind, TrainConfig};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"OGCK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Dense class index ↔ original subject label. Index `i` is the `i`-th
/// smallest subject seen at ingest.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    pub subjects: Vec<u32>,
}

impl LabelMap {
    pub fn from_subjects(subjects: impl IntoIterator<Item = u32>) -> Self {
        let mut s: Vec<u32> = subjects.into_iter().collect();
        s.sort_unstable();
        s.dedup();
        LabelMap { subjects: s }
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn index(&self, subject: u32) -> Option<usize> {
        self.subjects.binary_search(&subject).ok()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Classifier {
    Angular(ClassProjection<f32>),
    Softmax(SoftmaxClassifier<f32>),
}

impl Classifier {
    pub fn classes(&self) -> usize {
        match self {
            Classifier::Angular(p) => p.classes(),
            Classifier::Softmax(c) => c.classes(),
        }
    }
}

/// Complete training state.
///
/// ```text
/// "OGCK" | version u32
/// config:      u32 len | utf-8 key=value lines
/// epochs_done: u32
/// head:        kind u8 | n u32 | dims u32[n] | aux u32 | hidden u32 | dim u32
///              | bn_eps f64 | bn_momentum f64 | bn_stats u8
///              | blocks u32 | per block: name (u16 len | utf-8) | len u64 | f32[len]
///              | per norm: running_mean f32[dim] | running_var f32[dim] | populated u8
/// classifier:  tag u8 (0 angular, 1 softmax) | classes u32 | dim u32
///              angular: margin u32 | form u8 | λ start,min,decay f64 | iteration u64 | W f32[c·d]
///              softmax: W f32[c·d] | b f32[c]
/// adam:        lr,beta1,beta2,eps f64 | step u64 | blocks u32 | per block: len u64 | m f32[len] | v f32[len]
/// rng:         seed u8[32] | stream u64 | word_pos u128
/// labels:      count u32 | subject u32[count]
/// ```
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub head: HeadParams<f32>,
    pub classifier: Classifier,
    pub adam: AdamState<f32>,
    pub rng: RngState,
    pub label_map: LabelMap,
    pub epochs_done: u32,
}

fn write_head(w: &mut ByteWriter, head: &HeadParams<f32>) -> Result<()> {
    let c = &head.config;
    w.u8(c.kind.tag());
    w.len_u32(c.n_patches())?;
    for &d in &c.patch_dims {
        w.len_u32(d)?;
    }
    w.len_u32(c.aux_dim)?;
    w.len_u32(c.hidden)?;
    w.len_u32(c.template_dim)?;
    w.f64(c.norm.eps);
    w.f64(c.norm.momentum);
    w.u8(match c.norm.stats {
        NormStats::AllRows => 0,
        NormStats::VisibleOnly => 1,
    });
    let names = head.block_names();
    let blocks = head.blocks();
    w.len_u32(blocks.len())?;
    for (name, b) in names.iter().zip(blocks) {
        w.str16(name)?;
        w.u64(b.len() as u64);
        w.f32s(b);
    }
    for bn in &head.norms {
        w.f32s(&bn.running_mean);
        w.f32s(&bn.running_var);
        w.u8(u8::from(bn.populated));
    }
    Ok(())
}

fn read_head(r: &mut ByteReader) -> Result<HeadParams<f32>> {
    let at = r.pos();
    let kind = HeadKind::from_tag(r.u8()?).ok_or_else(|| Error::Malformed {
        at,
        msg: "unknown head kind".into(),
    })?;
    let n = r.u32()? as usize;
    let patch_dims = (0..n).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
    let aux_dim = r.u32()? as usize;
    let hidden = r.u32()? as usize;
    let template_dim = r.u32()? as usize;
    let eps = r.f64()?;
    let momentum = r.f64()?;
    let at = r.pos();
    let stats = match r.u8()? {
        0 => NormStats::AllRows,
        1 => NormStats::VisibleOnly,
        _ => {
            return Err(Error::Malformed {
                at,
                msg: "unknown normalization mode".into(),
            })
        }
    };
    let config = HeadConfig {
        kind,
        patch_dims,
        aux_dim,
        hidden,
        template_dim,
        norm: NormConfig { eps, momentum, stats },
    };
    config.validate().map_err(|e| Error::Malformed { at, msg: e.to_string() })?;
    // shapes come from the config; values are overwritten below
    let mut head = HeadParams::<f32>::init(config, &mut SeededRng::new(0))?;
    let names = head.block_names();
    let count = r.u32()? as usize;
    if count != names.len() {
        return Err(Error::Malformed {
            at: r.pos(),
            msg: format!("expected {} parameter blocks, found {count}", names.len()),
        });
    }
    let mut values = Vec::with_capacity(count);
    for (expected, len) in names.iter().zip(head.blocks().iter().map(|b| b.len())) {
        let at = r.pos();
        let name = r.str16()?;
        let n = r.u64()? as usize;
        if &name != expected || n != len {
            return Err(Error::Malformed {
                at,
                msg: format!("block {name:?} (len {n}) where {expected:?} (len {len}) expected"),
            });
        }
        values.push(r.f32s(n)?);
    }
    head.set_blocks(&values)?;
    for bn in head.norms.iter_mut() {
        bn.running_mean = r.f32s(template_dim)?;
        bn.running_var = r.f32s(template_dim)?;
        bn.populated = r.flag()?;
        if let Some(i) = bn.running_var.iter().position(|&v| v < 0.0) {
            return Err(Error::Malformed {
                at: r.pos(),
                msg: format!("negative running variance at {i}"),
            });
        }
    }
    Ok(head)
}

fn write_classifier(w: &mut ByteWriter, c: &Classifier) -> Result<()> {
    match c {
        Classifier::Angular(p) => {
            w.u8(0);
            w.len_u32(p.weights.rows())?;
            w.len_u32(p.weights.cols())?;
            w.u32(p.margin);
            w.u8(match p.form {
                MarginForm::Monotonic => 0,
                MarginForm::Literal => 1,
            });
            w.f64(p.schedule.start);
            w.f64(p.schedule.min);
            w.f64(p.schedule.decay);
            w.u64(p.iteration);
            w.f32s(p.weights.as_slice());
        }
        Classifier::Softmax(s) => {
            w.u8(1);
            w.len_u32(s.weights.rows())?;
            w.len_u32(s.weights.cols())?;
            w.f32s(s.weights.as_slice());
            w.f32s(&s.bias);
        }
    }
    Ok(())
}

fn read_classifier(r: &mut ByteReader) -> Result<Classifier> {
    let at = r.pos();
    let tag = r.u8()?;
    let classes = r.u32()? as usize;
    let dim = r.u32()? as usize;
    match tag {
        0 => {
            let margin = r.u32()?;
            let at = r.pos();
            let form = match r.u8()? {
                0 => MarginForm::Monotonic,
                1 => MarginForm::Literal,
                _ => {
                    return Err(Error::Malformed {
                        at,
                        msg: "unknown margin form".into(),
                    })
                }
            };
            let schedule = LambdaSchedule {
                start: r.f64()?,
                min: r.f64()?,
                decay: r.f64()?,
            };
            let iteration = r.u64()?;
            let weights = Matrix::from_vec(classes, dim, r.f32s(classes * dim)?)?;
            Ok(Classifier::Angular(ClassProjection {
                weights,
                margin,
                schedule,
                iteration,
                form,
            }))
        }
        1 => {
            let weights = Matrix::from_vec(classes, dim, r.f32s(classes * dim)?)?;
            let bias = r.f32s(classes)?;
            Ok(Classifier::Softmax(SoftmaxClassifier { weights, bias }))
        }
        _ => Err(Error::Malformed {
            at,
            msg: format!("unknown classifier tag {tag}"),
        }),
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = ByteWriter::default();
        w.bytes(&CHECKPOINT_MAGIC);
        w.u32(CHECKPOINT_VERSION);
        let text: String = self
            .config
            .to_pairs()
            .into_iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect();
        w.len_u32(text.len())?;
        w.bytes(text.as_bytes());
        w.u32(self.epochs_done);
        write_head(&mut w, &self.head)?;
        write_classifier(&mut w, &self.classifier)?;

        let a = &self.adam;
        w.f64(a.config.lr);
        w.f64(a.config.beta1);
        w.f64(a.config.beta2);
        w.f64(a.config.eps);
        w.u64(a.step);
        w.len_u32(a.first.len())?;
        for (m, v) in a.first.iter().zip(&a.second) {
            w.u64(m.len() as u64);
            w.f32s(m);
            w.f32s(v);
        }

        w.bytes(&self.rng.seed);
        w.u64(self.rng.stream);
        w.u128(self.rng.word_pos);

        w.len_u32(self.label_map.len())?;
        for &s in &self.label_map.subjects {
            w.u32(s);
        }
        Ok(w.into_inner())
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(buf);
        r.magic(CHECKPOINT_MAGIC)?;
        r.version("checkpoint", CHECKPOINT_VERSION)?;
        let len = r.u32()? as usize;
        let at = r.pos();
        let text = std::str::from_utf8(r.take(len)?).map_err(|_| Error::Malformed {
            at,
            msg: "config is not utf-8".into(),
        })?;
        let mut config = TrainConfig::default();
        config
            .apply_pairs(text.lines().filter_map(|l| l.split_once('=')))
            .map_err(|e| Error::Malformed { at, msg: e.to_string() })?;
        let epochs_done = r.u32()?;
        let head = read_head(&mut r)?;
        let classifier = read_classifier(&mut r)?;

        let adam_config = AdamConfig {
            lr: r.f64()?,
            beta1: r.f64()?,
            beta2: r.f64()?,
            eps: r.f64()?,
        };
        let step = r.u64()?;
        let blocks = r.u32()? as usize;
        let mut first = Vec::with_capacity(blocks.min(4096));
        let mut second = Vec::with_capacity(blocks.min(4096));
        for _ in 0..blocks {
            let n = r.u64()? as usize;
            first.push(r.f32s(n)?);
            second.push(r.f32s(n)?);
        }
        let adam = AdamState {
            config: adam_config,
            step,
            first,
            second,
        };

        let seed: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        let rng = RngState {
            seed,
            stream: r.u64()?,
            word_pos: r.u128()?,
        };
        let count = r.u32()? as usize;
        let subjects = (0..count).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        r.finish()?;

        if classifier.classes() != subjects.len() {
            return Err(Error::Malformed {
                at: buf.len(),
                msg: format!("{} classes but {} labels", classifier.classes(), subjects.len()),
            });
        }
        if !subjects.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Malformed {
                at: buf.len(),
                msg: "label map not strictly increasing".into(),
            });
        }
        Ok(Checkpoint {
            config,
            head,
            classifier,
            adam,
            rng,
            label_map: LabelMap { subjects },
            epochs_done,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&super::read_file(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        super::write_atomic(path, &self.to_bytes()?)
    }

    /// Refuses to continue training under a structurally different setup.
    pub fn check_compatible(&self, config: &TrainConfig, layout: &EmbeddingLayout) -> Result<()> {
        let mine = &self.config;
        let mut diffs = Vec::new();
        if mine.head != config.head {
            diffs.push(format!("head {} vs {}", mine.head, config.head));
        }
        if mine.loss != config.loss {
            diffs.push(format!("loss {} vs {}", mine.loss, config.loss));
        }
        if mine.template_dim != config.template_dim {
            diffs.push(format!("dim {} vs {}", mine.template_dim, config.template_dim));
        }
        if mine.hidden != config.hidden {
            diffs.push(format!("hidden {} vs {}", mine.hidden, config.hidden));
        }
        if mine.loss == LossKind::ASoftmax && mine.margin != config.margin {
            diffs.push(format!("margin {} vs {}", mine.margin, config.margin));
        }
        if self.head.config.patch_dims != layout.patch_dims {
            diffs.push(format!(
                "patch dims {:?} vs {:?}",
                self.head.config.patch_dims, layout.patch_dims
            ));
        }
        if self.head.config.kind == HeadKind::OgctlPlus && self.head.config.aux_dim != layout.aux_dim {
            diffs.push(format!("aux dim {} vs {}", self.head.config.aux_dim, layout.aux_dim));
        }
        if diffs.is_empty() {
            Ok(())
        } else {
            Err(Error::Incompatible(diffs.join("; ")))
        }
    }
}
