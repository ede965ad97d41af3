//! Minibatch training of a head and its class projection.
//!
//! Each step: encode the batch with batch statistics, evaluate the loss,
//! backpropagate, apply one Adam update to every learnable block, renormalize
//! the class vectors and advance the λ schedule. Shuffling uses a seeded
//! permutation per epoch; the RNG position is part of the checkpoint, so a
//! resumed run replays exactly the batches an uninterrupted run would see.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use serde::Serialize;

use crate::data_io::{Checkpoint, Classifier, EmbeddingContainer, LabelMap};
use crate::error::{Error, Result};
use crate::heads::{HeadConfig, HeadKind, HeadParams, NormConfig, NormStats, PatchEmbeddingRecord};
use crate::losses::{self, ClassProjection, LambdaSchedule, MarginForm, SoftmaxClassifier};
use crate::numerics::{AdamConfig, AdamState, Matrix, SeededRng};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    ASoftmax,
    Softmax,
}

impl LossKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::ASoftmax => "asoftmax",
            LossKind::Softmax => "softmax",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "asoftmax" => Ok(LossKind::ASoftmax),
            "softmax" => Ok(LossKind::Softmax),
            other => Err(Error::InvalidInput(format!("unknown loss {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: u32,
    pub batch_size: usize,
    pub seed: u64,
    pub loss: LossKind,
    pub head: HeadKind,
    pub template_dim: usize,
    pub hidden: usize,
    pub margin: u32,
    pub margin_form: MarginForm,
    pub adam: AdamConfig,
    pub lambda: LambdaSchedule,
    pub norm: NormConfig,
    /// Write a checkpoint every this many epochs (0: only at the end).
    pub checkpoint_every: u32,
    pub checkpoint_path: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 256,
            seed: 0,
            loss: LossKind::ASoftmax,
            head: HeadKind::Ogctl,
            template_dim: crate::heads::DEFAULT_TEMPLATE_DIM,
            hidden: crate::heads::DEFAULT_HIDDEN,
            margin: 4,
            margin_form: MarginForm::Monotonic,
            adam: AdamConfig::default(),
            lambda: LambdaSchedule::default(),
            norm: NormConfig::default(),
            checkpoint_every: 0,
            checkpoint_path: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::InvalidInput(format!("bad value {v:?} for {key}")))
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::InvalidInput("epochs must be >= 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::InvalidInput("batch size must be >= 2".into()));
        }
        if self.template_dim == 0 || self.hidden == 0 {
            return Err(Error::InvalidInput("template dim and hidden width must be >= 1".into()));
        }
        if self.margin == 0 {
            return Err(Error::InvalidInput("margin must be >= 1".into()));
        }
        if !(self.lambda.start >= 0.0 && self.lambda.min >= 0.0 && self.lambda.decay >= 0.0) {
            return Err(Error::InvalidInput(format!("bad lambda schedule {:?}", self.lambda)));
        }
        self.adam.validate()
    }

    /// Flat `key=value` view, in a fixed order.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let mut v: Vec<(&str, String)> = vec![
            ("epochs", self.epochs.to_string()),
            ("batch-size", self.batch_size.to_string()),
            ("seed", self.seed.to_string()),
            ("loss", self.loss.to_string()),
            ("head", self.head.to_string()),
            ("dim", self.template_dim.to_string()),
            ("hidden", self.hidden.to_string()),
            ("margin", self.margin.to_string()),
            (
                "margin-form",
                match self.margin_form {
                    MarginForm::Monotonic => "monotonic",
                    MarginForm::Literal => "literal",
                }
                .into(),
            ),
            ("lr", self.adam.lr.to_string()),
            ("beta1", self.adam.beta1.to_string()),
            ("beta2", self.adam.beta2.to_string()),
            ("adam-eps", self.adam.eps.to_string()),
            ("lambda-start", self.lambda.start.to_string()),
            ("lambda-min", self.lambda.min.to_string()),
            ("lambda-decay", self.lambda.decay.to_string()),
            ("bn-eps", self.norm.eps.to_string()),
            ("bn-momentum", self.norm.momentum.to_string()),
            (
                "bn-stats",
                match self.norm.stats {
                    NormStats::AllRows => "all",
                    NormStats::VisibleOnly => "visible",
                }
                .into(),
            ),
            ("checkpoint-every", self.checkpoint_every.to_string()),
        ];
        if let Some(p) = &self.checkpoint_path {
            v.push(("checkpoint", p.display().to_string()));
        }
        v.into_iter().map(|(k, s)| (k.to_string(), s)).collect()
    }

    /// Applies `key=value` pairs over `self`; unknown keys are an error.
    pub fn apply_pairs<'a>(&mut self, pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<()> {
        for (k, v) in pairs {
            match k {
                "epochs" => self.epochs = parse(k, v)?,
                "batch-size" => self.batch_size = parse(k, v)?,
                "seed" => self.seed = parse(k, v)?,
                "loss" => self.loss = v.parse()?,
                "head" => self.head = v.parse()?,
                "dim" => self.template_dim = parse(k, v)?,
                "hidden" => self.hidden = parse(k, v)?,
                "margin" => self.margin = parse(k, v)?,
                "margin-form" => {
                    self.margin_form = match v {
                        "monotonic" => MarginForm::Monotonic,
                        "literal" => MarginForm::Literal,
                        _ => return Err(Error::InvalidInput(format!("bad margin-form {v:?}"))),
                    }
                }
                "lr" => self.adam.lr = parse(k, v)?,
                "beta1" => self.adam.beta1 = parse(k, v)?,
                "beta2" => self.adam.beta2 = parse(k, v)?,
                "adam-eps" => self.adam.eps = parse(k, v)?,
                "lambda-start" => self.lambda.start = parse(k, v)?,
                "lambda-min" => self.lambda.min = parse(k, v)?,
                "lambda-decay" => self.lambda.decay = parse(k, v)?,
                "bn-eps" => self.norm.eps = parse(k, v)?,
                "bn-momentum" => self.norm.momentum = parse(k, v)?,
                "bn-stats" => {
                    self.norm.stats = match v {
                        "all" => NormStats::AllRows,
                        "visible" => NormStats::VisibleOnly,
                        _ => return Err(Error::InvalidInput(format!("bad bn-stats {v:?}"))),
                    }
                }
                "checkpoint-every" => self.checkpoint_every = parse(k, v)?,
                "checkpoint" => self.checkpoint_path = Some(PathBuf::from(v)),
                other => return Err(Error::InvalidInput(format!("unknown config key {other:?}"))),
            }
        }
        Ok(())
    }

    pub fn head_config(&self, patch_dims: Vec<usize>, aux_dim: usize) -> HeadConfig {
        HeadConfig {
            kind: self.head,
            patch_dims,
            aux_dim: if self.head == HeadKind::OgctlPlus { aux_dim } else { 0 },
            hidden: self.hidden,
            template_dim: self.template_dim,
            norm: self.norm,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: u32,
    pub mean_loss: f64,
    pub accuracy: f64,
    pub seconds: f64,
}

impl EpochStats {
    /// Equality ignoring wall-clock time.
    pub fn same_outcome(&self, other: &EpochStats) -> bool {
        self.epoch == other.epoch
            && self.mean_loss.to_bits() == other.mean_loss.to_bits()
            && self.accuracy.to_bits() == other.accuracy.to_bits()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub checkpoint: Option<PathBuf>,
}

impl TrainReport {
    pub fn final_accuracy(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.accuracy)
    }
}

fn ingest(dataset: &EmbeddingContainer, config: &TrainConfig) -> Result<HeadConfig> {
    if dataset.records.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "training needs at least 2 records, got {}",
            dataset.records.len()
        )));
    }
    if config.head == HeadKind::OgctlPlus && dataset.layout.aux_dim == 0 {
        return Err(Error::InvalidInput("ogctl+ head needs embeddings with an auxiliary vector".into()));
    }
    let head = config.head_config(dataset.layout.patch_dims.clone(), dataset.layout.aux_dim);
    head.validate()?;
    Ok(head)
}

fn dense_labels(records: &[PatchEmbeddingRecord], map: &LabelMap) -> Result<Vec<usize>> {
    let mut seen = vec![false; map.len()];
    let labels = records
        .iter()
        .map(|r| {
            let i = map
                .index(r.subject)
                .ok_or_else(|| Error::Incompatible(format!("subject {} not in the label map", r.subject)))?;
            seen[i] = true;
            Ok(i)
        })
        .collect::<Result<Vec<_>>>()?;
    if let Some(c) = seen.iter().position(|s| !s) {
        return Err(Error::InvalidInput(format!(
            "class {} (subject {}) has no training samples",
            c, map.subjects[c]
        )));
    }
    Ok(labels)
}

/// Stateful trainer; [`train`] and [`resume`] wrap it.
pub struct Trainer<'a> {
    data: &'a EmbeddingContainer,
    labels: Vec<usize>,
    state: Checkpoint,
    rng: SeededRng,
}

impl<'a> Trainer<'a> {
    pub fn new(data: &'a EmbeddingContainer, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let head_config = ingest(data, &config)?;
        let label_map = LabelMap::from_subjects(data.records.iter().map(|r| r.subject));
        let labels = dense_labels(&data.records, &label_map)?;
        let mut rng = SeededRng::new(config.seed);
        let head = HeadParams::<f32>::init(head_config, &mut rng)?;
        let classifier = match config.loss {
            LossKind::ASoftmax => {
                let mut p = ClassProjection::new(label_map.len(), config.template_dim, config.margin, config.lambda, &mut rng)?;
                p.form = config.margin_form;
                Classifier::Angular(p)
            }
            LossKind::Softmax => Classifier::Softmax(SoftmaxClassifier::new(label_map.len(), config.template_dim, &mut rng)),
        };
        let state = Checkpoint {
            adam: AdamState::new(config.adam),
            config,
            head,
            classifier,
            rng: rng.state(),
            label_map,
            epochs_done: 0,
        };
        Ok(Trainer {
            data,
            labels,
            state,
            rng,
        })
    }

    pub fn from_checkpoint(checkpoint: Checkpoint, data: &'a EmbeddingContainer, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        checkpoint.check_compatible(&config, &data.layout)?;
        let labels = dense_labels(&data.records, &checkpoint.label_map)?;
        let rng = SeededRng::from_state(checkpoint.rng);
        let mut state = checkpoint;
        state.adam.config = config.adam;
        state.config = config;
        Ok(Trainer {
            data,
            labels,
            state,
            rng,
        })
    }

    pub fn state(&self) -> &Checkpoint {
        &self.state
    }

    pub fn into_checkpoint(mut self) -> Checkpoint {
        self.state.rng = self.rng.state();
        self.state
    }

    fn batches(&mut self) -> Vec<Vec<usize>> {
        let k = self.data.records.len();
        let mut order: Vec<usize> = (0..k).collect();
        self.rng.shuffle(&mut order);
        let mut batches: Vec<Vec<usize>> = order
            .chunks(self.state.config.batch_size)
            .map(<[usize]>::to_vec)
            .collect();
        if batches.len() > 1 && batches.last().is_some_and(|b| b.len() < 2) {
            let tail = batches.pop().expect("non-empty");
            batches.last_mut().expect("non-empty").extend(tail);
        }
        batches
    }

    fn step(&mut self, batch: &[usize]) -> Result<(f64, usize)> {
        let refs: Vec<&PatchEmbeddingRecord> = batch.iter().map(|&i| &self.data.records[i]).collect();
        let labels: Vec<usize> = batch.iter().map(|&i| self.labels[i]).collect();
        let state = &mut self.state;
        let (templates, cache) = state.head.forward_train(&refs)?;
        let (out, scores) = match &state.classifier {
            Classifier::Angular(p) => (losses::asoftmax_loss(&templates, &labels, p)?, p.scores(&templates)?),
            Classifier::Softmax(c) => (losses::softmax_loss(&templates, &labels, c)?, c.scores(&templates)?),
        };
        if !out.loss.is_finite() {
            return Err(Error::NonFinite(format!("training loss at epoch {}", state.epochs_done + 1)));
        }
        let correct = losses::argmax_rows(&scores)
            .iter()
            .zip(&labels)
            .filter(|(p, y)| p == y)
            .count();
        let grads = state.head.backward(&cache, &out.d_templates, false)?;
        state.head.update_running_stats(&cache);

        let mut names = state.head.block_names();
        let mut all_grads = grads.blocks;
        names.push("classes.w".into());
        all_grads.push(out.d_weights.into_vec());
        if let Some(db) = out.d_bias {
            names.push("classes.b".into());
            all_grads.push(db);
        }
        let mut params = state.head.blocks_mut();
        match &mut state.classifier {
            Classifier::Angular(p) => params.push(p.weights.as_mut_slice()),
            Classifier::Softmax(c) => {
                params.push(c.weights.as_mut_slice());
                params.push(&mut c.bias);
            }
        }
        state.adam.step(&names, &mut params, &all_grads)?;
        if let Classifier::Angular(p) = &mut state.classifier {
            p.renormalize();
            let next = p.iteration + 1;
            p.decay_lambda(next);
        }
        Ok((f64::from(out.loss) * batch.len() as f64, correct))
    }

    pub fn run_epoch(&mut self) -> Result<EpochStats> {
        let start = Instant::now();
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for batch in self.batches() {
            let (l, c) = self.step(&batch)?;
            loss_sum += l;
            correct += c;
        }
        self.state.epochs_done += 1;
        let k = self.data.records.len() as f64;
        Ok(EpochStats {
            epoch: self.state.epochs_done,
            mean_loss: loss_sum / k,
            accuracy: correct as f64 / k,
            seconds: start.elapsed().as_secs_f64(),
        })
    }

    /// Runs until `config.epochs` epochs are done in total.
    pub fn run(&mut self, mut progress: impl FnMut(&EpochStats)) -> Result<TrainReport> {
        let mut report = TrainReport::default();
        let every = self.state.config.checkpoint_every;
        while self.state.epochs_done < self.state.config.epochs {
            let stats = self.run_epoch()?;
            progress(&stats);
            report.epochs.push(stats);
            if every > 0 && self.state.epochs_done.is_multiple_of(every) {
                report.checkpoint = self.save()?;
            }
        }
        if report.checkpoint.is_none() || every == 0 || !self.state.epochs_done.is_multiple_of(every) {
            report.checkpoint = self.save()?;
        }
        Ok(report)
    }

    fn save(&mut self) -> Result<Option<PathBuf>> {
        let Some(path) = self.state.config.checkpoint_path.clone() else {
            return Ok(None);
        };
        self.state.rng = self.rng.state();
        self.state.write(&path)?;
        Ok(Some(path))
    }
}

/// Trains from scratch; returns the final state and per-epoch report.
pub fn train(dataset: &EmbeddingContainer, config: TrainConfig) -> Result<(Checkpoint, TrainReport)> {
    train_with_progress(dataset, config, |_| {})
}

pub fn train_with_progress(
    dataset: &EmbeddingContainer,
    config: TrainConfig,
    progress: impl FnMut(&EpochStats),
) -> Result<(Checkpoint, TrainReport)> {
    let mut t = Trainer::new(dataset, config)?;
    let report = t.run(progress)?;
    Ok((t.into_checkpoint(), report))
}

/// Continues a checkpointed run up to `config.epochs` total epochs.
pub fn resume(checkpoint: Checkpoint, dataset: &EmbeddingContainer, config: TrainConfig) -> Result<(Checkpoint, TrainReport)> {
    resume_with_progress(checkpoint, dataset, config, |_| {})
}

pub fn resume_with_progress(
    checkpoint: Checkpoint,
    dataset: &EmbeddingContainer,
    config: TrainConfig,
    progress: impl FnMut(&EpochStats),
) -> Result<(Checkpoint, TrainReport)> {
    let mut t = Trainer::from_checkpoint(checkpoint, dataset, config)?;
    let report = t.run(progress)?;
    Ok((t.into_checkpoint(), report))
}

/// Inference-mode templates for every record, keyed by original subject.
pub fn encode_all(head: &HeadParams<f32>, records: &[PatchEmbeddingRecord]) -> Result<Vec<crate::heads::CompactTemplate>> {
    head.encode_batch(records)
}

/// Training-set accuracy of the margin-free decision rule in inference mode.
pub fn inference_accuracy(state: &Checkpoint, records: &[PatchEmbeddingRecord]) -> Result<f64> {
    let templates = state.head.encode_batch(records)?;
    let rows: Vec<Vec<f32>> = templates.into_iter().map(|t| t.0).collect();
    let t = Matrix::from_rows(&rows)?;
    let scores = match &state.classifier {
        Classifier::Angular(p) => p.scores(&t)?,
        Classifier::Softmax(c) => c.scores(&t)?,
    };
    let by_subject: BTreeMap<u32, usize> = state
        .label_map
        .subjects
        .iter()
        .enumerate()
        .map(|(i, &s)| (s, i))
        .collect();
    let correct = losses::argmax_rows(&scores)
        .iter()
        .zip(records)
        .filter(|(p, r)| by_subject.get(&r.subject) == Some(p))
        .count();
    Ok(correct as f64 / records.len().max(1) as f64)
}
