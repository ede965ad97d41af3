use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::{Duration, Instant};

use anyhow::{Context, Result};
use ogctl::data_io::{
    generate_synthetic, read_csv, write_atomic, Checkpoint, EmbeddingContainer, EmbeddingLayout, OcclusionProfile,
    SynthSpec, TemplateContainer, TemplateRecord,
};
use ogctl::heads::{HeadKind, NormConfig, NormStats};
use ogctl::losses::LambdaSchedule;
use ogctl::matching::{
    bench_compact, bench_dprfs, identify, pool_image_set, verify_gallery, BenchConfig, DprfsTemplate, EvalReport,
    Gallery,
};
use ogctl::numerics::{AdamConfig, SeededRng};
use ogctl::trainer::{resume_with_progress, train_with_progress, EpochStats};
use ogctl::{CompactTemplate, PatchEmbeddingRecord, TrainConfig};
use serde_json::{json, Value};

use crate::args::{
    BenchArgs, EncodeArgs, EvalArgs, ImportArgs, MatchArgs, Mode, Protocol, SynthArgs, TrainArgs,
};
use crate::output::{emit, UsageError};

fn usage(msg: impl std::fmt::Display) -> anyhow::Error {
    UsageError(msg.to_string()).into()
}

/// Inputs must be existing files.
fn check_input(path: &Path) -> Result<()> {
    if !path.is_file() {
        return Err(usage(format!("input file not found: {}", path.display())));
    }
    Ok(())
}

/// Outputs need an existing parent directory and must not overwrite an input.
fn check_output(path: &Path, inputs: &[&Path]) -> Result<()> {
    if path.is_dir() {
        return Err(usage(format!("output path is a directory: {}", path.display())));
    }
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    if !parent.is_dir() {
        return Err(usage(format!("output directory does not exist: {}", parent.display())));
    }
    if path.exists() {
        let target = path.canonicalize()?;
        for i in inputs {
            if i.canonicalize().ok().as_deref() == Some(target.as_path()) {
                return Err(usage(format!("output would overwrite input {}", i.display())));
            }
        }
    }
    Ok(())
}

fn written(path: &Path, extra: Value) {
    let bytes = std::fs::metadata(path).map(|m| m.len()).unwrap_or(0);
    let mut v = json!({ "path": path.display().to_string(), "bytes": bytes });
    if let (Value::Object(m), Value::Object(e)) = (&mut v, extra) {
        m.extend(e);
    }
    emit("written", v);
}

pub fn synth(a: SynthArgs) -> Result<()> {
    check_output(&a.out, &[])?;
    let profiles = a
        .profiles
        .split(',')
        .map(|p| OcclusionProfile::parse(p.trim(), a.patches))
        .collect::<ogctl::Result<Vec<_>>>()
        .map_err(usage)?;
    let spec = SynthSpec {
        identities: a.ids,
        per_identity: a.per_id,
        patch_dims: vec![a.patch_dim; a.patches],
        aux_dim: a.aux_dim,
        sigma: a.sigma,
        garbage_sigma: a.garbage_sigma,
        profiles,
        seed: a.seed,
        sample_seed: a.sample_seed,
    };
    let data = generate_synthetic(&spec).map_err(usage)?;
    data.write(&a.out)?;
    written(&a.out, json!({ "records": data.len() }));
    Ok(())
}

fn train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let c = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size as usize,
        seed: a.seed,
        loss: a.loss,
        head: a.head,
        template_dim: a.dim as usize,
        hidden: a.hidden as usize,
        margin: a.margin,
        margin_form: a.margin_form,
        adam: AdamConfig {
            lr: a.lr,
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.adam_eps,
        },
        lambda: LambdaSchedule {
            start: a.lambda_start,
            min: a.lambda_min,
            decay: a.lambda_decay,
        },
        norm: NormConfig {
            eps: a.bn_eps,
            momentum: a.bn_momentum,
            stats: if a.bn_stats == "visible" { NormStats::VisibleOnly } else { NormStats::AllRows },
        },
        checkpoint_every: a.checkpoint_every,
        checkpoint_path: Some(a.out.clone()),
    };
    c.validate().map_err(usage)?;
    Ok(c)
}

fn epoch_line(s: &EpochStats) {
    emit(
        "epoch",
        json!({ "epoch": s.epoch, "loss": s.mean_loss, "accuracy": s.accuracy, "seconds": s.seconds }),
    );
}

pub fn train(a: TrainArgs) -> Result<()> {
    let config = train_config(&a)?;
    check_input(&a.embeddings)?;
    let mut inputs = vec![a.embeddings.as_path()];
    if let Some(r) = &a.resume {
        check_input(r)?;
        inputs.push(r);
    }
    check_output(&a.out, &inputs)?;
    if let Some(r) = &a.report {
        check_output(r, &inputs)?;
    }
    let data = EmbeddingContainer::read(&a.embeddings)?;
    let (checkpoint, report) = match &a.resume {
        Some(path) => {
            let ck = Checkpoint::read(path)?;
            if ck.epochs_done >= config.epochs {
                return Err(usage(format!(
                    "checkpoint already has {} epochs; --epochs is the total and must exceed it",
                    ck.epochs_done
                )));
            }
            resume_with_progress(ck, &data, config, epoch_line)?
        }
        None => train_with_progress(&data, config, epoch_line)?,
    };
    if let Some(r) = &a.report {
        write_atomic(r, serde_json::to_string_pretty(&report)?.as_bytes())?;
        written(r, json!({}));
    }
    written(
        &a.out,
        json!({ "epochs": checkpoint.epochs_done, "final_accuracy": report.final_accuracy() }),
    );
    Ok(())
}

fn load_head(checkpoint: &Path, data: &EmbeddingContainer) -> Result<Checkpoint> {
    let ck = Checkpoint::read(checkpoint)?;
    let head = &ck.head.config;
    if head.patch_dims != data.layout.patch_dims {
        anyhow::bail!(
            "checkpoint expects patch dims {:?}, embeddings have {:?}",
            head.patch_dims,
            data.layout.patch_dims
        );
    }
    if head.kind == HeadKind::OgctlPlus && head.aux_dim != data.layout.aux_dim {
        anyhow::bail!("checkpoint expects aux dim {}, embeddings have {}", head.aux_dim, data.layout.aux_dim);
    }
    Ok(ck)
}

/// Encodes and warns about records whose template is the head's constant.
fn encode_records(ck: &Checkpoint, records: &[PatchEmbeddingRecord]) -> Result<(Vec<CompactTemplate>, usize)> {
    let templates = ck.head.encode_batch(records)?;
    let mut constant = 0;
    if ck.head.kind().is_gated() {
        for (i, r) in records.iter().enumerate().filter(|(_, r)| r.all_occluded()) {
            constant += 1;
            emit(
                "warning",
                json!({
                    "kind": "constant_template",
                    "record": i,
                    "subject": r.subject,
                    "media": r.media,
                    "message": "all patches occluded; template carries no identity information",
                }),
            );
        }
    }
    Ok((templates, constant))
}

fn labeled(records: &[PatchEmbeddingRecord], templates: Vec<CompactTemplate>) -> Vec<TemplateRecord> {
    records
        .iter()
        .zip(templates)
        .map(|(r, t)| TemplateRecord {
            subject: r.subject,
            media: r.media,
            template: t,
        })
        .collect()
}

pub fn encode(a: EncodeArgs) -> Result<()> {
    check_input(&a.embeddings)?;
    check_input(&a.checkpoint)?;
    check_output(&a.out, &[&a.embeddings, &a.checkpoint])?;
    let data = EmbeddingContainer::read(&a.embeddings)?;
    let ck = load_head(&a.checkpoint, &data)?;
    let (templates, constant) = encode_records(&ck, &data.records)?;
    let container = TemplateContainer::new(ck.head.template_dim(), labeled(&data.records, templates))?;
    container.write(&a.out)?;
    written(&a.out, json!({ "records": container.records.len(), "constant_templates": constant }));
    Ok(())
}

fn read_templates(path: &Path) -> Result<TemplateContainer> {
    TemplateContainer::read(path).with_context(|| format!("reading {}", path.display()))
}

pub fn match_templates(a: MatchArgs) -> Result<()> {
    check_input(&a.probes)?;
    check_input(&a.gallery)?;
    check_output(&a.out, &[&a.probes, &a.gallery])?;
    let probes = read_templates(&a.probes)?;
    let gallery = read_templates(&a.gallery)?;
    if probes.dim != gallery.dim {
        anyhow::bail!("probe dim {} does not match gallery dim {}", probes.dim, gallery.dim);
    }
    let g = Gallery::from_records(&gallery.records)?;
    let mut out = String::from("probe,probe_subject,probe_media,gallery,gallery_subject,gallery_media,score\n");
    let mut order: Vec<usize> = Vec::with_capacity(g.len());
    for (i, p) in probes.records.iter().enumerate() {
        let scores = g
            .scores(p.template.values())
            .with_context(|| format!("probe {i}"))?;
        order.clear();
        order.extend(0..g.len());
        if a.top > 0 {
            order.sort_by(|&x, &y| scores[y].total_cmp(&scores[x]).then(x.cmp(&y)));
            order.truncate(a.top);
        }
        for &j in &order {
            let r = &gallery.records[j];
            writeln!(out, "{i},{},{},{j},{},{},{}", p.subject, p.media, r.subject, r.media, scores[j])?;
        }
    }
    write_atomic(&a.out, out.as_bytes())?;
    written(&a.out, json!({ "probes": probes.records.len(), "gallery": g.len() }));
    Ok(())
}

fn pool_by_subject(records: Vec<TemplateRecord>, flagged: &mut usize) -> Result<Vec<TemplateRecord>> {
    let mut sets: BTreeMap<u32, Vec<CompactTemplate>> = BTreeMap::new();
    for r in records {
        sets.entry(r.subject).or_default().push(r.template);
    }
    let mut pooled = Vec::with_capacity(sets.len());
    for (subject, set) in sets {
        let t = pool_image_set(&set)?;
        if t.is_degenerate() {
            *flagged += 1;
            emit(
                "warning",
                json!({ "kind": "degenerate_pooled_template", "subject": subject, "templates": set.len() }),
            );
            continue;
        }
        pooled.push(TemplateRecord { subject, media: 0, template: t });
    }
    Ok(pooled)
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let mut inputs: Vec<&Path> = Vec::new();
    let mut flagged = 0;
    let (gallery, probes) = match (&a.embeddings, &a.checkpoint, &a.gallery, &a.probes) {
        (Some(e), Some(c), None, None) => {
            check_input(e)?;
            check_input(c)?;
            inputs.extend([e.as_path(), c.as_path()]);
            if let Some(r) = &a.report {
                check_output(r, &inputs)?;
            }
            let data = EmbeddingContainer::read(e)?;
            let ck = load_head(c, &data)?;
            let (templates, constant) = encode_records(&ck, &data.records)?;
            flagged += constant;
            let (g, p): (Vec<_>, Vec<_>) = labeled(&data.records, templates)
                .into_iter()
                .zip(&data.records)
                .partition(|(_, r)| r.all_visible());
            (g.into_iter().map(|x| x.0).collect::<Vec<_>>(), p.into_iter().map(|x| x.0).collect::<Vec<_>>())
        }
        (None, None, Some(g), Some(p)) => {
            check_input(g)?;
            check_input(p)?;
            inputs.extend([g.as_path(), p.as_path()]);
            if let Some(r) = &a.report {
                check_output(r, &inputs)?;
            }
            (read_templates(g)?.records, read_templates(p)?.records)
        }
        _ => return Err(usage("eval needs --embeddings with --checkpoint, or --gallery with --probes")),
    };
    let gallery = if a.pool_gallery { pool_by_subject(gallery, &mut flagged)? } else { gallery };
    if gallery.is_empty() {
        anyhow::bail!("gallery is empty (no fully visible records?)");
    }
    if probes.is_empty() {
        anyhow::bail!("no probes to evaluate");
    }
    let g = Gallery::from_records(&gallery)?;

    let mut report = EvalReport {
        flagged,
        ..Default::default()
    };
    let comparisons = (g.len() * probes.len()) as f64;
    if matches!(a.protocol, Protocol::Identification | Protocol::Both) {
        let start = Instant::now();
        report.identification = Some(identify(&probes, &g)?);
        report.comparisons_per_second = Some(comparisons / start.elapsed().as_secs_f64().max(1e-9));
    }
    if matches!(a.protocol, Protocol::Verification | Protocol::Both) {
        report.verification = Some(verify_gallery(&probes, &g)?);
    }

    let mut summary = json!({ "gallery": g.len(), "probes": probes.len(), "flagged": flagged });
    if let Some(id) = &report.identification {
        summary["rank1"] = json!(id.rank_accuracy(1));
        summary["rank_k"] = json!(id.rank_k);
        summary["excluded"] = json!(id.excluded);
        summary["comparisons_per_second"] = json!(report.comparisons_per_second);
    }
    if let Some(v) = &report.verification {
        summary["auc"] = json!(v.auc);
        summary["genuine"] = json!(v.genuine);
        summary["impostor"] = json!(v.impostor);
        summary["tar_at_far"] = json!(v.tar_at_far);
    }
    emit("eval", summary);
    if let Some(path) = &a.report {
        for p in report.write(path)? {
            written(&p, json!({}));
        }
    }
    Ok(())
}

fn random_compact(rng: &mut SeededRng, n: usize, dim: usize) -> Vec<CompactTemplate> {
    (0..n)
        .map(|_| CompactTemplate::new((0..dim).map(|_| rng.normal() as f32).collect()))
        .collect()
}

pub fn bench(a: BenchArgs) -> Result<()> {
    if !(a.seconds > 0.0) || !a.seconds.is_finite() {
        return Err(usage("--seconds must be positive"));
    }
    if a.threads == Some(0) {
        return Err(usage("--threads must be at least 1"));
    }
    let mut inputs: Vec<&Path> = Vec::new();
    for p in [&a.templates, &a.embeddings].into_iter().flatten() {
        check_input(p)?;
        inputs.push(p);
    }
    if let Some(o) = &a.out {
        check_output(o, &inputs)?;
    }
    let config = BenchConfig {
        min_duration: Duration::from_secs_f64(a.seconds),
        threads: a.threads,
    };
    let mut rng = SeededRng::new(a.seed);
    let report = match a.mode {
        Mode::Compact => {
            let (gallery, probes) = match &a.templates {
                Some(p) => {
                    let t: Vec<CompactTemplate> = read_templates(p)?.records.into_iter().map(|r| r.template).collect();
                    let probes = t[..a.probes.min(t.len())].to_vec();
                    (t, probes)
                }
                None => (random_compact(&mut rng, a.gallery_size, a.dim), random_compact(&mut rng, a.probes, a.dim)),
            };
            let labels: Vec<u32> = (0..gallery.len() as u32).collect();
            let g = Gallery::new(&gallery, &labels)?;
            bench_compact(&g, &probes, &config)?
        }
        Mode::Dprfs => {
            let (gallery, probes): (Vec<DprfsTemplate>, Vec<DprfsTemplate>) = match &a.embeddings {
                Some(p) => {
                    let data = EmbeddingContainer::read(p)?;
                    let t: Vec<DprfsTemplate> = data.records.iter().map(DprfsTemplate::from_record).collect();
                    let probes = t[..a.probes.min(t.len())].to_vec();
                    (t, probes)
                }
                None => {
                    let mut draw = |n: usize| -> Vec<DprfsTemplate> {
                        (0..n)
                            .map(|_| DprfsTemplate {
                                patches: (0..a.patches)
                                    .map(|_| (0..a.patch_dim).map(|_| rng.normal() as f32).collect())
                                    .collect(),
                                visible: vec![true; a.patches],
                            })
                            .collect()
                    };
                    let g = draw(a.gallery_size);
                    (g, draw(a.probes))
                }
            };
            bench_dprfs(&gallery, &probes, &config)?
        }
    };
    let value = serde_json::to_value(&report)?;
    emit("bench", value.clone());
    if let Some(o) = &a.out {
        write_atomic(o, serde_json::to_string_pretty(&value)?.as_bytes())?;
        written(o, json!({}));
    }
    Ok(())
}

pub fn import_csv(a: ImportArgs) -> Result<()> {
    if !(a.eps > 0.0 && a.eps <= 1.0) {
        return Err(usage(format!("--eps must be in (0, 1], got {}", a.eps)));
    }
    check_input(&a.input)?;
    check_output(&a.out, &[&a.input])?;
    let layout = EmbeddingLayout {
        patch_dims: a.patch_dims.clone(),
        aux_dim: a.aux_dim,
    };
    let data = read_csv(&a.input, &layout, a.eps)?;
    data.write(&a.out)?;
    written(&a.out, json!({ "records": data.len() }));
    Ok(())
}

