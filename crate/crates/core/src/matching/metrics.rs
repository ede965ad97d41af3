use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::gallery::Gallery;
use crate::data_io::{write_atomic, TemplateRecord};
use crate::error::{Error, Result};
use crate::heads::CompactTemplate;

/// Operating points reported by verification.
pub const FAR_TARGETS: [f64; 5] = [1e-5, 1e-4, 1e-3, 1e-2, 1e-1];

const RANK_POINTS: [usize; 6] = [1, 5, 10, 20, 50, 100];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentificationReport {
    /// Probes that were scored.
    pub probes: usize,
    /// Probes whose subject is not enrolled.
    pub excluded: usize,
    pub gallery_size: usize,
    /// `(k, accuracy)` at the standard rank points not exceeding the gallery size.
    pub rank_k: Vec<(usize, f64)>,
    /// `cmc[k - 1]` is the fraction of probes ranked within the top `k`.
    pub cmc: Vec<f64>,
    #[serde(skip)]
    pub ranks: Vec<usize>,
}

impl IdentificationReport {
    pub fn from_ranks(ranks: Vec<usize>, excluded: usize, gallery_size: usize) -> Result<Self> {
        if let Some(&r) = ranks.iter().find(|&&r| r == 0 || r > gallery_size) {
            return Err(Error::InvalidInput(format!("rank {r} outside 1..={gallery_size}")));
        }
        let mut cmc = Vec::new();
        if !ranks.is_empty() {
            let mut hist = vec![0usize; gallery_size + 1];
            for &r in &ranks {
                hist[r] += 1;
            }
            let mut seen = 0;
            cmc = hist[1..]
                .iter()
                .map(|&h| {
                    seen += h;
                    seen as f64 / ranks.len() as f64
                })
                .collect();
        }
        let rank_k = RANK_POINTS
            .iter()
            .filter(|&&k| k <= cmc.len())
            .map(|&k| (k, cmc[k - 1]))
            .collect();
        Ok(IdentificationReport {
            probes: ranks.len(),
            excluded,
            gallery_size,
            rank_k,
            cmc,
            ranks,
        })
    }

    pub fn rank_accuracy(&self, k: usize) -> Option<f64> {
        if k == 0 {
            return None;
        }
        self.cmc.get(k - 1).copied()
    }

    pub fn cmc_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["rank", "accuracy"])?;
        for (i, a) in self.cmc.iter().enumerate() {
            w.write_record([(i + 1).to_string(), a.to_string()])?;
        }
        csv_string(w)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// Pairs scoring at least this value are accepted; `None` accepts nothing.
    pub threshold: Option<f64>,
    pub far: f64,
    pub tar: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TarAtFar {
    pub far: f64,
    /// `None` when there are fewer than `1 / far` impostor pairs.
    pub tar: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub genuine: usize,
    pub impostor: usize,
    pub auc: f64,
    pub tar_at_far: Vec<TarAtFar>,
    pub roc: Vec<RocPoint>,
}

impl VerificationReport {
    pub fn tar_at(&self, far: f64) -> Option<f64> {
        self.tar_at_far.iter().find(|t| t.far == far).and_then(|t| t.tar)
    }

    pub fn roc_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["threshold", "far", "tar"])?;
        for p in &self.roc {
            let t = p.threshold.map_or_else(|| "inf".to_string(), |t| t.to_string());
            w.write_record([t, p.far.to_string(), p.tar.to_string()])?;
        }
        csv_string(w)
    }

    /// Linear interpolation on the ROC at a false-accept rate.
    pub fn interpolate(roc: &[RocPoint], far: f64) -> f64 {
        // highest TAR already reached at or below the requested FAR
        let mut lo = roc[0];
        for p in roc {
            if p.far <= far {
                lo = *p;
            } else {
                let span = p.far - lo.far;
                return lo.tar + (p.tar - lo.tar) * (far - lo.far) / span;
            }
        }
        lo.tar
    }
}

fn csv_string(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w
        .into_inner()
        .map_err(|e| Error::InvalidInput(format!("csv buffer: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// ROC, AUC and TAR at the standard FAR points from scored pairs
/// `(score, genuine)`. Higher scores mean more similar.
pub fn verify(pairs: &[(f64, bool)]) -> Result<VerificationReport> {
    if let Some(i) = pairs.iter().position(|(s, _)| !s.is_finite()) {
        return Err(Error::NonFinite(format!("verification score {i}")));
    }
    let genuine = pairs.iter().filter(|p| p.1).count();
    let impostor = pairs.len() - genuine;
    if genuine == 0 || impostor == 0 {
        return Err(Error::InvalidInput(format!(
            "verification needs both genuine and impostor pairs (got {genuine} and {impostor})"
        )));
    }
    let mut sorted = pairs.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));

    let (g, im) = (genuine as f64, impostor as f64);
    let mut roc = vec![RocPoint {
        threshold: None,
        far: 0.0,
        tar: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == t {
            if sorted[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        roc.push(RocPoint {
            threshold: Some(t),
            far: fp as f64 / im,
            tar: tp as f64 / g,
        });
    }
    let auc = roc
        .windows(2)
        .map(|w| (w[1].far - w[0].far) * (w[1].tar + w[0].tar) / 2.0)
        .sum::<f64>()
        .clamp(0.0, 1.0);
    let tar_at_far = FAR_TARGETS
        .iter()
        .map(|&far| TarAtFar {
            far,
            tar: (im * far >= 1.0 - 1e-9).then(|| VerificationReport::interpolate(&roc, far)),
        })
        .collect();
    Ok(VerificationReport {
        genuine,
        impostor,
        auc,
        tar_at_far,
        roc,
    })
}

/// Scores explicit template pairs by cosine similarity and verifies them.
pub fn verify_pairs(pairs: &[(CompactTemplate, CompactTemplate, bool)]) -> Result<VerificationReport> {
    let scored = pairs
        .iter()
        .enumerate()
        .map(|(i, (a, b, same))| {
            super::cosine_similarity(a, b)
                .map(|s| (s, *same))
                .map_err(|e| Error::InvalidInput(format!("pair {i}: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    verify(&scored)
}

/// Every probe against every gallery entry; same subject means genuine.
pub fn verify_gallery(probes: &[TemplateRecord], gallery: &Gallery) -> Result<VerificationReport> {
    let rows: Vec<Vec<(f64, bool)>> = probes
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let s = gallery
                .scores(p.template.values())
                .map_err(|e| Error::InvalidInput(format!("probe {i}: {e}")))?;
            Ok(s.iter()
                .zip(gallery.subjects())
                .map(|(&v, &y)| (f64::from(v), y == p.subject))
                .collect())
        })
        .collect::<Result<_>>()?;
    verify(&rows.concat())
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub identification: Option<IdentificationReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verification: Option<VerificationReport>,
    /// Inputs that could not be compared normally (constant or zero templates).
    pub flagged: usize,
    /// Comparisons per second measured while scoring, if timed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub comparisons_per_second: Option<f64>,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Writes `<stem>.json` plus `<stem>.roc.csv` and/or `<stem>.cmc.csv`
    /// next to `json_path`. Returns the paths written.
    pub fn write(&self, json_path: &Path) -> Result<Vec<std::path::PathBuf>> {
        let mut written = Vec::new();
        let side = |ext: &str| json_path.with_extension(ext);
        if let Some(v) = &self.verification {
            let p = side("roc.csv");
            write_atomic(&p, v.roc_csv()?.as_bytes())?;
            written.push(p);
        }
        if let Some(id) = &self.identification {
            let p = side("cmc.csv");
            write_atomic(&p, id.cmc_csv()?.as_bytes())?;
            written.push(p);
        }
        write_atomic(json_path, self.to_json()?.as_bytes())?;
        written.push(json_path.to_path_buf());
        Ok(written)
    }
}
