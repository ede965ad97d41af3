use std::path::Path;

use super::embeddings::{EmbeddingContainer, EmbeddingLayout};
use super::occlusion::summarize_occlusion;
use crate::error::{Error, Result};
use crate::heads::PatchEmbeddingRecord;

/// Reads per-patch embeddings from CSV.
///
/// Header row: `subject,media,m_1..m_n,` then one column per float
/// (auxiliary values first, then patches in order). Visibility cells may be
/// binary flags or visible fractions; both go through
/// [`summarize_occlusion`] with threshold `eps`.
pub fn read_csv(path: &Path, layout: &EmbeddingLayout, eps: f64) -> Result<EmbeddingContainer> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::InvalidInput(format!("{}: {other:?}", path.display())),
        })?;
    let header = rdr.headers()?.clone();
    let n = layout.n_patches();
    let masks = header.iter().filter(|h| h.starts_with("m_")).count();
    if header.get(0) != Some("subject") || header.get(1) != Some("media") {
        return Err(Error::InvalidInput("csv header must start with subject,media".into()));
    }
    if masks != n {
        return Err(Error::shape("csv occlusion columns", n, masks));
    }
    let floats = layout.aux_dim + layout.patch_dims.iter().sum::<usize>();
    if header.len() != 2 + n + floats {
        return Err(Error::shape("csv column count", 2 + n + floats, header.len()));
    }

    let mut records = Vec::new();
    for (line, row) in rdr.records().enumerate() {
        let row = row?;
        let bad = |what: &str| Error::InvalidInput(format!("csv row {}: bad {what}", line + 2));
        let subject = row[0].parse::<u32>().map_err(|_| bad("subject"))?;
        let media = row[1].parse::<u32>().map_err(|_| bad("media"))?;
        let fractions = (0..n)
            .map(|i| row[2 + i].parse::<f64>().map_err(|_| bad("visibility")))
            .collect::<Result<Vec<_>>>()?;
        let visible = summarize_occlusion(&fractions, eps)?;
        let values = (2 + n..row.len())
            .map(|i| row[i].parse::<f32>().map_err(|_| bad("float")))
            .collect::<Result<Vec<_>>>()?;
        let aux = (layout.aux_dim > 0).then(|| values[..layout.aux_dim].to_vec());
        let mut off = layout.aux_dim;
        let patches = layout
            .patch_dims
            .iter()
            .map(|&d| {
                off += d;
                values[off - d..off].to_vec()
            })
            .collect();
        records.push(PatchEmbeddingRecord {
            subject,
            media,
            patches,
            visible,
            aux,
        });
    }
    EmbeddingContainer::new(layout.clone(), records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn imports_fractions_and_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.csv");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "subject,media,m_1,m_2,a,b,c").unwrap();
        writeln!(f, "4,1,0.69,1,0.5,1.5,2.5").unwrap();
        writeln!(f, "5,2,0.7,0,1,2,3").unwrap();
        drop(f);
        let layout = EmbeddingLayout {
            patch_dims: vec![2, 1],
            aux_dim: 0,
        };
        let c = read_csv(&path, &layout, 0.7).unwrap();
        assert_eq!(c.records[0].visible, [false, true]);
        assert_eq!(c.records[1].visible, [true, false]);
        assert_eq!(c.records[0].patches, vec![vec![0.5, 1.5], vec![2.5]]);
        assert_eq!(c.records[1].subject, 5);
    }

    #[test]
    fn column_count_is_checked() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.csv");
        std::fs::write(&path, "subject,media,m_1,a\n1,1,1,0.5\n").unwrap();
        let layout = EmbeddingLayout {
            patch_dims: vec![2],
            aux_dim: 0,
        };
        assert!(read_csv(&path, &layout, 0.7).is_err());
    }
}
