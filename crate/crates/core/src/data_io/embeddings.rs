use std::path::Path;

use super::bytes::{ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::heads::PatchEmbeddingRecord;

pub const EMBEDDING_MAGIC: [u8; 4] = *b"OGEB";
pub const EMBEDDING_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EmbeddingLayout {
    pub patch_dims: Vec<usize>,
    pub aux_dim: usize,
}

impl EmbeddingLayout {
    pub fn n_patches(&self) -> usize {
        self.patch_dims.len()
    }

    /// Bytes per record: labels, flags, aux and patch floats.
    pub fn record_len(&self) -> usize {
        8 + self.n_patches() + 4 * (self.aux_dim + self.patch_dims.iter().sum::<usize>())
    }

    pub fn header_len(&self) -> usize {
        4 + 4 + 4 + 4 * self.n_patches() + 4 + 8
    }
}

/// Per-patch embeddings for a set of faces.
///
/// ```text
/// "OGEB" | version u32 | n u32 | dims u32[n] | aux_dim u32 | count u64
/// then per record:
///   subject u32 | media u32 | visible u8[n] | aux f32[aux_dim] | patches f32[Σdims]
/// ```
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingContainer {
    pub layout: EmbeddingLayout,
    pub records: Vec<PatchEmbeddingRecord>,
}

impl EmbeddingContainer {
    pub fn new(layout: EmbeddingLayout, records: Vec<PatchEmbeddingRecord>) -> Result<Self> {
        for (i, r) in records.iter().enumerate() {
            r.validate(&layout.patch_dims, layout.aux_dim)
                .map_err(|e| Error::InvalidInput(format!("record {i}: {e}")))?;
        }
        Ok(EmbeddingContainer { layout, records })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let l = &self.layout;
        let mut w = ByteWriter::with_capacity(l.header_len() + self.len() * l.record_len());
        w.bytes(&EMBEDDING_MAGIC);
        w.u32(EMBEDDING_VERSION);
        w.len_u32(l.n_patches())?;
        for &d in &l.patch_dims {
            w.len_u32(d)?;
        }
        w.len_u32(l.aux_dim)?;
        w.u64(self.len() as u64);
        for r in &self.records {
            w.u32(r.subject);
            w.u32(r.media);
            for &v in &r.visible {
                w.u8(u8::from(v));
            }
            if let Some(aux) = &r.aux {
                w.f32s(aux);
            }
            for p in &r.patches {
                w.f32s(p);
            }
        }
        Ok(w.into_inner())
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(buf);
        r.magic(EMBEDDING_MAGIC)?;
        r.version("embedding container", EMBEDDING_VERSION)?;
        let n = r.u32()? as usize;
        // n u32s must fit in what's left before allocating
        if r.remaining() < 4 * n {
            return Err(Error::Truncated {
                at: buf.len(),
                needed: 4 * n - r.remaining(),
            });
        }
        let patch_dims = (0..n).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let aux_dim = r.u32()? as usize;
        let count = r.u64()?;
        let layout = EmbeddingLayout { patch_dims, aux_dim };
        r.expect_remaining(u128::from(count) * layout.record_len() as u128)?;
        let mut records = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let subject = r.u32()?;
            let media = r.u32()?;
            let visible = (0..n).map(|_| r.flag()).collect::<Result<Vec<_>>>()?;
            let aux = if aux_dim > 0 { Some(r.f32s(aux_dim)?) } else { None };
            let patches = layout
                .patch_dims
                .iter()
                .map(|&d| r.f32s(d))
                .collect::<Result<Vec<_>>>()?;
            records.push(PatchEmbeddingRecord {
                subject,
                media,
                patches,
                visible,
                aux,
            });
        }
        r.finish()?;
        Ok(EmbeddingContainer { layout, records })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&super::read_file(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        super::write_atomic(path, &self.to_bytes()?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn arb_container() -> impl Strategy<Value = EmbeddingContainer> {
        (
            prop::collection::vec(1usize..6, 1..4),
            0usize..4,
            0usize..12,
        )
            .prop_flat_map(|(dims, aux, count)| {
                let total: usize = dims.iter().sum();
                let n = dims.len();
                let rec = (
                    any::<u32>(),
                    any::<u32>(),
                    prop::collection::vec(any::<bool>(), n),
                    prop::collection::vec(-1e6f32..1e6, aux),
                    prop::collection::vec(-1e6f32..1e6, total),
                );
                (Just(dims), Just(aux), prop::collection::vec(rec, count))
            })
            .prop_map(|(dims, aux, recs)| {
                let records = recs
                    .into_iter()
                    .map(|(subject, media, visible, a, flat)| {
                        let mut off = 0;
                        let patches = dims
                            .iter()
                            .map(|&d| {
                                off += d;
                                flat[off - d..off].to_vec()
                            })
                            .collect();
                        PatchEmbeddingRecord {
                            subject,
                            media,
                            patches,
                            visible,
                            aux: (aux > 0).then_some(a),
                        }
                    })
                    .collect();
                EmbeddingContainer::new(EmbeddingLayout { patch_dims: dims, aux_dim: aux }, records).unwrap()
            })
    }

    proptest! {
        #[test]
        fn round_trip_is_identity(c in arb_container()) {
            let bytes = c.to_bytes().unwrap();
            prop_assert_eq!(bytes.len(), c.layout.header_len() + c.len() * c.layout.record_len());
            prop_assert_eq!(EmbeddingContainer::from_bytes(&bytes).unwrap(), c);
        }

        #[test]
        fn any_truncation_is_rejected(c in arb_container(), cut in 1usize..64) {
            let bytes = c.to_bytes().unwrap();
            let keep = bytes.len().saturating_sub(cut);
            prop_assert!(EmbeddingContainer::from_bytes(&bytes[..keep]).is_err());
        }
    }

    fn sample() -> EmbeddingContainer {
        let rec = PatchEmbeddingRecord {
            subject: 3,
            media: 9,
            patches: vec![vec![1.0, 2.0], vec![3.0]],
            visible: vec![true, false],
            aux: None,
        };
        EmbeddingContainer::new(
            EmbeddingLayout {
                patch_dims: vec![2, 1],
                aux_dim: 0,
            },
            vec![rec.clone(), rec],
        )
        .unwrap()
    }

    #[test]
    fn layout_is_bit_exact() {
        let bytes = sample().to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"OGEB");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &2u32.to_le_bytes());
        assert_eq!(&bytes[20..24], &0u32.to_le_bytes());
        assert_eq!(&bytes[24..32], &2u64.to_le_bytes());
        assert_eq!(&bytes[32..36], &3u32.to_le_bytes());
        assert_eq!(&bytes[40..42], &[1, 0]);
        assert_eq!(&bytes[42..46], &1.0f32.to_le_bytes());
        assert_eq!(bytes.len(), 32 + 2 * (8 + 2 + 12));
    }

    #[test]
    fn structured_errors() {
        let bytes = sample().to_bytes().unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(EmbeddingContainer::from_bytes(&bad), Err(Error::BadMagic { .. })));
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(matches!(
            EmbeddingContainer::from_bytes(&bad),
            Err(Error::UnsupportedVersion { found: 2, .. })
        ));
        let err = EmbeddingContainer::from_bytes(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(err.to_string().starts_with("truncated at byte"), "{err}");
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(EmbeddingContainer::from_bytes(&long), Err(Error::TrailingBytes { .. })));
        let mut nan = bytes.clone();
        nan[42..46].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(EmbeddingContainer::from_bytes(&nan), Err(Error::Malformed { at: 42, .. })));
        let mut flag = bytes;
        flag[40] = 7;
        assert!(matches!(EmbeddingContainer::from_bytes(&flag), Err(Error::Malformed { at: 40, .. })));
    }
}
