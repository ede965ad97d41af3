use std::path::Path;

use super::bytes::{ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::heads::CompactTemplate;

pub const TEMPLATE_MAGIC: [u8; 4] = *b"OGTP";
pub const TEMPLATE_VERSION: u32 = 1;
pub const TEMPLATE_HEADER_LEN: usize = 4 + 4 + 4 + 8;

#[derive(Clone, Debug, PartialEq)]
pub struct TemplateRecord {
    pub subject: u32,
    pub media: u32,
    pub template: CompactTemplate,
}

/// Labeled compact templates.
///
/// ```text
/// "OGTP" | version u32 | dim u32 | count u64
/// then per record: subject u32 | media u32 | f32[dim]
/// ```
#[derive(Clone, Debug, PartialEq)]
pub struct TemplateContainer {
    pub dim: usize,
    pub records: Vec<TemplateRecord>,
}

impl TemplateContainer {
    pub fn new(dim: usize, records: Vec<TemplateRecord>) -> Result<Self> {
        for (i, r) in records.iter().enumerate() {
            if r.template.dim() != dim {
                return Err(Error::shape(format!("template {i}"), dim, r.template.dim()));
            }
            if r.template.values().iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("template {i}")));
            }
        }
        Ok(TemplateContainer { dim, records })
    }

    pub fn record_len(&self) -> usize {
        8 + 4 * self.dim
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = ByteWriter::with_capacity(TEMPLATE_HEADER_LEN + self.records.len() * self.record_len());
        w.bytes(&TEMPLATE_MAGIC);
        w.u32(TEMPLATE_VERSION);
        w.len_u32(self.dim)?;
        w.u64(self.records.len() as u64);
        for r in &self.records {
            w.u32(r.subject);
            w.u32(r.media);
            w.f32s(r.template.values());
        }
        Ok(w.into_inner())
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(buf);
        r.magic(TEMPLATE_MAGIC)?;
        r.version("template container", TEMPLATE_VERSION)?;
        let dim = r.u32()? as usize;
        let count = r.u64()?;
        r.expect_remaining(u128::from(count) * (8 + 4 * dim as u128))?;
        let mut records = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let subject = r.u32()?;
            let media = r.u32()?;
            let template = CompactTemplate(r.f32s(dim)?);
            records.push(TemplateRecord {
                subject,
                media,
                template,
            });
        }
        r.finish()?;
        Ok(TemplateContainer { dim, records })
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

    fn container(dim: usize, count: usize) -> TemplateContainer {
        let records = (0..count)
            .map(|i| TemplateRecord {
                subject: i as u32 % 7,
                media: i as u32,
                template: CompactTemplate((0..dim).map(|j| (i * dim + j) as f32 * 0.5).collect()),
            })
            .collect();
        TemplateContainer::new(dim, records).unwrap()
    }

    #[test]
    fn file_size_accounting() {
        let c = container(128, 100);
        let bytes = c.to_bytes().unwrap();
        assert_eq!(c.record_len() - 8, 512);
        assert_eq!(bytes.len(), TEMPLATE_HEADER_LEN + 100 * 520);
    }

    #[test]
    fn truncation_and_magic_errors() {
        let bytes = container(4, 3).to_bytes().unwrap();
        let err = TemplateContainer::from_bytes(&bytes[..bytes.len() - 1]).unwrap_err();
        assert!(matches!(err, Error::Truncated { at, needed: 1 } if at == bytes.len() - 1), "{err}");
        let mut bad = bytes.clone();
        bad[3] = b'Q';
        assert!(matches!(TemplateContainer::from_bytes(&bad), Err(Error::BadMagic { .. })));
        assert!(TemplateContainer::from_bytes(&bytes[..10]).is_err());
    }

    #[test]
    fn mismatched_dim_rejected_on_build() {
        let r = TemplateRecord {
            subject: 0,
            media: 0,
            template: CompactTemplate(vec![1.0; 3]),
        };
        assert!(TemplateContainer::new(4, vec![r]).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_identity(dim in 1usize..16, vals in prop::collection::vec((any::<u32>(), any::<u32>(), prop::collection::vec(-1e30f32..1e30, 16)), 0..20)) {
            let records = vals.into_iter().map(|(s, m, v)| TemplateRecord {
                subject: s, media: m, template: CompactTemplate(v[..dim].to_vec()),
            }).collect();
            let c = TemplateContainer::new(dim, records).unwrap();
            prop_assert_eq!(TemplateContainer::from_bytes(&c.to_bytes().unwrap()).unwrap(), c);
        }
    }
}
