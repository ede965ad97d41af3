use ogctl::data_io::{
    generate_synthetic, EmbeddingContainer, EmbeddingLayout, SynthSpec, TemplateContainer, TemplateRecord,
};
use ogctl::numerics::SeededRng;
use ogctl::{CompactTemplate, Error, PatchEmbeddingRecord};

fn random_embeddings(rng: &mut SeededRng, count: usize) -> EmbeddingContainer {
    let layout = EmbeddingLayout {
        patch_dims: vec![7, 3, 12, 1],
        aux_dim: 5,
    };
    let records = (0..count)
        .map(|i| PatchEmbeddingRecord {
            subject: rng.below(1 << 20) as u32,
            media: i as u32,
            patches: layout
                .patch_dims
                .iter()
                .map(|&d| (0..d).map(|_| (rng.normal() * 1e3) as f32).collect())
                .collect(),
            visible: (0..4).map(|_| rng.below(2) == 0).collect(),
            aux: Some((0..5).map(|_| rng.normal() as f32).collect()),
        })
        .collect();
    EmbeddingContainer::new(layout, records).unwrap()
}

#[test]
fn thousand_record_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = SeededRng::new(12);

    let emb = random_embeddings(&mut rng, 1000);
    let p = dir.path().join("e.ogeb");
    emb.write(&p).unwrap();
    assert_eq!(EmbeddingContainer::read(&p).unwrap(), emb);
    let len = std::fs::metadata(&p).unwrap().len() as usize;
    assert_eq!(len, emb.layout.header_len() + 1000 * emb.layout.record_len());

    let templates = TemplateContainer::new(
        9,
        (0..1000)
            .map(|i| TemplateRecord {
                subject: i,
                media: 2 * i,
                template: CompactTemplate::new((0..9).map(|_| rng.normal() as f32).collect()),
            })
            .collect(),
    )
    .unwrap();
    let p = dir.path().join("t.ogtp");
    templates.write(&p).unwrap();
    assert_eq!(TemplateContainer::read(&p).unwrap(), templates);
    assert_eq!(std::fs::metadata(&p).unwrap().len(), 20 + 1000 * (8 + 36));
}

#[test]
fn truncation_reports_the_offset() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate_synthetic(&SynthSpec::new(2, 2, 0.1, 3)).unwrap();
    let bytes = data.to_bytes().unwrap();
    let p = dir.path().join("cut.ogeb");
    std::fs::write(&p, &bytes[..bytes.len() - 10]).unwrap();
    let err = EmbeddingContainer::read(&p).unwrap_err();
    assert!(matches!(err, Error::Truncated { .. }));
    assert!(err.to_string().starts_with("truncated at byte "), "{err}");
}

#[test]
fn failed_writes_leave_no_file() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("missing-dir").join("x.ogtp");
    let t = TemplateContainer::new(2, vec![]).unwrap();
    assert!(t.write(&p).is_err());
    assert!(!p.exists());
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}
