use ogctl::data_io::{generate_synthetic, Checkpoint, OcclusionProfile, SynthSpec};
use ogctl::trainer::{resume, train, Trainer};
use ogctl::{Error, HeadKind, TrainConfig};

fn small_spec(ids: usize, per_id: usize, seed: u64) -> SynthSpec {
    SynthSpec {
        patch_dims: vec![32; 8],
        ..SynthSpec::new(ids, per_id, 0.05, seed)
    }
}

fn config(epochs: u32) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 32,
        template_dim: 32,
        hidden: 16,
        seed: 3,
        ..Default::default()
    }
}

#[test]
fn separable_set_is_fit_exactly() {
    let data = generate_synthetic(&SynthSpec::new(4, 32, 0.05, 1)).unwrap();
    let (_, report) = train(&data, TrainConfig { batch_size: 32, ..Default::default() }).unwrap();
    assert_eq!(report.epochs.len(), 30);
    assert_eq!(report.final_accuracy(), Some(1.0));
    let first = report.epochs[0].mean_loss;
    let last = report.epochs[29].mean_loss;
    assert!(last < first, "loss {first} -> {last}");
}

#[test]
fn resumed_run_equals_uninterrupted_run() {
    let data = generate_synthetic(&small_spec(5, 12, 2)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.ogck");

    let (straight, full) = train(&data, config(30)).unwrap();

    let (partial, head_report) = train(&data, config(10)).unwrap();
    assert_eq!(partial.epochs_done, 10);
    partial.write(&path).unwrap();
    let loaded = Checkpoint::read(&path).unwrap();
    assert_eq!(loaded, partial);
    let (resumed, tail_report) = resume(loaded, &data, config(30)).unwrap();

    assert_eq!(resumed.epochs_done, 30);
    assert_eq!(resumed.head, straight.head);
    assert_eq!(resumed.classifier, straight.classifier);
    assert_eq!(resumed.adam, straight.adam);
    assert_eq!(resumed.rng, straight.rng);
    assert_eq!(resumed.to_bytes().unwrap(), straight.to_bytes().unwrap());
    let stitched: Vec<_> = head_report.epochs.iter().chain(&tail_report.epochs).collect();
    assert_eq!(stitched.len(), 30);
    assert!(stitched.iter().zip(&full.epochs).all(|(a, b)| a.same_outcome(b)));
}

#[test]
fn resume_refuses_structural_changes() {
    let data = generate_synthetic(&small_spec(3, 6, 4)).unwrap();
    let (ck, _) = train(&data, config(1)).unwrap();
    let err = resume(ck.clone(), &data, TrainConfig { template_dim: 64, ..config(3) }).unwrap_err();
    assert!(matches!(err, Error::Incompatible(ref m) if m.contains("dim")), "{err}");
    let err = resume(ck.clone(), &data, TrainConfig { head: HeadKind::A4, ..config(3) }).unwrap_err();
    assert!(matches!(err, Error::Incompatible(_)));
    let other = generate_synthetic(&SynthSpec { patch_dims: vec![16; 8], ..small_spec(3, 6, 4) }).unwrap();
    assert!(resume(ck, &other, config(3)).is_err());
}

#[test]
fn corrupt_checkpoint_is_not_loaded() {
    let data = generate_synthetic(&small_spec(3, 6, 5)).unwrap();
    let (ck, _) = train(&data, config(1)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.ogck");
    let mut bytes = ck.to_bytes().unwrap();
    bytes[..4].copy_from_slice(b"OGEB");
    std::fs::write(&path, &bytes).unwrap();
    let err = Checkpoint::read(&path).unwrap_err();
    assert!(matches!(err, Error::BadMagic { found, .. } if &found == b"OGEB"), "{err}");
    assert!(Checkpoint::read(&dir.path().join("missing.ogck")).is_err());
}

#[test]
fn always_occluded_branch_keeps_its_initial_projection() {
    // patch 5 is hidden in every record
    let mut mask = vec![true; 8];
    mask[5] = false;
    let spec = SynthSpec {
        profiles: vec![
            OcclusionProfile { name: "a".into(), visible: mask.clone() },
            OcclusionProfile { name: "b".into(), visible: [true, true, true, false, false, false, false, false].to_vec() },
        ],
        ..small_spec(4, 8, 6)
    };
    let data = generate_synthetic(&spec).unwrap();
    let init = Trainer::new(&data, config(5)).unwrap().state().head.clone();
    let (done, _) = train(&data, config(5)).unwrap();
    let names = done.head.block_names();
    for ((name, before), after) in names.iter().zip(init.blocks()).zip(done.head.blocks()) {
        let unchanged = before.iter().zip(after).all(|(a, b)| a.to_bits() == b.to_bits());
        let projection = name.starts_with("patch5.") && !name.ends_with("gamma") && !name.ends_with("beta");
        if projection {
            assert!(unchanged, "{name} moved");
        } else if name.starts_with("patch0.") {
            assert!(!unchanged, "{name} never trained");
        }
    }
}

#[test]
fn invalid_training_requests_are_rejected() {
    let data = generate_synthetic(&small_spec(3, 4, 7)).unwrap();
    assert!(train(&data, TrainConfig { epochs: 0, ..config(1) }).is_err());
    assert!(train(&data, TrainConfig { batch_size: 1, ..config(1) }).is_err());
    assert!(train(&data, TrainConfig { head: HeadKind::OgctlPlus, ..config(1) }).is_err());
}
