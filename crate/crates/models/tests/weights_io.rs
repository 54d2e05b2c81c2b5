use ribforge_core::{Init, Tape, Tensor};
use ribforge_models::*;

#[test]
fn save_load_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = MTUNet::<f32>::new(MTUNetConfig::desk(), 3);
    let tape = Tape::new();
    m.forward_tensor(&tape, &Tensor::create(&[2, 1, 32, 32], Init::Normal { mean: 0.0, std: 1.0, seed: 1 }).unwrap(), true)
        .unwrap();
    let path = dir.path().join("m.sdgw");
    save_store(&m.store, &path).unwrap();
    let mut fresh = MTUNet::<f32>::new(MTUNetConfig::desk(), 99);
    load_store(&mut fresh.store, &path).unwrap();
    assert_eq!(fresh.store.digest(), m.store.digest());
    let again = dir.path().join("again.sdgw");
    save_store(&fresh.store, &again).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn mismatched_architecture_names_first_difference() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.sdgw");
    save_store(&GuidanceUNet::<f32>::new(GuidanceUNetConfig::desk(), 1).store, &path).unwrap();
    let mut full = GuidanceUNet::<f32>::new(GuidanceUNetConfig { base_channels: 16, ..GuidanceUNetConfig::desk() }, 1);
    let digest = full.store.digest();
    match load_store(&mut full.store, &path) {
        Err(WeightsError::Mismatch { name, detail }) => {
            assert_eq!(name, "down0.0.conv.weight");
            assert!(detail.contains("shape"), "{detail}");
        }
        other => panic!("expected mismatch, got {other:?}"),
    }
    assert_eq!(full.store.digest(), digest, "partial load");
}

#[test]
fn truncated_file_is_rejected_without_partial_load() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.sdgw");
    save_store(&Discriminator::<f32>::new(DiscriminatorConfig::desk(), 1).store, &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 1]).unwrap();
    let mut d = Discriminator::<f32>::new(DiscriminatorConfig::desk(), 2);
    let digest = d.store.digest();
    assert!(matches!(load_store(&mut d.store, &path), Err(WeightsError::Checksum { .. })));
    assert_eq!(d.store.digest(), digest);
    assert!(matches!(load_weights(&dir.path().join("missing")), Err(WeightsError::Io { .. })));
}
