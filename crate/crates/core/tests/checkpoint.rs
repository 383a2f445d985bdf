use qosdiff_core::checkpoint::{load, read_checkpoint, restore_into, save, write_checkpoint};
use qosdiff_core::data::synthetic::{low_rank, SyntheticSpec};
use qosdiff_core::{AaimConfig, Error, ParamStore, QoSDiff, QosPredictor, Tensor};

fn small_config() -> AaimConfig {
    AaimConfig {
        dim: 8,
        heads: 2,
        hidden: 6,
        ff: 5,
        out: 4,
        disc_hidden: 3,
        ..AaimConfig::default()
    }
}

fn store() -> ParamStore {
    let mut s = ParamStore::new();
    s.add("w", Tensor::from_rows(&[vec![1.5, -2.0], vec![f64::MIN_POSITIVE, 1e300]]).unwrap());
    s.add_buffer("bn.mean", Tensor::row(vec![0.25, -0.0, 3.0]));
    s.add("empty", Tensor::zeros(0, 4));
    s
}

#[test]
fn round_trip_is_bit_exact() {
    let original = store();
    let mut bytes = Vec::new();
    write_checkpoint(&original, &mut bytes).unwrap();
    let entries = read_checkpoint(bytes.as_slice()).unwrap();
    let names: Vec<&str> = entries.iter().map(|e| e.0.as_str()).collect();
    assert_eq!(names, ["w", "bn.mean", "empty"]);
    for ((name, t), (_, p)) in entries.iter().zip(original.iter()) {
        assert_eq!(*name, p.name);
        assert_eq!(t.shape(), p.value.shape());
        let a: Vec<u64> = t.data().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = p.value.data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
    }
}

#[test]
fn model_reload_reproduces_predictions() {
    let ds = low_rank(&SyntheticSpec::default()).unwrap().normalize();
    let trained = QoSDiff::new(&ds, &small_config(), 1).unwrap();
    let mut fresh = QoSDiff::new(&ds, &small_config(), 2).unwrap();
    let pairs: Vec<(usize, usize)> = (0..10).map(|k| (k, 3 * k)).collect();
    assert_ne!(trained.predict(&pairs).unwrap(), fresh.predict(&pairs).unwrap());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    save(&trained.store, &path).unwrap();
    load(&mut fresh.store, &path).unwrap();
    assert_eq!(trained.predict(&pairs).unwrap(), fresh.predict(&pairs).unwrap());
}

#[test]
fn restore_rejects_missing_and_misshapen_entries() {
    let mut target = store();
    let mut bytes = Vec::new();
    let mut partial = ParamStore::new();
    partial.add("w", Tensor::zeros(2, 2));
    write_checkpoint(&partial, &mut bytes).unwrap();
    let entries = read_checkpoint(bytes.as_slice()).unwrap();
    assert!(matches!(restore_into(&mut target, &entries), Err(Error::Checkpoint(m)) if m.contains("bn.mean")));

    let mut wrong = ParamStore::new();
    wrong.add("w", Tensor::zeros(3, 2));
    wrong.add_buffer("bn.mean", Tensor::zeros(1, 3));
    wrong.add("empty", Tensor::zeros(0, 4));
    let mut bytes = Vec::new();
    write_checkpoint(&wrong, &mut bytes).unwrap();
    assert!(restore_into(&mut target, &read_checkpoint(bytes.as_slice()).unwrap()).is_err());
}

#[test]
fn malformed_input_is_rejected() {
    let mut bytes = Vec::new();
    write_checkpoint(&store(), &mut bytes).unwrap();
    assert!(read_checkpoint(&bytes[..bytes.len() - 3]).is_err());
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(read_checkpoint(extra.as_slice()).is_err());
    assert!(read_checkpoint(&b"not a checkpoint\n"[..]).is_err());
    assert!(read_checkpoint(&b"qosdiff-checkpoint v1\nw,2\nEND\n"[..]).is_err());
    assert!(read_checkpoint(&b"qosdiff-checkpoint v1\nw,1,1\n"[..]).is_err());

    let mut bad = ParamStore::new();
    bad.add("a,b", Tensor::zeros(1, 1));
    assert!(write_checkpoint(&bad, Vec::new()).is_err());
}
