use std::collections::BTreeMap;

use maskseed::model::{
    decode, encode, load_checkpoint, load_weights, save_checkpoint, save_weights, ModelConfig, ModelParams,
};
use maskseed::rng::stream;

fn params(seed: u64) -> ModelParams<f32> {
    let mut p = ModelParams::<f32>::build(&ModelConfig::desk(), &mut stream(seed, "init", 0)).unwrap();
    for l in p.layers_mut() {
        l.weight_momentum.data_mut().iter_mut().enumerate().for_each(|(i, v)| *v = i as f32 * 1e-3);
    }
    p
}

#[test]
fn weights_round_trip_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.dmsk");
    let p = params(1);
    save_weights(&p, &path).unwrap();
    let q: ModelParams<f32> = load_weights(&path, Some(&ModelConfig::desk())).unwrap();
    assert_eq!(p, q);
    assert_eq!(std::fs::read(&path).unwrap(), encode(&q, &BTreeMap::new()).unwrap());
}

#[test]
fn checkpoint_keeps_state() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.dmsk");
    let state: BTreeMap<String, String> = [("step", "40"), ("seed", "9")]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
    save_checkpoint(&params(2), &state, &path).unwrap();
    let c = load_checkpoint::<f32>(&path, None).unwrap();
    assert_eq!(c.state, state);
    assert_eq!(c.params, params(2));
}

#[test]
fn truncated_and_corrupt_files_are_rejected() {
    let bytes = encode(&params(3), &BTreeMap::new()).unwrap();
    for cut in [0, 3, 8, 20, bytes.len() / 2, bytes.len() - 1] {
        assert!(decode::<f32>(&bytes[..cut], None).is_err(), "accepted {cut} bytes");
    }
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(decode::<f32>(&bad, None).is_err());
    let mut long = bytes;
    long.push(0);
    assert!(decode::<f32>(&long, None).is_err());
}

#[test]
fn architecture_mismatch_is_rejected() {
    let bytes = encode(&params(4), &BTreeMap::new()).unwrap();
    let mut other = ModelConfig::desk();
    other.rank = 32;
    assert!(decode::<f32>(&bytes, Some(&other)).is_err());
    assert!(decode::<f32>(&bytes, Some(&ModelConfig::desk())).is_ok());
}
