use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use svdtrain::compression::prune_model;
use svdtrain::{DecompositionScheme, Model, Tensor};
use svdtrain_cli::checkpoint::{
    decode, encode, load_checkpoint, parse_manifest, save_checkpoint, BLOB_FILE, FORMAT_VERSION, MANIFEST_FILE,
};
use svdtrain_cli::CheckpointError;

fn pruned_model(scheme: DecompositionScheme) -> Model {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let model = Model::cnn_s(&[2, 6, 6], 4, &mut rng).unwrap().decompose(scheme).unwrap();
    prune_model(&model, 0.3).unwrap().0
}

fn saved(dir: &Path) -> Model {
    let model = pruned_model(DecompositionScheme::SpatialWise);
    save_checkpoint(&model, dir).unwrap();
    model
}

#[test]
fn round_trip_is_bit_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let inputs = Tensor::randn(&[5, 2, 6, 6], 1.0, &mut rng);
    for scheme in [DecompositionScheme::ChannelWise, DecompositionScheme::SpatialWise] {
        let dir = tempfile::tempdir().unwrap();
        let model = pruned_model(scheme);
        save_checkpoint(&model, dir.path()).unwrap();
        let back = load_checkpoint(dir.path()).unwrap();
        assert_eq!(back, model);
        let bits = |t: &Tensor| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back.predict(&inputs).unwrap()), bits(&model.predict(&inputs).unwrap()));
        let (m1, b1) = encode(&model);
        let (m2, b2) = encode(&back);
        assert_eq!((m1, b1), (m2, b2));
    }
    let dense = Model::mlp_s(&[7], 3, &mut rng);
    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(&dense, dir.path()).unwrap();
    assert_eq!(load_checkpoint(dir.path()).unwrap(), dense);
}

#[test]
fn truncated_blob_is_a_length_error() {
    let dir = tempfile::tempdir().unwrap();
    saved(dir.path());
    let blob = dir.path().join(BLOB_FILE);
    let bytes = fs::read(&blob).unwrap();
    fs::write(&blob, &bytes[..bytes.len() - 8]).unwrap();
    match load_checkpoint(dir.path()) {
        Err(CheckpointError::BlobLength { expected, found }) => assert_eq!(expected, found + 8),
        other => panic!("expected a blob length error, got {other:?}"),
    }
}

#[test]
fn bumped_version_names_both_versions() {
    let dir = tempfile::tempdir().unwrap();
    saved(dir.path());
    let path = dir.path().join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).unwrap();
    let bumped = text.replace(
        &format!("format_version = {FORMAT_VERSION}"),
        &format!("format_version = {}", FORMAT_VERSION + 1),
    );
    assert_ne!(bumped, text);
    fs::write(&path, bumped).unwrap();
    let err = load_checkpoint(dir.path()).unwrap_err();
    assert!(matches!(err, CheckpointError::Version { found: 2, supported: 1 }));
    let msg = err.to_string();
    assert!(msg.contains('2') && msg.contains('1'), "{msg}");
}

#[test]
fn corrupt_manifests_are_manifest_errors() {
    let dir = tempfile::tempdir().unwrap();
    let model = saved(dir.path());
    let path = dir.path().join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).unwrap();
    for garbage in ["\u{0}\u{1}not toml [[[", "format_version = 1\nname = 3", ""] {
        assert!(matches!(parse_manifest(garbage), Err(CheckpointError::Manifest(_))), "{garbage:?}");
    }
    let (mut manifest, blob) = encode(&model);
    manifest.blocks.swap(0, 2);
    assert!(matches!(decode(&manifest, &blob), Err(CheckpointError::Manifest(_))));
    let renamed = text.replacen("role = \"u\"", "role = \"w\"", 1);
    assert!(matches!(decode(&parse_manifest(&renamed).unwrap(), &blob), Err(CheckpointError::Manifest(_))));
    fs::write(&path, "format_version = 1\nblob = [").unwrap();
    assert!(matches!(load_checkpoint(dir.path()), Err(CheckpointError::Manifest(_))));
}

#[test]
fn missing_files_are_io_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_checkpoint(dir.path()), Err(CheckpointError::Io(_))));
    saved(dir.path());
    fs::remove_file(dir.path().join(BLOB_FILE)).unwrap();
    assert!(matches!(load_checkpoint(dir.path()), Err(CheckpointError::Io(_))));
}
