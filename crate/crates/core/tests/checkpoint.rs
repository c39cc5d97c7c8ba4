use semshield::codec::{CodecArch, CodecModel};
use semshield::data::IMAGE_PIXELS;
use semshield::diffusion::{make_schedule, DenoiserArch, DenoiserModel};
use semshield::eavesdrop::{EveArch, EveClassifier};
use semshield::harness::checkpoint::{decode, encode, FORMAT_VERSION};
use semshield::harness::{load_checkpoint, load_codec, load_denoiser, load_eve, save_checkpoint, Model};
use semshield::Error;

fn models() -> Vec<Model> {
    let codec = CodecModel::init(CodecArch::default(), &vec![0.3; IMAGE_PIXELS], 5).unwrap();
    let schedule = make_schedule(50, 1e-4, 0.05).unwrap();
    let denoiser = DenoiserModel::init(DenoiserArch::default(), schedule, 6).unwrap();
    let eve = EveClassifier::init(EveArch::default(), 7).unwrap();
    vec![Model::Codec(codec), Model::Denoiser(denoiser), Model::Eve(eve)]
}

#[test]
fn file_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    for (i, m) in models().into_iter().enumerate() {
        let path = dir.path().join(format!("m{i}.smsh"));
        save_checkpoint(&m, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(encode(&back).unwrap(), std::fs::read(&path).unwrap());
    }
}

#[test]
fn typed_loaders_reject_other_kinds() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("eve.smsh");
    let [_, _, eve] = <[Model; 3]>::try_from(models()).unwrap();
    save_checkpoint(&eve, &path).unwrap();
    assert!(load_eve(&path).is_ok());
    for err in [load_codec(&path).unwrap_err(), load_denoiser(&path).unwrap_err()] {
        assert!(matches!(err.root(), Error::KindMismatch { found, .. } if found == "eve"), "{err}");
        assert!(err.to_string().contains("eve.smsh"));
    }
}

#[test]
fn missing_file_names_the_path() {
    let err = load_codec(std::path::Path::new("/nonexistent/codec.smsh")).unwrap_err();
    assert!(matches!(err.root(), Error::MissingArtifact(p) if p.ends_with("codec.smsh")));
}

#[test]
fn truncation_and_bit_flips_are_detected() {
    let bytes = encode(&models()[2]).unwrap();
    for cut in [0, 3, 10, 47, bytes.len() / 2, bytes.len() - 1] {
        assert!(decode(&bytes[..cut]).is_err(), "truncated at {cut}");
    }
    let mut flipped = bytes.clone();
    let mid = flipped.len() / 2;
    flipped[mid] ^= 0x10;
    assert!(matches!(decode(&flipped), Err(Error::Checksum)));
    let mut bad_magic = bytes;
    bad_magic[0] = b'X';
    assert!(matches!(decode(&bad_magic), Err(Error::Checkpoint(_))));
}

#[test]
fn other_versions_are_refused() {
    let mut bytes = encode(&models()[0]).unwrap();
    bytes[4..8].copy_from_slice(&(FORMAT_VERSION + 1).to_le_bytes());
    match decode(&bytes) {
        Err(Error::VersionMismatch { expected, found }) => {
            assert_eq!((expected, found), (FORMAT_VERSION, FORMAT_VERSION + 1));
        }
        other => panic!("expected a version mismatch, got {other:?}"),
    }
}
