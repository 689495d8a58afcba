use rfdae::data::{checkpoint, generate, Dataset, GenConfig, Modulation};
use rfdae::model::{DaeModel, ModelConfig};
use rfdae::numeric::{Rng, Stream};
use rfdae::Error;

fn small_set() -> Dataset {
    generate(&GenConfig {
        modulations: vec![Modulation::Psk8, Modulation::Gfsk, Modulation::Cpfsk],
        snrs_db: vec![-4, 12],
        per_class_snr: 3,
        seq_len: 24,
        seed: 17,
        pulse: Default::default(),
        impairments: Default::default(),
    })
    .unwrap()
}

fn small_model(seed: u64) -> DaeModel {
    let config = ModelConfig {
        hidden: 5,
        classifier_widths: [7, 4],
        ..ModelConfig::paper(2, 24, 3)
    };
    DaeModel::new(config, &mut Rng::new(seed).substream(Stream::Init)).unwrap()
}

#[test]
fn sigset_file_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("set.sigset");
    let ds = small_set();
    ds.write(&path).unwrap();
    let back = Dataset::read(&path).unwrap();
    assert_eq!(back.records, ds.records);
    assert_eq!(back.class_names, vec!["8PSK", "GFSK", "CPFSK"]);
    back.write(&dir.path().join("again.sigset")).unwrap();
    assert_eq!(
        std::fs::read(&path).unwrap(),
        std::fs::read(dir.path().join("again.sigset")).unwrap()
    );
}

#[test]
fn checkpoint_file_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let model = small_model(4);
    checkpoint::write(&model, &path).unwrap();
    let back = checkpoint::read(&path).unwrap();
    assert_eq!(back.config, model.config);
    // Payloads are f32: restored values are the originals rounded to f32, exactly.
    for (a, b) in back.tensors().iter().zip(model.tensors()) {
        let a: Vec<u64> = a.iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = b.iter().map(|v| f64::from(*v as f32).to_bits()).collect();
        assert_eq!(a, b);
    }
    assert_eq!(checkpoint::to_bytes(&back).unwrap(), std::fs::read(&path).unwrap());
}

#[test]
fn every_single_byte_corruption_of_a_sigset_is_rejected() {
    let bytes = small_set().to_bytes().unwrap();
    for i in 0..bytes.len() {
        let mut bad = bytes.clone();
        bad[i] ^= 0x80;
        assert!(Dataset::from_bytes(&bad).is_err(), "flip at byte {i} accepted");
    }
}

#[test]
fn every_single_byte_corruption_of_a_checkpoint_is_rejected() {
    let bytes = checkpoint::to_bytes(&small_model(8)).unwrap();
    for i in 0..bytes.len() {
        for mask in [0x01u8, 0xff] {
            let mut bad = bytes.clone();
            bad[i] ^= mask;
            assert!(checkpoint::from_bytes(&bad).is_err(), "flip {mask:#x} at byte {i} accepted");
        }
    }
}

#[test]
fn payload_corruption_reports_the_crc_mismatch() {
    let bytes = checkpoint::to_bytes(&small_model(8)).unwrap();
    let mut bad = bytes.clone();
    bad[bytes.len() - 20] ^= 0x10;
    assert!(matches!(checkpoint::from_bytes(&bad), Err(Error::Integrity { .. })));

    let data = small_set().to_bytes().unwrap();
    let mut bad = data.clone();
    bad[data.len() / 2] ^= 0x10;
    assert!(matches!(Dataset::from_bytes(&bad), Err(Error::Integrity { .. })));
}

#[test]
fn truncation_and_trailing_bytes_are_distinct_errors() {
    let bytes = checkpoint::to_bytes(&small_model(2)).unwrap();
    assert!(matches!(
        checkpoint::from_bytes(&bytes[..bytes.len() - 1]),
        Err(Error::Truncated { .. })
    ));
    let mut long = bytes.clone();
    long.push(0);
    assert!(matches!(checkpoint::from_bytes(&long), Err(Error::Layout(_))));

    let data = small_set().to_bytes().unwrap();
    assert!(matches!(Dataset::from_bytes(&data[..10]), Err(Error::Truncated { .. })));
    assert!(matches!(Dataset::from_bytes(&bytes), Err(Error::BadMagic { .. })));
    assert!(matches!(checkpoint::from_bytes(&data), Err(Error::BadMagic { .. })));
}

#[test]
fn failed_write_leaves_no_partial_file() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("missing-dir").join("m.ckpt");
    assert!(checkpoint::write(&small_model(1), &target).is_err());
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}
