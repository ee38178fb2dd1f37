use nalgebra::DMatrix;

use s2vr::format::{deserialize, serialize, MAGIC, VERSION};
use s2vr::model::{fit_model, ModelConfig};
use s2vr::synth::{self, BenchmarkConfig};
use s2vr::{Error, Mode, S2vrModel, TrainConfig};

fn fitted(epsilon: f64) -> (S2vrModel, DMatrix<f64>) {
    let cfg = BenchmarkConfig {
        samples: 25,
        outputs: 4,
        ..BenchmarkConfig::default()
    };
    let b = synth::correlated(11, &cfg).unwrap();
    let mcfg = ModelConfig {
        train: TrainConfig {
            epsilon,
            ..TrainConfig::default()
        },
        bandwidths: vec![0.2, 0.5, 0.9],
        ..ModelConfig::default()
    };
    let mut model = fit_model(&b.x, &b.y, &mcfg, Mode::Joint).unwrap();
    model.pipeline_hash = [7; 32];
    (model, b.x)
}

fn bits(m: &DMatrix<f64>) -> Vec<u64> {
    m.iter().map(|v| v.to_bits()).collect()
}

#[test]
fn round_trip_gives_bit_identical_predictions() {
    for eps in [0.0, 0.3] {
        let (model, x) = fitted(eps);
        let bytes = serialize(&model).unwrap();
        let back = deserialize(&bytes).unwrap();
        assert_eq!(bits(&model.predict(&x).unwrap()), bits(&back.predict(&x).unwrap()));
        assert_eq!(back.pipeline_hash, [7; 32]);
        assert_eq!(back.training_digest, model.training_digest);
        assert_eq!(back.config, model.config);
        assert_eq!(back.support_indices, model.support_indices);
        assert_eq!(serialize(&back).unwrap(), bytes);
    }
}

#[test]
fn header_layout() {
    let (model, _) = fitted(0.0);
    let bytes = serialize(&model).unwrap();
    assert_eq!(&bytes[..4], MAGIC);
    assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), VERSION);
}

#[test]
fn every_truncation_is_rejected() {
    let (model, _) = fitted(0.0);
    let bytes = serialize(&model).unwrap();
    for len in 0..bytes.len() {
        assert!(
            matches!(deserialize(&bytes[..len]), Err(Error::Format { .. })),
            "prefix of {len} bytes accepted"
        );
    }
}

#[test]
fn corruption_names_the_checksum_offset() {
    let (model, _) = fitted(0.0);
    let bytes = serialize(&model).unwrap();
    let body_end = bytes.len() - 8;
    for at in [60, bytes.len() / 2, bytes.len() - 1] {
        let mut bad = bytes.clone();
        bad[at] ^= 0x10;
        match deserialize(&bad) {
            Err(Error::Format { offset, message }) => {
                assert_eq!(offset, body_end);
                assert!(message.contains("checksum"));
            }
            other => panic!("corruption at {at} not detected: {other:?}"),
        }
    }
}

#[test]
fn version_and_magic_mismatch() {
    let (model, _) = fitted(0.0);
    let bytes = serialize(&model).unwrap();
    let mut newer = bytes.clone();
    newer[4..8].copy_from_slice(&(VERSION + 1).to_le_bytes());
    assert!(matches!(deserialize(&newer), Err(Error::Format { offset: 4, .. })));
    let mut alien = bytes;
    alien[0] = b'X';
    assert!(matches!(deserialize(&alien), Err(Error::Format { offset: 0, .. })));
}

#[test]
fn appended_bytes_are_rejected() {
    let (model, _) = fitted(0.0);
    let mut bytes = serialize(&model).unwrap();
    bytes.extend_from_slice(&[0; 8]);
    assert!(matches!(deserialize(&bytes), Err(Error::Format { .. })));
}
