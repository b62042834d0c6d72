//! End-to-end checks of the on-disk containers: full golden byte images
//! for small fixed inputs, file round trips through temp directories, and
//! rejection of damaged data. These pins are the compatibility contract;
//! a change that breaks them breaks every serialized artifact.

use gsqt::autograd::checkpoint::{layer_from_bytes, layer_to_bytes, load_layer, save_layer};
use gsqt::autograd::{LoraLinear, QuantConfig};
use gsqt::formats::gse::GseSpec;
use gsqt::io::{
    gse_from_bytes, gse_to_bytes, mat_from_bytes, mat_to_bytes, read_gse_file, read_mat_file,
    write_gse_file, write_mat_file, Dtype,
};
use gsqt::kernels::{quantize_matrix, GroupAxis};
use gsqt::Mat;

#[test]
fn mat_container_golden_bytes() {
    let m = Mat::from_vec(1, 2, vec![1.0, -2.0]).unwrap();
    let bytes = mat_to_bytes(&m, Dtype::F64);
    let mut want = Vec::new();
    want.extend_from_slice(b"GSQT");
    want.push(1); // version
    want.push(1); // f64
    want.push(2); // rank
    want.extend_from_slice(&1u64.to_le_bytes());
    want.extend_from_slice(&2u64.to_le_bytes());
    want.extend_from_slice(&1.0f64.to_le_bytes());
    want.extend_from_slice(&(-2.0f64).to_le_bytes());
    assert_eq!(bytes, want);
    let back = mat_from_bytes(&bytes).unwrap();
    assert_eq!(back.data(), m.data());
}

#[test]
fn gse_container_golden_bytes() {
    // One group of four values under a 6-bit element (sign + 5 magnitude
    // bits). Group [8, -4, 2, 1] with max 8 = 2^3 takes shift
    // 3 - 4 = -1, so mantissas are [16, -8, 4, 2].
    let spec = GseSpec::new(6, 4).unwrap();
    let m = Mat::from_vec(1, 4, vec![8.0, -4.0, 2.0, 1.0]).unwrap();
    let t = quantize_matrix(&m, GroupAxis::Rows, spec).unwrap();
    let bytes = gse_to_bytes(&t).unwrap();

    let mut want = Vec::new();
    want.extend_from_slice(b"GSEB");
    want.push(1); // version
    want.push(6); // element bits
    want.push(15); // exponent bias
    want.push(0); // row-grouped
    want.extend_from_slice(&4u32.to_le_bytes()); // group size
    want.extend_from_slice(&1u64.to_le_bytes()); // rows
    want.extend_from_slice(&4u64.to_le_bytes()); // cols
    want.extend_from_slice(&0u64.to_le_bytes()); // pad
    // Packed group, LSB first: exponent field -1 + 15 = 14, then sign bit
    // plus 5 magnitude bits per element for mantissas 16, -8, 4, 2.
    // Walking the bit positions by hand gives bytes 0x0E 0x8C 0x10 0x02.
    want.extend_from_slice(&[0x0E, 0x8C, 0x10, 0x02]);
    assert_eq!(bytes, want);

    let back = gse_from_bytes(&bytes).unwrap();
    assert_eq!(back.groups(), t.groups());
    assert_eq!(back.dequantize().data(), m.data());
}

#[test]
fn mat_file_round_trip_both_dtypes() {
    let dir = tempfile::tempdir().unwrap();
    let m = Mat::from_vec(2, 3, vec![0.5, -1.25, 3.0, 0.0, 2.5, -0.75]).unwrap();
    for (name, dtype) in [("m32.gsqt", Dtype::F32), ("m64.gsqt", Dtype::F64)] {
        let path = dir.path().join(name);
        write_mat_file(&path, &m, dtype).unwrap();
        let back = read_mat_file(&path).unwrap();
        // These values are exact in f32, so both widths round-trip.
        assert_eq!(back.data(), m.data());
    }
}

#[test]
fn gse_file_round_trip_with_ragged_tail() {
    let dir = tempfile::tempdir().unwrap();
    let spec = GseSpec::new(7, 8).unwrap();
    // 5 columns with group 8 leaves a 3-element pad in every row group.
    let m = Mat::from_vec(2, 5, (0..10).map(|i| i as f64 - 4.5).collect()).unwrap();
    let t = quantize_matrix(&m, GroupAxis::Rows, spec).unwrap();
    let path = dir.path().join("tensor.gseb");
    write_gse_file(&path, &t).unwrap();
    let back = read_gse_file(&path).unwrap();
    assert_eq!(back.rows(), 2);
    assert_eq!(back.cols(), 5);
    assert_eq!(back.pad_len(), 3);
    assert_eq!(back.groups(), t.groups());
}

#[test]
fn every_truncation_is_rejected() {
    let m = Mat::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let bytes = mat_to_bytes(&m, Dtype::F32);
    for cut in 0..bytes.len() {
        assert!(
            mat_from_bytes(&bytes[..cut]).is_err(),
            "truncation to {cut} bytes was accepted"
        );
    }

    let spec = GseSpec::new(8, 4).unwrap();
    let t = quantize_matrix(&m, GroupAxis::Rows, spec).unwrap();
    let gse = gse_to_bytes(&t).unwrap();
    for cut in 0..gse.len() {
        assert!(
            gse_from_bytes(&gse[..cut]).is_err(),
            "truncation to {cut} bytes was accepted"
        );
    }
}

#[test]
fn trailing_garbage_is_rejected() {
    let m = Mat::from_vec(1, 1, vec![7.0]).unwrap();
    let mut bytes = mat_to_bytes(&m, Dtype::F64);
    bytes.push(0);
    assert!(mat_from_bytes(&bytes).is_err());

    let spec = GseSpec::new(8, 4).unwrap();
    let t = quantize_matrix(&Mat::from_vec(1, 4, vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
        GroupAxis::Rows, spec).unwrap();
    let mut gse = gse_to_bytes(&t).unwrap();
    gse.push(0);
    assert!(gse_from_bytes(&gse).is_err());
}

#[test]
fn wrong_magic_is_rejected_with_offset_zero() {
    let m = Mat::from_vec(1, 1, vec![7.0]).unwrap();
    let mut bytes = mat_to_bytes(&m, Dtype::F64);
    bytes[0] = b'X';
    let err = mat_from_bytes(&bytes).unwrap_err();
    match err {
        gsqt::Error::Parse { offset, .. } => assert_eq!(offset, 0),
        other => panic!("expected parse error, got {other}"),
    }
}

fn sample_layer() -> LoraLinear {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    let config = QuantConfig::new(6, 7, 8, 3).unwrap();
    let w = Mat::gaussian(5, 4, 0.5, &mut rng);
    let mut layer = LoraLinear::new("proj", &w, 2.0, config).unwrap();
    let a = Mat::gaussian(3, 4, 0.1, &mut rng);
    let b = Mat::gaussian(5, 3, 0.1, &mut rng);
    layer.set_adapters(a, b).unwrap();
    layer
}

#[test]
fn layer_checkpoint_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let layer = sample_layer();
    let path = dir.path().join("proj.gsql");
    save_layer(&path, &layer).unwrap();
    let back = load_layer(&path).unwrap();

    assert_eq!(back.name(), "proj");
    assert_eq!(back.config(), layer.config());
    assert_eq!(back.scale(), layer.scale());
    // The frozen base is stored as its packed payload, so it reloads
    // bit-exactly.
    assert_eq!(
        back.base_dequantized().data(),
        layer.base_dequantized().data()
    );
    // Adapters are stored as f32.
    let rounded: Vec<f64> = layer.a().data().iter().map(|v| *v as f32 as f64).collect();
    assert_eq!(back.a().data(), &rounded[..]);
}

#[test]
fn layer_checkpoint_bytes_are_stable() {
    let layer = sample_layer();
    let a = layer_to_bytes(&layer);
    let b = layer_to_bytes(&layer);
    assert_eq!(a, b);
    assert_eq!(&a[..4], b"GSQL");

    // Any single-byte truncation fails to parse.
    assert!(layer_from_bytes(&a[..a.len() - 1]).is_err());
    // Flipping the stored rank breaks the shape bookkeeping.
    let mut bad = a.clone();
    let rank_offset = 4 + 1 + 4 + "proj".len() + 8 + 8;
    bad[rank_offset] = 99;
    assert!(layer_from_bytes(&bad).is_err());
}

#[test]
fn inference_survives_a_save_load_cycle() {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let dir = tempfile::tempdir().unwrap();
    let layer = sample_layer();
    let x = Mat::gaussian(6, 4, 1.0, &mut rng);
    let before = layer.infer(&x).unwrap();

    let path = dir.path().join("proj.gsql");
    save_layer(&path, &layer).unwrap();
    let back = load_layer(&path).unwrap();
    let after = back.infer(&x).unwrap();

    // Base weights reload exactly; adapters lose only f64 -> f32. At
    // these magnitudes the outputs agree to f32 precision.
    for (p, q) in before.data().iter().zip(after.data()) {
        assert!((p - q).abs() <= 1e-6 * p.abs().max(1.0), "{p} vs {q}");
    }
}
