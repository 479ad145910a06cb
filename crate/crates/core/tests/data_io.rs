mod common;

use std::collections::HashSet;
use std::path::PathBuf;

use common::rng;
use proptest::prelude::*;
use rand::Rng;
use unetdr::io::{
    encode_volume, generate_phantom, make_split, parse_nrrd_header, read_volume, write_volume, Encoding, Endian,
    PhantomParams, ScalarType, WriteOptions,
};
use unetdr::volume::{Volume, VolumeKind};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

// The fixture files were written by pynrrd 1.1.3 from arrays in (z, y, x)
// order; the expected values below are those arrays.

#[test]
fn third_party_shorts_fixture() {
    let v = read_volume(fixture("shorts_2x2x2.nrrd"), VolumeKind::Intensity).unwrap();
    assert_eq!(v.extents(), [2, 2, 2]);
    assert_eq!(v.data(), &[-7.0, 0.0, 12.0, 300.0, -32768.0, 32767.0, 5.0, -1.0]);
    // spacings are listed fastest axis first
    assert_eq!(v.spacing(), [2.0, 0.75, 0.5]);
}

#[cfg(feature = "gzip")]
#[test]
fn third_party_gzip_floats_with_space_directions() {
    let v = read_volume(fixture("floats_gzip.nrrd"), VolumeKind::Intensity).unwrap();
    assert_eq!(v.extents(), [3, 4, 5]);
    let expected: Vec<f64> = (0..60).map(|i| i as f64 * 0.25 - 3.0).collect();
    assert_eq!(v.data(), &expected[..]);
    assert_eq!(v.spacing(), [1.25, 0.625, 0.625]);
}

#[test]
fn third_party_detached_mask() {
    let v = read_volume(fixture("mask_detached.nhdr"), VolumeKind::Mask).unwrap();
    assert_eq!(v.data(), &[0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
}

#[test]
fn header_agrees_with_third_party_parse() {
    // pynrrd.read_header on these bytes: type short, dimension 3,
    // sizes [640 640 88], encoding raw, endian little, spacings [0.625 0.625 2.5]
    let bytes = std::fs::read(fixture("header_640x640x88.txt")).unwrap();
    let h = parse_nrrd_header(&bytes).unwrap();
    assert_eq!(h.dimension, 3);
    assert_eq!(h.sizes, vec![640, 640, 88]);
    assert_eq!(h.scalar, ScalarType::Short);
    assert_eq!(h.encoding, Encoding::Raw);
    assert_eq!(h.endian, Endian::Little);
    assert_eq!(h.extents(), [88, 640, 640]);
    assert_eq!(h.spacing(), [2.5, 0.625, 0.625]);
}

#[test]
fn header_errors() {
    let err = parse_nrrd_header(b"P5\n640 640\n").unwrap_err().to_string();
    assert!(err.to_lowercase().contains("magic"), "{err}");
    let err = parse_nrrd_header(b"NRRD0004\ndimension: 3\nsizes: 88 640\ntype: short\nencoding: raw\nendian: little\n\n")
        .unwrap_err()
        .to_string();
    assert!(err.contains("sizes"), "{err}");
    let err = parse_nrrd_header(b"NRRD0004\ndimension: 3\nsizes: 2 2 2\ntype: double\nencoding: raw\n\n")
        .unwrap_err()
        .to_string();
    assert!(err.contains("short, ushort, uchar, float"), "{err}");
    let err = parse_nrrd_header(b"NRRD0004\ndimension: 3\ntype: uchar\nencoding: raw\n\n").unwrap_err().to_string();
    assert!(err.contains("'sizes'"), "{err}");
}

#[test]
fn round_trip_every_type_and_encoding() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = rng(1);
    let mut encodings = vec![Encoding::Raw];
    if cfg!(feature = "gzip") {
        encodings.push(Encoding::Gzip);
    }
    for scalar in ScalarType::ALL {
        let data: Vec<f64> = (0..3 * 5 * 7)
            .map(|_| match scalar {
                ScalarType::Short => f64::from(r.random::<i16>()),
                ScalarType::UShort => f64::from(r.random::<u16>()),
                ScalarType::UChar => f64::from(r.random::<u8>()),
                ScalarType::Float => f64::from(r.random_range(-1e6f32..1e6)),
            })
            .collect();
        let v = Volume::new([3, 5, 7], [2.5, 0.7, 0.3], data, VolumeKind::Intensity).unwrap();
        for &encoding in &encodings {
            let path = dir.path().join(format!("{}_{encoding:?}.nrrd", scalar.token()));
            write_volume(&path, &v, WriteOptions { scalar, encoding }).unwrap();
            let back = read_volume(&path, VolumeKind::Intensity).unwrap();
            assert_eq!(back.extents(), v.extents());
            assert_eq!(back.spacing(), v.spacing());
            let same_bits = back.data().iter().zip(v.data()).all(|(a, b)| a.to_bits() == b.to_bits());
            assert!(same_bits, "{scalar:?} {encoding:?}");
        }
    }
}

#[test]
fn mask_with_value_two_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let v = Volume::new([2, 2, 2], [1.0; 3], vec![0.0, 1.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0], VolumeKind::Intensity).unwrap();
    let path = dir.path().join("m.nrrd");
    write_volume(&path, &v, WriteOptions { scalar: ScalarType::UChar, encoding: Encoding::Raw }).unwrap();
    let err = read_volume(&path, VolumeKind::Mask).unwrap_err().to_string();
    assert!(err.contains("m.nrrd"), "{err}");
}

#[test]
fn truncated_payload_reports_counts() {
    let dir = tempfile::tempdir().unwrap();
    let v = Volume::filled([2, 2, 2], 1.0, VolumeKind::Intensity).unwrap();
    let bytes = encode_volume(&v, WriteOptions { scalar: ScalarType::Short, encoding: Encoding::Raw }).unwrap();
    let path = dir.path().join("t.nrrd");
    std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
    let err = read_volume(&path, VolumeKind::Intensity).unwrap_err().to_string();
    assert!(err.contains("16") && err.contains("13"), "{err}");
}

#[test]
fn header_fuzzing_never_panics() {
    let base = std::fs::read(fixture("shorts_2x2x2.nrrd")).unwrap();
    let mut r = rng(99);
    let alphabet = b"NRD0123456789 :\n\r#=abcdefghijklmnopqrstuvwxyz.-";
    let mut accepted = 0;
    for _ in 0..10_000 {
        let mut b = base.clone();
        for _ in 0..r.random_range(1..6) {
            match r.random_range(0..5) {
                0 if !b.is_empty() => {
                    let i = r.random_range(0..b.len());
                    b[i] = r.random();
                }
                1 if !b.is_empty() => {
                    let i = r.random_range(0..b.len());
                    b[i] = alphabet[r.random_range(0..alphabet.len())];
                }
                2 => {
                    let i = r.random_range(0..=b.len());
                    b.insert(i, alphabet[r.random_range(0..alphabet.len())]);
                }
                3 if !b.is_empty() => {
                    let i = r.random_range(0..b.len());
                    b.remove(i);
                }
                _ => {
                    let i = r.random_range(0..=b.len());
                    b.truncate(i);
                }
            }
        }
        if parse_nrrd_header(&b).is_ok() {
            accepted += 1;
        }
    }
    // most mutations land in the payload or comments and leave a valid header
    assert!(accepted > 0 && accepted < 10_000);
}

#[test]
fn phantom_foreground_within_bounds_over_hundred_seeds() {
    let params = PhantomParams::default();
    let (lo, hi) = params.foreground_bounds;
    for seed in 0..100 {
        let (img, mask) = generate_phantom(seed, [16, 20, 24], &params).unwrap();
        let f = mask.foreground_fraction();
        assert!(f >= lo && f <= hi, "seed {seed}: {f}");
        assert_eq!(img.extents(), mask.extents());
    }
}

#[test]
fn phantom_is_a_function_of_its_inputs() {
    let p = PhantomParams::default();
    assert_eq!(generate_phantom(5, [16; 3], &p).unwrap(), generate_phantom(5, [16; 3], &p).unwrap());
    assert_ne!(generate_phantom(5, [16; 3], &p).unwrap().1, generate_phantom(6, [16; 3], &p).unwrap().1);
    let clean = PhantomParams {
        noise_sigma: 0.0,
        bias_amplitude: 0.0,
        ..p
    };
    let (img, _) = generate_phantom(1, [16; 3], &clean).unwrap();
    let distinct: HashSet<u64> = img.data().iter().map(|v| v.to_bits()).collect();
    assert_eq!(distinct.len(), 2);
}

#[test]
fn hundred_case_split_sizes() {
    let ids: Vec<String> = (0..100).map(|i| format!("case_{i:03}")).collect();
    let s = make_split(&ids, 0.2, 5, 3).unwrap();
    assert_eq!(s.test_ids.len(), 20);
    assert_eq!(s.folds.iter().map(Vec::len).collect::<Vec<_>>(), vec![16; 5]);
    for fold in 0..5 {
        assert_eq!(s.train_ids(fold).len(), 64);
        assert_eq!(s.validation_ids(fold).len(), 16);
    }
    assert_eq!(make_split(&ids, 0.2, 5, 3).unwrap(), s);
}

proptest! {
    #[test]
    fn split_is_a_partition(n in 3usize..120, k in 2usize..8, seed in any::<u64>(), frac in 0.0f64..0.6) {
        prop_assume!(n > k);
        let ids: Vec<String> = (0..n).map(|i| format!("c{i}")).collect();
        let s = make_split(&ids, frac, k, seed).unwrap();
        let mut all: Vec<&String> = s.test_ids.iter().chain(s.folds.iter().flatten()).collect();
        prop_assert_eq!(all.len(), n);
        all.sort();
        all.dedup();
        prop_assert_eq!(all.len(), n);
        prop_assert!(!s.test_ids.is_empty());
        prop_assert!(s.folds.iter().all(|f| !f.is_empty()));
        let sizes: Vec<usize> = s.folds.iter().map(Vec::len).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }
}
