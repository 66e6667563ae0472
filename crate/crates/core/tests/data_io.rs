//! Raster container, splits and the synthetic scene.

mod common;

use common::*;
use proptest::prelude::*;
use rand::Rng;
use sfnet::data::{
    decode_raster, encode_raster, read_raster, stratified_split, synth_generate, write_raster, RasterPair, SynthSpec,
};
use sfnet::{Error, Tensor};

fn random_raster(seed: u64, bands: usize, h: usize, w: usize, classes: usize) -> RasterPair {
    let mut r = rng(seed);
    let hsi: Vec<f32> = (0..bands * h * w).map(|_| r.gen::<f32>() * 4.0 - 2.0).collect();
    let aux: Vec<f32> = (0..2 * h * w).map(|_| r.gen()).collect();
    let labels: Vec<u16> = (0..h * w).map(|_| r.gen_range(0..=classes as u16)).collect();
    let names = (1..=classes).map(|c| format!("c{c}")).collect();
    RasterPair::new(
        Tensor::new([bands, h, w], hsi).unwrap(),
        Tensor::new([2, h, w], aux).unwrap(),
        labels,
        names,
    )
    .unwrap()
}

#[test]
fn random_fixture_round_trips_bitwise() {
    let raster = random_raster(1, 4, 8, 6, 3);
    let bytes = encode_raster(&raster).unwrap();
    let back = decode_raster(&bytes).unwrap();
    assert!(back.hsi().bit_eq(raster.hsi()));
    assert!(back.aux().bit_eq(raster.aux()));
    assert_eq!(back.labels(), raster.labels());
    assert_eq!(back.class_names(), raster.class_names());
}

#[test]
fn file_rewrite_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.sfnr");
    let b = dir.path().join("b.sfnr");
    write_raster(&a, &random_raster(2, 3, 5, 7, 4)).unwrap();
    write_raster(&b, &read_raster(&a).unwrap()).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert!(matches!(read_raster(dir.path().join("missing")), Err(Error::Io(_))));
}

#[test]
fn malformed_headers_give_distinct_errors() {
    let bytes = encode_raster(&random_raster(3, 2, 3, 3, 2)).unwrap();
    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(matches!(decode_raster(&magic), Err(Error::BadMagic { .. })));
    assert!(matches!(decode_raster(&bytes[..20]), Err(Error::Truncated { .. })));
    let mut huge = bytes.clone();
    for b in &mut huge[5..13] {
        *b = 0xff;
    }
    assert!(matches!(decode_raster(&huge), Err(Error::ExtentOverflow(_))));
    let mut version = bytes.clone();
    version[4] = 9;
    assert!(matches!(decode_raster(&version), Err(Error::UnsupportedVersion(9))));
    let mut extra = bytes;
    extra.push(0);
    assert!(matches!(decode_raster(&extra), Err(Error::TrailingBytes(1))));
}

#[test]
fn synth_is_deterministic_and_seed_sensitive() {
    let spec = SynthSpec::default();
    let a = encode_raster(&synth_generate(&spec).unwrap()).unwrap();
    let b = encode_raster(&synth_generate(&spec).unwrap()).unwrap();
    assert_eq!(a, b);
    let c = encode_raster(&synth_generate(&SynthSpec { seed: 8, ..spec }).unwrap()).unwrap();
    assert_ne!(a, c);
}

#[test]
fn every_class_covers_a_default_patch() {
    let raster = synth_generate(&SynthSpec::default()).unwrap();
    for c in 1..=6u16 {
        let n = raster.labels().iter().filter(|&&l| l == c).count();
        assert!(n >= 11 * 11, "class {c} has {n} pixels");
    }
}

#[test]
fn synth_rejects_impossible_packing() {
    let spec = SynthSpec {
        n_classes: 40,
        height: 6,
        width: 6,
        ..SynthSpec::default()
    };
    assert!(matches!(synth_generate(&spec), Err(Error::Config(_))));
    assert!(synth_generate(&SynthSpec { n_classes: 1, ..SynthSpec::default() }).is_err());
}

#[test]
fn fixture_needs_both_sources() {
    let raster = synth_generate(&SynthSpec::default()).unwrap();
    let split = stratified_split(raster.labels(), raster.n_classes(), 0.1, 7).unwrap();
    let both = centroid_accuracy(&raster, &split.train, &split.test, Sources::Both);
    let hsi = centroid_accuracy(&raster, &split.train, &split.test, Sources::Hsi);
    let aux = centroid_accuracy(&raster, &split.train, &split.test, Sources::Aux);
    assert!(both >= 0.95, "both {both}");
    assert!(hsi < 0.8, "hsi {hsi}");
    assert!(aux < 0.8, "aux {aux}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn split_is_disjoint_cover(seed in 0u64..1_000_000, fraction in 0.01f64..=0.9) {
        let mut r = rng(seed);
        let classes = r.gen_range(1..5usize);
        let mut labels: Vec<u16> = (0..r.gen_range(10..120)).map(|_| r.gen_range(0..=classes as u16)).collect();
        // every class needs two pixels
        for c in 1..=classes as u16 {
            labels.push(c);
            labels.push(c);
        }
        let s = stratified_split(&labels, classes, fraction, seed).unwrap();
        let mut all: Vec<usize> = s.train.iter().chain(&s.test).copied().collect();
        all.sort_unstable();
        let labeled: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] > 0).collect();
        prop_assert_eq!(all, labeled);
        for c in 1..=classes as u16 {
            let n = labels.iter().filter(|&&l| l == c).count();
            let t = s.train.iter().filter(|&&i| labels[i] == c).count();
            prop_assert_eq!(t, ((fraction * n as f64).round() as usize).max(1));
        }
        let again = stratified_split(&labels, classes, fraction, seed).unwrap();
        prop_assert_eq!(again, s);
    }

    #[test]
    fn rasters_round_trip(seed in 0u64..1_000_000, bands in 1usize..5, h in 1usize..6, w in 1usize..6) {
        let raster = random_raster(seed, bands, h, w, 2);
        let bytes = encode_raster(&raster).unwrap();
        prop_assert_eq!(encode_raster(&decode_raster(&bytes).unwrap()).unwrap(), bytes);
    }
}
