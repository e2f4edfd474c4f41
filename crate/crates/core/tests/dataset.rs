mod common;

use std::collections::BTreeSet;
use std::fs;

use nailguard::dataset::{
    category_distribution, ingest, partition_sizes, split, DatasetManifest, ManifestEntry, Partition, SplitAssignment,
};
use nailguard::{Error, LabelTaxonomy, CATEGORY_NAMES};
use proptest::prelude::*;

fn manifest_with_sizes(sizes: &[usize]) -> DatasetManifest {
    let mut entries = Vec::new();
    for (c, &n) in sizes.iter().enumerate() {
        for i in 0..n {
            let id = format!("{}/{i}.png", CATEGORY_NAMES[c]);
            entries.push(ManifestEntry { id: id.clone(), path: id, category: c, checksum: format!("{c}-{i}") });
        }
    }
    let total = entries.len();
    DatasetManifest { taxonomy: LabelTaxonomy::nail(), entries, total, source_root: Default::default() }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn split_is_a_stratified_partition(sizes in prop::collection::vec(3usize..500, 6), seed in any::<u64>()) {
        let m = manifest_with_sizes(&sizes);
        let s = split(&m, seed).unwrap();
        let ids: BTreeSet<&str> = m.entries.iter().map(|e| e.id.as_str()).collect();
        let assigned: BTreeSet<&str> = s.assignment.keys().map(String::as_str).collect();
        prop_assert_eq!(ids, assigned);
        for (c, &n) in sizes.iter().enumerate() {
            let count = |p| m.entries.iter().filter(|e| e.category == c && s.assignment[&e.id] == p).count();
            let (train, val, test) = partition_sizes(n);
            prop_assert_eq!((count(Partition::Train), count(Partition::Val), count(Partition::Test)), (train, val, test));
            // Both floors push their remainder into train, so train can sit
            // up to two samples above 0.7n.
            prop_assert!((train as f64 - 0.7 * n as f64).abs() < 2.0);
            prop_assert!((val as f64 - 0.2 * n as f64).abs() <= 1.0);
            prop_assert!((test as f64 - 0.1 * n as f64).abs() <= 1.0);
        }
    }

    #[test]
    fn same_seed_same_bytes(sizes in prop::collection::vec(3usize..60, 6), seed in any::<u64>()) {
        let m = manifest_with_sizes(&sizes);
        prop_assert_eq!(split(&m, seed).unwrap().to_json().unwrap(), split(&m, seed).unwrap().to_json().unwrap());
    }
}

#[test]
fn different_seeds_shuffle_differently() {
    let m = manifest_with_sizes(&[100; 6]);
    assert_ne!(split(&m, 1).unwrap().assignment, split(&m, 2).unwrap().assignment);
}

#[test]
fn tiny_categories_go_to_train_with_a_warning() {
    let m = manifest_with_sizes(&[2, 10, 10, 10, 10, 10]);
    let s = split(&m, 0).unwrap();
    assert_eq!(s.warnings.len(), 1);
    assert!(m.entries.iter().filter(|e| e.category == 0).all(|e| s.assignment[&e.id] == Partition::Train));
}

#[test]
fn assignment_round_trips_through_json() {
    let dir = tempfile::tempdir().unwrap();
    let m = manifest_with_sizes(&[20; 6]);
    let s = split(&m, 9).unwrap();
    let path = dir.path().join("split.json");
    s.save(&path).unwrap();
    let back = SplitAssignment::load(&path).unwrap();
    assert_eq!(back.assignment, s.assignment);
    assert_eq!(back.seed, 9);
}

#[test]
fn ingest_synthetic_tree() {
    let s = common::synth(4);
    assert_eq!(s.manifest.total, 24);
    assert_eq!(category_distribution(&s.manifest), [4; 6]);
    s.manifest.validate().unwrap();
    // Idempotent over an unchanged tree.
    let again = ingest(&s.root, &LabelTaxonomy::nail()).unwrap().manifest;
    assert_eq!(again, s.manifest);
    let path = s.dir.path().join("manifest.json");
    s.manifest.save(&path).unwrap();
    assert_eq!(DatasetManifest::load(&path).unwrap(), s.manifest);
}

#[test]
fn ingest_matches_directory_names_loosely_and_skips_junk() {
    let s = common::synth(3);
    fs::rename(s.root.join("blue_finger"), s.root.join("Blue Finger")).unwrap();
    fs::rename(s.root.join("healthy_nail"), s.root.join("HEALTHY-NAIL")).unwrap();
    fs::write(s.root.join("pitting").join("broken.png"), b"not a png").unwrap();
    let out = ingest(&s.root, &LabelTaxonomy::nail()).unwrap();
    assert_eq!(out.manifest.total, 18);
    assert_eq!(category_distribution(&out.manifest), [3; 6]);
    assert_eq!(out.skipped.len(), 1);
    assert!(out.skipped[0].path.contains("broken.png"));
}

#[test]
fn ingest_rejects_a_missing_category() {
    let s = common::synth(2);
    fs::remove_dir_all(s.root.join("clubbing")).unwrap();
    let err = ingest(&s.root, &LabelTaxonomy::nail()).unwrap_err();
    assert!(err.to_string().contains("clubbing"), "{err}");
}

#[test]
fn ingest_missing_root_is_io_error() {
    let err = ingest(std::path::Path::new("/definitely/not/here"), &LabelTaxonomy::nail()).unwrap_err();
    assert!(matches!(err, Error::Io { .. }), "{err:?}");
}

#[test]
fn checksums_track_content() {
    let s = common::synth(2);
    let before = s.manifest.entries[0].clone();
    let path = s.root.join(&before.path);
    let img = image::open(&path).unwrap().to_rgb8();
    let mut changed = img.clone();
    changed.get_pixel_mut(0, 0).0 = [0, 0, 0];
    changed.save(&path).unwrap();
    let after = ingest(&s.root, &LabelTaxonomy::nail()).unwrap().manifest;
    let entry = after.entry(&before.id).unwrap();
    assert_ne!(entry.checksum, before.checksum);
}
