#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use nailguard::dataset::{ingest, split, DatasetManifest, SplitAssignment};
use nailguard::pipeline::{ImageStore, PreprocessedImage, SplitData, PIXELS_PER_IMAGE};
use nailguard::synthdata::{generate, SynthSpec};
use nailguard::LabelTaxonomy;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Synth {
    pub dir: tempfile::TempDir,
    pub root: PathBuf,
    pub manifest: DatasetManifest,
    pub split: SplitAssignment,
    pub data: SplitData,
}

pub fn synth(per_category: usize) -> Synth {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("nails");
    generate(&SynthSpec { per_category, ..SynthSpec::default() }, &root).unwrap();
    let manifest = ingest(&root, &LabelTaxonomy::nail()).unwrap().manifest;
    let split = split(&manifest, 42).unwrap();
    let store = Arc::new(ImageStore::load(&manifest, &root).unwrap());
    let data = SplitData::from_split(store, &manifest, &split);
    Synth { dir, root, manifest, split, data }
}

pub fn noise_image(seed: u64) -> PreprocessedImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    PreprocessedImage::new((0..PIXELS_PER_IMAGE).map(|_| rng.random::<f64>()).collect(), format!("noise{seed}"))
        .unwrap()
}
