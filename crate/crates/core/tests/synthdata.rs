use nailguard::dataset::{category_distribution, content_checksum, ingest};
use nailguard::synthdata::{generate, render, SynthSpec};
use nailguard::LabelTaxonomy;

#[test]
fn default_spec_is_600_ingestable_images() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec::default();
    assert_eq!((spec.per_category, spec.image_size), (100, 224));
    let report = generate(&spec, dir.path()).unwrap();
    assert_eq!(report.files.len(), 600);
    assert_eq!(report.per_category, [100; 6]);
    let m = ingest(dir.path(), &LabelTaxonomy::nail()).unwrap();
    assert_eq!(m.manifest.total, 600);
    assert!(m.skipped.is_empty());
    assert_eq!(category_distribution(&m.manifest), [100; 6]);
}

#[test]
fn same_seed_same_checksums() {
    let spec = SynthSpec { per_category: 3, ..SynthSpec::default() };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ma = ingest(&generate(&spec, a.path()).unwrap().root, &LabelTaxonomy::nail()).unwrap().manifest;
    let mb = ingest(&generate(&spec, b.path()).unwrap().root, &LabelTaxonomy::nail()).unwrap().manifest;
    assert_eq!(ma.entries, mb.entries);
    let other = SynthSpec { seed: 8, ..spec };
    let c = tempfile::tempdir().unwrap();
    let mc = ingest(&generate(&other, c.path()).unwrap().root, &LabelTaxonomy::nail()).unwrap().manifest;
    assert_ne!(ma.entries, mc.entries);
}

#[test]
fn categories_look_different() {
    let spec = SynthSpec::default();
    let mean = |cat| {
        let img = render(&spec, cat, 0);
        let mut m = [0.0; 3];
        for p in img.pixels() {
            for (acc, v) in m.iter_mut().zip(p.0) {
                *acc += v as f64;
            }
        }
        m.map(|v| v / (img.width() * img.height()) as f64)
    };
    let means: Vec<[f64; 3]> = (0..6).map(mean).collect();
    for i in 0..6 {
        for j in i + 1..6 {
            let d: f64 = (0..3).map(|c| (means[i][c] - means[j][c]).powi(2)).sum::<f64>().sqrt();
            assert!(d > 3.0, "categories {i} and {j} have mean colours {:?} {:?}", means[i], means[j]);
        }
    }
    let a = render(&spec, 5, 1);
    assert_eq!(content_checksum(a.as_raw()), content_checksum(render(&spec, 5, 1).as_raw()));
    assert_ne!(a, render(&spec, 5, 2));
}
