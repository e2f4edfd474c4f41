//! Generate the synthetic dataset, ingest it and split it 70/20/10.
//!
//! cargo run --release -p nailguard --example prepare_data -- [out_dir] [per_category]

use std::path::PathBuf;

use nailguard::dataset::{ingest, split, Partition};
use nailguard::synthdata::{generate, SynthSpec};
use nailguard::LabelTaxonomy;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let out = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("nailguard-prepare"));
    let per_category = args.next().map(|s| s.parse()).transpose()?.unwrap_or(40);

    let data = out.join("images");
    let report = generate(&SynthSpec { per_category, ..SynthSpec::default() }, &data)?;
    println!("generated {} images under {}", report.files.len(), data.display());

    let ingested = ingest(&data, &LabelTaxonomy::nail())?;
    for (i, name) in ingested.manifest.taxonomy.names().iter().enumerate() {
        let n = ingested.manifest.entries.iter().filter(|e| e.category == i).count();
        println!("  {name:28} {n}");
    }
    ingested.manifest.save(&out.join("dataset_manifest.json"))?;

    let assignment = split(&ingested.manifest, 42)?;
    for w in &assignment.warnings {
        println!("warning: {w}");
    }
    let counts = assignment.counts();
    for p in [Partition::Train, Partition::Val, Partition::Test] {
        println!("{p:?}: {}", counts.get(&p).unwrap_or(&0));
    }
    assignment.save(&out.join("split.json"))?;
    Ok(())
}
