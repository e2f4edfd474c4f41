//! Train the small CNN on the synthetic dataset and report test metrics.
//!
//! cargo run --release -p nailguard --example train_tiny -- [data_dir] [out_dir]

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use nailguard::dataset::{ingest, split};
use nailguard::evaluation::evaluate;
use nailguard::models::Classifier;
use nailguard::pipeline::{ImageStore, SplitData};
use nailguard::synthdata::{generate, SynthSpec};
use nailguard::training::{fit, TrainingConfig};
use nailguard::LabelTaxonomy;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let data = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("nailguard-synth"));
    let out = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("nailguard-tiny"));

    if !data.exists() {
        generate(&SynthSpec::default(), &data)?;
    }
    let taxonomy = LabelTaxonomy::nail();
    let manifest = ingest(&data, &taxonomy)?.manifest;
    let assignment = split(&manifest, 42)?;
    let store = Arc::new(ImageStore::load(&manifest, &data)?);
    let split_data = SplitData::from_split(store.clone(), &manifest, &assignment);

    let config = TrainingConfig { max_epochs: 30, ..TrainingConfig::default() };
    let mut model = Classifier::tiny(config.seed);
    let started = Instant::now();
    let outcome = fit(&mut model, &split_data, &config)?;
    println!(
        "trained {} epochs in {:.1}s, best epoch {}",
        outcome.history.records.len(),
        started.elapsed().as_secs_f64(),
        outcome.history.best_epoch
    );

    let eval = evaluate(&model, &store, &split_data.test, &taxonomy)?;
    for row in &eval.report.per_category {
        println!("{:28} p {:.2} r {:.2} f1 {:.2} n {}", row.category, row.precision, row.recall, row.f1, row.support);
    }
    println!("test accuracy {:.4}", eval.report.accuracy);

    outcome.checkpoint.save(&out)?;
    outcome.history.save(&out)?;
    eval.report.save(&out)?;
    println!("checkpoint written to {}", out.display());
    Ok(())
}
