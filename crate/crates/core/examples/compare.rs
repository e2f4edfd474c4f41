//! Train two small models with different learning rates, evaluate both on
//! the test partition and print a comparison next to the published rows.
//!
//! cargo run --release -p nailguard --example compare

use std::sync::Arc;

use nailguard::dataset::{ingest, split};
use nailguard::evaluation::{compare_models, evaluate, ModelResult};
use nailguard::models::Classifier;
use nailguard::pipeline::{ImageStore, SplitData};
use nailguard::synthdata::{generate, SynthSpec};
use nailguard::training::{evaluate_partition, fit, TrainingConfig};
use nailguard::LabelTaxonomy;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    generate(&SynthSpec { per_category: 20, ..SynthSpec::default() }, dir.path())?;
    let taxonomy = LabelTaxonomy::nail();
    let manifest = ingest(dir.path(), &taxonomy)?.manifest;
    let store = Arc::new(ImageStore::load(&manifest, dir.path())?);
    let data = SplitData::from_split(store.clone(), &manifest, &split(&manifest, 42)?);

    let mut results = Vec::new();
    for lr in [1e-4, 1e-3] {
        let config = TrainingConfig { learning_rate: lr, max_epochs: 8, ..TrainingConfig::default() };
        let mut model = Classifier::tiny(config.seed);
        fit(&mut model, &data, &config)?;
        let (_, train_acc) = evaluate_partition(&model, &store, &data.train, 32)?;
        let (_, val_acc) = evaluate_partition(&model, &store, &data.val, 32)?;
        let test = evaluate(&model, &store, &data.test, &taxonomy)?.report;
        results.push(ModelResult {
            name: format!("tiny_test lr={lr}"),
            train_accuracy: Some(train_acc),
            val_accuracy: Some(val_acc),
            test,
        });
    }
    compare_models(&results, true).write_csv(std::io::stdout())?;
    Ok(())
}
