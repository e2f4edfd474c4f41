//! FGSM epsilon sweep: one fresh adversarially trained model per epsilon,
//! scored on clean validation data.
//!
//! cargo run --release -p nailguard --example epsilon_sweep -- [epsilons] [max_epochs]

use std::sync::Arc;

use nailguard::dataset::{ingest, split};
use nailguard::models::Classifier;
use nailguard::pipeline::{ImageStore, SplitData};
use nailguard::synthdata::{generate, SynthSpec};
use nailguard::training::{epsilon_sweep, TrainingConfig, DEFAULT_EPSILONS};
use nailguard::LabelTaxonomy;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let mut args = std::env::args().skip(1);
    let epsilons: Vec<f64> = match args.next() {
        Some(list) => list.split(',').map(str::parse).collect::<Result<_, _>>()?,
        None => DEFAULT_EPSILONS.to_vec(),
    };
    let max_epochs = args.next().map(|s| s.parse()).transpose()?.unwrap_or(5);

    let dir = tempfile::tempdir()?;
    generate(&SynthSpec { per_category: 20, ..SynthSpec::default() }, dir.path())?;
    let manifest = ingest(dir.path(), &LabelTaxonomy::nail())?.manifest;
    let store = Arc::new(ImageStore::load(&manifest, dir.path())?);
    let data = SplitData::from_split(store, &manifest, &split(&manifest, 42)?);

    let config = TrainingConfig { max_epochs, ..TrainingConfig::default() };
    let (table, _) = epsilon_sweep(|| Ok(Classifier::tiny(config.seed)), &data, &config, &epsilons)?;
    table.write_csv(std::io::stdout())?;
    if let Some(best) = table.best() {
        println!("best epsilon {} (val accuracy {:.3})", best.epsilon, best.val_accuracy.unwrap_or(f64::NAN));
    }
    Ok(())
}
