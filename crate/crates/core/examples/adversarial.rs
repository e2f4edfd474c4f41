//! Clean vs FGSM adversarial training on the synthetic dataset, scored on
//! clean and FGSM-perturbed test images.
//!
//! cargo run --release -p nailguard --example adversarial -- [data_dir] [epsilon]

use std::path::PathBuf;
use std::sync::Arc;

use nailguard::dataset::{ingest, split};
use nailguard::models::Classifier;
use nailguard::pipeline::{ImageStore, SplitData};
use nailguard::synthdata::{generate, SynthSpec};
use nailguard::training::{adversarial_accuracy, adversarial_fit, evaluate_partition, fit, TrainingConfig};
use nailguard::LabelTaxonomy;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let data = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("nailguard-synth"));
    let epsilon: f64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0.1);

    if !data.exists() {
        generate(&SynthSpec::default(), &data)?;
    }
    let manifest = ingest(&data, &LabelTaxonomy::nail())?.manifest;
    let store = Arc::new(ImageStore::load(&manifest, &data)?);
    let data = SplitData::from_split(store.clone(), &manifest, &split(&manifest, 42)?);
    let config = TrainingConfig { max_epochs: 30, ..TrainingConfig::default() };

    let mut clean = Classifier::tiny(config.seed);
    fit(&mut clean, &data, &config)?;
    let mut robust = Classifier::tiny(config.seed);
    adversarial_fit(&mut robust, &data, &config.with_epsilon(epsilon))?;

    for (name, model) in [("clean", &clean), ("adversarial", &robust)] {
        let (_, acc) = evaluate_partition(model, &store, &data.test, 32)?;
        let adv = adversarial_accuracy(model, &store, &data.test, epsilon, 32)?;
        println!("{name:12} test acc {acc:.3}  fgsm(eps={epsilon}) acc {adv:.3}");
    }
    Ok(())
}
