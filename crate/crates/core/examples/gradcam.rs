//! Grad-CAM heatmap for one image, written as a PNG overlay.
//!
//! cargo run --release -p nailguard --example gradcam -- [checkpoint_dir] [out.png]
//!
//! Without a checkpoint a model is trained for a few epochs on synthetic data.

use std::path::PathBuf;
use std::sync::Arc;

use nailguard::dataset::{ingest, split};
use nailguard::explain::{grad_cam, overlay, DEFAULT_ALPHA};
use nailguard::models::{argmax, Classifier, WeightsProvider};
use nailguard::pipeline::{ImageStore, SplitData};
use nailguard::synthdata::{generate, SynthSpec};
use nailguard::training::{fit, TrainingConfig};
use nailguard::LabelTaxonomy;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let checkpoint = args.next().map(PathBuf::from);
    let out = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("nailguard-gradcam.png"));

    let taxonomy = LabelTaxonomy::nail();
    let dir = tempfile::tempdir()?;
    generate(&SynthSpec { per_category: 12, ..SynthSpec::default() }, dir.path())?;
    let manifest = ingest(dir.path(), &taxonomy)?.manifest;
    let store = Arc::new(ImageStore::load(&manifest, dir.path())?);

    let model = match checkpoint {
        Some(dir) => Classifier::load(&dir, &taxonomy, &WeightsProvider::from_env())?,
        None => {
            let data = SplitData::from_split(store.clone(), &manifest, &split(&manifest, 42)?);
            let mut m = Classifier::tiny(0);
            fit(&mut m, &data, &TrainingConfig { max_epochs: 5, learning_rate: 1e-3, ..TrainingConfig::default() })?;
            m
        }
    };

    let entry =
        manifest.entries.iter().find(|e| taxonomy.name(e.category) == Some("clubbing")).ok_or("no clubbing image")?;
    let image = store.get(&entry.id)?;
    let probs = model.predict(&image)?;
    let target = argmax(&probs);
    println!("{} predicted {} ({:.3})", entry.id, taxonomy.name(target).unwrap_or("?"), probs[target]);

    let map = grad_cam(&model, &image, target)?;
    let (y, x) = map.argmax();
    println!("hottest pixel at row {y}, column {x}");
    std::fs::write(&out, overlay(&image, &map, DEFAULT_ALPHA)?)?;
    println!("overlay written to {}", out.display());
    Ok(())
}
