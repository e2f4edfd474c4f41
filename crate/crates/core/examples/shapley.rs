//! Shapley attribution over a block grid: exact enumeration and a sampled
//! estimate side by side.
//!
//! cargo run --release -p nailguard --example shapley -- [rows] [cols] [permutations]

use std::sync::Arc;

use nailguard::dataset::{ingest, split};
use nailguard::explain::{segment_grid, shapley_attribution, Baseline, ShapleyMode};
use nailguard::models::{argmax, Classifier};
use nailguard::pipeline::{ImageStore, SplitData};
use nailguard::synthdata::{generate, SynthSpec};
use nailguard::training::{fit, TrainingConfig};
use nailguard::LabelTaxonomy;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1).map(|s| s.parse::<usize>());
    let rows = args.next().transpose()?.unwrap_or(2);
    let cols = args.next().transpose()?.unwrap_or(4);
    let permutations = args.next().transpose()?.unwrap_or(200);

    let taxonomy = LabelTaxonomy::nail();
    let dir = tempfile::tempdir()?;
    generate(&SynthSpec { per_category: 12, ..SynthSpec::default() }, dir.path())?;
    let manifest = ingest(dir.path(), &taxonomy)?.manifest;
    let store = Arc::new(ImageStore::load(&manifest, dir.path())?);
    let data = SplitData::from_split(store.clone(), &manifest, &split(&manifest, 42)?);
    let mut model = Classifier::tiny(0);
    fit(&mut model, &data, &TrainingConfig { max_epochs: 5, learning_rate: 1e-3, ..TrainingConfig::default() })?;

    let image = store.get(&data.test[0])?;
    let target = argmax(&model.predict(&image)?);
    let seg = segment_grid(rows, cols)?;
    let baseline = Baseline::default();
    let exact = shapley_attribution(&model, &image, &seg, target, ShapleyMode::Exact, baseline)?;
    let sampled =
        shapley_attribution(&model, &image, &seg, target, ShapleyMode::Sampled { permutations, seed: 1 }, baseline)?;

    println!(
        "target {}: v(all) {:.4}, v(none) {:.4}",
        taxonomy.name(target).unwrap_or("?"),
        exact.full_value,
        exact.base_value
    );
    println!("segment    exact  sampled");
    for (i, (e, s)) in exact.phi.iter().zip(&sampled.phi).enumerate() {
        println!("{i:7} {e:8.4} {s:8.4}");
    }
    println!(
        "sum of phi {:.6} vs v(all) - v(none) {:.6}",
        exact.phi.iter().sum::<f64>(),
        exact.full_value - exact.base_value
    );
    Ok(())
}
