//! Save a model, load it back and check that predictions are unchanged.
//! Loading against a different taxonomy is refused.
//!
//! cargo run -p nailguard --example checkpoint -- [dir]

use std::path::PathBuf;

use nailguard::models::{CheckpointMetadata, Classifier, WeightsProvider};
use nailguard::pipeline::{PreprocessedImage, CHANNELS, IMAGE_SIZE};
use nailguard::LabelTaxonomy;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("nailguard-ckpt"));
    let mut model = Classifier::tiny(3);
    // The head starts at zero; give it something to remember.
    for (i, w) in model.head.weights.iter_mut().enumerate() {
        *w = ((i * 37) % 11) as f64 * 0.01 - 0.05;
    }
    let saved = model.save(&dir, CheckpointMetadata::bare(&model))?;
    println!("wrote {} ({} params, digest {})", dir.display(), model.num_params(), saved.metadata.weights_sha256);

    let provider = WeightsProvider::from_env();
    let restored = Classifier::load(&dir, &LabelTaxonomy::nail(), &provider)?;
    let n = IMAGE_SIZE * IMAGE_SIZE * CHANNELS;
    let image = PreprocessedImage::new((0..n).map(|i| (i % 251) as f64 / 250.0).collect(), "probe")?;
    let (a, b) = (model.predict(&image)?, restored.predict(&image)?);
    println!("original {a:.4?}\nrestored {b:.4?}");
    assert_eq!(a, b);

    let mut names = LabelTaxonomy::nail().names().to_vec();
    names.swap(0, 1);
    match Classifier::load(&dir, &LabelTaxonomy::from_names(names)?, &provider) {
        Err(e) => println!("reordered taxonomy refused: {e}"),
        Ok(_) => println!("reordered taxonomy unexpectedly accepted"),
    }
    Ok(())
}
