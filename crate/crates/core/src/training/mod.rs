//! Training loop, early stopping, FGSM adversarial training and sweeps.
//!
//! The adversarial attack is the fast gradient sign method: a single step
//! `x′ = clip(x + ε·sign(∇ₓL), 0, 1)` whose ℓ∞ size is governed by one
//! scalar `ε`.

mod adam;
mod early_stop;
mod sweep;

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use adam::{Adam, AdamConfig};
pub use early_stop::{EarlyStopState, StopDecision};
pub use sweep::{
    epsilon_sweep, hyperparameter_sweep, HyperGrid, HyperSweep, LeaderboardRow, SweepRow, SweepTable, DEFAULT_EPSILONS,
};

use crate::dataset::{mix_seed, Partition};
use crate::error::{Error, Result};
use crate::models::{argmax, Checkpoint, CheckpointMetadata, CheckpointMetrics, Classifier, PreprocessInfo, Wrt};
use crate::pipeline::{make_batches, AugmentationConfig, ImageBatch, ImageStore, SplitData};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdversarialConfig {
    pub epsilon: f64,
    /// Fraction of each training batch that is adversarial.
    pub mix_ratio: f64,
}

impl AdversarialConfig {
    pub fn new(epsilon: f64) -> Self {
        Self { epsilon, mix_ratio: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    pub max_epochs: usize,
    pub patience: usize,
    pub min_delta: f64,
    pub seed: u64,
    pub augmentation: AugmentationConfig,
    pub adversarial: Option<AdversarialConfig>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 32,
            optimizer: AdamConfig::default(),
            max_epochs: 200,
            patience: 10,
            min_delta: 1e-4,
            seed: 0,
            augmentation: AugmentationConfig::default(),
            adversarial: None,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be >= 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be >= 1".into()));
        }
        if let Some(adv) = &self.adversarial {
            if !(0.0..=1.0).contains(&adv.epsilon) {
                return Err(Error::Config("epsilon must lie in [0, 1]".into()));
            }
            if adv.mix_ratio != 0.5 {
                return Err(Error::Config("only equal clean/adversarial halves (mix_ratio 0.5) are supported".into()));
            }
        }
        self.augmentation.validate()
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Self {
        Self { adversarial: Some(AdversarialConfig::new(epsilon)), ..self.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_epoch: usize,
}

impl TrainingHistory {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.records.get(self.best_epoch)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["epoch", "train_loss", "train_acc", "val_loss", "val_acc"])?;
        for r in &self.records {
            w.serialize((r.epoch, r.train_loss, r.train_acc, r.val_loss, r.val_acc))?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv_path = dir.join("history.csv");
        let file = std::fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
        self.write_csv(file)?;
        crate::dataset::write_json(&dir.join("history.json"), self)
    }
}

/// Mean loss and accuracy of `classifier` over a partition, in order and
/// without augmentation.
pub fn evaluate_partition(
    classifier: &Classifier,
    store: &ImageStore,
    ids: &[String],
    batch_size: usize,
) -> Result<(f64, f64)> {
    if ids.is_empty() {
        return Err(Error::Empty("partition is empty".into()));
    }
    let mut loss = 0.0;
    let mut correct = 0usize;
    for batch in make_batches(store, ids, Partition::Val, batch_size, 0, &AugmentationConfig::disabled())? {
        let batch = batch?;
        let r = batch_loss_acc(classifier, &batch)?;
        loss += r.0 * batch.len() as f64;
        correct += r.1;
    }
    Ok((loss / ids.len() as f64, correct as f64 / ids.len() as f64))
}

fn batch_loss_acc(classifier: &Classifier, batch: &ImageBatch) -> Result<(f64, usize)> {
    let out = classifier.forward(batch)?;
    let cats = batch.categories()?;
    let mut loss = 0.0;
    let mut correct = 0;
    for ((p, y), &c) in out.probs.iter().zip(&batch.labels).zip(&cats) {
        loss += crate::models::cross_entropy(p, y);
        if argmax(p) == c {
            correct += 1;
        }
    }
    Ok((loss / batch.len() as f64, correct))
}

/// Perturbs each pixel by `ε·sign(g)` and clips to `[0, 1]`. `sign(0) = 0`.
pub fn fgsm_from_gradients(batch: &ImageBatch, grads: &[Vec<f64>], epsilon: f64) -> Result<ImageBatch> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::Config(format!("epsilon {epsilon} outside [0, 1]")));
    }
    if grads.len() != batch.len() {
        return Err(Error::Shape("one gradient per image required".into()));
    }
    let mut out = batch.clone();
    for (img, g) in out.images.iter_mut().zip(grads) {
        if g.len() != img.pixels.len() {
            return Err(Error::Shape("gradient and image sizes differ".into()));
        }
        for (x, &gi) in img.pixels.iter_mut().zip(g) {
            let step = if gi > 0.0 {
                epsilon
            } else if gi < 0.0 {
                -epsilon
            } else {
                0.0
            };
            *x = (*x + step).clamp(0.0, 1.0);
        }
    }
    Ok(out)
}

/// Fast gradient sign method against the batch's own labels.
pub fn fgsm(classifier: &Classifier, batch: &ImageBatch, epsilon: f64) -> Result<ImageBatch> {
    if !(epsilon >= 0.0) {
        return Err(Error::Config("epsilon must be >= 0".into()));
    }
    if epsilon == 0.0 {
        return Ok(batch.clone());
    }
    let lg = classifier.loss_and_grads(batch, Wrt::Input)?;
    fgsm_from_gradients(batch, &lg.inputs.expect("input gradients requested"), epsilon)
}

/// Outcome of a completed run: the classifier is left at its best epoch.
#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub checkpoint: Checkpoint,
    pub history: TrainingHistory,
}

/// One optimizer step on a batch. With adversarial training the step uses
/// the mean loss over the clean batch concatenated with its FGSM copy; the
/// clean half's forward pass also supplies the attack gradient.
fn train_step(
    classifier: &mut Classifier,
    optimizer: &mut Adam,
    trainable: &[bool],
    batch: &ImageBatch,
    adversarial: Option<&AdversarialConfig>,
) -> Result<(f64, usize, usize)> {
    let cats = batch.categories()?;
    let count_correct = |probs: &[[f64; 6]]| probs.iter().zip(&cats).filter(|(p, &c)| argmax(&p[..]) == c).count();
    let (loss, grads, correct, seen) = match adversarial {
        None => {
            let lg = classifier.loss_and_grads(batch, Wrt::Params)?;
            let correct = count_correct(&lg.probs);
            (lg.loss, lg.params.expect("params"), correct, batch.len())
        }
        Some(adv) => {
            let clean = classifier.loss_and_grads(batch, Wrt::Both)?;
            let perturbed = fgsm_from_gradients(batch, clean.inputs.as_deref().expect("inputs"), adv.epsilon)?;
            let attacked = classifier.loss_and_grads(&perturbed, Wrt::Params)?;
            let gc = clean.params.expect("params");
            let ga = attacked.params.expect("params");
            let grads: Vec<f64> = gc.iter().zip(&ga).map(|(a, b)| 0.5 * (a + b)).collect();
            let correct = count_correct(&clean.probs) + count_correct(&attacked.probs);
            (0.5 * (clean.loss + attacked.loss), grads, correct, 2 * batch.len())
        }
    };
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numeric("non-finite gradient".into()));
    }
    let mut params = classifier.params();
    optimizer.step(&mut params, &grads, trainable);
    classifier.set_params(&params)?;
    Ok((loss, correct, seen))
}

/// Trains with Adam, validates after every epoch and stops early on
/// validation loss. The classifier ends at the best epoch's weights and the
/// returned checkpoint holds them.
pub fn fit(classifier: &mut Classifier, data: &SplitData, config: &TrainingConfig) -> Result<FitOutcome> {
    let store = data.store.clone();
    let val = data.val.clone();
    let batch_size = config.batch_size;
    fit_with_validator(classifier, data, config, move |c, _| evaluate_partition(c, &store, &val, batch_size))
}

/// [`fit`] with a caller-supplied validation step returning
/// `(val_loss, val_accuracy)` after each epoch.
pub fn fit_with_validator<V>(
    classifier: &mut Classifier,
    data: &SplitData,
    config: &TrainingConfig,
    mut validate: V,
) -> Result<FitOutcome>
where
    V: FnMut(&Classifier, usize) -> Result<(f64, f64)>,
{
    config.validate()?;
    if data.train.is_empty() || data.val.is_empty() {
        return Err(Error::Empty("train and val partitions must be non-empty".into()));
    }
    let trainable = classifier.trainable();
    let mut optimizer = Adam::new(classifier.num_params(), config.learning_rate, config.optimizer);
    let mut stopper = EarlyStopState::new(config.patience, config.min_delta);
    let mut history = TrainingHistory::default();
    let mut best_params = classifier.params();

    for epoch in 0..config.max_epochs {
        let epoch_seed = mix_seed(config.seed, epoch as u64);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        let mut seen = 0usize;
        let batches = make_batches(
            &data.store,
            &data.train,
            Partition::Train,
            config.batch_size,
            epoch_seed,
            &config.augmentation,
        )?;
        for batch in batches {
            let batch = batch?;
            let step = train_step(classifier, &mut optimizer, &trainable, &batch, config.adversarial.as_ref());
            let (loss, c, n) = match step {
                Ok(v) => v,
                Err(e) => return Err(Error::Diverged { epoch, reason: e.to_string(), history: Box::new(history) }),
            };
            loss_sum += loss * n as f64;
            correct += c;
            seen += n;
        }

        let (val_loss, val_acc) = match validate(classifier, epoch) {
            Ok(v) => v,
            Err(Error::Numeric(reason)) => (f64::NAN, {
                log::warn!("validation failed at epoch {epoch}: {reason}");
                0.0
            }),
            Err(e) => return Err(e),
        };
        history.records.push(EpochRecord {
            epoch,
            train_loss: loss_sum / seen as f64,
            train_acc: correct as f64 / seen as f64,
            val_loss,
            val_acc,
        });
        history.stopped_epoch = epoch;
        log::info!(
            "epoch {epoch}: train_loss {:.4} train_acc {:.4} val_loss {val_loss:.4} val_acc {val_acc:.4}",
            loss_sum / seen as f64,
            correct as f64 / seen as f64
        );
        if !val_loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                reason: format!("validation loss is {val_loss}"),
                history: Box::new(history),
            });
        }

        let decision = stopper.update(epoch, val_loss);
        if stopper.just_improved() {
            best_params = classifier.params();
            history.best_epoch = epoch;
        }
        if decision == StopDecision::Stop {
            break;
        }
    }

    classifier.set_params(&best_params)?;
    let best = history.best().copied().expect("at least one epoch ran");
    let metadata = CheckpointMetadata {
        training_config: Some(config.clone()),
        metrics: CheckpointMetrics { best_val_loss: Some(best.val_loss), best_val_accuracy: Some(best.val_acc) },
        epoch: Some(history.best_epoch),
        preprocess: PreprocessInfo { augmentation: config.augmentation.clone(), ..PreprocessInfo::default() },
        ..CheckpointMetadata::bare(classifier)
    };
    Ok(FitOutcome { checkpoint: Checkpoint::capture(classifier, metadata), history })
}

/// [`fit`] with every training batch paired with its FGSM counterpart.
/// Validation stays clean.
pub fn adversarial_fit(classifier: &mut Classifier, data: &SplitData, config: &TrainingConfig) -> Result<FitOutcome> {
    if config.adversarial.is_none() {
        return Err(Error::Config("adversarial_fit needs an epsilon".into()));
    }
    fit(classifier, data, config)
}

/// Accuracy on FGSM-perturbed copies of a partition.
pub fn adversarial_accuracy(
    classifier: &Classifier,
    store: &ImageStore,
    ids: &[String],
    epsilon: f64,
    batch_size: usize,
) -> Result<f64> {
    if ids.is_empty() {
        return Err(Error::Empty("partition is empty".into()));
    }
    let mut correct = 0usize;
    for batch in make_batches(store, ids, Partition::Test, batch_size, 0, &AugmentationConfig::disabled())? {
        let attacked = fgsm(classifier, &batch?, epsilon)?;
        correct += batch_loss_acc(classifier, &attacked)?.1;
    }
    Ok(correct as f64 / ids.len() as f64)
}
