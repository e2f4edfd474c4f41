//! `nailguard` command-line tool. Each subcommand maps onto one library
//! operation and writes its outputs, plus a `manifest.json` index with
//! checksums, under `--out`.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use nailguard::dataset::{ingest, split, DatasetManifest, Partition, SplitAssignment};
use nailguard::evaluation::{compare_models, evaluate, EvaluationReport, ModelResult};
use nailguard::explain::{
    grad_cam, overlay, segment_grid, shapley_attribution, to_pixel_map, AttributionMethod, Baseline, ExplanationExport,
    ShapleyMode, DEFAULT_ALPHA,
};
use nailguard::models::{BackboneId, Classifier, WeightsProvider};
use nailguard::pipeline::{load_and_resize, AugmentationConfig, ImageStore, SplitData};
use nailguard::plot::{confusion_heatmap, line_chart, save_png, Series, PALETTE};
use nailguard::synthdata::{generate, SynthSpec};
use nailguard::training::{
    adversarial_fit, epsilon_sweep, fit, hyperparameter_sweep, FitOutcome, HyperGrid, TrainingConfig, DEFAULT_EPSILONS,
};
use nailguard::LabelTaxonomy;
use nailguard_service::{router, token_from_env, CaseStore, SeverityWeights, SystemClock, Triage};

pub const DATA_ENV: &str = "NAILGUARD_DATA";

#[derive(Debug, Parser)]
#[command(name = "nailguard", version, about = "Nail-disease image classification toolkit")]
#[command(arg_required_else_help = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Scan a category-per-directory dataset into a manifest.
    Ingest(IngestArgs),
    /// Stratified 70/20/10 split of a manifest.
    Split(SplitArgs),
    /// Train a classifier with early stopping.
    Train(TrainArgs),
    /// Grid search over learning rate and batch size.
    Sweep(SweepArgs),
    /// Train with FGSM adversarial examples.
    AdvTrain(AdvTrainArgs),
    /// One adversarial training run per epsilon.
    AdvSweep(AdvSweepArgs),
    /// Score a checkpoint on the test partition.
    Evaluate(EvaluateArgs),
    /// Tabulate evaluation reports against published results.
    Compare(CompareArgs),
    /// Grad-CAM or Shapley explanation of one image.
    Explain(ExplainArgs),
    /// Run the HTTP triage service.
    Serve(ServeArgs),
    /// Generate the synthetic six-category dataset.
    SynthData(SynthArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct DataArgs {
    /// Dataset root with one directory per category.
    #[arg(long, env = DATA_ENV)]
    pub data: PathBuf,
    /// Seed of the stratified split.
    #[arg(long, default_value_t = 42)]
    pub split_seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainFlags {
    #[arg(long, default_value = "tiny_test")]
    pub arch: String,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 200)]
    pub max_epochs: usize,
    #[arg(long, default_value_t = 10)]
    pub patience: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub min_delta: f64,
    /// Seed for weight init and shuffling.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub no_augment: bool,
}

impl TrainFlags {
    fn config(&self) -> TrainingConfig {
        TrainingConfig {
            learning_rate: self.lr,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            min_delta: self.min_delta,
            seed: self.seed,
            augmentation: if self.no_augment { AugmentationConfig::disabled() } else { AugmentationConfig::default() },
            ..TrainingConfig::default()
        }
    }

    fn backbone(&self) -> Result<BackboneId> {
        Ok(self.arch.parse()?)
    }
}

#[derive(Debug, Args, Serialize)]
pub struct IngestArgs {
    #[arg(long, env = DATA_ENV)]
    pub data: PathBuf,
    #[arg(long, default_value = "runs/ingest")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SplitArgs {
    /// Dataset manifest written by `ingest`.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value = "runs/split")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub train: TrainFlags,
    #[arg(long, default_value = "runs/train")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct AdvTrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub train: TrainFlags,
    #[arg(long, default_value_t = 0.1)]
    pub epsilon: f64,
    #[arg(long, default_value = "runs/adv-train")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SweepArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub train: TrainFlags,
    #[arg(long, value_delimiter = ',', default_values_t = [0.1, 0.01, 0.001, 0.0001])]
    pub lrs: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [16, 32, 64])]
    pub batch_sizes: Vec<usize>,
    #[arg(long, default_value = "runs/sweep")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct AdvSweepArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub train: TrainFlags,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_EPSILONS)]
    pub epsilons: Vec<f64>,
    #[arg(long, default_value = "runs/adv-sweep")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "runs/evaluate")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct CompareArgs {
    /// `NAME=PATH` pairs, PATH being a `report.json`.
    #[arg(long = "report", required = true)]
    pub reports: Vec<String>,
    /// Leave out the published reference rows.
    #[arg(long)]
    pub no_reference: bool,
    #[arg(long, default_value = "runs/compare")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ExplainArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long, default_value = "gradcam")]
    pub method: String,
    /// Category to explain; defaults to the predicted one.
    #[arg(long)]
    pub target: Option<String>,
    /// Shapley block grid, `ROWSxCOLS`.
    #[arg(long, default_value = "2x2")]
    pub grid: String,
    /// Permutations for sampled Shapley; 0 means exact.
    #[arg(long, default_value_t = 0)]
    pub permutations: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Use a mid-gray baseline instead of a blurred copy.
    #[arg(long)]
    pub gray_baseline: bool,
    #[arg(long, default_value = "runs/explain")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ServeArgs {
    /// Case store directory (event log and images).
    #[arg(long, default_value = "service-store")]
    pub store: PathBuf,
    /// Directory of checkpoint directories, one per model id.
    #[arg(long, default_value = "models")]
    pub models: PathBuf,
    /// Model id to activate at startup.
    #[arg(long)]
    pub activate: Option<String>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: std::net::SocketAddr,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, default_value = "synthetic-nails")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub per_category: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

/// Parses `args` and runs. Usage errors exit 2, failures exit 1.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).try_init();
    let argv: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let recorded: Vec<String> = argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match run(cli.command, &recorded) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

#[derive(Debug, Serialize)]
struct RunIndex<'a> {
    command: &'a str,
    args: &'a [String],
    /// Every flag after defaults are filled in.
    flags: &'a serde_json::Value,
    outputs: BTreeMap<String, String>,
}

fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(std::fs::read(path)?)))
}

fn collect_files(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) -> Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else if path.file_name().is_some_and(|n| n != "manifest.json") {
            let rel = path.strip_prefix(root)?.to_string_lossy().replace('\\', "/");
            out.insert(rel, sha256_file(&path)?);
        }
    }
    Ok(())
}

/// Writes `manifest.json` listing every file under `out` with its digest.
fn write_index(out: &Path, command: &str, args: &[String], flags: &serde_json::Value) -> Result<()> {
    let mut outputs = BTreeMap::new();
    collect_files(out, out, &mut outputs)?;
    let index = RunIndex { command, args, flags, outputs };
    let mut text = serde_json::to_string_pretty(&index)?;
    text.push('\n');
    std::fs::write(out.join("manifest.json"), text)?;
    Ok(())
}

fn prepare_out(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))
}

fn require_dir(path: &Path, what: &str) -> Result<()> {
    if !path.is_dir() {
        bail!("{what} {} is not a directory", path.display());
    }
    Ok(())
}

fn run(command: Command, args: &[String]) -> Result<()> {
    let flags = match serde_json::to_value(&command)? {
        serde_json::Value::Object(mut m) if m.len() == 1 => {
            m.values_mut().next().map(std::mem::take).unwrap_or_default()
        }
        other => other,
    };
    let (name, out) = match &command {
        Command::Ingest(a) => ("ingest", Some(a.out.clone())),
        Command::Split(a) => ("split", Some(a.out.clone())),
        Command::Train(a) => ("train", Some(a.out.clone())),
        Command::Sweep(a) => ("sweep", Some(a.out.clone())),
        Command::AdvTrain(a) => ("adv-train", Some(a.out.clone())),
        Command::AdvSweep(a) => ("adv-sweep", Some(a.out.clone())),
        Command::Evaluate(a) => ("evaluate", Some(a.out.clone())),
        Command::Compare(a) => ("compare", Some(a.out.clone())),
        Command::Explain(a) => ("explain", Some(a.out.clone())),
        Command::Serve(_) => ("serve", None),
        Command::SynthData(_) => ("synth-data", None),
    };
    match command {
        Command::Ingest(a) => cmd_ingest(a)?,
        Command::Split(a) => cmd_split(a)?,
        Command::Train(a) => cmd_train(a.data, a.train, None, &a.out)?,
        Command::AdvTrain(a) => cmd_train(a.data, a.train, Some(a.epsilon), &a.out)?,
        Command::Sweep(a) => cmd_sweep(a)?,
        Command::AdvSweep(a) => cmd_adv_sweep(a)?,
        Command::Evaluate(a) => cmd_evaluate(a)?,
        Command::Compare(a) => cmd_compare(a)?,
        Command::Explain(a) => cmd_explain(a)?,
        Command::Serve(a) => cmd_serve(a)?,
        Command::SynthData(a) => cmd_synth(a)?,
    }
    if let Some(out) = out {
        write_index(&out, name, args, &flags)?;
    }
    Ok(())
}

fn cmd_ingest(a: IngestArgs) -> Result<()> {
    require_dir(&a.data, "dataset root")?;
    prepare_out(&a.out)?;
    let ingested = ingest(&a.data, &LabelTaxonomy::nail())?;
    ingested.manifest.save(&a.out.join("dataset_manifest.json"))?;
    let mut skipped = serde_json::to_string_pretty(&ingested.skipped)?;
    skipped.push('\n');
    std::fs::write(a.out.join("skipped.json"), skipped)?;
    println!(
        "ingested {} images ({} skipped) into {}",
        ingested.manifest.total,
        ingested.skipped.len(),
        a.out.display()
    );
    Ok(())
}

fn cmd_split(a: SplitArgs) -> Result<()> {
    let manifest = DatasetManifest::load(&a.manifest)?;
    prepare_out(&a.out)?;
    let assignment = split(&manifest, a.seed)?;
    for w in &assignment.warnings {
        log::warn!("{w}");
    }
    assignment.save(&a.out.join("split.json"))?;
    let counts = assignment.counts();
    println!(
        "train {} / val {} / test {}",
        counts.get(&Partition::Train).unwrap_or(&0),
        counts.get(&Partition::Val).unwrap_or(&0),
        counts.get(&Partition::Test).unwrap_or(&0)
    );
    Ok(())
}

struct Loaded {
    manifest: DatasetManifest,
    split: SplitAssignment,
    data: SplitData,
}

fn load_data(d: &DataArgs) -> Result<Loaded> {
    require_dir(&d.data, "dataset root")?;
    let ingested = ingest(&d.data, &LabelTaxonomy::nail())?;
    for s in &ingested.skipped {
        log::warn!("skipped {}: {}", s.path, s.reason);
    }
    let manifest = ingested.manifest;
    let split = split(&manifest, d.split_seed)?;
    let store = Arc::new(ImageStore::load(&manifest, &d.data)?);
    let data = SplitData::from_split(store, &manifest, &split);
    Ok(Loaded { manifest, split, data })
}

fn write_history_plot(outcome: &FitOutcome, out: &Path) -> Result<()> {
    let recs = &outcome.history.records;
    let train: Vec<f64> = recs.iter().map(|r| r.train_loss).collect();
    let val: Vec<f64> = recs.iter().map(|r| r.val_loss).collect();
    let chart =
        line_chart(&[Series { ys: &train, color: PALETTE[0] }, Series { ys: &val, color: PALETTE[1] }], 480, 320)?;
    save_png(&chart, &out.join("loss.png"))?;
    let train: Vec<f64> = recs.iter().map(|r| r.train_acc).collect();
    let val: Vec<f64> = recs.iter().map(|r| r.val_acc).collect();
    let chart =
        line_chart(&[Series { ys: &train, color: PALETTE[0] }, Series { ys: &val, color: PALETTE[1] }], 480, 320)?;
    save_png(&chart, &out.join("accuracy.png"))?;
    Ok(())
}

fn write_report(report: &EvaluationReport, out: &Path) -> Result<()> {
    report.save(out)?;
    save_png(&confusion_heatmap(&report.matrix, 40), &out.join("confusion_matrix.png"))?;
    Ok(())
}

fn cmd_train(d: DataArgs, t: TrainFlags, epsilon: Option<f64>, out: &Path) -> Result<()> {
    let provider = WeightsProvider::from_env();
    let mut classifier = Classifier::build(t.backbone()?, &provider, t.seed)?;
    let loaded = load_data(&d)?;
    prepare_out(out)?;
    loaded.split.save(&out.join("split.json"))?;
    let config = t.config();
    let outcome = match epsilon {
        None => fit(&mut classifier, &loaded.data, &config),
        Some(eps) => adversarial_fit(&mut classifier, &loaded.data, &config.with_epsilon(eps)),
    };
    let outcome = match outcome {
        Ok(o) => o,
        Err(nailguard::Error::Diverged { epoch, reason, history }) => {
            history.save(out)?;
            bail!("training diverged at epoch {epoch}: {reason}");
        }
        Err(e) => return Err(e.into()),
    };
    outcome.checkpoint.save(&out.join("checkpoint"))?;
    outcome.history.save(out)?;
    write_history_plot(&outcome, out)?;
    if !loaded.data.test.is_empty() {
        let eval = evaluate(&classifier, &loaded.data.store, &loaded.data.test, &loaded.manifest.taxonomy)?;
        write_report(&eval.report, &out.join("test"))?;
        println!("test accuracy {:.4}", eval.report.accuracy);
    }
    println!(
        "best epoch {} of {}; checkpoint in {}",
        outcome.history.best_epoch,
        outcome.history.records.len(),
        out.join("checkpoint").display()
    );
    Ok(())
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    let provider = WeightsProvider::from_env();
    let arch = a.train.backbone()?;
    let seed = a.train.seed;
    let loaded = load_data(&a.data)?;
    prepare_out(&a.out)?;
    let grid = HyperGrid { learning_rates: a.lrs.clone(), batch_sizes: a.batch_sizes.clone() };
    let sweep =
        hyperparameter_sweep(|| Classifier::build(arch, &provider, seed), &loaded.data, &a.train.config(), &grid);
    let sweep = match sweep {
        Ok(s) => s,
        Err(nailguard::Error::SweepFailed { leaderboard }) => {
            write_json(&a.out.join("leaderboard.json"), &leaderboard)?;
            bail!("every configuration failed");
        }
        Err(e) => return Err(e.into()),
    };
    write_json(&a.out.join("leaderboard.json"), &sweep.leaderboard)?;
    let mut w = csv_writer(&a.out.join("leaderboard.csv"))?;
    w.write_record(["learning_rate", "batch_size", "best_val_accuracy", "best_val_loss", "best_epoch", "error"])?;
    for r in &sweep.leaderboard {
        w.serialize((r.learning_rate, r.batch_size, r.best_val_accuracy, r.best_val_loss, r.best_epoch, &r.error))?;
    }
    w.flush()?;
    write_json(&a.out.join("best_config.json"), &sweep.best)?;
    println!("best: lr {} batch {}", sweep.best.learning_rate, sweep.best.batch_size);
    Ok(())
}

fn cmd_adv_sweep(a: AdvSweepArgs) -> Result<()> {
    let provider = WeightsProvider::from_env();
    let arch = a.train.backbone()?;
    let seed = a.train.seed;
    let loaded = load_data(&a.data)?;
    prepare_out(&a.out)?;
    let (table, _) =
        epsilon_sweep(|| Classifier::build(arch, &provider, seed), &loaded.data, &a.train.config(), &a.epsilons)?;
    table.save(&a.out)?;
    let acc: Vec<f64> = table.rows.iter().map(|r| r.val_accuracy.unwrap_or(f64::NAN)).collect();
    let loss: Vec<f64> = table.rows.iter().map(|r| r.val_loss.unwrap_or(f64::NAN)).collect();
    if acc.iter().any(|v| v.is_finite()) {
        save_png(&line_chart(&[Series { ys: &acc, color: PALETTE[2] }], 480, 320)?, &a.out.join("val_accuracy.png"))?;
        save_png(&line_chart(&[Series { ys: &loss, color: PALETTE[3] }], 480, 320)?, &a.out.join("val_loss.png"))?;
    }
    for r in &table.rows {
        match &r.error {
            None => println!(
                "eps {:<5} val_loss {:.4} val_acc {:.4} epochs {}",
                r.epsilon,
                r.val_loss.unwrap_or(f64::NAN),
                r.val_accuracy.unwrap_or(f64::NAN),
                r.optimal_epochs.unwrap_or(0)
            ),
            Some(e) => println!("eps {:<5} failed: {e}", r.epsilon),
        }
    }
    if let Some(best) = table.best() {
        println!("best epsilon {}", best.epsilon);
    }
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    let provider = WeightsProvider::from_env();
    let classifier = Classifier::load(&a.checkpoint, &LabelTaxonomy::nail(), &provider)?;
    let loaded = load_data(&a.data)?;
    prepare_out(&a.out)?;
    let eval = evaluate(&classifier, &loaded.data.store, &loaded.data.test, &loaded.manifest.taxonomy)?;
    write_report(&eval.report, &a.out)?;
    for c in &eval.report.per_category {
        println!("{:28} {:.2} {:.2} {:.2} {}", c.category, c.precision, c.recall, c.f1, c.support);
    }
    println!("accuracy {:.4}", eval.report.accuracy);
    Ok(())
}

fn cmd_compare(a: CompareArgs) -> Result<()> {
    let mut results = Vec::new();
    for spec in &a.reports {
        let (name, path) = spec.split_once('=').with_context(|| format!("--report expects NAME=PATH, got {spec:?}"))?;
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {path}"))?;
        let report: EvaluationReport =
            serde_json::from_str(&text).with_context(|| format!("{path} is not a report"))?;
        results.push(ModelResult { name: name.to_string(), train_accuracy: None, val_accuracy: None, test: report });
    }
    prepare_out(&a.out)?;
    let table = compare_models(&results, !a.no_reference);
    write_json(&a.out.join("comparison.json"), &table)?;
    table.write_csv(std::fs::File::create(a.out.join("comparison.csv"))?)?;
    for r in &table.rows {
        let tag = if r.reproduced { "" } else { " (not reproduced)" };
        println!("{:32} {:.4}{tag}", r.model, r.test_accuracy);
    }
    Ok(())
}

fn parse_grid(s: &str) -> Result<(usize, usize)> {
    let (r, c) = s.split_once(['x', 'X']).with_context(|| format!("grid must be ROWSxCOLS, got {s:?}"))?;
    Ok((r.trim().parse()?, c.trim().parse()?))
}

fn cmd_explain(a: ExplainArgs) -> Result<()> {
    let provider = WeightsProvider::from_env();
    let classifier = Classifier::load(&a.checkpoint, &LabelTaxonomy::nail(), &provider)?;
    let bytes = std::fs::read(&a.image).with_context(|| format!("cannot read {}", a.image.display()))?;
    let image = load_and_resize(&bytes, &a.image.to_string_lossy())?;
    let probs = classifier.predict(&image)?;
    let taxonomy = classifier.taxonomy().clone();
    let target = match &a.target {
        Some(t) => taxonomy.resolve(t).with_context(|| format!("unknown category {t:?}"))?,
        None => nailguard::models::argmax(&probs),
    };
    let target_name = taxonomy.name(target).expect("index in range").to_string();
    let method: AttributionMethod = a.method.parse()?;
    prepare_out(&a.out)?;
    let (map, export) = match method {
        AttributionMethod::Gradcam => {
            let map = grad_cam(&classifier, &image, target)?;
            let export = ExplanationExport::gradcam(&map, &target_name);
            (map, export)
        }
        AttributionMethod::Shapley => {
            let (rows, cols) = parse_grid(&a.grid)?;
            let seg = segment_grid(rows, cols)?;
            let mode = if a.permutations == 0 {
                ShapleyMode::Exact
            } else {
                ShapleyMode::Sampled { permutations: a.permutations, seed: a.seed }
            };
            let baseline = if a.gray_baseline { Baseline::Gray } else { Baseline::default() };
            let result = shapley_attribution(&classifier, &image, &seg, target, mode, baseline)?;
            let export = ExplanationExport::shapley(&result, &seg, &target_name);
            (to_pixel_map(&result, &seg, target), export)
        }
    };
    write_json(&a.out.join("explanation.json"), &export)?;
    std::fs::write(a.out.join("overlay.png"), overlay(&image, &map, DEFAULT_ALPHA)?)?;
    println!("{} for {target_name} (p = {:.3}) in {}", a.method, probs[target], a.out.display());
    Ok(())
}

fn cmd_serve(a: ServeArgs) -> Result<()> {
    let store = CaseStore::open(&a.store)?;
    let mut triage = Triage::new(store, Arc::new(SystemClock), SeverityWeights::default());
    if a.models.is_dir() {
        let n = triage.register_dir(&a.models, &WeightsProvider::from_env())?;
        log::info!("registered {n} models from {}", a.models.display());
    } else {
        log::warn!("model directory {} not found; submissions will be rejected", a.models.display());
    }
    if let Some(id) = &a.activate {
        triage.activate(id)?;
    }
    let app = router(Arc::new(triage), token_from_env());
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(nailguard_service::serve(app, a.addr))?;
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let spec = SynthSpec { per_category: a.per_category, seed: a.seed, ..SynthSpec::default() };
    let report = generate(&spec, &a.out)?;
    println!("wrote {} images to {}", report.files.len(), a.out.display());
    Ok(())
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    Ok(csv::Writer::from_path(path)?)
}
