//! Confusion matrices, per-category reports and model comparison tables.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{write_json, Partition};
use crate::error::{Error, Result};
use crate::models::{argmax, Classifier};
use crate::pipeline::{make_batches, AugmentationConfig, ImageStore};
use crate::taxonomy::{LabelTaxonomy, NUM_CLASSES};

/// `counts[true][predicted]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let n = counts.len();
        if n == 0 || counts.iter().any(|r| r.len() != n) {
            return Err(Error::Shape("confusion matrix must be square and non-empty".into()));
        }
        Ok(Self { counts })
    }

    /// Counts label pairs over `n_classes` categories.
    pub fn from_labels(truth: &[usize], predicted: &[usize], n_classes: usize) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::Shape(format!("{} true labels vs {} predictions", truth.len(), predicted.len())));
        }
        let mut counts = vec![vec![0u64; n_classes]; n_classes];
        for (&t, &p) in truth.iter().zip(predicted) {
            if t >= n_classes || p >= n_classes {
                return Err(Error::Label(format!("label pair ({t}, {p}) outside 0..{n_classes}")));
            }
            counts[t][p] += 1;
        }
        Ok(Self { counts })
    }

    pub fn n_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n_classes()).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    pub fn col_sum(&self, j: usize) -> u64 {
        self.counts.iter().map(|r| r[j]).sum()
    }

    pub fn write_csv<W: Write>(&self, out: W, names: &[String]) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["true\\predicted".to_string()];
        header.extend(names.iter().cloned());
        w.write_record(&header)?;
        for (name, row) in names.iter().zip(&self.counts) {
            let mut rec = vec![name.clone()];
            rec.extend(row.iter().map(u64::to_string));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// Confusion matrix over the six nail categories.
pub fn confusion_matrix(truth: &[usize], predicted: &[usize]) -> Result<ConfusionMatrix> {
    ConfusionMatrix::from_labels(truth, predicted, NUM_CLASSES)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryMetrics {
    pub category: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub matrix: ConfusionMatrix,
    pub per_category: Vec<CategoryMetrics>,
    pub accuracy: f64,
    /// Unweighted means over categories (not part of the per-category table).
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub total: u64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-category precision, recall and F1 from a confusion matrix. Any
/// metric with a zero denominator is 0.
pub fn classification_report(m: &ConfusionMatrix) -> Result<EvaluationReport> {
    classification_report_named(m, None)
}

pub fn classification_report_named(m: &ConfusionMatrix, taxonomy: Option<&LabelTaxonomy>) -> Result<EvaluationReport> {
    let total = m.total();
    if total == 0 {
        return Err(Error::Empty("confusion matrix has no samples".into()));
    }
    let n = m.n_classes();
    let per_category: Vec<CategoryMetrics> = (0..n)
        .map(|j| {
            let tp = m.counts[j][j];
            let precision = ratio(tp, m.col_sum(j));
            let recall = ratio(tp, m.row_sum(j));
            let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
            CategoryMetrics {
                category: taxonomy.and_then(|t| t.name(j)).map_or_else(|| j.to_string(), str::to_string),
                precision,
                recall,
                f1,
                support: m.row_sum(j),
            }
        })
        .collect();
    let mean = |f: fn(&CategoryMetrics) -> f64| per_category.iter().map(f).sum::<f64>() / n as f64;
    Ok(EvaluationReport {
        accuracy: ratio(m.trace(), total),
        macro_precision: mean(|c| c.precision),
        macro_recall: mean(|c| c.recall),
        macro_f1: mean(|c| c.f1),
        matrix: m.clone(),
        per_category,
        total,
    })
}

impl EvaluationReport {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["category", "precision", "recall", "f1", "support"])?;
        for c in &self.per_category {
            w.serialize((&c.category, c.precision, c.recall, c.f1, c.support))?;
        }
        w.serialize(("macro_avg", self.macro_precision, self.macro_recall, self.macro_f1, self.total))?;
        w.serialize(("accuracy", "", "", self.accuracy, self.total))?;
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    /// Writes `report.json`, `report.csv` and `confusion_matrix.csv`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_json(&dir.join("report.json"), self)?;
        let path = dir.join("report.csv");
        self.write_csv(std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?)?;
        let names: Vec<String> = self.per_category.iter().map(|c| c.category.clone()).collect();
        let path = dir.join("confusion_matrix.csv");
        self.matrix.write_csv(std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?, &names)
    }
}

/// Predictions and report over a partition.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: EvaluationReport,
    pub truth: Vec<usize>,
    pub predicted: Vec<usize>,
}

/// Evaluates in a fixed order without augmentation. The classifier's
/// taxonomy must equal `expected`.
pub fn evaluate(
    classifier: &Classifier,
    store: &ImageStore,
    ids: &[String],
    expected: &LabelTaxonomy,
) -> Result<Evaluation> {
    if classifier.taxonomy() != expected {
        return Err(Error::CheckpointMismatch("classifier taxonomy differs from the dataset taxonomy".into()));
    }
    if ids.is_empty() {
        return Err(Error::Empty("test partition is empty".into()));
    }
    let mut truth = Vec::with_capacity(ids.len());
    let mut predicted = Vec::with_capacity(ids.len());
    for batch in make_batches(store, ids, Partition::Test, 32, 0, &AugmentationConfig::disabled())? {
        let batch = batch?;
        let out = classifier.forward(&batch)?;
        truth.extend(batch.categories()?);
        predicted.extend(out.probs.iter().map(|p| argmax(p)));
    }
    let matrix = confusion_matrix(&truth, &predicted)?;
    Ok(Evaluation { report: classification_report_named(&matrix, Some(expected))?, truth, predicted })
}

/// One trained model's results entering a comparison.
#[derive(Debug, Clone)]
pub struct ModelResult {
    pub name: String,
    pub train_accuracy: Option<f64>,
    pub val_accuracy: Option<f64>,
    pub test: EvaluationReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model: String,
    pub train_accuracy: Option<f64>,
    pub val_accuracy: Option<f64>,
    pub test_accuracy: f64,
    pub macro_f1: Option<f64>,
    /// False for published reference numbers carried as constants.
    pub reproduced: bool,
    pub source: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

#[derive(Debug, Clone, Deserialize)]
struct ReferenceFile {
    architectures: Vec<ReferenceArchitecture>,
    prior_work: Vec<ReferencePrior>,
}

#[derive(Debug, Clone, Deserialize)]
struct ReferenceArchitecture {
    model: String,
    train_accuracy: f64,
    val_accuracy: f64,
    test_accuracy: f64,
}

#[derive(Debug, Clone, Deserialize)]
struct ReferencePrior {
    source: String,
    model: String,
    test_accuracy: f64,
}

const REFERENCE_JSON: &str = include_str!("../data/reference_results.json");

/// Published accuracies shipped with the crate, marked as not reproduced.
pub fn reference_rows() -> Vec<ComparisonRow> {
    let file: ReferenceFile = serde_json::from_str(REFERENCE_JSON).expect("bundled reference data parses");
    let arch = file.architectures.into_iter().map(|a| ComparisonRow {
        model: format!("{} (published)", a.model),
        train_accuracy: Some(a.train_accuracy),
        val_accuracy: Some(a.val_accuracy),
        test_accuracy: a.test_accuracy,
        macro_f1: None,
        reproduced: false,
        source: Some("published".into()),
    });
    let prior = file.prior_work.into_iter().map(|p| ComparisonRow {
        model: p.model,
        train_accuracy: None,
        val_accuracy: None,
        test_accuracy: p.test_accuracy,
        macro_f1: None,
        reproduced: false,
        source: Some(p.source),
    });
    arch.chain(prior).collect()
}

/// Rows sorted by test accuracy (descending), ties by model name.
pub fn compare_models(results: &[ModelResult], include_reference: bool) -> ComparisonTable {
    let mut rows: Vec<ComparisonRow> = results
        .iter()
        .map(|r| ComparisonRow {
            model: r.name.clone(),
            train_accuracy: r.train_accuracy,
            val_accuracy: r.val_accuracy,
            test_accuracy: r.test.accuracy,
            macro_f1: Some(r.test.macro_f1),
            reproduced: true,
            source: None,
        })
        .collect();
    if include_reference {
        rows.extend(reference_rows());
    }
    sort_rows(&mut rows);
    ComparisonTable { rows }
}

fn sort_rows(rows: &mut [ComparisonRow]) {
    rows.sort_by(|a, b| b.test_accuracy.total_cmp(&a.test_accuracy).then_with(|| a.model.cmp(&b.model)));
}

impl ComparisonTable {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "model",
            "train_accuracy",
            "val_accuracy",
            "test_accuracy",
            "macro_f1",
            "reproduced",
            "source",
        ])?;
        for r in &self.rows {
            w.serialize((
                &r.model,
                r.train_accuracy,
                r.val_accuracy,
                r.test_accuracy,
                r.macro_f1,
                r.reproduced,
                &r.source,
            ))?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}
