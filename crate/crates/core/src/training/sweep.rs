use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{fit, FitOutcome, TrainingConfig};
use crate::error::{Error, Result};
use crate::models::Classifier;
use crate::pipeline::SplitData;

/// The seven perturbation budgets of the reference adversarial sweep.
pub const DEFAULT_EPSILONS: [f64; 7] = [0.0, 0.1, 0.12, 0.14, 0.16, 0.18, 0.2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub epsilon: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
    /// `best_epoch + 1`, i.e. the number of epochs up to the restored weights.
    pub optimal_epochs: Option<usize>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    /// Highest validation accuracy; ties go to the lower validation loss.
    pub fn best(&self) -> Option<&SweepRow> {
        self.rows
            .iter()
            .filter_map(|r| Some((r, r.val_accuracy?, r.val_loss?)))
            .fold(None, |best: Option<(&SweepRow, f64, f64)>, cand| match best {
                Some(b) if (b.1, -b.2) >= (cand.1, -cand.2) => Some(b),
                _ => Some(cand),
            })
            .map(|(r, _, _)| r)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["epsilon", "val_loss", "val_accuracy", "optimal_epochs"])?;
        for r in &self.rows {
            w.serialize((r.epsilon, r.val_loss, r.val_accuracy, r.optimal_epochs))?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("epsilon_sweep.csv");
        let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        self.write_csv(file)?;
        crate::dataset::write_json(&dir.join("epsilon_sweep.json"), self)
    }
}

/// Trains a fresh classifier per `ε` with adversarial training. A failing
/// run is recorded in its row and the sweep continues.
pub fn epsilon_sweep<F>(
    mut factory: F,
    data: &SplitData,
    config: &TrainingConfig,
    epsilons: &[f64],
) -> Result<(SweepTable, Vec<Option<FitOutcome>>)>
where
    F: FnMut() -> Result<Classifier>,
{
    if epsilons.is_empty() {
        return Err(Error::Config("epsilon list is empty".into()));
    }
    let mut table = SweepTable::default();
    let mut outcomes = Vec::new();
    for &epsilon in epsilons {
        let cfg = config.with_epsilon(epsilon);
        let run = factory().and_then(|mut c| fit(&mut c, data, &cfg));
        match run {
            Ok(outcome) => {
                let best = outcome.history.best().copied().expect("non-empty history");
                table.rows.push(SweepRow {
                    epsilon,
                    val_loss: Some(best.val_loss),
                    val_accuracy: Some(best.val_acc),
                    optimal_epochs: Some(outcome.history.best_epoch + 1),
                    error: None,
                });
                outcomes.push(Some(outcome));
            }
            Err(e) => {
                log::warn!("epsilon {epsilon} failed: {e}");
                table.rows.push(SweepRow {
                    epsilon,
                    val_loss: None,
                    val_accuracy: None,
                    optimal_epochs: None,
                    error: Some(e.to_string()),
                });
                outcomes.push(None);
            }
        }
    }
    Ok((table, outcomes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperGrid {
    pub learning_rates: Vec<f64>,
    pub batch_sizes: Vec<usize>,
}

impl Default for HyperGrid {
    fn default() -> Self {
        Self { learning_rates: vec![0.1, 0.01, 0.001, 0.0001], batch_sizes: vec![16, 32, 64] }
    }
}

impl HyperGrid {
    pub fn configs(&self, base: &TrainingConfig) -> Vec<TrainingConfig> {
        let mut out = Vec::new();
        for &lr in &self.learning_rates {
            for &bs in &self.batch_sizes {
                out.push(TrainingConfig { learning_rate: lr, batch_size: bs, ..base.clone() });
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardRow {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub best_val_accuracy: Option<f64>,
    pub best_val_loss: Option<f64>,
    pub best_epoch: Option<usize>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct HyperSweep {
    pub best: TrainingConfig,
    /// Sorted best first.
    pub leaderboard: Vec<LeaderboardRow>,
}

/// Orders leaderboard rows: higher accuracy, then lower learning rate, then
/// smaller batch. Failed runs sort last.
fn rank(a: &LeaderboardRow, b: &LeaderboardRow) -> std::cmp::Ordering {
    let acc = |r: &LeaderboardRow| r.best_val_accuracy.unwrap_or(f64::NEG_INFINITY);
    acc(b).total_cmp(&acc(a)).then(a.learning_rate.total_cmp(&b.learning_rate)).then(a.batch_size.cmp(&b.batch_size))
}

/// Grid search over learning rate × batch size, one fresh classifier per
/// configuration.
pub fn hyperparameter_sweep<F>(
    mut factory: F,
    data: &SplitData,
    base: &TrainingConfig,
    grid: &HyperGrid,
) -> Result<HyperSweep>
where
    F: FnMut() -> Result<Classifier>,
{
    let configs = grid.configs(base);
    if configs.is_empty() {
        return Err(Error::Config("hyperparameter grid is empty".into()));
    }
    let mut leaderboard = Vec::new();
    for cfg in &configs {
        let run = factory().and_then(|mut c| fit(&mut c, data, cfg));
        let row = match run {
            Ok(outcome) => {
                let best = outcome.history.best().copied().expect("non-empty history");
                LeaderboardRow {
                    learning_rate: cfg.learning_rate,
                    batch_size: cfg.batch_size,
                    best_val_accuracy: Some(best.val_acc),
                    best_val_loss: Some(best.val_loss),
                    best_epoch: Some(outcome.history.best_epoch),
                    error: None,
                }
            }
            Err(e) => {
                log::warn!("lr {} batch {} failed: {e}", cfg.learning_rate, cfg.batch_size);
                LeaderboardRow {
                    learning_rate: cfg.learning_rate,
                    batch_size: cfg.batch_size,
                    best_val_accuracy: None,
                    best_val_loss: None,
                    best_epoch: None,
                    error: Some(e.to_string()),
                }
            }
        };
        leaderboard.push(row);
    }
    leaderboard.sort_by(rank);
    let winner = &leaderboard[0];
    if winner.best_val_accuracy.is_none() {
        return Err(Error::SweepFailed { leaderboard });
    }
    let best = configs
        .into_iter()
        .find(|c| c.learning_rate == winner.learning_rate && c.batch_size == winner.batch_size)
        .expect("winner came from the grid");
    Ok(HyperSweep { best, leaderboard })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(eps: f64, loss: f64, acc: f64) -> SweepRow {
        SweepRow { epsilon: eps, val_loss: Some(loss), val_accuracy: Some(acc), optimal_epochs: Some(1), error: None }
    }

    #[test]
    fn best_row_breaks_ties_on_loss() {
        let table = SweepTable { rows: vec![row(0.0, 0.3, 0.9), row(0.1, 0.2, 0.9), row(0.2, 0.1, 0.8)] };
        assert_eq!(table.best().unwrap().epsilon, 0.1);
    }

    #[test]
    fn failed_rows_are_never_best() {
        let mut failed = row(0.3, 0.0, 1.0);
        failed.val_accuracy = None;
        let table = SweepTable { rows: vec![failed, row(0.0, 0.5, 0.5)] };
        assert_eq!(table.best().unwrap().epsilon, 0.0);
    }

    #[test]
    fn default_grid_has_twelve_configs() {
        let grid = HyperGrid::default();
        let configs = grid.configs(&TrainingConfig::default());
        assert_eq!(configs.len(), 12);
        assert!(configs.iter().any(|c| c.learning_rate == 1e-4 && c.batch_size == 32));
    }

    #[test]
    fn leaderboard_ties_prefer_lower_lr_then_smaller_batch() {
        let mk = |lr, bs, acc| LeaderboardRow {
            learning_rate: lr,
            batch_size: bs,
            best_val_accuracy: acc,
            best_val_loss: Some(0.1),
            best_epoch: Some(0),
            error: None,
        };
        let mut rows = [
            mk(0.01, 16, Some(0.9)),
            mk(0.001, 64, Some(0.9)),
            mk(0.001, 32, Some(0.9)),
            mk(0.1, 16, None),
            mk(0.0001, 16, Some(0.8)),
        ];
        rows.sort_by(rank);
        assert_eq!((rows[0].learning_rate, rows[0].batch_size), (0.001, 32));
        assert_eq!((rows[1].learning_rate, rows[1].batch_size), (0.001, 64));
        assert_eq!(rows[4].best_val_accuracy, None);
    }

    #[test]
    fn csv_has_the_four_sweep_columns() {
        let table = SweepTable { rows: vec![row(0.14, 0.2031, 0.9594)] };
        let mut buf = Vec::new();
        table.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "epsilon,val_loss,val_accuracy,optimal_epochs");
        assert_eq!(text.lines().nth(1).unwrap(), "0.14,0.2031,0.9594,1");
    }
}
