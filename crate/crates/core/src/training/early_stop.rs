use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop,
}

/// Patience-based early stopping on a lower-is-better metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopState {
    pub best_metric: f64,
    pub best_epoch: Option<usize>,
    pub epochs_since_improvement: usize,
    pub patience: usize,
    pub min_delta: f64,
}

impl EarlyStopState {
    pub fn new(patience: usize, min_delta: f64) -> Self {
        assert!(patience >= 1, "patience must be at least 1");
        Self { best_metric: f64::INFINITY, best_epoch: None, epochs_since_improvement: 0, patience, min_delta }
    }

    /// Records the metric of `epoch`. An epoch improves when its metric is
    /// below `best − min_delta`; training stops once `patience` consecutive
    /// epochs fail to improve.
    pub fn update(&mut self, epoch: usize, metric: f64) -> StopDecision {
        if self.best_epoch.is_none() || metric < self.best_metric - self.min_delta {
            self.best_metric = metric;
            self.best_epoch = Some(epoch);
            self.epochs_since_improvement = 0;
        } else {
            self.epochs_since_improvement += 1;
        }
        if self.epochs_since_improvement >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }

    /// True when the most recent update set a new best.
    pub fn just_improved(&self) -> bool {
        self.best_epoch.is_some() && self.epochs_since_improvement == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_sequence_stops_after_epoch_three() {
        let mut s = EarlyStopState::new(2, 1e-4);
        let decisions: Vec<_> = [1.0, 0.8, 0.85, 0.9].iter().enumerate().map(|(e, &v)| s.update(e, v)).collect();
        assert_eq!(
            decisions,
            vec![StopDecision::Continue, StopDecision::Continue, StopDecision::Continue, StopDecision::Stop]
        );
        assert_eq!(s.best_epoch, Some(1));
        assert_eq!(s.best_metric, 0.8);
    }

    #[test]
    fn strictly_decreasing_never_stops() {
        let mut s = EarlyStopState::new(1, 1e-4);
        for e in 0..200 {
            assert_eq!(s.update(e, 10.0 - e as f64 * 0.01), StopDecision::Continue);
        }
        assert_eq!(s.best_epoch, Some(199));
    }

    #[test]
    fn improvements_below_min_delta_do_not_count() {
        let mut s = EarlyStopState::new(2, 1e-4);
        s.update(0, 1.0);
        assert_eq!(s.update(1, 1.0 - 5e-5), StopDecision::Continue);
        assert_eq!(s.update(2, 1.0 - 9e-5), StopDecision::Stop);
        assert_eq!(s.best_epoch, Some(0));
    }

    #[test]
    fn nan_never_improves() {
        let mut s = EarlyStopState::new(3, 1e-4);
        s.update(0, 0.5);
        s.update(1, f64::NAN);
        assert_eq!(s.best_epoch, Some(0));
        assert_eq!(s.epochs_since_improvement, 1);
    }
}
