use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64, cfg: AdamConfig) -> Self {
        Self { cfg, lr, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    /// Updates `params` in place; entries with `trainable[i] == false` are
    /// left untouched.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], trainable: &[bool]) {
        self.t += 1;
        let AdamConfig { beta1, beta2, epsilon } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        for i in 0..params.len() {
            if !trainable[i] {
                continue;
            }
            let g = grads[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut opt = Adam::new(2, 0.1, AdamConfig::default());
        let mut p = vec![1.0, -1.0];
        opt.step(&mut p, &[3.0, -0.5], &[true, true]);
        assert!((p[0] - 0.9).abs() < 1e-7);
        assert!((p[1] + 0.9).abs() < 1e-7);
    }

    #[test]
    fn frozen_entries_do_not_move() {
        let mut opt = Adam::new(2, 0.1, AdamConfig::default());
        let mut p = vec![1.0, 1.0];
        opt.step(&mut p, &[1.0, 1.0], &[false, true]);
        assert_eq!(p[0], 1.0);
        assert!(p[1] < 1.0);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut opt = Adam::new(1, 0.05, AdamConfig::default());
        let mut p = vec![3.0];
        for _ in 0..2000 {
            let g = 2.0 * (p[0] - 1.0);
            opt.step(&mut p, &[g], &[true]);
        }
        assert!((p[0] - 1.0).abs() < 1e-3);
    }
}
