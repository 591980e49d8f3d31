use serde::{Deserialize, Serialize};

/// Step-decay learning-rate schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub initial: f64,
    /// Multiplier applied once the decay point is reached.
    pub decay: f64,
    /// Fraction of total epochs after which the decay applies.
    pub decay_at: f64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self { initial: 1e-2, decay: 0.1, decay_at: 2.0 / 3.0 }
    }
}

impl LrSchedule {
    pub fn rate(&self, epoch: usize, total_epochs: usize) -> f64 {
        if (epoch as f64) >= self.decay_at * total_epochs as f64 {
            self.initial * self.decay
        } else {
            self.initial
        }
    }
}

/// SGD with heavy-ball momentum and L2 weight decay:
/// `v = m*v + (g + wd*p); p -= lr*v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdMomentum {
    pub momentum: f64,
    pub weight_decay: f64,
    pub velocity: Vec<f64>,
}

impl SgdMomentum {
    pub fn new(num_params: usize, momentum: f64, weight_decay: f64) -> Self {
        Self { momentum, weight_decay, velocity: vec![0.0; num_params] }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.velocity.len());
        for ((p, g), v) in params.iter_mut().zip(grads).zip(self.velocity.iter_mut()) {
            *v = self.momentum * *v + g + self.weight_decay * *p;
            *p -= lr * *v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_decays_at_two_thirds() {
        let s = LrSchedule::default();
        assert_eq!(s.rate(0, 30), 1e-2);
        assert_eq!(s.rate(19, 30), 1e-2);
        assert!((s.rate(20, 30) - 1e-3).abs() < 1e-18);
    }

    #[test]
    fn momentum_minimizes_quadratic() {
        let mut p = vec![5.0, -3.0];
        let mut opt = SgdMomentum::new(2, 0.9, 0.0);
        for _ in 0..300 {
            let g: Vec<f64> = p.iter().map(|x| 2.0 * x).collect();
            opt.step(&mut p, &g, 0.05);
        }
        assert!(p.iter().all(|x| x.abs() < 1e-6));
    }
}
