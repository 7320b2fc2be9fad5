use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment estimates, one pair per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<R> {
    pub m: Vec<Tensor<R>>,
    pub v: Vec<Tensor<R>>,
    pub t: u64,
}

impl<R: Real> AdamState<R> {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor<R>>) -> Self {
        let m: Vec<Tensor<R>> = params.into_iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self { v: m.clone(), m, t: 0 }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step<R: Real>(
    params: &mut [&mut Tensor<R>],
    grads: &[&Tensor<R>],
    state: &mut AdamState<R>,
    hyper: &AdamHyper,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::ShapeMismatch {
            op: "adam_step",
            lhs: vec![params.len()],
            rhs: vec![grads.len(), state.m.len()],
        });
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
        if p.shape() != g.shape() || p.shape() != m.shape() {
            return Err(Error::ShapeMismatch { op: "adam_step", lhs: p.shape().to_vec(), rhs: g.shape().to_vec() });
        }
    }
    state.t += 1;
    let f = R::from_f64_lossy;
    let (b1, b2) = (f(hyper.beta1), f(hyper.beta2));
    let c1 = f(1.0 - hyper.beta1.powi(state.t as i32));
    let c2 = f(1.0 - hyper.beta2.powi(state.t as i32));
    let (lr, eps) = (f(hyper.lr), f(hyper.eps));
    let one = R::one();
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        let pv = p.values_mut();
        for (i, &gi) in g.values().iter().enumerate() {
            let mi = b1 * m.values()[i] + (one - b1) * gi;
            let vi = b2 * v.values()[i] + (one - b2) * gi * gi;
            m.values_mut()[i] = mi;
            v.values_mut()[i] = vi;
            let m_hat = mi / c1;
            let v_hat = vi / c2;
            pv[i] = pv[i] - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SchedulerConfig {
    pub factor: f64,
    pub patience: usize,
    pub threshold: f64,
    pub min_lr: f64,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self { factor: 0.5, patience: 2, threshold: 1e-4, min_lr: 1e-6 }
    }
}

/// Reduces the learning rate when validation loss stops improving.
#[derive(Clone, Debug, PartialEq)]
pub struct PlateauScheduler {
    config: SchedulerConfig,
    lr: f64,
    best: f64,
    stale: usize,
}

impl PlateauScheduler {
    pub fn new(lr: f64, config: SchedulerConfig) -> Self {
        Self { config, lr, best: f64::INFINITY, stale: 0 }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Feeds one validation loss; returns the learning rate to use next.
    ///
    /// A loss must beat the best seen by more than `threshold` to count as an
    /// improvement. After `patience` consecutive non-improving calls the rate
    /// is multiplied by `factor` (floored at `min_lr`) and the count restarts.
    pub fn update(&mut self, val_loss: f64) -> f64 {
        if val_loss < self.best - self.config.threshold {
            self.best = val_loss;
            self.stale = 0;
        } else {
            self.stale += 1;
            if self.stale >= self.config.patience {
                self.lr = (self.lr * self.config.factor).max(self.config.min_lr);
                self.stale = 0;
            }
        }
        self.lr
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_adam(theta0: f64, lr: f64, steps: usize) -> Vec<f64> {
        let hyper = AdamHyper { lr, ..AdamHyper::default() };
        let mut theta = Tensor::scalar(theta0);
        let mut state = AdamState::new([&theta]);
        let mut path = vec![theta0];
        for _ in 0..steps {
            let g = Tensor::scalar(2.0 * theta.values()[0]);
            adam_step(&mut [&mut theta], &[&g], &mut state, &hyper).unwrap();
            path.push(theta.values()[0]);
        }
        path
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = Tensor::new(vec![2, 2], vec![1.0f64, -2.0, 3.0, 0.5]).unwrap();
        let before = p.clone();
        let mut state = AdamState::new([&p]);
        let g = Tensor::zeros(&[2, 2]);
        adam_step(&mut [&mut p], &[&g], &mut state, &AdamHyper::default()).unwrap();
        assert_eq!(p, before);
        assert_eq!(state.t, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // t = 1: m_hat = g, v_hat = g^2, step = lr * g / (|g| + eps)
        for g in [1e-2, -0.5, 3.0, 250.0] {
            let hyper = AdamHyper { lr: 1e-3, ..AdamHyper::default() };
            let mut p = Tensor::scalar(0.0f64);
            let mut state = AdamState::new([&p]);
            adam_step(&mut [&mut p], &[&Tensor::scalar(g)], &mut state, &hyper).unwrap();
            let moved = p.values()[0].abs();
            assert!((moved - 1e-3).abs() / 1e-3 < 1e-6, "g={g}: moved {moved}");
        }
    }

    #[test]
    fn converges_on_quadratic() {
        let path = scalar_adam(1.0, 0.1, 200);
        assert!(path[200].abs() < 0.05, "theta after 200 steps: {}", path[200]);
        // a single step always reduces theta^2 from a point away from the minimum
        for theta0 in [1e-2, -0.3, 1.0, 5.0] {
            let path = scalar_adam(theta0, 0.1f64.min(theta0.abs()), 1);
            assert!(path[1].powi(2) < path[0].powi(2));
        }
    }

    #[test]
    fn shape_checks() {
        let mut p = Tensor::<f64>::zeros(&[2]);
        let mut state = AdamState::new([&p]);
        let g = Tensor::zeros(&[3]);
        assert!(adam_step(&mut [&mut p], &[&g], &mut state, &AdamHyper::default()).is_err());
    }

    #[test]
    fn plateau_schedule() {
        let cfg = SchedulerConfig::default();
        let mut s = PlateauScheduler::new(1e-3, cfg.clone());
        for loss in [1.0, 0.9, 0.8, 0.5, 0.1] {
            assert_eq!(s.update(loss), 1e-3);
        }

        let mut s = PlateauScheduler::new(1e-3, cfg.clone());
        assert_eq!(s.update(1.0), 1e-3);
        assert_eq!(s.update(1.0), 1e-3);
        assert_eq!(s.update(1.0), 5e-4);

        let mut s = PlateauScheduler::new(1e-6, cfg);
        for _ in 0..10 {
            assert_eq!(s.update(2.0), 1e-6);
        }
    }
}
