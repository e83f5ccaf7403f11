use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tensor::{Element, Tensor};

/// Optimizer selection with its hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerConfig {
    /// Adaptive moment estimation.
    Adam { learning_rate: f64, beta1: f64, beta2: f64, eps: f64 },
    /// Root-mean-square propagation.
    RmsProp { learning_rate: f64, rho: f64, eps: f64 },
}

impl OptimizerConfig {
    pub fn adam(learning_rate: f64, beta1: f64, beta2: f64) -> Self {
        OptimizerConfig::Adam { learning_rate, beta1, beta2, eps: 1e-8 }
    }

    pub fn rmsprop(learning_rate: f64) -> Self {
        OptimizerConfig::RmsProp { learning_rate, rho: 0.9, eps: 1e-7 }
    }

    pub fn learning_rate(&self) -> f64 {
        match *self {
            OptimizerConfig::Adam { learning_rate, .. } | OptimizerConfig::RmsProp { learning_rate, .. } => learning_rate,
        }
    }

    pub fn with_learning_rate(mut self, lr: f64) -> Self {
        match &mut self {
            OptimizerConfig::Adam { learning_rate, .. } | OptimizerConfig::RmsProp { learning_rate, .. } => *learning_rate = lr,
        }
        self
    }

    pub fn build<T: Element>(&self, params: &ParamStore<T>) -> Optimizer<T> {
        let zeros = || params.tensors().iter().map(|t| vec![T::zero(); t.numel()]).collect::<Vec<_>>();
        Optimizer { config: *self, first: zeros(), second: zeros(), steps: 0 }
    }
}

/// Optimizer state for one [`ParamStore`].
pub struct Optimizer<T> {
    config: OptimizerConfig,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
    steps: u64,
}

impl<T: Element> Optimizer<T> {
    /// Apply one update. `grads[i]` belongs to parameter `i`; `None` leaves it untouched.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &[Option<Tensor<T>>]) {
        assert_eq!(grads.len(), params.len(), "one gradient slot per parameter");
        self.steps += 1;
        let t = self.steps as f64;
        for (i, (p, g)) in params.tensors_mut().iter_mut().zip(grads).enumerate() {
            let Some(g) = g else { continue };
            let m = &mut self.first[i];
            let v = &mut self.second[i];
            match self.config {
                OptimizerConfig::Adam { learning_rate, beta1, beta2, eps } => {
                    let (b1, b2) = (T::lit(beta1), T::lit(beta2));
                    let step = T::lit(learning_rate / (1.0 - beta1.powf(t)));
                    let corr2 = T::lit(1.0 / (1.0 - beta2.powf(t)));
                    let eps = T::lit(eps);
                    for (((w, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *mv = b1 * *mv + (T::one() - b1) * gv;
                        *vv = b2 * *vv + (T::one() - b2) * gv * gv;
                        *w = *w - step * *mv / ((*vv * corr2).sqrt() + eps);
                    }
                }
                OptimizerConfig::RmsProp { learning_rate, rho, eps } => {
                    let (lr, rho, eps) = (T::lit(learning_rate), T::lit(rho), T::lit(eps));
                    for ((w, &gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.iter_mut()) {
                        *vv = rho * *vv + (T::one() - rho) * gv * gv;
                        *w = *w - lr * gv / (vv.sqrt() + eps);
                    }
                }
            }
        }
    }
}
