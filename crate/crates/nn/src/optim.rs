use std::collections::HashMap;

use ndarray::{ArrayD, Zip};

use crate::params::{Gradients, ParamKey, ParamSet, ParamStore};

/// Adam with bias correction. The defaults follow the Keras optimizer
/// (`beta1 = 0.9`, `beta2 = 0.999`, `epsilon = 1e-7`).
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    moments: HashMap<ParamKey, (ArrayD<f64>, ArrayD<f64>)>,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
            step: 0,
            moments: HashMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update of every parameter in `trainable` that has a gradient.
    /// Parameters outside `trainable` are left untouched.
    pub fn step(&mut self, stores: &mut [&mut ParamStore], grads: &Gradients, trainable: &ParamSet) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let lr = self.learning_rate;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.epsilon);
        for store in stores.iter_mut() {
            let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
            for id in ids {
                let key = store.key(id);
                if !trainable.contains(&key) {
                    continue;
                }
                let Some(g) = grads.get(&key) else { continue };
                let (m, v) = self
                    .moments
                    .entry(key)
                    .or_insert_with(|| (ArrayD::zeros(g.raw_dim()), ArrayD::zeros(g.raw_dim())));
                let value = store.value_mut(id);
                Zip::from(value)
                    .and(m)
                    .and(v)
                    .and(g)
                    .for_each(|p, m, v, &g| {
                        *m = b1 * *m + (1.0 - b1) * g;
                        *v = b2 * *v + (1.0 - b2) * g * g;
                        let mhat = *m / bc1;
                        let vhat = *v / bc2;
                        *p -= lr * mhat / (vhat.sqrt() + eps);
                    });
            }
        }
    }
}
