//! Adam with bias correction, operating over the trainable slice of a
//! parameter registry.

use crate::params::ParamStore;
use crate::Scalar;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("adam: {0}")]
    Validation(String),
}

/// First/second-moment state, aligned with the registry's trainable
/// entries in order.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Vec<Scalar>>,
    v: Vec<Vec<Scalar>>,
    t: u64,
    pub beta1: Scalar,
    pub beta2: Scalar,
    pub epsilon: Scalar,
}

impl AdamState {
    pub fn new(store: &ParamStore, beta1: Scalar, beta2: Scalar, epsilon: Scalar) -> AdamState {
        let sizes: Vec<usize> = store
            .iter()
            .filter(|(_, p)| p.trainable)
            .map(|(_, p)| p.numel())
            .collect();
        AdamState {
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
            beta1,
            beta2,
            epsilon,
        }
    }

    /// One update over all trainable parameters. `grads` must align with
    /// the registry's trainable entries (as produced by `collect_grads`).
    pub fn step(
        &mut self,
        store: &mut ParamStore,
        grads: &[Vec<Scalar>],
        lr: Scalar,
    ) -> Result<(), OptimError> {
        if grads.len() != self.m.len() {
            return Err(OptimError::Validation(format!(
                "{} gradient buffers for {} parameters",
                grads.len(),
                self.m.len()
            )));
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let trainable: Vec<usize> = store
            .iter()
            .filter(|(_, p)| p.trainable)
            .map(|(id, _)| id.0)
            .collect();
        for (slot, &pidx) in trainable.iter().enumerate() {
            let g = &grads[slot];
            let p = store.get_mut(crate::params::ParamId(pidx));
            if g.len() != p.numel() {
                return Err(OptimError::Validation(format!(
                    "gradient for {} has {} values, expected {}",
                    p.name,
                    g.len(),
                    p.numel()
                )));
            }
            let m = &mut self.m[slot];
            let v = &mut self.v[slot];
            for i in 0..g.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p.data[i] -= lr * mhat / (vhat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }
}
