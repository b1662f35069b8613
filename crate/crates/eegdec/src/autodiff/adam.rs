//! Adam optimizer (bias-corrected first/second moments).

use crate::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// One Adam update for a single parameter block. `t` is the 1-based step
/// count used for bias correction.
pub fn adam_step(
    name: &str,
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    hp: &AdamParams,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != m.len() || params.len() != v.len() {
        return Err(Error::Dimension(format!(
            "adam_step '{name}': params {}, grads {}, m {}, v {}",
            params.len(),
            grads.len(),
            m.len(),
            v.len()
        )));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::Optimization(format!(
            "non-finite gradient in parameter '{name}' at index {i}"
        )));
    }
    let bc1 = 1.0 - hp.beta1.powi(t as i32);
    let bc2 = 1.0 - hp.beta2.powi(t as i32);
    for i in 0..params.len() {
        m[i] = hp.beta1 * m[i] + (1.0 - hp.beta1) * grads[i];
        v[i] = hp.beta2 * v[i] + (1.0 - hp.beta2) * grads[i] * grads[i];
        let mhat = m[i] / bc1;
        let vhat = v[i] / bc2;
        params[i] -= hp.lr * mhat / (vhat.sqrt() + hp.eps);
    }
    Ok(())
}

/// Moment storage for a list of parameter blocks, updated in step lockstep.
#[derive(Debug, Clone)]
pub struct Adam {
    pub hp: AdamParams,
    pub t: u64,
    slots: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(hp: AdamParams, block_sizes: &[usize]) -> Self {
        let slots = block_sizes.iter().map(|&n| (vec![0.0; n], vec![0.0; n])).collect();
        Self { hp, t: 0, slots }
    }

    /// Apply one step to every block; `blocks` pairs (name, params, grads)
    /// in the same order as construction.
    pub fn step(&mut self, blocks: &mut [(&str, &mut [f64], &[f64])]) -> Result<()> {
        if blocks.len() != self.slots.len() {
            return Err(Error::Dimension(format!(
                "adam: {} blocks registered, {} provided",
                self.slots.len(),
                blocks.len()
            )));
        }
        self.t += 1;
        for ((name, params, grads), (m, v)) in blocks.iter_mut().zip(&mut self.slots) {
            adam_step(name, params, grads, m, v, self.t, &self.hp)?;
        }
        Ok(())
    }

    pub fn moments(&self) -> &[(Vec<f64>, Vec<f64>)] {
        &self.slots
    }

    pub fn restore(&mut self, t: u64, slots: Vec<(Vec<f64>, Vec<f64>)>) {
        self.t = t;
        self.slots = slots;
    }
}
