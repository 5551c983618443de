use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 0.01,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::field(name, format!("{b} not in (0, 1)")));
            }
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::field(
                "lr",
                format!("{} is not a finite non-negative rate", self.lr),
            ));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::field("weight_decay", "must be >= 0"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::field("epsilon", "must be > 0"));
        }
        Ok(())
    }
}

/// Moment accumulators for one parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
    pub step_count: u64,
}

impl AdamState {
    /// `shapes` lists the length of every parameter slice in the group.
    pub fn new(shapes: &[usize], config: AdamConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            first_moment: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            second_moment: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            step_count: 0,
        })
    }
}

/// One Adam update with decoupled weight decay:
/// `w ← w − lr·(m̂ / (√v̂ + ε) + λ·w)`.
pub fn adam_step(params: &mut [&mut [f64]], grads: &[&[f64]], state: &mut AdamState) -> Result<()> {
    adam_step_with_lr(params, grads, state, state.config.lr)
}

/// As [`adam_step`] but with an explicit learning rate (for schedules).
pub fn adam_step_with_lr(
    params: &mut [&mut [f64]],
    grads: &[&[f64]],
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first_moment.len() {
        return Err(Error::dims(
            "adam_step groups",
            state.first_moment.len(),
            params.len(),
        ));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() || p.len() != state.first_moment[i].len() {
            return Err(Error::dims(
                format!("adam_step slice {i}"),
                state.first_moment[i].len(),
                g.len(),
            ));
        }
    }
    state.step_count += 1;
    let AdamConfig {
        beta1,
        beta2,
        weight_decay,
        epsilon,
        ..
    } = state.config;
    let t = state.step_count as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = &mut state.first_moment[i];
        let v = &mut state.second_moment[i];
        for j in 0..p.len() {
            let gj = g[j];
            m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
            v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            p[j] -= lr * (m_hat / (v_hat.sqrt() + epsilon) + weight_decay * p[j]);
        }
    }
    Ok(())
}
