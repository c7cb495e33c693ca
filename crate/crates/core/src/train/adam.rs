use ndarray::{ArrayD, ArrayViewD, ArrayViewMutD, Zip};
use serde::{Deserialize, Serialize};

use crate::model::{GradientSet, ModelParams};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment estimates, one tensor per learnable tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub first_moment: Vec<ArrayD<f64>>,
    pub second_moment: Vec<ArrayD<f64>>,
}

impl OptimizerState {
    pub fn new(params: &ModelParams) -> Self {
        let zeros: Vec<ArrayD<f64>> = params
            .learnable()
            .iter()
            .map(|t| ArrayD::zeros(t.raw_dim()))
            .collect();
        Self {
            step: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
        }
    }
}

/// Bias-corrected Adam update of one tensor at step `t` (1-based).
pub fn adam_update(
    param: &mut ArrayViewMutD<'_, f64>,
    grad: &ArrayViewD<'_, f64>,
    m: &mut ArrayD<f64>,
    v: &mut ArrayD<f64>,
    t: u64,
    cfg: &AdamConfig,
) {
    let c1 = 1.0 - cfg.beta1.powi(t as i32);
    let c2 = 1.0 - cfg.beta2.powi(t as i32);
    Zip::from(param)
        .and(grad)
        .and(m)
        .and(v)
        .for_each(|p, &g, m, v| {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        });
}

/// One Adam step over every learnable tensor. Nothing is modified if any
/// gradient entry is non-finite.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &GradientSet,
    state: &mut OptimizerState,
    cfg: &AdamConfig,
) -> Result<()> {
    let names = params.learnable_names();
    if grads.tensors.len() != names.len() || state.first_moment.len() != names.len() {
        return Err(Error::contract(
            "gradient/optimizer state do not match the parameters",
        ));
    }
    if let Some(i) = grads.first_non_finite() {
        return Err(Error::NonFinite(format!("gradient of {}", names[i])));
    }
    state.step += 1;
    let step = state.step;
    let mut tensors = params.learnable_mut();
    for (i, param) in tensors.iter_mut().enumerate() {
        if param.shape() != grads.tensors[i].shape() {
            return Err(Error::contract(format!(
                "gradient of {} has the wrong shape",
                names[i]
            )));
        }
        adam_update(
            param,
            &grads.tensors[i].view(),
            &mut state.first_moment[i],
            &mut state.second_moment[i],
            step,
            cfg,
        );
    }
    Ok(())
}
