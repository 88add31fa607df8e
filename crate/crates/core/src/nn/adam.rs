use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 32,
            epochs: 30,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must be in [0, 1), got {b}")));
            }
        }
        if !(self.adam_epsilon > 0.0) {
            return Err(Error::Config(format!(
                "adam_epsilon must be > 0, got {}",
                self.adam_epsilon
            )));
        }
        Ok(())
    }
}

/// First and second moments, laid out like the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<Tensor>>,
    pub v: Vec<Vec<Tensor>>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &[Vec<Tensor>]) -> Self {
        let zeros = |p: &[Vec<Tensor>]| -> Vec<Vec<Tensor>> {
            p.iter()
                .map(|layer| layer.iter().map(|t| Tensor::zeros(t.dims().to_vec())).collect())
                .collect()
        };
        Self {
            m: zeros(params),
            v: zeros(params),
            step: 0,
        }
    }
}

fn check_aligned(a: &[Vec<Tensor>], b: &[Vec<Tensor>], what: &str) -> Result<()> {
    let same = a.len() == b.len()
        && a.iter()
            .zip(b)
            .all(|(x, y)| x.len() == y.len() && x.iter().zip(y).all(|(s, t)| s.dims() == t.dims()));
    if same {
        Ok(())
    } else {
        Err(Error::Shape(format!(
            "{what} are not laid out like the parameters"
        )))
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(
    params: &mut [Vec<Tensor>],
    grads: &[Vec<Tensor>],
    state: &mut AdamState,
    config: &TrainConfig,
) -> Result<()> {
    check_aligned(params, grads, "gradients")?;
    check_aligned(params, &state.m, "first moments")?;
    check_aligned(params, &state.v, "second moments")?;
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (config.adam_beta1, config.adam_beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let lr = config.learning_rate;
    let eps = config.adam_epsilon;
    for (l, layer) in params.iter_mut().enumerate() {
        for (i, p) in layer.iter_mut().enumerate() {
            let g = grads[l][i].data();
            let m = state.m[l][i].data_mut();
            let v = state.v[l][i].data_mut();
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                m[j] = b1 * m[j] + (1.0 - b1) * g[j];
                v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
    Ok(())
}
