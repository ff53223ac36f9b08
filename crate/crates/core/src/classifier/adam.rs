use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};

use super::params::Weights;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one buffer per parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub step: u64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: AdamConfig, shapes: impl IntoIterator<Item = usize>) -> Self {
        let zeros: Vec<Vec<T>> = shapes.into_iter().map(|n| vec![T::zero(); n]).collect();
        AdamState {
            config,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn for_weights(config: AdamConfig, weights: &Weights<T>) -> Self {
        Self::new(config, weights.blocks().iter().map(|b| b.values.len()))
    }
}

/// One bias-corrected Adam update over parallel lists of parameter and gradient slices.
pub fn adam_update<T: Scalar>(
    params: Vec<&mut [T]>,
    grads: Vec<&[T]>,
    state: &mut AdamState<T>,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first.len() {
        return Err(Error::Shape(
            "optimizer block count differs from parameters".into(),
        ));
    }
    state.step += 1;
    let c = state.config;
    let (b1, b2): (T, T) = (lit(c.beta1), lit(c.beta2));
    let correction1 = T::one() - b1.powi(state.step as i32);
    let correction2 = T::one() - b2.powi(state.step as i32);
    let (lr, eps): (T, T) = (lit(c.lr), lit(c.eps));
    for (((p, g), m), v) in params
        .into_iter()
        .zip(grads)
        .zip(&mut state.first)
        .zip(&mut state.second)
    {
        if p.len() != g.len() || p.len() != m.len() {
            return Err(Error::Shape(
                "optimizer block size differs from parameters".into(),
            ));
        }
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (T::one() - b1) * g[i];
            v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
            let m_hat = m[i] / correction1;
            let v_hat = v[i] / correction2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

pub fn adam_step<T: Scalar>(
    weights: &mut Weights<T>,
    grads: &Weights<T>,
    state: &mut AdamState<T>,
) -> Result<()> {
    let g: Vec<&[T]> = grads.blocks().into_iter().map(|b| b.values).collect();
    adam_update(weights.blocks_mut(), g, state)
}
