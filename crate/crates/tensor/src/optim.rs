use std::collections::BTreeMap;

use crate::error::{Result, TensorError};
use crate::params::ParamStore;
use crate::real::Real;
use crate::tensor::Tensor;

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
            lr: 2.0e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates and step counter; persisted with checkpoints so training can resume.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: BTreeMap<String, Tensor<T>>,
    pub v: BTreeMap<String, Tensor<T>>,
}

#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub state: AdamState<T>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            state: AdamState {
                step: 0,
                m: BTreeMap::new(),
                v: BTreeMap::new(),
            },
        }
    }

    pub fn with_state(config: AdamConfig, state: AdamState<T>) -> Self {
        Adam { config, state }
    }

    /// One bias-corrected Adam update. Parameters without a gradient are left untouched.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &BTreeMap<String, Tensor<T>>) -> Result<()> {
        self.state.step += 1;
        let t = self.state.step as i32;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let (ob1, ob2) = (T::of(1.0 - c.beta1), T::of(1.0 - c.beta2));
        let step_size = T::of(c.lr / bc1);
        let inv_bc2 = T::of(1.0 / bc2);
        let eps = T::of(c.eps);
        for (name, g) in grads {
            let p = params
                .get_mut(name)
                .ok_or_else(|| TensorError::UnknownParam(name.clone()))?;
            if p.shape() != g.shape() {
                return Err(TensorError::invalid(
                    "adam",
                    format!("gradient for `{name}` has shape {:?}, parameter {:?}", g.shape(), p.shape()),
                ));
            }
            let m = self
                .state
                .m
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(g.shape()));
            let v = self
                .state
                .v
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(g.shape()));
            for (((pv, mv), vv), &gv) in p
                .data_mut()
                .iter_mut()
                .zip(m.data_mut())
                .zip(v.data_mut())
                .zip(g.data())
            {
                *mv = b1 * *mv + ob1 * gv;
                *vv = b2 * *vv + ob2 * gv * gv;
                let delta = step_size * *mv / ((*vv * inv_bc2).sqrt() + eps);
                // A zero step must not rewrite -0.0 as +0.0.
                if delta != T::zero() {
                    *pv = *pv - delta;
                }
            }
        }
        Ok(())
    }
}
