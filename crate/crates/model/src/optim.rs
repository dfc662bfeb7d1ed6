//! Adam with bias-corrected moment estimates.

use candle_core::{backprop::GradStore, Tensor};

use crate::error::Result;
use crate::networks::Param;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

#[derive(Debug)]
pub struct Adam {
    config: AdamConfig,
    params: Vec<Param>,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl Adam {
    pub fn new(params: Vec<Param>, config: AdamConfig) -> Result<Self> {
        let m = params.iter().map(|p| p.var.zeros_like()).collect::<candle_core::Result<Vec<_>>>()?;
        let v = m.clone();
        Ok(Self { config, params, m, v, t: 0 })
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn moments(&self) -> (&[Tensor], &[Tensor]) {
        (&self.m, &self.v)
    }

    /// Restores state saved from an optimizer over the same parameter list.
    pub fn restore(&mut self, t: u64, m: Vec<Tensor>, v: Vec<Tensor>) {
        self.t = t;
        self.m = m;
        self.v = v;
    }

    /// Gradients of this optimizer's parameters, in parameter order.
    pub fn gradients(&self, grads: &GradStore) -> Vec<Option<Tensor>> {
        self.params.iter().map(|p| grads.get(p.var.as_tensor()).cloned()).collect()
    }

    /// Applies one update from gradients aligned with [`Adam::params`];
    /// parameters without a gradient are left untouched and keep their moments.
    pub fn step(&mut self, grads: &[Option<Tensor>]) -> Result<()> {
        self.t += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            eps,
        } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for (i, p) in self.params.iter().enumerate() {
            let Some(g) = &grads[i] else {
                continue;
            };
            // Backward-pass gradients carry their op graph; the moments must not.
            let g = &g.detach();
            let m = ((&self.m[i] * beta1)? + (g * (1.0 - beta1))?)?;
            let v = ((&self.v[i] * beta2)? + (g.sqr()? * (1.0 - beta2))?)?;
            let m_hat = (&m / c1)?;
            let v_hat = (&v / c2)?;
            let delta = (m_hat / (v_hat.sqrt()? + eps)?)?;
            p.var.set(&(p.var.as_tensor() - (delta * learning_rate)?)?)?;
            self.m[i] = m;
            self.v[i] = v;
        }
        Ok(())
    }

    pub fn step_from(&mut self, grads: &GradStore) -> Result<()> {
        let g = self.gradients(grads);
        self.step(&g)
    }
}
