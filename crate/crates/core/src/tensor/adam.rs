//! Adam with bias correction, plus global-norm gradient clipping.

use std::collections::BTreeMap;

use super::ParamStore;
use crate::error::{Result, SldsError};

#[derive(Debug, Clone, Copy)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment buffers keyed like the parameter store, plus the
/// shared step counter.
#[derive(Debug, Clone, Default)]
pub struct AdamState {
    pub t: u64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// Rescales all gradients in place so their joint L2 norm is at most
/// `max_norm`; returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut BTreeMap<String, Vec<f64>>, max_norm: f64) -> f64 {
    let sq: f64 = grads.values().flat_map(|g| g.iter().map(|x| x * x)).sum();
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads.values_mut() {
            for x in g.iter_mut() {
                *x *= s;
            }
        }
    }
    norm
}

/// One optimizer step over every parameter in the store. Parameters
/// missing from `grads` are treated as zero-gradient (their momentum
/// still decays). Non-finite gradients abort, naming the parameter.
pub fn adam_step(
    params: &mut ParamStore,
    grads: &BTreeMap<String, Vec<f64>>,
    state: &mut AdamState,
    hp: &AdamHyper,
) -> Result<()> {
    for (name, g) in grads {
        if g.iter().any(|x| !x.is_finite()) {
            return Err(SldsError::NonFiniteGrad { name: name.clone() });
        }
    }
    state.t += 1;
    let t = state.t;
    let bc1 = 1.0 - hp.beta1.powi(t as i32);
    let bc2 = 1.0 - hp.beta2.powi(t as i32);
    let names: Vec<String> = params.names().cloned().collect();
    let zero: Vec<f64> = Vec::new();
    for name in names {
        let p = params.get_mut(&name);
        let n = p.data.len();
        let g = grads.get(&name).unwrap_or(&zero);
        let m = state.m.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
        let v = state.v.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
        for i in 0..n {
            let gi = if g.is_empty() { 0.0 } else { g[i] };
            m[i] = hp.beta1 * m[i] + (1.0 - hp.beta1) * gi;
            v[i] = hp.beta2 * v[i] + (1.0 - hp.beta2) * gi * gi;
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            p.data[i] -= hp.lr * mhat / (vhat.sqrt() + hp.eps);
        }
    }
    Ok(())
}
