//! Per-state linear dynamics over the sentence latent:
//!
//! ```text
//! Z_i = A_k Z_{i-1} + b_k + B_k eps,   eps ~ N(0, I),   k = S_i
//! ```
//!
//! Noise factors are stored through a raw matrix whose diagonal passes
//! through exp, so B_k always has a positive diagonal and the implied
//! covariance B_k B_k^T stays positive definite. Soft (relaxed) state
//! weights blend means and factors convexly.

use rand::Rng;

use crate::gaussian::Gaussian;
use crate::linalg;
use crate::tensor::{Array, BoundParams, ParamStore, TensorId};

pub fn a_name(k: usize) -> String {
    format!("dyn.A.{k}")
}

pub fn b_name(k: usize) -> String {
    format!("dyn.b.{k}")
}

pub fn noise_name(k: usize) -> String {
    format!("dyn.B.{k}")
}

/// Lower-triangular factor from the raw parameter: strict lower part is
/// taken as-is, the diagonal passes through exp, the upper part is
/// ignored.
pub fn factor_from_raw(raw: &[f64], d: usize) -> Vec<f64> {
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..i {
            l[i * d + j] = raw[i * d + j];
        }
        l[i * d + i] = raw[i * d + i].exp();
    }
    l
}

/// Same construction on the tape, for differentiable noise factors.
pub fn factor_from_raw_on_tape(bp: &mut BoundParams, raw: TensorId, d: usize) -> TensorId {
    let mut strict = vec![0.0; d * d];
    let mut diag = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..i {
            strict[i * d + j] = 1.0;
        }
        diag[i * d + i] = 1.0;
    }
    let strict_mask = bp.tape.constant(&Array::matrix(d, d, strict));
    let diag_mask = bp.tape.constant(&Array::matrix(d, d, diag));
    let lower = bp.tape.mul(raw, strict_mask);
    let e = bp.tape.exp(raw);
    let ed = bp.tape.mul(e, diag_mask);
    bp.tape.add(lower, ed)
}

/// Evaluated per-state dynamics: plain matrices for sampling, Gibbs
/// conditionals, and evaluation. Training works on the raw parameters
/// directly through the tape.
#[derive(Debug, Clone)]
pub struct DynamicsSet {
    pub d: usize,
    pub k: usize,
    a: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
    factor: Vec<Vec<f64>>,
}

impl DynamicsSet {
    pub fn from_params(store: &ParamStore, k: usize, d: usize) -> DynamicsSet {
        let mut a = Vec::with_capacity(k);
        let mut b = Vec::with_capacity(k);
        let mut factor = Vec::with_capacity(k);
        for s in 0..k {
            let am = store.get(&a_name(s));
            assert_eq!(am.dims2(), (d, d));
            a.push(am.data.clone());
            let bv = store.get(&b_name(s));
            assert_eq!(bv.numel(), d);
            b.push(bv.data.clone());
            let raw = store.get(&noise_name(s));
            assert_eq!(raw.dims2(), (d, d));
            factor.push(factor_from_raw(&raw.data, d));
        }
        DynamicsSet { d, k, a, b, factor }
    }

    pub fn a(&self, state: usize) -> &[f64] {
        &self.a[state]
    }

    pub fn b(&self, state: usize) -> &[f64] {
        &self.b[state]
    }

    pub fn noise_factor(&self, state: usize) -> &[f64] {
        &self.factor[state]
    }

    /// P(Z_i | z_prev, S_i = state).
    pub fn transition_distribution(&self, state: usize, z_prev: &[f64]) -> Gaussian {
        assert_eq!(z_prev.len(), self.d);
        let mut mean = linalg::matvec(&self.a[state], z_prev, self.d, self.d);
        for (m, b) in mean.iter_mut().zip(&self.b[state]) {
            *m += b;
        }
        Gaussian::new(mean, self.factor[state].clone())
    }

    /// Relaxed transition under simplex weights: convex mix of means and
    /// factors. One-hot weights recover the hard distribution exactly.
    pub fn soft_transition_distribution(&self, weights: &[f64], z_prev: &[f64]) -> Gaussian {
        assert_eq!(weights.len(), self.k);
        debug_assert!((weights.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        let mut mean = vec![0.0; self.d];
        let mut factor = vec![0.0; self.d * self.d];
        for s in 0..self.k {
            let g = self.transition_distribution(s, z_prev);
            for (m, gm) in mean.iter_mut().zip(g.mean()) {
                *m += weights[s] * gm;
            }
            for (f, gf) in factor.iter_mut().zip(g.cov_factor()) {
                *f += weights[s] * gf;
            }
        }
        Gaussian::new(mean, factor)
    }
}

/// Registers freshly initialized dynamics parameters: A near 0.9 I with
/// small noise, zero drift, noise factor diag exp(raw) = 0.5.
pub fn init_params<R: Rng>(store: &mut ParamStore, k: usize, d: usize, rng: &mut R) {
    for s in 0..k {
        let mut a = vec![0.0; d * d];
        for (i, v) in a.iter_mut().enumerate() {
            let eye = if i % (d + 1) == 0 { 0.9 } else { 0.0 };
            *v = eye + 0.01 * (rng.gen::<f64>() * 2.0 - 1.0);
        }
        store.insert(a_name(s), Array::matrix(d, d, a));
        store.insert(b_name(s), Array::vector(vec![0.0; d]));
        let mut raw = vec![0.0; d * d];
        for i in 0..d {
            raw[i * d + i] = 0.5f64.ln();
        }
        store.insert(noise_name(s), Array::matrix(d, d, raw));
    }
}

/// Gumbel-Softmax relaxed draw on the tape: differentiable simplex
/// weights whose argmax follows softmax(logits) exactly.
pub fn gumbel_softmax_on_tape<R: Rng>(
    bp: &mut BoundParams,
    logits: TensorId,
    temperature: f64,
    rng: &mut R,
) -> TensorId {
    assert!(temperature > 0.0, "temperature must be positive");
    let (k, c) = bp.tape.dims(logits);
    assert_eq!(c, 1, "gumbel expects a column of logits");
    let noise: Vec<f64> = (0..k)
        .map(|_| {
            let u: f64 = rng.gen_range(f64::EPSILON..1.0);
            -(-u.ln()).ln()
        })
        .collect();
    let g = bp.tape.constant(&Array::vector(noise));
    let shifted = bp.tape.add(logits, g);
    let scaled = bp.tape.scale(shifted, 1.0 / temperature);
    bp.tape.softmax(scaled)
}

/// Plain-value variant for sampling paths that need no gradients.
pub fn gumbel_softmax_sample<R: Rng>(logits: &[f64], temperature: f64, rng: &mut R) -> Vec<f64> {
    let params = ParamStore::new();
    let mut bp = BoundParams::new(&params, false);
    let l = bp.tape.leaf(&Array::vector(logits.to_vec()), false);
    let id = gumbel_softmax_on_tape(&mut bp, l, temperature, rng);
    bp.tape.value(id).to_vec()
}
