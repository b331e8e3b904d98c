//! Continuous-observation twin of the text model: the same switching
//! latent chain, but the emission is linear-Gaussian, so every
//! conditional is exact. Used to exercise the dynamics and Gibbs
//! machinery end to end where ground truth is computable: generate
//! from known per-state dynamics, refit by least squares, hide
//! observations, and measure imputation error.

use rand::Rng;

use crate::dynamics::{self, DynamicsSet};
use crate::emission::LinearGaussianEmission;
use crate::gaussian::gibbs_z_conditional;
use crate::linalg;
use crate::scaffold::MarkovPrior;
use crate::tensor::{Array, ParamStore};

pub struct VectorSlds {
    pub dynamics: DynamicsSet,
    pub prior: MarkovPrior,
    pub emission: LinearGaussianEmission,
    pub z0: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct VectorStory {
    pub states: Vec<usize>,
    pub latents: Vec<Vec<f64>>,
    pub observations: Vec<Vec<f64>>,
}

fn sample_cat<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

impl VectorSlds {
    pub fn generate<R: Rng>(&self, len: usize, rng: &mut R) -> VectorStory {
        let mut states = Vec::with_capacity(len);
        let mut latents = Vec::with_capacity(len);
        let mut observations = Vec::with_capacity(len);
        let mut z_prev = self.z0.clone();
        for i in 0..len {
            let s = if i == 0 {
                sample_cat(self.prior.initial(), rng)
            } else {
                sample_cat(self.prior.transition_row(states[i - 1]), rng)
            };
            let z = self.dynamics.transition_distribution(s, &z_prev).sample(rng);
            let x = crate::gaussian::Gaussian::new(
                self.emission.predict(&z),
                self.emission.noise_factor.clone(),
            )
            .sample(rng);
            states.push(s);
            latents.push(z.clone());
            observations.push(x);
            z_prev = z;
        }
        VectorStory { states, latents, observations }
    }
}

/// Per-state least squares on (predecessor, successor) observation
/// pairs: observations proxy the latents, which is consistent when the
/// emission is near-identity. Row j of [A_s | b_s] solves the ridge
/// normal equations for coordinate j; B_s is the Cholesky factor of the
/// residual covariance. States with fewer than d + 2 pairs fall back to
/// the pooled fit so the result is always well defined.
pub fn fit_dynamics(stories: &[VectorStory], k: usize, d: usize, z0: &[f64]) -> DynamicsSet {
    let mut by_state: Vec<Vec<(Vec<f64>, Vec<f64>)>> = vec![Vec::new(); k];
    let mut pooled: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    for story in stories {
        let mut prev = z0.to_vec();
        for (i, x) in story.observations.iter().enumerate() {
            let s = if k == 1 { 0 } else { story.states[i] };
            by_state[s].push((prev.clone(), x.clone()));
            pooled.push((prev.clone(), x.clone()));
            prev = x.clone();
        }
    }
    let pooled_fit = ls_fit(&pooled, d);
    let mut store = ParamStore::new();
    for s in 0..k {
        let (a, b, l) = if by_state[s].len() < d + 2 {
            pooled_fit.clone()
        } else {
            ls_fit(&by_state[s], d)
        };
        let mut raw = l.clone();
        for i in 0..d {
            raw[i * d + i] = l[i * d + i].ln();
        }
        store.insert(&dynamics::a_name(s), Array::matrix(d, d, a));
        store.insert(&dynamics::b_name(s), Array::vector(b));
        store.insert(&dynamics::noise_name(s), Array::matrix(d, d, raw));
    }
    DynamicsSet::from_params(&store, k, d)
}

/// Least squares for x_next = A x_prev + b + noise. Returns (A, b, L)
/// with L the residual covariance factor.
fn ls_fit(pairs: &[(Vec<f64>, Vec<f64>)], d: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    assert!(!pairs.is_empty(), "least squares needs data");
    let m = d + 1;
    let ridge = 1e-6;
    let mut g = vec![0.0; m * m];
    let mut rhs = vec![vec![0.0; m]; d];
    for (prev, next) in pairs {
        let mut u = prev.clone();
        u.push(1.0);
        for r in 0..m {
            for c in 0..m {
                g[r * m + c] += u[r] * u[c];
            }
            for j in 0..d {
                rhs[j][r] += u[r] * next[j];
            }
        }
    }
    for i in 0..m {
        g[i * m + i] += ridge;
    }
    let gl = linalg::cholesky(&g, m).expect("normal matrix is SPD under ridge");
    let mut a = vec![0.0; d * d];
    let mut b = vec![0.0; d];
    for j in 0..d {
        let w = linalg::cholesky_solve(&gl, &rhs[j], m);
        a[j * d..(j + 1) * d].copy_from_slice(&w[..d]);
        b[j] = w[d];
    }
    let mut cov = vec![0.0; d * d];
    for (prev, next) in pairs {
        let pred = linalg::matvec(&a, prev, d, d);
        let resid: Vec<f64> = (0..d).map(|j| next[j] - pred[j] - b[j]).collect();
        for r in 0..d {
            for c in 0..d {
                cov[r * d + c] += resid[r] * resid[c];
            }
        }
    }
    let inv = 1.0 / pairs.len() as f64;
    for (i, v) in cov.iter_mut().enumerate() {
        *v *= inv;
        if i % (d + 1) == 0 {
            *v += 1e-6;
        }
    }
    let l = linalg::cholesky(&cov, d).expect("residual covariance is SPD with jitter");
    (a, b, l)
}

/// One ascending Gibbs pass over the latents: each position draws from
/// its exact conditional given the neighbors' current values and its
/// own evidence (when observed).
fn chain_sweep<R: Rng>(
    model: &VectorSlds,
    observations: &[Option<Vec<f64>>],
    states: &[usize],
    z: &mut [Vec<f64>],
    rng: &mut R,
) {
    let n = observations.len();
    for i in 0..n {
        let prev = if i == 0 { &model.z0 } else { &z[i - 1] };
        let prior = model.dynamics.transition_distribution(states[i], prev);
        let q = match &observations[i] {
            Some(x) => model.emission.posterior(&prior, x),
            None => prior,
        };
        let cond = if i + 1 < n {
            let s_next = states[i + 1];
            let shifted: Vec<f64> = z[i + 1]
                .iter()
                .zip(model.dynamics.b(s_next))
                .map(|(zn, bb)| zn - bb)
                .collect();
            gibbs_z_conditional(
                model.dynamics.a(s_next),
                model.dynamics.noise_factor(s_next),
                &shifted,
                &q,
            )
        } else {
            q
        };
        z[i] = cond.sample(rng);
    }
}

/// Post-burn-in mean of every latent position under the Gibbs chain,
/// for any observation pattern (including fully observed, where the
/// result estimates the smoothing means).
pub fn latent_posterior_means<R: Rng>(
    model: &VectorSlds,
    observations: &[Option<Vec<f64>>],
    states: &[usize],
    sweeps: usize,
    burn_in: usize,
    rng: &mut R,
) -> Vec<Vec<f64>> {
    let n = observations.len();
    assert_eq!(states.len(), n, "state count != position count");
    assert!(burn_in < sweeps, "burn-in must leave samples");
    let d = model.z0.len();

    // Ascending initialization from the prior chain, folding in the
    // evidence where a position is observed.
    let mut z: Vec<Vec<f64>> = Vec::with_capacity(n);
    for i in 0..n {
        let prev = if i == 0 { &model.z0 } else { &z[i - 1] };
        let prior = model.dynamics.transition_distribution(states[i], prev);
        let draw = match &observations[i] {
            Some(x) => model.emission.posterior(&prior, x).sample(rng),
            None => prior.sample(rng),
        };
        z.push(draw);
    }

    let mut mean_acc = vec![vec![0.0; d]; n];
    let mut kept = 0usize;
    for sweep in 0..sweeps {
        chain_sweep(model, observations, states, &mut z, rng);
        if sweep >= burn_in {
            kept += 1;
            for i in 0..n {
                for (acc, v) in mean_acc[i].iter_mut().zip(&z[i]) {
                    *acc += v;
                }
            }
        }
    }
    for row in &mut mean_acc {
        for v in row {
            *v /= kept as f64;
        }
    }
    mean_acc
}

/// Gibbs imputation: alternate exact latent conditionals along the
/// chain, holding observed positions' evidence fixed, then report the
/// post-burn-in posterior mean mapped through the emission. Observed
/// entries are returned verbatim.
pub fn impute<R: Rng>(
    model: &VectorSlds,
    observations: &[Option<Vec<f64>>],
    states: &[usize],
    sweeps: usize,
    burn_in: usize,
    rng: &mut R,
) -> Vec<Vec<f64>> {
    let means = latent_posterior_means(model, observations, states, sweeps, burn_in, rng);
    observations
        .iter()
        .zip(means)
        .map(|(obs, zbar)| match obs {
            Some(x) => x.clone(),
            None => model.emission.predict(&zbar),
        })
        .collect()
}

/// Mean squared error over the missing positions only.
pub fn masked_mse(truth: &[Vec<f64>], imputed: &[Vec<f64>], observed: &[bool]) -> f64 {
    let mut se = 0.0;
    let mut count = 0usize;
    for i in 0..truth.len() {
        if observed[i] {
            continue;
        }
        for (t, p) in truth[i].iter().zip(&imputed[i]) {
            se += (t - p) * (t - p);
            count += 1;
        }
    }
    se / count as f64
}
