//! Multivariate Gaussians stored as mean plus lower Cholesky factor of
//! the covariance. Raw covariance matrices never leave this module:
//! densities, samples, KL, and conditioning all work on factors.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::linalg;

const LN_2PI: f64 = 1.837877066409345483560659472811;

#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    mean: Vec<f64>,
    /// Lower-triangular L with covariance = L L^T; diagonal > 0.
    cov_factor: Vec<f64>,
}

impl Gaussian {
    pub fn new(mean: Vec<f64>, cov_factor: Vec<f64>) -> Self {
        let d = mean.len();
        assert_eq!(cov_factor.len(), d * d, "factor must be {d}x{d}");
        for i in 0..d {
            assert!(
                cov_factor[i * d + i] > 0.0,
                "cov factor diagonal must be positive, got {} at {i}",
                cov_factor[i * d + i]
            );
        }
        Gaussian { mean, cov_factor }
    }

    /// Diagonal Gaussian from per-coordinate variances.
    pub fn diagonal(mean: Vec<f64>, variances: &[f64]) -> Self {
        let d = mean.len();
        assert_eq!(variances.len(), d);
        let mut l = vec![0.0; d * d];
        for i in 0..d {
            assert!(variances[i] > 0.0, "variance must be positive");
            l[i * d + i] = variances[i].sqrt();
        }
        Gaussian { mean, cov_factor: l }
    }

    pub fn standard(d: usize) -> Self {
        Gaussian::diagonal(vec![0.0; d], &vec![1.0; d])
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn cov_factor(&self) -> &[f64] {
        &self.cov_factor
    }

    /// Dense covariance; test/diagnostic use.
    pub fn covariance(&self) -> Vec<f64> {
        let d = self.dim();
        let lt = linalg::transpose(&self.cov_factor, d, d);
        linalg::matmul(&self.cov_factor, &lt, d, d, d)
    }

    pub fn log_pdf(&self, x: &[f64]) -> f64 {
        let d = self.dim();
        assert_eq!(x.len(), d);
        let diff = linalg::sub(x, &self.mean);
        let y = linalg::solve_lower(&self.cov_factor, &diff, d);
        let quad: f64 = y.iter().map(|v| v * v).sum();
        let log_det_half: f64 = (0..d).map(|i| self.cov_factor[i * d + i].ln()).sum();
        -0.5 * quad - log_det_half - 0.5 * d as f64 * LN_2PI
    }

    /// mean + L eps with eps ~ N(0, I).
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let d = self.dim();
        let eps: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let le = linalg::matvec(&self.cov_factor, &eps, d, d);
        linalg::add(&self.mean, &le)
    }
}

/// KL(q || p) in closed form from the two factors.
pub fn kl_divergence(q: &Gaussian, p: &Gaussian) -> f64 {
    let d = q.dim();
    assert_eq!(p.dim(), d, "KL dimension mismatch");
    let diff = linalg::sub(&p.mean, &q.mean);
    let y = linalg::solve_lower(&p.cov_factor, &diff, d);
    let maha: f64 = y.iter().map(|v| v * v).sum();
    // tr(Sigma_p^{-1} Sigma_q) = ||L_p^{-1} L_q||_F^2
    let w = linalg::solve_lower_mat(&p.cov_factor, &q.cov_factor, d, d);
    let trace: f64 = w.iter().map(|v| v * v).sum();
    let log_det_p: f64 = (0..d).map(|i| p.cov_factor[i * d + i].ln()).sum();
    let log_det_q: f64 = (0..d).map(|i| q.cov_factor[i * d + i].ln()).sum();
    0.5 * (maha + trace - d as f64) + log_det_p - log_det_q
}

/// Posterior over z_i given its successor and a base distribution, in
/// information form.
///
/// The successor factor is N(z_next; A z_i, Sigma) with Sigma given by
/// its lower factor `sigma_factor` (Sigma = L L^T). Combined with the
/// base q over z_i:
///
/// ```text
/// Sigma*^{-1} = A^T Sigma^{-1} A + Sigma_q^{-1}
/// mu*         = Sigma* (A^T Sigma^{-1} z_next + Sigma_q^{-1} mu_q)
/// ```
///
/// When the successor step carries a bias (z_next = A z_i + b + noise),
/// pass `z_next - b`.
pub fn gibbs_z_conditional(a: &[f64], sigma_factor: &[f64], z_next: &[f64], q: &Gaussian) -> Gaussian {
    let d = q.dim();
    assert_eq!(a.len(), d * d, "dynamics matrix must be {d}x{d}");
    assert_eq!(sigma_factor.len(), d * d);
    assert_eq!(z_next.len(), d);

    // P1 = A^T Sigma^{-1} A = G^T G with G = L^{-1} A.
    let g = linalg::solve_lower_mat(sigma_factor, a, d, d);
    let gt = linalg::transpose(&g, d, d);
    let p1 = linalg::matmul(&gt, &g, d, d, d);
    // P2 = Sigma_q^{-1} = M^T M with M = L_q^{-1}.
    let eye = linalg::identity(d);
    let m = linalg::solve_lower_mat(&q.cov_factor, &eye, d, d);
    let mt = linalg::transpose(&m, d, d);
    let p2 = linalg::matmul(&mt, &m, d, d, d);
    let prec = linalg::add(&p1, &p2);
    let lp = linalg::cholesky(&prec, d).expect("posterior precision must be positive definite");

    // h = A^T Sigma^{-1} z_next + Sigma_q^{-1} mu_q
    let sz = linalg::cholesky_solve(sigma_factor, z_next, d);
    let at = linalg::transpose(a, d, d);
    let h1 = linalg::matvec(&at, &sz, d, d);
    let h2 = linalg::cholesky_solve(&q.cov_factor, &q.mean, d);
    let h = linalg::add(&h1, &h2);

    let mean = linalg::cholesky_solve(&lp, &h, d);
    // Sigma* = prec^{-1}, refactored for storage.
    let mut cov = vec![0.0; d * d];
    for c in 0..d {
        let mut e = vec![0.0; d];
        e[c] = 1.0;
        let col = linalg::cholesky_solve(&lp, &e, d);
        for r in 0..d {
            cov[r * d + c] = col[r];
        }
    }
    // Symmetrize against rounding before factoring.
    for i in 0..d {
        for j in 0..i {
            let avg = 0.5 * (cov[i * d + j] + cov[j * d + i]);
            cov[i * d + j] = avg;
            cov[j * d + i] = avg;
        }
    }
    let l = linalg::cholesky(&cov, d).expect("posterior covariance must be positive definite");
    Gaussian::new(mean, l)
}
