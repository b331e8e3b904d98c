//! Small dense linear algebra on row-major `[f64]` buffers.
//!
//! Latent dimensions stay in the tens, so everything here is naive
//! O(n^3)-or-better with no blocking. Callers own shape bookkeeping;
//! debug asserts catch mismatches.

/// c = a (m x k) * b (k x n), row-major.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            for j in 0..n {
                c[i * n + j] += aip * b[p * n + j];
            }
        }
    }
    c
}

/// y = a (m x n) * x (n).
pub fn matvec(a: &[f64], x: &[f64], m: usize, n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * n);
    debug_assert_eq!(x.len(), n);
    let mut y = vec![0.0; m];
    for i in 0..m {
        let mut s = 0.0;
        for j in 0..n {
            s += a[i * n + j] * x[j];
        }
        y[i] = s;
    }
    y
}

pub fn transpose(a: &[f64], m: usize, n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * n);
    let mut t = vec![0.0; n * m];
    for i in 0..m {
        for j in 0..n {
            t[j * m + i] = a[i * n + j];
        }
    }
    t
}

pub fn identity(n: usize) -> Vec<f64> {
    let mut i_mat = vec![0.0; n * n];
    for i in 0..n {
        i_mat[i * n + i] = 1.0;
    }
    i_mat
}

/// Lower Cholesky factor of a symmetric positive definite matrix.
/// Returns None when a pivot drops below `1e-12` (not PD to working
/// precision).
pub fn cholesky(a: &[f64], n: usize) -> Option<Vec<f64>> {
    debug_assert_eq!(a.len(), n * n);
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for p in 0..j {
                s -= l[i * n + p] * l[j * n + p];
            }
            if i == j {
                if s <= 1e-12 {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Some(l)
}

/// Solves L y = b for lower-triangular L.
pub fn solve_lower(l: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    debug_assert_eq!(b.len(), n);
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for j in 0..i {
            s -= l[i * n + j] * y[j];
        }
        y[i] = s / l[i * n + i];
    }
    y
}

/// Solves L^T x = b for lower-triangular L.
pub fn solve_lower_transpose(l: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    debug_assert_eq!(b.len(), n);
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = b[i];
        for j in i + 1..n {
            s -= l[j * n + i] * x[j];
        }
        x[i] = s / l[i * n + i];
    }
    x
}

/// Solves L Y = B columnwise, B is n x m.
pub fn solve_lower_mat(l: &[f64], b: &[f64], n: usize, m: usize) -> Vec<f64> {
    debug_assert_eq!(b.len(), n * m);
    let mut y = vec![0.0; n * m];
    for c in 0..m {
        let col: Vec<f64> = (0..n).map(|r| b[r * m + c]).collect();
        let sol = solve_lower(l, &col, n);
        for r in 0..n {
            y[r * m + c] = sol[r];
        }
    }
    y
}

/// (L L^T)^{-1} b via two triangular solves.
pub fn cholesky_solve(l: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    solve_lower_transpose(l, &solve_lower(l, b, n), n)
}

/// Dense inverse of an SPD matrix through its Cholesky factor. Test and
/// setup paths only; hot paths keep factors and solve instead.
pub fn spd_inverse(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let l = cholesky(a, n)?;
    let mut inv = vec![0.0; n * n];
    for c in 0..n {
        let mut e = vec![0.0; n];
        e[c] = 1.0;
        let col = cholesky_solve(&l, &e, n);
        for r in 0..n {
            inv[r * n + c] = col[r];
        }
    }
    Some(inv)
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn scale(a: &[f64], s: f64) -> Vec<f64> {
    a.iter().map(|x| x * s).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
