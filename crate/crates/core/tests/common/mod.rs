//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    (rng.random_range(lo.ln()..hi.ln())).exp()
}

/// Central difference `(f(x+h) − f(x−h)) / 2h`.
pub fn central_diff<F: Fn(f64) -> f64>(f: F, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, n: usize, p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(rng))
}

/// Design with `XᵀX = nI`: scaled thin Q factor of a Gaussian matrix.
pub fn orthonormal_design(rng: &mut ChaCha8Rng, n: usize, p: usize) -> DMatrix<f64> {
    let q = gaussian_matrix(rng, n, p).qr().q();
    q * (n as f64).sqrt()
}

/// Cyclic coordinate descent for `(1/2n)‖y − Xθ‖² + λ‖θ‖₁`.
pub fn lasso_coordinate_descent(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> DVector<f64> {
    let (n, p) = x.shape();
    let nf = n as f64;
    let mut theta = DVector::zeros(p);
    let mut resid = y.clone();
    let col_sq: Vec<f64> = (0..p).map(|j| x.column(j).norm_squared() / nf).collect();
    for _ in 0..10_000 {
        let mut max_change: f64 = 0.0;
        for j in 0..p {
            let old = theta[j];
            let rho = x.column(j).dot(&resid) / nf + col_sq[j] * old;
            let new = if rho > lambda {
                (rho - lambda) / col_sq[j]
            } else if rho < -lambda {
                (rho + lambda) / col_sq[j]
            } else {
                0.0
            };
            if new != old {
                resid -= x.column(j) * (new - old);
                theta[j] = new;
            }
            max_change = max_change.max((new - old).abs());
        }
        if max_change < 1e-13 {
            break;
        }
    }
    theta
}
