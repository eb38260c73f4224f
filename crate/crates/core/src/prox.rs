//! Univariate penalized least squares.
//!
//! Under an orthonormal design the penalized regression splits into one
//! problem per coefficient:
//!
//! ```text
//! argmin_θ  ½(ẑ − θ)² + λ·α·θ·tanh(βθ/2)
//! ```
//!
//! The objective is a convex quadratic plus a quasiconvex penalty, so it can
//! have two local minima near the thresholding region. [`prox_solve`] scans a
//! grid, refines every grid-local minimum and keeps the best one.
//! [`prox_oracle`] is a plain exhaustive scan used as ground truth.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{ensure_finite, Error, Result};
use crate::penalty::{eval_unchecked, grad_unchecked, hess_unchecked, PenaltyParams};
use crate::roots::{golden_section, newton_bisect};

const MIN_GRID_POINTS: usize = 10_000;
const MAX_GRID_POINTS: usize = 200_000;
/// Grid points per unit of `1/β`, so the penalty's transition is always resolved.
const POINTS_PER_SCALE: f64 = 8.0;
const MAX_CANDIDATES: usize = 8;
const TIE_TOLERANCE: f64 = 1e-12;
const ORACLE_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProxQuery {
    pub z_hat: f64,
    pub lambda: f64,
    pub params: PenaltyParams,
}

impl ProxQuery {
    pub fn new(z_hat: f64, lambda: f64, params: PenaltyParams) -> Result<Self> {
        let q = Self { z_hat, lambda, params };
        q.validate()?;
        Ok(q)
    }

    fn validate(&self) -> Result<()> {
        ensure_finite("z_hat", self.z_hat)?;
        ensure_finite("lambda", self.lambda)?;
        if self.lambda < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "lambda must be nonnegative, got {}",
                self.lambda
            )));
        }
        Ok(())
    }

    /// `½(ẑ − θ)² + λ·p(θ)`.
    pub fn objective(&self, theta: f64) -> f64 {
        let r = self.z_hat - theta;
        0.5 * r * r + self.lambda * eval_unchecked(&self.params, theta)
    }
}

/// Lasso proximal map `sign(z)·max(|z| − γ, 0)`.
pub fn soft_threshold(z: f64, gamma: f64) -> f64 {
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

/// Global minimizer of the univariate objective.
pub fn prox_solve(q: &ProxQuery) -> Result<f64> {
    q.validate()?;
    if q.lambda == 0.0 || q.z_hat == 0.0 {
        return Ok(q.z_hat);
    }
    // The objective is invariant under (ẑ, θ) → (−ẑ, −θ); solving for |ẑ|
    // makes the map exactly odd.
    let positive = ProxQuery {
        z_hat: q.z_hat.abs(),
        ..*q
    };
    let theta = solve_positive(&positive);
    Ok(if q.z_hat < 0.0 { -theta } else { theta })
}

fn solve_positive(q: &ProxQuery) -> f64 {
    let z = q.z_hat;
    let lo = -1.0;
    let hi = z + 1.0;
    let wanted = ((hi - lo) * q.params.beta() * POINTS_PER_SCALE).ceil();
    let n = (wanted as usize).clamp(MIN_GRID_POINTS, MAX_GRID_POINTS);
    let h = (hi - lo) / (n - 1) as f64;
    let grid_point = |i: usize| lo + i as f64 * h;

    let values: Vec<f64> = (0..n).map(|i| q.objective(grid_point(i))).collect();

    let mut local_minima: Vec<usize> = (0..n)
        .filter(|&i| {
            let left = i == 0 || values[i] <= values[i - 1];
            let right = i + 1 == n || values[i] <= values[i + 1];
            left && right
        })
        .collect();
    local_minima.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    local_minima.truncate(MAX_CANDIDATES);

    let mut best: Option<(f64, f64)> = None;
    for i in local_minima {
        let a = grid_point(i.saturating_sub(1));
        let b = grid_point((i + 1).min(n - 1));
        let theta = refine(q, a, b);
        let value = q.objective(theta);
        best = Some(match best {
            None => (theta, value),
            Some((bt, bv)) => {
                if value < bv - TIE_TOLERANCE || ((value - bv).abs() <= TIE_TOLERANCE && theta.abs() < bt.abs()) {
                    (theta, value)
                } else {
                    (bt, bv)
                }
            }
        });
    }
    best.map(|(t, _)| t).expect("grid always has a minimum")
}

/// Refines a stationary point inside `[a, b]`: bracketed Newton on the
/// derivative when it changes sign, golden section otherwise.
fn refine(q: &ProxQuery, a: f64, b: f64) -> f64 {
    let derivative = |t: f64| {
        (
            t - q.z_hat + q.lambda * grad_unchecked(&q.params, t),
            1.0 + q.lambda * hess_unchecked(&q.params, t),
        )
    };
    if let Some(root) = newton_bisect(derivative, a, b, 0.0, 200) {
        // the sign change can also be a local maximum
        if derivative(a).0 <= 0.0 {
            return root;
        }
    }
    golden_section(|t| q.objective(t), a, b, 1e-12 * (1.0 + b.abs()))
}

/// Exhaustive scan with step 1e-5 over `[−|ẑ| − 1, |ẑ| + 1]`, no refinement.
///
/// Accurate to about the step size; used to check [`prox_solve`].
pub fn prox_oracle(q: &ProxQuery) -> Result<f64> {
    q.validate()?;
    let span = q.z_hat.abs() + 1.0;
    let steps = (2.0 * span / ORACLE_STEP).round() as usize;
    let mut best_theta = -span;
    let mut best_value = f64::INFINITY;
    for k in 0..=steps {
        let theta = -span + k as f64 * ORACLE_STEP;
        let value = q.objective(theta);
        if value < best_value || (value == best_value && theta.abs() < best_theta.abs()) {
            best_value = value;
            best_theta = theta;
        }
    }
    Ok(best_theta)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolutionPath {
    pub lambda: f64,
    pub params: PenaltyParams,
    pub z_grid: Vec<f64>,
    pub theta_values: Vec<f64>,
}

impl SolutionPath {
    pub fn len(&self) -> usize {
        self.z_grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z_grid.is_empty()
    }

    /// Writes the path as CSV with header `z,theta`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["z", "theta"])?;
        for (z, t) in self.z_grid.iter().zip(&self.theta_values) {
            w.write_record([z.to_string(), t.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Evaluates [`prox_solve`] over a uniform grid of `n_points` on `[z_min, z_max]`.
pub fn solution_path(
    lambda: f64,
    params: PenaltyParams,
    z_min: f64,
    z_max: f64,
    n_points: usize,
) -> Result<SolutionPath> {
    ensure_finite("z_min", z_min)?;
    ensure_finite("z_max", z_max)?;
    if z_min >= z_max {
        return Err(Error::InvalidArgument(format!(
            "z_min ({z_min}) must be below z_max ({z_max})"
        )));
    }
    if n_points < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 points, got {n_points}"
        )));
    }
    let step = (z_max - z_min) / (n_points - 1) as f64;
    let z_grid: Vec<f64> = (0..n_points)
        .map(|i| {
            if i + 1 == n_points {
                z_max
            } else {
                z_min + i as f64 * step
            }
        })
        .collect();
    let theta_values = z_grid
        .par_iter()
        .map(|&z| prox_solve(&ProxQuery::new(z, lambda, params)?))
        .collect::<Result<Vec<_>>>()?;
    Ok(SolutionPath {
        lambda,
        params,
        z_grid,
        theta_values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(z: f64, lambda: f64, alpha: f64, beta: f64) -> ProxQuery {
        ProxQuery::new(z, lambda, PenaltyParams::new(alpha, beta).unwrap()).unwrap()
    }

    #[test]
    fn zero_lambda_is_identity() {
        assert_eq!(prox_solve(&q(3.7, 0.0, 1.0, 1.0)).unwrap(), 3.7);
        assert!((prox_oracle(&q(1.0, 0.0, 1.0, 1.0)).unwrap() - 1.0).abs() < 1e-5);
    }

    #[test]
    fn zero_input_maps_to_zero() {
        for &(l, a, b) in &[(0.5, 1.0, 1.0), (2.0, 16.0, 0.125), (1.0, 0.5, 50.0)] {
            assert_eq!(prox_solve(&q(0.0, l, a, b)).unwrap(), 0.0);
        }
    }

    #[test]
    fn lasso_limit_soft_thresholds() {
        let theta = prox_solve(&q(2.0, 0.5, 1.0, 1000.0)).unwrap();
        assert!((theta - 1.5).abs() < 1e-2);
        let oracle = prox_oracle(&q(2.0, 0.5, 1.0, 1000.0)).unwrap();
        assert!((theta - oracle).abs() < 2e-5);
    }

    #[test]
    fn ridge_like_example_matches_reference() {
        // mpmath stationary point: 1.00130411896495424457
        let query = q(2.0, 0.5, 16.0, 0.125);
        let theta = prox_solve(&query).unwrap();
        assert!((theta - 1.001_304_118_964_954).abs() < 1e-8);
        let oracle = prox_oracle(&query).unwrap();
        assert!((theta - oracle).abs() < 2e-5);
        let mirrored = prox_oracle(&q(-2.0, 0.5, 16.0, 0.125)).unwrap();
        assert!((mirrored + oracle).abs() < 2e-5);
    }

    #[test]
    fn stationarity_at_solution() {
        let query = q(1.3, 0.7, 2.0, 3.0);
        let t = prox_solve(&query).unwrap();
        let d = t - query.z_hat + query.lambda * grad_unchecked(&query.params, t);
        assert!(d.abs() < 1e-12);
    }

    #[test]
    fn rejects_invalid_queries() {
        let params = PenaltyParams::new(1.0, 1.0).unwrap();
        assert!(ProxQuery::new(f64::NAN, 0.5, params).is_err());
        assert!(ProxQuery::new(1.0, -0.5, params).is_err());
        let bad = ProxQuery {
            z_hat: 1.0,
            lambda: f64::INFINITY,
            params,
        };
        assert!(matches!(prox_solve(&bad), Err(Error::Domain(_))));
        assert!(prox_oracle(&bad).is_err());
    }

    #[test]
    fn soft_threshold_values() {
        assert_eq!(soft_threshold(5.0, 2.0), 3.0);
        assert_eq!(soft_threshold(1.0, 2.0), 0.0);
        assert_eq!(soft_threshold(-5.0, 2.0), -3.0);
    }

    #[test]
    fn path_argument_errors() {
        let params = PenaltyParams::new(1.0, 1.0).unwrap();
        assert!(solution_path(0.5, params, 1.0, -1.0, 10).is_err());
        assert!(solution_path(0.5, params, -1.0, 1.0, 1).is_err());
        assert!(solution_path(-0.5, params, -1.0, 1.0, 5).is_err());
    }

    #[test]
    fn path_csv_header() {
        let params = PenaltyParams::new(1.0, 1.0).unwrap();
        let path = solution_path(0.0, params, -1.0, 1.0, 3).unwrap();
        let mut buf = Vec::new();
        path.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "z,theta\n-1,-1\n0,0\n1,1\n");
    }
}
