//! Linear regression penalized by the foothill function.
//!
//! The estimator minimizes
//!
//! ```text
//! (1/2n)·‖y − Xθ‖² + λ·Σⱼ p(θⱼ)
//! ```
//!
//! The penalty is smooth, so [`fit`] runs plain gradient descent with an
//! Armijo backtracking line search, started from the least-squares solution,
//! and escapes non-global local minima one coordinate at a time.

use std::io::Read;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{ensure_finite, Error, Result};
use crate::penalty::{eval_unchecked, grad_unchecked, PenaltyParams};
use crate::prox::{prox_solve, ProxQuery};

pub const DEFAULT_MAX_ITER: usize = 100_000;
pub const DEFAULT_TOL: f64 = 1e-8;

const ARMIJO_C: f64 = 1e-4;
const BACKTRACK: f64 = 0.5;
const MAX_BACKTRACKS: usize = 60;
/// Relative decrease required to accept a coordinate escape move.
const ESCAPE_MIN_GAIN: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct RegressionProblem {
    x: DMatrix<f64>,
    y: DVector<f64>,
    lambda: f64,
    params: PenaltyParams,
}

impl RegressionProblem {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>, lambda: f64, params: PenaltyParams) -> Result<Self> {
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(Error::InvalidArgument("design matrix must be at least 1x1".into()));
        }
        if y.len() != x.nrows() {
            return Err(Error::InvalidArgument(format!(
                "response has {} entries but design has {} rows",
                y.len(),
                x.nrows()
            )));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Domain("design and response must be finite".into()));
        }
        ensure_finite("lambda", lambda)?;
        if lambda < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "lambda must be nonnegative, got {lambda}"
            )));
        }
        Ok(Self { x, y, lambda, params })
    }

    /// Reads a CSV with header `y,x1,...,xp` and builds the problem.
    pub fn from_csv<R: Read>(reader: R, lambda: f64, params: PenaltyParams) -> Result<Self> {
        let (x, y) = read_design_csv(reader)?;
        Self::new(x, y, lambda, params)
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn params(&self) -> PenaltyParams {
        self.params
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn objective(&self, theta: &DVector<f64>) -> f64 {
        let r = &self.y - &self.x * theta;
        let penalty: f64 = theta.iter().map(|&t| eval_unchecked(&self.params, t)).sum();
        r.norm_squared() / (2.0 * self.n() as f64) + self.lambda * penalty
    }

    pub fn gradient(&self, theta: &DVector<f64>) -> DVector<f64> {
        let r = &self.y - &self.x * theta;
        let mut g = self.x.tr_mul(&r) / -(self.n() as f64);
        for (gj, &t) in g.iter_mut().zip(theta.iter()) {
            *gj += self.lambda * grad_unchecked(&self.params, t);
        }
        g
    }

    /// Lipschitz bound on the gradient: `λmax(XᵀX/n) + λ·α·β`.
    fn lipschitz(&self) -> f64 {
        let gram = self.x.tr_mul(&self.x) / self.n() as f64;
        let top = gram.symmetric_eigenvalues().max();
        top + self.lambda * self.params.curvature_bound()
    }
}

/// Parses `y,x1,...,xp` CSV data into a design matrix and response.
pub fn read_design_csv<R: Read>(reader: R) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.get(0) != Some("y") {
        return Err(Error::Data("first column must be named `y`".into()));
    }
    let p = headers.len() - 1;
    if p == 0 {
        return Err(Error::Data("need at least one predictor column".into()));
    }
    let mut ys = Vec::new();
    let mut xs = Vec::new();
    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() != p + 1 {
            return Err(Error::Data(format!(
                "row {} has {} fields, expected {}",
                line + 1,
                record.len(),
                p + 1
            )));
        }
        for (j, field) in record.iter().enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| Error::Data(format!("row {}: cannot parse `{field}`", line + 1)))?;
            if j == 0 {
                ys.push(v);
            } else {
                xs.push(v);
            }
        }
    }
    if ys.is_empty() {
        return Err(Error::Data("no data rows".into()));
    }
    Ok((DMatrix::from_row_slice(ys.len(), p, &xs), DVector::from_vec(ys)))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitResult {
    pub theta: Vec<f64>,
    /// Objective value at the start and after every accepted step.
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

/// Least-squares solution via Householder QR of `X`.
pub fn ols(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(Error::InvalidArgument(format!(
            "response has {} entries, design has {n} rows",
            y.len()
        )));
    }
    if n < p || p == 0 {
        return Err(Error::Singular);
    }
    let qr = x.clone().qr();
    let r = qr.r();
    let largest = r.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let cutoff = largest * 1e-12 * n as f64;
    if largest == 0.0 || r.diagonal().iter().any(|v| v.abs() <= cutoff) {
        return Err(Error::Singular);
    }
    let qty = qr.q().tr_mul(y);
    r.solve_upper_triangular(&qty).ok_or(Error::Singular)
}

/// Minimizes the penalized objective.
///
/// Starts from the least-squares solution (zeros when `X` is rank
/// deficient) and runs gradient descent: each step begins at `1/L`,
/// `L = λmax(XᵀX/n) + λαβ`, and is halved until the Armijo condition holds.
///
/// With `λ > 0` the objective can have several local minima. Before descent
/// and again whenever it stops, every coordinate is moved to the global minimizer of its own
/// univariate problem (the others held fixed) whenever that lowers the
/// objective, and descent resumes. Under an orthonormal design this yields
/// the component-wise global solution. Every accepted move is one iteration
/// and one trace entry.
pub fn fit(problem: &RegressionProblem, max_iter: usize, tol: f64) -> Result<FitResult> {
    if max_iter == 0 {
        return Err(Error::InvalidArgument("max_iter must be at least 1".into()));
    }
    if !(tol.is_finite() && tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tol must be positive, got {tol}")));
    }

    let theta = match ols(&problem.x, &problem.y) {
        Ok(t) => t,
        Err(Error::Singular) => DVector::zeros(problem.p()),
        Err(e) => return Err(e),
    };
    let value = problem.objective(&theta);
    if !value.is_finite() {
        return Err(Error::NonFiniteObjective {
            iteration: 0,
            trace: vec![value],
        });
    }
    let lipschitz = problem.lipschitz();
    let initial_step = if lipschitz.is_finite() && lipschitz > 0.0 {
        1.0 / lipschitz
    } else {
        1.0
    };

    let mut state = Descent {
        theta,
        value,
        trace: vec![value],
        iterations: 0,
    };
    let multimodal = problem.lambda > 0.0;
    if multimodal {
        state.coordinate_escape(problem, max_iter)?;
    }
    loop {
        state.gradient_descent(problem, initial_step, max_iter, tol)?;
        if !multimodal || state.iterations >= max_iter {
            break;
        }
        if !state.coordinate_escape(problem, max_iter)? {
            break;
        }
    }

    let converged = problem.gradient(&state.theta).norm() < tol;
    Ok(FitResult {
        theta: state.theta.iter().copied().collect(),
        objective_trace: state.trace,
        converged,
        iterations: state.iterations,
    })
}

struct Descent {
    theta: DVector<f64>,
    value: f64,
    trace: Vec<f64>,
    iterations: usize,
}

impl Descent {
    fn accept(&mut self, theta: DVector<f64>, value: f64) {
        self.theta = theta;
        self.value = value;
        self.trace.push(value);
        self.iterations += 1;
    }

    /// Runs until the gradient norm is below `tol`, no step size gives
    /// sufficient decrease, or the iteration budget is spent.
    fn gradient_descent(
        &mut self,
        problem: &RegressionProblem,
        initial_step: f64,
        max_iter: usize,
        tol: f64,
    ) -> Result<()> {
        while self.iterations < max_iter {
            let g = problem.gradient(&self.theta);
            let g2 = g.norm_squared();
            if g2.sqrt() < tol {
                return Ok(());
            }
            let mut step = initial_step;
            let mut accepted = None;
            for _ in 0..MAX_BACKTRACKS {
                let candidate = &self.theta - &g * step;
                let cv = problem.objective(&candidate);
                if !cv.is_finite() {
                    let mut trace = std::mem::take(&mut self.trace);
                    trace.push(cv);
                    return Err(Error::NonFiniteObjective {
                        iteration: self.iterations + 1,
                        trace,
                    });
                }
                if cv <= self.value - ARMIJO_C * step * g2 {
                    accepted = Some((candidate, cv));
                    break;
                }
                step *= BACKTRACK;
            }
            // no sufficient decrease at any step size: at the rounding floor
            let Some((next, next_value)) = accepted else {
                return Ok(());
            };
            self.accept(next, next_value);
        }
        Ok(())
    }

    /// Moves single coordinates to their univariate global minimizers.
    /// Returns whether any move was accepted.
    fn coordinate_escape(&mut self, problem: &RegressionProblem, max_iter: usize) -> Result<bool> {
        let n = problem.n() as f64;
        let mut moved = false;
        for j in 0..problem.p() {
            if self.iterations >= max_iter {
                break;
            }
            let column = problem.x.column(j);
            let col_sq = column.norm_squared();
            if col_sq == 0.0 {
                continue;
            }
            // (1/2n)‖r₋ⱼ − xⱼθⱼ‖² = (‖xⱼ‖²/2n)(θⱼ − ẑⱼ)² + const
            let residual = &problem.y - &problem.x * &self.theta;
            let z_hat = column.dot(&residual) / col_sq + self.theta[j];
            let scaled_lambda = problem.lambda * n / col_sq;
            let query = ProxQuery::new(z_hat, scaled_lambda, problem.params)?;
            let best = prox_solve(&query)?;
            let mut candidate = self.theta.clone();
            candidate[j] = best;
            let cv = problem.objective(&candidate);
            if cv < self.value - ESCAPE_MIN_GAIN * (1.0 + self.value.abs()) {
                self.accept(candidate, cv);
                moved = true;
            }
        }
        Ok(moved)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsistencyReport {
    pub sample_sizes: Vec<usize>,
    /// Mean over replicates of `√n·‖θ̂ₙ − θ‖`, one entry per sample size.
    pub scaled_errors: Vec<f64>,
    pub replicates: usize,
    pub seed: u64,
}

impl ConsistencyReport {
    /// `max / min` of the scaled errors.
    pub fn spread(&self) -> f64 {
        let max = self.scaled_errors.iter().copied().fold(f64::MIN, f64::max);
        let min = self.scaled_errors.iter().copied().fold(f64::MAX, f64::min);
        max / min
    }
}

#[derive(Debug, Clone)]
pub struct ConsistencySetup {
    pub true_theta: Vec<f64>,
    pub n_list: Vec<usize>,
    pub replicates: usize,
    /// Penalty weight on the unnormalized criterion `½‖y − Xθ‖² + λΣp(θⱼ)`.
    pub lambda: f64,
    pub params: PenaltyParams,
    pub noise_sd: f64,
    pub seed: u64,
}

/// Empirical √n-consistency check with a fixed penalty weight.
///
/// For every sample size, draws `replicates` data sets with i.i.d.
/// standard-normal design and `y = Xθ + noise_sd·ε`, fits them and averages
/// `√n·‖θ̂ₙ − θ‖`. `lambda` weighs the unnormalized criterion
/// `½‖y − Xθ‖² + λΣp`, so [`fit`] (which uses the `1/2n` scaling) is called
/// with `lambda / n`. Keeping `lambda` fixed as `n` grows is what makes
/// `λ/√n → 0`.
///
/// Replicate `r` of the `i`-th sample size owns the ChaCha stream
/// `(i << 32) | r` of `seed`, so results do not depend on thread scheduling.
pub fn consistency_experiment(setup: &ConsistencySetup) -> Result<ConsistencyReport> {
    let p = setup.true_theta.len();
    if p == 0 {
        return Err(Error::InvalidArgument("true_theta must be non-empty".into()));
    }
    for (i, &t) in setup.true_theta.iter().enumerate() {
        ensure_finite(&format!("true_theta[{i}]"), t)?;
    }
    if setup.n_list.is_empty() || setup.n_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument(
            "n_list must be non-empty and strictly increasing".into(),
        ));
    }
    if setup.n_list[0] < p {
        return Err(Error::InvalidArgument(format!("sample sizes must be at least p = {p}")));
    }
    if setup.replicates < 10 {
        return Err(Error::InvalidArgument(format!(
            "need at least 10 replicates, got {}",
            setup.replicates
        )));
    }
    ensure_finite("lambda", setup.lambda)?;
    ensure_finite("noise_sd", setup.noise_sd)?;
    if setup.lambda < 0.0 || setup.noise_sd < 0.0 {
        return Err(Error::InvalidArgument("lambda and noise_sd must be nonnegative".into()));
    }

    let theta = DVector::from_column_slice(&setup.true_theta);
    let mut scaled_errors = Vec::with_capacity(setup.n_list.len());
    for (i, &n) in setup.n_list.iter().enumerate() {
        let errors = (0..setup.replicates)
            .into_par_iter()
            .map(|r| {
                let mut rng = ChaCha8Rng::seed_from_u64(setup.seed);
                rng.set_stream(((i as u64) << 32) | r as u64);
                let x = DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng));
                let noise = DVector::from_fn(n, |_, _| {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    setup.noise_sd * e
                });
                let y = &x * &theta + noise;
                let problem = RegressionProblem::new(x, y, setup.lambda / n as f64, setup.params)?;
                let result = fit(&problem, DEFAULT_MAX_ITER, DEFAULT_TOL)?;
                let estimate = DVector::from_vec(result.theta);
                Ok((n as f64).sqrt() * (estimate - &theta).norm())
            })
            .collect::<Result<Vec<f64>>>()?;
        scaled_errors.push(errors.iter().sum::<f64>() / setup.replicates as f64);
    }

    Ok(ConsistencyReport {
        sample_sizes: setup.n_list.clone(),
        scaled_errors,
        replicates: setup.replicates,
        seed: setup.seed,
    })
}
