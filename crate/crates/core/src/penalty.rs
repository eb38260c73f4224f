//! The foothill penalty `p(x) = α·x·tanh(βx/2)` and its calculus.
//!
//! The penalty is smooth, even and quasiconvex. Depending on `(α, β)` it
//! behaves like the absolute value (`α = 1`, `β → ∞`), like the square
//! (`β = 2/α`, `α → ∞`) or like a Huber loss (`β = 2/α`, moderate `α`).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::roots::newton_bisect;

/// Beyond this value of `|βx/2|`, `tanh` is taken as exactly ±1 and `sech²` as 0.
const TANH_SATURATION: f64 = 20.0;

/// Shape `alpha` and scale `beta` of the penalty. Both are strictly positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams")]
pub struct PenaltyParams {
    alpha: f64,
    beta: f64,
}

#[derive(Deserialize)]
struct RawParams {
    alpha: f64,
    beta: f64,
}

impl TryFrom<RawParams> for PenaltyParams {
    type Error = Error;

    fn try_from(raw: RawParams) -> Result<Self> {
        PenaltyParams::new(raw.alpha, raw.beta)
    }
}

impl PenaltyParams {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "alpha must be positive and finite, got {alpha}"
            )));
        }
        if !(beta.is_finite() && beta > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "beta must be positive and finite, got {beta}"
            )));
        }
        Ok(Self { alpha, beta })
    }

    /// The Huber/Ridge-like parameterization `β = 2/α`.
    pub fn ridge_like(alpha: f64) -> Result<Self> {
        Self::new(alpha, 2.0 / alpha)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Upper bound on the second derivative, attained at the origin.
    pub fn curvature_bound(&self) -> f64 {
        self.alpha * self.beta
    }
}

impl fmt::Display for PenaltyParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(alpha={}, beta={})", self.alpha, self.beta)
    }
}

/// `(tanh(u), sech²(u))` for `u ≥ 0`, saturated for large arguments.
#[inline]
fn tanh_sech2(u: f64) -> (f64, f64) {
    if u > TANH_SATURATION {
        (1.0, 0.0)
    } else {
        let c = u.cosh();
        (u.tanh(), 1.0 / (c * c))
    }
}

// The three kernels below skip the finiteness check; the public functions
// and the hot loops in `prox` and `quantizer` share them.

#[inline]
pub(crate) fn eval_unchecked(params: &PenaltyParams, x: f64) -> f64 {
    let ax = x.abs();
    let (t, _) = tanh_sech2(0.5 * params.beta * ax);
    params.alpha * ax * t
}

#[inline]
pub(crate) fn grad_unchecked(params: &PenaltyParams, x: f64) -> f64 {
    let ax = x.abs();
    let (t, s2) = tanh_sech2(0.5 * params.beta * ax);
    let g = params.alpha * t + 0.5 * params.alpha * params.beta * ax * s2;
    if x < 0.0 {
        -g
    } else {
        g
    }
}

#[inline]
pub(crate) fn hess_unchecked(params: &PenaltyParams, x: f64) -> f64 {
    let ax = x.abs();
    let (t, s2) = tanh_sech2(0.5 * params.beta * ax);
    0.5 * params.alpha * params.beta * s2 * (2.0 - params.beta * ax * t)
}

/// Penalty value `α·x·tanh(βx/2)`.
pub fn eval(params: &PenaltyParams, x: f64) -> Result<f64> {
    ensure_finite("x", x)?;
    Ok(eval_unchecked(params, x))
}

/// First derivative `α·tanh(βx/2) + ½αβx·sech²(βx/2)`.
pub fn grad(params: &PenaltyParams, x: f64) -> Result<f64> {
    ensure_finite("x", x)?;
    Ok(grad_unchecked(params, x))
}

/// Second derivative `½αβ·sech²(βx/2)·(2 − βx·tanh(βx/2))`.
pub fn hess(params: &PenaltyParams, x: f64) -> Result<f64> {
    ensure_finite("x", x)?;
    Ok(hess_unchecked(params, x))
}

/// Positive inflection point of the penalty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SaddleInfo {
    pub x0: f64,
    /// Penalty value at `x0`, equal to `2α/β`.
    pub value: f64,
}

/// Locates the positive root of `2 − βx·tanh(βx/2)`, where the second
/// derivative changes sign (`βx0 ≈ 2.3994`).
pub fn saddle(params: &PenaltyParams) -> SaddleInfo {
    let beta = params.beta;
    let residual = |x: f64| {
        let u = 0.5 * beta * x;
        let (t, s2) = tanh_sech2(u);
        (2.0 - beta * x * t, -beta * t - beta * u * s2)
    };
    let x0 =
        newton_bisect(residual, 1.0 / beta, 10.0 / beta, 1e-15, 200).expect("2 - u tanh(u/2) changes sign on [1, 10]");
    SaddleInfo {
        x0,
        value: 2.0 * params.alpha / beta,
    }
}

/// Truncated Taylor series `(αβ/2)x² − (αβ³/24)x⁴ + (αβ⁵/240)x⁶` of order 2, 4 or 6.
pub fn taylor_eval(params: &PenaltyParams, x: f64, order: u32) -> Result<f64> {
    ensure_finite("x", x)?;
    let (a, b) = (params.alpha, params.beta);
    let x2 = x * x;
    let terms = [
        0.5 * a * b * x2,
        -a * b.powi(3) / 24.0 * x2 * x2,
        a * b.powi(5) / 240.0 * x2 * x2 * x2,
    ];
    let n = match order {
        2 => 1,
        4 => 2,
        6 => 3,
        _ => {
            return Err(Error::InvalidArgument(format!(
                "Taylor order must be 2, 4 or 6, got {order}"
            )))
        }
    };
    Ok(terms[..n].iter().sum())
}

/// `∫₀ᶜ (x² − p(x))² dx` for the Ridge-like parameterization `β = 2/α`.
///
/// Integrated with adaptive Simpson quadrature to an absolute tolerance of
/// 1e-12. The leading-order behaviour is `c⁹ / (81 α⁴)`.
pub fn ridge_gap(params: &PenaltyParams, c: f64) -> Result<f64> {
    if !(c.is_finite() && c > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "c must be positive and finite, got {c}"
        )));
    }
    if (params.beta - 2.0 / params.alpha).abs() > 1e-12 {
        return Err(Error::InvalidArgument(format!(
            "ridge gap requires beta = 2/alpha, got {params}"
        )));
    }
    let integrand = |x: f64| {
        let d = x * x - eval_unchecked(params, x);
        d * d
    };
    Ok(adaptive_simpson(&integrand, 0.0, c, 1e-12))
}

fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(f, a, b, fa, fm, fb, whole, tol, 50)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Named parameterizations relating the penalty to classical functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NamedCase {
    /// `α = 1`, `β = 1e4` standing in for `β → ∞`: approaches `|x|`.
    LassoLimit,
    /// `α = 1e3`, `β = 2/α` standing in for `α → ∞`: approaches `x²`.
    RidgeLimit,
    /// `α = 16`, `β = 2/α`: `α·x·tanh(x/α)`.
    HuberLike,
    /// `α = 1`, `β = 2`: `x·tanh(x)`.
    Canonical,
}

impl NamedCase {
    pub const ALL: [NamedCase; 4] = [
        NamedCase::LassoLimit,
        NamedCase::RidgeLimit,
        NamedCase::HuberLike,
        NamedCase::Canonical,
    ];

    pub fn params(self) -> PenaltyParams {
        let (alpha, beta) = match self {
            NamedCase::LassoLimit => (1.0, 1e4),
            NamedCase::RidgeLimit => (1e3, 2.0 / 1e3),
            NamedCase::HuberLike => (16.0, 2.0 / 16.0),
            NamedCase::Canonical => (1.0, 2.0),
        };
        PenaltyParams { alpha, beta }
    }

    pub fn name(self) -> &'static str {
        match self {
            NamedCase::LassoLimit => "lasso_limit",
            NamedCase::RidgeLimit => "ridge_limit",
            NamedCase::HuberLike => "huber_like",
            NamedCase::Canonical => "canonical",
        }
    }
}

impl FromStr for NamedCase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        NamedCase::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown named case `{s}`")))
    }
}

pub fn named_case(name: &str) -> Result<PenaltyParams> {
    name.parse::<NamedCase>().map(NamedCase::params)
}
