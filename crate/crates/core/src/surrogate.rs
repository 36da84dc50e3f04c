//! Surrogate gradients `z_t = c · q_t` and the dual objective
//! `H(z) = ‖θ - z‖² / (2λ) + ℓ*(z)` they are judged by.
//!
//! Every strategy picks `z` on the span of the example, so `H` reduces to a
//! function of the scalar coefficient `c` and only needs `⟨θ, q⟩`, `‖q‖²` and
//! `‖θ‖²`. For `ℓ(x) = ℓ̂(⟨q, x⟩)` and `q ≠ 0`, `ℓ*(c q) = ℓ̂*(c)`.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::iwa::{iwa_scaling_closed_form, IwaContext, IwaError};
use crate::losses::{LossError, ScalarLoss};
use crate::scalar_math::{solve_1d_newton, Bracket, MathError};
use crate::sparse::SparseVec;

const PROX_TOL: f64 = 1e-12;
const MAX_EXPANSIONS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Strategy {
    Linearized,
    AProx,
    Iwa,
    Proximal,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::Linearized, Strategy::AProx, Strategy::Iwa, Strategy::Proximal];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Linearized => "linearized",
            Strategy::AProx => "aprox",
            Strategy::Iwa => "iwa",
            Strategy::Proximal => "proximal",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "linearized" | "linear" | "ogd" => Ok(Strategy::Linearized),
            "aprox" => Ok(Strategy::AProx),
            "iwa" => Ok(Strategy::Iwa),
            "proximal" | "prox" | "implicit" => Ok(Strategy::Proximal),
            other => Err(format!("unknown strategy `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SurrogateError {
    #[error("regularizer strength must be positive and finite, got {0}")]
    InvalidLambda(f64),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Iwa(#[from] IwaError),
    #[error("proximal solve failed: {0}")]
    Prox(MathError),
}

/// The inner products a round needs, with `p = ⟨q, x_t⟩` the prediction
/// actually paid and `lambda_next = λ_{t+1}` the strength inside `H`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualGeometry {
    pub p: f64,
    pub theta_dot_q: f64,
    pub qnorm2: f64,
    pub theta_norm2: f64,
    pub lambda_next: f64,
}

impl DualGeometry {
    pub fn from_vectors(x: &[f64], theta: &[f64], q: &SparseVec, lambda_next: f64) -> Self {
        Self {
            p: q.dot_dense(x),
            theta_dot_q: q.dot_dense(theta),
            qnorm2: q.norm2(),
            theta_norm2: theta.iter().map(|v| v * v).sum(),
            lambda_next,
        }
    }

    fn validate(&self) -> Result<(), SurrogateError> {
        if self.lambda_next > 0.0 && self.lambda_next.is_finite() {
            Ok(())
        } else {
            Err(SurrogateError::InvalidLambda(self.lambda_next))
        }
    }

    /// `⟨q, θ⟩ / λ_{t+1}`.
    fn dual_prediction(&self) -> f64 {
        self.theta_dot_q / self.lambda_next
    }

    /// The part of `H(c q)` that depends on `c`.
    fn h_relative(&self, loss: &ScalarLoss, c: f64) -> f64 {
        let quad = (c * c * self.qnorm2 - 2.0 * c * self.theta_dot_q) / (2.0 * self.lambda_next);
        quad + loss.conjugate(c)
    }
}

/// `H(c q)`; `+∞` when `c` is outside the conjugate domain.
pub fn eval_h(loss: &ScalarLoss, geom: &DualGeometry, c: f64) -> f64 {
    if geom.qnorm2 == 0.0 {
        // ℓ is constant in x, so its conjugate is finite only at 0.
        return geom.theta_norm2 / (2.0 * geom.lambda_next) - loss.value_unchecked(0.0);
    }
    geom.theta_norm2 / (2.0 * geom.lambda_next) + geom.h_relative(loss, c)
}

/// Outcome of one surrogate choice: `z = coeff · q`, the subgradient
/// coefficient, `H` at both and `δ = H(g) - H(z)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurrogateDecision {
    pub coeff: f64,
    pub gradient_coeff: f64,
    pub h_at_g: f64,
    pub h_at_z: f64,
    pub delta: f64,
}

fn clamp_to_conjugate_domain(loss: &ScalarLoss, c: f64) -> f64 {
    let (lo, hi) = loss.conjugate_domain();
    c.clamp(lo, hi)
}

/// Coefficient of `z` for one round, plus the subgradient coefficient
/// `g = ℓ'(p)`. Zero whenever the gradient or the example vanishes.
pub fn surrogate_coeff(
    strategy: Strategy,
    loss: &ScalarLoss,
    geom: &DualGeometry,
) -> Result<(f64, f64), SurrogateError> {
    geom.validate()?;
    let g = loss.d1(geom.p)?;
    if g == 0.0 || geom.qnorm2 == 0.0 {
        return Ok((0.0, g));
    }
    let coeff = match strategy {
        Strategy::Linearized => g,
        Strategy::AProx => {
            let value = loss.value_unchecked(geom.p);
            let step = (geom.lambda_next * value / (g * g * geom.qnorm2)).min(1.0);
            clamp_to_conjugate_domain(loss, step * g)
        }
        Strategy::Iwa => {
            let eta = 1.0 / geom.lambda_next;
            let ctx = IwaContext::new(*loss, geom.p, geom.qnorm2, eta)?;
            clamp_to_conjugate_domain(loss, iwa_scaling_closed_form(&ctx)? / eta)
        }
        Strategy::Proximal => prox_coeff(loss, geom)?,
    };
    Ok((coeff, g))
}

/// Picks the surrogate for one round and evaluates `H` at it and at `g`.
///
/// `δ` is computed from the `c`-dependent part of `H` only, so it does not
/// suffer cancellation against a large `‖θ‖²`.
pub fn choose_surrogate(
    strategy: Strategy,
    loss: &ScalarLoss,
    geom: &DualGeometry,
) -> Result<SurrogateDecision, SurrogateError> {
    let (coeff, g) = surrogate_coeff(strategy, loss, geom)?;
    if geom.qnorm2 == 0.0 || g == 0.0 {
        let h0 = eval_h(loss, geom, 0.0);
        return Ok(SurrogateDecision { coeff, gradient_coeff: g, h_at_g: h0, h_at_z: h0, delta: 0.0 });
    }
    let (rel_g, rel_z) = (geom.h_relative(loss, g), geom.h_relative(loss, coeff));
    let base = geom.theta_norm2 / (2.0 * geom.lambda_next);
    let delta = if coeff == g { 0.0 } else { rel_g - rel_z };
    Ok(SurrogateDecision { coeff, gradient_coeff: g, h_at_g: base + rel_g, h_at_z: base + rel_z, delta })
}

/// Convenience wrapper over dense iterate/accumulator and a sparse example.
pub fn choose_surrogate_vec(
    strategy: Strategy,
    loss: &ScalarLoss,
    x: &[f64],
    theta: &[f64],
    q: &SparseVec,
    lambda_next: f64,
) -> Result<SurrogateDecision, SurrogateError> {
    choose_surrogate(strategy, loss, &DualGeometry::from_vectors(x, theta, q, lambda_next))
}

/// Exact minimiser of `c ↦ H(c q)`.
///
/// Solves the stationarity condition `p*(c) = ⟨q, θ⟩/λ - c ‖q‖²/λ`, where
/// `p*(c)` is the conjugate's maximiser, with bracket expansion and
/// safeguarded Newton. The solution is the implicit-update fixed point
/// `c = ℓ'(⟨q, x_{t+1}⟩)`.
pub fn prox_coeff(loss: &ScalarLoss, geom: &DualGeometry) -> Result<f64, SurrogateError> {
    geom.validate()?;
    if geom.qnorm2 == 0.0 {
        return Ok(0.0);
    }
    let curvature = geom.qnorm2 / geom.lambda_next;
    let target = geom.dual_prediction();
    let stationarity = |c: f64| loss.conjugate_argmax(c) - target + c * curvature;
    let (dom_lo, dom_hi) = loss.conjugate_domain();

    let g = loss.d1_unchecked(geom.p);
    let g = if g.is_finite() { g } else { 0.0 };
    let mut lo = g.min(0.0).max(dom_lo);
    let mut hi = g.max(0.0).min(dom_hi);
    let mut width = (hi - lo).max(loss.weight()).max(1e-8);
    for _ in 0..MAX_EXPANSIONS {
        if stationarity(lo) <= 0.0 {
            break;
        }
        lo = (lo - width).max(dom_lo);
        width *= 2.0;
    }
    let mut width = (hi - lo).max(1e-8);
    for _ in 0..MAX_EXPANSIONS {
        if stationarity(hi) >= 0.0 {
            break;
        }
        hi = (hi + width).min(dom_hi);
        width *= 2.0;
    }
    if lo == hi {
        return Ok(lo);
    }
    let bracket = Bracket::new(lo, hi).map_err(SurrogateError::Prox)?;
    let fdf = |c: f64| {
        let p = loss.conjugate_argmax(c);
        let slope = if loss.in_domain(p) { 1.0 / loss.d2_unchecked(p) } else { 0.0 };
        (p - target + c * curvature, slope + curvature)
    };
    let c = solve_1d_newton(fdf, bracket, PROX_TOL).map_err(SurrogateError::Prox)?;
    Ok(c.clamp(dom_lo, dom_hi))
}
