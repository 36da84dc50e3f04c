//! Importance Weight Aware updates.
//!
//! An IWA update follows the gradient flow of one loss along its example:
//! `x(h) = x - s(h) q` with `s(0) = 0` and `s'(h) = η ℓ'(p - s(h) ‖q‖²)`,
//! `h ∈ [0, 1]`, where `ℓ` already carries the importance weight. The total
//! displacement `s(1)` has a closed form for every supported loss family; all
//! of them depend on the weight only through `τ = h η ‖q‖²`.

use thiserror::Error;

use crate::losses::{softplus, LossError, LossFamily, ScalarLoss};
use crate::scalar_math::{integrate_ode, integrate_ode_trajectory, lambert_w_exp, MathError};
use crate::sparse::SparseVec;

/// Past this margin `e^{yp}` overflows and the logistic flow is linearised.
const LOGISTIC_LINEAR_MARGIN: f64 = 700.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IwaError {
    #[error("learning rate must be positive and finite, got {0}")]
    InvalidEta(f64),
    #[error("squared norm must be non-negative and finite, got {0}")]
    InvalidNorm(f64),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error("gradient flow left the loss domain at h = {h}")]
    LeftDomain { h: f64 },
    #[error("non-finite intermediate in closed-form scaling ({0})")]
    NonFinite(&'static str),
    #[error(transparent)]
    Math(MathError),
}

/// Everything the flow depends on: the loss, the current prediction
/// `p = ⟨q, x⟩`, `‖q‖²` and the learning rate `η`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IwaContext {
    loss: ScalarLoss,
    p: f64,
    qnorm2: f64,
    eta: f64,
}

impl IwaContext {
    pub fn new(loss: ScalarLoss, p: f64, qnorm2: f64, eta: f64) -> Result<Self, IwaError> {
        if !(eta > 0.0) || !eta.is_finite() {
            return Err(IwaError::InvalidEta(eta));
        }
        if !(qnorm2 >= 0.0) || !qnorm2.is_finite() {
            return Err(IwaError::InvalidNorm(qnorm2));
        }
        loss.value(p)?;
        Ok(Self { loss, p, qnorm2, eta })
    }

    pub fn loss(&self) -> &ScalarLoss {
        &self.loss
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn qnorm2(&self) -> f64 {
        self.qnorm2
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// `τ = h η ‖q‖²`.
    pub fn tau(&self) -> f64 {
        self.loss.weight() * self.eta * self.qnorm2
    }

    /// Prediction after displacing by `s`: `p - s ‖q‖²`.
    pub fn prediction_at(&self, s: f64) -> f64 {
        self.p - s * self.qnorm2
    }

    /// Right-hand side of the flow; NaN once the prediction leaves the domain.
    fn rate(&self, s: f64) -> f64 {
        let p = self.prediction_at(s);
        if self.loss.in_domain(p) {
            self.eta * self.loss.d1_unchecked(p)
        } else {
            f64::NAN
        }
    }
}

/// Closed-form `s(1)`.
pub fn iwa_scaling_closed_form(ctx: &IwaContext) -> Result<f64, IwaError> {
    let loss = &ctx.loss;
    let (y, p, q2) = (loss.label(), ctx.p, ctx.qnorm2);
    if q2 == 0.0 {
        // The prediction never moves, so the slope stays at its initial value.
        return Ok(ctx.eta * loss.d1_unchecked(p));
    }
    let tau = ctx.tau();
    let s = match loss.family() {
        LossFamily::Squared => (p - y) / q2 * -(-tau).exp_m1(),
        LossFamily::Logistic => {
            // The margin v = y p(h) obeys v + e^v = y p + e^{yp} + τ h.
            let a = y * p;
            let margin_gain = if a > LOGISTIC_LINEAR_MARGIN {
                tau * (-a).exp()
            } else {
                let c = a + a.exp() + tau;
                let w = lambert_w_exp(c).map_err(IwaError::Math)?;
                // ln W(e^c) = c - W(e^c); the explicit log is better conditioned for w >= 1.
                let log_w = if w >= 1.0 { w.ln() } else { c - w };
                log_w - a
            };
            -y * margin_gain / q2
        }
        LossFamily::Exponential => {
            // e^{y p(1)} = e^{yp} + τ.
            let a = y * p;
            -y * softplus(tau.ln() - a) / q2
        }
        LossFamily::Logarithmic => {
            if y == 1.0 {
                // p(1)² = p² + 2τ
                -2.0 * tau / (p + (p * p + 2.0 * tau).sqrt()) / q2
            } else {
                // (1 - p(1))² = (1 - p)² + 2τ
                let r = 1.0 - p;
                2.0 * tau / (r + (r * r + 2.0 * tau).sqrt()) / q2
            }
        }
    };
    if s.is_finite() {
        Ok(s)
    } else {
        Err(IwaError::NonFinite(loss.family().name()))
    }
}

fn map_flow_error(err: MathError) -> IwaError {
    match err {
        MathError::NonFiniteRhs { h, .. } => IwaError::LeftDomain { h },
        other => IwaError::Math(other),
    }
}

/// `s(h_end)` by fixed-step RK4 on the flow equation. Ground truth for the
/// closed forms.
pub fn iwa_scaling_ode(ctx: &IwaContext, h_end: f64, step: f64) -> Result<f64, IwaError> {
    integrate_ode(|_, s| ctx.rate(s), h_end, step).map_err(map_flow_error)
}

/// One sample of the flow.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowPoint {
    pub h: f64,
    pub s: f64,
    /// `s'(h) = η ℓ'(p(h))`.
    pub slope: f64,
    /// `p(h) = p - s(h) ‖q‖²`.
    pub prediction: f64,
}

/// The RK4 flow over `[0, 1]` sampled at `samples + 1` evenly spaced points.
pub fn iwa_trajectory(ctx: &IwaContext, step: f64, samples: usize) -> Result<Vec<FlowPoint>, IwaError> {
    let traj = integrate_ode_trajectory(|_, s| ctx.rate(s), 1.0, step, samples).map_err(map_flow_error)?;
    traj.into_iter()
        .map(|(h, s)| {
            let slope = ctx.rate(s);
            if slope.is_finite() {
                Ok(FlowPoint { h, s, slope, prediction: ctx.prediction_at(s) })
            } else {
                Err(IwaError::LeftDomain { h })
            }
        })
        .collect()
}

/// The IWA surrogate gradient `z = s(1) q / η`.
pub fn iwa_surrogate(ctx: &IwaContext, q: &SparseVec) -> Result<SparseVec, IwaError> {
    let s1 = iwa_scaling_closed_form(ctx)?;
    Ok(q.scaled(s1 / ctx.eta))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx(family: LossFamily, y: f64, h: f64, p: f64, q2: f64, eta: f64) -> IwaContext {
        IwaContext::new(ScalarLoss::new(family, y, h).unwrap(), p, q2, eta).unwrap()
    }

    #[test]
    fn squared_example() {
        let c = ctx(LossFamily::Squared, 0.0, 1.0, 2.0, 1.0, 1.0);
        let expected = 2.0 * (1.0 - (-1.0f64).exp());
        assert!((iwa_scaling_closed_form(&c).unwrap() - expected).abs() < 1e-14);
        assert!((iwa_scaling_ode(&c, 1.0, 1e-4).unwrap() - expected).abs() < 1e-6);
    }

    #[test]
    fn stationary_start_gives_zero() {
        let c = ctx(LossFamily::Squared, 1.5, 3.0, 1.5, 2.0, 0.7);
        assert_eq!(iwa_scaling_closed_form(&c).unwrap(), 0.0);
        assert_eq!(iwa_scaling_ode(&c, 1.0, 1e-4).unwrap(), 0.0);
        let q = SparseVec::new(vec![0, 3], vec![1.0, 1.0]).unwrap();
        assert!(iwa_surrogate(&c, &q).unwrap().values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn exponential_example() {
        let c = ctx(LossFamily::Exponential, 1.0, 1.0, 0.0, 1.0, 1.0);
        let closed = iwa_scaling_closed_form(&c).unwrap();
        assert!((closed + 2f64.ln()).abs() < 1e-14);
        assert!((iwa_scaling_ode(&c, 1.0, 1e-4).unwrap() - closed).abs() < 1e-6);
    }

    #[test]
    fn logistic_example_against_oracle() {
        let c = ctx(LossFamily::Logistic, 1.0, 1.0, 0.0, 1.0, 1.0);
        let oracle = iwa_scaling_ode(&c, 1.0, 1e-4).unwrap();
        assert!((iwa_scaling_closed_form(&c).unwrap() - oracle).abs() < 1e-6);
        assert!(oracle < 0.0);
    }

    #[test]
    fn logistic_huge_margin_is_finite() {
        for p in [40.0, 800.0, -800.0] {
            let c = ctx(LossFamily::Logistic, 1.0, 1.0, p, 1.0, 1.0);
            let s = iwa_scaling_closed_form(&c).unwrap();
            assert!(s.is_finite() && s <= 0.0, "p = {p}: {s}");
        }
    }

    #[test]
    fn logarithmic_forms() {
        for (y, p) in [(1.0, 0.4), (0.0, 0.6)] {
            let c = ctx(LossFamily::Logarithmic, y, 1.0, p, 0.5, 0.3);
            let oracle = iwa_scaling_ode(&c, 1.0, 1e-4).unwrap();
            assert!((iwa_scaling_closed_form(&c).unwrap() - oracle).abs() < 1e-8);
        }
    }

    #[test]
    fn logarithmic_flow_leaving_domain_reports_h() {
        // p(1)² = 0.81 + 2 τ > 1, so the flow crosses p = 1 before h = 1.
        let c = ctx(LossFamily::Logarithmic, 1.0, 1.0, 0.9, 1.0, 1.0);
        match iwa_scaling_ode(&c, 1.0, 1e-4) {
            Err(IwaError::LeftDomain { h }) => {
                // Crossing happens where 0.81 + 2h = 1.
                assert!((h - 0.095).abs() < 1e-3, "h = {h}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zero_norm_limit() {
        let c = ctx(LossFamily::Logistic, -1.0, 2.0, 0.3, 0.0, 0.5);
        let expected = 0.5 * c.loss().d1(0.3).unwrap();
        assert_eq!(iwa_scaling_closed_form(&c).unwrap(), expected);
        assert!((iwa_scaling_ode(&c, 1.0, 1e-3).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn surrogate_scales_example() {
        let c = ctx(LossFamily::Squared, 0.0, 1.0, 2.0, 1.0, 1.0);
        let q = SparseVec::new(vec![0, 1], vec![1.0, 0.0]).unwrap();
        let z = iwa_surrogate(&c, &q).unwrap();
        assert!((z.values()[0] - 1.264_241_117_657_115).abs() < 1e-12);
        assert_eq!(z.values()[1], 0.0);
    }

    #[test]
    fn small_eta_recovers_gradient() {
        let q = SparseVec::new(vec![0, 2], vec![0.6, -1.3]).unwrap();
        for family in LossFamily::ALL {
            let (y, p) = match family {
                LossFamily::Logarithmic => (1.0, 0.3),
                LossFamily::Squared => (0.4, -1.0),
                _ => (-1.0, 0.7),
            };
            let c = ctx(family, y, 1.0, p, q.norm2(), 1e-6);
            let z = iwa_surrogate(&c, &q).unwrap();
            let g = c.loss().d1(p).unwrap();
            for (zi, qi) in z.values().iter().zip(q.values()) {
                assert!((zi - g * qi).abs() <= 1e-4 * (g * qi).abs(), "{family}");
            }
        }
    }

    #[test]
    fn invalid_context() {
        let l = ScalarLoss::new(LossFamily::Squared, 0.0, 1.0).unwrap();
        assert!(matches!(IwaContext::new(l, 0.0, 1.0, 0.0), Err(IwaError::InvalidEta(_))));
        assert!(matches!(IwaContext::new(l, 0.0, -1.0, 1.0), Err(IwaError::InvalidNorm(_))));
        let log = ScalarLoss::new(LossFamily::Logarithmic, 0.0, 1.0).unwrap();
        assert!(matches!(IwaContext::new(log, 1.0, 1.0, 1.0), Err(IwaError::Loss(_))));
    }

    #[test]
    fn trajectory_slopes_match_flow() {
        let c = ctx(LossFamily::Exponential, -1.0, 2.0, 0.5, 1.5, 0.8);
        let traj = iwa_trajectory(&c, 1e-4, 100).unwrap();
        assert_eq!(traj.len(), 101);
        assert_eq!(traj[0].slope, 0.8 * c.loss().d1(0.5).unwrap());
        let end = traj.last().unwrap();
        assert!((end.s - iwa_scaling_closed_form(&c).unwrap()).abs() < 1e-9);
    }
}
