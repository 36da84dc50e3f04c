//! The online learner: FTRL with quadratic regularizers `(λ_t/2)‖x‖²` on
//! `ℝ^d`, dual accumulator `θ_{t+1} = θ_t - z_t` and iterate `x_t = θ_t / λ_t`,
//! plus regret and bound bookkeeping.
//!
//! Each round contributes the bound term
//! `‖θ_t - g_t‖²/(2λ_{t+1}) - ‖θ_t‖²/(2λ_t) + ⟨x_t, g_t⟩ - δ_t`, and after
//! `T` rounds the regret against `u` is at most
//! `Σ terms + ⟨θ_{T+1}, u⟩ - ‖θ_{T+1}‖²/(2λ_{T+1})`.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::data::Example;
use crate::losses::{LossError, LossFamily, ScalarLoss};
use crate::sparse::SparseVec;
use crate::surrogate::{choose_surrogate, surrogate_coeff, DualGeometry, Strategy, SurrogateError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("eta0 must be positive and finite, got {0}")]
    InvalidEta(f64),
    #[error("round {t}: {source}")]
    Loss { t: u64, source: LossError },
    #[error("round {t}: {source}")]
    Surrogate { t: u64, source: SurrogateError },
    #[error("round {t}: non-finite state after update")]
    NonFinite { t: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScheduleKind {
    /// `λ_t = 1/η₀`.
    ConstOverEta,
    /// `λ_t = √t / η₀`.
    SqrtT,
    /// `λ_t = (1/η₀) √(1 + Σ_{i<t} ‖g_i‖²)` over subgradients seen so far.
    AdaptiveNorm,
}

impl ScheduleKind {
    pub const ALL: [ScheduleKind; 3] = [ScheduleKind::ConstOverEta, ScheduleKind::SqrtT, ScheduleKind::AdaptiveNorm];

    pub fn name(self) -> &'static str {
        match self {
            ScheduleKind::ConstOverEta => "const",
            ScheduleKind::SqrtT => "sqrt-t",
            ScheduleKind::AdaptiveNorm => "adaptive",
        }
    }
}

impl fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScheduleKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "const" | "constant" | "const-over-eta" => Ok(ScheduleKind::ConstOverEta),
            "sqrt-t" | "sqrt" | "sqrtt" => Ok(ScheduleKind::SqrtT),
            "adaptive" | "adaptive-norm" => Ok(ScheduleKind::AdaptiveNorm),
            other => Err(format!("unknown schedule `{other}`")),
        }
    }
}

/// `λ_t` for round `t ≥ 1`; `norm_sum` is `Σ_{i<t} ‖g_i‖²`.
pub fn lambda_schedule(kind: ScheduleKind, eta0: f64, t: u64, norm_sum: f64) -> f64 {
    match kind {
        ScheduleKind::ConstOverEta => 1.0 / eta0,
        ScheduleKind::SqrtT => (t as f64).sqrt() / eta0,
        ScheduleKind::AdaptiveNorm => (1.0 + norm_sum).sqrt() / eta0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaSchedule {
    pub kind: ScheduleKind,
    pub eta0: f64,
}

impl LambdaSchedule {
    pub fn new(kind: ScheduleKind, eta0: f64) -> Result<Self, EngineError> {
        if !(eta0 > 0.0) || !eta0.is_finite() {
            return Err(EngineError::InvalidEta(eta0));
        }
        Ok(Self { kind, eta0 })
    }

    pub fn at(&self, t: u64, norm_sum: f64) -> f64 {
        lambda_schedule(self.kind, self.eta0, t, norm_sum)
    }
}

/// What to do when the prediction falls outside the loss domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DomainPolicy {
    #[default]
    Abort,
    /// Leave the state untouched and mark the round as skipped.
    Skip,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnerState {
    /// Dense `θ_t`, grown on demand.
    pub theta: Vec<f64>,
    /// Index of the next round, starting at 1.
    pub t: u64,
    /// `λ_t`.
    pub lambda: f64,
    /// Cached `‖θ_t‖²`.
    pub norm_theta2: f64,
    /// `Σ ‖g_i‖²` over the rounds played.
    pub grad_norm_sum: f64,
}

impl LearnerState {
    pub fn new(schedule: &LambdaSchedule) -> Self {
        Self { theta: Vec::new(), t: 1, lambda: schedule.at(1, 0.0), norm_theta2: 0.0, grad_norm_sum: 0.0 }
    }

    pub fn predict(&self, q: &SparseVec) -> f64 {
        q.dot_dense(&self.theta) / self.lambda
    }

    /// `x_t = θ_t / λ_t`, padded to at least `dim` coordinates.
    pub fn iterate(&self, dim: usize) -> Vec<f64> {
        let mut x: Vec<f64> = self.theta.iter().map(|v| v / self.lambda).collect();
        if x.len() < dim {
            x.resize(dim, 0.0);
        }
        x
    }

    fn subtract(&mut self, coeff: f64, q: &SparseVec) {
        if self.theta.len() < q.min_dim() {
            self.theta.resize(q.min_dim(), 0.0);
        }
        for (i, v) in q.iter() {
            let old = self.theta[i];
            let new = old - coeff * v;
            self.theta[i] = new;
            self.norm_theta2 += new * new - old * old;
        }
        self.norm_theta2 = self.norm_theta2.max(0.0);
    }

    pub fn refresh_norm(&mut self) {
        self.norm_theta2 = self.theta.iter().map(|v| v * v).sum();
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundRecord {
    pub t: u64,
    pub prediction: f64,
    pub loss: f64,
    pub gradient_coeff: f64,
    pub coeff: f64,
    /// NaN when diagnostics are off.
    pub delta: f64,
    pub h_at_g: f64,
    pub h_at_z: f64,
    pub bound_term: f64,
    pub lambda: f64,
    pub lambda_next: f64,
    pub skipped: bool,
}

const NORM_REFRESH_EVERY: u64 = 1024;

#[derive(Debug, Clone)]
pub struct Learner {
    pub family: LossFamily,
    pub strategy: Strategy,
    pub schedule: LambdaSchedule,
    pub policy: DomainPolicy,
    /// Evaluate `H` at both candidates and the bound term every round.
    pub diagnostics: bool,
    pub state: LearnerState,
}

impl Learner {
    pub fn new(family: LossFamily, strategy: Strategy, schedule: LambdaSchedule) -> Self {
        Self {
            family,
            strategy,
            schedule,
            policy: DomainPolicy::Abort,
            diagnostics: true,
            state: LearnerState::new(&schedule),
        }
    }

    pub fn with_policy(mut self, policy: DomainPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn with_diagnostics(mut self, on: bool) -> Self {
        self.diagnostics = on;
        self
    }

    pub fn step(&mut self, example: &Example) -> Result<RoundRecord, EngineError> {
        let state = &mut self.state;
        let t = state.t;
        let q = &example.features;
        let loss = ScalarLoss::new(self.family, example.label, example.weight)
            .map_err(|source| EngineError::Loss { t, source })?;
        let theta_dot_q = q.dot_dense(&state.theta);
        let p = theta_dot_q / state.lambda;
        if !loss.in_domain(p) {
            match self.policy {
                DomainPolicy::Abort => {
                    return Err(EngineError::Loss { t, source: LossError::OutOfDomain { family: self.family, p } })
                }
                DomainPolicy::Skip => {
                    return Ok(RoundRecord {
                        t,
                        prediction: p,
                        loss: f64::NAN,
                        gradient_coeff: f64::NAN,
                        coeff: 0.0,
                        delta: f64::NAN,
                        h_at_g: f64::NAN,
                        h_at_z: f64::NAN,
                        bound_term: 0.0,
                        lambda: state.lambda,
                        lambda_next: state.lambda,
                        skipped: true,
                    })
                }
            }
        }
        let value = loss.value_unchecked(p);
        let qnorm2 = q.norm2();
        let g = loss.d1_unchecked(p);
        state.grad_norm_sum += g * g * qnorm2;
        let lambda_next = self.schedule.at(t + 1, state.grad_norm_sum);
        let geom = DualGeometry { p, theta_dot_q, qnorm2, theta_norm2: state.norm_theta2, lambda_next };
        let surrogate_err = |source| EngineError::Surrogate { t, source };
        let (coeff, delta, h_at_g, h_at_z, bound_term) = if self.diagnostics {
            let d = choose_surrogate(self.strategy, &loss, &geom).map_err(surrogate_err)?;
            let theta2 = state.norm_theta2;
            let term = theta2 * (0.5 / lambda_next - 0.5 / state.lambda)
                + (g * g * qnorm2 - 2.0 * g * theta_dot_q) / (2.0 * lambda_next)
                + g * p
                - d.delta;
            (d.coeff, d.delta, d.h_at_g, d.h_at_z, term)
        } else {
            let (c, _) = surrogate_coeff(self.strategy, &loss, &geom).map_err(surrogate_err)?;
            (c, f64::NAN, f64::NAN, f64::NAN, f64::NAN)
        };
        if coeff != 0.0 {
            state.subtract(coeff, q);
        }
        if t.is_multiple_of(NORM_REFRESH_EVERY) {
            state.refresh_norm();
        }
        if !state.norm_theta2.is_finite() || !coeff.is_finite() {
            return Err(EngineError::NonFinite { t });
        }
        let lambda = state.lambda;
        state.t += 1;
        state.lambda = lambda_next;
        Ok(RoundRecord {
            t,
            prediction: p,
            loss: value,
            gradient_coeff: g,
            coeff,
            delta,
            h_at_g,
            h_at_z,
            bound_term,
            lambda,
            lambda_next,
            skipped: false,
        })
    }
}

/// The regret bound against `u` after the rounds in `records`, with `state`
/// the learner state after the last of them.
pub fn bound_terms(records: &[RoundRecord], state: &LearnerState, u: &[f64]) -> f64 {
    let sum: f64 = records.iter().map(|r| r.bound_term).sum();
    final_bound(sum, state, u)
}

fn final_bound(bound_sum: f64, state: &LearnerState, u: &[f64]) -> f64 {
    let theta_u: f64 = state.theta.iter().zip(u).map(|(a, b)| a * b).sum();
    bound_sum + theta_u - state.norm_theta2 / (2.0 * state.lambda)
}

/// Cumulative losses of the learner and of fixed comparators, and the running
/// sum of bound terms. Skipped rounds are ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct RegretLedger {
    pub comparators: Vec<Vec<f64>>,
    /// `+∞` once a comparator predicts outside the loss domain.
    pub cum_loss_comp: Vec<f64>,
    pub cum_loss_alg: f64,
    pub bound_sum: f64,
    pub cum_delta: f64,
    pub rounds: u64,
}

impl RegretLedger {
    pub fn new(comparators: Vec<Vec<f64>>) -> Self {
        let k = comparators.len();
        Self { comparators, cum_loss_comp: vec![0.0; k], cum_loss_alg: 0.0, bound_sum: 0.0, cum_delta: 0.0, rounds: 0 }
    }

    pub fn observe(&mut self, family: LossFamily, example: &Example, record: &RoundRecord) {
        if record.skipped {
            return;
        }
        self.rounds += 1;
        self.cum_loss_alg += record.loss;
        self.bound_sum += record.bound_term;
        self.cum_delta += record.delta;
        let Ok(loss) = ScalarLoss::new(family, example.label, example.weight) else {
            return;
        };
        for (u, cum) in self.comparators.iter().zip(self.cum_loss_comp.iter_mut()) {
            let pu = example.features.dot_dense(u);
            *cum += loss.value(pu).unwrap_or(f64::INFINITY);
        }
    }

    pub fn regret(&self, k: usize) -> f64 {
        self.cum_loss_alg - self.cum_loss_comp[k]
    }

    pub fn bound(&self, k: usize, state: &LearnerState) -> f64 {
        final_bound(self.bound_sum, state, &self.comparators[k])
    }

    pub fn avg_loss(&self) -> f64 {
        self.cum_loss_alg / self.rounds as f64
    }
}
