//! Seeded numerical invariant suites.
//!
//! Every suite draws its instances from a ChaCha8 stream, evaluates them on
//! the chosen [`Execution`], and reports one [`Check`] per property with the
//! worst value observed against its tolerance.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::{synth_dataset, SynthSpec, Task};
use crate::engine::{LambdaSchedule, Learner, RegretLedger, ScheduleKind};
use crate::exec::{map_ordered, Execution};
use crate::iwa::{iwa_scaling_closed_form, iwa_scaling_ode, iwa_trajectory, FlowPoint, IwaContext};
use crate::losses::{LossFamily, ScalarLoss};
use crate::sparse::SparseVec;
use crate::surrogate::{choose_surrogate_vec, Strategy};

pub const ODE_STEP: f64 = 1e-4;
/// Instances whose flow has `η ℓ''(p) ‖q‖² · ODE_STEP` above this are too
/// stiff for the RK4 oracle and are redrawn.
pub const MAX_STIFFNESS: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Suite {
    Conjugates,
    IwaOracle,
    HInequality,
    RegretBound,
    Lemmas,
}

impl Suite {
    pub const ALL: [Suite; 5] = [Suite::Conjugates, Suite::IwaOracle, Suite::HInequality, Suite::RegretBound, Suite::Lemmas];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Conjugates => "conjugates",
            Suite::IwaOracle => "iwa-oracle",
            Suite::HInequality => "h-inequality",
            Suite::RegretBound => "regret-bound",
            Suite::Lemmas => "lemmas",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Suite::ALL
            .into_iter()
            .find(|x| x.name() == s.to_ascii_lowercase())
            .ok_or_else(|| format!("unknown suite `{s}`"))
    }
}

/// Outcome of one property. `worst` is the largest observed value of the
/// checked quantity; the check fails when it exceeds `tolerance`.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub cases: usize,
    pub violations: usize,
    pub worst: f64,
    pub tolerance: f64,
    /// Draws discarded by the instance filter.
    pub rejected: usize,
}

impl Check {
    fn new(name: impl Into<String>, tolerance: f64) -> Self {
        Self { name: name.into(), cases: 0, violations: 0, worst: f64::NEG_INFINITY, tolerance, rejected: 0 }
    }

    /// Records one observation; NaN counts as a violation.
    fn observe(&mut self, value: f64) {
        self.cases += 1;
        if value.is_nan() {
            self.violations += 1;
            self.worst = f64::NAN;
            return;
        }
        if value > self.tolerance {
            self.violations += 1;
        }
        if !self.worst.is_nan() {
            self.worst = self.worst.max(value);
        }
    }

    fn observe_all(&mut self, values: impl IntoIterator<Item = f64>) {
        for v in values {
            self.observe(v);
        }
    }

    pub fn passed(&self) -> bool {
        self.violations == 0 && self.cases > 0
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}: cases={} violations={} worst={:.3e} tol={:.1e}",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.cases,
            self.violations,
            self.worst,
            self.tolerance
        )?;
        if self.rejected > 0 {
            write!(f, " rejected={}", self.rejected)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub suite: Suite,
    pub checks: Vec<Check>,
    pub elapsed: Duration,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(Check::passed)
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "[{}] {} in {:.2?}", if self.passed() { "PASS" } else { "FAIL" }, self.suite, self.elapsed)?;
        for c in &self.checks {
            writeln!(f, "  {c}")?;
        }
        Ok(())
    }
}

/// Sizes and seed for the suites.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyParams {
    pub seed: u64,
    pub conjugate_pairs: usize,
    pub iwa_instances: usize,
    pub h_instances: usize,
    pub regret_runs: usize,
    pub regret_comparators: usize,
    pub regret_rounds: usize,
    pub regret_dim: usize,
    pub lemma_trajectories: usize,
    pub lemma_samples: usize,
    pub exec: Execution,
}

impl Default for VerifyParams {
    fn default() -> Self {
        Self {
            seed: 2024,
            conjugate_pairs: 500,
            iwa_instances: 200,
            h_instances: 1000,
            regret_runs: 20,
            regret_comparators: 20,
            regret_rounds: 500,
            regret_dim: 10,
            lemma_trajectories: 100,
            lemma_samples: 100,
            exec: Execution::default(),
        }
    }
}

pub fn run_suite(suite: Suite, params: &VerifyParams) -> SuiteReport {
    let start = Instant::now();
    let checks = match suite {
        Suite::Conjugates => conjugate_checks(params),
        Suite::IwaOracle => iwa_oracle_checks(params),
        Suite::HInequality => h_inequality_checks(params),
        Suite::RegretBound => regret_bound_checks(params),
        Suite::Lemmas => lemma_checks(params),
    };
    SuiteReport { suite, checks, elapsed: start.elapsed() }
}

fn suite_rng(params: &VerifyParams, suite: Suite, family: Option<LossFamily>) -> ChaCha8Rng {
    let s = Suite::ALL.iter().position(|x| *x == suite).unwrap_or(0) as u64;
    let f = family.map_or(0, |fam| 1 + LossFamily::ALL.iter().position(|x| *x == fam).unwrap_or(0) as u64);
    ChaCha8Rng::seed_from_u64(params.seed ^ (s << 40) ^ (f << 32))
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo.ln()..=hi.ln()).exp()
}

fn sample_label(rng: &mut ChaCha8Rng, family: LossFamily) -> f64 {
    match family {
        LossFamily::Squared => rng.random_range(-5.0..5.0),
        LossFamily::Logistic | LossFamily::Exponential => {
            if rng.random::<bool>() {
                1.0
            } else {
                -1.0
            }
        }
        LossFamily::Logarithmic => f64::from(u8::from(rng.random::<bool>())),
    }
}

fn sample_loss(rng: &mut ChaCha8Rng, family: LossFamily, h_lo: f64, h_hi: f64) -> ScalarLoss {
    let y = sample_label(rng, family);
    ScalarLoss::new(family, y, log_uniform(rng, h_lo, h_hi)).expect("sampled labels and weights are admissible")
}

fn sample_prediction(rng: &mut ChaCha8Rng, family: LossFamily) -> f64 {
    match family {
        LossFamily::Squared | LossFamily::Logistic => rng.random_range(-5.0..5.0),
        LossFamily::Exponential => rng.random_range(-3.0..3.0),
        LossFamily::Logarithmic => rng.random_range(0.02..0.98),
    }
}

fn conjugate_checks(params: &VerifyParams) -> Vec<Check> {
    let mut rng = suite_rng(params, Suite::Conjugates, None);
    let mut cases = Vec::with_capacity(params.conjugate_pairs);
    for i in 0..params.conjugate_pairs {
        let family = LossFamily::ALL[i % LossFamily::ALL.len()];
        let loss = sample_loss(&mut rng, family, 0.1, 10.0);
        let p = sample_prediction(&mut rng, family);
        let other = loss.d1(sample_prediction(&mut rng, family)).expect("sampled prediction in domain");
        let (lo, hi) = loss.conjugate_domain();
        let wide = rng.random_range(lo.max(-20.0)..=hi.min(20.0));
        cases.push((loss, p, other, wide));
    }
    let results = map_ordered(&cases, params.exec, |&(loss, p, other, wide)| {
        let value = loss.value_unchecked(p);
        let young = |s: f64| s * p - value - loss.conjugate(s);
        let g = loss.d1_unchecked(p);
        let equality = (value + loss.conjugate(g) - g * p).abs();
        let oracle = [g, other, wide]
            .into_iter()
            .map(|s| (loss.conjugate(s) - loss.conjugate_oracle(s)).abs())
            .fold(0.0, f64::max);
        (young(other).max(young(wide)), equality, oracle)
    });
    let mut fy = Check::new("fenchel-young", 1e-8);
    let mut eq = Check::new("equality-at-subgradient", 1e-8);
    let mut or = Check::new("conjugate-vs-numeric-sup", 1e-6);
    for (a, b, c) in results {
        fy.observe(a);
        eq.observe(b);
        or.observe(c);
    }
    vec![fy, eq, or]
}

fn max_curvature(loss: &ScalarLoss, p: f64) -> f64 {
    let at_start = loss.d2_unchecked(p);
    match loss.family() {
        LossFamily::Logistic => at_start.max(0.25 * loss.weight()),
        _ => at_start,
    }
}

/// Draws flow instances the RK4 oracle can resolve: not too stiff, and for
/// the logarithmic loss with an endpoint strictly inside `(0, 1)`.
fn sample_flow(rng: &mut ChaCha8Rng, family: LossFamily, rejected: &mut usize) -> IwaContext {
    loop {
        let loss = sample_loss(rng, family, 0.1, 100.0);
        let p = sample_prediction(rng, family);
        let qnorm2 = log_uniform(rng, 1e-3, 10.0);
        let eta = log_uniform(rng, 1e-3, 10.0);
        let stiff = eta * max_curvature(&loss, p) * qnorm2 * ODE_STEP > MAX_STIFFNESS;
        let tau = loss.weight() * eta * qnorm2;
        let leaves = match (family, loss.label() > 0.5) {
            (LossFamily::Logarithmic, true) => p * p + 2.0 * tau >= 1.0,
            (LossFamily::Logarithmic, false) => (1.0 - p).powi(2) + 2.0 * tau >= 1.0,
            _ => false,
        };
        if stiff || leaves {
            *rejected += 1;
            continue;
        }
        return IwaContext::new(loss, p, qnorm2, eta).expect("sampled flow context is valid");
    }
}

fn iwa_oracle_checks(params: &VerifyParams) -> Vec<Check> {
    let mut checks = Vec::new();
    for family in LossFamily::ALL {
        let mut rng = suite_rng(params, Suite::IwaOracle, Some(family));
        let mut check = Check::new(format!("closed-form-vs-rk4/{family}"), 1e-5);
        let ctxs: Vec<IwaContext> =
            (0..params.iwa_instances).map(|_| sample_flow(&mut rng, family, &mut check.rejected)).collect();
        check.observe_all(map_ordered(&ctxs, params.exec, |ctx| {
            match (iwa_scaling_closed_form(ctx), iwa_scaling_ode(ctx, 1.0, ODE_STEP)) {
                (Ok(cf), Ok(ode)) => (cf - ode).abs() / ode.abs().max(1.0),
                _ => f64::NAN,
            }
        }));
        checks.push(check);
    }
    checks
}

/// Whether `ℓ'` and `ℓ'''` share a sign at `samples + 1` points between the
/// prediction and the end of its IWA flow.
fn flow_sign_condition(ctx: &IwaContext, samples: usize) -> Option<f64> {
    let s1 = iwa_scaling_closed_form(ctx).ok()?;
    let (p0, p1) = (ctx.p(), ctx.prediction_at(s1));
    let loss = ctx.loss();
    let ok = (0..=samples).all(|k| {
        let p = p0 + (p1 - p0) * k as f64 / samples as f64;
        loss.in_domain(p) && loss.d1_unchecked(p) * loss.d3_unchecked(p) >= 0.0
    });
    ok.then_some(s1)
}

struct HInstance {
    loss: ScalarLoss,
    theta: Vec<f64>,
    q: SparseVec,
    lambda: f64,
}

fn sample_h_instance(rng: &mut ChaCha8Rng, family: LossFamily) -> HInstance {
    const DIM: usize = 5;
    let loss = sample_loss(rng, family, 0.1, 10.0);
    let scale = log_uniform(rng, 0.1, 2.0);
    let q: Vec<f64> = (0..DIM).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
    let lambda = log_uniform(rng, 0.1, 10.0);
    let spread = log_uniform(rng, 0.1, 10.0);
    let mut theta: Vec<f64> = (0..DIM).map(|_| spread * rng.sample::<f64, _>(StandardNormal)).collect();
    // Shift θ along q so that the prediction ⟨q, θ⟩/λ is the sampled one.
    let p = sample_prediction(rng, family);
    let qq: f64 = q.iter().map(|v| v * v).sum();
    let shift = (lambda * p - q.iter().zip(&theta).map(|(a, b)| a * b).sum::<f64>()) / qq;
    theta.iter_mut().zip(&q).for_each(|(t, qi)| *t += shift * qi);
    HInstance { loss, theta, q: SparseVec::from_dense(&q), lambda }
}

fn h_inequality_checks(params: &VerifyParams) -> Vec<Check> {
    const STRATEGIES: [Strategy; 3] = [Strategy::Iwa, Strategy::AProx, Strategy::Proximal];
    let mut checks = Vec::new();
    for family in LossFamily::ALL {
        let mut rng = suite_rng(params, Suite::HInequality, Some(family));
        let mut rejected = 0;
        let mut instances = Vec::with_capacity(params.h_instances);
        while instances.len() < params.h_instances {
            let inst = sample_h_instance(&mut rng, family);
            let x: Vec<f64> = inst.theta.iter().map(|t| t / inst.lambda).collect();
            let p = inst.q.dot_dense(&x);
            let accepted = IwaContext::new(inst.loss, p, inst.q.norm2(), 1.0 / inst.lambda)
                .ok()
                .and_then(|ctx| flow_sign_condition(&ctx, 100))
                .is_some();
            if accepted {
                instances.push(inst);
            } else {
                rejected += 1;
            }
        }
        let results = map_ordered(&instances, params.exec, |inst| {
            let x: Vec<f64> = inst.theta.iter().map(|t| t / inst.lambda).collect();
            STRATEGIES.map(|s| match choose_surrogate_vec(s, &inst.loss, &x, &inst.theta, &inst.q, inst.lambda) {
                Ok(d) => -d.delta,
                Err(_) => f64::NAN,
            })
        });
        for (k, strategy) in STRATEGIES.into_iter().enumerate() {
            let mut check = Check::new(format!("h(z)<=h(g)/{strategy}/{family}"), 1e-9);
            check.rejected = rejected;
            check.observe_all(results.iter().map(|r| r[k]));
            checks.push(check);
        }
    }
    checks
}

struct RegretRun {
    family: LossFamily,
    strategy: Strategy,
    schedule: ScheduleKind,
    eta0: f64,
    seed: u64,
    comparators: Vec<Vec<f64>>,
}

/// Worst `regret(u) - bound(u)` over the comparators of one run, or NaN if
/// the run failed.
fn regret_slacks(run: &RegretRun, params: &VerifyParams) -> Vec<f64> {
    let task = if run.family == LossFamily::Squared { Task::Regression } else { Task::BinaryPM1 };
    let spec = SynthSpec { task, n: params.regret_rounds, d: params.regret_dim, noise: 0.3, seed: run.seed };
    let Ok(data) = synth_dataset(&spec).labels_for(run.family) else {
        return vec![f64::NAN; run.comparators.len()];
    };
    let data = data.normalize_and_bias();
    let schedule = LambdaSchedule::new(run.schedule, run.eta0).expect("sampled eta0 is positive");
    let mut learner = Learner::new(run.family, run.strategy, schedule);
    let mut ledger = RegretLedger::new(run.comparators.clone());
    for e in &data.examples {
        match learner.step(e) {
            Ok(r) => ledger.observe(run.family, e, &r),
            Err(_) => return vec![f64::NAN; run.comparators.len()],
        }
    }
    (0..run.comparators.len()).map(|k| ledger.regret(k) - ledger.bound(k, &learner.state)).collect()
}

fn regret_bound_checks(params: &VerifyParams) -> Vec<Check> {
    let mut rng = suite_rng(params, Suite::RegretBound, None);
    let dim = params.regret_dim + 1;
    let runs: Vec<RegretRun> = (0..params.regret_runs)
        .map(|i| {
            let strategy = Strategy::ALL[i % Strategy::ALL.len()];
            // Linearized steps overflow past the stability limit of OGD.
            let eta_hi = if strategy == Strategy::Linearized { 0.5 } else { 20.0 };
            let eta0 = log_uniform(&mut rng, 0.02, eta_hi);
            let comparators = (0..params.regret_comparators)
                .map(|_| {
                    let r = log_uniform(&mut rng, 0.1, 10.0);
                    (0..dim).map(|_| r * rng.sample::<f64, _>(StandardNormal)).collect()
                })
                .collect();
            RegretRun {
                family: if i % 2 == 0 { LossFamily::Squared } else { LossFamily::Logistic },
                strategy,
                schedule: ScheduleKind::ALL[i % ScheduleKind::ALL.len()],
                eta0,
                seed: params.seed.wrapping_add(i as u64),
                comparators,
            }
        })
        .collect();
    let mut check = Check::new("regret<=bound", 1e-6);
    check.observe_all(map_ordered(&runs, params.exec, |run| regret_slacks(run, params)).into_iter().flatten());
    vec![check]
}

/// Violations of one trajectory, each as an amount beyond zero:
/// `[sign, non-increasing, convex, trapezoid, no-overshoot]`.
fn lemma_violations(ctx: &IwaContext, traj: &[FlowPoint]) -> [f64; 5] {
    let sigma = if ctx.loss().d1_unchecked(ctx.p()) >= 0.0 { 1.0 } else { -1.0 };
    let slopes: Vec<f64> = traj.iter().map(|f| sigma * f.slope).collect();
    let sign = slopes.iter().map(|v| -v).fold(f64::NEG_INFINITY, f64::max);
    let monotone = slopes.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
    let convex = slopes.windows(3).map(|w| -(w[2] - 2.0 * w[1] + w[0])).fold(f64::NEG_INFINITY, f64::max);
    let trapezoid = traj
        .iter()
        .zip(&slopes)
        .map(|(f, v)| sigma * f.s - f.h * 0.5 * (slopes[0] + v))
        .fold(f64::NEG_INFINITY, f64::max);
    let overshoot = if ctx.loss().family() == LossFamily::Squared {
        let y = ctx.loss().label();
        let side = (ctx.p() - y).signum();
        traj.iter().map(|f| -side * (f.prediction - y)).fold(f64::NEG_INFINITY, f64::max)
    } else {
        f64::NEG_INFINITY
    };
    [sign, monotone, convex, trapezoid, overshoot]
}

fn lemma_checks(params: &VerifyParams) -> Vec<Check> {
    const NAMES: [&str; 5] = ["slope-sign", "slope-non-increasing", "slope-convex", "trapezoid", "no-overshoot"];
    let mut checks = Vec::new();
    for family in LossFamily::ALL {
        let mut rng = suite_rng(params, Suite::Lemmas, Some(family));
        let mut rejected = 0;
        let mut ctxs = Vec::with_capacity(params.lemma_trajectories);
        while ctxs.len() < params.lemma_trajectories {
            let ctx = sample_flow(&mut rng, family, &mut rejected);
            if flow_sign_condition(&ctx, params.lemma_samples).is_some() {
                ctxs.push(ctx);
            } else {
                rejected += 1;
            }
        }
        let results = map_ordered(&ctxs, params.exec, |ctx| match iwa_trajectory(ctx, ODE_STEP, params.lemma_samples) {
            Ok(traj) => lemma_violations(ctx, &traj),
            Err(_) => [f64::NAN; 5],
        });
        let count = if family == LossFamily::Squared { 5 } else { 4 };
        for (k, name) in NAMES.iter().enumerate().take(count) {
            let mut check = Check::new(format!("{name}/{family}"), 1e-8);
            check.rejected = rejected;
            check.observe_all(results.iter().map(|r| r[k]));
            checks.push(check);
        }
    }
    checks
}
