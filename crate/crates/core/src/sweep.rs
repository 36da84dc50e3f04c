//! Learning-rate sweeps: one fresh learner per (strategy, η₀, seed) cell, a
//! shuffled pass over the data, averaged-loss trajectories.

use thiserror::Error;

use crate::data::{DataError, Dataset};
use crate::engine::{DomainPolicy, LambdaSchedule, Learner, RegretLedger, ScheduleKind};
use crate::exec::{map_ordered, Execution};
use crate::losses::LossFamily;
use crate::surrogate::Strategy;

#[derive(Debug, Error)]
pub enum SweepError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("invalid sweep configuration: {0}")]
    Config(String),
}

/// `n` log-spaced points from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.log10(), hi.log10());
            (0..n).map(|i| 10f64.powf(a + (b - a) * i as f64 / (n - 1) as f64)).collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub strategies: Vec<Strategy>,
    pub eta_grid: Vec<f64>,
    pub seeds: Vec<u64>,
    pub loss: LossFamily,
    pub schedule: ScheduleKind,
    pub record_diagnostics: bool,
    /// Emit a row every this many rounds; the final round is always emitted.
    pub record_every: u64,
    /// Max-abs column scaling plus a bias feature before the sweep.
    pub normalize: bool,
    pub policy: DomainPolicy,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            strategies: Strategy::ALL.to_vec(),
            eta_grid: log_grid(1e-3, 1e3, 25),
            seeds: (0..10).collect(),
            loss: LossFamily::Squared,
            schedule: ScheduleKind::SqrtT,
            record_diagnostics: true,
            record_every: 1,
            normalize: true,
            policy: DomainPolicy::Abort,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<(), SweepError> {
        let bad = |m: &str| Err(SweepError::Config(m.to_string()));
        if self.strategies.is_empty() {
            return bad("no strategies");
        }
        if self.eta_grid.is_empty() || self.eta_grid.iter().any(|e| !(*e > 0.0) || !e.is_finite()) {
            return bad("eta values must be positive and finite");
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.seeds.len() || seeds.is_empty() {
            return bad("seeds must be distinct and non-empty");
        }
        if self.record_every == 0 {
            return bad("record_every must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub strategy: Strategy,
    pub eta0: f64,
    pub seed: u64,
    pub t: u64,
    /// `(1/t) Σ_{i≤t} ℓ_i(x_i)`.
    pub avg_loss: f64,
    pub cum_delta: f64,
    /// Bound minus regret against the zero comparator.
    pub bound_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

/// Final averaged loss over seeds for one (strategy, η₀).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellSummary {
    pub strategy: Strategy,
    pub eta0: f64,
    /// NaN if any seed failed.
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub failed: usize,
}

/// η₀ values whose mean final loss is within a relative tolerance of the best.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Band {
    pub best: f64,
    pub best_eta: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Band {
    pub fn width(&self) -> f64 {
        self.hi / self.lo
    }
}

fn strategy_rank(s: Strategy) -> usize {
    Strategy::ALL.iter().position(|x| *x == s).unwrap_or(usize::MAX)
}

fn row_order(a: &SweepRow, b: &SweepRow) -> std::cmp::Ordering {
    strategy_rank(a.strategy)
        .cmp(&strategy_rank(b.strategy))
        .then(a.eta0.total_cmp(&b.eta0))
        .then(a.seed.cmp(&b.seed))
        .then(a.t.cmp(&b.t))
}

impl SweepResult {
    pub fn sort(&mut self) {
        self.rows.sort_by(row_order);
    }

    /// The last row of every (strategy, η₀, seed) cell.
    pub fn final_rows(&self) -> Vec<SweepRow> {
        let mut out: Vec<SweepRow> = Vec::new();
        for r in &self.rows {
            match out.last_mut() {
                Some(last) if last.strategy == r.strategy && last.eta0 == r.eta0 && last.seed == r.seed => {
                    if r.t >= last.t {
                        *last = *r;
                    }
                }
                _ => out.push(*r),
            }
        }
        out
    }

    pub fn summary(&self) -> Vec<CellSummary> {
        let mut out: Vec<CellSummary> = Vec::new();
        let mut counts: Vec<usize> = Vec::new();
        for r in self.final_rows() {
            let v = r.avg_loss;
            match out.last_mut() {
                Some(c) if c.strategy == r.strategy && c.eta0 == r.eta0 => {
                    c.mean += v;
                    c.min = c.min.min(v);
                    c.max = c.max.max(v);
                    c.failed += usize::from(v.is_nan());
                    *counts.last_mut().expect("parallel to out") += 1;
                }
                _ => {
                    out.push(CellSummary {
                        strategy: r.strategy,
                        eta0: r.eta0,
                        mean: v,
                        min: v,
                        max: v,
                        failed: usize::from(v.is_nan()),
                    });
                    counts.push(1);
                }
            }
        }
        for (c, n) in out.iter_mut().zip(counts) {
            c.mean /= n as f64;
        }
        out
    }
}

/// Good band of `strategy` in `summary`: every η₀ with a finite mean at most
/// `(1 + tol)` times the best mean.
pub fn good_band(summary: &[CellSummary], strategy: Strategy, tol: f64) -> Option<Band> {
    let cells: Vec<&CellSummary> =
        summary.iter().filter(|c| c.strategy == strategy && c.mean.is_finite()).collect();
    let best = cells.iter().min_by(|a, b| a.mean.total_cmp(&b.mean))?;
    let limit = best.mean * (1.0 + tol);
    let inside = cells.iter().filter(|c| c.mean <= limit).map(|c| c.eta0);
    let lo = inside.clone().fold(f64::INFINITY, f64::min);
    let hi = inside.fold(f64::NEG_INFINITY, f64::max);
    Some(Band { best: best.mean, best_eta: best.eta0, lo, hi })
}

fn run_cell(config: &SweepConfig, data: &Dataset, strategy: Strategy, eta0: f64, seed: u64) -> Vec<SweepRow> {
    let n = data.len() as u64;
    let nan_row = || {
        vec![SweepRow { strategy, eta0, seed, t: n, avg_loss: f64::NAN, cum_delta: f64::NAN, bound_gap: f64::NAN }]
    };
    let Ok(schedule) = LambdaSchedule::new(config.schedule, eta0) else {
        return nan_row();
    };
    let mut learner = Learner::new(config.loss, strategy, schedule)
        .with_policy(config.policy)
        .with_diagnostics(config.record_diagnostics);
    let mut ledger = RegretLedger::new(vec![Vec::new()]);
    let mut rows = Vec::with_capacity((n / config.record_every + 1) as usize);
    for (i, example) in data.examples.iter().enumerate() {
        let t = i as u64 + 1;
        let Ok(record) = learner.step(example) else {
            return nan_row();
        };
        ledger.observe(config.loss, example, &record);
        if t.is_multiple_of(config.record_every) || t == n {
            let (cum_delta, bound_gap) = if config.record_diagnostics {
                (ledger.cum_delta, ledger.bound(0, &learner.state) - ledger.regret(0))
            } else {
                (f64::NAN, f64::NAN)
            };
            let avg_loss = if ledger.rounds == 0 { f64::NAN } else { ledger.avg_loss() };
            rows.push(SweepRow { strategy, eta0, seed, t, avg_loss, cum_delta, bound_gap });
        }
    }
    rows
}

/// Runs every cell of `config` on `data`. The output is identical for every
/// execution mode.
pub fn run_sweep(config: &SweepConfig, data: &Dataset, exec: Execution) -> Result<SweepResult, SweepError> {
    config.validate()?;
    if data.is_empty() {
        return Err(SweepError::Data(DataError::Empty));
    }
    let data = data.labels_for(config.loss)?;
    let data = if config.normalize { data.normalize_and_bias() } else { data };
    let shuffled: Vec<Dataset> = map_ordered(&config.seeds, exec, |&s| data.shuffle(s));
    let mut cells = Vec::new();
    for &strategy in &config.strategies {
        for &eta0 in &config.eta_grid {
            for (k, &seed) in config.seeds.iter().enumerate() {
                cells.push((strategy, eta0, seed, k));
            }
        }
    }
    let per_cell =
        map_ordered(&cells, exec, |&(strategy, eta0, seed, k)| run_cell(config, &shuffled[k], strategy, eta0, seed));
    let mut result = SweepResult { rows: per_cell.into_iter().flatten().collect() };
    result.sort();
    Ok(result)
}
