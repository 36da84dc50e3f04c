//! Special functions and one-dimensional solvers.
//!
//! Everything here is a pure function of its inputs.

use std::f64::consts::E;

use thiserror::Error;

const INV_E: f64 = 1.0 / E;
const LAMBERT_MAX_ITER: usize = 50;
const LAMBERT_TOL: f64 = 1e-12;
const SOLVE_MAX_ITER: usize = 200;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MathError {
    #[error("argument {0} is outside the domain of the principal Lambert W branch (x >= -1/e)")]
    LambertDomain(f64),
    #[error("non-finite input {0}")]
    NonFinite(f64),
    #[error("no sign change on [{lo}, {hi}]: f(lo) = {f_lo}, f(hi) = {f_hi}")]
    NoSignChange { lo: f64, hi: f64, f_lo: f64, f_hi: f64 },
    #[error("solver did not converge within {0} iterations")]
    MaxIterations(usize),
    #[error("invalid bracket [{lo}, {hi}]")]
    InvalidBracket { lo: f64, hi: f64 },
    #[error("ODE right-hand side is not finite at h = {h} (s = {s})")]
    NonFiniteRhs { h: f64, s: f64 },
    #[error("invalid ODE step {0}")]
    InvalidStep(f64),
}

/// Closed interval `[lo, hi]` with `lo < hi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bracket {
    pub lo: f64,
    pub hi: f64,
}

impl Bracket {
    pub fn new(lo: f64, hi: f64) -> Result<Self, MathError> {
        if lo.is_finite() && hi.is_finite() && lo < hi {
            Ok(Self { lo, hi })
        } else {
            Err(MathError::InvalidBracket { lo, hi })
        }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// Principal branch of the Lambert W function: the `w >= -1` solving `w e^w = x`.
///
/// Initial guesses come from the branch-point series near `-1/e`, a
/// log-based approximation in the middle range and the `ln x - ln ln x`
/// asymptote for large `x`; Halley's iteration refines them.
pub fn lambert_w(x: f64) -> Result<f64, MathError> {
    if x.is_nan() {
        return Err(MathError::NonFinite(x));
    }
    if x == f64::INFINITY {
        return Ok(f64::INFINITY);
    }
    // Allow a few ulps of slack at the branch point.
    if x < -INV_E {
        if x >= -INV_E - 4.0 * f64::EPSILON {
            return Ok(-1.0);
        }
        return Err(MathError::LambertDomain(x));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x > 1e100 {
        // w e^w would overflow intermediate products; go through the log form.
        return lambert_w_exp(x.ln());
    }

    let mut w = initial_guess(x);
    for _ in 0..LAMBERT_MAX_ITER {
        let ew = w.exp();
        let f = w * ew - x;
        let wp1 = w + 1.0;
        if wp1.abs() < 1e-300 {
            break;
        }
        let denom = ew * wp1 - (w + 2.0) * f / (2.0 * wp1);
        let dw = f / denom;
        if !dw.is_finite() {
            break;
        }
        w -= dw;
        if dw.abs() <= LAMBERT_TOL * (1.0 + w.abs()) * 1e-3 {
            break;
        }
    }
    Ok(w.max(-1.0))
}

fn initial_guess(x: f64) -> f64 {
    if x < -0.32 {
        // Series about the branch point in p = sqrt(2(e x + 1)).
        let p = (2.0 * (E * x + 1.0)).max(0.0).sqrt();
        -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p * p * p
    } else if x.abs() < 1e-3 {
        x - x * x + 1.5 * x * x * x
    } else if x < 3.0 {
        let l = x.ln_1p();
        l * (1.0 - l.ln_1p() / (2.0 + l))
    } else {
        let l1 = x.ln();
        let l2 = l1.ln();
        l1 - l2 + l2 / l1
    }
}

/// `W(e^a)` computed without forming `e^a`.
///
/// For `a > 1` the defining relation `w + ln w = a` is solved directly by
/// Halley's iteration; below that `e^a` is harmless and the plain branch is used.
pub fn lambert_w_exp(a: f64) -> Result<f64, MathError> {
    if !a.is_finite() {
        return Err(MathError::NonFinite(a));
    }
    if a <= 1.0 {
        return lambert_w(a.exp());
    }
    let mut w = a - a.ln();
    if w <= 0.0 {
        w = 1.0;
    }
    for _ in 0..LAMBERT_MAX_ITER {
        let f = w + w.ln() - a;
        let fp = 1.0 + 1.0 / w;
        let fpp = -1.0 / (w * w);
        let dw = 2.0 * f * fp / (2.0 * fp * fp - f * fpp);
        let next = (w - dw).max(w * 1e-3);
        let done = (next - w).abs() <= 1e-16 * next.max(1.0);
        w = next;
        if done {
            break;
        }
    }
    Ok(w)
}

/// Root of `f` on `bracket` by bisection.
///
/// Stops once `|f(x)| <= tol` or the bracket is narrower than `tol`. The
/// endpoints must have opposite signs (an exact zero at an endpoint is accepted).
pub fn solve_1d<F>(mut f: F, bracket: Bracket, tol: f64) -> Result<f64, MathError>
where
    F: FnMut(f64) -> f64,
{
    let (mut lo, mut hi) = (bracket.lo, bracket.hi);
    let f_lo = f(lo);
    let f_hi = f(hi);
    if f_lo == 0.0 {
        return Ok(lo);
    }
    if f_hi == 0.0 {
        return Ok(hi);
    }
    if f_lo.is_nan() || f_hi.is_nan() || f_lo.signum() == f_hi.signum() {
        return Err(MathError::NoSignChange { lo, hi, f_lo, f_hi });
    }
    let lo_negative = f_lo < 0.0;
    for _ in 0..SOLVE_MAX_ITER {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            return Ok(mid);
        }
        let fm = f(mid);
        if fm.abs() <= tol || hi - lo <= tol {
            return Ok(mid);
        }
        if (fm < 0.0) == lo_negative {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(MathError::MaxIterations(SOLVE_MAX_ITER))
}

/// Safeguarded Newton iteration: Newton steps that stay inside the current
/// bracket are taken, anything else falls back to bisection.
///
/// `fdf` returns `(f(x), f'(x))`. Same stopping rule and sign contract as
/// [`solve_1d`].
pub fn solve_1d_newton<F>(mut fdf: F, bracket: Bracket, tol: f64) -> Result<f64, MathError>
where
    F: FnMut(f64) -> (f64, f64),
{
    let (mut lo, mut hi) = (bracket.lo, bracket.hi);
    let (f_lo, _) = fdf(lo);
    let (f_hi, _) = fdf(hi);
    if f_lo == 0.0 {
        return Ok(lo);
    }
    if f_hi == 0.0 {
        return Ok(hi);
    }
    if f_lo.is_nan() || f_hi.is_nan() || f_lo.signum() == f_hi.signum() {
        return Err(MathError::NoSignChange { lo, hi, f_lo, f_hi });
    }
    let lo_negative = f_lo < 0.0;
    let mut x = 0.5 * (lo + hi);
    for _ in 0..SOLVE_MAX_ITER {
        let (fx, dfx) = fdf(x);
        if fx.abs() <= tol || hi - lo <= tol {
            return Ok(x);
        }
        if (fx < 0.0) == lo_negative {
            lo = x;
        } else {
            hi = x;
        }
        let newton = x - fx / dfx;
        x = if dfx != 0.0 && newton.is_finite() && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if x <= lo || x >= hi {
            return Ok(0.5 * (lo + hi));
        }
    }
    Err(MathError::MaxIterations(SOLVE_MAX_ITER))
}

fn rk4_step<F>(rhs: &mut F, h: f64, s: f64, dt: f64) -> Result<f64, MathError>
where
    F: FnMut(f64, f64) -> f64,
{
    let check = |v: f64, h: f64, s: f64| {
        if v.is_finite() {
            Ok(v)
        } else {
            Err(MathError::NonFiniteRhs { h, s })
        }
    };
    let k1 = check(rhs(h, s), h, s)?;
    let s2 = s + 0.5 * dt * k1;
    let k2 = check(rhs(h + 0.5 * dt, s2), h + 0.5 * dt, s2)?;
    let s3 = s + 0.5 * dt * k2;
    let k3 = check(rhs(h + 0.5 * dt, s3), h + 0.5 * dt, s3)?;
    let s4 = s + dt * k3;
    let k4 = check(rhs(h + dt, s4), h + dt, s4)?;
    Ok(s + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4))
}

fn step_count(h_end: f64, step: f64) -> Result<usize, MathError> {
    if !(step > 0.0) || !step.is_finite() {
        return Err(MathError::InvalidStep(step));
    }
    if !(h_end >= 0.0) || !h_end.is_finite() {
        return Err(MathError::InvalidStep(h_end));
    }
    Ok(((h_end / step).round() as usize).max(1))
}

/// Integrates `s'(h) = rhs(h, s)` from `s(0) = 0` to `h_end` with classical
/// fixed-step RK4. The step is adjusted so that a whole number of steps lands
/// exactly on `h_end`.
pub fn integrate_ode<F>(mut rhs: F, h_end: f64, step: f64) -> Result<f64, MathError>
where
    F: FnMut(f64, f64) -> f64,
{
    if h_end == 0.0 {
        return Ok(0.0);
    }
    let n = step_count(h_end, step)?;
    let dt = h_end / n as f64;
    let mut s = 0.0;
    for i in 0..n {
        s = rk4_step(&mut rhs, i as f64 * dt, s, dt)?;
    }
    Ok(s)
}

/// Same integration as [`integrate_ode`], additionally returning `(h, s(h))`
/// at `samples + 1` evenly spaced points including both ends.
///
/// `samples` must divide the number of integration steps; it is rounded so
/// that it does.
pub fn integrate_ode_trajectory<F>(
    mut rhs: F,
    h_end: f64,
    step: f64,
    samples: usize,
) -> Result<Vec<(f64, f64)>, MathError>
where
    F: FnMut(f64, f64) -> f64,
{
    let samples = samples.max(1);
    let n = step_count(h_end, step)?;
    let per_sample = n.div_ceil(samples).max(1);
    let n = per_sample * samples;
    let dt = h_end / n as f64;
    let mut out = Vec::with_capacity(samples + 1);
    out.push((0.0, 0.0));
    let mut s = 0.0;
    for i in 0..n {
        s = rk4_step(&mut rhs, i as f64 * dt, s, dt)?;
        if (i + 1) % per_sample == 0 {
            out.push(((i + 1) as f64 * dt, s));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent reference: plain bisection on w e^w - x.
    fn omega_by_bisection(x: f64) -> f64 {
        let (mut lo, mut hi) = (-1.0, 1.0f64.max(x.ln_1p() + 1.0));
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid * mid.exp() < x {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn lambert_w_trivial_points() {
        assert_eq!(lambert_w(0.0).unwrap(), 0.0);
        assert!((lambert_w(E).unwrap() - 1.0).abs() < 1e-14);
        assert!((lambert_w(-INV_E).unwrap() + 1.0).abs() < 1e-6);
    }

    #[test]
    fn lambert_w_omega_constant() {
        let reference = omega_by_bisection(1.0);
        assert!((reference - 0.567_143_290_409_783_8).abs() < 1e-14);
        assert!((lambert_w(1.0).unwrap() - reference).abs() < 1e-14);
    }

    #[test]
    fn lambert_w_rejects_below_branch_point() {
        assert!(matches!(lambert_w(-0.5), Err(MathError::LambertDomain(_))));
        assert!(lambert_w(f64::NAN).is_err());
    }

    #[test]
    fn lambert_w_residual_on_log_grid() {
        let lo = -INV_E + 1e-6;
        // Negative part: linear grid; positive part: log-spaced up to 1e6.
        let mut xs: Vec<f64> = (0..=200).map(|i| lo + (0.0 - lo) * i as f64 / 200.0).collect();
        xs.extend((0..=400).map(|i| 10f64.powf(-12.0 + 18.0 * i as f64 / 400.0)));
        for x in xs {
            let w = lambert_w(x).unwrap();
            assert!(w >= -1.0);
            let resid = (w * w.exp() - x).abs();
            assert!(resid <= 1e-10 * x.abs().max(1.0), "x = {x}, w = {w}, resid = {resid}");
        }
    }

    #[test]
    fn lambert_w_huge_argument() {
        let w = lambert_w(1e250).unwrap();
        assert!((w + w.ln() - 1e250f64.ln()).abs() < 1e-10);
    }

    #[test]
    fn lambert_w_exp_examples() {
        assert!((lambert_w_exp(1.0).unwrap() - 1.0).abs() < 1e-14);
        assert!((lambert_w_exp(0.0).unwrap() - 0.567_143_290_409_783_8).abs() < 1e-14);
        let w = lambert_w_exp(700.0).unwrap();
        assert!((w + w.ln() - 700.0).abs() <= 1e-10);
        let w = lambert_w_exp(1e12).unwrap();
        assert!((w + w.ln() - 1e12).abs() <= 1e-10 * 1e12);
        assert!(lambert_w_exp(f64::INFINITY).is_err());
    }

    #[test]
    fn lambert_w_exp_matches_direct() {
        for i in 0..=400 {
            let a = -20.0 + 40.0 * i as f64 / 400.0;
            let a_route = lambert_w_exp(a).unwrap();
            let direct = lambert_w(a.exp()).unwrap();
            assert!((a_route - direct).abs() <= 1e-10 * direct, "a = {a}");
        }
    }

    #[test]
    fn solve_1d_examples() {
        let b = Bracket::new(0.0, 5.0).unwrap();
        assert!((solve_1d(|s| s - 2.0, b, 1e-10).unwrap() - 2.0).abs() < 1e-9);
        let b = Bracket::new(0.0, 2.0).unwrap();
        assert!((solve_1d(|s| s * s * s - 1.0, b, 1e-10).unwrap() - 1.0).abs() < 1e-9);
        // Stationary point of s^2/2 + e^{-s}: s = e^{-s}.
        let s = solve_1d(|s| s - (-s).exp(), b, 1e-12).unwrap();
        assert!((s - 0.567_143_290_409_783_8).abs() < 1e-10);
    }

    #[test]
    fn solve_1d_errors() {
        let b = Bracket::new(0.0, 1.0).unwrap();
        assert!(matches!(solve_1d(|s| s + 1.0, b, 1e-10), Err(MathError::NoSignChange { .. })));
        assert!(Bracket::new(1.0, 1.0).is_err());
    }

    #[test]
    fn newton_agrees_with_bisection() {
        let b = Bracket::new(0.0, 2.0).unwrap();
        let s = solve_1d_newton(|s| (s - (-s).exp(), 1.0 + (-s).exp()), b, 1e-14).unwrap();
        assert!((s - 0.567_143_290_409_783_8).abs() < 1e-13);
    }

    #[test]
    fn rk4_examples() {
        assert_eq!(integrate_ode(|_, _| 0.0, 1.0, 1e-4).unwrap(), 0.0);
        assert!((integrate_ode(|_, _| 3.5, 0.7, 1e-4).unwrap() - 2.45).abs() < 1e-12);
        let v = integrate_ode(|_, s| 1.0 - s, 1.0, 1e-4).unwrap();
        assert!((v - (1.0 - (-1.0f64).exp())).abs() < 1e-8);
        // s' = h^2 + s, s(0) = 0: s = 2e^h - h^2 - 2h - 2.
        let v = integrate_ode(|h, s| h * h + s, 1.0, 1e-4).unwrap();
        assert!((v - (2.0 * E - 5.0)).abs() < 1e-8);
    }

    #[test]
    fn rk4_reports_non_finite() {
        let err = integrate_ode(|h, _| if h > 0.5 { f64::NAN } else { 1.0 }, 1.0, 1e-2).unwrap_err();
        match err {
            MathError::NonFiniteRhs { h, .. } => assert!(h > 0.5 && h < 0.52),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn trajectory_endpoints() {
        let traj = integrate_ode_trajectory(|_, s| 1.0 - s, 1.0, 1e-4, 100).unwrap();
        assert_eq!(traj.len(), 101);
        assert_eq!(traj[0], (0.0, 0.0));
        let (h, s) = traj[100];
        assert!((h - 1.0).abs() < 1e-12);
        assert!((s - integrate_ode(|_, s| 1.0 - s, 1.0, 1e-4).unwrap()).abs() < 1e-14);
    }
}
